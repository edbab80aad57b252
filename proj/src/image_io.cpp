#include "flora/image_io.hpp"

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace fs = std::filesystem;

namespace flora {

namespace {

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
  out.push_back(static_cast<uint8_t>(v >> 24));
  out.push_back(static_cast<uint8_t>(v >> 16));
  out.push_back(static_cast<uint8_t>(v >> 8));
  out.push_back(static_cast<uint8_t>(v));
}

void chunk(std::vector<uint8_t>& out, const char type[4], const std::vector<uint8_t>& payload) {
  put_u32(out, static_cast<uint32_t>(payload.size()));
  const size_t start = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), payload.begin(), payload.end());
  const uint32_t crc = static_cast<uint32_t>(
      crc32(0L, out.data() + start, static_cast<uInt>(out.size() - start)));
  put_u32(out, crc);
}

void write_png(const fs::path& path, int64_t width, int64_t height, int channels, const uint8_t* pixels) {
  if (width < 1 || height < 1) throw std::invalid_argument("write_png: empty image");
  // filter byte 0 per scanline
  std::vector<uint8_t> raw;
  raw.reserve(static_cast<size_t>(height * (width * channels + 1)));
  for (int64_t y = 0; y < height; ++y) {
    raw.push_back(0);
    raw.insert(raw.end(), pixels + y * width * channels, pixels + (y + 1) * width * channels);
  }
  uLongf comp_len = compressBound(static_cast<uLong>(raw.size()));
  std::vector<uint8_t> comp(comp_len);
  if (compress2(comp.data(), &comp_len, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
    throw std::runtime_error("png deflate failed");
  comp.resize(comp_len);

  std::vector<uint8_t> png = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
  std::vector<uint8_t> ihdr;
  put_u32(ihdr, static_cast<uint32_t>(width));
  put_u32(ihdr, static_cast<uint32_t>(height));
  ihdr.push_back(8);                                    // bit depth
  ihdr.push_back(channels == 3 ? 2 : 0);                // color type
  ihdr.push_back(0);
  ihdr.push_back(0);
  ihdr.push_back(0);
  chunk(png, "IHDR", ihdr);
  chunk(png, "IDAT", comp);
  chunk(png, "IEND", {});

  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f.write(reinterpret_cast<const char*>(png.data()), static_cast<std::streamsize>(png.size()));
}

uint8_t to_byte(float v) {
  return static_cast<uint8_t>(std::lround(std::min(1.0f, std::max(0.0f, v)) * 255.0f));
}

}  // namespace

void write_png_rgb(const fs::path& path, int64_t width, int64_t height, const std::vector<uint8_t>& rgb) {
  if (static_cast<int64_t>(rgb.size()) != width * height * 3) throw std::invalid_argument("write_png_rgb: bad buffer");
  write_png(path, width, height, 3, rgb.data());
}

void write_png_gray(const fs::path& path, int64_t width, int64_t height, const std::vector<uint8_t>& gray) {
  if (static_cast<int64_t>(gray.size()) != width * height) throw std::invalid_argument("write_png_gray: bad buffer");
  write_png(path, width, height, 1, gray.data());
}

void save_image_rgb(const fs::path& path, const Tensor<float>& img) {
  if (img.rank() != 3 || img.shape[0] != 3) throw std::invalid_argument("save_image_rgb: expects [3,H,W]");
  const int64_t h = img.shape[1], w = img.shape[2];
  std::vector<uint8_t> rgb(static_cast<size_t>(h * w * 3));
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x)
      for (int64_t c = 0; c < 3; ++c) rgb[static_cast<size_t>((y * w + x) * 3 + c)] = to_byte(img.at3(c, y, x));
  write_png_rgb(path, w, h, rgb);
}

void save_image_gray(const fs::path& path, const Tensor<float>& img) {
  if (img.rank() != 3 || img.shape[0] != 1) throw std::invalid_argument("save_image_gray: expects [1,H,W]");
  const int64_t h = img.shape[1], w = img.shape[2];
  std::vector<uint8_t> gray(static_cast<size_t>(h * w));
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x) gray[static_cast<size_t>(y * w + x)] = to_byte(img.at3(0, y, x));
  write_png_gray(path, w, h, gray);
}

// ---------------------------------------------------------------------------
// line plots
// ---------------------------------------------------------------------------

namespace {

// 3x5 digit/symbol glyphs, row-major bits
const uint16_t kGlyphs[][5] = {
    {0b111, 0b101, 0b101, 0b101, 0b111},  // 0
    {0b010, 0b110, 0b010, 0b010, 0b111},  // 1
    {0b111, 0b001, 0b111, 0b100, 0b111},  // 2
    {0b111, 0b001, 0b111, 0b001, 0b111},  // 3
    {0b101, 0b101, 0b111, 0b001, 0b001},  // 4
    {0b111, 0b100, 0b111, 0b001, 0b111},  // 5
    {0b111, 0b100, 0b111, 0b101, 0b111},  // 6
    {0b111, 0b001, 0b010, 0b010, 0b010},  // 7
    {0b111, 0b101, 0b111, 0b101, 0b111},  // 8
    {0b111, 0b101, 0b111, 0b001, 0b111},  // 9
    {0b000, 0b000, 0b000, 0b010, 0b000},  // .
    {0b000, 0b000, 0b111, 0b000, 0b000},  // -
    {0b000, 0b000, 0b000, 0b000, 0b000},  // space
    {0b111, 0b101, 0b111, 0b110, 0b101},  // 'e' stand-in (R-ish); unused letters render as box
};

int glyph_index(char c) {
  if (c >= '0' && c <= '9') return c - '0';
  if (c == '.') return 10;
  if (c == '-') return 11;
  if (c == ' ') return 12;
  return 13;
}

struct Canvas {
  int64_t w, h;
  std::vector<uint8_t> px;  // rgb
  Canvas(int64_t wi, int64_t hi) : w(wi), h(hi), px(static_cast<size_t>(wi * hi * 3), 255) {}
  void set(int64_t x, int64_t y, const uint8_t rgb[3]) {
    if (x < 0 || x >= w || y < 0 || y >= h) return;
    uint8_t* p = &px[static_cast<size_t>((y * w + x) * 3)];
    p[0] = rgb[0];
    p[1] = rgb[1];
    p[2] = rgb[2];
  }
  void line(int64_t x0, int64_t y0, int64_t x1, int64_t y1, const uint8_t rgb[3]) {
    const int64_t dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
    const int64_t sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
    int64_t err = dx + dy;
    for (;;) {
      set(x0, y0, rgb);
      if (x0 == x1 && y0 == y1) break;
      const int64_t e2 = 2 * err;
      if (e2 >= dy) {
        err += dy;
        x0 += sx;
      }
      if (e2 <= dx) {
        err += dx;
        y0 += sy;
      }
    }
  }
  void text(int64_t x, int64_t y, const std::string& s, const uint8_t rgb[3]) {
    for (char c : s) {
      const uint16_t* glyph = kGlyphs[glyph_index(c)];
      for (int ry = 0; ry < 5; ++ry)
        for (int rx = 0; rx < 3; ++rx)
          if (glyph[ry] & (1 << (2 - rx))) set(x + rx, y + ry, rgb);
      x += 4;
    }
  }
};

std::string tick_label(double v) {
  char buf[32];
  if (v == 0) return "0";
  const double a = std::abs(v);
  if (a >= 1000 || a < 0.01)
    std::snprintf(buf, sizeof buf, "%.1g", v);
  else if (a >= 10)
    std::snprintf(buf, sizeof buf, "%.0f", v);
  else
    std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

}  // namespace

void write_line_plot(const fs::path& path, const std::vector<PlotSeries>& series, const std::string& title) {
  const int64_t W = 720, H = 440, ml = 56, mr = 16, mt = 24, mb = 36;
  Canvas cv(W, H);
  const uint8_t black[3] = {0, 0, 0};
  const uint8_t grey[3] = {210, 210, 210};

  double xmin = 0, xmax = 1, ymin = 0, ymax = 1;
  bool first = true;
  for (const auto& s : series)
    for (size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
      if (first) {
        xmin = xmax = s.x[i];
        ymin = ymax = s.y[i];
        first = false;
      }
      xmin = std::min(xmin, s.x[i]);
      xmax = std::max(xmax, s.x[i]);
      ymin = std::min(ymin, s.y[i]);
      ymax = std::max(ymax, s.y[i]);
    }
  if (xmax - xmin < 1e-12) xmax = xmin + 1;
  if (ymax - ymin < 1e-12) ymax = ymin + 1;

  auto px = [&](double x) { return ml + static_cast<int64_t>((x - xmin) / (xmax - xmin) * static_cast<double>(W - ml - mr)); };
  auto py = [&](double y) { return H - mb - static_cast<int64_t>((y - ymin) / (ymax - ymin) * static_cast<double>(H - mt - mb)); };

  for (int i = 0; i <= 4; ++i) {
    const double ty = ymin + (ymax - ymin) * i / 4.0;
    cv.line(ml, py(ty), W - mr, py(ty), grey);
    cv.text(4, py(ty) - 2, tick_label(ty), black);
    const double tx = xmin + (xmax - xmin) * i / 4.0;
    cv.line(px(tx), mt, px(tx), H - mb, grey);
    cv.text(px(tx) - 6, H - mb + 6, tick_label(tx), black);
  }
  cv.line(ml, mt, ml, H - mb, black);
  cv.line(ml, H - mb, W - mr, H - mb, black);
  cv.text(ml, 8, title, black);

  int64_t legend_y = mt + 6;
  for (const auto& s : series) {
    for (size_t i = 1; i < s.x.size(); ++i) {
      if (!std::isfinite(s.y[i - 1]) || !std::isfinite(s.y[i])) continue;
      cv.line(px(s.x[i - 1]), py(s.y[i - 1]), px(s.x[i]), py(s.y[i]), s.rgb);
    }
    cv.line(W - mr - 60, legend_y + 2, W - mr - 44, legend_y + 2, s.rgb);
    cv.text(W - mr - 40, legend_y, s.label, black);
    legend_y += 10;
  }
  write_png_rgb(path, W, H, cv.px);
}

}  // namespace flora
