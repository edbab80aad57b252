#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "flora/tensor.hpp"

namespace flora {

/// Minimal PNG output (8-bit, zlib-compressed, filter 0).
void write_png_rgb(const std::filesystem::path& path, int64_t width, int64_t height, const std::vector<uint8_t>& rgb);
void write_png_gray(const std::filesystem::path& path, int64_t width, int64_t height, const std::vector<uint8_t>& gray);

/// [3,H,W] / [1,H,W] floats in [0,1] -> PNG preview.
void save_image_rgb(const std::filesystem::path& path, const Tensor<float>& img);
void save_image_gray(const std::filesystem::path& path, const Tensor<float>& img);

/// Line chart; one curve per series, shared x. Axes with numeric tick labels.
struct PlotSeries {
  std::string label;
  std::vector<double> x;
  std::vector<double> y;
  uint8_t rgb[3] = {30, 90, 200};
};

void write_line_plot(const std::filesystem::path& path, const std::vector<PlotSeries>& series,
                     const std::string& title = "");

}  // namespace flora
