#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace neurex {

struct Heatmap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> values;  // row-major

  Heatmap() = default;
  Heatmap(std::size_t h, std::size_t w);
  Heatmap(std::size_t h, std::size_t w, std::vector<double> v);

  double& at(std::size_t r, std::size_t c) { return values[r * width + c]; }
  double at(std::size_t r, std::size_t c) const { return values[r * width + c]; }

  static Heatmap from_floats(std::size_t h, std::size_t w, std::span<const float> v);

  friend bool operator==(const Heatmap&, const Heatmap&) = default;
};

// sum_u weights[u] * nams[u], accumulated in u order.
Heatmap compose_heatmap(std::span<const Heatmap> nams, std::span<const double> weights);

// Corner-aligned bilinear interpolation. A target extent of 1 samples the
// source centre.
Heatmap resize_bilinear(const Heatmap& map, std::size_t height, std::size_t width);

// Cosine of the flattened grids. Throws kZeroNorm if either map is all zero.
double heatmap_similarity(const Heatmap& a, const Heatmap& b);

// Binary P5 image, min-max scaled to 0..255; constant maps are mid-gray.
std::string encode_pgm(const Heatmap& map);
void render_pgm(const Heatmap& map, const std::filesystem::path& path);

std::string encode_csv(const Heatmap& map);
void write_csv(const Heatmap& map, const std::filesystem::path& path);

}  // namespace neurex
