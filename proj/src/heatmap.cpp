#include "neurex/heatmap.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <utility>

#include <fmt/format.h>

#include "neurex/error.hpp"

namespace neurex {

namespace {

void spill(const std::filesystem::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::kIo, fmt::format("cannot create '{}'", path.string()));
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) fail(ErrorCode::kIo, fmt::format("write failed for '{}'", path.string()));
}

void check_finite(const Heatmap& map) {
  for (const double v : map.values) {
    if (!std::isfinite(v)) fail(ErrorCode::kInvalidArgument, "heatmap has non-finite values");
  }
}

// Source coordinate for target index i when mapping n_out samples onto n_in.
double source_coord(std::size_t i, std::size_t n_out, std::size_t n_in) {
  if (n_out == 1) return static_cast<double>(n_in - 1) / 2.0;
  return static_cast<double>(i) * static_cast<double>(n_in - 1) / static_cast<double>(n_out - 1);
}

}  // namespace

Heatmap::Heatmap(std::size_t h, std::size_t w) : Heatmap(h, w, std::vector<double>(h * w, 0.0)) {}

Heatmap::Heatmap(std::size_t h, std::size_t w, std::vector<double> v)
    : height(h), width(w), values(std::move(v)) {
  if (h == 0 || w == 0) fail(ErrorCode::kInvalidShape, "heatmap dimensions must be >= 1");
  if (values.size() != h * w) {
    fail(ErrorCode::kInvalidShape,
         fmt::format("heatmap {}x{} with {} values", h, w, values.size()));
  }
}

Heatmap Heatmap::from_floats(std::size_t h, std::size_t w, std::span<const float> v) {
  return Heatmap(h, w, std::vector<double>(v.begin(), v.end()));
}

Heatmap compose_heatmap(std::span<const Heatmap> nams, std::span<const double> weights) {
  if (nams.empty()) fail(ErrorCode::kInvalidArgument, "compose_heatmap needs at least one map");
  if (nams.size() != weights.size()) {
    fail(ErrorCode::kShapeMismatch,
         fmt::format("{} maps but {} weights", nams.size(), weights.size()));
  }
  Heatmap out(nams[0].height, nams[0].width);
  for (std::size_t u = 0; u < nams.size(); ++u) {
    const auto& m = nams[u];
    if (m.height != out.height || m.width != out.width) {
      fail(ErrorCode::kShapeMismatch,
           fmt::format("map {} is {}x{}, expected {}x{}", u, m.height, m.width, out.height,
                       out.width));
    }
    if (!(weights[u] >= 0.0) || !std::isfinite(weights[u])) {
      fail(ErrorCode::kInvalidArgument,
           fmt::format("weight {} = {} must be finite and non-negative", u, weights[u]));
    }
    for (std::size_t p = 0; p < out.values.size(); ++p) out.values[p] += weights[u] * m.values[p];
  }
  return out;
}

Heatmap resize_bilinear(const Heatmap& map, std::size_t height, std::size_t width) {
  if (height == 0 || width == 0) fail(ErrorCode::kInvalidShape, "resize target must be >= 1");
  if (height == map.height && width == map.width) return map;
  Heatmap out(height, width);
  for (std::size_t y = 0; y < height; ++y) {
    const double sy = source_coord(y, height, map.height);
    const auto y0 = static_cast<std::size_t>(std::floor(sy));
    const auto y1 = std::min(y0 + 1, map.height - 1);
    const double ty = sy - static_cast<double>(y0);
    for (std::size_t x = 0; x < width; ++x) {
      const double sx = source_coord(x, width, map.width);
      const auto x0 = static_cast<std::size_t>(std::floor(sx));
      const auto x1 = std::min(x0 + 1, map.width - 1);
      const double tx = sx - static_cast<double>(x0);
      const double top = map.at(y0, x0) + tx * (map.at(y0, x1) - map.at(y0, x0));
      const double bottom = map.at(y1, x0) + tx * (map.at(y1, x1) - map.at(y1, x0));
      out.at(y, x) = top + ty * (bottom - top);
    }
  }
  return out;
}

double heatmap_similarity(const Heatmap& a, const Heatmap& b) {
  if (a.height != b.height || a.width != b.width) {
    fail(ErrorCode::kShapeMismatch,
         fmt::format("heatmaps {}x{} and {}x{} differ in size", a.height, a.width, b.height,
                     b.width));
  }
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t p = 0; p < a.values.size(); ++p) {
    ab += a.values[p] * b.values[p];
    aa += a.values[p] * a.values[p];
    bb += b.values[p] * b.values[p];
  }
  if (!(aa > 0.0) || !(bb > 0.0)) {
    fail(ErrorCode::kZeroNorm, "heatmap similarity is undefined for an all-zero map");
  }
  const double cos = ab / (std::sqrt(aa) * std::sqrt(bb));
  return std::clamp(cos, -1.0, 1.0);
}

std::string encode_pgm(const Heatmap& map) {
  check_finite(map);
  const auto [lo, hi] = std::minmax_element(map.values.begin(), map.values.end());
  const double min = *lo;
  const double range = *hi - *lo;
  std::string out = fmt::format("P5\n{} {}\n255\n", map.width, map.height);
  out.reserve(out.size() + map.values.size());
  for (const double v : map.values) {
    const double level = range > 0.0 ? std::round((v - min) / range * 255.0) : 128.0;
    out.push_back(static_cast<char>(static_cast<unsigned char>(std::clamp(level, 0.0, 255.0))));
  }
  return out;
}

void render_pgm(const Heatmap& map, const std::filesystem::path& path) {
  spill(path, encode_pgm(map));
}

std::string encode_csv(const Heatmap& map) {
  std::string out;
  for (std::size_t r = 0; r < map.height; ++r) {
    for (std::size_t c = 0; c < map.width; ++c) {
      if (c > 0) out += ',';
      out += fmt::format("{:.6f}", map.at(r, c));
    }
    out += '\n';
  }
  return out;
}

void write_csv(const Heatmap& map, const std::filesystem::path& path) {
  spill(path, encode_csv(map));
}

}  // namespace neurex
