#include <cmath>
#include <fstream>

#include <doctest.h>

#include "neurex/heatmap.hpp"
#include "support/test_util.hpp"

using namespace neurex;
using neurex::testing::error_code_of;
using neurex::testing::random_doubles;
using neurex::testing::TempDir;

namespace {

Heatmap random_map(std::mt19937_64& rng, std::size_t h, std::size_t w) {
  return Heatmap(h, w, random_doubles(rng, h * w, 0, 1));
}

}  // namespace

TEST_CASE("compose_heatmap examples") {
  const Heatmap a(1, 2, {1, 2}), b(1, 2, {5, 7});
  const std::vector<Heatmap> ab = {a, b};
  CHECK(compose_heatmap(ab, std::vector<double>{1, 0}) == a);
  const std::vector<Heatmap> ones = {Heatmap(1, 1, {1}), Heatmap(1, 1, {1})};
  CHECK(compose_heatmap(ones, std::vector<double>{2, 3}).values == std::vector<double>{5});

  CHECK(error_code_of([] { compose_heatmap({}, {}); }) == ErrorCode::kInvalidArgument);
  const std::vector<Heatmap> mixed = {Heatmap(1, 1, {1}), Heatmap(1, 2, {1, 1})};
  CHECK(error_code_of([&] { compose_heatmap(mixed, std::vector<double>{1, 1}); }) ==
        ErrorCode::kShapeMismatch);
  CHECK(error_code_of([&] { compose_heatmap(ab, std::vector<double>{1}); }) ==
        ErrorCode::kShapeMismatch);
  CHECK(error_code_of([&] { compose_heatmap(ab, std::vector<double>{1, -1}); }) ==
        ErrorCode::kInvalidArgument);
}

TEST_CASE("compose_heatmap matches a triple loop") {
  std::mt19937_64 rng(61);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<Heatmap> nams;
    for (int u = 0; u < 5; ++u) nams.push_back(random_map(rng, 7, 7));
    const auto w = random_doubles(rng, 5, 0, 2);
    const auto got = compose_heatmap(nams, w);
    for (std::size_t r = 0; r < 7; ++r) {
      for (std::size_t c = 0; c < 7; ++c) {
        double want = 0;
        for (std::size_t u = 0; u < 5; ++u) want += w[u] * nams[u].at(r, c);
        CHECK(std::abs(got.at(r, c) - want) < 1e-6);
      }
    }
  }
}

TEST_CASE("resize_bilinear") {
  const Heatmap m(2, 2, {0, 1, 0, 1});
  const auto r = resize_bilinear(m, 2, 4);
  const std::vector<double> row = {0, 1.0 / 3, 2.0 / 3, 1};
  for (std::size_t y = 0; y < 2; ++y) {
    for (std::size_t x = 0; x < 4; ++x) CHECK(r.at(y, x) == doctest::Approx(row[x]).epsilon(1e-12));
  }
  std::mt19937_64 rng(67);
  const auto any = random_map(rng, 5, 3);
  CHECK(resize_bilinear(any, 5, 3) == any);

  const Heatmap flat(3, 3, std::vector<double>(9, 0.37));
  for (const auto& [h, w] : {std::pair{1, 1}, {7, 2}, {224, 224}, {2, 9}}) {
    const auto big = resize_bilinear(flat, h, w);
    for (const double v : big.values) CHECK(v == 0.37);
  }
  // Single-row target samples the source centre.
  const auto centre = resize_bilinear(Heatmap(3, 1, {0, 4, 8}), 1, 1);
  CHECK(centre.values == std::vector<double>{4});
  CHECK(error_code_of([&] { resize_bilinear(m, 0, 2); }) == ErrorCode::kInvalidShape);
}

TEST_CASE("heatmap_similarity") {
  const Heatmap a(2, 2, {1, 2, 3, 4});
  CHECK(heatmap_similarity(a, a) == doctest::Approx(1.0));
  CHECK(heatmap_similarity(Heatmap(2, 2, {1, 0, 0, 0}), Heatmap(2, 2, {0, 1, 0, 0})) == 0.0);
  CHECK(error_code_of([&] { heatmap_similarity(a, Heatmap(2, 2)); }) == ErrorCode::kZeroNorm);
  CHECK(error_code_of([&] { heatmap_similarity(a, Heatmap(1, 4, {1, 2, 3, 4})); }) ==
        ErrorCode::kShapeMismatch);

  std::mt19937_64 rng(71);
  for (int trial = 0; trial < 100; ++trial) {
    const auto x = Heatmap(14, 14, random_doubles(rng, 196, -1, 1));
    const auto y = Heatmap(14, 14, random_doubles(rng, 196, -1, 1));
    double xy = 0, xx = 0, yy = 0;
    for (std::size_t p = 0; p < 196; ++p) {
      xy += x.values[p] * y.values[p];
      xx += x.values[p] * x.values[p];
      yy += y.values[p] * y.values[p];
    }
    CHECK(std::abs(heatmap_similarity(x, y) - xy / std::sqrt(xx * yy)) < 1e-6);
  }
}

TEST_CASE("render_pgm") {
  const auto two = encode_pgm(Heatmap(1, 2, {0, 1}));
  CHECK(two == std::string("P5\n2 1\n255\n\x00\xff", 13));
  const auto flat = encode_pgm(Heatmap(1, 2, {3, 3}));
  CHECK(flat.substr(flat.size() - 2) == "\x80\x80");

  std::mt19937_64 rng(73);
  TempDir dir;
  render_pgm(random_map(rng, 7, 7), dir / "m.pgm");
  std::ifstream in(dir / "m.pgm", std::ios::binary);
  std::string magic;
  int w = 0, h = 0, maxval = 0;
  in >> magic >> w >> h >> maxval;
  in.get();
  CHECK(magic == "P5");
  CHECK(w == 7);
  CHECK(h == 7);
  CHECK(maxval == 255);
  const std::string pixels{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  CHECK(pixels.size() == 49);
  CHECK(error_code_of([] { encode_pgm(Heatmap(1, 1, {NAN})); }) == ErrorCode::kInvalidArgument);
}

TEST_CASE("csv dump") {
  CHECK(encode_csv(Heatmap(2, 2, {0, 0.5, 1.25, -2})) == "0.000000,0.500000\n1.250000,-2.000000\n");
}

TEST_CASE("heatmap algebra properties") {
  std::mt19937_64 rng(79);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<Heatmap> nams;
    for (int u = 0; u < 3; ++u) nams.push_back(random_map(rng, 7, 7));
    const auto w1 = random_doubles(rng, 3, 0, 1), w2 = random_doubles(rng, 3, 0, 1);
    std::vector<double> w12(3);
    for (int u = 0; u < 3; ++u) w12[u] = w1[u] + w2[u];
    const auto sum = compose_heatmap(nams, w12);
    const auto a = compose_heatmap(nams, w1), b = compose_heatmap(nams, w2);
    for (std::size_t p = 0; p < 49; ++p) CHECK(std::abs(a.values[p] + b.values[p] - sum.values[p]) < 1e-6);

    auto scaled = a;
    for (auto& v : scaled.values) v *= 17.5;
    CHECK(std::abs(heatmap_similarity(scaled, b) - heatmap_similarity(a, b)) < 1e-9);
  }
}
