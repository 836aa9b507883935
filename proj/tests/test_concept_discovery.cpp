#include <algorithm>
#include <cmath>
#include <set>

#include <doctest.h>

#include "neurex/concept_discovery.hpp"
#include "neurex/synthetic.hpp"
#include "support/oracles.hpp"
#include "support/test_util.hpp"

using namespace neurex;
using neurex::testing::error_code_of;
using neurex::testing::random_floats;
using neurex::testing::TempDir;

TEST_CASE("select_representatives") {
  const std::vector<float> a = {0.1f, 0.9f, 0.5f};
  CHECK(select_representatives(a, 2) == std::vector<std::size_t>{1, 2});
  const std::vector<float> flat = {0.3f, 0.3f, 0.3f};
  CHECK(select_representatives(flat, 2) == std::vector<std::size_t>{0, 1});
  CHECK(error_code_of([&] { select_representatives(a, 4); }) == ErrorCode::kInvalidArgument);

  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    // Coarse values force plenty of ties.
    auto v = random_floats(rng, 100, 0, 1);
    for (auto& x : v) x = std::round(x * 20) / 20;
    CHECK(select_representatives(v, 10) == oracle::sorted_top(v, 10));
  }
}

TEST_CASE("acs_scores closed-form cases") {
  // v = t_1, t_1 orthogonal to the template: s_1 = 1 - 0.
  const std::vector<float> t = {1, 0, 0, 0, 0, 1, 0, 0};
  const std::vector<float> tmpl = {0, 0, 1, 0};
  const std::vector<float> v = {1, 0, 0, 0};
  const auto s = acs_scores(MatrixView(v, 1, 4), MatrixView(t, 2, 4), tmpl, true);
  REQUIRE(s.scores.size() == 2);
  CHECK(s.scores[0] == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(s.scores[1] == doctest::Approx(0.0));

  // Every image equals the template: s_j = cos(t_tem, t_j) - 1 <= 0.
  std::mt19937_64 rng(5);
  const auto concepts = random_floats(rng, 6 * 4);
  const auto tmpl2 = random_floats(rng, 4);
  std::vector<float> images;
  for (int o = 0; o < 3; ++o) images.insert(images.end(), tmpl2.begin(), tmpl2.end());
  const auto s2 = acs_scores(MatrixView(images, 3, 4), MatrixView(concepts, 6, 4), tmpl2, true);
  for (std::size_t j = 0; j < 6; ++j) {
    const auto expected = oracle::cosine({tmpl2.begin(), tmpl2.end()}, oracle::row(concepts, 4, j)) - 1.0;
    CHECK(s2.scores[j] <= 1e-12);
    CHECK(s2.scores[j] == doctest::Approx(expected).epsilon(1e-9));
  }
}

TEST_CASE("acs_scores matches the naive double loop") {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 3, d = 4, m = 5;
    const auto v = random_floats(rng, n * d);
    const auto t = random_floats(rng, m * d);
    const auto tt = random_floats(rng, d);
    const auto got = acs_scores(MatrixView(v, n, d), MatrixView(t, m, d), tt, true).scores;
    const auto want = oracle::acs(v, n, t, m, tt, d);
    for (std::size_t j = 0; j < m; ++j) CHECK(std::abs(got[j] - want[j]) < 1e-6);
  }
}

TEST_CASE("acs_scores without normalization uses raw dot products") {
  const std::vector<float> v = {2, 0, 0, 0, 1, 0};
  const std::vector<float> t = {1, 0, 0, 0, 3, 0};
  const std::vector<float> tt = {0, 1, 0};
  // s_0 = mean(2, 0) - mean(0, 1) = 0.5; s_1 = mean(0, 3) - 0.5 = 1.0
  const auto s = acs_scores(MatrixView(v, 2, 3), MatrixView(t, 2, 3), tt, false).scores;
  CHECK(s[0] == doctest::Approx(0.5));
  CHECK(s[1] == doctest::Approx(1.0));
}

TEST_CASE("acs_scores errors") {
  const std::vector<float> zero = {0, 0, 0};
  const std::vector<float> one = {1, 0, 0};
  CHECK(error_code_of([&] { acs_scores(MatrixView(zero, 1, 3), MatrixView(one, 1, 3), one, true); }) ==
        ErrorCode::kZeroNorm);
  CHECK(error_code_of([&] { acs_scores(MatrixView(one, 1, 3), MatrixView(zero, 1, 3), one, true); }) ==
        ErrorCode::kZeroNorm);
  CHECK(error_code_of([&] { acs_scores(MatrixView(one, 1, 3), MatrixView(one, 1, 3), zero, true); }) ==
        ErrorCode::kZeroNorm);
  const std::vector<float> two = {1, 0};
  CHECK(error_code_of([&] { acs_scores(MatrixView(two, 1, 2), MatrixView(one, 1, 3), one, true); }) ==
        ErrorCode::kShapeMismatch);
  CHECK(error_code_of([&] { acs_scores(MatrixView(one, 1, 3), MatrixView(one, 1, 3), two, true); }) ==
        ErrorCode::kShapeMismatch);
}

TEST_CASE("adaptive_select") {
  const std::vector<double> s = {0.5, 0.2, 0.49};
  CHECK(adaptive_select(s, 0.95) == std::vector<std::size_t>{0, 2});
  CHECK(adaptive_select(s, 1.0) == std::vector<std::size_t>{0});
  // Negative maximum: the argmax alone, for any alpha.
  const std::vector<double> neg = {-0.1, -0.4};
  for (const double a : {0.1, 0.5, 0.95, 1.0}) CHECK(adaptive_select(neg, a) == std::vector<std::size_t>{0});
  // Ties resolved by concept id.
  const std::vector<double> tied = {0.3, 0.6, 0.6, 0.59};
  CHECK(adaptive_select(tied, 0.9) == std::vector<std::size_t>{1, 2, 3});

  CHECK(error_code_of([] { adaptive_select(std::vector<double>{}, 0.9); }) == ErrorCode::kInvalidArgument);
  CHECK(error_code_of([&] { adaptive_select(s, 0.0); }) == ErrorCode::kInvalidArgument);
  CHECK(error_code_of([&] { adaptive_select(s, 1.5); }) == ErrorCode::kInvalidArgument);
  CHECK(error_code_of([] { adaptive_select(std::vector<double>{NAN}, 0.5); }) ==
        ErrorCode::kInvalidArgument);
}

TEST_CASE("selection properties on random score vectors") {
  std::mt19937_64 rng(23);
  std::uniform_int_distribution<std::size_t> len(1, 64);
  for (int trial = 0; trial < 500; ++trial) {
    auto s = neurex::testing::random_doubles(rng, len(rng), -1, 1);
    const std::size_t best = oracle::sorted_top(s, 1)[0];
    const auto loose = adaptive_select(s, 0.5);
    const auto tight = adaptive_select(s, 0.9);
    CHECK(std::find(loose.begin(), loose.end(), best) != loose.end());
    CHECK(std::find(tight.begin(), tight.end(), best) != tight.end());
    if (s[best] > 0) {
      const std::set<std::size_t> a(tight.begin(), tight.end()), b(loose.begin(), loose.end());
      CHECK(std::includes(b.begin(), b.end(), a.begin(), a.end()));
    }
    // Permuting concepts permutes the selection identically.
    std::vector<std::size_t> perm(s.size());
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<double> permuted(s.size());
    for (std::size_t j = 0; j < s.size(); ++j) permuted[j] = s[perm[j]];
    std::set<std::size_t> mapped;
    for (const auto j : adaptive_select(permuted, 0.9)) mapped.insert(perm[j]);
    CHECK(mapped == std::set<std::size_t>(tight.begin(), tight.end()));
  }
}

TEST_CASE("acs ordering equals plain mean-cosine ordering") {
  std::mt19937_64 rng(29);
  for (int trial = 0; trial < 200; ++trial) {
    const std::size_t n = 1 + trial % 8, m = 2 + trial % 63, d = 2 + trial % 31;
    const auto v = random_floats(rng, n * d);
    const auto t = random_floats(rng, m * d);
    const auto tt = random_floats(rng, d);
    const auto s = acs_scores(MatrixView(v, n, d), MatrixView(t, m, d), tt, true).scores;
    const auto plain = oracle::acs(v, n, t, m, tt, d, false);
    CHECK(oracle::argsort_desc(s) == oracle::argsort_desc(plain));
  }
}

TEST_CASE("ConceptSpace cosine mode drops the template term") {
  std::mt19937_64 rng(31);
  const auto v = random_floats(rng, 4 * 6);
  const auto t = random_floats(rng, 7 * 6);
  const auto tt = random_floats(rng, 6);
  const ConceptSpace space(MatrixView(t, 7, 6), tt, true);
  const std::vector<std::size_t> rows = {0, 2, 3};
  const auto got = space.score(MatrixView(v, 4, 6), rows, ScoreMode::kCosine);
  std::vector<float> picked;
  for (const auto r : rows) picked.insert(picked.end(), v.begin() + r * 6, v.begin() + (r + 1) * 6);
  const auto want = oracle::acs(picked, 3, t, 7, tt, 6, false);
  for (std::size_t j = 0; j < 7; ++j) CHECK(got[j] == doctest::Approx(want[j]).epsilon(1e-9));
}

TEST_CASE("planted fixture: each neuron recovers its concept") {
  TempDir dir;
  const auto planted = write_planted_bundle(dir.path());
  const auto bundle = load_bundle(planted.manifest);
  const Dissector dissector(bundle, DiscoveryParams{});
  for (std::size_t i = 0; i < planted.planted_concepts.size(); ++i) {
    const auto ex = dissector.explain("final", i);
    REQUIRE(ex.major.size() == 1);
    CHECK(ex.major[0].concept_id == planted.planted_concepts[i]);
    REQUIRE_FALSE(ex.minor.empty());
    CHECK(ex.minor[0].concept_id == planted.planted_concepts[i]);
    CHECK(ex.representatives.size() == 40);
    CHECK(ex.crop_representatives.size() == 40);
    // Representatives are neuron i's block of images.
    for (const auto r : ex.representatives) CHECK(r / 40 == i);
  }
  const auto ex = discover_neuron_concepts(bundle, "final", 3, DiscoveryParams{});
  CHECK(ex.major[0].concept_id == planted.planted_concepts[3]);
  CHECK(error_code_of([&] { dissector.explain("final", 8); }) == ErrorCode::kOutOfRange);
  CHECK(error_code_of([&] { dissector.explain("nope", 0); }) == ErrorCode::kMissingRole);
}

TEST_CASE("two equally planted concepts are both selected") {
  // Images at cos 0.6 to both e1 and e2, orthogonal to the template e4.
  TempDir dir;
  BundleWriter w(dir.path());
  const float c = std::sqrt(1.0f - 0.72f);
  std::vector<float> images;
  for (int o = 0; o < 4; ++o) images.insert(images.end(), {0.6f, 0.6f, c, 0.0f});
  const float h = std::sqrt(0.5f);
  const std::vector<float> concepts = {1, 0, 0, 0, 0, 1, 0, 0, 0, 0, -1, 0, h, -h, 0, 0};
  const std::vector<float> tmpl = {0, 0, 0, 1};
  w.tensor("image_embeddings", Tensor::matrix(4, 4, images));
  w.tensor("concept_embeddings", Tensor::matrix(4, 4, concepts));
  w.tensor("template_embedding", Tensor::vector(tmpl));
  w.vocab("concept_vocab", {"a", "b", "c", "d"});
  w.tensor("activations.l", Tensor::matrix(4, 1, {1, 2, 3, 4}));
  const auto bundle = load_bundle(w.finish());

  const auto want = oracle::acs(images, 4, concepts, 4, tmpl, 4);
  CHECK(want[0] == doctest::Approx(0.6).epsilon(1e-6));
  CHECK(want[1] == doctest::Approx(0.6).epsilon(1e-6));

  DiscoveryParams p;
  p.n_images = 4;
  p.alpha_major = 0.9;
  const auto ex = discover_neuron_concepts(bundle, "l", 0, p);
  std::set<std::size_t> ids;
  for (const auto& sc : ex.major) ids.insert(sc.concept_id);
  CHECK(ids == std::set<std::size_t>{0, 1});
  // No crops in this bundle: minor is empty and a warning is recorded.
  CHECK(ex.minor.empty());
  REQUIRE(ex.warnings.size() == 1);
  CHECK(ex.warnings[0].find("crop_embeddings") != std::string::npos);
}

TEST_CASE("pooling of spatial-only layers") {
  TempDir dir;
  BundleWriter w(dir.path());
  w.tensor("image_embeddings", Tensor::matrix(3, 2, {1, 0, 0, 1, 1, 1}));
  w.tensor("concept_embeddings", Tensor::matrix(2, 2, {1, 0, 0, 1}));
  w.tensor("template_embedding", Tensor::vector({1, -1}));
  w.vocab("concept_vocab", {"x", "y"});
  // Image 0 has the best mean, image 1 the best peak.
  w.tensor("activations_spatial.l", Tensor({3, 1, 1, 4}, {2, 2, 2, 2, 5, 0, 0, 0, 1, 1, 1, 1}));
  const auto bundle = load_bundle(w.finish());
  const auto& layer = bundle.layer("l");
  CHECK(pooled_activations(layer, PoolMode::kMean, "l") == std::vector<float>{2, 1.25f, 1});
  CHECK(pooled_activations(layer, PoolMode::kMax, "l") == std::vector<float>{2, 5, 1});

  DiscoveryParams p;
  p.n_images = 1;
  p.n_crops = 0;
  CHECK(discover_neuron_concepts(bundle, "l", 0, p).representatives == std::vector<std::size_t>{0});
  p.pool = PoolMode::kMax;
  CHECK(discover_neuron_concepts(bundle, "l", 0, p).representatives == std::vector<std::size_t>{1});
  p.n_images = 4;
  CHECK(error_code_of([&] { discover_neuron_concepts(bundle, "l", 0, p); }) ==
        ErrorCode::kInvalidArgument);
}

TEST_CASE("layer dissection is independent of worker count") {
  TempDir dir;
  PlantedOptions opt;
  opt.neurons = 6;
  opt.concepts = 300;
  const auto planted = write_planted_bundle(dir.path(), opt);
  const auto bundle = load_bundle(planted.manifest);
  const Dissector dissector(bundle, DiscoveryParams{});
  const auto one = dissector.explain_layer("final", 1);
  for (const std::size_t workers : {2u, 4u, 8u}) {
    const auto many = dissector.explain_layer("final", workers);
    REQUIRE(many.size() == one.size());
    for (std::size_t i = 0; i < one.size(); ++i) {
      CHECK(many[i].major == one[i].major);
      CHECK(many[i].minor == one[i].minor);
      CHECK(many[i].representatives == one[i].representatives);
    }
  }
}

TEST_CASE("DiscoveryParams validation") {
  DiscoveryParams p;
  CHECK_NOTHROW(p.validate());
  p.alpha_major = 0;
  CHECK_THROWS_AS(p.validate(), Error);
  p = {};
  p.alpha_minor = 1.01;
  CHECK_THROWS_AS(p.validate(), Error);
  p = {};
  p.n_images = 0;
  CHECK_THROWS_AS(p.validate(), Error);
}
