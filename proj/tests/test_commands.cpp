#include <algorithm>
#include <sstream>

#include <doctest.h>
#include <nlohmann/json.hpp>

#include "neurex/commands.hpp"
#include "neurex/records.hpp"
#include "neurex/reliability.hpp"
#include "support/oracles.hpp"
#include "support/test_util.hpp"
#include "support/toy_bundle.hpp"

using namespace neurex;
using neurex::testing::make_reject_fixture;
using neurex::testing::TempDir;
using neurex::testing::ToyBundle;
using neurex::testing::write_toy;
using json = nlohmann::json;

namespace {

PlantedOptions small_planted() {
  PlantedOptions opt;
  opt.neurons = 4;
  opt.concepts = 200;
  opt.dim = 32;
  opt.images_per_neuron = 20;
  opt.extra_images = 20;
  opt.layer = "fc";
  return opt;
}

RunConfig config_for(const std::filesystem::path& manifest, const std::filesystem::path& out) {
  RunConfig c;
  c.bundle = manifest;
  c.out = out;
  c.discovery.n_images = 10;
  c.discovery.n_crops = 10;
  return c;
}

json read_json(const std::filesystem::path& p) { return json::parse(read_text_file(p)); }

// N=6, K=2, C=3 with known pooled activations and gradients. Sample 4 is
// mispredicted.
ToyBundle grouped_toy() {
  ToyBundle t;
  t.n = 6;
  t.channels = 3;
  t.classes = 2;
  t.spatial.assign(6 * 3 * 4, 0.25f);
  t.pooled = {1, 2, 3,  2, 2, 2,  1, 0, 4,  0, 5, 1,  9, 9, 9,  3, 1, 0};
  t.grads = {1, 1, 1,  -1, 2, 0.5f,  2, 2, 2,  1, -1, 1,  1, 1, 1,  0.5f, 0.5f, 4};
  t.logits = {2, 0,  3, 1,  0, 1,  0, 2,  0, 5,  1, 3};
  t.labels = {0, 0, 1, 1, 0, 1};
  return t;
}

}  // namespace

TEST_CASE("dissect writes one record per neuron") {
  TempDir dir;
  const auto planted = write_planted_bundle(dir / "bundle", small_planted());
  auto cfg = config_for(planted.manifest, dir / "out");
  std::ostringstream log;
  cmd_dissect(cfg, log);
  const auto records = read_dissection(dissection_path(cfg.out, "fc"));
  REQUIRE(records.size() == 4);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(records[i].neuron.index == i);
    REQUIRE_FALSE(records[i].major.empty());
    CHECK(records[i].major.front().concept_id == planted.planted_concepts[i]);
    CHECK(records[i].representatives.size() == 10);
  }
  const auto text = read_text_file(dissection_path(cfg.out, "fc"));
  CHECK(std::count(text.begin(), text.end(), '\n') == 4);
  CHECK(json::parse(text.substr(0, text.find('\n')))["major"][0]["concept"] == "tench");
}

TEST_CASE("dissect reports a missing role by name") {
  TempDir dir;
  const auto planted = write_planted_bundle(dir / "bundle", small_planted());
  auto manifest = read_manifest(planted.manifest);
  manifest.erase("concept_vocab");
  write_manifest(planted.manifest, manifest);
  std::ostringstream err;
  const int code = run_command([&] { cmd_dissect(config_for(planted.manifest, dir / "out"), err); }, err);
  CHECK(code == 1);
  CHECK(err.str().find("concept_vocab") != std::string::npos);
  CHECK_FALSE(std::filesystem::exists(dissection_path(dir / "out", "fc")));
}

TEST_CASE("precompute-class matches the group mean over correct samples") {
  TempDir dir;
  const auto toy = grouped_toy();
  const auto manifest = write_toy(dir / "b", toy);
  auto cfg = config_for(manifest, dir / "out");
  std::ostringstream log;
  cmd_precompute_class(cfg, log);
  const auto m = read_classwise("head", classwise_path(cfg.out, "head"),
                                classwise_support_path(cfg.out, "head"));

  std::vector<std::vector<double>> rows;
  std::vector<bool> correct;
  for (std::size_t s = 0; s < 6; ++s) {
    std::vector<double> r;
    for (std::size_t c = 0; c < 3; ++c) r.push_back(std::abs(toy.pooled[s * 3 + c] * toy.grads[s * 3 + c]));
    rows.push_back(r);
    const std::size_t pred = toy.logits[s * 2 + 1] > toy.logits[s * 2] ? 1 : 0;
    correct.push_back(pred == toy.labels[s]);
  }
  std::vector<std::size_t> counts;
  const auto want = oracle::group_mean(rows, toy.labels, 2, correct, &counts);
  CHECK(m.support() == counts);
  CHECK(counts == std::vector<std::size_t>{2, 3});
  for (std::size_t k = 0; k < 2; ++k) {
    for (std::size_t c = 0; c < 3; ++c) CHECK(m.row(k)[c] == doctest::Approx(want[k][c]).epsilon(1e-6));
  }

  const auto first = read_text_file(classwise_path(cfg.out, "head"));
  cmd_precompute_class(cfg, log);
  CHECK(read_text_file(classwise_path(cfg.out, "head")) == first);

  cfg.correct_only = false;
  cmd_precompute_class(cfg, log);
  const auto all = read_classwise("head", classwise_path(cfg.out, "head"),
                                  classwise_support_path(cfg.out, "head"));
  CHECK(all.support() == std::vector<std::size_t>{3, 3});
  CHECK(all.row(0)[0] == doctest::Approx((1.0 + 2.0 + 9.0) / 3));
}

TEST_CASE("precompute-class warns about an empty class") {
  TempDir dir;
  auto toy = grouped_toy();
  toy.labels = {0, 0, 0, 0, 0, 0};
  const auto cfg = config_for(write_toy(dir / "b", toy), dir / "out");
  std::ostringstream log;
  cmd_precompute_class(cfg, log);
  CHECK(log.str().find("class 1 (concept 1) has no supporting samples") != std::string::npos);
  const auto m = read_classwise("head", classwise_path(cfg.out, "head"),
                                classwise_support_path(cfg.out, "head"));
  CHECK(m.support()[1] == 0);
  CHECK_FALSE(m.has_class(1));
  CHECK(testing::error_code_of([&] { (void)m.row(1); }) == ErrorCode::kDegenerate);
}

TEST_CASE("precompute-class requires labels") {
  TempDir dir;
  const auto manifest = write_toy(dir / "b", grouped_toy());
  auto roles = read_manifest(manifest);
  roles.erase("labels");
  write_manifest(manifest, roles);
  std::ostringstream err;
  CHECK(run_command([&] { cmd_precompute_class(config_for(manifest, dir / "out"), err); }, err) == 1);
  CHECK(err.str().find("labels") != std::string::npos);
}

TEST_CASE("explain: coinciding and disjoint explanations") {
  TempDir dir;
  const auto fx = make_reject_fixture(60, 7);
  const auto cfg = [&] {
    auto c = config_for(write_toy(dir / "b", fx.toy), dir / "out");
    c.top_k = 1;
    c.discovery.n_images = 5;
    return c;
  }();
  std::ostringstream log;
  cmd_dissect(cfg, log);
  cmd_precompute_class(cfg, log);

  const auto right = static_cast<std::size_t>(
      std::find(fx.mispredicted.begin(), fx.mispredicted.end(), false) - fx.mispredicted.begin());
  const auto wrong = static_cast<std::size_t>(
      std::find(fx.mispredicted.begin(), fx.mispredicted.end(), true) - fx.mispredicted.begin());
  REQUIRE(wrong < 60);

  cmd_explain(cfg, right, log);
  const auto prefix = explain_prefix(cfg.out, "head", right).string();
  const auto rec = read_json(prefix + ".json");
  CHECK(rec["heatmap_similarity"].get<double>() == doctest::Approx(1.0));
  CHECK(rec["uncertainty"].get<double>() == doctest::Approx(0.0));
  CHECK(rec["correct"] == true);
  CHECK(rec["class_explanation"]["neurons"][0]["neuron"] ==
        rec["sample_explanation"]["neurons"][0]["neuron"]);
  for (const char* side : {"class", "sample"}) {
    CHECK(std::filesystem::exists(prefix + "." + side + ".pgm"));
    CHECK(std::filesystem::exists(prefix + "." + side + ".csv"));
  }
  CHECK(read_text_file(prefix + ".class.pgm").rfind("P5\n4 4\n255\n", 0) == 0);

  cmd_explain(cfg, wrong, log);
  const auto bad = read_json(explain_prefix(cfg.out, "head", wrong).string() + ".json");
  CHECK(bad["heatmap_similarity"].get<double>() == 0.0);
  CHECK(bad["uncertainty"].get<double>() == 1.0);
  CHECK(bad["correct"] == false);

  auto sized = cfg;
  sized.render_size = 16;
  cmd_explain(sized, right, log);
  CHECK(read_text_file(prefix + ".sample.pgm").size() == std::string("P5\n16 16\n255\n").size() + 256);

  auto too_many = cfg;
  too_many.top_k = 5;
  std::ostringstream err;
  CHECK(run_command([&] { cmd_explain(too_many, right, err); }, err) == 1);
  CHECK(err.str().find("top-k") != std::string::npos);
  CHECK(run_command([&] { cmd_explain(cfg, 60, err); }, err) == 1);
}

TEST_CASE("explain needs precomputed class-wise contributions") {
  TempDir dir;
  const auto cfg = config_for(write_toy(dir / "b", make_reject_fixture(10, 3).toy), dir / "out");
  std::ostringstream err;
  CHECK(run_command([&] { cmd_explain(cfg, 0, err); }, err) == 1);
  CHECK(err.str().find("precompute-class") != std::string::npos);
}

TEST_CASE("eval on the planted bundle") {
  TempDir dir;
  const auto planted = write_planted_bundle(dir / "bundle", small_planted());
  const auto cfg = config_for(planted.manifest, dir / "out");
  std::ostringstream log;
  cmd_dissect(cfg, log);
  cmd_eval(cfg, log);
  const auto summary = read_json(cfg.out / "eval.fc.summary.json");
  CHECK(summary["hit_rate"].get<double>() == 1.0);
  CHECK(summary["f1"]["mean"].get<double>() >= 0.9);
  CHECK(summary["clip_cos"]["mean"].get<double>() > 0.5);
  CHECK(summary["alt_cos"].is_object());
  const auto csv = read_text_file(cfg.out / "eval.fc.csv");
  CHECK(csv.rfind("neuron,clip_cos,alt_cos,precision,recall,f1,hit\n", 0) == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 5);

  auto roles = read_manifest(planted.manifest);
  roles.erase("label_embeddings");
  write_manifest(planted.manifest, roles);
  std::ostringstream err;
  CHECK(run_command([&] { cmd_eval(cfg, err); }, err) == 1);
  CHECK(err.str().find("label_embeddings") != std::string::npos);
}

TEST_CASE("reject separates rotated explanations from uninformative confidence") {
  TempDir dir;
  const auto fx = make_reject_fixture(200, 11);
  auto cfg = config_for(write_toy(dir / "b", fx.toy), dir / "out");
  cfg.top_k = 1;
  std::ostringstream log;
  cmd_precompute_class(cfg, log);
  cmd_reject(cfg, log);
  const auto summary = read_json(cfg.out / "reject.head.summary.json");
  CHECK(summary["status"] == "ok");
  CHECK(summary["auroc_heatmap"].get<double>() == 1.0);
  CHECK(summary["auroc_msp"].get<double>() < 1.0);
  CHECK(summary["mispredicted"].get<std::size_t>() ==
        static_cast<std::size_t>(std::count(fx.mispredicted.begin(), fx.mispredicted.end(), true)));

  // Curve equals sort-and-count on the same uncertainties.
  const auto bundle = load_bundle(cfg.bundle);
  const auto classwise = read_classwise("head", classwise_path(cfg.out, "head"),
                                        classwise_support_path(cfg.out, "head"));
  std::vector<double> heat(200), conf(200);
  for (std::size_t i = 0; i < 200; ++i) {
    heat[i] = explain_sample(bundle, "head", classwise, i, 1, SpatialReduce::kSum).uncertainty;
    conf[i] = 1.0 - msp(bundle.logits->slice0(i));
  }
  const auto want_heat = oracle::rejection_hits(heat, fx.mispredicted);
  const auto want_msp = oracle::rejection_hits(conf, fx.mispredicted);
  std::istringstream csv(read_text_file(cfg.out / "reject.head.csv"));
  std::string line;
  std::getline(csv, line);
  CHECK(line == "rejection_rate,hits_heatmap,hits_msp");
  for (std::size_t p = 0; p < 50; ++p) {
    REQUIRE(std::getline(csv, line));
    CHECK(line == fmt::format("{:.2f},{},{}", (p + 1) / 100.0, want_heat[p], want_msp[p]));
  }
  const auto samples = read_text_file(cfg.out / "reject.head.samples.csv");
  CHECK(std::count(samples.begin(), samples.end(), '\n') == 201);
}

TEST_CASE("reject with no mispredictions") {
  TempDir dir;
  const auto fx = make_reject_fixture(40, 5, 0.0);
  auto cfg = config_for(write_toy(dir / "b", fx.toy), dir / "out");
  cfg.top_k = 1;
  std::ostringstream log;
  cmd_precompute_class(cfg, log);
  cmd_reject(cfg, log);
  const auto summary = read_json(cfg.out / "reject.head.summary.json");
  CHECK(summary["status"] == "not-applicable");
  CHECK(summary["auroc_heatmap"].is_null());
  CHECK(summary["auroc_msp"].is_null());
  CHECK(log.str().find("not applicable") != std::string::npos);
  const auto csv = read_text_file(cfg.out / "reject.head.csv");
  CHECK(csv.find(",1") == std::string::npos);
  CHECK(csv.find("0.50,0,0\n") != std::string::npos);
}

TEST_CASE("reject ranks samples without a class explanation as most uncertain") {
  TempDir dir;
  auto fx = make_reject_fixture(40, 9);
  // Make every class-1 prediction wrong so class 1 has no support.
  for (std::size_t s = 0; s < 40; ++s) {
    if (fx.toy.logits[s * 2 + 1] > fx.toy.logits[s * 2]) fx.toy.labels[s] = 0;
  }
  auto cfg = config_for(write_toy(dir / "b", fx.toy), dir / "out");
  cfg.top_k = 1;
  std::ostringstream log;
  cmd_precompute_class(cfg, log);
  cmd_reject(cfg, log);
  CHECK(log.str().find("no defined heatmap similarity") != std::string::npos);
  const auto summary = read_json(cfg.out / "reject.head.summary.json");
  CHECK(summary["status"] == "ok");
}

TEST_CASE("commands need a single layer when several qualify") {
  TempDir dir;
  const auto manifest = write_toy(dir / "b", grouped_toy());
  auto roles = read_manifest(manifest);
  for (const auto* role : {"activations", "gradients", "activations_spatial"}) {
    roles[std::string(role) + ".second"] = roles.at(std::string(role) + ".head");
  }
  write_manifest(manifest, roles);
  auto cfg = config_for(manifest, dir / "out");
  std::ostringstream log;
  cmd_precompute_class(cfg, log);
  CHECK(std::filesystem::exists(classwise_path(cfg.out, "second")));
  std::ostringstream err;
  CHECK(run_command([&] { cmd_reject(cfg, err); }, err) == 1);
  CHECK(err.str().find("--layer") != std::string::npos);
  cfg.layers = {"second"};
  cfg.top_k = 1;
  CHECK(run_command([&] { cmd_reject(cfg, err); }, err) == 0);
}
