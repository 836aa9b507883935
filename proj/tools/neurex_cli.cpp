// neurex: neuron concept dissection, attribution heatmaps and misprediction
// detection over pre-extracted activation bundles.

#include <iostream>
#include <map>
#include <string>

#include <CLI11.hpp>

#include "neurex/commands.hpp"

namespace {

void add_common(CLI::App* cmd, neurex::RunConfig& config) {
  cmd->add_option("--bundle", config.bundle, "Bundle manifest (JSON role -> path map)")
      ->required();
  cmd->add_option("--out", config.out, "Output directory")->required();
  cmd->add_option("--layer", config.layers, "Layer(s) to process (default: all)");
  cmd->add_option("--workers", config.workers, "Worker threads")
      ->check(CLI::Range(std::size_t{1}, std::size_t{1024}));
}

void add_discovery(CLI::App* cmd, neurex::RunConfig& config) {
  auto& p = config.discovery;
  cmd->add_option("--alpha-major", p.alpha_major, "Major concept sensitivity in (0,1]")
      ->capture_default_str();
  cmd->add_option("--alpha-minor", p.alpha_minor, "Minor concept sensitivity in (0,1]")
      ->capture_default_str();
  cmd->add_option("--top-images", p.n_images, "High-activating images per neuron")
      ->capture_default_str();
  cmd->add_option("--top-crops", p.n_crops, "High-activating crops per neuron (0 disables)")
      ->capture_default_str();
  cmd->add_option("--pool", p.pool, "Spatial pooling for ranking images: mean|max")
      ->transform(CLI::CheckedTransformer(
          std::map<std::string, neurex::PoolMode>{{"mean", neurex::PoolMode::kMean},
                                                  {"max", neurex::PoolMode::kMax}}));
  cmd->add_option("--score", p.score, "Concept score: acs|cosine")
      ->transform(CLI::CheckedTransformer(
          std::map<std::string, neurex::ScoreMode>{{"acs", neurex::ScoreMode::kAcs},
                                                   {"cosine", neurex::ScoreMode::kCosine}}));
  cmd->add_option("--select", p.select, "Concept selection: adaptive|argmax")
      ->transform(CLI::CheckedTransformer(std::map<std::string, neurex::SelectMode>{
          {"adaptive", neurex::SelectMode::kAdaptive}, {"argmax", neurex::SelectMode::kArgmax}}));
  cmd->add_flag("!--no-normalize", p.normalize_embeddings,
                "Treat embedding rows as already unit length");
}

void add_attribution(CLI::App* cmd, neurex::RunConfig& config) {
  cmd->add_option("--spatial-reduce", config.reduce,
                  "Reduction of a*g over spatial positions: sum|mean")
      ->transform(CLI::CheckedTransformer(
          std::map<std::string, neurex::SpatialReduce>{{"sum", neurex::SpatialReduce::kSum},
                                                       {"mean", neurex::SpatialReduce::kMean}}));
}

void add_top_k(CLI::App* cmd, neurex::RunConfig& config) {
  cmd->add_option("--top-k", config.top_k, "Important neurons per explanation")
      ->capture_default_str()
      ->check(CLI::PositiveNumber);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Neuron concept dissection and explanation engine"};
  app.require_subcommand(1);
  neurex::RunConfig config;
  std::size_t sample = 0;
  bool all_samples = false;
  std::size_t render_size = 0;

  auto* dissect = app.add_subcommand("dissect", "Annotate every neuron with major/minor concepts");
  add_common(dissect, config);
  add_discovery(dissect, config);

  auto* precompute =
      app.add_subcommand("precompute-class", "Class-wise neuron contributions for each class");
  add_common(precompute, config);
  add_attribution(precompute, config);
  precompute->add_flag("--all-samples", all_samples,
                       "Average over all samples, not only correctly classified ones");

  auto* explain = app.add_subcommand("explain", "Class and sample explanation of one sample");
  add_common(explain, config);
  add_attribution(explain, config);
  add_top_k(explain, config);
  explain->add_option("--sample", sample, "Sample index")->required();
  explain->add_option("--render-size", render_size, "Resize PGM output to this square size");

  auto* eval = app.add_subcommand("eval", "Score final-layer concepts against class labels");
  add_common(eval, config);

  auto* reject = app.add_subcommand("reject", "Rejection curve and AUROC: heatmap vs MSP");
  add_common(reject, config);
  add_attribution(reject, config);
  add_top_k(reject, config);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }
  config.correct_only = !all_samples;
  if (render_size > 0) config.render_size = render_size;

  return neurex::run_command(
      [&] {
        if (dissect->parsed()) neurex::cmd_dissect(config, std::cerr);
        if (precompute->parsed()) neurex::cmd_precompute_class(config, std::cerr);
        if (explain->parsed()) neurex::cmd_explain(config, sample, std::cerr);
        if (eval->parsed()) neurex::cmd_eval(config, std::cerr);
        if (reject->parsed()) neurex::cmd_reject(config, std::cerr);
      },
      std::cerr);
}
