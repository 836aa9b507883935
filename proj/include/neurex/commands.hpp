#pragma once

#include <cstddef>
#include <filesystem>
#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "neurex/attribution.hpp"
#include "neurex/concept_discovery.hpp"
#include "neurex/feature_store.hpp"
#include "neurex/heatmap.hpp"

namespace neurex {

struct RunConfig {
  std::filesystem::path bundle;
  std::filesystem::path out;
  DiscoveryParams discovery;
  std::size_t top_k = 5;
  std::vector<std::string> layers;
  std::size_t workers = 1;
  SpatialReduce reduce = SpatialReduce::kSum;
  bool correct_only = true;
  std::optional<std::size_t> render_size;  // square PGM side; native size if unset
};

// Output locations inside RunConfig::out.
std::filesystem::path dissection_path(const std::filesystem::path& out, const std::string& layer);
std::filesystem::path classwise_path(const std::filesystem::path& out, const std::string& layer);
std::filesystem::path classwise_support_path(const std::filesystem::path& out,
                                             const std::string& layer);
std::filesystem::path explain_prefix(const std::filesystem::path& out, const std::string& layer,
                                     std::size_t sample);

// Streaming version of classwise_contributions for datasets too large to
// hold every per-sample vector. Samples must be added in index order for
// reproducible sums.
class ClasswiseAccumulator {
 public:
  ClasswiseAccumulator(std::string layer, std::size_t classes, std::size_t channels);
  void add(std::span<const double> contributions, std::size_t label);
  ClasswiseContributionMatrix finish() &&;

 private:
  std::string layer_;
  std::size_t classes_;
  std::size_t channels_;
  std::vector<double> sums_;
  std::vector<std::size_t> support_;
};

// Class and sample explanation of one test sample (both sides use the
// sample's own activation maps).
struct SampleExplanation {
  std::size_t sample = 0;
  std::size_t predicted_class = 0;
  std::vector<std::size_t> class_neurons;
  std::vector<double> class_weights;
  std::vector<std::size_t> sample_neurons;
  std::vector<double> sample_weights;
  Heatmap class_heatmap;
  Heatmap sample_heatmap;
  double similarity = 0.0;
  double uncertainty = 0.0;
};

SampleExplanation explain_sample(const Bundle& bundle, const std::string& layer,
                                 const ClasswiseContributionMatrix& classwise, std::size_t sample,
                                 std::size_t top_k, SpatialReduce reduce);

void cmd_dissect(const RunConfig& config, std::ostream& log);
void cmd_precompute_class(const RunConfig& config, std::ostream& log);
void cmd_explain(const RunConfig& config, std::size_t sample, std::ostream& log);
void cmd_eval(const RunConfig& config, std::ostream& log);
void cmd_reject(const RunConfig& config, std::ostream& log);

// Runs a command and maps failures to exit codes: 0 success, 1 input error,
// 2 internal error. Diagnostics go to `err`.
int run_command(const std::function<void()>& command, std::ostream& err);

}  // namespace neurex
