#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "neurex/feature_store.hpp"

namespace neurex {

// |a_i * df/da_i| per neuron: first-order estimate of how much the target
// logit drops when neuron i is zeroed. Exact for a linear head.
struct ContributionVector {
  std::string layer;
  std::size_t sample = 0;
  std::vector<double> values;
};

enum class SpatialReduce { kSum, kMean };

ContributionVector taylor_contributions(std::span<const float> activations,
                                        std::span<const float> gradients);

// Spatial variant: per channel, |reduce_{h,w}(a * g)| over C x h x w maps.
ContributionVector spatial_taylor_contributions(std::span<const float> activations,
                                                std::span<const float> gradients,
                                                std::size_t channels, SpatialReduce reduce);

// Contributions of every neuron in `layer` for one bundle sample. Uses the
// spatial maps when the layer has spatial gradients, pooled tensors
// otherwise.
ContributionVector sample_contributions(const Bundle& bundle, const std::string& layer,
                                        std::size_t sample, SpatialReduce reduce);

std::vector<std::size_t> top_k(std::span<const double> contributions, std::size_t k);

class ClasswiseContributionMatrix {
 public:
  ClasswiseContributionMatrix() = default;
  ClasswiseContributionMatrix(std::string layer, std::size_t classes, std::size_t channels,
                              std::vector<double> values, std::vector<std::size_t> support);

  const std::string& layer() const noexcept { return layer_; }
  std::size_t classes() const noexcept { return classes_; }
  std::size_t channels() const noexcept { return channels_; }
  const std::vector<double>& values() const noexcept { return values_; }
  const std::vector<std::size_t>& support() const noexcept { return support_; }

  bool has_class(std::size_t k) const { return k < classes_ && support_[k] > 0; }
  // Throws kOutOfRange for an unknown class and kDegenerate for a class
  // with no supporting samples.
  std::span<const double> row(std::size_t k) const;

 private:
  std::string layer_;
  std::size_t classes_ = 0;
  std::size_t channels_ = 0;
  std::vector<double> values_;  // K x C
  std::vector<std::size_t> support_;
};

// Row k = mean contribution over samples labelled k, restricted to correct
// predictions when `correct_only`. Summation runs in sample order.
ClasswiseContributionMatrix classwise_contributions(
    std::span<const ContributionVector> per_sample, std::span<const std::uint32_t> labels,
    std::size_t classes, bool correct_only, const std::vector<bool>& correctness);

// Persistence as two tensor files: values K x C and support K.
void write_classwise(const std::filesystem::path& values_path,
                     const std::filesystem::path& support_path,
                     const ClasswiseContributionMatrix& matrix);
ClasswiseContributionMatrix read_classwise(const std::string& layer,
                                           const std::filesystem::path& values_path,
                                           const std::filesystem::path& support_path);

std::size_t argmax(std::span<const float> values);

}  // namespace neurex
