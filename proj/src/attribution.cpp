#include "neurex/attribution.hpp"

#include <cmath>
#include <utility>

#include <fmt/format.h>

#include "neurex/error.hpp"
#include "neurex/selection.hpp"

namespace neurex {

namespace {

void check_finite(std::span<const float> v, const char* what) {
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!std::isfinite(v[i])) {
      fail(ErrorCode::kInvalidArgument, fmt::format("non-finite {} at index {}", what, i));
    }
  }
}

}  // namespace

ContributionVector taylor_contributions(std::span<const float> activations,
                                        std::span<const float> gradients) {
  if (activations.size() != gradients.size()) {
    fail(ErrorCode::kShapeMismatch,
         fmt::format("{} activations vs {} gradients", activations.size(), gradients.size()));
  }
  check_finite(activations, "activation");
  check_finite(gradients, "gradient");
  ContributionVector out;
  out.values.resize(activations.size());
  for (std::size_t i = 0; i < activations.size(); ++i) {
    out.values[i] = std::abs(static_cast<double>(activations[i]) * gradients[i]);
  }
  return out;
}

ContributionVector spatial_taylor_contributions(std::span<const float> activations,
                                                std::span<const float> gradients,
                                                std::size_t channels, SpatialReduce reduce) {
  if (activations.size() != gradients.size()) {
    fail(ErrorCode::kShapeMismatch,
         fmt::format("{} activations vs {} gradients", activations.size(), gradients.size()));
  }
  if (channels == 0 || activations.size() % channels != 0) {
    fail(ErrorCode::kShapeMismatch,
         fmt::format("{} values do not split into {} channels", activations.size(), channels));
  }
  check_finite(activations, "activation");
  check_finite(gradients, "gradient");
  const std::size_t hw = activations.size() / channels;
  ContributionVector out;
  out.values.resize(channels);
  for (std::size_t c = 0; c < channels; ++c) {
    double s = 0.0;
    for (std::size_t p = 0; p < hw; ++p) {
      s += static_cast<double>(activations[c * hw + p]) * gradients[c * hw + p];
    }
    if (reduce == SpatialReduce::kMean) s /= static_cast<double>(hw);
    out.values[c] = std::abs(s);
  }
  return out;
}

ContributionVector sample_contributions(const Bundle& bundle, const std::string& layer,
                                        std::size_t sample, SpatialReduce reduce) {
  const auto& data = bundle.layer(layer);
  if (sample >= bundle.num_images) {
    fail(ErrorCode::kOutOfRange,
         fmt::format("sample {} out of range [0, {})", sample, bundle.num_images));
  }
  ContributionVector out;
  if (data.gradients_spatial) {
    out = spatial_taylor_contributions(data.activations_spatial->slice0(sample),
                                       data.gradients_spatial->slice0(sample), data.channels,
                                       reduce);
  } else if (data.gradients) {
    out = taylor_contributions(data.activations->slice0(sample), data.gradients->slice0(sample));
  } else {
    fail(ErrorCode::kMissingRole, fmt::format("bundle lacks role gradients.{}", layer));
  }
  out.layer = layer;
  out.sample = sample;
  return out;
}

std::vector<std::size_t> top_k(std::span<const double> contributions, std::size_t k) {
  return top_indices(contributions, k);
}

ClasswiseContributionMatrix::ClasswiseContributionMatrix(std::string layer, std::size_t classes,
                                                         std::size_t channels,
                                                         std::vector<double> values,
                                                         std::vector<std::size_t> support)
    : layer_(std::move(layer)),
      classes_(classes),
      channels_(channels),
      values_(std::move(values)),
      support_(std::move(support)) {
  if (values_.size() != classes_ * channels_ || support_.size() != classes_) {
    fail(ErrorCode::kShapeMismatch,
         fmt::format("class-wise matrix {}x{} with {} values and {} support entries", classes_,
                     channels_, values_.size(), support_.size()));
  }
}

std::span<const double> ClasswiseContributionMatrix::row(std::size_t k) const {
  if (k >= classes_) {
    fail(ErrorCode::kOutOfRange, fmt::format("class {} out of range [0, {})", k, classes_));
  }
  if (support_[k] == 0) {
    fail(ErrorCode::kDegenerate,
         fmt::format("class {} has no supporting samples in layer '{}'", k, layer_));
  }
  return std::span<const double>(values_).subspan(k * channels_, channels_);
}

ClasswiseContributionMatrix classwise_contributions(
    std::span<const ContributionVector> per_sample, std::span<const std::uint32_t> labels,
    std::size_t classes, bool correct_only, const std::vector<bool>& correctness) {
  if (per_sample.size() != labels.size()) {
    fail(ErrorCode::kShapeMismatch, fmt::format("{} contribution vectors but {} labels",
                                                per_sample.size(), labels.size()));
  }
  if (correct_only && correctness.size() != labels.size()) {
    fail(ErrorCode::kShapeMismatch, fmt::format("{} correctness flags but {} labels",
                                                correctness.size(), labels.size()));
  }
  const std::size_t channels = per_sample.empty() ? 0 : per_sample.front().values.size();
  std::vector<double> sums(classes * channels, 0.0);
  std::vector<std::size_t> support(classes, 0);
  for (std::size_t i = 0; i < per_sample.size(); ++i) {
    const auto k = labels[i];
    if (k >= classes) {
      fail(ErrorCode::kOutOfRange, fmt::format("label {} out of range [0, {})", k, classes));
    }
    if (per_sample[i].values.size() != channels) {
      fail(ErrorCode::kShapeMismatch, fmt::format("sample {} has {} channels, expected {}", i,
                                                  per_sample[i].values.size(), channels));
    }
    if (correct_only && !correctness[i]) continue;
    ++support[k];
    for (std::size_t c = 0; c < channels; ++c) sums[k * channels + c] += per_sample[i].values[c];
  }
  for (std::size_t k = 0; k < classes; ++k) {
    if (support[k] == 0) continue;
    const double inv = 1.0 / static_cast<double>(support[k]);
    for (std::size_t c = 0; c < channels; ++c) sums[k * channels + c] *= inv;
  }
  std::string layer = per_sample.empty() ? std::string{} : per_sample.front().layer;
  return {std::move(layer), classes, channels, std::move(sums), std::move(support)};
}

void write_classwise(const std::filesystem::path& values_path,
                     const std::filesystem::path& support_path,
                     const ClasswiseContributionMatrix& matrix) {
  std::vector<float> values(matrix.values().begin(), matrix.values().end());
  std::vector<float> support(matrix.support().begin(), matrix.support().end());
  write_tensor(values_path, Tensor::matrix(matrix.classes(), matrix.channels(), std::move(values)));
  write_tensor(support_path, Tensor::vector(std::move(support)));
}

ClasswiseContributionMatrix read_classwise(const std::string& layer,
                                           const std::filesystem::path& values_path,
                                           const std::filesystem::path& support_path) {
  const auto values = read_tensor(values_path);
  const auto support = read_tensor(support_path);
  if (values.ndim() != 2 || support.ndim() != 1 || support.dim(0) != values.dim(0)) {
    fail(ErrorCode::kShapeMismatch,
         fmt::format("class-wise files disagree: values {} vs support {}", values.shape_string(),
                     support.shape_string()));
  }
  const auto counts = to_indices(support, UINT32_MAX, "classwise_support." + layer);
  return {layer, values.dim(0), values.dim(1),
          std::vector<double>(values.data().begin(), values.data().end()),
          std::vector<std::size_t>(counts.begin(), counts.end())};
}

std::size_t argmax(std::span<const float> values) {
  if (values.empty()) fail(ErrorCode::kInvalidArgument, "argmax of empty vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

}  // namespace neurex
