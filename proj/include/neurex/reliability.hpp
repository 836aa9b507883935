#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "neurex/heatmap.hpp"

namespace neurex {

// Maximum softmax probability, computed with max subtraction.
double msp(std::span<const float> logits);

struct RejectionPoint {
  double rejection_rate = 0.0;
  std::size_t rejected = 0;
  std::size_t hits = 0;

  friend bool operator==(const RejectionPoint&, const RejectionPoint&) = default;
};

struct RejectionCurve {
  std::vector<RejectionPoint> points;
  std::size_t total_mispredicted = 0;
};

inline constexpr std::size_t kMaxRejectionPercent = 50;

// For r = 1%..50%, rejects the ceil(r*N) most uncertain samples (ties by
// ascending index) and counts how many of them were mispredicted.
RejectionCurve rejection_curve(std::span<const double> uncertainty,
                               const std::vector<bool>& mispredicted);

// Mann-Whitney AUROC: (concordant + tied/2) / (positives * negatives).
// Throws kDegenerate unless both classes are present.
double auroc(std::span<const double> scores, const std::vector<bool>& positives);

// 1 - cosine(class heatmap, sample heatmap); higher means less trustworthy.
double sample_uncertainty(const Heatmap& class_heatmap, const Heatmap& sample_heatmap);

}  // namespace neurex
