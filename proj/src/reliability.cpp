#include "neurex/reliability.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>

#include <fmt/format.h>

#include "neurex/error.hpp"

namespace neurex {

double msp(std::span<const float> logits) {
  if (logits.empty()) fail(ErrorCode::kInvalidArgument, "msp of empty logits");
  double top = -INFINITY;
  for (const float x : logits) {
    if (!std::isfinite(x)) fail(ErrorCode::kInvalidArgument, "non-finite logit");
    top = std::max(top, static_cast<double>(x));
  }
  double denom = 0.0;
  for (const float x : logits) denom += std::exp(static_cast<double>(x) - top);
  return 1.0 / denom;
}

RejectionCurve rejection_curve(std::span<const double> uncertainty,
                               const std::vector<bool>& mispredicted) {
  const std::size_t n = uncertainty.size();
  if (n == 0) fail(ErrorCode::kInvalidArgument, "rejection curve needs at least one sample");
  if (mispredicted.size() != n) {
    fail(ErrorCode::kShapeMismatch,
         fmt::format("{} uncertainties but {} labels", n, mispredicted.size()));
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (std::isnan(uncertainty[i])) {
      fail(ErrorCode::kInvalidArgument, fmt::format("NaN uncertainty at sample {}", i));
    }
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return uncertainty[a] > uncertainty[b];
  });

  RejectionCurve curve;
  curve.total_mispredicted =
      static_cast<std::size_t>(std::count(mispredicted.begin(), mispredicted.end(), true));
  std::size_t rejected = 0;
  std::size_t hits = 0;
  for (std::size_t percent = 1; percent <= kMaxRejectionPercent; ++percent) {
    const std::size_t target = (percent * n + 99) / 100;
    for (; rejected < target; ++rejected) hits += mispredicted[order[rejected]] ? 1 : 0;
    curve.points.push_back({static_cast<double>(percent) / 100.0, rejected, hits});
  }
  return curve;
}

double auroc(std::span<const double> scores, const std::vector<bool>& positives) {
  const std::size_t n = scores.size();
  if (positives.size() != n) {
    fail(ErrorCode::kShapeMismatch,
         fmt::format("{} scores but {} labels", n, positives.size()));
  }
  for (std::size_t i = 0; i < n; ++i) {
    if (std::isnan(scores[i])) fail(ErrorCode::kInvalidArgument, "NaN score in auroc");
  }
  const auto pos = static_cast<std::uint64_t>(std::count(positives.begin(), positives.end(), true));
  const std::uint64_t neg = n - pos;
  if (pos == 0 || neg == 0) {
    fail(ErrorCode::kDegenerate, "AUROC needs at least one positive and one negative");
  }
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // Twice the Mann-Whitney U, kept integral so the result is exact up to
  // the final division.
  std::uint64_t twice_u = 0;
  std::uint64_t neg_below = 0;
  for (std::size_t start = 0; start < n;) {
    std::size_t end = start;
    std::uint64_t group_pos = 0;
    std::uint64_t group_neg = 0;
    while (end < n && scores[order[end]] == scores[order[start]]) {
      (positives[order[end]] ? group_pos : group_neg) += 1;
      ++end;
    }
    twice_u += group_pos * (2 * neg_below + group_neg);
    neg_below += group_neg;
    start = end;
  }
  return static_cast<double>(twice_u) / (2.0 * static_cast<double>(pos) * static_cast<double>(neg));
}

double sample_uncertainty(const Heatmap& class_heatmap, const Heatmap& sample_heatmap) {
  return 1.0 - heatmap_similarity(class_heatmap, sample_heatmap);
}

}  // namespace neurex
