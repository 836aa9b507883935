#include "neurex/concept_discovery.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <fmt/format.h>

#include "neurex/error.hpp"
#include "neurex/parallel.hpp"
#include "neurex/selection.hpp"

namespace neurex {

namespace {

// Fixed-order four-lane dot product; the lane split is part of the result's
// bit pattern, so it never depends on the caller.
double dot(std::span<const float> a, std::span<const double> b) {
  double acc[4] = {0.0, 0.0, 0.0, 0.0};
  const std::size_t d = a.size();
  std::size_t k = 0;
  for (; k + 4 <= d; k += 4) {
    acc[0] += static_cast<double>(a[k]) * b[k];
    acc[1] += static_cast<double>(a[k + 1]) * b[k + 1];
    acc[2] += static_cast<double>(a[k + 2]) * b[k + 2];
    acc[3] += static_cast<double>(a[k + 3]) * b[k + 3];
  }
  for (; k < d; ++k) acc[0] += static_cast<double>(a[k]) * b[k];
  return (acc[0] + acc[1]) + (acc[2] + acc[3]);
}

double norm(std::span<const float> v) {
  double s = 0.0;
  for (const float x : v) s += static_cast<double>(x) * x;
  return std::sqrt(s);
}

double checked_inverse_norm(std::span<const float> v, const char* what, std::size_t row) {
  const double n = norm(v);
  if (!(n > 0.0) || !std::isfinite(n)) {
    fail(ErrorCode::kZeroNorm, fmt::format("{} row {} has zero or non-finite norm", what, row));
  }
  return 1.0 / n;
}

std::vector<ScoredConcept> with_scores(const std::vector<std::size_t>& ids,
                                       const std::vector<double>& scores) {
  std::vector<ScoredConcept> out;
  out.reserve(ids.size());
  for (const auto id : ids) out.push_back({id, scores[id]});
  return out;
}

}  // namespace

void DiscoveryParams::validate() const {
  if (n_images < 1) fail(ErrorCode::kInvalidArgument, "top-images must be >= 1");
  for (const double a : {alpha_major, alpha_minor}) {
    if (!(a > 0.0 && a <= 1.0)) {
      fail(ErrorCode::kInvalidArgument, fmt::format("alpha {} outside (0, 1]", a));
    }
  }
}

std::vector<std::size_t> select_representatives(std::span<const float> pooled_activations,
                                                std::size_t n) {
  return top_indices(pooled_activations, n);
}

ConceptSpace::ConceptSpace(MatrixView concepts, std::span<const float> template_embedding,
                           bool normalize)
    : concepts_(concepts), normalize_(normalize) {
  if (template_embedding.size() != concepts.cols()) {
    fail(ErrorCode::kShapeMismatch,
         fmt::format("template has dimension {} but concepts have {}",
                     template_embedding.size(), concepts.cols()));
  }
  inv_norms_.assign(concepts.rows(), 1.0);
  double tmpl_scale = 1.0;
  if (normalize) {
    for (std::size_t j = 0; j < concepts.rows(); ++j) {
      inv_norms_[j] = checked_inverse_norm(concepts.row(j), "concept embedding", j);
    }
    tmpl_scale = checked_inverse_norm(template_embedding, "template embedding", 0);
  }
  template_unit_.resize(template_embedding.size());
  for (std::size_t k = 0; k < template_embedding.size(); ++k) {
    template_unit_[k] = template_embedding[k] * tmpl_scale;
  }
}

std::vector<double> ConceptSpace::mean_direction(MatrixView embeddings,
                                                 std::span<const std::size_t> rows) const {
  if (embeddings.cols() != dim()) {
    fail(ErrorCode::kShapeMismatch,
         fmt::format("image embeddings have dimension {} but concepts have {}",
                     embeddings.cols(), dim()));
  }
  if (rows.empty()) fail(ErrorCode::kInvalidArgument, "empty representative set");
  std::vector<double> mean(dim(), 0.0);
  for (const auto r : rows) {
    const auto v = embeddings.row(r);
    const double scale = normalize_ ? checked_inverse_norm(v, "image embedding", r) : 1.0;
    for (std::size_t k = 0; k < v.size(); ++k) mean[k] += v[k] * scale;
  }
  const double inv_n = 1.0 / static_cast<double>(rows.size());
  for (auto& x : mean) x *= inv_n;
  return mean;
}

std::vector<double> ConceptSpace::score(MatrixView embeddings,
                                        std::span<const std::size_t> rows,
                                        ScoreMode mode) const {
  // mean_o cos(v_o, t) equals <mean_o v_o/|v_o|, t/|t|>, so each concept
  // costs one dot product against the mean direction.
  const auto mean = mean_direction(embeddings, rows);
  double offset = 0.0;
  if (mode == ScoreMode::kAcs) {
    for (std::size_t k = 0; k < mean.size(); ++k) offset += mean[k] * template_unit_[k];
  }
  std::vector<double> scores(size());
  for (std::size_t j = 0; j < size(); ++j) {
    scores[j] = dot(concepts_.row(j), mean) * inv_norms_[j] - offset;
  }
  return scores;
}

ConceptScoreVector acs_scores(MatrixView images, MatrixView concepts,
                              std::span<const float> template_embedding, bool normalize) {
  ConceptSpace space(concepts, template_embedding, normalize);
  std::vector<std::size_t> rows(images.rows());
  std::iota(rows.begin(), rows.end(), std::size_t{0});
  return {NeuronId{}, space.score(images, rows, ScoreMode::kAcs)};
}

std::vector<std::size_t> adaptive_select(std::span<const double> scores, double alpha) {
  if (scores.empty()) fail(ErrorCode::kInvalidArgument, "empty score vector");
  if (!(alpha > 0.0 && alpha <= 1.0)) {
    fail(ErrorCode::kInvalidArgument, fmt::format("alpha {} outside (0, 1]", alpha));
  }
  std::size_t best = 0;
  for (std::size_t j = 0; j < scores.size(); ++j) {
    if (!std::isfinite(scores[j])) {
      fail(ErrorCode::kInvalidArgument, fmt::format("non-finite score at concept {}", j));
    }
    if (scores[j] > scores[best]) best = j;
  }
  std::vector<std::size_t> picked{best};
  if (scores[best] > 0.0) {
    const double threshold = alpha * scores[best];
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (j != best && scores[j] > threshold) picked.push_back(j);
    }
  }
  std::sort(picked.begin(), picked.end(), [&](std::size_t a, std::size_t b) {
    return scores[a] > scores[b] || (scores[a] == scores[b] && a < b);
  });
  return picked;
}

std::vector<float> pooled_activations(const LayerData& layer, PoolMode pool,
                                      const std::string& layer_name) {
  if (pool == PoolMode::kMean && layer.activations) {
    const auto d = layer.activations->data();
    return {d.begin(), d.end()};
  }
  const auto& spatial = require_role(layer.activations_spatial,
                                     "activations_spatial." + layer_name);
  const std::size_t n = spatial.dim(0);
  const std::size_t c = spatial.dim(1);
  const std::size_t hw = spatial.dim(2) * spatial.dim(3);
  const auto data = spatial.data();
  std::vector<float> pooled(n * c);
  for (std::size_t i = 0; i < n * c; ++i) {
    const auto map = data.subspan(i * hw, hw);
    if (pool == PoolMode::kMax) {
      pooled[i] = *std::max_element(map.begin(), map.end());
    } else {
      double s = 0.0;
      for (const float x : map) s += x;
      pooled[i] = static_cast<float>(s / static_cast<double>(hw));
    }
  }
  return pooled;
}

Dissector::Dissector(const Bundle& bundle, DiscoveryParams params)
    : bundle_(bundle),
      params_(params),
      space_(bundle.concept_embeddings.as_matrix(), bundle.template_embedding.data(),
             params.normalize_embeddings) {
  params_.validate();
}

Dissector::LayerCache Dissector::build_cache(const std::string& layer) const {
  const auto& data = bundle_.layer(layer);
  LayerCache cache;
  cache.channels = data.channels;
  cache.pooled = pooled_activations(data, params_.pool, layer);
  if (bundle_.crop_embeddings && params_.n_crops > 0) {
    const auto& owner = *bundle_.crop_owner;
    if (data.crop_activations) {
      const auto d = data.crop_activations->data();
      cache.crop_pooled.assign(d.begin(), d.end());
    } else {
      // Without per-crop activations a crop inherits its source image's.
      cache.crop_pooled.resize(owner.size() * cache.channels);
      for (std::size_t r = 0; r < owner.size(); ++r) {
        std::copy_n(cache.pooled.begin() + static_cast<std::ptrdiff_t>(owner[r] * cache.channels),
                    cache.channels,
                    cache.crop_pooled.begin() + static_cast<std::ptrdiff_t>(r * cache.channels));
      }
    }
  }
  return cache;
}

NeuronExplanation Dissector::explain_cached(const std::string& layer, const LayerCache& cache,
                                            std::size_t neuron) const {
  if (neuron >= cache.channels) {
    fail(ErrorCode::kOutOfRange,
         fmt::format("neuron {} out of range for layer '{}' with {} channels", neuron, layer,
                     cache.channels));
  }
  auto column = [&](const std::vector<float>& table) {
    const std::size_t rows = table.size() / cache.channels;
    std::vector<float> col(rows);
    for (std::size_t r = 0; r < rows; ++r) col[r] = table[r * cache.channels + neuron];
    return col;
  };
  auto pick = [&](const std::vector<double>& scores, double alpha) {
    if (params_.select == SelectMode::kArgmax) return adaptive_select(scores, 1.0);
    return adaptive_select(scores, alpha);
  };

  NeuronExplanation out;
  out.neuron = {layer, neuron};

  const auto image_col = column(cache.pooled);
  if (params_.n_images > image_col.size()) {
    fail(ErrorCode::kInvalidArgument,
         fmt::format("top-images {} exceeds the {} probe images", params_.n_images,
                     image_col.size()));
  }
  out.representatives = select_representatives(image_col, params_.n_images);
  const auto major_scores =
      space_.score(bundle_.image_embeddings.as_matrix(), out.representatives, params_.score);
  out.major = with_scores(pick(major_scores, params_.alpha_major), major_scores);

  if (params_.n_crops > 0) {
    if (cache.crop_pooled.empty()) {
      out.warnings.push_back("bundle lacks role crop_embeddings; minor concepts skipped");
    } else {
      const auto crop_col = column(cache.crop_pooled);
      if (params_.n_crops > crop_col.size()) {
        fail(ErrorCode::kInvalidArgument,
             fmt::format("top-crops {} exceeds the {} crops", params_.n_crops, crop_col.size()));
      }
      out.crop_representatives = select_representatives(crop_col, params_.n_crops);
      const auto minor_scores = space_.score(bundle_.crop_embeddings->as_matrix(),
                                             out.crop_representatives, params_.score);
      out.minor = with_scores(pick(minor_scores, params_.alpha_minor), minor_scores);
    }
  }
  return out;
}

NeuronExplanation Dissector::explain(const std::string& layer, std::size_t neuron) const {
  return explain_cached(layer, build_cache(layer), neuron);
}

std::vector<NeuronExplanation> Dissector::explain_layer(const std::string& layer,
                                                        std::size_t workers) const {
  const auto cache = build_cache(layer);
  std::vector<NeuronExplanation> out(cache.channels);
  parallel_for(cache.channels, workers,
               [&](std::size_t i) { out[i] = explain_cached(layer, cache, i); });
  return out;
}

NeuronExplanation discover_neuron_concepts(const Bundle& bundle, const std::string& layer,
                                           std::size_t neuron, const DiscoveryParams& params) {
  return Dissector(bundle, params).explain(layer, neuron);
}

}  // namespace neurex
