#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "neurex/feature_store.hpp"
#include "neurex/tensor.hpp"

namespace neurex {

struct NeuronId {
  std::string layer;
  std::size_t index = 0;

  friend bool operator==(const NeuronId&, const NeuronId&) = default;
};

enum class PoolMode { kMean, kMax };

// kAcs subtracts the image-template similarity; kCosine is the plain mean
// cosine used for ablations.
enum class ScoreMode { kAcs, kCosine };

// kAdaptive keeps everything above alpha * max; kArgmax keeps the best only.
enum class SelectMode { kAdaptive, kArgmax };

struct DiscoveryParams {
  std::size_t n_images = 40;
  std::size_t n_crops = 40;
  double alpha_major = 0.95;
  double alpha_minor = 0.90;
  bool normalize_embeddings = true;
  PoolMode pool = PoolMode::kMean;
  ScoreMode score = ScoreMode::kAcs;
  SelectMode select = SelectMode::kAdaptive;

  void validate() const;
};

struct ConceptScoreVector {
  NeuronId neuron;
  std::vector<double> scores;
};

struct ScoredConcept {
  std::size_t concept_id = 0;
  double score = 0.0;

  friend bool operator==(const ScoredConcept&, const ScoredConcept&) = default;
};

struct NeuronExplanation {
  NeuronId neuron;
  std::vector<ScoredConcept> major;
  std::vector<ScoredConcept> minor;
  std::vector<std::size_t> representatives;
  std::vector<std::size_t> crop_representatives;
  std::vector<std::string> warnings;
};

std::vector<std::size_t> select_representatives(std::span<const float> pooled_activations,
                                                std::size_t n);

// s_j = mean_o [cos(v_o, t_j) - cos(v_o, t_tem)] over the rows of `images`.
// With normalize=false rows are taken as already unit length.
ConceptScoreVector acs_scores(MatrixView images, MatrixView concepts,
                              std::span<const float> template_embedding, bool normalize);

// Concept ids with score > alpha * max(score), always including the argmax,
// ordered by (score desc, id asc). A non-positive maximum yields the argmax
// alone.
std::vector<std::size_t> adaptive_select(std::span<const double> scores, double alpha);

// Concept embeddings prepared once for repeated scoring: per-row inverse
// norms are cached instead of a normalized copy, so large vocabularies are
// not duplicated in memory.
class ConceptSpace {
 public:
  ConceptSpace(MatrixView concepts, std::span<const float> template_embedding,
               bool normalize);

  std::size_t size() const noexcept { return concepts_.rows(); }
  std::size_t dim() const noexcept { return concepts_.cols(); }

  // Scores a representative set given as row indices into `embeddings`.
  std::vector<double> score(MatrixView embeddings, std::span<const std::size_t> rows,
                            ScoreMode mode) const;

 private:
  std::vector<double> mean_direction(MatrixView embeddings,
                                     std::span<const std::size_t> rows) const;

  MatrixView concepts_;
  std::vector<double> inv_norms_;
  std::vector<double> template_unit_;
  bool normalize_;
};

// Per-image pooled activations for one layer (N x C, row-major), pooled from
// the spatial maps when needed.
std::vector<float> pooled_activations(const LayerData& layer, PoolMode pool,
                                      const std::string& layer_name);

class Dissector {
 public:
  Dissector(const Bundle& bundle, DiscoveryParams params);

  NeuronExplanation explain(const std::string& layer, std::size_t neuron) const;
  std::vector<NeuronExplanation> explain_layer(const std::string& layer,
                                               std::size_t workers) const;

 private:
  struct LayerCache {
    std::size_t channels = 0;
    std::vector<float> pooled;       // N x C
    std::vector<float> crop_pooled;  // N_c x C, empty without crops
  };

  LayerCache build_cache(const std::string& layer) const;
  NeuronExplanation explain_cached(const std::string& layer, const LayerCache& cache,
                                   std::size_t neuron) const;

  const Bundle& bundle_;
  DiscoveryParams params_;
  ConceptSpace space_;
};

NeuronExplanation discover_neuron_concepts(const Bundle& bundle, const std::string& layer,
                                           std::size_t neuron, const DiscoveryParams& params);

}  // namespace neurex
