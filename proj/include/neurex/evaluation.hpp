#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "neurex/concept_discovery.hpp"
#include "neurex/feature_store.hpp"
#include "neurex/tensor.hpp"

namespace neurex {

// Mean cosine between the label embedding and each selected concept row.
double embedding_similarity(std::span<const std::size_t> selected, MatrixView concept_embeddings,
                            std::span<const float> label_embedding);

struct TokenScores {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

// Lowercased alphanumeric word set. Bytes >= 0x80 count as word characters
// so UTF-8 words stay whole.
std::vector<std::string> tokenize(const std::string& text);

TokenScores concept_f1(const std::vector<std::string>& selected, const std::string& label);

// Exact match after lowercasing and whitespace/underscore normalization.
bool hit(const std::vector<std::string>& selected, const std::string& label);

struct NeuronMetrics {
  std::size_t neuron = 0;
  double clip_cos = 0.0;
  std::optional<double> alt_cos;
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  bool hit = false;
};

struct Aggregate {
  double mean = 0.0;
  double std_error = 0.0;  // sample stddev / sqrt(n); 0 when n == 1
};

Aggregate aggregate(std::span<const double> values);

struct MetricReport {
  std::vector<NeuronMetrics> neurons;  // indexed by neuron id
  Aggregate clip_cos;
  std::optional<Aggregate> alt_cos;
  Aggregate precision;
  Aggregate recall;
  Aggregate f1;
  double hit_rate = 0.0;
};

struct EvaluationInputs {
  const Vocabulary& concept_vocab;
  const Vocabulary& class_vocab;
  MatrixView concept_embeddings;
  MatrixView label_embeddings;
  std::optional<MatrixView> concept_embeddings_alt;
  std::optional<MatrixView> label_embeddings_alt;
};

// Final-layer evaluation where neuron i is the logit of class i. Uses major
// concepts only.
MetricReport evaluate_layer(std::span<const NeuronExplanation> explanations,
                            const EvaluationInputs& inputs);

}  // namespace neurex
