#include "neurex/evaluation.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <set>

#include <fmt/format.h>

#include "neurex/error.hpp"

namespace neurex {

namespace {

double cosine(std::span<const float> a, std::span<const float> b) {
  double ab = 0.0, aa = 0.0, bb = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    ab += static_cast<double>(a[k]) * b[k];
    aa += static_cast<double>(a[k]) * a[k];
    bb += static_cast<double>(b[k]) * b[k];
  }
  if (!(aa > 0.0) || !(bb > 0.0)) fail(ErrorCode::kZeroNorm, "cosine with zero-norm embedding");
  return std::clamp(ab / (std::sqrt(aa) * std::sqrt(bb)), -1.0, 1.0);
}

bool is_word_byte(unsigned char ch) { return std::isalnum(ch) || ch >= 0x80; }

std::string normalize_label(const std::string& text) {
  std::string out;
  bool pending_space = false;
  for (const unsigned char ch : text) {
    if (std::isspace(ch) || ch == '_') {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out += ' ';
    pending_space = false;
    out += static_cast<char>(std::tolower(ch));
  }
  return out;
}

}  // namespace

double embedding_similarity(std::span<const std::size_t> selected, MatrixView concept_embeddings,
                            std::span<const float> label_embedding) {
  if (selected.empty()) fail(ErrorCode::kInvalidArgument, "embedding similarity of empty selection");
  if (label_embedding.size() != concept_embeddings.cols()) {
    fail(ErrorCode::kShapeMismatch,
         fmt::format("label embedding has dimension {} but concepts have {}",
                     label_embedding.size(), concept_embeddings.cols()));
  }
  double sum = 0.0;
  for (const auto j : selected) {
    if (j >= concept_embeddings.rows()) {
      fail(ErrorCode::kOutOfRange, fmt::format("concept id {} out of range", j));
    }
    sum += cosine(concept_embeddings.row(j), label_embedding);
  }
  return sum / static_cast<double>(selected.size());
}

std::vector<std::string> tokenize(const std::string& text) {
  std::set<std::string> words;
  std::string current;
  for (const unsigned char ch : text) {
    if (is_word_byte(ch)) {
      current += static_cast<char>(std::tolower(ch));
    } else if (!current.empty()) {
      words.insert(std::move(current));
      current.clear();
    }
  }
  if (!current.empty()) words.insert(std::move(current));
  return {words.begin(), words.end()};
}

TokenScores concept_f1(const std::vector<std::string>& selected, const std::string& label) {
  std::set<std::string> predicted;
  for (const auto& s : selected) {
    for (auto& t : tokenize(s)) predicted.insert(std::move(t));
  }
  const auto truth_tokens = tokenize(label);
  const std::set<std::string> truth(truth_tokens.begin(), truth_tokens.end());
  std::size_t common = 0;
  for (const auto& t : predicted) common += truth.count(t);

  TokenScores out;
  if (!predicted.empty()) out.precision = static_cast<double>(common) / predicted.size();
  if (!truth.empty()) out.recall = static_cast<double>(common) / truth.size();
  if (out.precision + out.recall > 0.0) {
    out.f1 = 2.0 * out.precision * out.recall / (out.precision + out.recall);
  }
  return out;
}

bool hit(const std::vector<std::string>& selected, const std::string& label) {
  const auto target = normalize_label(label);
  return std::any_of(selected.begin(), selected.end(),
                     [&](const std::string& s) { return normalize_label(s) == target; });
}

Aggregate aggregate(std::span<const double> values) {
  Aggregate out;
  if (values.empty()) return out;
  double sum = 0.0;
  for (const double v : values) sum += v;
  out.mean = sum / static_cast<double>(values.size());
  if (values.size() > 1) {
    double ss = 0.0;
    for (const double v : values) ss += (v - out.mean) * (v - out.mean);
    const double sd = std::sqrt(ss / static_cast<double>(values.size() - 1));
    out.std_error = sd / std::sqrt(static_cast<double>(values.size()));
  }
  return out;
}

MetricReport evaluate_layer(std::span<const NeuronExplanation> explanations,
                            const EvaluationInputs& in) {
  const std::size_t classes = in.class_vocab.size();
  if (explanations.size() != classes) {
    fail(ErrorCode::kShapeMismatch,
         fmt::format("{} neuron explanations but {} classes", explanations.size(), classes));
  }
  if (in.label_embeddings.rows() != classes) {
    fail(ErrorCode::kShapeMismatch, fmt::format("{} label embeddings but {} classes",
                                                in.label_embeddings.rows(), classes));
  }
  const bool with_alt = in.concept_embeddings_alt && in.label_embeddings_alt;

  MetricReport report;
  report.neurons.resize(classes);
  std::vector<bool> seen(classes, false);
  for (const auto& ex : explanations) {
    const auto k = ex.neuron.index;
    if (k >= classes || seen[k]) {
      fail(ErrorCode::kOutOfRange,
           fmt::format("neuron {} does not map to a distinct class in [0, {})", k, classes));
    }
    seen[k] = true;
    if (ex.major.empty()) {
      fail(ErrorCode::kInvalidArgument, fmt::format("neuron {} has no major concepts", k));
    }
    std::vector<std::size_t> ids;
    std::vector<std::string> names;
    for (const auto& c : ex.major) {
      ids.push_back(c.concept_id);
      names.push_back(in.concept_vocab.at(c.concept_id));
    }
    auto& m = report.neurons[k];
    m.neuron = k;
    m.clip_cos = embedding_similarity(ids, in.concept_embeddings, in.label_embeddings.row(k));
    if (with_alt) {
      m.alt_cos = embedding_similarity(ids, *in.concept_embeddings_alt,
                                       in.label_embeddings_alt->row(k));
    }
    const auto label = in.class_vocab[k];
    const auto scores = concept_f1(names, label);
    m.precision = scores.precision;
    m.recall = scores.recall;
    m.f1 = scores.f1;
    m.hit = hit(names, label);
  }

  auto column = [&](auto field) {
    std::vector<double> values;
    values.reserve(classes);
    for (const auto& m : report.neurons) values.push_back(field(m));
    return aggregate(values);
  };
  report.clip_cos = column([](const NeuronMetrics& m) { return m.clip_cos; });
  if (with_alt) report.alt_cos = column([](const NeuronMetrics& m) { return *m.alt_cos; });
  report.precision = column([](const NeuronMetrics& m) { return m.precision; });
  report.recall = column([](const NeuronMetrics& m) { return m.recall; });
  report.f1 = column([](const NeuronMetrics& m) { return m.f1; });
  report.hit_rate = column([](const NeuronMetrics& m) { return m.hit ? 1.0 : 0.0; }).mean;
  return report;
}

}  // namespace neurex
