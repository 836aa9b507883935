#include "neurex/commands.hpp"

#include <algorithm>
#include <set>
#include <utility>

#include <fmt/format.h>
#include <fmt/ranges.h>
#include <nlohmann/json.hpp>

#include "neurex/error.hpp"
#include "neurex/evaluation.hpp"
#include "neurex/parallel.hpp"
#include "neurex/records.hpp"
#include "neurex/reliability.hpp"

namespace neurex {
namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

fs::path dissection_path(const fs::path& out, const std::string& layer) {
  return out / fmt::format("dissection.{}.jsonl", layer);
}

fs::path classwise_path(const fs::path& out, const std::string& layer) {
  return out / fmt::format("classwise.{}.tensor", layer);
}

fs::path classwise_support_path(const fs::path& out, const std::string& layer) {
  return out / fmt::format("classwise_support.{}.tensor", layer);
}

fs::path explain_prefix(const fs::path& out, const std::string& layer, std::size_t sample) {
  return out / fmt::format("explain.{}.{}", layer, sample);
}

ClasswiseAccumulator::ClasswiseAccumulator(std::string layer, std::size_t classes,
                                           std::size_t channels)
    : layer_(std::move(layer)),
      classes_(classes),
      channels_(channels),
      sums_(classes * channels, 0.0),
      support_(classes, 0) {}

void ClasswiseAccumulator::add(std::span<const double> contributions, std::size_t label) {
  if (label >= classes_) {
    fail(ErrorCode::kOutOfRange, fmt::format("label {} out of range [0, {})", label, classes_));
  }
  if (contributions.size() != channels_) {
    fail(ErrorCode::kShapeMismatch,
         fmt::format("{} contributions, expected {}", contributions.size(), channels_));
  }
  ++support_[label];
  for (std::size_t c = 0; c < channels_; ++c) sums_[label * channels_ + c] += contributions[c];
}

ClasswiseContributionMatrix ClasswiseAccumulator::finish() && {
  for (std::size_t k = 0; k < classes_; ++k) {
    if (support_[k] == 0) continue;
    const double inv = 1.0 / static_cast<double>(support_[k]);
    for (std::size_t c = 0; c < channels_; ++c) sums_[k * channels_ + c] *= inv;
  }
  return {std::move(layer_), classes_, channels_, std::move(sums_), std::move(support_)};
}

namespace {

void prepare_out(const RunConfig& config) {
  if (config.out.empty()) fail(ErrorCode::kInvalidArgument, "--out is required");
  std::error_code ec;
  fs::create_directories(config.out, ec);
  if (ec) {
    fail(ErrorCode::kIo,
         fmt::format("cannot create output directory '{}': {}", config.out.string(), ec.message()));
  }
}

Bundle open_bundle(const RunConfig& config) {
  if (config.bundle.empty()) fail(ErrorCode::kInvalidArgument, "--bundle is required");
  return load_bundle(config.bundle);
}

bool has_gradients(const LayerData& data) {
  return data.gradients.has_value() || data.gradients_spatial.has_value();
}

std::vector<std::string> selected_layers(const RunConfig& config, const Bundle& bundle,
                                         bool need_gradients) {
  if (!config.layers.empty()) {
    for (const auto& l : config.layers) {
      const auto& data = bundle.layer(l);
      if (need_gradients && !has_gradients(data)) {
        fail(ErrorCode::kMissingRole, fmt::format("bundle lacks role gradients.{}", l));
      }
    }
    return config.layers;
  }
  std::vector<std::string> out;
  for (const auto& [name, data] : bundle.layers) {
    if (!need_gradients || has_gradients(data)) out.push_back(name);
  }
  if (out.empty()) {
    fail(ErrorCode::kMissingRole, need_gradients ? "bundle lacks role gradients.<layer>"
                                                 : "bundle lacks role activations.<layer>");
  }
  return out;
}

std::string single_layer(const RunConfig& config, const Bundle& bundle, bool need_gradients) {
  const auto layers = selected_layers(config, bundle, need_gradients);
  if (layers.size() != 1) {
    fail(ErrorCode::kInvalidArgument,
         fmt::format("this command works on one layer; pass --layer (candidates: {})",
                     fmt::join(layers, ", ")));
  }
  return layers.front();
}

std::vector<bool> correctness(const Bundle& bundle) {
  const auto& logits = require_role(bundle.logits, "logits");
  const auto& labels = require_role(bundle.labels, "labels");
  std::vector<bool> out(bundle.num_images);
  for (std::size_t i = 0; i < bundle.num_images; ++i) out[i] = argmax(logits.slice0(i)) == labels[i];
  return out;
}

ClasswiseContributionMatrix load_classwise(const RunConfig& config, const std::string& layer) {
  const auto values = classwise_path(config.out, layer);
  const auto support = classwise_support_path(config.out, layer);
  for (const auto& p : {values, support}) {
    if (!fs::exists(p)) {
      fail(ErrorCode::kMissingRole,
           fmt::format("missing '{}'; run precompute-class first", p.string()));
    }
  }
  return read_classwise(layer, values, support);
}

std::vector<Heatmap> sample_nams(const Bundle& bundle, const std::string& layer,
                                 std::size_t sample, std::span<const std::size_t> neurons) {
  const auto& spatial =
      require_role(bundle.layer(layer).activations_spatial, "activations_spatial." + layer);
  const std::size_t h = spatial.dim(2);
  const std::size_t w = spatial.dim(3);
  const auto maps = spatial.slice0(sample);
  std::vector<Heatmap> out;
  out.reserve(neurons.size());
  for (const auto u : neurons) out.push_back(Heatmap::from_floats(h, w, maps.subspan(u * h * w, h * w)));
  return out;
}

std::vector<double> pick(std::span<const double> values, std::span<const std::size_t> idx) {
  std::vector<double> out;
  out.reserve(idx.size());
  for (const auto i : idx) out.push_back(values[i]);
  return out;
}

std::string fixed6(double x) { return fmt::format("{:.6f}", x); }

ordered_json aggregate_json(const Aggregate& a) {
  ordered_json j;
  j["mean"] = round6(a.mean);
  j["stderr"] = round6(a.std_error);
  return j;
}

}  // namespace

SampleExplanation explain_sample(const Bundle& bundle, const std::string& layer,
                                 const ClasswiseContributionMatrix& classwise, std::size_t sample,
                                 std::size_t top_k_count, SpatialReduce reduce) {
  const auto& logits = require_role(bundle.logits, "logits");
  if (sample >= bundle.num_images) {
    fail(ErrorCode::kOutOfRange,
         fmt::format("sample {} out of range [0, {})", sample, bundle.num_images));
  }
  const auto& data = bundle.layer(layer);
  if (classwise.channels() != data.channels) {
    fail(ErrorCode::kShapeMismatch,
         fmt::format("class-wise matrix has {} channels but layer '{}' has {}",
                     classwise.channels(), layer, data.channels));
  }
  if (top_k_count < 1 || top_k_count > data.channels) {
    fail(ErrorCode::kInvalidArgument,
         fmt::format("top-k {} must be in [1, {}]", top_k_count, data.channels));
  }
  SampleExplanation ex;
  ex.sample = sample;
  ex.predicted_class = argmax(logits.slice0(sample));

  const auto class_row = classwise.row(ex.predicted_class);
  ex.class_neurons = top_k(class_row, top_k_count);
  ex.class_weights = pick(class_row, ex.class_neurons);

  const auto contributions = sample_contributions(bundle, layer, sample, reduce);
  ex.sample_neurons = top_k(contributions.values, top_k_count);
  ex.sample_weights = pick(contributions.values, ex.sample_neurons);

  ex.class_heatmap =
      compose_heatmap(sample_nams(bundle, layer, sample, ex.class_neurons), ex.class_weights);
  ex.sample_heatmap =
      compose_heatmap(sample_nams(bundle, layer, sample, ex.sample_neurons), ex.sample_weights);
  ex.similarity = heatmap_similarity(ex.class_heatmap, ex.sample_heatmap);
  ex.uncertainty = 1.0 - ex.similarity;
  return ex;
}

void cmd_dissect(const RunConfig& config, std::ostream& log) {
  const auto bundle = open_bundle(config);
  prepare_out(config);
  const Dissector dissector(bundle, config.discovery);
  for (const auto& layer : selected_layers(config, bundle, false)) {
    const auto explanations = dissector.explain_layer(layer, config.workers);
    std::set<std::string> warnings;
    for (const auto& ex : explanations) warnings.insert(ex.warnings.begin(), ex.warnings.end());
    for (const auto& w : warnings) log << "warning: layer " << layer << ": " << w << "\n";
    const auto path = dissection_path(config.out, layer);
    write_dissection(path, explanations, bundle.concept_vocab);
    log << fmt::format("dissect: layer {}: {} neurons -> {}\n", layer, explanations.size(),
                       path.string());
  }
}

void cmd_precompute_class(const RunConfig& config, std::ostream& log) {
  const auto bundle = open_bundle(config);
  const auto& labels = require_role(bundle.labels, "labels");
  std::vector<bool> correct;
  if (config.correct_only) correct = correctness(bundle);
  const std::size_t classes = *bundle.num_classes;
  prepare_out(config);

  for (const auto& layer : selected_layers(config, bundle, true)) {
    const auto& data = bundle.layer(layer);
    ClasswiseAccumulator acc(layer, classes, data.channels);
    // Blocks bound memory; each block is reduced in sample order.
    constexpr std::size_t kBlock = 1024;
    std::vector<ContributionVector> block;
    for (std::size_t start = 0; start < bundle.num_images; start += kBlock) {
      const std::size_t count = std::min(kBlock, bundle.num_images - start);
      block.assign(count, {});
      parallel_for(count, config.workers, [&](std::size_t i) {
        block[i] = sample_contributions(bundle, layer, start + i, config.reduce);
      });
      for (std::size_t i = 0; i < count; ++i) {
        const std::size_t s = start + i;
        if (config.correct_only && !correct[s]) continue;
        acc.add(block[i].values, labels[s]);
      }
    }
    const auto matrix = std::move(acc).finish();
    for (std::size_t k = 0; k < classes; ++k) {
      if (matrix.support()[k] == 0) {
        const std::string name =
            bundle.class_vocab ? fmt::format(" ({})", (*bundle.class_vocab)[k]) : "";
        log << fmt::format("warning: layer {}: class {}{} has no supporting samples\n", layer, k,
                           name);
      }
    }
    write_classwise(classwise_path(config.out, layer),
                    classwise_support_path(config.out, layer), matrix);
    log << fmt::format("precompute-class: layer {}: {}x{} -> {}\n", layer, classes, data.channels,
                       classwise_path(config.out, layer).string());
  }
}

void cmd_explain(const RunConfig& config, std::size_t sample, std::ostream& log) {
  const auto bundle = open_bundle(config);
  const auto layer = single_layer(config, bundle, true);
  const auto classwise = load_classwise(config, layer);
  const auto concepts_file = dissection_path(config.out, layer);
  if (!fs::exists(concepts_file)) {
    fail(ErrorCode::kMissingRole,
         fmt::format("missing '{}'; run dissect first", concepts_file.string()));
  }
  const auto dissection = read_dissection(concepts_file);
  std::vector<const NeuronExplanation*> by_neuron(bundle.layer(layer).channels, nullptr);
  for (const auto& ex : dissection) {
    if (ex.neuron.index < by_neuron.size()) by_neuron[ex.neuron.index] = &ex;
  }

  const auto ex = explain_sample(bundle, layer, classwise, sample, config.top_k, config.reduce);

  const auto prefix = explain_prefix(config.out, layer, sample).string();
  auto side = [&](const char* name, const std::vector<std::size_t>& neurons,
                  const std::vector<double>& weights, const Heatmap& map) {
    ordered_json j;
    auto arr = ordered_json::array();
    for (std::size_t r = 0; r < neurons.size(); ++r) {
      ordered_json n;
      n["neuron"] = neurons[r];
      n["contribution"] = round6(weights[r]);
      auto names = [&](const std::vector<ScoredConcept>& list) {
        auto out = ordered_json::array();
        for (const auto& c : list) out.push_back(bundle.concept_vocab.at(c.concept_id));
        return out;
      };
      const auto* rec = by_neuron[neurons[r]];
      n["major"] = rec ? names(rec->major) : ordered_json::array();
      n["minor"] = rec ? names(rec->minor) : ordered_json::array();
      arr.push_back(std::move(n));
    }
    const auto pgm = fmt::format("{}.{}.pgm", prefix, name);
    const auto csv = fmt::format("{}.{}.csv", prefix, name);
    const auto rendered = config.render_size
                              ? resize_bilinear(map, *config.render_size, *config.render_size)
                              : map;
    render_pgm(rendered, pgm);
    write_csv(map, csv);
    j["neurons"] = std::move(arr);
    j["heatmap_pgm"] = fs::path(pgm).filename().string();
    j["heatmap_csv"] = fs::path(csv).filename().string();
    return j;
  };

  ordered_json rec;
  rec["layer"] = layer;
  rec["sample"] = sample;
  rec["predicted_class"] = ex.predicted_class;
  if (bundle.class_vocab) rec["predicted_label"] = (*bundle.class_vocab)[ex.predicted_class];
  if (bundle.labels) {
    rec["label"] = (*bundle.labels)[sample];
    rec["correct"] = (*bundle.labels)[sample] == ex.predicted_class;
  }
  rec["msp"] = round6(msp(bundle.logits->slice0(sample)));
  rec["class_explanation"] = side("class", ex.class_neurons, ex.class_weights, ex.class_heatmap);
  rec["sample_explanation"] =
      side("sample", ex.sample_neurons, ex.sample_weights, ex.sample_heatmap);
  rec["heatmap_similarity"] = round6(ex.similarity);
  rec["uncertainty"] = round6(ex.uncertainty);
  write_text_file(prefix + ".json", rec.dump(2) + "\n");
  log << fmt::format("explain: sample {} predicted {} similarity {} -> {}.json\n", sample,
                     ex.predicted_class, fixed6(ex.similarity), prefix);
}

void cmd_eval(const RunConfig& config, std::ostream& log) {
  const auto bundle = open_bundle(config);
  const auto& class_vocab = require_role(bundle.class_vocab, "class_vocab");
  const auto& label_emb = require_role(bundle.label_embeddings, "label_embeddings");
  const auto layer = single_layer(config, bundle, false);
  const auto concepts_file = dissection_path(config.out, layer);
  if (!fs::exists(concepts_file)) {
    fail(ErrorCode::kMissingRole,
         fmt::format("missing '{}'; run dissect first", concepts_file.string()));
  }
  const auto explanations = read_dissection(concepts_file);

  EvaluationInputs inputs{bundle.concept_vocab, class_vocab, bundle.concept_embeddings.as_matrix(),
                          label_emb.as_matrix(), std::nullopt, std::nullopt};
  if (bundle.concept_text_embeddings_alt && bundle.label_text_embeddings_alt) {
    inputs.concept_embeddings_alt = bundle.concept_text_embeddings_alt->as_matrix();
    inputs.label_embeddings_alt = bundle.label_text_embeddings_alt->as_matrix();
  }
  const auto report = evaluate_layer(explanations, inputs);

  std::string csv = "neuron,clip_cos,alt_cos,precision,recall,f1,hit\n";
  for (const auto& m : report.neurons) {
    csv += fmt::format("{},{},{},{},{},{},{}\n", m.neuron, fixed6(m.clip_cos),
                       m.alt_cos ? fixed6(*m.alt_cos) : "", fixed6(m.precision),
                       fixed6(m.recall), fixed6(m.f1), m.hit ? 1 : 0);
  }
  write_text_file(config.out / fmt::format("eval.{}.csv", layer), csv);

  ordered_json summary;
  summary["layer"] = layer;
  summary["neurons"] = report.neurons.size();
  summary["clip_cos"] = aggregate_json(report.clip_cos);
  summary["alt_cos"] = report.alt_cos ? aggregate_json(*report.alt_cos) : ordered_json();
  summary["precision"] = aggregate_json(report.precision);
  summary["recall"] = aggregate_json(report.recall);
  summary["f1"] = aggregate_json(report.f1);
  summary["hit_rate"] = round6(report.hit_rate);
  write_text_file(config.out / fmt::format("eval.{}.summary.json", layer), summary.dump(2) + "\n");
  log << fmt::format("eval: layer {}: clip_cos {} f1 {} hit_rate {}\n", layer,
                     fixed6(report.clip_cos.mean), fixed6(report.f1.mean),
                     fixed6(report.hit_rate));
}

void cmd_reject(const RunConfig& config, std::ostream& log) {
  const auto bundle = open_bundle(config);
  const auto& logits = require_role(bundle.logits, "logits");
  const auto& labels = require_role(bundle.labels, "labels");
  if (bundle.num_images < 2) fail(ErrorCode::kInvalidArgument, "reject needs at least 2 samples");
  const auto layer = single_layer(config, bundle, true);
  const auto classwise = load_classwise(config, layer);
  require_role(bundle.layer(layer).activations_spatial, "activations_spatial." + layer);

  const std::size_t n = bundle.num_images;
  std::vector<double> heat_unc(n), msp_unc(n), similarity(n);
  std::vector<std::size_t> predicted(n);
  std::vector<bool> undefined(n, false);
  parallel_for(n, config.workers, [&](std::size_t i) {
    predicted[i] = argmax(logits.slice0(i));
    msp_unc[i] = 1.0 - msp(logits.slice0(i));
    try {
      const auto ex = explain_sample(bundle, layer, classwise, i, config.top_k, config.reduce);
      similarity[i] = ex.similarity;
      heat_unc[i] = ex.uncertainty;
    } catch (const Error& e) {
      // No class explanation or an all-zero heatmap: nothing vouches for the
      // prediction, so it ranks as maximally uncertain.
      if (e.code() != ErrorCode::kDegenerate && e.code() != ErrorCode::kZeroNorm) throw;
      undefined[i] = true;
      similarity[i] = -1.0;
      heat_unc[i] = 2.0;
    }
  });
  std::vector<bool> wrong(n);
  for (std::size_t i = 0; i < n; ++i) wrong[i] = predicted[i] != labels[i];
  const auto undefined_count = std::count(undefined.begin(), undefined.end(), true);
  if (undefined_count > 0) {
    log << fmt::format("warning: {} samples have no defined heatmap similarity; ranked most uncertain\n",
                       undefined_count);
  }

  const auto heat_curve = rejection_curve(heat_unc, wrong);
  const auto msp_curve = rejection_curve(msp_unc, wrong);
  std::string csv = "rejection_rate,hits_heatmap,hits_msp\n";
  for (std::size_t p = 0; p < heat_curve.points.size(); ++p) {
    csv += fmt::format("{:.2f},{},{}\n", heat_curve.points[p].rejection_rate,
                       heat_curve.points[p].hits, msp_curve.points[p].hits);
  }
  write_text_file(config.out / fmt::format("reject.{}.csv", layer), csv);

  std::string per_sample = "sample,predicted,label,mispredicted,similarity,msp\n";
  for (std::size_t i = 0; i < n; ++i) {
    per_sample += fmt::format("{},{},{},{},{},{}\n", i, predicted[i], labels[i], wrong[i] ? 1 : 0,
                              undefined[i] ? "" : fixed6(similarity[i]), fixed6(1.0 - msp_unc[i]));
  }
  write_text_file(config.out / fmt::format("reject.{}.samples.csv", layer), per_sample);

  ordered_json summary;
  summary["layer"] = layer;
  summary["samples"] = n;
  summary["mispredicted"] = heat_curve.total_mispredicted;
  const bool applicable = heat_curve.total_mispredicted > 0 && heat_curve.total_mispredicted < n;
  if (applicable) {
    summary["status"] = "ok";
    summary["auroc_heatmap"] = round6(auroc(heat_unc, wrong));
    summary["auroc_msp"] = round6(auroc(msp_unc, wrong));
  } else {
    summary["status"] = "not-applicable";
    summary["auroc_heatmap"] = nullptr;
    summary["auroc_msp"] = nullptr;
    log << "warning: AUROC not applicable: predictions are all correct or all wrong\n";
  }
  write_text_file(config.out / fmt::format("reject.{}.summary.json", layer),
                  summary.dump(2) + "\n");
  log << fmt::format("reject: layer {}: {} samples, {} mispredicted\n", layer, n,
                     heat_curve.total_mispredicted);
}

int run_command(const std::function<void()>& command, std::ostream& err) {
  try {
    command();
    return 0;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << "\n";
    return 2;
  }
}

}  // namespace neurex
