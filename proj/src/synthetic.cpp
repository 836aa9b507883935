#include "neurex/synthetic.hpp"

#include <cmath>
#include <numbers>
#include <random>

#include <fmt/format.h>

#include "neurex/error.hpp"

namespace neurex {
namespace fs = std::filesystem;

BundleWriter::BundleWriter(fs::path dir) : dir_(std::move(dir)) {
  fs::create_directories(dir_);
}

void BundleWriter::tensor(const std::string& role, const Tensor& t) {
  const auto file = role + ".tensor";
  write_tensor(dir_ / file, t);
  manifest_[role] = file;
}

void BundleWriter::vocab(const std::string& role, const std::vector<std::string>& entries) {
  const auto file = role + ".txt";
  write_vocabulary(dir_ / file, Vocabulary(entries));
  manifest_[role] = file;
}

void BundleWriter::erase(const std::string& role) { manifest_.erase(role); }

fs::path BundleWriter::finish(const std::string& name) const {
  const auto path = dir_ / name;
  write_manifest(path, manifest_);
  return path;
}

namespace {

using Vec = std::vector<double>;

class Sampler {
 public:
  explicit Sampler(std::uint64_t seed) : rng_(seed) {}

  double normal() { return normal_(rng_); }
  double uniform(double lo, double hi) { return lo + (hi - lo) * unit_(rng_); }
  std::size_t index(std::size_t n) { return static_cast<std::size_t>(unit_(rng_) * n) % n; }

  Vec unit_vector(std::size_t d) {
    Vec v(d);
    for (auto& x : v) x = normal();
    return normalized(std::move(v));
  }

  static Vec normalized(Vec v) {
    double s = 0.0;
    for (const double x : v) s += x * x;
    const double inv = 1.0 / std::sqrt(s);
    for (auto& x : v) x *= inv;
    return v;
  }

 private:
  std::mt19937_64 rng_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> unit_{0.0, 1.0};
};

// Unit vector at angle theta from unit vector `axis`.
Vec tilt(const Vec& axis, double theta, Sampler& rng) {
  auto u = rng.unit_vector(axis.size());
  double proj = 0.0;
  for (std::size_t k = 0; k < u.size(); ++k) proj += u[k] * axis[k];
  for (std::size_t k = 0; k < u.size(); ++k) u[k] -= proj * axis[k];
  u = Sampler::normalized(std::move(u));
  Vec v(axis.size());
  for (std::size_t k = 0; k < v.size(); ++k) v[k] = std::cos(theta) * axis[k] + std::sin(theta) * u[k];
  return v;
}

void append(std::vector<float>& out, const Vec& v) {
  for (const double x : v) out.push_back(static_cast<float>(x));
}

const std::vector<std::string>& default_labels() {
  static const std::vector<std::string> labels = {
      "tench",        "goldfish", "great white shark", "tiger shark",
      "hammerhead",   "electric ray", "stingray",      "rooster",
  };
  return labels;
}

}  // namespace

PlantedBundle write_planted_bundle(const fs::path& dir, const PlantedOptions& opt) {
  const std::size_t c = opt.neurons;
  if (c == 0 || opt.concepts < c || opt.images_per_neuron == 0) {
    fail(ErrorCode::kInvalidArgument, "planted bundle needs neurons <= concepts");
  }
  Sampler rng(opt.seed);
  BundleWriter w(dir);
  PlantedBundle result;

  for (std::size_t i = 0; i < c; ++i) {
    result.class_labels.push_back(i < default_labels().size() ? default_labels()[i]
                                                              : fmt::format("class {}", i));
  }
  // Planted ids spread through the vocabulary.
  const std::size_t stride = opt.concepts / c;
  for (std::size_t i = 0; i < c; ++i) result.planted_concepts.push_back(i * stride + stride / 2);

  const auto tmpl = rng.unit_vector(opt.dim);
  std::vector<Vec> concepts(opt.concepts);
  std::vector<std::string> concept_names(opt.concepts);
  std::vector<float> concept_data, alt_data;
  for (std::size_t j = 0; j < opt.concepts; ++j) {
    const auto r = rng.unit_vector(opt.dim);
    Vec t(opt.dim);
    for (std::size_t k = 0; k < opt.dim; ++k) t[k] = 0.6 * tmpl[k] + 0.8 * r[k];
    concepts[j] = Sampler::normalized(std::move(t));
    append(concept_data, concepts[j]);
    append(alt_data, rng.unit_vector(opt.alt_dim));
    concept_names[j] = fmt::format("distractor_{:04}", j);
  }
  for (std::size_t i = 0; i < c; ++i) concept_names[result.planted_concepts[i]] = result.class_labels[i];

  // Images: block i is planted on concept i, the tail is unrelated.
  const std::size_t n = c * opt.images_per_neuron + opt.extra_images;
  const double max_theta = opt.max_angle_deg * std::numbers::pi / 180.0;
  std::vector<float> image_data;
  std::vector<std::size_t> group(n, c);
  for (std::size_t s = 0; s < n; ++s) {
    if (s < c * opt.images_per_neuron) {
      group[s] = s / opt.images_per_neuron;
      const auto& axis = concepts[result.planted_concepts[group[s]]];
      append(image_data, tilt(axis, rng.uniform(0.0, max_theta), rng));
    } else {
      append(image_data, rng.unit_vector(opt.dim));
    }
  }

  // Spatial NAMs: the planted neuron has a bright 1-pixel blob whose location
  // depends on the neuron, everything else is low background.
  const std::size_t h = opt.map_size, hw = opt.map_size * opt.map_size;
  std::vector<float> spatial(n * c * hw), pooled(n * c);
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t ch = 0; ch < c; ++ch) {
      double sum = 0.0;
      for (std::size_t p = 0; p < hw; ++p) {
        double v = rng.uniform(0.0, 0.2);
        if (group[s] == ch && p == (ch * 5) % hw) v += 4.0;
        spatial[(s * c + ch) * hw + p] = static_cast<float>(v);
        sum += static_cast<float>(v);
      }
      pooled[s * c + ch] = static_cast<float>(sum / static_cast<double>(hw));
    }
  }

  // Near-identity linear head on pooled activations.
  std::vector<double> head(c * c);
  for (std::size_t k = 0; k < c; ++k) {
    for (std::size_t ch = 0; ch < c; ++ch) head[k * c + ch] = (k == ch ? 10.0 : 0.0) + rng.uniform(0.0, 0.5);
  }
  std::vector<float> logits(n * c), grads(n * c), grads_spatial(n * c * hw), labels(n);
  for (std::size_t s = 0; s < n; ++s) {
    std::size_t pred = 0;
    for (std::size_t k = 0; k < c; ++k) {
      double z = 0.0;
      for (std::size_t ch = 0; ch < c; ++ch) z += head[k * c + ch] * pooled[s * c + ch];
      logits[s * c + k] = static_cast<float>(z);
      if (logits[s * c + k] > logits[s * c + pred]) pred = k;
    }
    for (std::size_t ch = 0; ch < c; ++ch) {
      grads[s * c + ch] = static_cast<float>(head[pred * c + ch]);
      for (std::size_t p = 0; p < hw; ++p) {
        grads_spatial[(s * c + ch) * hw + p] =
            static_cast<float>(head[pred * c + ch] / static_cast<double>(hw));
      }
    }
    labels[s] = static_cast<float>(group[s] < c ? group[s] : rng.index(c));
  }

  // Crops: perturbed copies of their source image.
  std::vector<float> crop_data, crop_owner, crop_act;
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t r = 0; r < opt.crops_per_image; ++r) {
      Vec v(opt.dim);
      for (std::size_t k = 0; k < opt.dim; ++k) v[k] = image_data[s * opt.dim + k] + 0.01 * rng.normal();
      append(crop_data, Sampler::normalized(std::move(v)));
      crop_owner.push_back(static_cast<float>(s));
      for (std::size_t ch = 0; ch < c; ++ch) {
        crop_act.push_back(static_cast<float>(pooled[s * c + ch] * rng.uniform(0.9, 1.1)));
      }
    }
  }

  std::vector<float> label_data, label_alt;
  for (std::size_t i = 0; i < c; ++i) {
    const auto j = result.planted_concepts[i];
    label_data.insert(label_data.end(), concept_data.begin() + j * opt.dim,
                      concept_data.begin() + (j + 1) * opt.dim);
    label_alt.insert(label_alt.end(), alt_data.begin() + j * opt.alt_dim,
                     alt_data.begin() + (j + 1) * opt.alt_dim);
  }

  std::vector<float> tmpl_data;
  append(tmpl_data, tmpl);
  const auto& layer = opt.layer;
  w.tensor("image_embeddings", Tensor::matrix(n, opt.dim, image_data));
  w.tensor("concept_embeddings", Tensor::matrix(opt.concepts, opt.dim, concept_data));
  w.tensor("template_embedding", Tensor::vector(tmpl_data));
  w.vocab("concept_vocab", concept_names);
  w.tensor("concept_text_embeddings_alt", Tensor::matrix(opt.concepts, opt.alt_dim, alt_data));
  w.tensor("label_embeddings", Tensor::matrix(c, opt.dim, label_data));
  w.tensor("label_text_embeddings_alt", Tensor::matrix(c, opt.alt_dim, label_alt));
  w.vocab("class_vocab", result.class_labels);
  w.tensor("logits", Tensor::matrix(n, c, logits));
  w.tensor("labels", Tensor::vector(labels));
  w.tensor("activations." + layer, Tensor::matrix(n, c, pooled));
  w.tensor("activations_spatial." + layer, Tensor({n, c, h, h}, spatial));
  w.tensor("gradients." + layer, Tensor::matrix(n, c, grads));
  w.tensor("gradients_spatial." + layer, Tensor({n, c, h, h}, grads_spatial));
  if (opt.crops_per_image > 0) {
    const std::size_t nc = n * opt.crops_per_image;
    w.tensor("crop_embeddings", Tensor::matrix(nc, opt.dim, crop_data));
    w.tensor("crop_owner", Tensor::vector(crop_owner));
    w.tensor("crop_activations." + layer, Tensor::matrix(nc, c, crop_act));
  }
  result.manifest = w.finish();
  return result;
}

}  // namespace neurex
