#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "neurex/feature_store.hpp"

namespace neurex {

// Writes tensors and vocabularies into a directory and collects the manifest.
class BundleWriter {
 public:
  explicit BundleWriter(std::filesystem::path dir);

  void tensor(const std::string& role, const Tensor& t);
  void vocab(const std::string& role, const std::vector<std::string>& entries);
  // Drops a role (for building deliberately broken bundles).
  void erase(const std::string& role);
  std::filesystem::path finish(const std::string& name = "bundle.json") const;

  const Manifest& manifest() const noexcept { return manifest_; }
  const std::filesystem::path& dir() const noexcept { return dir_; }

 private:
  std::filesystem::path dir_;
  Manifest manifest_;
};

struct PlantedOptions {
  std::size_t neurons = 8;
  std::size_t images_per_neuron = 40;
  std::size_t extra_images = 80;
  std::size_t concepts = 1000;
  std::size_t dim = 128;
  std::size_t alt_dim = 32;
  std::size_t map_size = 4;
  double max_angle_deg = 5.0;
  std::size_t crops_per_image = 2;
  std::string layer = "final";
  std::uint64_t seed = 20240401;
};

struct PlantedBundle {
  std::filesystem::path manifest;
  std::vector<std::size_t> planted_concepts;  // neuron i -> concept id
  std::vector<std::string> class_labels;
};

// Synthetic final-layer bundle: neuron i fires on a block of images that
// embed within max_angle_deg of planted concept i, and is the logit unit of
// class i through a near-identity linear head. All concept embeddings share
// a common template component as real prompt embeddings do.
PlantedBundle write_planted_bundle(const std::filesystem::path& dir,
                                   const PlantedOptions& options = {});

}  // namespace neurex
