#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "neurex/tensor.hpp"

namespace neurex {

// On-disk tensor layout (all integers little-endian):
//   bytes 0-7   magic "WWWFMT01"
//   bytes 8-11  u32 dtype code (1 = f32)
//   bytes 12-15 u32 ndim
//   ndim x u64  extents
//   payload     row-major f32, little-endian
inline constexpr std::string_view kTensorMagic = "WWWFMT01";
inline constexpr std::uint32_t kDtypeF32 = 1;

void write_tensor(const std::filesystem::path& path, const Tensor& tensor);
Tensor read_tensor(const std::filesystem::path& path);

// Exact byte image of a tensor file; write_tensor emits exactly this.
std::string encode_tensor(const Tensor& tensor);
Tensor decode_tensor(std::string_view bytes, const std::string& origin = "<memory>");

// Newline-delimited UTF-8 entries; line index is the id used everywhere.
class Vocabulary {
 public:
  Vocabulary() = default;
  explicit Vocabulary(std::vector<std::string> entries);

  std::size_t size() const noexcept { return entries_.size(); }
  const std::string& operator[](std::size_t i) const { return entries_[i]; }
  const std::string& at(std::size_t i) const { return entries_.at(i); }
  const std::vector<std::string>& entries() const noexcept { return entries_; }

 private:
  std::vector<std::string> entries_;
};

Vocabulary read_vocabulary(const std::filesystem::path& path);
void write_vocabulary(const std::filesystem::path& path, const Vocabulary& vocab);

// Integer-valued tensors (labels, crop owners) are stored as f32 and
// converted on load. Every value must be a non-negative integer below
// `bound`.
std::vector<std::uint32_t> to_indices(const Tensor& tensor, std::uint64_t bound,
                                      const std::string& role);

// Role name -> path, stored as a flat JSON object. Relative paths resolve
// against the manifest's directory.
using Manifest = std::map<std::string, std::string>;

Manifest read_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, const Manifest& manifest);

// True if `role` is one of the closed set of manifest roles (layer-suffixed
// roles need a non-empty layer name).
bool is_known_role(std::string_view role);

struct LayerData {
  std::size_t channels = 0;
  std::optional<Tensor> activations;          // N x C
  std::optional<Tensor> activations_spatial;  // N x C x h x w
  std::optional<Tensor> gradients;            // N x C
  std::optional<Tensor> gradients_spatial;    // N x C x h x w
  std::optional<Tensor> crop_activations;     // N_c x C
};

// Fully validated dissection input. Immutable after load_bundle.
struct Bundle {
  std::filesystem::path manifest_path;

  Tensor image_embeddings;    // N x d
  Tensor concept_embeddings;  // m x d
  Tensor template_embedding;  // d
  Vocabulary concept_vocab;   // m

  std::optional<Tensor> crop_embeddings;  // N_c x d
  std::optional<std::vector<std::uint32_t>> crop_owner;
  std::optional<Tensor> concept_text_embeddings_alt;  // m x d'
  std::optional<Tensor> label_embeddings;             // K x d
  std::optional<Tensor> label_text_embeddings_alt;    // K x d'
  std::optional<Tensor> logits;                       // N x K
  std::optional<std::vector<std::uint32_t>> labels;   // N
  std::optional<Vocabulary> class_vocab;              // K

  std::map<std::string, LayerData> layers;

  std::size_t num_images = 0;
  std::size_t embedding_dim = 0;
  std::size_t num_concepts = 0;
  std::optional<std::size_t> num_classes;

  const LayerData& layer(const std::string& name) const;
  std::vector<std::string> layer_names() const;
};

Bundle load_bundle(const std::filesystem::path& manifest_path);

// Helpers that turn an absent optional into a "bundle lacks role" error.
const Tensor& require_role(const std::optional<Tensor>& tensor,
                           const std::string& role);
const std::vector<std::uint32_t>& require_role(
    const std::optional<std::vector<std::uint32_t>>& values,
    const std::string& role);
const Vocabulary& require_role(const std::optional<Vocabulary>& vocab,
                               const std::string& role);

}  // namespace neurex
