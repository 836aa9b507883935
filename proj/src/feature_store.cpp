#include "neurex/feature_store.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>
#include <utility>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "neurex/error.hpp"

namespace neurex {
namespace fs = std::filesystem;

namespace {

constexpr std::size_t kFixedHeader = 16;

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

template <typename T>
T get_le(std::string_view bytes, std::size_t offset) {
  T v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    v |= static_cast<T>(static_cast<unsigned char>(bytes[offset + i])) << (8 * i);
  }
  return v;
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIo, fmt::format("cannot open '{}'", path.string()));
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) fail(ErrorCode::kIo, fmt::format("read failed for '{}'", path.string()));
  return bytes;
}

void spill(const fs::path& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::kIo, fmt::format("cannot create '{}'", path.string()));
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  out.flush();
  if (!out) fail(ErrorCode::kIo, fmt::format("write failed for '{}'", path.string()));
}

}  // namespace

std::string encode_tensor(const Tensor& tensor) {
  checked_element_count(tensor.dims());
  std::string out;
  out.reserve(kFixedHeader + 8 * tensor.ndim() + 4 * tensor.size());
  out.append(kTensorMagic);
  put_u32(out, kDtypeF32);
  put_u32(out, static_cast<std::uint32_t>(tensor.ndim()));
  for (const auto extent : tensor.dims()) put_u64(out, extent);
  for (const float x : tensor.data()) put_u32(out, std::bit_cast<std::uint32_t>(x));
  return out;
}

Tensor decode_tensor(std::string_view bytes, const std::string& origin) {
  if (bytes.size() < kTensorMagic.size()) {
    fail(ErrorCode::kTruncated, fmt::format("{}: file shorter than magic", origin));
  }
  if (bytes.substr(0, kTensorMagic.size()) != kTensorMagic) {
    fail(ErrorCode::kBadMagic, fmt::format("{}: bad magic", origin));
  }
  if (bytes.size() < kFixedHeader) {
    fail(ErrorCode::kTruncated, fmt::format("{}: truncated header", origin));
  }
  const auto dtype = get_le<std::uint32_t>(bytes, 8);
  if (dtype != kDtypeF32) {
    fail(ErrorCode::kUnsupportedDtype,
         fmt::format("{}: unsupported dtype code {}", origin, dtype));
  }
  const auto ndim = get_le<std::uint32_t>(bytes, 12);
  if (ndim == 0) fail(ErrorCode::kInvalidShape, fmt::format("{}: ndim is 0", origin));
  const std::size_t header = kFixedHeader + 8 * static_cast<std::size_t>(ndim);
  if (bytes.size() < header) {
    fail(ErrorCode::kTruncated, fmt::format("{}: truncated extents", origin));
  }
  Tensor::Shape dims(ndim);
  for (std::size_t i = 0; i < ndim; ++i) {
    dims[i] = get_le<std::uint64_t>(bytes, kFixedHeader + 8 * i);
  }
  std::size_t count = 0;
  try {
    count = checked_element_count(dims);
  } catch (const Error& e) {
    fail(e.code(), fmt::format("{}: {}", origin, e.what()));
  }
  const std::size_t payload = bytes.size() - header;
  if (payload < count * 4) {
    fail(ErrorCode::kTruncated,
         fmt::format("{}: payload has {} bytes, shape {} needs {}", origin, payload,
                     shape_string(dims), count * 4));
  }
  if (payload > count * 4) {
    fail(ErrorCode::kParse,
         fmt::format("{}: {} trailing bytes after payload", origin, payload - count * 4));
  }
  std::vector<float> data(count);
  for (std::size_t i = 0; i < count; ++i) {
    data[i] = std::bit_cast<float>(get_le<std::uint32_t>(bytes, header + 4 * i));
  }
  return Tensor(std::move(dims), std::move(data));
}

void write_tensor(const fs::path& path, const Tensor& tensor) {
  spill(path, encode_tensor(tensor));
}

Tensor read_tensor(const fs::path& path) {
  return decode_tensor(slurp(path), path.string());
}

Vocabulary::Vocabulary(std::vector<std::string> entries) : entries_(std::move(entries)) {
  if (entries_.empty()) fail(ErrorCode::kInvalidArgument, "vocabulary is empty");
  for (std::size_t i = 0; i < entries_.size(); ++i) {
    const auto& e = entries_[i];
    if (e.empty()) {
      fail(ErrorCode::kInvalidArgument, fmt::format("vocabulary entry {} is empty", i));
    }
    if (e.find_first_of("\r\n") != std::string::npos) {
      fail(ErrorCode::kInvalidArgument,
           fmt::format("vocabulary entry {} contains a line break", i));
    }
  }
}

Vocabulary read_vocabulary(const fs::path& path) {
  const auto text = slurp(path);
  std::vector<std::string> entries;
  std::size_t start = 0;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string::npos) end = text.size();
    entries.emplace_back(text.substr(start, end - start));
    start = end + 1;
  }
  try {
    return Vocabulary(std::move(entries));
  } catch (const Error& e) {
    fail(e.code(), fmt::format("{}: {}", path.string(), e.what()));
  }
}

void write_vocabulary(const fs::path& path, const Vocabulary& vocab) {
  std::string text;
  for (const auto& e : vocab.entries()) {
    text += e;
    text += '\n';
  }
  spill(path, text);
}

std::vector<std::uint32_t> to_indices(const Tensor& tensor, std::uint64_t bound,
                                      const std::string& role) {
  if (tensor.ndim() != 1) {
    fail(ErrorCode::kInvalidShape,
         fmt::format("{} must be 1-D, got {}", role, tensor.shape_string()));
  }
  std::vector<std::uint32_t> out;
  out.reserve(tensor.size());
  for (std::size_t i = 0; i < tensor.size(); ++i) {
    const double v = tensor.data()[i];
    if (!std::isfinite(v) || v < 0 || v != std::floor(v)) {
      fail(ErrorCode::kOutOfRange,
           fmt::format("{}[{}] = {} is not a non-negative integer", role, i, v));
    }
    if (v >= static_cast<double>(bound)) {
      fail(ErrorCode::kOutOfRange,
           fmt::format("{}[{}] = {} is out of range [0, {})", role, i, v, bound));
    }
    out.push_back(static_cast<std::uint32_t>(v));
  }
  return out;
}

Manifest read_manifest(const fs::path& path) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(slurp(path));
  } catch (const nlohmann::json::parse_error& e) {
    fail(ErrorCode::kParse, fmt::format("{}: {}", path.string(), e.what()));
  }
  if (!doc.is_object()) {
    fail(ErrorCode::kParse, fmt::format("{}: manifest must be a JSON object", path.string()));
  }
  Manifest manifest;
  for (const auto& [role, value] : doc.items()) {
    if (!value.is_string()) {
      fail(ErrorCode::kParse,
           fmt::format("{}: role '{}' must map to a path string", path.string(), role));
    }
    if (!is_known_role(role)) {
      fail(ErrorCode::kParse, fmt::format("{}: unknown role '{}'", path.string(), role));
    }
    manifest.emplace(role, value.get<std::string>());
  }
  return manifest;
}

void write_manifest(const fs::path& path, const Manifest& manifest) {
  nlohmann::ordered_json doc = nlohmann::ordered_json::object();
  for (const auto& [role, file] : manifest) doc[role] = file;
  spill(path, doc.dump(2) + "\n");
}

namespace {

constexpr std::array<std::string_view, 12> kPlainRoles = {
    "image_embeddings", "concept_embeddings",  "template_embedding",
    "concept_vocab",    "crop_embeddings",     "crop_owner",
    "logits",           "labels",              "class_vocab",
    "label_embeddings", "concept_text_embeddings_alt",
    "label_text_embeddings_alt",
};

constexpr std::array<std::string_view, 5> kLayerRoles = {
    "activations", "activations_spatial", "gradients", "gradients_spatial",
    "crop_activations",
};

// Splits "activations.layer4" into ("activations", "layer4").
std::optional<std::pair<std::string, std::string>> split_layer_role(std::string_view role) {
  const auto dot = role.find('.');
  if (dot == std::string_view::npos) return std::nullopt;
  std::string prefix(role.substr(0, dot));
  std::string layer(role.substr(dot + 1));
  for (const auto p : kLayerRoles) {
    if (p == prefix && !layer.empty()) return std::make_pair(prefix, layer);
  }
  return std::nullopt;
}

// Records which role first fixed each named extent so mismatches can name
// both sides.
class ExtentRegistry {
 public:
  void agree(const std::string& extent, std::uint64_t value, const std::string& role) {
    auto it = seen_.find(extent);
    if (it == seen_.end()) {
      seen_.emplace(extent, std::make_pair(value, role));
      return;
    }
    if (it->second.first != value) {
      fail(ErrorCode::kShapeMismatch,
           fmt::format("shape mismatch on {}: '{}' has {} but '{}' has {}", extent,
                       it->second.second, it->second.first, role, value));
    }
  }

  std::optional<std::uint64_t> get(const std::string& extent) const {
    auto it = seen_.find(extent);
    if (it == seen_.end()) return std::nullopt;
    return it->second.first;
  }

 private:
  std::map<std::string, std::pair<std::uint64_t, std::string>> seen_;
};

void expect_ndim(const Tensor& t, std::size_t ndim, const std::string& role) {
  if (t.ndim() != ndim) {
    fail(ErrorCode::kInvalidShape,
         fmt::format("'{}' must have {} dims, got shape {}", role, ndim, t.shape_string()));
  }
}

}  // namespace

bool is_known_role(std::string_view role) {
  for (const auto r : kPlainRoles) {
    if (r == role) return true;
  }
  return split_layer_role(role).has_value();
}

const LayerData& Bundle::layer(const std::string& name) const {
  auto it = layers.find(name);
  if (it == layers.end()) {
    fail(ErrorCode::kMissingRole,
         fmt::format("bundle lacks role activations.{} (unknown layer '{}')", name, name));
  }
  return it->second;
}

std::vector<std::string> Bundle::layer_names() const {
  std::vector<std::string> names;
  for (const auto& [name, data] : layers) names.push_back(name);
  return names;
}

const Tensor& require_role(const std::optional<Tensor>& tensor, const std::string& role) {
  if (!tensor) fail(ErrorCode::kMissingRole, fmt::format("bundle lacks role {}", role));
  return *tensor;
}

const std::vector<std::uint32_t>& require_role(
    const std::optional<std::vector<std::uint32_t>>& values, const std::string& role) {
  if (!values) fail(ErrorCode::kMissingRole, fmt::format("bundle lacks role {}", role));
  return *values;
}

const Vocabulary& require_role(const std::optional<Vocabulary>& vocab,
                               const std::string& role) {
  if (!vocab) fail(ErrorCode::kMissingRole, fmt::format("bundle lacks role {}", role));
  return *vocab;
}

Bundle load_bundle(const fs::path& manifest_path) {
  const auto manifest = read_manifest(manifest_path);
  const auto base = manifest_path.parent_path();

  for (const auto* role : {"image_embeddings", "concept_embeddings", "template_embedding",
                           "concept_vocab"}) {
    if (!manifest.contains(role)) {
      fail(ErrorCode::kMissingRole,
           fmt::format("{}: bundle lacks role {}", manifest_path.string(), role));
    }
  }

  auto resolve = [&](const std::string& file) {
    fs::path p(file);
    return p.is_absolute() ? p : base / p;
  };
  auto tensor_for = [&](const std::string& role) -> std::optional<Tensor> {
    auto it = manifest.find(role);
    if (it == manifest.end()) return std::nullopt;
    return read_tensor(resolve(it->second));
  };
  auto vocab_for = [&](const std::string& role) -> std::optional<Vocabulary> {
    auto it = manifest.find(role);
    if (it == manifest.end()) return std::nullopt;
    return read_vocabulary(resolve(it->second));
  };

  Bundle b;
  b.manifest_path = manifest_path;
  ExtentRegistry ext;

  b.image_embeddings = *tensor_for("image_embeddings");
  expect_ndim(b.image_embeddings, 2, "image_embeddings");
  ext.agree("N", b.image_embeddings.dim(0), "image_embeddings");
  ext.agree("d", b.image_embeddings.dim(1), "image_embeddings");

  b.concept_embeddings = *tensor_for("concept_embeddings");
  expect_ndim(b.concept_embeddings, 2, "concept_embeddings");
  ext.agree("m", b.concept_embeddings.dim(0), "concept_embeddings");
  ext.agree("d", b.concept_embeddings.dim(1), "concept_embeddings");

  {
    auto t = *tensor_for("template_embedding");
    if (t.ndim() == 2 && t.dim(0) == 1) t = Tensor({t.dim(1)}, {t.data().begin(), t.data().end()});
    expect_ndim(t, 1, "template_embedding");
    ext.agree("d", t.dim(0), "template_embedding");
    b.template_embedding = std::move(t);
  }

  b.concept_vocab = *vocab_for("concept_vocab");
  ext.agree("m", b.concept_vocab.size(), "concept_vocab");

  if ((b.concept_text_embeddings_alt = tensor_for("concept_text_embeddings_alt"))) {
    expect_ndim(*b.concept_text_embeddings_alt, 2, "concept_text_embeddings_alt");
    ext.agree("m", b.concept_text_embeddings_alt->dim(0), "concept_text_embeddings_alt");
    ext.agree("d'", b.concept_text_embeddings_alt->dim(1), "concept_text_embeddings_alt");
  }

  if ((b.logits = tensor_for("logits"))) {
    expect_ndim(*b.logits, 2, "logits");
    ext.agree("N", b.logits->dim(0), "logits");
    ext.agree("K", b.logits->dim(1), "logits");
  }
  if ((b.class_vocab = vocab_for("class_vocab"))) {
    ext.agree("K", b.class_vocab->size(), "class_vocab");
  }
  if ((b.label_embeddings = tensor_for("label_embeddings"))) {
    expect_ndim(*b.label_embeddings, 2, "label_embeddings");
    ext.agree("K", b.label_embeddings->dim(0), "label_embeddings");
    ext.agree("d", b.label_embeddings->dim(1), "label_embeddings");
  }
  if ((b.label_text_embeddings_alt = tensor_for("label_text_embeddings_alt"))) {
    expect_ndim(*b.label_text_embeddings_alt, 2, "label_text_embeddings_alt");
    ext.agree("K", b.label_text_embeddings_alt->dim(0), "label_text_embeddings_alt");
    ext.agree("d'", b.label_text_embeddings_alt->dim(1), "label_text_embeddings_alt");
  }
  if (auto labels = tensor_for("labels")) {
    expect_ndim(*labels, 1, "labels");
    ext.agree("N", labels->dim(0), "labels");
    const auto k = ext.get("K");
    if (!k) {
      fail(ErrorCode::kMissingRole,
           "labels need one of logits, class_vocab or label_embeddings to define K");
    }
    b.labels = to_indices(*labels, *k, "labels");
  }

  auto crops = tensor_for("crop_embeddings");
  auto owner = tensor_for("crop_owner");
  if (crops.has_value() != owner.has_value()) {
    fail(ErrorCode::kMissingRole,
         fmt::format("bundle lacks role {}", crops ? "crop_owner" : "crop_embeddings"));
  }
  if (crops) {
    expect_ndim(*crops, 2, "crop_embeddings");
    ext.agree("N_c", crops->dim(0), "crop_embeddings");
    ext.agree("d", crops->dim(1), "crop_embeddings");
    expect_ndim(*owner, 1, "crop_owner");
    ext.agree("N_c", owner->dim(0), "crop_owner");
    b.crop_owner = to_indices(*owner, *ext.get("N"), "crop_owner");
    b.crop_embeddings = std::move(crops);
  }

  for (const auto& [role, file] : manifest) {
    const auto split = split_layer_role(role);
    if (!split) continue;
    const auto& [kind, layer] = *split;
    auto& data = b.layers[layer];
    auto tensor = *tensor_for(role);
    const std::string channels = fmt::format("C[{}]", layer);
    if (kind == "activations" || kind == "gradients") {
      expect_ndim(tensor, 2, role);
      ext.agree("N", tensor.dim(0), role);
      ext.agree(channels, tensor.dim(1), role);
    } else if (kind == "activations_spatial" || kind == "gradients_spatial") {
      expect_ndim(tensor, 4, role);
      ext.agree("N", tensor.dim(0), role);
      ext.agree(channels, tensor.dim(1), role);
      ext.agree(fmt::format("h[{}]", layer), tensor.dim(2), role);
      ext.agree(fmt::format("w[{}]", layer), tensor.dim(3), role);
    } else {  // crop_activations
      expect_ndim(tensor, 2, role);
      if (!b.crop_embeddings) fail(ErrorCode::kMissingRole, "bundle lacks role crop_embeddings");
      ext.agree("N_c", tensor.dim(0), role);
      ext.agree(channels, tensor.dim(1), role);
    }
    data.channels = tensor.dim(1);
    if (kind == "activations") data.activations = std::move(tensor);
    else if (kind == "activations_spatial") data.activations_spatial = std::move(tensor);
    else if (kind == "gradients") data.gradients = std::move(tensor);
    else if (kind == "gradients_spatial") data.gradients_spatial = std::move(tensor);
    else data.crop_activations = std::move(tensor);
  }
  for (const auto& [name, data] : b.layers) {
    if (!data.activations && !data.activations_spatial) {
      fail(ErrorCode::kMissingRole,
           fmt::format("bundle lacks role activations.{} (layer has only gradient or crop data)",
                       name));
    }
    if (data.gradients_spatial && !data.activations_spatial) {
      fail(ErrorCode::kMissingRole,
           fmt::format("bundle lacks role activations_spatial.{} to pair with gradients_spatial.{}",
                       name, name));
    }
    if (data.gradients && !data.activations) {
      fail(ErrorCode::kMissingRole,
           fmt::format("bundle lacks role activations.{} to pair with gradients.{}", name, name));
    }
  }

  b.num_images = b.image_embeddings.dim(0);
  b.embedding_dim = b.image_embeddings.dim(1);
  b.num_concepts = b.concept_embeddings.dim(0);
  if (const auto k = ext.get("K")) b.num_classes = *k;
  return b;
}

}  // namespace neurex
