#include "neurex/records.hpp"

#include <cmath>
#include <fstream>
#include <iterator>
#include <sstream>

#include <fmt/format.h>
#include <nlohmann/json.hpp>

#include "neurex/error.hpp"

namespace neurex {

using ordered_json = nlohmann::ordered_json;

double round6(double x) {
  const double r = std::round(x * 1e6) / 1e6;
  return r == 0.0 ? 0.0 : r;  // no "-0.0"
}

namespace {

ordered_json encode_concepts(const std::vector<ScoredConcept>& concepts, const Vocabulary& vocab) {
  auto arr = ordered_json::array();
  for (const auto& c : concepts) {
    ordered_json item;
    item["concept"] = vocab.at(c.concept_id);
    item["id"] = c.concept_id;
    item["score"] = round6(c.score);
    arr.push_back(std::move(item));
  }
  return arr;
}

std::vector<ScoredConcept> decode_concepts(const nlohmann::json& arr) {
  std::vector<ScoredConcept> out;
  for (const auto& item : arr) {
    out.push_back({item.at("id").get<std::size_t>(), item.at("score").get<double>()});
  }
  return out;
}

}  // namespace

std::string encode_dissection_record(const NeuronExplanation& ex, const Vocabulary& vocab) {
  ordered_json rec;
  rec["layer"] = ex.neuron.layer;
  rec["neuron"] = ex.neuron.index;
  rec["major"] = encode_concepts(ex.major, vocab);
  rec["minor"] = encode_concepts(ex.minor, vocab);
  rec["representatives"] = ex.representatives;
  rec["crop_representatives"] = ex.crop_representatives;
  return rec.dump();
}

NeuronExplanation decode_dissection_record(const std::string& line) {
  try {
    const auto rec = nlohmann::json::parse(line);
    NeuronExplanation ex;
    ex.neuron.layer = rec.at("layer").get<std::string>();
    ex.neuron.index = rec.at("neuron").get<std::size_t>();
    ex.major = decode_concepts(rec.at("major"));
    ex.minor = decode_concepts(rec.at("minor"));
    ex.representatives = rec.at("representatives").get<std::vector<std::size_t>>();
    ex.crop_representatives = rec.at("crop_representatives").get<std::vector<std::size_t>>();
    return ex;
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kParse, fmt::format("bad dissection record: {}", e.what()));
  }
}

void write_dissection(const std::filesystem::path& path,
                      const std::vector<NeuronExplanation>& explanations,
                      const Vocabulary& concept_vocab) {
  std::string text;
  for (const auto& ex : explanations) {
    text += encode_dissection_record(ex, concept_vocab);
    text += '\n';
  }
  write_text_file(path, text);
}

std::vector<NeuronExplanation> read_dissection(const std::filesystem::path& path) {
  std::istringstream in(read_text_file(path));
  std::vector<NeuronExplanation> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(decode_dissection_record(line));
    } catch (const Error& e) {
      fail(e.code(), fmt::format("{}:{}: {}", path.string(), lineno, e.what()));
    }
  }
  return out;
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::kIo, fmt::format("cannot create '{}'", path.string()));
  out << text;
  if (!out) fail(ErrorCode::kIo, fmt::format("write failed for '{}'", path.string()));
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::kIo, fmt::format("cannot open '{}'", path.string()));
  return {(std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>()};
}

}  // namespace neurex
