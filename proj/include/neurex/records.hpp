#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "neurex/concept_discovery.hpp"
#include "neurex/feature_store.hpp"

namespace neurex {

// Rounds to 6 decimals so JSON output prints at most six fractional digits.
double round6(double x);

// One JSON object per line:
//   {"layer":..,"neuron":..,"major":[{"concept":..,"id":..,"score":..}],
//    "minor":[..],"representatives":[..],"crop_representatives":[..]}
std::string encode_dissection_record(const NeuronExplanation& explanation,
                                     const Vocabulary& concept_vocab);
NeuronExplanation decode_dissection_record(const std::string& line);

void write_dissection(const std::filesystem::path& path,
                      const std::vector<NeuronExplanation>& explanations,
                      const Vocabulary& concept_vocab);
std::vector<NeuronExplanation> read_dissection(const std::filesystem::path& path);

void write_text_file(const std::filesystem::path& path, const std::string& text);
std::string read_text_file(const std::filesystem::path& path);

}  // namespace neurex
