// Writes a synthetic planted-concept bundle for trying out the pipeline.

#include <iostream>

#include <CLI11.hpp>

#include "neurex/error.hpp"
#include "neurex/synthetic.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Write a synthetic planted-concept bundle"};
  std::string out;
  neurex::PlantedOptions opt;
  app.add_option("--out", out, "Output directory")->required();
  app.add_option("--neurons", opt.neurons, "Final-layer neurons (= classes)")->capture_default_str();
  app.add_option("--concepts", opt.concepts, "Concept vocabulary size")->capture_default_str();
  app.add_option("--dim", opt.dim, "Embedding dimension")->capture_default_str();
  app.add_option("--seed", opt.seed, "Random seed")->capture_default_str();
  CLI11_PARSE(app, argc, argv);
  try {
    const auto bundle = neurex::write_planted_bundle(out, opt);
    std::cout << bundle.manifest.string() << "\n";
  } catch (const neurex::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
