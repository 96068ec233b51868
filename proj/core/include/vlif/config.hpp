#pragma once

#include <string>

#include "vlif/image.hpp"
#include "vlif/net.hpp"

namespace vlif {

// Whole-run configuration: a flat key=value document ('#' comments, dotted
// keys). Parsing is strict: unknown keys and malformed values fail before any
// compute starts. The `neuron` section is shared by the network and the
// standalone analysis experiments.
struct RunConfig {
  NetworkConfig network;
  TrainConfig train;
  NeuronConfig neuron;
  VlifConfig vlif;
  RainSpec rain;

  std::string data_dir;
  std::string out_dir = "out";
  std::string checkpoint;

  uint64_t seed = 0x5eedu;
  int gen_count = 50;  // pairs produced by data generation
  int gen_size = 32;   // square image size

  // Propagates the shared neuron block and the global seed into the
  // sub-configs; call after all keys/overrides are applied.
  void finalize();
};

RunConfig parse_run_config(const std::string& path);
RunConfig parse_run_config_text(const std::string& text, const std::string& origin = "<config>");
void apply_override(RunConfig& cfg, const std::string& key, const std::string& value);

// Manifest for checkpoints: everything needed to rebuild the network.
std::string network_manifest_json(const RunConfig& cfg);
// Restores network + neuron sections from a manifest.
void load_network_manifest(const std::string& json_text, RunConfig& cfg);

}  // namespace vlif
