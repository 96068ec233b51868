#pragma once

#include <string>
#include <vector>

namespace vlif {

// Per-layer operation tallies collected during a forward pass.
// mac_count is the total multiply-accumulate count over all timesteps;
// firing_rate is measured on the spike tensor driving the layer, never
// assumed. sign_ops counts threshold/quantize evaluations in neurons.
struct LayerCount {
  std::string layer;
  double mac_count = 0.0;
  bool spike_driven = false;
  double firing_rate = 0.0;
  double sign_ops = 0.0;
};

struct OpCounter {
  std::vector<LayerCount> layers;

  void add_dense(const std::string& layer, double macs) {
    layers.push_back({layer, macs, false, 0.0, 0.0});
  }
  void add_spike(const std::string& layer, double macs, double firing_rate) {
    layers.push_back({layer, macs, true, firing_rate, 0.0});
  }
  void add_neuron(const std::string& layer, double sign_ops, double firing_rate) {
    layers.push_back({layer, 0.0, true, firing_rate, sign_ops});
  }
};

}  // namespace vlif
