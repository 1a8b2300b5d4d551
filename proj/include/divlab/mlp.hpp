#pragma once

#include <span>
#include <string>
#include <vector>

#include "divlab/diffvalue.hpp"
#include "divlab/param_vector.hpp"
#include "divlab/rng.hpp"

namespace divlab {

enum class Activation { kRelu, kNone };

struct LinearSpec {
  int64_t in = 0;
  int64_t out = 0;
  Activation act = Activation::kNone;
};

// Functional multi-layer perceptron. Parameters travel as an ordered list
// [W0, b0, W1, b1, ...] so the same forward serves plain training, MAML
// inner loops, and FIM scoring without touching any stored state.
struct MlpSpec {
  std::vector<LinearSpec> layers;

  // hidden layers relu, final layer linear
  static MlpSpec feed_forward(int64_t input_dim, const std::vector<int64_t>& hidden,
                              int64_t output_dim);
  // all layers relu (feature extractor: output is the post-activation map)
  static MlpSpec feature_extractor(int64_t input_dim, const std::vector<int64_t>& hidden);

  int64_t input_dim() const { return layers.empty() ? 0 : layers.front().in; }
  int64_t output_dim() const { return layers.empty() ? 0 : layers.back().out; }
  size_t tensor_count() const { return layers.size() * 2; }
  int64_t param_count() const;
};

std::vector<std::string> mlp_param_names(const MlpSpec& spec);

// Scaled-normal weights (sqrt(2/fan_in)), zero biases.
std::vector<Array> init_mlp_arrays(const MlpSpec& spec, Rng& rng);
std::vector<DiffValue> init_mlp_params(const MlpSpec& spec, Rng& rng);

// input [n, d] -> output [n, out_dim]
DiffValue mlp_forward(const MlpSpec& spec, std::span<const DiffValue> params,
                      const DiffValue& input);

std::vector<DiffValue> arrays_to_leaves(std::span<const Array> arrays);
std::vector<Array> values_of(std::span<const DiffValue> params);

}  // namespace divlab
