#include "divlab/mlp.hpp"

#include <cmath>

#include "divlab/errors.hpp"

namespace divlab {

MlpSpec MlpSpec::feed_forward(int64_t input_dim, const std::vector<int64_t>& hidden,
                              int64_t output_dim) {
  MlpSpec spec;
  int64_t in = input_dim;
  for (const int64_t h : hidden) {
    spec.layers.push_back({in, h, Activation::kRelu});
    in = h;
  }
  spec.layers.push_back({in, output_dim, Activation::kNone});
  return spec;
}

MlpSpec MlpSpec::feature_extractor(int64_t input_dim, const std::vector<int64_t>& hidden) {
  if (hidden.empty()) throw ConfigError("feature_extractor: needs at least one hidden layer");
  MlpSpec spec;
  int64_t in = input_dim;
  for (const int64_t h : hidden) {
    spec.layers.push_back({in, h, Activation::kRelu});
    in = h;
  }
  return spec;
}

int64_t MlpSpec::param_count() const {
  int64_t n = 0;
  for (const LinearSpec& l : layers) n += l.in * l.out + l.out;
  return n;
}

std::vector<std::string> mlp_param_names(const MlpSpec& spec) {
  std::vector<std::string> names;
  names.reserve(spec.tensor_count());
  for (size_t i = 0; i < spec.layers.size(); ++i) {
    names.push_back("layer" + std::to_string(i) + ".weight");
    names.push_back("layer" + std::to_string(i) + ".bias");
  }
  return names;
}

std::vector<Array> init_mlp_arrays(const MlpSpec& spec, Rng& rng) {
  std::vector<Array> arrays;
  arrays.reserve(spec.tensor_count());
  for (const LinearSpec& l : spec.layers) {
    const double std_dev = std::sqrt(2.0 / static_cast<double>(l.in));
    Array w({l.in, l.out});
    for (double& v : w.values()) v = std_dev * rng.normal();
    arrays.push_back(std::move(w));
    arrays.push_back(Array({l.out}));  // zero bias
  }
  return arrays;
}

std::vector<DiffValue> init_mlp_params(const MlpSpec& spec, Rng& rng) {
  const std::vector<Array> arrays = init_mlp_arrays(spec, rng);
  return arrays_to_leaves(arrays);
}

DiffValue mlp_forward(const MlpSpec& spec, std::span<const DiffValue> params,
                      const DiffValue& input) {
  if (params.size() != spec.tensor_count()) {
    throw ContractError("mlp_forward: expected " + std::to_string(spec.tensor_count()) +
                        " parameter tensors, got " + std::to_string(params.size()));
  }
  DiffValue x = input;
  for (size_t i = 0; i < spec.layers.size(); ++i) {
    x = add_rowvec(matmul(x, params[2 * i]), params[2 * i + 1]);
    if (spec.layers[i].act == Activation::kRelu) x = relu(x);
  }
  return x;
}

std::vector<DiffValue> arrays_to_leaves(std::span<const Array> arrays) {
  std::vector<DiffValue> out;
  out.reserve(arrays.size());
  for (const Array& a : arrays) out.push_back(DiffValue::leaf(a));
  return out;
}

std::vector<Array> values_of(std::span<const DiffValue> params) {
  std::vector<Array> out;
  out.reserve(params.size());
  for (const DiffValue& p : params) out.push_back(p.value());
  return out;
}

}  // namespace divlab
