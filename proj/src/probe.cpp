#include "divlab/probe.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include <json.hpp>

#include "divlab/diffvalue.hpp"
#include "divlab/errors.hpp"

namespace divlab {

namespace {

std::string format_accuracy(double acc) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.4f", acc);
  return buf;
}

Array gather_rows(const Array& x, const std::vector<int>& ids, int64_t begin, int64_t count) {
  const int64_t d = x.cols();
  Array out({count, d});
  for (int64_t i = 0; i < count; ++i) {
    const int64_t src = ids[static_cast<size_t>(begin + i)];
    std::copy_n(x.data() + src * d, d, out.data() + i * d);
  }
  return out;
}

double full_accuracy(const MlpSpec& spec, std::span<const Array> arrays, const Array& x,
                     const std::vector<int>& y) {
  GradModeGuard off(false);
  auto leaves = arrays_to_leaves(arrays);
  auto logits = mlp_forward(spec, leaves, DiffValue::constant(x));
  const Array& v = logits.value();
  const int64_t n = v.rows(), c = v.cols();
  int64_t correct = 0;
  for (int64_t i = 0; i < n; ++i) {
    int64_t best = 0;
    for (int64_t j = 1; j < c; ++j) {
      if (v.data()[i * c + j] > v.data()[i * c + best]) best = j;
    }
    if (best == y[static_cast<size_t>(i)]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(n);
}

}  // namespace

ProbeNetwork::ProbeNetwork(MlpSpec feature_spec, std::vector<Array> feature_arrays,
                           uint64_t meta_seed, double train_accuracy)
    : spec_(std::move(feature_spec)),
      arrays_(std::move(feature_arrays)),
      meta_seed_(meta_seed),
      train_accuracy_(train_accuracy) {
  if (arrays_.size() != spec_.tensor_count()) {
    throw ContractError("probe: expected " + std::to_string(spec_.tensor_count()) +
                        " feature tensors, got " + std::to_string(arrays_.size()));
  }
  probe_id_ = feature_params().content_hash_hex();
}

ParamVector ProbeNetwork::feature_params() const {
  const auto names = mlp_param_names(spec_);
  std::vector<std::pair<std::string, Array>> entries;
  for (size_t i = 0; i < names.size(); ++i) entries.emplace_back(names[i], arrays_[i]);
  return ParamVector::from_named(entries);
}

void ProbeNetwork::save(const std::filesystem::path& base) const {
  feature_params().save_file(base.string() + ".dvpv");
  nlohmann::json meta;
  meta["input_dim"] = spec_.input_dim();
  std::vector<int64_t> hidden;
  for (const auto& layer : spec_.layers) hidden.push_back(layer.out);
  meta["hidden"] = hidden;
  meta["meta_seed"] = meta_seed_;
  meta["train_accuracy"] = train_accuracy_;
  meta["probe_id"] = probe_id_;
  std::ofstream out(base.string() + ".json", std::ios::trunc);
  if (!out) throw MissingInputError("probe: cannot write '" + base.string() + ".json'");
  out << meta.dump(2) << "\n";
}

ProbeNetwork ProbeNetwork::load(const std::filesystem::path& base) {
  std::ifstream in(base.string() + ".json");
  if (!in) throw MissingInputError("probe: missing checkpoint '" + base.string() + ".json'");
  nlohmann::json meta;
  try {
    in >> meta;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("probe: unreadable metadata in '" + base.string() + ".json': " + e.what());
  }
  const auto spec = MlpSpec::feature_extractor(meta.at("input_dim").get<int64_t>(),
                                               meta.at("hidden").get<std::vector<int64_t>>());
  auto pv = ParamVector::load_file(base.string() + ".dvpv");
  ProbeNetwork probe(spec, pv.tensors(), meta.at("meta_seed").get<uint64_t>(),
                     meta.at("train_accuracy").get<double>());
  const auto want = meta.at("probe_id").get<std::string>();
  if (probe.probe_id() != want) {
    throw FormatError("probe: checkpoint id mismatch for '" + base.string() + "': weights hash " +
                      probe.probe_id() + ", metadata says " + want);
  }
  return probe;
}

ProbeNetwork pretrain_probe(const DatasetHandle& meta_dataset, const ProbeTrainConfig& config) {
  const int64_t classes = meta_dataset.class_count();
  if (classes < 2) {
    throw ConfigError("probe pretraining: degenerate label space (" + std::to_string(classes) +
                      " class) in dataset '" + meta_dataset.dataset_id() + "'");
  }
  if (config.batch_size < 1 || config.max_epochs < 1 || !(config.lr > 0.0)) {
    throw ConfigError("probe pretraining: batch_size/max_epochs/lr must be positive");
  }
  auto [x, y] = meta_dataset.all_samples();
  const int64_t n = x.rows();
  const MlpSpec net = MlpSpec::feed_forward(meta_dataset.feature_dim(), config.hidden, classes);

  Rng rng(config.seed);
  auto arrays = init_mlp_arrays(net, rng);

  std::vector<int> order(static_cast<size_t>(n));
  for (size_t i = 0; i < order.size(); ++i) order[i] = static_cast<int>(i);

  double accuracy = full_accuracy(net, arrays, x, y);
  for (int64_t epoch = 0; epoch < config.max_epochs && accuracy < config.target_accuracy;
       ++epoch) {
    rng.shuffle(order);
    for (int64_t begin = 0; begin < n; begin += config.batch_size) {
      const int64_t count = std::min<int64_t>(config.batch_size, n - begin);
      Array xb = gather_rows(x, order, begin, count);
      std::vector<int> yb(static_cast<size_t>(count));
      for (int64_t i = 0; i < count; ++i) {
        yb[static_cast<size_t>(i)] = y[static_cast<size_t>(order[static_cast<size_t>(begin + i)])];
      }
      auto leaves = arrays_to_leaves(arrays);
      auto loss = cross_entropy_nats(mlp_forward(net, leaves, DiffValue::constant(xb)), yb);
      if (!std::isfinite(loss.value().item())) {
        throw NumericError("probe pretraining: non-finite loss at epoch " + std::to_string(epoch));
      }
      auto grads = grad(loss, leaves);
      for (size_t k = 0; k < arrays.size(); ++k) {
        axpy_inplace(arrays[k], -config.lr, grads[k].value());
      }
    }
    accuracy = full_accuracy(net, arrays, x, y);
  }
  if (accuracy < config.target_accuracy) {
    throw NumericError("probe pretraining: reached accuracy " + format_accuracy(accuracy) +
                       " < target " + format_accuracy(config.target_accuracy) + " within " +
                       std::to_string(config.max_epochs) + " epochs");
  }

  const MlpSpec feature_spec =
      MlpSpec::feature_extractor(meta_dataset.feature_dim(), config.hidden);
  std::vector<Array> feature_arrays(arrays.begin(),
                                    arrays.begin() + static_cast<int64_t>(feature_spec.tensor_count()));
  return ProbeNetwork(feature_spec, std::move(feature_arrays), config.seed, accuracy);
}

namespace {

// Frozen-backbone features for every row of the batch.
Array batch_features(const ProbeNetwork& probe, const TaskBatch& batch) {
  auto [x, y] = batch.all_rows();
  if (x.rows() == 0) throw ContractError("probe: empty batch '" + batch.batch_id + "'");
  if (x.cols() != probe.input_dim()) {
    throw ShapeError("probe: batch feature dim " + std::to_string(x.cols()) +
                     " does not match probe input dim " + std::to_string(probe.input_dim()));
  }
  GradModeGuard off(false);
  auto leaves = arrays_to_leaves(probe.feature_arrays());
  return mlp_forward(probe.feature_spec(), leaves, DiffValue::constant(x)).value();
}

std::vector<Array> fresh_head_arrays(const ProbeNetwork& probe, const TaskBatch& batch) {
  const MlpSpec head({{LinearSpec{probe.feature_out_dim(), batch.n_way, Activation::kNone}}});
  Rng rng(derive_seed(fnv1a64(probe.probe_id()), "head:" + batch.batch_id));
  return init_mlp_arrays(head, rng);
}

}  // namespace

ParamVector finetune_head(const ProbeNetwork& probe, const TaskBatch& batch, int64_t steps,
                          double lr) {
  if (steps < 0 || !(lr > 0.0)) throw ContractError("finetune_head: steps >= 0 and lr > 0");
  if (batch.n_way < 2) {
    throw ContractError("finetune_head: batch '" + batch.batch_id + "' has n_way " +
                        std::to_string(batch.n_way) + " < 2");
  }
  const Array feats = batch_features(probe, batch);
  auto labels = batch.all_rows().second;
  auto head = fresh_head_arrays(probe, batch);

  for (int64_t step = 0; step < steps; ++step) {
    auto w = DiffValue::leaf(head[0]);
    auto b = DiffValue::leaf(head[1]);
    auto logits = add_rowvec(matmul(DiffValue::constant(feats), w), b);
    auto loss = cross_entropy_nats(logits, labels);
    if (!std::isfinite(loss.value().item())) {
      throw NumericError("finetune_head: non-finite loss at step " + std::to_string(step) +
                         " on batch '" + batch.batch_id + "'");
    }
    auto grads = grad(loss, std::vector<DiffValue>{w, b});
    axpy_inplace(head[0], -lr, grads[0].value());
    axpy_inplace(head[1], -lr, grads[1].value());
  }
  return ParamVector::from_named({{"head.weight", head[0]}, {"head.bias", head[1]}});
}

std::string label_mode_name(LabelMode m) {
  return m == LabelMode::kSampled ? "sampled" : "empirical";
}

LabelMode label_mode_from_name(const std::string& name) {
  if (name == "sampled") return LabelMode::kSampled;
  if (name == "empirical") return LabelMode::kEmpirical;
  throw ConfigError("label_mode must be 'sampled' or 'empirical', got '" + name + "'");
}

Task2VecEmbedding fim_diagonal(const ProbeNetwork& probe, const ParamVector& head,
                               const TaskBatch& batch, LabelMode label_mode, int64_t mc_draws,
                               uint64_t seed) {
  auto [x, y] = batch.all_rows();
  const int64_t n = x.rows();
  if (n == 0) throw ContractError("fim_diagonal: empty batch '" + batch.batch_id + "'");
  if (label_mode == LabelMode::kSampled && mc_draws < 1) {
    throw ContractError("fim_diagonal: sampled label mode needs mc_draws >= 1");
  }
  if (head.layout().size() != 2 || head.tensor(0).rank() != 2 ||
      head.tensor(0).rows() != probe.feature_out_dim() || head.tensor(0).cols() != batch.n_way) {
    throw ContractError("fim_diagonal: head shape does not match probe output " +
                        std::to_string(probe.feature_out_dim()) + " x n_way " +
                        std::to_string(batch.n_way));
  }
  const int64_t d = x.cols();
  const int64_t ways = batch.n_way;
  const auto head_w = DiffValue::constant(head.tensor(0));
  const auto head_b = DiffValue::constant(head.tensor(1));
  auto leaves = arrays_to_leaves(probe.feature_arrays());

  Task2VecEmbedding emb;
  emb.probe_id = probe.probe_id();
  emb.batch_id = batch.batch_id;
  emb.label_mode = label_mode;
  emb.fim_diag.assign(static_cast<size_t>(probe.feature_spec().param_count()), 0.0);

  Rng rng(seed);
  std::vector<double> probs(static_cast<size_t>(ways));
  std::vector<int64_t> counts(static_cast<size_t>(ways));
  for (int64_t i = 0; i < n; ++i) {
    Array row({1, d});
    std::copy_n(x.data() + i * d, d, row.data());
    auto feats = mlp_forward(probe.feature_spec(), leaves, DiffValue::constant(std::move(row)));
    auto logp = log_softmax(add_rowvec(matmul(feats, head_w), head_b));

    std::fill(counts.begin(), counts.end(), 0);
    if (label_mode == LabelMode::kEmpirical) {
      counts[static_cast<size_t>(y[static_cast<size_t>(i)])] = 1;
    } else {
      for (int64_t c = 0; c < ways; ++c) {
        probs[static_cast<size_t>(c)] = std::exp(logp.value().data()[c]);
      }
      for (int64_t t = 0; t < mc_draws; ++t) {
        const double u = rng.uniform01();
        double cum = 0.0;
        int64_t drawn = ways - 1;
        for (int64_t c = 0; c < ways; ++c) {
          cum += probs[static_cast<size_t>(c)];
          if (u < cum) {
            drawn = c;
            break;
          }
        }
        ++counts[static_cast<size_t>(drawn)];
      }
    }
    const double denom =
        label_mode == LabelMode::kEmpirical ? 1.0 : static_cast<double>(mc_draws);
    for (int64_t c = 0; c < ways; ++c) {
      const int64_t hits = counts[static_cast<size_t>(c)];
      if (hits == 0) continue;
      const double weight = static_cast<double>(hits) / denom;
      auto score = sum(pick(logp, {static_cast<int>(c)}));
      auto grads = grad(score, leaves);
      size_t j = 0;
      for (const auto& g : grads) {
        for (double v : g.value().values()) {
          emb.fim_diag[j++] += weight * v * v;
        }
      }
    }
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  for (auto& v : emb.fim_diag) v *= inv_n;
  return emb;
}

}  // namespace divlab
