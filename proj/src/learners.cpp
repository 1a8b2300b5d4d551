#include "divlab/learners.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <json.hpp>

#include "divlab/analysis.hpp"
#include "divlab/errors.hpp"
#include "divlab/rng.hpp"

namespace divlab {

std::string algorithm_name(Algorithm a) {
  switch (a) {
    case Algorithm::kPT: return "pt";
    case Algorithm::kFoMaml: return "fo-maml";
    case Algorithm::kHoMaml: return "ho-maml";
  }
  throw ContractError("algorithm_name: unknown algorithm");
}

Algorithm algorithm_from_name(const std::string& name) {
  if (name == "pt") return Algorithm::kPT;
  if (name == "fo-maml") return Algorithm::kFoMaml;
  if (name == "ho-maml") return Algorithm::kHoMaml;
  throw ConfigError("unknown algorithm '" + name + "'; expected pt, fo-maml, or ho-maml");
}

void LearnerConfig::validate() const {
  if (inner_steps < 0) throw ConfigError("learner: inner_steps must be >= 0");
  if (!(inner_lr > 0.0)) throw ConfigError("learner: inner_lr must be > 0");
  if (!(outer_lr > 0.0)) throw ConfigError("learner: outer_lr must be > 0");
  if (n_way < 2) throw ConfigError("learner: n_way must be >= 2");
  if (k_shot < 1) throw ConfigError("learner: k_shot must be >= 1");
  if (q_size < 1) throw ConfigError("learner: q_size must be >= 1");
  if (meta_batch_size < 1) throw ConfigError("learner: meta_batch_size must be >= 1");
  if (total_outer_steps < 0) throw ConfigError("learner: total_outer_steps must be >= 0");
}

std::string LearnerConfig::label() const {
  if (algorithm == Algorithm::kPT) return "pt";
  return algorithm_name(algorithm) + "-" + std::to_string(inner_steps);
}

LearnerModel LearnerModel::create(int64_t input_dim, const std::vector<int64_t>& hidden,
                                  int64_t head_classes, uint64_t seed) {
  if (head_classes < 2) {
    throw ConfigError("learner: head_classes must be >= 2, got " + std::to_string(head_classes));
  }
  LearnerModel m;
  m.backbone_spec = MlpSpec::feature_extractor(input_dim, hidden);
  m.head_classes = head_classes;
  Rng rng(seed);
  m.backbone = init_mlp_arrays(m.backbone_spec, rng);
  const MlpSpec head_spec{{LinearSpec{m.backbone_spec.output_dim(), head_classes,
                                      Activation::kNone}}};
  std::vector<Array> head = init_mlp_arrays(head_spec, rng);
  m.head_weight = std::move(head[0]);
  m.head_bias = std::move(head[1]);
  return m;
}

LearnerModel LearnerModel::from_full(const MlpSpec& backbone_spec, int64_t head_classes,
                                     const ParamVector& full) {
  LearnerModel m;
  m.backbone_spec = backbone_spec;
  m.head_classes = head_classes;
  const size_t backbone_tensors = backbone_spec.tensor_count();
  if (full.layout().size() != backbone_tensors + 2) {
    throw ContractError("learner: parameter vector has " +
                        std::to_string(full.layout().size()) + " tensors; arch expects " +
                        std::to_string(backbone_tensors + 2));
  }
  const std::vector<std::string> names = mlp_param_names(backbone_spec);
  for (size_t i = 0; i < backbone_tensors; ++i) {
    if (full.layout()[i].name != names[i]) {
      throw ContractError("learner: tensor " + std::to_string(i) + " named '" +
                          full.layout()[i].name + "', arch expects '" + names[i] + "'");
    }
    m.backbone.push_back(full.tensor(i));
  }
  if (full.layout()[backbone_tensors].name != "head.weight" ||
      full.layout()[backbone_tensors + 1].name != "head.bias") {
    throw ContractError("learner: parameter vector lacks head.weight/head.bias tensors");
  }
  m.head_weight = full.tensor(backbone_tensors);
  m.head_bias = full.tensor(backbone_tensors + 1);
  const std::vector<int64_t> want_w = {backbone_spec.output_dim(), head_classes};
  if (m.head_weight.shape() != want_w || m.head_bias.shape() != std::vector<int64_t>{head_classes}) {
    throw ShapeError("learner: head tensors shaped " + m.head_weight.shape_str() + "/" +
                     m.head_bias.shape_str() + "; arch expects [" +
                     std::to_string(want_w[0]) + "," + std::to_string(want_w[1]) + "]");
  }
  return m;
}

ParamVector LearnerModel::backbone_params() const {
  const std::vector<std::string> names = mlp_param_names(backbone_spec);
  std::vector<std::pair<std::string, Array>> entries;
  for (size_t i = 0; i < names.size(); ++i) entries.emplace_back(names[i], backbone[i]);
  return ParamVector::from_named(entries);
}

ParamVector LearnerModel::head_params() const {
  return ParamVector::from_named({{"head.weight", head_weight}, {"head.bias", head_bias}});
}

ParamVector LearnerModel::full_params() const {
  const std::vector<std::string> names = mlp_param_names(backbone_spec);
  std::vector<std::pair<std::string, Array>> entries;
  for (size_t i = 0; i < names.size(); ++i) entries.emplace_back(names[i], backbone[i]);
  entries.emplace_back("head.weight", head_weight);
  entries.emplace_back("head.bias", head_bias);
  return ParamVector::from_named(entries);
}

DiffValue learner_logits(const LearnerModel& model, std::span<const DiffValue> full_params,
                         const Array& x) {
  const size_t backbone_tensors = model.backbone_spec.tensor_count();
  if (full_params.size() != backbone_tensors + 2) {
    throw ContractError("learner_logits: expected " + std::to_string(backbone_tensors + 2) +
                        " parameter tensors, got " + std::to_string(full_params.size()));
  }
  const DiffValue features = mlp_forward(model.backbone_spec,
                                         full_params.subspan(0, backbone_tensors),
                                         DiffValue::constant(x));
  return add_rowvec(matmul(features, full_params[backbone_tensors]),
                    full_params[backbone_tensors + 1]);
}

std::vector<DiffValue> adapt_chain(const LossFn& loss_fn, std::vector<DiffValue> params,
                                   int64_t steps, double lr, bool track_higher_order) {
  if (steps < 0) throw ContractError("adapt_chain: steps must be >= 0, got " + std::to_string(steps));
  for (int64_t s = 0; s < steps; ++s) {
    const DiffValue loss = loss_fn(params);
    const double loss_value = loss.value().item();
    if (!std::isfinite(loss_value)) {
      throw NumericError("inner adaptation diverged at step " + std::to_string(s) +
                         " with loss " + std::to_string(loss_value));
    }
    const std::vector<DiffValue> grads =
        grad(loss, params, GradOptions{.create_graph = track_higher_order});
    for (size_t i = 0; i < params.size(); ++i) {
      if (track_higher_order) {
        params[i] = sub(params[i], scale(grads[i], lr));
      } else {
        Array v = params[i].value();
        axpy_inplace(v, -lr, grads[i].value());
        params[i] = DiffValue::leaf(std::move(v));
      }
    }
  }
  return params;
}

namespace {

LossFn support_loss_fn(const LearnerModel& model, const TaskBatch& episode) {
  return [&model, &episode](std::span<const DiffValue> p) {
    return cross_entropy_nats(learner_logits(model, p, episode.support_x), episode.support_y);
  };
}

void check_episode_head(const LearnerModel& model, const TaskBatch& episode) {
  if (episode.n_way != model.head_classes) {
    throw ContractError("episode n_way " + std::to_string(episode.n_way) +
                        " does not match head width " + std::to_string(model.head_classes));
  }
}

double checked_loss_value(const DiffValue& loss, const char* what) {
  const double v = loss.value().item();
  if (!std::isfinite(v)) {
    throw NumericError(std::string(what) + " is non-finite (" + std::to_string(v) + ")");
  }
  return v;
}

}  // namespace

ParamVector inner_adapt(const LearnerModel& model, const TaskBatch& episode, int64_t steps,
                        double inner_lr, bool track_higher_order) {
  check_episode_head(model, episode);
  const ParamVector full = model.full_params();
  const std::vector<DiffValue> adapted = adapt_chain(
      support_loss_fn(model, episode), full.to_leaves(), steps, inner_lr, track_higher_order);
  std::vector<double> values;
  values.reserve(static_cast<size_t>(full.size()));
  for (const DiffValue& p : adapted) {
    const auto& v = p.value().values();
    values.insert(values.end(), v.begin(), v.end());
  }
  return ParamVector(full.layout(), std::move(values));
}

std::vector<double> episode_meta_gradient(const LearnerModel& model, const TaskBatch& episode,
                                          int64_t inner_steps, double inner_lr,
                                          bool higher_order, double* query_loss) {
  check_episode_head(model, episode);
  const ParamVector full = model.full_params();
  const std::vector<DiffValue> leaves = full.to_leaves();
  const std::vector<DiffValue> adapted =
      adapt_chain(support_loss_fn(model, episode), leaves, inner_steps, inner_lr, higher_order);
  const DiffValue loss =
      cross_entropy_nats(learner_logits(model, adapted, episode.query_x), episode.query_y);
  if (query_loss) *query_loss = checked_loss_value(loss, "query loss");

  // First order: gradient at the adapted point, copied back slot-for-slot.
  const std::vector<DiffValue> grads =
      higher_order ? grad(loss, leaves) : grad(loss, adapted);
  std::vector<double> meta(static_cast<size_t>(full.size()), 0.0);
  for (size_t i = 0; i < grads.size(); ++i) {
    const auto& g = grads[i].value().values();
    std::copy(g.begin(), g.end(), meta.begin() + full.layout()[i].offset);
  }
  return meta;
}

StepResult maml_meta_step(const LearnerModel& model, const std::vector<TaskBatch>& episodes,
                          const LearnerConfig& config) {
  config.validate();
  if (config.algorithm == Algorithm::kPT) {
    throw ContractError("maml_meta_step: wrong algorithm 'pt'; expected fo-maml or ho-maml");
  }
  if (episodes.empty()) throw ContractError("maml_meta_step: episodes must be non-empty");

  const ParamVector full = model.full_params();
  std::vector<double> meta(static_cast<size_t>(full.size()), 0.0);
  double loss_sum = 0.0;
  for (const TaskBatch& episode : episodes) {
    double query_loss = 0.0;
    const std::vector<double> g =
        episode_meta_gradient(model, episode, config.inner_steps, config.inner_lr,
                              config.algorithm == Algorithm::kHoMaml, &query_loss);
    for (size_t k = 0; k < meta.size(); ++k) meta[k] += g[k];
    loss_sum += query_loss;
  }
  const double inv = 1.0 / static_cast<double>(episodes.size());
  std::vector<double> values = full.values();
  for (size_t k = 0; k < values.size(); ++k) values[k] -= config.outer_lr * meta[k] * inv;
  return {LearnerModel::from_full(model.backbone_spec, model.head_classes,
                                  ParamVector(full.layout(), std::move(values))),
          loss_sum * inv};
}

StepResult pretrain_step(const LearnerModel& model, const TaskBatch& batch, double lr) {
  if (lr < 0.0) throw ContractError("pretrain_step: lr must be >= 0");
  const auto [x, y] = batch.all_rows();
  const ParamVector full = model.full_params();
  const std::vector<DiffValue> leaves = full.to_leaves();
  const DiffValue loss = cross_entropy_nats(learner_logits(model, leaves, x), y);
  const double loss_value = checked_loss_value(loss, "pretrain loss");
  const std::vector<DiffValue> grads = grad(loss, leaves);
  std::vector<double> values = full.values();
  for (size_t i = 0; i < grads.size(); ++i) {
    const auto& g = grads[i].value().values();
    const int64_t off = full.layout()[i].offset;
    for (size_t k = 0; k < g.size(); ++k) values[off + static_cast<int64_t>(k)] -= lr * g[k];
  }
  return {LearnerModel::from_full(model.backbone_spec, model.head_classes,
                                  ParamVector(full.layout(), std::move(values))),
          loss_value};
}

namespace {

double argmax_accuracy(const Array& logits, const std::vector<int>& labels) {
  const int64_t n = logits.rows(), c = logits.cols();
  int64_t hits = 0;
  for (int64_t i = 0; i < n; ++i) {
    int64_t best = 0;
    for (int64_t j = 1; j < c; ++j) {
      if (logits.data()[i * c + j] > logits.data()[i * c + best]) best = j;
    }
    if (best == labels[static_cast<size_t>(i)]) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(n);
}

// PT scoring: frozen backbone features, freshly initialized head adapted on
// the support set only.
std::pair<double, double> score_episode_pt(const LearnerModel& model, const TaskBatch& batch,
                                           const LearnerConfig& config, uint64_t head_seed) {
  Array support_feats, query_feats;
  {
    GradModeGuard guard(false);
    const std::vector<DiffValue> leaves = arrays_to_leaves(model.backbone);
    support_feats = mlp_forward(model.backbone_spec, leaves,
                                DiffValue::constant(batch.support_x)).value();
    query_feats = mlp_forward(model.backbone_spec, leaves,
                              DiffValue::constant(batch.query_x)).value();
  }
  const MlpSpec head_spec{{LinearSpec{model.feature_dim(), batch.n_way, Activation::kNone}}};
  Rng rng(head_seed);
  std::vector<DiffValue> head = arrays_to_leaves(init_mlp_arrays(head_spec, rng));
  const DiffValue sf = DiffValue::constant(support_feats);
  const LossFn head_loss = [&](std::span<const DiffValue> p) {
    return cross_entropy_nats(add_rowvec(matmul(sf, p[0]), p[1]), batch.support_y);
  };
  head = adapt_chain(head_loss, std::move(head), config.inner_steps, config.inner_lr, false);

  GradModeGuard guard(false);
  const DiffValue logits =
      add_rowvec(matmul(DiffValue::constant(query_feats), head[0]), head[1]);
  const double ce = cross_entropy_nats(logits, batch.query_y).value().item();
  return {argmax_accuracy(logits.value(), batch.query_y), ce};
}

std::pair<double, double> score_episode_maml(const LearnerModel& model, const TaskBatch& batch,
                                             const LearnerConfig& config) {
  const ParamVector adapted =
      inner_adapt(model, batch, config.inner_steps, config.inner_lr, false);
  GradModeGuard guard(false);
  const std::vector<DiffValue> leaves = adapted.to_leaves();
  const DiffValue logits = learner_logits(model, leaves, batch.query_x);
  const double ce = cross_entropy_nats(logits, batch.query_y).value().item();
  return {argmax_accuracy(logits.value(), batch.query_y), ce};
}

}  // namespace

EvalResult evaluate(const LearnerModel& model, const DatasetHandle& dataset,
                    const LearnerConfig& config, int64_t num_episodes, uint64_t seed) {
  config.validate();
  if (num_episodes < 1) {
    throw ContractError("evaluate: num_episodes must be >= 1, got " +
                        std::to_string(num_episodes));
  }
  std::vector<double> accs;
  accs.reserve(static_cast<size_t>(num_episodes));
  double ce_sum = 0.0;
  for (int64_t e = 0; e < num_episodes; ++e) {
    const uint64_t episode_seed = derive_seed(seed, "eval:" + std::to_string(e));
    const TaskBatch batch =
        dataset.sample_batch(config.n_way, config.k_shot, config.q_size, episode_seed);
    const auto [acc, ce] =
        config.algorithm == Algorithm::kPT
            ? score_episode_pt(model, batch, config, derive_seed(episode_seed, "eval-head"))
            : score_episode_maml(model, batch, config);
    accs.push_back(acc);
    ce_sum += ce;
  }
  EvalResult r;
  r.num_episodes = num_episodes;
  r.ce_loss = ce_sum / static_cast<double>(num_episodes);
  if (num_episodes == 1) {
    r.accuracy = accs.front();
    r.ci_acc = 0.0;
  } else {
    const MeanCi ci = confidence_interval(accs);
    r.accuracy = ci.mean;
    r.ci_acc = ci.half_width;
  }
  return r;
}

LearnerModel run_training(LearnerModel model, const DatasetHandle& train_view,
                          const LearnerConfig& config, int64_t start_step, int64_t end_step,
                          std::vector<std::pair<int64_t, double>>* metrics) {
  config.validate();
  if (start_step < 0 || end_step < start_step) {
    throw ContractError("run_training: bad step range [" + std::to_string(start_step) + ", " +
                        std::to_string(end_step) + ")");
  }
  for (int64_t step = start_step; step < end_step; ++step) {
    StepResult r{};
    if (config.algorithm == Algorithm::kPT) {
      // Same sample budget per outer step as one meta-batch of episodes.
      const int64_t rows = config.meta_batch_size * config.n_way * (config.k_shot + config.q_size);
      const TaskBatch batch = train_view.sample_uniform_batch(
          rows, derive_seed(config.seed, "pt-batch:" + std::to_string(step)));
      r = pretrain_step(model, batch, config.outer_lr);
    } else {
      std::vector<TaskBatch> episodes;
      episodes.reserve(static_cast<size_t>(config.meta_batch_size));
      for (int64_t i = 0; i < config.meta_batch_size; ++i) {
        episodes.push_back(train_view.sample_batch(
            config.n_way, config.k_shot, config.q_size,
            derive_seed(config.seed,
                        "episode:" + std::to_string(step) + ":" + std::to_string(i))));
      }
      r = maml_meta_step(model, episodes, config);
    }
    model = std::move(r.model);
    if (metrics) metrics->emplace_back(step, r.loss);
  }
  return model;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& base) {
  const ParamVector full = ckpt.model.full_params();
  full.save_file(base.string() + ".dvpv");

  std::vector<int64_t> hidden;
  for (const LinearSpec& l : ckpt.model.backbone_spec.layers) hidden.push_back(l.out);
  nlohmann::json meta;
  meta["algorithm"] = algorithm_name(ckpt.config.algorithm);
  meta["inner_steps"] = ckpt.config.inner_steps;
  meta["inner_lr"] = ckpt.config.inner_lr;
  meta["outer_lr"] = ckpt.config.outer_lr;
  meta["n_way"] = ckpt.config.n_way;
  meta["k_shot"] = ckpt.config.k_shot;
  meta["q_size"] = ckpt.config.q_size;
  meta["meta_batch_size"] = ckpt.config.meta_batch_size;
  meta["total_outer_steps"] = ckpt.config.total_outer_steps;
  meta["seed"] = ckpt.config.seed;
  meta["outer_step"] = ckpt.outer_step;
  meta["dataset_id"] = ckpt.dataset_id;
  meta["arch"] = {{"input_dim", ckpt.model.input_dim()},
                  {"hidden", hidden},
                  {"head_classes", ckpt.model.head_classes}};
  nlohmann::json metrics = nlohmann::json::array();
  for (const auto& [step, loss] : ckpt.metrics) metrics.push_back({step, loss});
  meta["metrics"] = std::move(metrics);
  meta["param_hash"] = full.content_hash_hex();

  std::ofstream out(base.string() + ".json", std::ios::trunc);
  if (!out) throw MissingInputError("checkpoint: cannot write '" + base.string() + ".json'");
  out << meta.dump(2) << "\n";
}

Checkpoint load_checkpoint(const std::filesystem::path& base) {
  std::ifstream in(base.string() + ".json");
  if (!in) throw MissingInputError("checkpoint: missing '" + base.string() + ".json'");
  nlohmann::json meta;
  try {
    in >> meta;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("checkpoint: unreadable metadata in '" + base.string() +
                      ".json': " + e.what());
  }
  Checkpoint ckpt;
  try {
    ckpt.config.algorithm = algorithm_from_name(meta.at("algorithm").get<std::string>());
    ckpt.config.inner_steps = meta.at("inner_steps").get<int64_t>();
    ckpt.config.inner_lr = meta.at("inner_lr").get<double>();
    ckpt.config.outer_lr = meta.at("outer_lr").get<double>();
    ckpt.config.n_way = meta.at("n_way").get<int64_t>();
    ckpt.config.k_shot = meta.at("k_shot").get<int64_t>();
    ckpt.config.q_size = meta.at("q_size").get<int64_t>();
    ckpt.config.meta_batch_size = meta.at("meta_batch_size").get<int64_t>();
    ckpt.config.total_outer_steps = meta.at("total_outer_steps").get<int64_t>();
    ckpt.config.seed = meta.at("seed").get<uint64_t>();
    ckpt.outer_step = meta.at("outer_step").get<int64_t>();
    ckpt.dataset_id = meta.at("dataset_id").get<std::string>();
    for (const auto& entry : meta.at("metrics")) {
      ckpt.metrics.emplace_back(entry.at(0).get<int64_t>(), entry.at(1).get<double>());
    }
    const auto& arch = meta.at("arch");
    const ParamVector full = ParamVector::load_file(base.string() + ".dvpv");
    if (full.content_hash_hex() != meta.at("param_hash").get<std::string>()) {
      throw FormatError("checkpoint: parameter hash mismatch for '" + base.string() +
                        ".dvpv'; file does not match metadata");
    }
    ckpt.model = LearnerModel::from_full(
        MlpSpec::feature_extractor(arch.at("input_dim").get<int64_t>(),
                                   arch.at("hidden").get<std::vector<int64_t>>()),
        arch.at("head_classes").get<int64_t>(), full);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("checkpoint: bad metadata in '" + base.string() + ".json': " + e.what());
  }
  return ckpt;
}

}  // namespace divlab
