#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "divlab/array.hpp"
#include "divlab/diffvalue.hpp"
#include "divlab/mlp.hpp"
#include "divlab/param_vector.hpp"
#include "divlab/tasks.hpp"

namespace divlab {

enum class Algorithm { kPT, kFoMaml, kHoMaml };

std::string algorithm_name(Algorithm a);  // "pt" / "fo-maml" / "ho-maml"
Algorithm algorithm_from_name(const std::string& name);

struct LearnerConfig {
  Algorithm algorithm = Algorithm::kHoMaml;
  int64_t inner_steps = 5;   // ignored by PT training; reused as its eval head budget
  double inner_lr = 1e-1;
  double outer_lr = 1e-3;
  int64_t n_way = 5;
  int64_t k_shot = 5;
  int64_t q_size = 15;
  int64_t meta_batch_size = 4;
  int64_t total_outer_steps = 200;
  uint64_t seed = 0;

  void validate() const;      // throws ConfigError
  std::string label() const;  // "pt", "fo-maml-5", "ho-maml-10", ...
};

// Relu-MLP backbone plus linear head; the two ParamVectors partition the
// trainable parameters exactly. MAML models carry an n_way head, PT models a
// head over the full train-split class space.
struct LearnerModel {
  MlpSpec backbone_spec;
  int64_t head_classes = 0;
  std::vector<Array> backbone;  // [W0, b0, W1, b1, ...]
  Array head_weight;            // [feature_dim, head_classes]
  Array head_bias;              // [head_classes]

  static LearnerModel create(int64_t input_dim, const std::vector<int64_t>& hidden,
                             int64_t head_classes, uint64_t seed);
  static LearnerModel from_full(const MlpSpec& backbone_spec, int64_t head_classes,
                                const ParamVector& full);

  ParamVector backbone_params() const;
  ParamVector head_params() const;
  ParamVector full_params() const;  // backbone tensors then head weight/bias
  int64_t input_dim() const { return backbone_spec.input_dim(); }
  int64_t feature_dim() const { return backbone_spec.output_dim(); }
};

// logits [n, head_classes] under the given full-parameter values
// (same tensor order as full_params()).
DiffValue learner_logits(const LearnerModel& model, std::span<const DiffValue> full_params,
                         const Array& x);

using LossFn = std::function<DiffValue(std::span<const DiffValue>)>;

// `steps` full-batch gradient-descent updates on loss_fn. With
// track_higher_order the returned values remain differentiable w.r.t. the
// starting parameters; otherwise each step re-leafs at the updated values.
std::vector<DiffValue> adapt_chain(const LossFn& loss_fn, std::vector<DiffValue> params,
                                   int64_t steps, double lr, bool track_higher_order);

// Episode adaptation on the support set; returns the adapted parameter values
// over the model's full layout.
ParamVector inner_adapt(const LearnerModel& model, const TaskBatch& episode, int64_t steps,
                        double inner_lr, bool track_higher_order);

// d(query loss)/d(initial params) for one episode. First order evaluates the
// query gradient at the adapted point and copies it back; higher order
// differentiates through the adaptation chain.
std::vector<double> episode_meta_gradient(const LearnerModel& model, const TaskBatch& episode,
                                          int64_t inner_steps, double inner_lr,
                                          bool higher_order, double* query_loss = nullptr);

struct StepResult {
  LearnerModel model;
  double loss = 0.0;  // mean query loss (meta step) / batch loss (pretrain step)
};

// One outer update: meta-gradient = mean of per-episode meta-gradients in
// list order, applied with outer_lr.
StepResult maml_meta_step(const LearnerModel& model, const std::vector<TaskBatch>& episodes,
                          const LearnerConfig& config);

// One cross-entropy gradient step on backbone+head over all batch rows.
StepResult pretrain_step(const LearnerModel& model, const TaskBatch& batch, double lr);

struct EvalResult {
  double accuracy = 0.0;
  double ce_loss = 0.0;  // nats
  double ci_acc = 0.0;   // 95% over episode accuracies
  int64_t num_episodes = 0;
};

// Episodic scoring: PT adapts a fresh head over frozen features with
// (inner_steps, inner_lr); MAML runs inner_adapt on all parameters.
EvalResult evaluate(const LearnerModel& model, const DatasetHandle& dataset,
                    const LearnerConfig& config, int64_t num_episodes, uint64_t seed);

// Outer steps [start_step, end_step). Batch draws are keyed by
// (config.seed, step index), so training can stop and resume at any step
// boundary with a bit-identical parameter stream. Appends (step, loss).
LearnerModel run_training(LearnerModel model, const DatasetHandle& train_view,
                          const LearnerConfig& config, int64_t start_step, int64_t end_step,
                          std::vector<std::pair<int64_t, double>>* metrics = nullptr);

struct Checkpoint {
  LearnerModel model;
  LearnerConfig config;
  int64_t outer_step = 0;
  std::string dataset_id;
  std::vector<std::pair<int64_t, double>> metrics;  // (step, train loss)
};

// Writes <base>.dvpv (full parameters) and <base>.json (config, step,
// dataset id, metrics, parameter hash).
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& base);
Checkpoint load_checkpoint(const std::filesystem::path& base);

}  // namespace divlab
