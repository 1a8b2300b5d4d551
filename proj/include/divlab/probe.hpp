#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "divlab/mlp.hpp"
#include "divlab/param_vector.hpp"
#include "divlab/tasks.hpp"

namespace divlab {

struct ProbeTrainConfig {
  std::vector<int64_t> hidden = {64, 64};
  int64_t batch_size = 128;
  double lr = 0.5;
  int64_t max_epochs = 200;
  double target_accuracy = 0.9;
  uint64_t seed = 0;
};

// Fixed feature extractor defining the Task2Vec embedding space. Feature
// weights are immutable after construction; every embedding call fine-tunes
// a private per-batch head, so probes are shareable across threads.
class ProbeNetwork {
 public:
  ProbeNetwork(MlpSpec feature_spec, std::vector<Array> feature_arrays, uint64_t meta_seed,
               double train_accuracy);

  const MlpSpec& feature_spec() const { return spec_; }
  const std::vector<Array>& feature_arrays() const { return arrays_; }
  ParamVector feature_params() const;
  const std::string& probe_id() const { return probe_id_; }
  int64_t input_dim() const { return spec_.input_dim(); }
  int64_t feature_out_dim() const { return spec_.output_dim(); }
  uint64_t meta_seed() const { return meta_seed_; }
  double train_accuracy() const { return train_accuracy_; }

  // Writes <base>.dvpv (feature weights) and <base>.json (arch + provenance).
  void save(const std::filesystem::path& base) const;
  static ProbeNetwork load(const std::filesystem::path& base);

 private:
  MlpSpec spec_;
  std::vector<Array> arrays_;
  uint64_t meta_seed_ = 0;
  double train_accuracy_ = 0.0;
  std::string probe_id_;
};

// Trains feature extractor + throwaway global head on the held-out meta
// dataset until target accuracy, then freezes the features.
ProbeNetwork pretrain_probe(const DatasetHandle& meta_dataset, const ProbeTrainConfig& config);

// Head fine-tune preceding FIM computation: full-batch gradient steps on a
// freshly initialized n_way head over the frozen features of all batch rows.
// Head init is derived from (probe_id, batch_id), so embeddings are
// reproducible without carrying extra state.
ParamVector finetune_head(const ProbeNetwork& probe, const TaskBatch& batch, int64_t steps,
                          double lr);

enum class LabelMode { kSampled, kEmpirical };
std::string label_mode_name(LabelMode m);
LabelMode label_mode_from_name(const std::string& name);

struct Task2VecEmbedding {
  std::vector<double> fim_diag;  // feature-parameter layout order, entries >= 0
  std::string probe_id;
  std::string batch_id;
  LabelMode label_mode = LabelMode::kSampled;
};

// Diagonal FIM over feature parameters only: entry j is the mean over batch
// samples (and label draws in sampled mode) of (d log p(y|x) / d theta_j)^2.
Task2VecEmbedding fim_diagonal(const ProbeNetwork& probe, const ParamVector& head,
                               const TaskBatch& batch, LabelMode label_mode, int64_t mc_draws,
                               uint64_t seed);

}  // namespace divlab
