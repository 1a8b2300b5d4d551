#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "divlab/diversity.hpp"
#include "divlab/learners.hpp"
#include "divlab/probe.hpp"
#include "divlab/tasks.hpp"

namespace divlab {

struct DiversitySettings {
  int64_t num_batches = 25;
  Pairing pairing = Pairing::kExhaustive;
  int64_t sampled_pairs = 150;
  LabelMode label_mode = LabelMode::kSampled;
  int64_t mc_draws = 8;
  int64_t head_steps = 100;
  double head_lr = 0.1;
  int64_t n_way = 5;
  int64_t k_shot = 5;
  int64_t q_size = 15;
};

struct TrainSettings {
  std::vector<int64_t> hidden = {8};  // one deliberately narrow backbone across the whole grid
  int64_t checkpoint_interval = 50;
};

struct EvalSettings {
  int64_t num_episodes = 300;
};

// Declarative description of one full experiment. Every random stream is
// derived from master_seed with a stable stage label, so any stage can be
// re-run in isolation and reproduce its slice of the pipeline.
struct ExperimentConfig {
  std::filesystem::path output_dir = "out";
  std::filesystem::path data_dir;  // empty -> <output_dir>/data
  uint64_t master_seed = 1;
  int64_t workers = 1;
  bool uncontrolled = false;  // outer steps scale with train-split size

  std::vector<SyntheticSpec> datasets;  // grid; seeds resolved from master_seed
  SyntheticSpec probe_dataset;          // held out from the grid
  ProbeTrainConfig probe;
  DiversitySettings diversity;
  std::vector<LearnerConfig> learners;
  TrainSettings train;
  EvalSettings eval;

  static ExperimentConfig defaults();
  static ExperimentConfig from_json_text(const std::string& text);
  static ExperimentConfig load(const std::filesystem::path& path);
  std::string to_json_text() const;

  // Hash of everything that affects numbers (seeds, specs, grid, settings);
  // excludes output locations and worker count.
  std::string config_hash() const;
  void validate() const;

  std::filesystem::path resolved_data_dir() const;
  std::vector<SyntheticSpec> resolved_datasets() const;
  SyntheticSpec resolved_probe_dataset() const;
  int64_t steps_for(const LearnerConfig& learner, const SyntheticSpec& dataset) const;
};

// Canonical artifact locations under one output root.
struct OutputPaths {
  std::filesystem::path root;
  std::filesystem::path data_dir;
  std::filesystem::path manifest;
  std::filesystem::path probe_dir;
  std::filesystem::path probe_base;   // probe_dir/probe -> .dvpv/.json
  std::filesystem::path probe_stage;  // probe_dir/stage.json
  std::filesystem::path checkpoints_dir;
  std::filesystem::path diversity_csv;
  std::filesystem::path eval_csv;
  std::filesystem::path report_points_csv;
  std::filesystem::path report_summary_csv;
  std::filesystem::path report_json;

  static OutputPaths from(const ExperimentConfig& config);
  std::filesystem::path dataset_file(const std::string& id) const;
  std::filesystem::path cell_dir(const std::string& label, const std::string& dataset_id) const;
  std::filesystem::path cell_provenance(const std::string& label,
                                        const std::string& dataset_id) const;
  std::filesystem::path final_checkpoint(const std::string& label,
                                         const std::string& dataset_id) const;
  std::filesystem::path step_checkpoint(const std::string& label, const std::string& dataset_id,
                                        int64_t step) const;
};

// Stage commands. Each validates its inputs, skips work whose outputs are
// already current for this config hash, and refuses to overwrite outputs from
// a different config unless force is set.
void cmd_gen_data(const ExperimentConfig& config, bool force);
void cmd_pretrain_probe(const ExperimentConfig& config, bool force);
void cmd_diversity(const ExperimentConfig& config, bool force);
void cmd_train(const ExperimentConfig& config, bool force);
void cmd_evaluate(const ExperimentConfig& config, bool force);
void cmd_correlate(const ExperimentConfig& config, bool force);
void cmd_run_all(const ExperimentConfig& config, bool force);

// Ordered index pool: tasks run in parallel but any shared aggregation must
// happen after the join, in index order. The lowest-index failure wins.
void parallel_for(int64_t count, int64_t workers, const std::function<void(int64_t)>& fn);

std::string format_csv_double(double v);  // shortest round-trip decimal

}  // namespace divlab
