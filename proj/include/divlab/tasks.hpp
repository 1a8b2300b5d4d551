#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "divlab/array.hpp"
#include "divlab/rng.hpp"

namespace divlab {

// Declarative synthetic dataset: class prototypes drawn with sd proto_spread
// (the ground-truth diversity knob), samples = prototype + within-class noise.
// A non-empty `generators` list makes this a union dataset whose sub-specs
// occupy consecutive disjoint class-id ranges; center_norm offsets a
// generator's mean so union components stay separated after standardization.
struct SyntheticSpec {
  std::string id;
  int64_t class_count = 0;
  int64_t feature_dim = 0;
  int64_t samples_per_class = 0;
  double proto_spread = 0.0;
  double within_class_noise = 1.0;
  double center_norm = 0.0;
  uint64_t seed = 0;
  std::vector<SyntheticSpec> generators;

  bool is_union() const { return !generators.empty(); }
  void validate() const;  // throws ConfigError
};

// Immutable sample store. Values are standardized per dimension and held as
// the same 32-bit floats the DVDS format carries, so save -> load round trips
// bitwise.
struct Dataset {
  std::string dataset_id;
  int64_t class_count = 0;
  int64_t samples_per_class = 0;
  int64_t feature_dim = 0;
  std::vector<float> data;  // grouped by class, row-major

  const float* row(int64_t cls, int64_t sample) const {
    return data.data() + (cls * samples_per_class + sample) * feature_dim;
  }
};

enum class Split { kAll, kTrain, kVal, kTest };
std::string split_name(Split s);

// One few-shot episode. Labels are episode-local (0..n_way-1); support and
// query are sample-disjoint. Uniform batches (diversity/pretraining) carry
// all rows in support with stable view-class labels and q_size = 0.
struct TaskBatch {
  Array support_x;
  std::vector<int> support_y;
  Array query_x;
  std::vector<int> query_y;
  int64_t n_way = 0;
  int64_t k_shot = 0;
  int64_t q_size = 0;
  std::string batch_id;
  std::vector<int> episode_classes;  // episode label -> view class index

  std::pair<Array, std::vector<int>> all_rows() const;
};

// Immutable view over a Dataset: a split's class subset plus (optionally) a
// per-class sample subset. Sampling is pure given a seed, so handles may be
// shared freely across threads.
class DatasetHandle {
 public:
  DatasetHandle() = default;

  static DatasetHandle over(std::shared_ptr<const Dataset> ds);

  const std::string& dataset_id() const { return ds_->dataset_id; }
  int64_t class_count() const { return static_cast<int64_t>(classes_.size()); }
  int64_t feature_dim() const { return ds_->feature_dim; }
  int64_t samples_per_class() const;
  Split split() const { return split_; }
  const Dataset& dataset() const { return *ds_; }

  // Class-level partition (0.6/0.2/0.2) under a shuffle seeded by the
  // dataset id, so train/val/test class pools are disjoint and stable.
  DatasetHandle split_view(Split s) const;

  // Keeps round(fraction * samples_per_class) samples of every class.
  DatasetHandle subsample_per_class(double fraction, uint64_t seed) const;

  TaskBatch sample_batch(int64_t n_way, int64_t k_shot, int64_t q_size, uint64_t seed) const;

  // Rows drawn uniformly with replacement; labels are view-class indices.
  TaskBatch sample_uniform_batch(int64_t rows, uint64_t seed) const;

  // Every row of the view in class order; labels are view-class indices.
  std::pair<Array, std::vector<int>> all_samples() const;

 private:
  std::shared_ptr<const Dataset> ds_;
  Split split_ = Split::kAll;
  std::vector<int> classes_;               // view class -> dataset class
  std::vector<std::vector<int>> samples_;  // per view class: dataset sample ids
};

DatasetHandle generate_synthetic(const SyntheticSpec& spec);

// DVDS container (bit-exact): magic "DVDS", version u32 = 1, class_count u32,
// samples_per_class u32, feature_dim u32, then class-grouped row-major
// little-endian 32-bit floats.
void save_dvds(const Dataset& ds, const std::filesystem::path& path);
std::shared_ptr<const Dataset> load_dvds(const std::filesystem::path& path,
                                         std::string dataset_id);
DatasetHandle load_dataset(const std::filesystem::path& path);

}  // namespace divlab
