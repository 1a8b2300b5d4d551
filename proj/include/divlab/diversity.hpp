#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "divlab/array.hpp"
#include "divlab/probe.hpp"
#include "divlab/tasks.hpp"

namespace divlab {

// 1 - cos(a, b), clamped to [0,1]. Both embeddings must come from the same
// probe; a zero-norm embedding is reported as numeric degeneracy.
double cosine_distance(const Task2VecEmbedding& a, const Task2VecEmbedding& b);

// Symmetric [n,n] matrix of pairwise cosine distances, zero diagonal.
Array pairwise_distance_matrix(const std::vector<Task2VecEmbedding>& embeddings);

enum class Pairing { kExhaustive, kSampled };

struct DiversityEstimate {
  double mean = 0.0;
  double ci_half_width = 0.0;  // 1.96 * sample std of distances / sqrt(num_pairs)
  int64_t num_batches = 0;
  int64_t num_pairs = 0;
  std::string probe_id;
  std::string dataset_id;
  LabelMode label_mode = LabelMode::kSampled;
  uint64_t seed = 0;
};

// Mean pairwise distance over distinct batch pairs (i < j); kSampled draws
// `sampled_pairs` distinct pairs with the given seed, falling back to the
// exhaustive set when it already fits the budget.
DiversityEstimate diversity_from_embeddings(const std::vector<Task2VecEmbedding>& embeddings,
                                            Pairing pairing, int64_t sampled_pairs,
                                            uint64_t seed);

struct DiversityConfig {
  int64_t num_batches = 25;
  Pairing pairing = Pairing::kExhaustive;
  int64_t sampled_pairs = 0;
  LabelMode label_mode = LabelMode::kSampled;
  int64_t mc_draws = 8;
  int64_t head_steps = 100;
  double head_lr = 0.1;
  bool uniform_batches = false;  // few-shot episodes by default
  int64_t n_way = 5;
  int64_t k_shot = 5;
  int64_t q_size = 15;
};

// Samples num_batches task batches, embeds each once through the frozen
// probe, and aggregates pairwise distances.
DiversityEstimate diversity_coefficient(const DatasetHandle& dataset, const ProbeNetwork& probe,
                                        const DiversityConfig& config, uint64_t seed);

}  // namespace divlab
