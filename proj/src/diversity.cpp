#include "divlab/diversity.hpp"

#include <algorithm>
#include <cmath>
#include <utility>

#include "divlab/analysis.hpp"
#include "divlab/errors.hpp"
#include "divlab/rng.hpp"

namespace divlab {

double cosine_distance(const Task2VecEmbedding& a, const Task2VecEmbedding& b) {
  if (a.probe_id != b.probe_id) {
    throw ContractError("cosine_distance: mixing embeddings from probes '" + a.probe_id +
                        "' and '" + b.probe_id + "'");
  }
  if (a.fim_diag.size() != b.fim_diag.size()) {
    throw ShapeError("cosine_distance: embedding lengths " + std::to_string(a.fim_diag.size()) +
                     " vs " + std::to_string(b.fim_diag.size()));
  }
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (size_t i = 0; i < a.fim_diag.size(); ++i) {
    dot += a.fim_diag[i] * b.fim_diag[i];
    na += a.fim_diag[i] * a.fim_diag[i];
    nb += b.fim_diag[i] * b.fim_diag[i];
  }
  if (na == 0.0 || nb == 0.0) {
    throw NumericError("cosine_distance: degenerate zero-norm embedding for batch '" +
                       (na == 0.0 ? a.batch_id : b.batch_id) + "'");
  }
  const double d = 1.0 - dot / (std::sqrt(na) * std::sqrt(nb));
  return std::clamp(d, 0.0, 1.0);
}

Array pairwise_distance_matrix(const std::vector<Task2VecEmbedding>& embeddings) {
  const int64_t n = static_cast<int64_t>(embeddings.size());
  if (n < 2) {
    throw ContractError("pairwise_distance_matrix: need at least 2 embeddings, got " +
                        std::to_string(n));
  }
  Array m({n, n});
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t j = i + 1; j < n; ++j) {
      const double d = cosine_distance(embeddings[i], embeddings[j]);
      m.data()[i * n + j] = d;
      m.data()[j * n + i] = d;
    }
  }
  return m;
}

DiversityEstimate diversity_from_embeddings(const std::vector<Task2VecEmbedding>& embeddings,
                                            Pairing pairing, int64_t sampled_pairs,
                                            uint64_t seed) {
  const int64_t n = static_cast<int64_t>(embeddings.size());
  if (n < 2) {
    throw ContractError("diversity: need at least 2 batches, got " + std::to_string(n));
  }
  std::vector<std::pair<int64_t, int64_t>> pairs;
  pairs.reserve(static_cast<size_t>(n) * (n - 1) / 2);
  for (int64_t i = 0; i < n; ++i) {
    for (int64_t j = i + 1; j < n; ++j) pairs.emplace_back(i, j);
  }
  if (pairing == Pairing::kSampled) {
    if (sampled_pairs < 1) {
      throw ContractError("diversity: sampled pairing needs sampled_pairs >= 1, got " +
                          std::to_string(sampled_pairs));
    }
    if (sampled_pairs < static_cast<int64_t>(pairs.size())) {
      Rng rng(derive_seed(seed, "pair-subset"));
      rng.shuffle(pairs);
      pairs.resize(static_cast<size_t>(sampled_pairs));
      std::sort(pairs.begin(), pairs.end());
    }
  }

  std::vector<double> distances;
  distances.reserve(pairs.size());
  for (const auto& [i, j] : pairs) {
    distances.push_back(cosine_distance(embeddings[static_cast<size_t>(i)],
                                        embeddings[static_cast<size_t>(j)]));
  }

  DiversityEstimate est;
  est.num_batches = n;
  est.num_pairs = static_cast<int64_t>(distances.size());
  est.probe_id = embeddings.front().probe_id;
  est.label_mode = embeddings.front().label_mode;
  est.seed = seed;
  if (distances.size() == 1) {
    est.mean = distances.front();
    est.ci_half_width = 0.0;
  } else {
    const MeanCi ci = confidence_interval(distances);
    est.mean = ci.mean;
    est.ci_half_width = ci.half_width;
  }
  return est;
}

DiversityEstimate diversity_coefficient(const DatasetHandle& dataset, const ProbeNetwork& probe,
                                        const DiversityConfig& config, uint64_t seed) {
  if (config.num_batches < 2) {
    throw ContractError("diversity: need at least 2 batches, got " +
                        std::to_string(config.num_batches));
  }
  std::vector<Task2VecEmbedding> embeddings;
  embeddings.reserve(static_cast<size_t>(config.num_batches));
  for (int64_t b = 0; b < config.num_batches; ++b) {
    const uint64_t batch_seed = derive_seed(seed, "div-batch:" + std::to_string(b));
    const TaskBatch batch =
        config.uniform_batches
            ? dataset.sample_uniform_batch(config.n_way * (config.k_shot + config.q_size),
                                           batch_seed)
            : dataset.sample_batch(config.n_way, config.k_shot, config.q_size, batch_seed);
    const ParamVector head = finetune_head(probe, batch, config.head_steps, config.head_lr);
    embeddings.push_back(fim_diagonal(probe, head, batch, config.label_mode, config.mc_draws,
                                      derive_seed(seed, "div-fim:" + std::to_string(b))));
  }
  DiversityEstimate est = diversity_from_embeddings(embeddings, config.pairing,
                                                    config.sampled_pairs, seed);
  est.dataset_id = dataset.dataset_id();
  est.label_mode = config.label_mode;
  return est;
}

}  // namespace divlab
