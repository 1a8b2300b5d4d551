#include "divlab/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "divlab/analysis.hpp"
#include "divlab/errors.hpp"
#include "divlab/rng.hpp"

namespace divlab {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

std::string hex16(uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

std::string read_text_file(const fs::path& path, const char* what) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw MissingInputError(std::string(what) + ": cannot open '" + path.string() + "'");
  }
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_text_file(const fs::path& path, const std::string& content, const char* what) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw MissingInputError(std::string(what) + ": cannot write '" + path.string() + "'");
  }
  out << content;
}

std::string file_hash_hex(const fs::path& path) {
  return hex16(fnv1a64(read_text_file(path, "hash")));
}

void check_keys(const json& j, const std::vector<std::string>& allowed,
                const std::string& context) {
  if (!j.is_object()) throw ConfigError("config: " + context + " must be an object");
  for (const auto& [key, value] : j.items()) {
    (void)value;
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end()) {
      throw ConfigError("config: unknown key '" + key + "' in " + context);
    }
  }
}

template <typename T>
T get_or(const json& j, const std::string& key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError("config: bad value for '" + key + "': " + e.what());
  }
}

template <typename T>
T get_required(const json& j, const std::string& key, const std::string& context) {
  if (!j.contains(key)) {
    throw ConfigError("config: missing key '" + key + "' in " + context);
  }
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError("config: bad value for '" + key + "' in " + context + ": " + e.what());
  }
}

std::string pairing_name(Pairing p) {
  return p == Pairing::kExhaustive ? "exhaustive" : "sampled";
}

Pairing pairing_from_name(const std::string& name) {
  if (name == "exhaustive") return Pairing::kExhaustive;
  if (name == "sampled") return Pairing::kSampled;
  throw ConfigError("config: unknown pairing '" + name + "'; expected exhaustive or sampled");
}

SyntheticSpec spec_from_json(const json& j, const std::string& context) {
  SyntheticSpec s;
  if (j.contains("generators")) {
    check_keys(j, {"id", "class_count", "feature_dim", "samples_per_class", "generators"},
               context);
    s.id = get_required<std::string>(j, "id", context);
    s.feature_dim = get_required<int64_t>(j, "feature_dim", context);
    s.samples_per_class = get_required<int64_t>(j, "samples_per_class", context);
    s.class_count = get_or<int64_t>(j, "class_count", 0);
    int64_t k = 0;
    for (const json& gj : j.at("generators")) {
      const std::string gctx = context + ".generators[" + std::to_string(k) + "]";
      check_keys(gj, {"class_count", "proto_spread", "within_class_noise", "center_norm"}, gctx);
      SyntheticSpec g;
      g.id = s.id + "#" + std::to_string(k);
      g.feature_dim = s.feature_dim;
      g.samples_per_class = s.samples_per_class;
      g.class_count = get_required<int64_t>(gj, "class_count", gctx);
      g.proto_spread = get_required<double>(gj, "proto_spread", gctx);
      g.within_class_noise = get_or<double>(gj, "within_class_noise", 1.0);
      g.center_norm = get_or<double>(gj, "center_norm", 0.0);
      s.generators.push_back(std::move(g));
      ++k;
    }
  } else {
    check_keys(j,
               {"id", "class_count", "feature_dim", "samples_per_class", "proto_spread",
                "within_class_noise", "center_norm"},
               context);
    s.id = get_required<std::string>(j, "id", context);
    s.class_count = get_required<int64_t>(j, "class_count", context);
    s.feature_dim = get_required<int64_t>(j, "feature_dim", context);
    s.samples_per_class = get_required<int64_t>(j, "samples_per_class", context);
    s.proto_spread = get_required<double>(j, "proto_spread", context);
    s.within_class_noise = get_or<double>(j, "within_class_noise", 1.0);
    s.center_norm = get_or<double>(j, "center_norm", 0.0);
  }
  return s;
}

json spec_to_json(const SyntheticSpec& s, bool include_seed) {
  json j;
  j["id"] = s.id;
  j["feature_dim"] = s.feature_dim;
  j["samples_per_class"] = s.samples_per_class;
  if (s.is_union()) {
    if (s.class_count > 0) j["class_count"] = s.class_count;
    json gens = json::array();
    for (const SyntheticSpec& g : s.generators) {
      json gj;
      gj["class_count"] = g.class_count;
      gj["proto_spread"] = g.proto_spread;
      gj["within_class_noise"] = g.within_class_noise;
      gj["center_norm"] = g.center_norm;
      if (include_seed) gj["seed"] = g.seed;
      gens.push_back(std::move(gj));
    }
    j["generators"] = std::move(gens);
  } else {
    j["class_count"] = s.class_count;
    j["proto_spread"] = s.proto_spread;
    j["within_class_noise"] = s.within_class_noise;
    j["center_norm"] = s.center_norm;
  }
  if (include_seed) j["seed"] = s.seed;
  return j;
}

LearnerConfig learner_from_json(const json& j, const std::string& context) {
  check_keys(j,
             {"algorithm", "inner_steps", "inner_lr", "outer_lr", "n_way", "k_shot", "q_size",
              "meta_batch_size", "total_outer_steps"},
             context);
  LearnerConfig c;
  c.algorithm = algorithm_from_name(get_required<std::string>(j, "algorithm", context));
  c.inner_steps = get_or<int64_t>(j, "inner_steps", c.inner_steps);
  c.inner_lr = get_or<double>(j, "inner_lr", c.inner_lr);
  c.outer_lr = get_or<double>(j, "outer_lr", c.outer_lr);
  c.n_way = get_or<int64_t>(j, "n_way", c.n_way);
  c.k_shot = get_or<int64_t>(j, "k_shot", c.k_shot);
  c.q_size = get_or<int64_t>(j, "q_size", c.q_size);
  c.meta_batch_size = get_or<int64_t>(j, "meta_batch_size", c.meta_batch_size);
  c.total_outer_steps = get_or<int64_t>(j, "total_outer_steps", c.total_outer_steps);
  return c;
}

json learner_to_json(const LearnerConfig& c) {
  json j;
  j["algorithm"] = algorithm_name(c.algorithm);
  j["inner_steps"] = c.inner_steps;
  j["inner_lr"] = c.inner_lr;
  j["outer_lr"] = c.outer_lr;
  j["n_way"] = c.n_way;
  j["k_shot"] = c.k_shot;
  j["q_size"] = c.q_size;
  j["meta_batch_size"] = c.meta_batch_size;
  j["total_outer_steps"] = c.total_outer_steps;
  return j;
}

std::vector<std::string> json_diff_lines(const json& a, const json& b, const std::string& path,
                                         size_t limit) {
  std::vector<std::string> lines;
  if (a == b) return lines;
  if (a.is_object() && b.is_object()) {
    std::vector<std::string> keys;
    for (const auto& [k, v] : a.items()) {
      (void)v;
      keys.push_back(k);
    }
    for (const auto& [k, v] : b.items()) {
      (void)v;
      if (!a.contains(k)) keys.push_back(k);
    }
    std::sort(keys.begin(), keys.end());
    keys.erase(std::unique(keys.begin(), keys.end()), keys.end());
    for (const std::string& k : keys) {
      if (lines.size() >= limit) break;
      const std::string sub = path.empty() ? k : path + "." + k;
      if (!a.contains(k)) {
        lines.push_back(sub + ": <absent> -> " + b.at(k).dump());
      } else if (!b.contains(k)) {
        lines.push_back(sub + ": " + a.at(k).dump() + " -> <absent>");
      } else {
        auto inner = json_diff_lines(a.at(k), b.at(k), sub, limit - lines.size());
        lines.insert(lines.end(), inner.begin(), inner.end());
      }
    }
    return lines;
  }
  lines.push_back(path + ": " + a.dump() + " -> " + b.dump());
  return lines;
}

std::string join_lines(const std::vector<std::string>& lines) {
  std::string out;
  for (const std::string& l : lines) {
    out += "\n  ";
    out += l;
  }
  return out;
}

}  // namespace

ExperimentConfig ExperimentConfig::defaults() {
  ExperimentConfig c;

  auto blob = [](std::string id, double spread) {
    SyntheticSpec s;
    s.id = std::move(id);
    s.class_count = 30;
    s.feature_dim = 16;
    s.samples_per_class = 50;
    s.proto_spread = spread;
    s.within_class_noise = 2.0;
    return s;
  };
  auto union_of = [](std::string id, double lo, double hi) {
    SyntheticSpec s;
    s.id = std::move(id);
    s.feature_dim = 16;
    s.samples_per_class = 50;
    for (double spread : {lo, hi}) {
      SyntheticSpec g;
      g.id = s.id + "#" + std::to_string(s.generators.size());
      g.class_count = 15;
      g.feature_dim = 16;
      g.samples_per_class = 50;
      g.proto_spread = spread;
      g.within_class_noise = 2.0;
      g.center_norm = 6.0;
      s.generators.push_back(std::move(g));
    }
    return s;
  };
  c.datasets = {blob("spread-05", 0.5), blob("spread-1", 1.0), blob("spread-2", 2.0),
                blob("spread-4", 4.0), union_of("union-lo", 0.5, 1.0),
                union_of("union-hi", 2.0, 4.0)};

  c.probe_dataset = blob("probe-meta", 2.0);
  c.probe_dataset.class_count = 20;
  c.probe_dataset.within_class_noise = 1.0;  // probe stays a crisp reference task

  auto learner = [](Algorithm a, int64_t steps) {
    LearnerConfig l;
    l.algorithm = a;
    l.inner_steps = steps;
    l.inner_lr = 1e-1;
    l.outer_lr = 1e-3;
    l.meta_batch_size = 8;
    l.total_outer_steps = 600;
    return l;
  };
  c.learners = {learner(Algorithm::kPT, 10), learner(Algorithm::kFoMaml, 5),
                learner(Algorithm::kFoMaml, 10), learner(Algorithm::kHoMaml, 5),
                learner(Algorithm::kHoMaml, 10)};
  return c;
}

ExperimentConfig ExperimentConfig::from_json_text(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: not valid JSON: ") + e.what());
  }
  check_keys(j,
             {"output_dir", "data_dir", "master_seed", "workers", "uncontrolled", "datasets",
              "probe", "diversity", "learners", "train", "eval"},
             "config");
  ExperimentConfig c = defaults();
  c.output_dir = get_or<std::string>(j, "output_dir", c.output_dir.generic_string());
  c.data_dir = get_or<std::string>(j, "data_dir", "");
  c.master_seed = get_or<uint64_t>(j, "master_seed", c.master_seed);
  c.workers = get_or<int64_t>(j, "workers", c.workers);
  c.uncontrolled = get_or<bool>(j, "uncontrolled", c.uncontrolled);

  if (j.contains("datasets")) {
    if (!j.at("datasets").is_array() || j.at("datasets").empty()) {
      throw ConfigError("config: datasets must be a non-empty array");
    }
    c.datasets.clear();
    int64_t i = 0;
    for (const json& dj : j.at("datasets")) {
      c.datasets.push_back(spec_from_json(dj, "datasets[" + std::to_string(i) + "]"));
      ++i;
    }
  }
  if (j.contains("probe")) {
    const json& pj = j.at("probe");
    check_keys(pj, {"dataset", "hidden", "batch_size", "lr", "max_epochs", "target_accuracy"},
               "probe");
    if (pj.contains("dataset")) c.probe_dataset = spec_from_json(pj.at("dataset"), "probe.dataset");
    c.probe.hidden = get_or<std::vector<int64_t>>(pj, "hidden", c.probe.hidden);
    c.probe.batch_size = get_or<int64_t>(pj, "batch_size", c.probe.batch_size);
    c.probe.lr = get_or<double>(pj, "lr", c.probe.lr);
    c.probe.max_epochs = get_or<int64_t>(pj, "max_epochs", c.probe.max_epochs);
    c.probe.target_accuracy = get_or<double>(pj, "target_accuracy", c.probe.target_accuracy);
  }
  if (j.contains("diversity")) {
    const json& dj = j.at("diversity");
    check_keys(dj,
               {"num_batches", "pairing", "sampled_pairs", "label_mode", "mc_draws",
                "head_steps", "head_lr", "n_way", "k_shot", "q_size"},
               "diversity");
    c.diversity.num_batches = get_or<int64_t>(dj, "num_batches", c.diversity.num_batches);
    if (dj.contains("pairing")) {
      c.diversity.pairing = pairing_from_name(dj.at("pairing").get<std::string>());
    }
    c.diversity.sampled_pairs = get_or<int64_t>(dj, "sampled_pairs", c.diversity.sampled_pairs);
    if (dj.contains("label_mode")) {
      c.diversity.label_mode = label_mode_from_name(dj.at("label_mode").get<std::string>());
    }
    c.diversity.mc_draws = get_or<int64_t>(dj, "mc_draws", c.diversity.mc_draws);
    c.diversity.head_steps = get_or<int64_t>(dj, "head_steps", c.diversity.head_steps);
    c.diversity.head_lr = get_or<double>(dj, "head_lr", c.diversity.head_lr);
    c.diversity.n_way = get_or<int64_t>(dj, "n_way", c.diversity.n_way);
    c.diversity.k_shot = get_or<int64_t>(dj, "k_shot", c.diversity.k_shot);
    c.diversity.q_size = get_or<int64_t>(dj, "q_size", c.diversity.q_size);
  }
  if (j.contains("learners")) {
    if (!j.at("learners").is_array() || j.at("learners").empty()) {
      throw ConfigError("config: learners must be a non-empty array");
    }
    c.learners.clear();
    int64_t i = 0;
    for (const json& lj : j.at("learners")) {
      c.learners.push_back(learner_from_json(lj, "learners[" + std::to_string(i) + "]"));
      ++i;
    }
  }
  if (j.contains("train")) {
    const json& tj = j.at("train");
    check_keys(tj, {"hidden", "checkpoint_interval"}, "train");
    c.train.hidden = get_or<std::vector<int64_t>>(tj, "hidden", c.train.hidden);
    c.train.checkpoint_interval =
        get_or<int64_t>(tj, "checkpoint_interval", c.train.checkpoint_interval);
  }
  if (j.contains("eval")) {
    const json& ej = j.at("eval");
    check_keys(ej, {"num_episodes"}, "eval");
    c.eval.num_episodes = get_or<int64_t>(ej, "num_episodes", c.eval.num_episodes);
  }
  c.validate();
  return c;
}

ExperimentConfig ExperimentConfig::load(const fs::path& path) {
  return from_json_text(read_text_file(path, "config"));
}

namespace {

json settings_json(const ExperimentConfig& c) {
  json j;
  j["probe"] = {{"hidden", c.probe.hidden},
                {"batch_size", c.probe.batch_size},
                {"lr", c.probe.lr},
                {"max_epochs", c.probe.max_epochs},
                {"target_accuracy", c.probe.target_accuracy}};
  j["diversity"] = {{"num_batches", c.diversity.num_batches},
                    {"pairing", pairing_name(c.diversity.pairing)},
                    {"sampled_pairs", c.diversity.sampled_pairs},
                    {"label_mode", label_mode_name(c.diversity.label_mode)},
                    {"mc_draws", c.diversity.mc_draws},
                    {"head_steps", c.diversity.head_steps},
                    {"head_lr", c.diversity.head_lr},
                    {"n_way", c.diversity.n_way},
                    {"k_shot", c.diversity.k_shot},
                    {"q_size", c.diversity.q_size}};
  json learners = json::array();
  for (const LearnerConfig& l : c.learners) learners.push_back(learner_to_json(l));
  j["learners"] = std::move(learners);
  j["train"] = {{"hidden", c.train.hidden},
                {"checkpoint_interval", c.train.checkpoint_interval}};
  j["eval"] = {{"num_episodes", c.eval.num_episodes}};
  return j;
}

// Everything that determines output numbers, with resolved seeds.
json hashable_json(const ExperimentConfig& c) {
  json j = settings_json(c);
  j["master_seed"] = c.master_seed;
  j["uncontrolled"] = c.uncontrolled;
  json datasets = json::array();
  for (const SyntheticSpec& s : c.resolved_datasets()) datasets.push_back(spec_to_json(s, true));
  j["datasets"] = std::move(datasets);
  j["probe"]["dataset"] = spec_to_json(c.resolved_probe_dataset(), true);
  return j;
}

}  // namespace

std::string ExperimentConfig::to_json_text() const {
  json j = settings_json(*this);
  j["output_dir"] = output_dir.generic_string();
  if (!data_dir.empty()) j["data_dir"] = data_dir.generic_string();
  j["master_seed"] = master_seed;
  j["workers"] = workers;
  j["uncontrolled"] = uncontrolled;
  json ds = json::array();
  for (const SyntheticSpec& s : datasets) ds.push_back(spec_to_json(s, false));
  j["datasets"] = std::move(ds);
  j["probe"]["dataset"] = spec_to_json(probe_dataset, false);
  return j.dump(2) + "\n";
}

std::string ExperimentConfig::config_hash() const {
  return hex16(fnv1a64(hashable_json(*this).dump()));
}

void ExperimentConfig::validate() const {
  if (output_dir.empty()) throw ConfigError("config: output_dir must not be empty");
  if (workers < 1) throw ConfigError("config: workers must be >= 1");
  if (datasets.empty()) throw ConfigError("config: datasets must be non-empty");
  if (learners.empty()) throw ConfigError("config: learners must be non-empty");

  std::vector<std::string> ids;
  for (const SyntheticSpec& s : datasets) ids.push_back(s.id);
  ids.push_back(probe_dataset.id);
  for (const std::string& id : ids) {
    if (id.empty()) throw ConfigError("config: dataset id must not be empty");
    for (char ch : id) {
      if (!std::isalnum(static_cast<unsigned char>(ch)) && ch != '-' && ch != '_') {
        throw ConfigError("config: dataset id '" + id +
                          "' may only contain letters, digits, '-', '_'");
      }
    }
  }
  std::vector<std::string> sorted = ids;
  std::sort(sorted.begin(), sorted.end());
  const auto dup = std::adjacent_find(sorted.begin(), sorted.end());
  if (dup != sorted.end()) {
    throw ConfigError("config: duplicate dataset id '" + *dup + "'");
  }

  for (const SyntheticSpec& s : resolved_datasets()) s.validate();
  resolved_probe_dataset().validate();

  std::vector<std::string> labels;
  for (const LearnerConfig& l : learners) {
    l.validate();
    labels.push_back(l.label());
  }
  std::sort(labels.begin(), labels.end());
  const auto ldup = std::adjacent_find(labels.begin(), labels.end());
  if (ldup != labels.end()) {
    throw ConfigError("config: duplicate learner label '" + *ldup + "'");
  }

  if (probe.hidden.empty()) throw ConfigError("config: probe.hidden must be non-empty");
  if (probe.batch_size < 1) throw ConfigError("config: probe.batch_size must be >= 1");
  if (!(probe.lr > 0.0)) throw ConfigError("config: probe.lr must be > 0");
  if (probe.max_epochs < 1) throw ConfigError("config: probe.max_epochs must be >= 1");
  if (!(probe.target_accuracy > 0.0 && probe.target_accuracy <= 1.0)) {
    throw ConfigError("config: probe.target_accuracy must be in (0, 1]");
  }
  if (diversity.num_batches < 2) throw ConfigError("config: diversity.num_batches must be >= 2");
  if (diversity.pairing == Pairing::kSampled && diversity.sampled_pairs < 1) {
    throw ConfigError("config: diversity.sampled_pairs must be >= 1 for sampled pairing");
  }
  if (diversity.mc_draws < 1) throw ConfigError("config: diversity.mc_draws must be >= 1");
  if (diversity.head_steps < 0) throw ConfigError("config: diversity.head_steps must be >= 0");
  if (!(diversity.head_lr > 0.0)) throw ConfigError("config: diversity.head_lr must be > 0");
  if (diversity.n_way < 2 || diversity.k_shot < 1 || diversity.q_size < 1) {
    throw ConfigError("config: diversity episode shape must satisfy n_way >= 2, k_shot >= 1, "
                      "q_size >= 1");
  }
  for (int64_t h : train.hidden) {
    if (h < 1) throw ConfigError("config: train.hidden widths must be >= 1");
  }
  if (train.hidden.empty()) throw ConfigError("config: train.hidden must be non-empty");
  if (train.checkpoint_interval < 1) {
    throw ConfigError("config: train.checkpoint_interval must be >= 1");
  }
  if (eval.num_episodes < 1) throw ConfigError("config: eval.num_episodes must be >= 1");
}

fs::path ExperimentConfig::resolved_data_dir() const {
  return data_dir.empty() ? output_dir / "data" : data_dir;
}

namespace {

SyntheticSpec resolve_seeds(SyntheticSpec s, uint64_t master) {
  s.seed = derive_seed(master, "data:" + s.id);
  for (size_t k = 0; k < s.generators.size(); ++k) {
    s.generators[k].seed = derive_seed(master, "data:" + s.id + ":gen" + std::to_string(k));
  }
  return s;
}

}  // namespace

std::vector<SyntheticSpec> ExperimentConfig::resolved_datasets() const {
  std::vector<SyntheticSpec> out;
  out.reserve(datasets.size());
  for (const SyntheticSpec& s : datasets) out.push_back(resolve_seeds(s, master_seed));
  return out;
}

SyntheticSpec ExperimentConfig::resolved_probe_dataset() const {
  return resolve_seeds(probe_dataset, master_seed);
}

int64_t ExperimentConfig::steps_for(const LearnerConfig& learner,
                                    const SyntheticSpec& dataset) const {
  if (!uncontrolled) return learner.total_outer_steps;
  auto train_rows = [](const SyntheticSpec& s) {
    const int64_t classes = s.is_union() && s.class_count == 0
                                ? [&s] {
                                    int64_t n = 0;
                                    for (const auto& g : s.generators) n += g.class_count;
                                    return n;
                                  }()
                                : s.class_count;
    return (classes * 6) / 10 * s.samples_per_class;
  };
  int64_t max_rows = 0;
  for (const SyntheticSpec& s : datasets) max_rows = std::max(max_rows, train_rows(s));
  const double scale = static_cast<double>(train_rows(dataset)) / static_cast<double>(max_rows);
  return std::max<int64_t>(1, std::llround(static_cast<double>(learner.total_outer_steps) * scale));
}

OutputPaths OutputPaths::from(const ExperimentConfig& config) {
  OutputPaths p;
  p.root = config.output_dir;
  p.data_dir = config.resolved_data_dir();
  p.manifest = p.root / "manifest.json";
  p.probe_dir = p.root / "probe";
  p.probe_base = p.probe_dir / "probe";
  p.probe_stage = p.probe_dir / "stage.json";
  p.checkpoints_dir = p.root / "checkpoints";
  p.diversity_csv = p.root / "diversity.csv";
  p.eval_csv = p.root / "eval.csv";
  p.report_points_csv = p.root / "report_points.csv";
  p.report_summary_csv = p.root / "report_summary.csv";
  p.report_json = p.root / "report.json";
  return p;
}

fs::path OutputPaths::dataset_file(const std::string& id) const {
  return data_dir / (id + ".dvds");
}

fs::path OutputPaths::cell_dir(const std::string& label, const std::string& dataset_id) const {
  return checkpoints_dir / label / dataset_id;
}

fs::path OutputPaths::cell_provenance(const std::string& label,
                                      const std::string& dataset_id) const {
  return cell_dir(label, dataset_id) / "provenance.json";
}

fs::path OutputPaths::final_checkpoint(const std::string& label,
                                       const std::string& dataset_id) const {
  return cell_dir(label, dataset_id) / "final";
}

fs::path OutputPaths::step_checkpoint(const std::string& label, const std::string& dataset_id,
                                      int64_t step) const {
  char buf[24];
  std::snprintf(buf, sizeof buf, "step-%06lld", static_cast<long long>(step));
  return cell_dir(label, dataset_id) / buf;
}

void parallel_for(int64_t count, int64_t workers, const std::function<void(int64_t)>& fn) {
  workers = std::max<int64_t>(1, std::min(workers, count));
  if (workers <= 1) {
    for (int64_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<int64_t> next{0};
  std::mutex error_mutex;
  std::exception_ptr first_error;
  int64_t first_error_index = count;
  auto body = [&] {
    for (;;) {
      const int64_t i = next.fetch_add(1);
      if (i >= count) return;
      try {
        fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (i < first_error_index) {
          first_error_index = i;
          first_error = std::current_exception();
        }
      }
    }
  };
  std::vector<std::thread> pool;
  pool.reserve(static_cast<size_t>(workers));
  for (int64_t w = 0; w < workers; ++w) pool.emplace_back(body);
  for (std::thread& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

std::string format_csv_double(double v) {
  char buf[40];
  for (int prec = 15; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof buf, "%.*g", prec, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

namespace {

std::string hash_comment(const ExperimentConfig& config) {
  return "# config_hash=" + config.config_hash() + " seed=" +
         std::to_string(config.master_seed) + "\n";
}

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
};

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  for (char ch : line) {
    if (ch == ',') {
      out.push_back(field);
      field.clear();
    } else {
      field.push_back(ch);
    }
  }
  out.push_back(field);
  return out;
}

// Reads one of our own CSVs and insists it came from this config.
CsvTable read_stage_csv(const fs::path& path, const ExperimentConfig& config,
                        const char* stage) {
  const std::string text = read_text_file(path, stage);
  std::istringstream in(text);
  std::string line;
  CsvTable t;
  bool saw_hash = false, saw_header = false;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (!saw_hash) {
      const std::string want = hash_comment(config);
      if (line + "\n" != want) {
        throw ConfigError(std::string(stage) + ": '" + path.string() +
                          "' was produced under a different config/seed (found '" + line +
                          "'); re-run that stage or pass --force");
      }
      saw_hash = true;
    } else if (!saw_header) {
      t.header = split_csv_line(line);
      saw_header = true;
    } else {
      t.rows.push_back(split_csv_line(line));
    }
  }
  if (!saw_header) {
    throw FormatError(std::string(stage) + ": '" + path.string() + "' has no header row");
  }
  return t;
}

double parse_double(const std::string& s, const char* what) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0') {
    throw FormatError(std::string(what) + ": bad numeric field '" + s + "'");
  }
  return v;
}

bool file_current(const fs::path& path, const ExperimentConfig& config) {
  if (!fs::exists(path)) return false;
  std::ifstream in(path);
  std::string first;
  std::getline(in, first);
  return first + "\n" == hash_comment(config);
}

json read_json_file(const fs::path& path, const char* what) {
  try {
    return json::parse(read_text_file(path, what));
  } catch (const json::exception& e) {
    throw FormatError(std::string(what) + ": '" + path.string() + "' is not valid JSON: " +
                      e.what());
  }
}

void require_manifest(const OutputPaths& paths, const ExperimentConfig& config,
                      const char* stage) {
  if (!fs::exists(paths.manifest)) {
    throw MissingInputError(std::string(stage) + ": no manifest at '" +
                            paths.manifest.string() + "'; run `divlab gen-data` first");
  }
  const json m = read_json_file(paths.manifest, stage);
  const std::string stored = m.value("config_hash", "");
  if (stored != config.config_hash()) {
    const auto diff = json_diff_lines(m.value("config", json::object()),
                                      hashable_json(config), "", 25);
    throw ConfigError(std::string(stage) + ": outputs in '" + paths.root.string() +
                      "' belong to a different config (hash " + stored + " vs " +
                      config.config_hash() + "); differences:" + join_lines(diff) +
                      "\nre-run gen-data (use --force to overwrite)");
  }
}

std::vector<std::string> learner_config_diff(const LearnerConfig& a, const LearnerConfig& b) {
  return json_diff_lines(learner_to_json(a), learner_to_json(b), "", 25);
}

}  // namespace

void cmd_gen_data(const ExperimentConfig& config, bool force) {
  config.validate();
  const OutputPaths paths = OutputPaths::from(config);
  fs::create_directories(paths.data_dir);

  std::vector<SyntheticSpec> specs = config.resolved_datasets();
  specs.push_back(config.resolved_probe_dataset());

  bool manifest_matches = false;
  json stored;
  if (fs::exists(paths.manifest)) {
    stored = read_json_file(paths.manifest, "gen-data");
    manifest_matches = stored.value("config_hash", "") == config.config_hash();
    if (!manifest_matches && !force) {
      const auto diff = json_diff_lines(stored.value("config", json::object()),
                                        hashable_json(config), "", 25);
      throw ConfigError("gen-data: '" + paths.manifest.string() +
                        "' holds data for a different config; differences:" + join_lines(diff) +
                        "\nuse --force to regenerate");
    }
  } else if (!force) {
    for (const SyntheticSpec& s : specs) {
      if (fs::exists(paths.dataset_file(s.id))) {
        throw ConfigError("gen-data: '" + paths.dataset_file(s.id).string() +
                          "' already exists without a manifest; use --force to overwrite");
      }
    }
  }

  int64_t generated = 0;
  for (const SyntheticSpec& s : specs) {
    const fs::path file = paths.dataset_file(s.id);
    if (!force && manifest_matches && fs::exists(file)) continue;
    const DatasetHandle handle = generate_synthetic(s);
    save_dvds(handle.dataset(), file);
    ++generated;
  }

  json manifest;
  manifest["config"] = hashable_json(config);
  manifest["config_hash"] = config.config_hash();
  manifest["master_seed"] = config.master_seed;
  json entries = json::array();
  for (size_t i = 0; i < specs.size(); ++i) {
    const fs::path file = paths.dataset_file(specs[i].id);
    json e;
    e["id"] = specs[i].id;
    e["file"] = file.filename().generic_string();
    e["content_hash"] = file_hash_hex(file);
    e["role"] = i + 1 == specs.size() ? "probe" : "grid";
    entries.push_back(std::move(e));
  }
  manifest["datasets"] = std::move(entries);
  write_text_file(paths.manifest, manifest.dump(2) + "\n", "gen-data");
  std::cout << "gen-data: " << specs.size() << " datasets in " << paths.data_dir.string()
            << " (" << generated << " generated)\n";
}

void cmd_pretrain_probe(const ExperimentConfig& config, bool force) {
  config.validate();
  const OutputPaths paths = OutputPaths::from(config);
  require_manifest(paths, config, "pretrain-probe");
  const fs::path meta_file = paths.dataset_file(config.probe_dataset.id);
  if (!fs::exists(meta_file)) {
    throw MissingInputError("pretrain-probe: probe dataset '" + meta_file.string() +
                            "' not found; run `divlab gen-data` first");
  }

  if (!force && fs::exists(paths.probe_stage)) {
    const json stage = read_json_file(paths.probe_stage, "pretrain-probe");
    if (stage.value("config_hash", "") == config.config_hash() &&
        fs::exists(paths.probe_base.string() + ".dvpv") &&
        fs::exists(paths.probe_base.string() + ".json")) {
      std::cout << "pretrain-probe: up to date (probe_id " << stage.value("probe_id", "?")
                << ")\n";
      return;
    }
  }

  fs::create_directories(paths.probe_dir);
  ProbeTrainConfig pc = config.probe;
  pc.seed = derive_seed(config.master_seed, "probe");
  const DatasetHandle meta = load_dataset(meta_file);
  const ProbeNetwork probe = pretrain_probe(meta, pc);
  probe.save(paths.probe_base);

  json stage;
  stage["config_hash"] = config.config_hash();
  stage["master_seed"] = config.master_seed;
  stage["probe_id"] = probe.probe_id();
  stage["train_accuracy"] = probe.train_accuracy();
  write_text_file(paths.probe_stage, stage.dump(2) + "\n", "pretrain-probe");
  std::cout << "pretrain-probe: trained to accuracy " << probe.train_accuracy()
            << " (probe_id " << probe.probe_id() << ")\n";
}

void cmd_diversity(const ExperimentConfig& config, bool force) {
  config.validate();
  const OutputPaths paths = OutputPaths::from(config);
  require_manifest(paths, config, "diversity");
  if (!fs::exists(paths.probe_base.string() + ".dvpv")) {
    throw MissingInputError("diversity: probe checkpoint '" + paths.probe_base.string() +
                            ".dvpv' not found; run `divlab pretrain-probe` first");
  }
  if (!force && file_current(paths.diversity_csv, config)) {
    std::cout << "diversity: up to date\n";
    return;
  }

  const ProbeNetwork probe = ProbeNetwork::load(paths.probe_base);
  const std::vector<SyntheticSpec> specs = config.resolved_datasets();
  DiversityConfig dc;
  dc.num_batches = config.diversity.num_batches;
  dc.pairing = config.diversity.pairing;
  dc.sampled_pairs = config.diversity.sampled_pairs;
  dc.label_mode = config.diversity.label_mode;
  dc.mc_draws = config.diversity.mc_draws;
  dc.head_steps = config.diversity.head_steps;
  dc.head_lr = config.diversity.head_lr;
  dc.n_way = config.diversity.n_way;
  dc.k_shot = config.diversity.k_shot;
  dc.q_size = config.diversity.q_size;

  std::vector<DiversityEstimate> estimates(specs.size());
  parallel_for(static_cast<int64_t>(specs.size()), config.workers, [&](int64_t i) {
    const fs::path file = paths.dataset_file(specs[static_cast<size_t>(i)].id);
    if (!fs::exists(file)) {
      throw MissingInputError("diversity: dataset '" + file.string() +
                              "' not found; run `divlab gen-data` first");
    }
    const DatasetHandle train_view = load_dataset(file).split_view(Split::kTrain);
    estimates[static_cast<size_t>(i)] = diversity_coefficient(
        train_view, probe, dc,
        derive_seed(config.master_seed, "div:" + specs[static_cast<size_t>(i)].id));
  });

  std::string csv = hash_comment(config);
  csv += "dataset_id,diversity_mean,ci_half_width,num_batches,num_pairs,label_mode\n";
  for (const DiversityEstimate& e : estimates) {
    csv += e.dataset_id + "," + format_csv_double(e.mean) + "," +
           format_csv_double(e.ci_half_width) + "," + std::to_string(e.num_batches) + "," +
           std::to_string(e.num_pairs) + "," + label_mode_name(e.label_mode) + "\n";
  }
  write_text_file(paths.diversity_csv, csv, "diversity");
  std::cout << "diversity: " << estimates.size() << " datasets -> "
            << paths.diversity_csv.string() << "\n";
}

namespace {

struct Cell {
  size_t learner;
  size_t dataset;
};

std::vector<Cell> grid_cells(const ExperimentConfig& config) {
  std::vector<Cell> cells;
  for (size_t l = 0; l < config.learners.size(); ++l) {
    for (size_t d = 0; d < config.datasets.size(); ++d) cells.push_back({l, d});
  }
  return cells;
}

// Per-cell learner config with derived seed and (possibly scaled) step budget.
LearnerConfig cell_config(const ExperimentConfig& config, const LearnerConfig& base,
                          const SyntheticSpec& spec) {
  LearnerConfig c = base;
  c.seed = derive_seed(config.master_seed, "train:" + base.label() + ":" + spec.id);
  c.total_outer_steps = config.steps_for(base, spec);
  return c;
}

void train_cell(const ExperimentConfig& config, const OutputPaths& paths,
                const LearnerConfig& base, const SyntheticSpec& spec, bool force) {
  const std::string label = base.label();
  const LearnerConfig lcfg = cell_config(config, base, spec);
  const fs::path dir = paths.cell_dir(label, spec.id);
  const fs::path prov_file = paths.cell_provenance(label, spec.id);
  const fs::path final_base = paths.final_checkpoint(label, spec.id);

  if (force && fs::exists(dir)) fs::remove_all(dir);
  if (fs::exists(prov_file)) {
    const json prov = read_json_file(prov_file, "train");
    if (prov.value("config_hash", "") != config.config_hash()) {
      const auto diff = learner_config_diff(
          learner_from_json(prov.value("learner", json::object()), "stored learner"), lcfg);
      throw ConfigError("train: checkpoints in '" + dir.string() +
                        "' were written under a different config" +
                        (diff.empty() ? std::string(" (settings outside this cell changed)")
                                      : ":" + join_lines(diff)) +
                        "\nuse --force to retrain from scratch");
    }
  } else if (fs::exists(dir) && !fs::is_empty(dir)) {
    throw ConfigError("train: '" + dir.string() +
                      "' contains files without provenance; use --force to retrain");
  }
  fs::create_directories(dir);

  if (!fs::exists(prov_file)) {
    json prov;
    prov["config_hash"] = config.config_hash();
    prov["master_seed"] = config.master_seed;
    prov["learner_label"] = label;
    prov["dataset_id"] = spec.id;
    prov["uncontrolled"] = config.uncontrolled;
    prov["total_outer_steps"] = lcfg.total_outer_steps;
    prov["learner"] = learner_to_json(lcfg);
    write_text_file(prov_file, prov.dump(2) + "\n", "train");
  }

  if (fs::exists(final_base.string() + ".json")) {
    const Checkpoint done = load_checkpoint(final_base);
    const auto diff = learner_config_diff(done.config, lcfg);
    if (!diff.empty()) {
      throw ConfigError("train: final checkpoint in '" + dir.string() +
                        "' disagrees with the current config:" + join_lines(diff));
    }
    if (done.outer_step == lcfg.total_outer_steps) return;  // cell complete
  }

  const fs::path data_file = paths.dataset_file(spec.id);
  if (!fs::exists(data_file)) {
    throw MissingInputError("train: dataset '" + data_file.string() +
                            "' not found; run `divlab gen-data` first");
  }
  const DatasetHandle train_view = load_dataset(data_file).split_view(Split::kTrain);

  // resume from the newest interval checkpoint, else fresh init
  LearnerModel model = LearnerModel::create(
      train_view.feature_dim(), config.train.hidden,
      base.algorithm == Algorithm::kPT ? train_view.class_count() : lcfg.n_way,
      derive_seed(config.master_seed, "model:" + label + ":" + spec.id));
  std::vector<std::pair<int64_t, double>> metrics;
  int64_t start = 0;
  for (int64_t step = lcfg.total_outer_steps; step > 0; --step) {
    const fs::path base_path = paths.step_checkpoint(label, spec.id, step);
    if (!fs::exists(base_path.string() + ".json")) continue;
    Checkpoint ckpt = load_checkpoint(base_path);
    const auto diff = learner_config_diff(ckpt.config, lcfg);
    if (!diff.empty()) {
      throw ConfigError("train: checkpoint '" + base_path.string() +
                        "' disagrees with the current config:" + join_lines(diff));
    }
    model = std::move(ckpt.model);
    metrics = std::move(ckpt.metrics);
    start = ckpt.outer_step;
    break;
  }

  while (start < lcfg.total_outer_steps) {
    const int64_t next_mark =
        (start / config.train.checkpoint_interval + 1) * config.train.checkpoint_interval;
    const int64_t stop = std::min(lcfg.total_outer_steps, next_mark);
    model = run_training(std::move(model), train_view, lcfg, start, stop, &metrics);
    start = stop;
    save_checkpoint({model, lcfg, start, spec.id, metrics},
                    paths.step_checkpoint(label, spec.id, start));
  }
  save_checkpoint({std::move(model), lcfg, start, spec.id, std::move(metrics)}, final_base);
}

}  // namespace

void cmd_train(const ExperimentConfig& config, bool force) {
  config.validate();
  const OutputPaths paths = OutputPaths::from(config);
  require_manifest(paths, config, "train");
  const std::vector<SyntheticSpec> specs = config.resolved_datasets();
  const std::vector<Cell> cells = grid_cells(config);
  parallel_for(static_cast<int64_t>(cells.size()), config.workers, [&](int64_t i) {
    const Cell& cell = cells[static_cast<size_t>(i)];
    train_cell(config, paths, config.learners[cell.learner], specs[cell.dataset], force);
  });
  std::cout << "train: " << cells.size() << " (learner x dataset) cells complete\n";
}

void cmd_evaluate(const ExperimentConfig& config, bool force) {
  config.validate();
  const OutputPaths paths = OutputPaths::from(config);
  require_manifest(paths, config, "evaluate");
  if (!force && file_current(paths.eval_csv, config)) {
    std::cout << "evaluate: up to date\n";
    return;
  }

  const std::vector<SyntheticSpec> specs = config.resolved_datasets();
  const std::vector<Cell> cells = grid_cells(config);
  std::vector<std::string> missing;
  for (const Cell& cell : cells) {
    const fs::path base = paths.final_checkpoint(config.learners[cell.learner].label(),
                                                 specs[cell.dataset].id);
    if (!fs::exists(base.string() + ".json")) {
      missing.push_back(config.learners[cell.learner].label() + "/" + specs[cell.dataset].id);
    }
  }
  if (!missing.empty()) {
    std::string list;
    for (const std::string& m : missing) list += (list.empty() ? "" : ", ") + m;
    throw MissingInputError("evaluate: missing final checkpoints for: " + list +
                            "; run `divlab train` first");
  }

  struct Row {
    std::string label, dataset;
    EvalResult result;
    int64_t train_steps = 0;
  };
  std::vector<Row> rows(cells.size());
  parallel_for(static_cast<int64_t>(cells.size()), config.workers, [&](int64_t i) {
    const Cell& cell = cells[static_cast<size_t>(i)];
    const std::string label = config.learners[cell.learner].label();
    const SyntheticSpec& spec = specs[cell.dataset];
    const Checkpoint ckpt = load_checkpoint(paths.final_checkpoint(label, spec.id));
    const DatasetHandle test_view =
        load_dataset(paths.dataset_file(spec.id)).split_view(Split::kTest);
    const EvalResult r =
        evaluate(ckpt.model, test_view, ckpt.config, config.eval.num_episodes,
                 derive_seed(config.master_seed, "eval:" + label + ":" + spec.id));
    rows[static_cast<size_t>(i)] = {label, spec.id, r, ckpt.outer_step};
  });

  std::string csv = hash_comment(config);
  csv += "learner_label,dataset_id,accuracy,acc_ci,ce_loss,num_episodes,train_steps\n";
  for (const Row& r : rows) {
    csv += r.label + "," + r.dataset + "," + format_csv_double(r.result.accuracy) + "," +
           format_csv_double(r.result.ci_acc) + "," + format_csv_double(r.result.ce_loss) +
           "," + std::to_string(r.result.num_episodes) + "," + std::to_string(r.train_steps) +
           "\n";
  }
  write_text_file(paths.eval_csv, csv, "evaluate");
  std::cout << "evaluate: " << rows.size() << " cells -> " << paths.eval_csv.string() << "\n";
}

namespace {

json full_scale_reference() {
  json diversity = json::array();
  auto row = [&](const char* name, double m18, double c18, double m34, double c34) {
    diversity.push_back({{"dataset", name},
                         {"resnet18", {{"mean", m18}, {"ci", c18}}},
                         {"resnet34", {{"mean", m34}, {"ci", c34}}}});
  };
  row("CIFAR-FS", 0.106, 0.00166, 0.0890, 0.00199);
  row("FC100", 0.107, 0.00149, 0.0903, 0.00389);
  row("Aircraft", 0.110, 0.00127, 0.0932, 0.00109);
  row("Flower", 0.138, 0.00288, 0.117, 0.00234);
  row("DTD", 0.129, 0.00227, 0.111, 0.00228);
  row("CUBirds", 0.120, 0.00161, 0.104, 0.00149);
  row("Omniglot", 0.159, 0.00472, 0.136, 0.00421);
  row("MIO", 0.1191, 0.0015, 0.1013, 0.00122);
  row("hdb7-afto", 0.171, 0.01435, 0.148, 0.01179);
  row("hdb8-cado", 0.174, 0.01, 0.155, 0.00845);
  row("hdb9-cavdo", 0.180, 0.00920, 0.143, 0.00844);
  row("hdb10-micova", 0.171, 0.0101, 0.144, 0.00766);

  json r2 = json::array();
  auto fit = [&](const char* model, double acc, double loss) {
    r2.push_back({{"model", model}, {"r2_acc", acc}, {"r2_loss", loss}});
  };
  fit("PT", 0.149, 0.137);
  fit("FO MAML 5", 0.168, 0.184);
  fit("FO MAML 10", 0.152, 0.174);
  fit("HO MAML 5", 0.398, 0.074);
  fit("HO MAML 10", 0.416, 0.203);

  json ref;
  ref["diversity"] = std::move(diversity);
  ref["r2"] = std::move(r2);
  ref["note"] =
      "reference values from full-scale ResNet runs on the original image benchmarks; "
      "retained for comparison, not reproducible at desk scale";
  return ref;
}

json trend_json(const Trendline& t) {
  return {{"x0", t.x0}, {"y0", t.y0}, {"x1", t.x1}, {"y1", t.y1}, {"residuals", t.residuals}};
}

}  // namespace

void cmd_correlate(const ExperimentConfig& config, bool force) {
  config.validate();
  const OutputPaths paths = OutputPaths::from(config);
  require_manifest(paths, config, "correlate");
  if (!force && file_current(paths.report_points_csv, config) &&
      file_current(paths.report_summary_csv, config) && fs::exists(paths.report_json)) {
    std::cout << "correlate: up to date\n";
    return;
  }

  std::vector<std::string> missing;
  if (!fs::exists(paths.diversity_csv)) missing.push_back(paths.diversity_csv.string());
  if (!fs::exists(paths.eval_csv)) missing.push_back(paths.eval_csv.string());
  if (!missing.empty()) {
    std::string list;
    for (const std::string& m : missing) list += (list.empty() ? "" : ", ") + m;
    throw MissingInputError("correlate: missing inputs: " + list +
                            "; run `divlab diversity` and `divlab evaluate` first");
  }

  const CsvTable div = read_stage_csv(paths.diversity_csv, config, "correlate");
  const CsvTable ev = read_stage_csv(paths.eval_csv, config, "correlate");

  struct DivRow {
    double mean, ci;
  };
  std::vector<std::pair<std::string, DivRow>> div_rows;
  for (const auto& row : div.rows) {
    div_rows.emplace_back(row.at(0), DivRow{parse_double(row.at(1), "correlate"),
                                            parse_double(row.at(2), "correlate")});
  }
  auto find_div = [&](const std::string& id) -> const DivRow& {
    for (const auto& [rid, d] : div_rows) {
      if (rid == id) return d;
    }
    throw MissingInputError("correlate: no diversity row for dataset '" + id +
                            "' in " + paths.diversity_csv.string());
  };

  std::vector<GridPoint> points;
  for (const auto& row : ev.rows) {
    GridPoint p;
    p.learner_label = row.at(0);
    p.dataset_id = row.at(1);
    const DivRow& d = find_div(p.dataset_id);
    p.diversity_mean = d.mean;
    p.diversity_ci = d.ci;
    p.accuracy = parse_double(row.at(2), "correlate");
    p.acc_ci = parse_double(row.at(3), "correlate");
    p.ce_loss = parse_double(row.at(4), "correlate");
    points.push_back(std::move(p));
  }

  const std::vector<CorrelationReport> reports = build_report(points);

  std::string points_csv = hash_comment(config);
  points_csv += "learner_label,dataset_id,diversity_mean,diversity_ci,accuracy,acc_ci,ce_loss\n";
  for (const GridPoint& p : points) {
    points_csv += p.learner_label + "," + p.dataset_id + "," +
                  format_csv_double(p.diversity_mean) + "," + format_csv_double(p.diversity_ci) +
                  "," + format_csv_double(p.accuracy) + "," + format_csv_double(p.acc_ci) + "," +
                  format_csv_double(p.ce_loss) + "\n";
  }

  std::string summary_csv = hash_comment(config);
  summary_csv += "learner_label,r2_acc,r2_loss,slope_acc,slope_loss,n_points\n";
  for (const CorrelationReport& r : reports) {
    summary_csv += r.learner_label + "," + format_csv_double(r.r2_acc) + "," +
                   format_csv_double(r.r2_loss) + "," + format_csv_double(r.slope_acc) + "," +
                   format_csv_double(r.slope_loss) + "," + std::to_string(r.points.size()) +
                   "\n";
  }

  json report;
  report["config_hash"] = config.config_hash();
  report["master_seed"] = config.master_seed;
  report["label_mode"] = label_mode_name(config.diversity.label_mode);
  report["uncontrolled"] = config.uncontrolled;
  json mbs = json::object();
  for (const LearnerConfig& l : config.learners) mbs[l.label()] = l.meta_batch_size;
  report["meta_batch_sizes"] = std::move(mbs);
  json jpoints = json::array();
  for (const GridPoint& p : points) {
    jpoints.push_back({{"learner_label", p.learner_label},
                       {"dataset_id", p.dataset_id},
                       {"diversity_mean", p.diversity_mean},
                       {"diversity_ci", p.diversity_ci},
                       {"accuracy", p.accuracy},
                       {"acc_ci", p.acc_ci},
                       {"ce_loss", p.ce_loss}});
  }
  report["points"] = std::move(jpoints);
  json jsummary = json::array();
  for (const CorrelationReport& r : reports) {
    jsummary.push_back({{"learner_label", r.learner_label},
                        {"n_points", r.points.size()},
                        {"slope_acc", r.slope_acc},
                        {"intercept_acc", r.intercept_acc},
                        {"r2_acc", r.r2_acc},
                        {"slope_loss", r.slope_loss},
                        {"intercept_loss", r.intercept_loss},
                        {"r2_loss", r.r2_loss},
                        {"trend_acc", trend_json(r.trend_acc)},
                        {"trend_loss", trend_json(r.trend_loss)}});
  }
  report["summary"] = std::move(jsummary);
  report["full_scale_reference"] = full_scale_reference();
  report["notes"] = json::array(
      {"accuracies are absolute test accuracies; no relative-performance normalization is "
       "applied"});

  write_text_file(paths.report_points_csv, points_csv, "correlate");
  write_text_file(paths.report_summary_csv, summary_csv, "correlate");
  write_text_file(paths.report_json, report.dump(2) + "\n", "correlate");
  std::cout << "correlate: " << reports.size() << " learners -> "
            << paths.report_summary_csv.string() << "\n";
}

void cmd_run_all(const ExperimentConfig& config, bool force) {
  cmd_gen_data(config, force);
  cmd_pretrain_probe(config, force);
  cmd_diversity(config, force);
  cmd_train(config, force);
  cmd_evaluate(config, force);
  cmd_correlate(config, force);
}

}  // namespace divlab
