#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "divlab/analysis.hpp"
#include "divlab/errors.hpp"
#include "divlab/experiment.hpp"

using namespace divlab;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& tag) {
  const fs::path p = fs::temp_directory_path() / ("divlab-exp-" + tag);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void spit(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << text;
}

// 3 small datasets, 2 learners; a full run-all takes well under a second
const char* kTinyJson = R"json({
  "master_seed": 7,
  "datasets": [
    {"id": "blob-a", "class_count": 15, "feature_dim": 6, "samples_per_class": 20,
     "proto_spread": 1.0},
    {"id": "blob-b", "class_count": 15, "feature_dim": 6, "samples_per_class": 40,
     "proto_spread": 3.0},
    {"id": "mix", "feature_dim": 6, "samples_per_class": 20, "generators": [
      {"class_count": 8, "proto_spread": 1.0, "center_norm": 4.0},
      {"class_count": 8, "proto_spread": 3.0, "center_norm": 4.0}]}
  ],
  "probe": {
    "dataset": {"id": "probe-meta", "class_count": 10, "feature_dim": 6,
                "samples_per_class": 20, "proto_spread": 2.0},
    "hidden": [16], "batch_size": 32, "lr": 0.5, "max_epochs": 60, "target_accuracy": 0.6
  },
  "diversity": {"num_batches": 4, "mc_draws": 2, "head_steps": 15, "head_lr": 0.2,
                "n_way": 3, "k_shot": 2, "q_size": 4},
  "learners": [
    {"algorithm": "pt", "inner_steps": 3, "inner_lr": 0.1, "outer_lr": 0.01,
     "n_way": 3, "k_shot": 2, "q_size": 4, "meta_batch_size": 2, "total_outer_steps": 6},
    {"algorithm": "ho-maml", "inner_steps": 2, "inner_lr": 0.05, "outer_lr": 0.01,
     "n_way": 3, "k_shot": 2, "q_size": 4, "meta_batch_size": 2, "total_outer_steps": 6}
  ],
  "train": {"hidden": [10], "checkpoint_interval": 2},
  "eval": {"num_episodes": 5}
})json";

ExperimentConfig tiny(const fs::path& out) {
  ExperimentConfig c = ExperimentConfig::from_json_text(kTinyJson);
  c.output_dir = out;
  return c;
}

}  // namespace

TEST_CASE("defaults validate and survive a json round trip") {
  const ExperimentConfig a = ExperimentConfig::defaults();
  a.validate();
  const ExperimentConfig b = ExperimentConfig::from_json_text(a.to_json_text());
  CHECK(a.config_hash() == b.config_hash());
  CHECK(a.to_json_text() == b.to_json_text());
  CHECK(b.datasets.size() == a.datasets.size());
  CHECK(b.learners.size() == 5);
}

TEST_CASE("config hash tracks science knobs and ignores plumbing") {
  const ExperimentConfig base = tiny("out-a");
  ExperimentConfig moved = base;
  moved.output_dir = "somewhere/else";
  moved.data_dir = "third/place";
  moved.workers = 9;
  CHECK(moved.config_hash() == base.config_hash());

  ExperimentConfig reseeded = base;
  reseeded.master_seed = 8;
  CHECK(reseeded.config_hash() != base.config_hash());

  ExperimentConfig respread = base;
  respread.datasets[0].proto_spread = 1.5;
  CHECK(respread.config_hash() != base.config_hash());

  ExperimentConfig relabeled = base;
  relabeled.diversity.label_mode = LabelMode::kEmpirical;
  CHECK(relabeled.config_hash() != base.config_hash());

  ExperimentConfig retuned = base;
  retuned.learners[1].inner_lr = 0.25;
  CHECK(retuned.config_hash() != base.config_hash());

  ExperimentConfig loosened = base;
  loosened.uncontrolled = true;
  CHECK(loosened.config_hash() != base.config_hash());
}

TEST_CASE("config parser rejects malformed input") {
  CHECK_THROWS_AS((void)ExperimentConfig::from_json_text("{not json"), ConfigError);
  CHECK_THROWS_WITH_AS(
      (void)ExperimentConfig::from_json_text(R"({"typo_key": 1})"),
      doctest::Contains("typo_key"), ConfigError);
  CHECK_THROWS_AS((void)ExperimentConfig::from_json_text(R"({"datasets": []})"), ConfigError);
  CHECK_THROWS_WITH_AS(
      (void)ExperimentConfig::from_json_text(
          R"({"datasets": [{"id": "x", "class_count": 10, "feature_dim": 4,
               "samples_per_class": 8}]})"),
      doctest::Contains("proto_spread"), ConfigError);
  CHECK_THROWS_WITH_AS(
      (void)ExperimentConfig::from_json_text(
          R"({"diversity": {"pairing": "every-other"}})"),
      doctest::Contains("every-other"), ConfigError);
  CHECK_THROWS_WITH_AS(
      (void)ExperimentConfig::from_json_text(
          R"({"learners": [{"algorithm": "so-maml"}]})"),
      doctest::Contains("so-maml"), ConfigError);

  json dup = json::parse(kTinyJson);
  dup["datasets"][1]["id"] = "blob-a";
  CHECK_THROWS_WITH_AS((void)ExperimentConfig::from_json_text(dup.dump()),
                       doctest::Contains("duplicate dataset id"), ConfigError);

  json twice = json::parse(kTinyJson);
  twice["learners"][1] = twice["learners"][0];
  CHECK_THROWS_WITH_AS((void)ExperimentConfig::from_json_text(twice.dump()),
                       doctest::Contains("duplicate learner label"), ConfigError);
}

TEST_CASE("controlled and uncontrolled step budgets") {
  const ExperimentConfig c = tiny("out-b");
  const auto specs = c.resolved_datasets();
  CHECK(c.steps_for(c.learners[0], specs[0]) == 6);
  CHECK(c.steps_for(c.learners[0], specs[1]) == 6);

  ExperimentConfig u = c;
  u.uncontrolled = true;
  // train rows: blob-a 9*20=180, blob-b 9*40=360, mix 9*20=180
  CHECK(u.steps_for(u.learners[0], specs[0]) == 3);
  CHECK(u.steps_for(u.learners[0], specs[1]) == 6);
  CHECK(u.steps_for(u.learners[0], specs[2]) == 3);
}

TEST_CASE("seed resolution is derived per stage label") {
  const ExperimentConfig c = tiny("out-c");
  const auto specs = c.resolved_datasets();
  CHECK(specs[0].seed != 0);
  CHECK(specs[0].seed != specs[1].seed);
  CHECK(specs[2].generators[0].seed != specs[2].generators[1].seed);
  CHECK(c.resolved_probe_dataset().seed != specs[0].seed);

  ExperimentConfig other = c;
  other.master_seed = 8;
  CHECK(other.resolved_datasets()[0].seed != specs[0].seed);
}

TEST_CASE("gen-data writes manifest and regenerates bit-identically") {
  const fs::path out = fresh_dir("gen");
  const ExperimentConfig c = tiny(out);
  cmd_gen_data(c, false);

  const OutputPaths paths = OutputPaths::from(c);
  REQUIRE(fs::exists(paths.manifest));
  for (const char* id : {"blob-a", "blob-b", "mix", "probe-meta"}) {
    CHECK(fs::exists(paths.dataset_file(id)));
  }
  const json manifest = json::parse(slurp(paths.manifest));
  CHECK(manifest.at("config_hash").get<std::string>() == c.config_hash());
  CHECK(manifest.at("datasets").size() == 4);
  CHECK(manifest.at("datasets").back().at("role") == "probe");

  const std::string before = slurp(paths.dataset_file("blob-a"));
  const std::string manifest_before = slurp(paths.manifest);
  fs::remove(paths.dataset_file("blob-a"));
  cmd_gen_data(c, false);  // only the missing file is rebuilt
  CHECK(slurp(paths.dataset_file("blob-a")) == before);
  CHECK(slurp(paths.manifest) == manifest_before);

  const auto untouched = fs::last_write_time(paths.dataset_file("blob-b"));
  cmd_gen_data(c, false);
  CHECK(fs::last_write_time(paths.dataset_file("blob-b")) == untouched);
}

TEST_CASE("gen-data refuses foreign outputs unless forced") {
  const fs::path out = fresh_dir("gen-collide");
  const ExperimentConfig c = tiny(out);
  cmd_gen_data(c, false);

  ExperimentConfig other = c;
  other.master_seed = 8;
  CHECK_THROWS_WITH_AS(cmd_gen_data(other, false), doctest::Contains("master_seed"),
                       ConfigError);

  const OutputPaths paths = OutputPaths::from(c);
  const std::string old_bytes = slurp(paths.dataset_file("blob-a"));
  cmd_gen_data(other, true);
  CHECK(slurp(paths.dataset_file("blob-a")) != old_bytes);
  CHECK(json::parse(slurp(paths.manifest)).at("master_seed") == 8);

  // data files without a manifest are treated as a collision
  fs::remove(paths.manifest);
  CHECK_THROWS_WITH_AS(cmd_gen_data(other, false), doctest::Contains("manifest"), ConfigError);
  cmd_gen_data(other, true);
  CHECK(fs::exists(paths.manifest));
}

TEST_CASE("stages name their missing prerequisites") {
  const fs::path out = fresh_dir("missing");
  const ExperimentConfig c = tiny(out);

  CHECK_THROWS_WITH_AS(cmd_pretrain_probe(c, false), doctest::Contains("gen-data"),
                       MissingInputError);

  cmd_gen_data(c, false);
  CHECK_THROWS_WITH_AS(cmd_diversity(c, false), doctest::Contains("pretrain-probe"),
                       MissingInputError);

  try {
    cmd_evaluate(c, false);
    FAIL("evaluate should require checkpoints");
  } catch (const MissingInputError& e) {
    const std::string what = e.what();
    CHECK(what.find("pt/blob-a") != std::string::npos);
    CHECK(what.find("ho-maml-2/mix") != std::string::npos);
    CHECK(what.find("divlab train") != std::string::npos);
  }

  try {
    cmd_correlate(c, false);
    FAIL("correlate should require both CSVs");
  } catch (const MissingInputError& e) {
    const std::string what = e.what();
    CHECK(what.find("diversity.csv") != std::string::npos);
    CHECK(what.find("eval.csv") != std::string::npos);
  }
}

TEST_CASE("run-all produces the full artifact tree and skips when current") {
  const fs::path out = fresh_dir("runall");
  const ExperimentConfig c = tiny(out);
  cmd_run_all(c, false);

  const OutputPaths paths = OutputPaths::from(c);
  for (const fs::path& p :
       {paths.manifest, paths.probe_stage, paths.diversity_csv, paths.eval_csv,
        paths.report_points_csv, paths.report_summary_csv, paths.report_json}) {
    CHECK(fs::exists(p));
  }
  REQUIRE(fs::exists(paths.final_checkpoint("pt", "blob-a").string() + ".dvpv"));
  REQUIRE(fs::exists(paths.final_checkpoint("ho-maml-2", "mix").string() + ".json"));

  const std::string div1 = slurp(paths.diversity_csv);
  const std::string eval1 = slurp(paths.eval_csv);
  const std::string points1 = slurp(paths.report_points_csv);
  const auto ckpt_time =
      fs::last_write_time(paths.final_checkpoint("ho-maml-2", "blob-b").string() + ".dvpv");
  const auto div_time = fs::last_write_time(paths.diversity_csv);

  cmd_run_all(c, false);  // idempotent: no retraining, no re-measurement
  CHECK(slurp(paths.diversity_csv) == div1);
  CHECK(slurp(paths.eval_csv) == eval1);
  CHECK(slurp(paths.report_points_csv) == points1);
  CHECK(fs::last_write_time(paths.final_checkpoint("ho-maml-2", "blob-b").string() +
                            ".dvpv") == ckpt_time);
  CHECK(fs::last_write_time(paths.diversity_csv) == div_time);

  // a fresh directory with the same seed reproduces every byte
  const fs::path out2 = fresh_dir("runall-again");
  ExperimentConfig c2 = tiny(out2);
  cmd_run_all(c2, false);
  const OutputPaths paths2 = OutputPaths::from(c2);
  CHECK(slurp(paths2.diversity_csv) == div1);
  CHECK(slurp(paths2.eval_csv) == eval1);
  CHECK(slurp(paths2.report_points_csv) == points1);
}

TEST_CASE("interrupted training resumes to bit-identical checkpoints") {
  const fs::path out = fresh_dir("resume");
  const ExperimentConfig c = tiny(out);
  cmd_gen_data(c, false);
  cmd_pretrain_probe(c, false);
  cmd_train(c, false);

  const OutputPaths paths = OutputPaths::from(c);
  const fs::path final_base = paths.final_checkpoint("ho-maml-2", "blob-a");
  const std::string params = slurp(final_base.string() + ".dvpv");
  const std::string meta = slurp(final_base.string() + ".json");

  // drop the tail of the run and let the stage pick up from step 4
  fs::remove(final_base.string() + ".dvpv");
  fs::remove(final_base.string() + ".json");
  const fs::path last_mark = paths.step_checkpoint("ho-maml-2", "blob-a", 6);
  fs::remove(last_mark.string() + ".dvpv");
  fs::remove(last_mark.string() + ".json");
  REQUIRE(fs::exists(paths.step_checkpoint("ho-maml-2", "blob-a", 4).string() + ".dvpv"));

  cmd_train(c, false);
  CHECK(slurp(final_base.string() + ".dvpv") == params);
  CHECK(slurp(final_base.string() + ".json") == meta);
}

TEST_CASE("train refuses checkpoints from a different config") {
  const fs::path out = fresh_dir("stale-train");
  const ExperimentConfig c = tiny(out);
  cmd_gen_data(c, false);
  cmd_pretrain_probe(c, false);
  cmd_train(c, false);

  ExperimentConfig other = c;
  other.learners[0].inner_lr = 0.5;
  cmd_gen_data(other, true);
  CHECK_THROWS_WITH_AS(cmd_train(other, false), doctest::Contains("inner_lr"), ConfigError);
  cmd_train(other, true);  // force wipes and retrains

  const OutputPaths paths = OutputPaths::from(other);
  const Checkpoint done = load_checkpoint(paths.final_checkpoint("pt", "blob-a"));
  CHECK(done.config.inner_lr == 0.5);
}

TEST_CASE("worker count changes throughput, not numbers") {
  const fs::path out1 = fresh_dir("w1");
  const fs::path out2 = fresh_dir("w2");
  ExperimentConfig c1 = tiny(out1);
  ExperimentConfig c2 = tiny(out2);
  c2.workers = 2;
  REQUIRE(c1.config_hash() == c2.config_hash());
  cmd_run_all(c1, false);
  cmd_run_all(c2, false);
  const OutputPaths p1 = OutputPaths::from(c1);
  const OutputPaths p2 = OutputPaths::from(c2);
  CHECK(slurp(p1.diversity_csv) == slurp(p2.diversity_csv));
  CHECK(slurp(p1.eval_csv) == slurp(p2.eval_csv));
  CHECK(slurp(p1.report_points_csv) == slurp(p2.report_points_csv));
  CHECK(slurp(p1.report_summary_csv) == slurp(p2.report_summary_csv));
}

TEST_CASE("uncontrolled budgets land in provenance and eval rows") {
  const fs::path out = fresh_dir("uncontrolled");
  ExperimentConfig c = tiny(out);
  c.uncontrolled = true;
  cmd_run_all(c, false);

  const OutputPaths paths = OutputPaths::from(c);
  const json prov_a = json::parse(slurp(paths.cell_provenance("pt", "blob-a")));
  const json prov_b = json::parse(slurp(paths.cell_provenance("pt", "blob-b")));
  CHECK(prov_a.at("uncontrolled") == true);
  CHECK(prov_a.at("total_outer_steps") == 3);
  CHECK(prov_b.at("total_outer_steps") == 6);

  std::istringstream eval_csv(slurp(paths.eval_csv));
  std::string line;
  std::getline(eval_csv, line);  // hash comment
  std::getline(eval_csv, line);  // header
  int checked = 0;
  while (std::getline(eval_csv, line)) {
    std::vector<std::string> f;
    std::istringstream row(line);
    std::string field;
    while (std::getline(row, field, ',')) f.push_back(field);
    REQUIRE(f.size() == 7);
    if (f[1] == "blob-b") {
      CHECK(f[6] == "6");
    } else {
      CHECK(f[6] == "3");
    }
    ++checked;
  }
  CHECK(checked == 6);
}

TEST_CASE("correlate joins its own CSVs and the report re-fits exactly") {
  const fs::path out = fresh_dir("correlate");
  const ExperimentConfig c = tiny(out);
  cmd_run_all(c, false);

  const OutputPaths paths = OutputPaths::from(c);
  const json report = json::parse(slurp(paths.report_json));
  CHECK(report.at("config_hash") == c.config_hash());
  CHECK(report.at("points").size() == 6);  // 2 learners x 3 datasets
  REQUIRE(report.at("summary").size() == 2);

  for (const json& s : report.at("summary")) {
    std::vector<double> xs, acc, loss;
    for (const json& p : report.at("points")) {
      if (p.at("learner_label") != s.at("learner_label")) continue;
      xs.push_back(p.at("diversity_mean").get<double>());
      acc.push_back(p.at("accuracy").get<double>());
      loss.push_back(p.at("ce_loss").get<double>());
    }
    REQUIRE(xs.size() == 3);
    const LinearFit fa = fit_linear_r2(xs, acc);
    const LinearFit fl = fit_linear_r2(xs, loss);
    CHECK(s.at("slope_acc").get<double>() == doctest::Approx(fa.slope).epsilon(1e-15));
    CHECK(s.at("r2_acc").get<double>() == doctest::Approx(fa.r2).epsilon(1e-15));
    CHECK(s.at("slope_loss").get<double>() == doctest::Approx(fl.slope).epsilon(1e-15));
    CHECK(s.at("r2_loss").get<double>() == doctest::Approx(fl.r2).epsilon(1e-15));
    CHECK(s.at("trend_acc").at("residuals").size() == 3);
  }
  CHECK(report.at("full_scale_reference").at("diversity").size() == 12);
  CHECK(report.at("full_scale_reference").at("r2").size() == 5);

  // stale upstream CSVs are refused, not silently joined
  std::string div = slurp(paths.diversity_csv);
  div.replace(div.find('=') + 1, 16, "0000000000000000");
  spit(paths.diversity_csv, div);
  fs::remove(paths.report_json);
  CHECK_THROWS_WITH_AS(cmd_correlate(c, false), doctest::Contains("different config"),
                       ConfigError);
}

TEST_CASE("report CSV numbers round-trip exactly") {
  const fs::path out = fresh_dir("roundtrip");
  const ExperimentConfig c = tiny(out);
  cmd_run_all(c, false);

  const OutputPaths paths = OutputPaths::from(c);
  const json report = json::parse(slurp(paths.report_json));
  std::istringstream csv(slurp(paths.report_points_csv));
  std::string line;
  std::getline(csv, line);
  std::getline(csv, line);
  size_t i = 0;
  while (std::getline(csv, line)) {
    std::vector<std::string> f;
    std::istringstream row(line);
    std::string field;
    while (std::getline(row, field, ',')) f.push_back(field);
    REQUIRE(f.size() == 7);
    const json& p = report.at("points").at(i);
    CHECK(std::strtod(f[2].c_str(), nullptr) == p.at("diversity_mean").get<double>());
    CHECK(std::strtod(f[4].c_str(), nullptr) == p.at("accuracy").get<double>());
    CHECK(std::strtod(f[6].c_str(), nullptr) == p.at("ce_loss").get<double>());
    ++i;
  }
  CHECK(i == 6);
}

TEST_CASE("format_csv_double is a shortest exact decimal") {
  Rng rng(99);
  for (int i = 0; i < 1000; ++i) {
    double v = (rng.uniform01() - 0.5) * std::pow(10.0, static_cast<int>(rng.below(25)) - 12);
    const std::string s = format_csv_double(v);
    CHECK(std::strtod(s.c_str(), nullptr) == v);
  }
  CHECK(format_csv_double(0.0) == "0");
  CHECK(format_csv_double(0.1) == "0.1");
  CHECK(format_csv_double(1.0 / 3.0) == "0.3333333333333333");
}

TEST_CASE("parallel_for covers every index once and reports the lowest failure") {
  std::vector<std::atomic<int>> hits(101);
  for (auto& h : hits) h = 0;
  parallel_for(101, 3, [&](int64_t i) { hits[static_cast<size_t>(i)]++; });
  for (const auto& h : hits) CHECK(h.load() == 1);

  parallel_for(0, 4, [&](int64_t) { FAIL("no work expected"); });

  CHECK_THROWS_WITH_AS(
      parallel_for(20, 4,
                   [&](int64_t i) {
                     if (i % 2 == 1) {
                       throw ContractError("boom at " + std::to_string(i));
                     }
                   }),
      doctest::Contains("boom at 1"), ContractError);
}

TEST_CASE("output paths are stable") {
  ExperimentConfig c = tiny("lab-out");
  c.data_dir.clear();
  const OutputPaths p = OutputPaths::from(c);
  CHECK(p.data_dir == fs::path("lab-out") / "data");
  CHECK(p.dataset_file("blob-a").filename() == "blob-a.dvds");
  CHECK(p.step_checkpoint("pt", "blob-a", 4).filename() == "step-000004");
  CHECK(p.final_checkpoint("ho-maml-2", "mix").parent_path().filename() == "mix");

  c.data_dir = "elsewhere/data";
  CHECK(OutputPaths::from(c).data_dir == fs::path("elsewhere/data"));
}

TEST_CASE("spread-0 dataset flows through the pipeline and reads as the floor") {
  ExperimentConfig c = tiny(fresh_dir("spread0"));
  SyntheticSpec zero = c.datasets.front();
  zero.id = "blob-0";
  zero.proto_spread = 0.0;
  c.datasets.push_back(zero);
  cmd_gen_data(c, false);
  cmd_pretrain_probe(c, false);
  cmd_diversity(c, false);

  const OutputPaths paths = OutputPaths::from(c);
  CHECK(slurp(paths.manifest).find("blob-0") != std::string::npos);
  std::istringstream csv(slurp(paths.diversity_csv));
  std::string line;
  double zero_mean = -1.0;
  while (std::getline(csv, line)) {
    if (line.rfind("blob-0,", 0) == 0) zero_mean = std::stod(line.substr(line.find(',') + 1));
  }
  REQUIRE(zero_mean >= 0.0);
  CHECK(zero_mean <= 1.0);
  fs::remove_all(c.output_dir);

  // Ordering needs the default-scale estimator; the tiny settings above are
  // plumbing-sized, not measurement-sized. The zero-spread dataset bottoms
  // out at the sampling floor: statistically at/below the smallest positive
  // level, far below the widest one.
  const ExperimentConfig d = ExperimentConfig::defaults();
  DatasetHandle meta = generate_synthetic(d.resolved_probe_dataset());
  ProbeTrainConfig pc = d.probe;
  pc.seed = derive_seed(d.master_seed, "probe");
  const ProbeNetwork probe = pretrain_probe(meta, pc);
  auto grid_blob = [&](double spread) {
    SyntheticSpec s = d.datasets.front();
    s.id = "floor-check";
    s.proto_spread = spread;
    s.seed = 777;
    return generate_synthetic(s);
  };
  DiversityConfig dc;
  const DiversityEstimate at0 = diversity_coefficient(grid_blob(0.0), probe, dc, 31);
  const DiversityEstimate at05 = diversity_coefficient(grid_blob(0.5), probe, dc, 31);
  const DiversityEstimate at4 = diversity_coefficient(grid_blob(4.0), probe, dc, 31);
  CHECK(at0.mean <= at05.mean + at05.ci_half_width);
  CHECK(at0.mean + at0.ci_half_width < at4.mean - at4.ci_half_width);
}
