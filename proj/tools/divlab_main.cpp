#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "divlab/errors.hpp"
#include "divlab/experiment.hpp"

namespace {

using divlab::ExperimentConfig;
using nlohmann::json;

struct CliOptions {
  std::string config_path;
  std::string out_dir;
  std::string data_dir;
  uint64_t seed = 0;
  int64_t workers = 0;
  bool uncontrolled = false;
  bool force = false;
  std::string label_mode;
  std::vector<std::string> sets;
};

json base_config_json(const CliOptions& opt) {
  std::string text;
  if (opt.config_path.empty()) {
    text = ExperimentConfig::defaults().to_json_text();
  } else {
    std::ifstream in(opt.config_path, std::ios::binary);
    if (!in) {
      throw divlab::MissingInputError("config file '" + opt.config_path + "' not found");
    }
    std::ostringstream buf;
    buf << in.rdbuf();
    text = buf.str();
  }
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw divlab::ConfigError(std::string("config: not valid JSON: ") + e.what());
  }
}

// --set dotted.path=value; value parsed as JSON, else taken as a string
void apply_set(json& root, const std::string& entry) {
  const size_t eq = entry.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw divlab::ConfigError("--set expects dotted.path=value, got '" + entry + "'");
  }
  std::string path = "/" + entry.substr(0, eq);
  for (char& ch : path) {
    if (ch == '.') ch = '/';
  }
  const std::string raw = entry.substr(eq + 1);
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::exception&) {
    value = raw;
  }
  try {
    root[json::json_pointer(path)] = value;
  } catch (const json::exception& e) {
    throw divlab::ConfigError("--set '" + entry + "': " + e.what());
  }
}

ExperimentConfig build_config(const CliOptions& opt, const CLI::App& app) {
  json base = base_config_json(opt);
  const bool out_in_file = base.contains("output_dir");
  bool out_in_set = false;
  for (const std::string& s : opt.sets) {
    if (s.rfind("output_dir=", 0) == 0) out_in_set = true;
    apply_set(base, s);
  }

  ExperimentConfig cfg = ExperimentConfig::from_json_text(base.dump());

  if (app.count("--out-dir") > 0) {
    cfg.output_dir = opt.out_dir;
  } else if (!out_in_file && !out_in_set) {
    if (const char* env = std::getenv("DIVLAB_OUT"); env != nullptr && *env != '\0') {
      cfg.output_dir = env;
    }
  }
  if (app.count("--data-dir") > 0) cfg.data_dir = opt.data_dir;
  if (app.count("--seed") > 0) cfg.master_seed = opt.seed;
  if (app.count("--workers") > 0) cfg.workers = opt.workers;
  if (opt.uncontrolled) cfg.uncontrolled = true;
  if (app.count("--label-mode") > 0) {
    cfg.diversity.label_mode = divlab::label_mode_from_name(opt.label_mode);
  }
  cfg.validate();
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"divlab: diversity coefficient laboratory for few-shot learning"};
  app.require_subcommand(1);

  CliOptions opt;
  app.add_option("--config", opt.config_path, "JSON experiment config")
      ->option_text("FILE");
  app.add_option("--out-dir", opt.out_dir, "output root (overrides config and DIVLAB_OUT)");
  app.add_option("--data-dir", opt.data_dir, "dataset directory (default <out-dir>/data)");
  app.add_option("--seed", opt.seed, "master seed");
  app.add_option("--workers", opt.workers, "worker threads");
  app.add_flag("--uncontrolled", opt.uncontrolled,
               "scale outer steps with train-split size instead of a fixed budget");
  app.add_flag("--force", opt.force, "overwrite outputs from a different config");
  app.add_option("--label-mode", opt.label_mode,
                 "FIM label source: sampled or empirical");
  app.add_option("--set", opt.sets, "override a config field, e.g. --set eval.num_episodes=50")
      ->option_text("PATH=VALUE")
      ->allow_extra_args(false);

  void (*stages[])(const ExperimentConfig&, bool) = {
      divlab::cmd_gen_data, divlab::cmd_pretrain_probe, divlab::cmd_diversity,
      divlab::cmd_train,    divlab::cmd_evaluate,       divlab::cmd_correlate,
      divlab::cmd_run_all};
  const char* names[] = {"gen-data", "pretrain-probe", "diversity", "train",
                         "evaluate", "correlate",      "run-all"};
  const char* briefs[] = {"generate the synthetic dataset grid",
                          "train the shared probe network",
                          "estimate diversity coefficients",
                          "train all (learner x dataset) cells",
                          "evaluate final checkpoints on test episodes",
                          "regress performance on diversity",
                          "run every stage in order"};
  for (size_t i = 0; i < 7; ++i) app.add_subcommand(names[i], briefs[i]);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << "divlab: " << e.what() << "\n";
    return 2;
  }

  try {
    const ExperimentConfig cfg = build_config(opt, app);
    for (size_t i = 0; i < 7; ++i) {
      if (app.got_subcommand(names[i])) {
        stages[i](cfg, opt.force);
        return 0;
      }
    }
    std::cerr << "divlab: no subcommand\n";
    return 2;
  } catch (const divlab::ConfigError& e) {
    std::cerr << "divlab: " << e.what() << "\n";
    return 2;
  } catch (const divlab::MissingInputError& e) {
    std::cerr << "divlab: " << e.what() << "\n";
    return 3;
  } catch (const divlab::FormatError& e) {
    std::cerr << "divlab: " << e.what() << "\n";
    return 3;
  } catch (const divlab::NumericError& e) {
    std::cerr << "divlab: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "divlab: " << e.what() << "\n";
    return 1;
  }
}
