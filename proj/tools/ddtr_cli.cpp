// ddtr: synthetic data, training, evaluation and ablation sweeps.
//
// Exit codes: 0 success, 1 validation error, 2 runtime failure.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <iterator>
#include <optional>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "ddtr/config.hpp"
#include "ddtr/dataset_io.hpp"
#include "ddtr/experiment.hpp"
#include "ddtr/report.hpp"
#include "ddtr/weights_io.hpp"

namespace fs = std::filesystem;
using namespace ddtr;

namespace {

struct Options {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out = "out";
  std::string dataset;
  std::string weights;
  std::string axis;
  std::size_t trials = 10;
  std::string rows;
};

ExperimentConfig load(const Options& o) {
  ExperimentConfig cfg = o.config.empty() ? ExperimentConfig{} : load_config(o.config);
  if (!o.dataset.empty()) cfg.dataset_path = o.dataset;
  cfg.validate();
  return cfg;
}

void write_file(const fs::path& file, const std::string& text) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + file.string());
  out << text;
  if (!out) throw std::runtime_error("failed writing " + file.string());
}

std::string read_file(const fs::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw ConfigError("cannot read " + file.string());
  return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

// A dataset directory either holds the split itself or train/ and eval/.
std::vector<AnnotatedImage> split(const ExperimentConfig& cfg, const char* name) {
  if (!cfg.dataset_path) {
    const DataSplits s = load_splits(cfg);
    return std::string(name) == "train" ? s.train : s.eval;
  }
  const fs::path root(*cfg.dataset_path);
  return read_dataset(fs::is_directory(root / name) ? root / name : root);
}

std::string metrics_json(const MetricValues& m) {
  nlohmann::json j = nlohmann::json::object();
  const auto values = m.as_list();
  for (std::size_t i = 0; i < values.size(); ++i) {
    j[MetricValues::names()[i]] = values[i] ? nlohmann::json(*values[i]) : nlohmann::json(nullptr);
  }
  return j.dump(2) + "\n";
}

void cmd_synth(const Options& o) {
  const ExperimentConfig cfg = load(o);
  const DataSplits s = load_splits(cfg);
  write_dataset(s.train, fs::path(o.out) / "train");
  write_dataset(s.eval, fs::path(o.out) / "eval");
  std::cout << "wrote " << s.train.size() << " train and " << s.eval.size() << " eval images to " << o.out << "\n";
}

void cmd_train(const Options& o) {
  const ExperimentConfig cfg = load(o);
  const std::uint64_t seed = o.seed.value_or(cfg.seeds.front());
  const TrainResult r = train(cfg, seed, split(cfg, "train"));
  const fs::path out(o.out);
  fs::create_directories(out);
  save_weights(r.model->parameters(), out / "weights.ddtr");
  std::string csv = "step,learning_rate,total,classification,localization\n";
  for (const auto& t : r.trace) {
    csv += std::to_string(t.step) + ',' + format_number(t.learning_rate) + ',' + format_number(t.total) + ',' +
           format_number(t.classification) + ',' + format_number(t.localization) + '\n';
  }
  write_file(out / "trace.csv", csv);
  const nlohmann::json meta{{"seed", seed},
                            {"digest", config_digest(cfg)},
                            {"steps", cfg.training.steps},
                            {"drop_step", r.drop_step},
                            {"learning_rate", cfg.training.learning_rate},
                            {"dropped_learning_rate", cfg.training.learning_rate * cfg.training.lr_drop_factor}};
  write_file(out / "trace.json", meta.dump(2) + "\n");
  write_file(out / "config.json", config_to_json(cfg));
  std::cout << "final loss " << format_number(r.trace.back().total) << "; weights in " << (out / "weights.ddtr").string()
            << "\n";
}

void cmd_eval(const Options& o) {
  if (o.weights.empty()) throw ConfigError("eval: --weights is required");
  const ExperimentConfig cfg = load(o);
  DeformableDetr model(cfg.model, 0);
  load_weights(model.parameters(), o.weights);
  const auto images = split(cfg, "eval");
  const Evaluation e = evaluate(model, images);
  const fs::path out(o.out);
  fs::create_directories(out);
  write_file(out / "predictions.jsonl", predictions_jsonl(e.predictions));
  const std::string metrics = metrics_json(e.metrics);
  write_file(out / "metrics.json", metrics);
  std::cout << metrics;
}

void cmd_ablate(const Options& o) {
  if (o.axis.empty()) throw ConfigError("ablate: --axis is required");
  const Axis axis = parse_axis(o.axis);
  ExperimentConfig cfg = load(o);
  if (o.seed) cfg.seeds = {*o.seed};
  const std::size_t jobs = job_count();
  ablation_grid(axis, cfg);
  const auto rows = ablate(axis, cfg, load_splits(cfg), jobs);
  write_report(rows, o.out);
  std::cout << rows_to_csv(rows);
}

void cmd_search(const Options& o) {
  const ExperimentConfig cfg = load(o);
  const std::size_t jobs = job_count();
  const SearchResult r = hp_search(o.trials, cfg, load_splits(cfg), o.seed.value_or(0), jobs);
  const fs::path out(o.out);
  fs::create_directories(out);
  nlohmann::json board = nlohmann::json::array();
  for (const auto& t : r.leaderboard) {
    board.push_back({{"trial", t.index},
                     {"fauc_1_10", t.fauc ? nlohmann::json(*t.fauc) : nlohmann::json(nullptr)},
                     {"config", nlohmann::json::parse(config_to_json(t.config))}});
  }
  write_file(out / "leaderboard.json", board.dump(2) + "\n");
  write_file(out / "best_config.json", config_to_json(r.best));
  std::cout << "best trial " << r.leaderboard.front().index << "\n";
}

void cmd_report(const Options& o) {
  if (o.rows.empty()) throw ConfigError("report: --rows <results.json> is required");
  const auto rows = rows_from_json(read_file(o.rows));
  write_report(rows, o.out);
  std::cout << rows_to_csv(rows);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Deformable DETR ablation harness"};
  app.require_subcommand(1);
  Options o;
  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config, "Experiment config JSON");
    sub->add_option("--seed", o.seed, "Seed override");
    sub->add_option("--out", o.out, "Output directory");
    sub->add_option("--dataset", o.dataset, "Dataset directory (train/ and eval/ splits)");
  };
  auto* synth = app.add_subcommand("synth", "Generate synthetic train/eval splits");
  auto* train_cmd = app.add_subcommand("train", "Train one seed");
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate saved weights");
  auto* ablate_cmd = app.add_subcommand("ablate", "Run one ablation axis at all seeds");
  auto* search_cmd = app.add_subcommand("search", "Random hyperparameter search");
  auto* report_cmd = app.add_subcommand("report", "Re-emit CSV/JSON/plot files from saved rows");
  for (auto* s : {synth, train_cmd, eval_cmd, ablate_cmd, search_cmd, report_cmd}) common(s);
  eval_cmd->add_option("--weights", o.weights, "Weights container")->required();
  ablate_cmd->add_option("--axis", o.axis, "resolution | encoder_layers | feature_levels | num_queries | decoding")
      ->required();
  search_cmd->add_option("--trials", o.trials, "Number of sampled configurations");
  report_cmd->add_option("--rows", o.rows, "results.json written by ablate")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*synth) cmd_synth(o);
    else if (*train_cmd) cmd_train(o);
    else if (*eval_cmd) cmd_eval(o);
    else if (*ablate_cmd) cmd_ablate(o);
    else if (*search_cmd) cmd_search(o);
    else if (*report_cmd) cmd_report(o);
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "failure: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
