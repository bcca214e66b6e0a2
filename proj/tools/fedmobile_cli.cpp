// Command-line front end: run experiments, sweep hyperparameters, generate
// synthetic datasets and evaluate saved models.

#include <CLI11.hpp>
#include <cstdint>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "fedmobile/fedmobile.hpp"

namespace {

using namespace fedmobile;

std::string read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// "--config default" uses the built-in defaults without touching the disk.
ExperimentConfig load_config(const std::string& config_arg,
                             const std::vector<std::string>& overrides,
                             const std::vector<std::uint64_t>& seeds, const std::string& algo,
                             const std::string& out_dir) {
  ExperimentConfig cfg;
  if (!config_arg.empty() && config_arg != "default") cfg = parse_config(read_file(config_arg));
  for (const auto& o : overrides) apply_override(cfg, o);
  if (!seeds.empty()) cfg.seeds = seeds;
  if (!algo.empty()) cfg.algorithm = algorithm_from_name(algo);
  if (!out_dir.empty()) cfg.output_dir = out_dir;
  cfg.validate();
  return cfg;
}

int cmd_run(const ExperimentConfig& cfg, bool save_models) {
  std::vector<ResultRow> rows = run_experiment(cfg);
  write_results(rows, cfg.output_dir);
  if (save_models) {
    for (std::uint64_t seed : cfg.seeds) {
      SeedRunOutput out = run_single_seed(cfg, seed);
      save_model(out.final_model, cfg.output_dir + "/model_" + algorithm_name(cfg.algorithm) +
                                      "_" + model_kind_name(cfg.model_kind) + "_seed" +
                                      std::to_string(seed) + ".txt");
    }
  }
  std::cout << "wrote " << rows.size() << " result rows to " << cfg.output_dir << "\n";
  return 0;
}

int cmd_sweep(const ExperimentConfig& cfg, const std::string& param,
              const std::vector<double>& grid) {
  SweepSpec spec{param, grid};
  std::vector<SweepRow> table = sweep_hyperparams(cfg, spec);
  write_sweep_results(table, spec, cfg.output_dir);
  for (const auto& row : table)
    std::cout << param << "=" << row.value << "  f1=" << row.test_metrics.f1.mean << " +- "
              << row.test_metrics.f1.std << "\n";
  return 0;
}

int cmd_gen_data(const ExperimentConfig& cfg, const std::string& out_file) {
  GeneratorConfig gen = cfg.effective_gen();
  gen.seed = cfg.seeds.front();
  std::vector<StreamBatch> stream = generate_stream(gen, cfg.fl.stream_batches + 1);
  write_dataset(flatten(stream), out_file);
  std::cout << "wrote " << flatten(stream).size() << " samples to " << out_file << "\n";
  return 0;
}

int cmd_eval(const std::string& model_path, const std::string& data_path) {
  ModelParams params = load_model(model_path);
  std::vector<Sample> samples = read_dataset(data_path);
  std::vector<const Sample*> ptrs;
  for (const auto& s : samples) ptrs.push_back(&s);
  MetricsReport report = evaluate(params, ptrs);
  std::cout << "samples=" << samples.size() << " labeled="
            << report.counts.total() << "\n";
  std::cout << "precision=" << report.precision << " recall=" << report.recall
            << " f1=" << report.f1 << " pr_auc=" << report.pr_auc << "\n";
  std::cout << "tp=" << report.counts.tp << " fp=" << report.counts.fp
            << " fn=" << report.counts.fn << " tn=" << report.counts.tn << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Incremental semi-supervised federated learning simulator"};
  app.require_subcommand(1);

  std::string config_arg = "default";
  std::vector<std::string> overrides;
  std::vector<std::uint64_t> seeds;
  std::string algo, out_dir;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", config_arg, "config file path, or 'default'");
    cmd->add_option("--override", overrides, "key=value override, repeatable");
    cmd->add_option("--seed", seeds, "seed list");
    cmd->add_option("--algo", algo, "algorithm: fedmobile|centralized|fedavg|fedsem_ft");
    cmd->add_option("--out", out_dir, "output directory");
  };

  CLI::App* run = app.add_subcommand("run", "run an experiment over the configured seeds");
  bool save_models = false;
  add_common(run);
  run->add_flag("--save-models", save_models, "save the final model of every seed");

  CLI::App* sweep = app.add_subcommand("sweep", "grid sweep over one hyperparameter");
  std::string sweep_param;
  std::vector<double> sweep_values;
  add_common(sweep);
  sweep->add_option("--param", sweep_param,
                    "lambda|alpha|learning_rate|batch_size|local_epochs|lr_step1|lr_step2")
      ->required();
  sweep->add_option("--values", sweep_values, "grid values")->required();

  CLI::App* gen = app.add_subcommand("gen-data", "generate a synthetic dataset file");
  std::string gen_out = "dataset.txt";
  add_common(gen);
  gen->add_option("--file", gen_out, "output dataset file");

  CLI::App* eval = app.add_subcommand("eval", "evaluate a saved model on a dataset file");
  std::string model_path, data_path;
  eval->add_option("--model", model_path, "model file")->required();
  eval->add_option("--data", data_path, "dataset file")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (run->parsed())
      return cmd_run(load_config(config_arg, overrides, seeds, algo, out_dir), save_models);
    if (sweep->parsed())
      return cmd_sweep(load_config(config_arg, overrides, seeds, algo, out_dir), sweep_param,
                       sweep_values);
    if (gen->parsed())
      return cmd_gen_data(load_config(config_arg, overrides, seeds, algo, out_dir), gen_out);
    if (eval->parsed()) return cmd_eval(model_path, data_path);
  } catch (const fedmobile::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: internal: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
