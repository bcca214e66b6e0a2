// Temporary calibration probe for the comparative experiments.
#include <chrono>
#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include "fedmobile/fedmobile.hpp"

using namespace fedmobile;

namespace {

ExperimentConfig base_config() {
  ExperimentConfig cfg;
  cfg.gen.num_clients = 10;
  cfg.gen.samples_per_client = 200;
  cfg.gen.feature_dim = 16;
  cfg.gen.class_separation = 3.0;
  cfg.gen.noise_sd = 1.0;
  cfg.gen.drift_magnitude = 0.8;
  cfg.gen.drift_rotation = 0.25;
  cfg.fl.expert_rounds = 40;
  cfg.fl.incremental_rounds = 10;
  cfg.fl.stream_batches = 8;
  cfg.fl.local_epochs = 1;
  cfg.fl.batch_size = 256;
  cfg.fl.learning_rate = 1e-3;
  cfg.fl.optimizer = OptimizerKind::AdamW;
  cfg.seeds = {1, 2, 3, 4, 5};
  return cfg;
}

double final_test_f1(const ExperimentConfig& cfg, std::uint64_t seed) {
  SeedRunOutput out = run_single_seed(cfg, seed);
  return out.logs.back().test.f1;
}

double batch0_retention_f1(const ExperimentConfig& cfg, std::uint64_t seed) {
  SeedRunOutput out = run_single_seed(cfg, seed);
  std::vector<const Sample*> held_out;
  for (const auto& s : out.batch_splits[0].test) held_out.push_back(&s);
  return evaluate(out.final_model, held_out).f1;
}

void per_batch_profile(const ExperimentConfig& cfg, std::uint64_t seed, const char* tag) {
  SeedRunOutput out = run_single_seed(cfg, seed);
  std::printf("%-12s", tag);
  for (const auto& split : out.batch_splits) {
    std::vector<const Sample*> test;
    for (const auto& s : split.test) test.push_back(&s);
    for (const auto& s : split.validation) test.push_back(&s);
    std::printf("%6.2f", evaluate(out.final_model, test).f1);
  }
  std::printf("\n");
}

}  // namespace

int main(int argc, char** argv) {
  ExperimentConfig cfg = base_config();
  bool retention_only = false;
  std::string sweep_param;
  std::vector<double> sweep_values;
  for (int i = 1; i < argc; ++i) {
    std::string arg = argv[i];
    if (arg == "ret") {
      retention_only = true;
    } else if (arg == "sweep") {
      sweep_param = argv[++i];
      std::string values = argv[++i];
      std::size_t pos = 0;
      while (pos < values.size()) {
        std::size_t comma = values.find(',', pos);
        if (comma == std::string::npos) comma = values.size();
        sweep_values.push_back(std::stod(values.substr(pos, comma - pos)));
        pos = comma + 1;
      }
    } else {
      apply_override(cfg, arg);
    }
  }

  if (!sweep_param.empty()) {
    SweepSpec spec{sweep_param, sweep_values};
    auto t0 = std::chrono::steady_clock::now();
    std::vector<SweepRow> table = sweep_hyperparams(cfg, spec);
    for (const auto& row : table)
      std::printf("%s=%.2f  f1 = %.3f +- %.3f\n", sweep_param.c_str(), row.value,
                  row.test_metrics.f1.mean, row.test_metrics.f1.std);
    auto el = std::chrono::duration_cast<std::chrono::seconds>(
        std::chrono::steady_clock::now() - t0).count();
    std::printf("sweep time: %llds\n", (long long)el);
    return 0;
  }

  if (retention_only) {
    ExperimentConfig fm = cfg;
    fm.algorithm = Algorithm::FedMobile;
    ExperimentConfig naive = fm;
    naive.fl.loss.alpha = 0.0;
    naive.fl.loss.lambda = 0.0;
    std::printf("%-12s", "ret-fm:");
    for (auto seed : cfg.seeds) std::printf("%8.3f", batch0_retention_f1(fm, seed));
    std::printf("\n%-12s", "ret-naive:");
    for (auto seed : cfg.seeds) std::printf("%8.3f", batch0_retention_f1(naive, seed));
    std::printf("\n");
    per_batch_profile(fm, 1, "fm-prof");
    per_batch_profile(naive, 1, "naive-prof");
    return 0;
  }

  auto t0 = std::chrono::steady_clock::now();
  std::printf("%-12s", "seed:");
  for (auto s : cfg.seeds) std::printf("%8llu", (unsigned long long)s);
  std::printf("\n");

  for (Algorithm algo : {Algorithm::Centralized, Algorithm::FedMobile, Algorithm::FedSemFt,
                         Algorithm::FedAvg}) {
    ExperimentConfig c = cfg;
    c.algorithm = algo;
    std::printf("%-12s", algorithm_name(algo).c_str());
    for (auto seed : cfg.seeds) std::printf("%8.3f", final_test_f1(c, seed));
    auto el = std::chrono::duration_cast<std::chrono::seconds>(
        std::chrono::steady_clock::now() - t0).count();
    std::printf("   [t=%llds]\n", (long long)el);
  }

  // Retention: fedmobile defaults vs naive fine-tuning (alpha=0, lambda=0).
  ExperimentConfig fm = cfg;
  fm.algorithm = Algorithm::FedMobile;
  ExperimentConfig naive = fm;
  naive.fl.loss.alpha = 0.0;
  naive.fl.loss.lambda = 0.0;
  std::printf("%-12s", "ret-fm:");
  for (auto seed : cfg.seeds) std::printf("%8.3f", batch0_retention_f1(fm, seed));
  std::printf("\n%-12s", "ret-naive:");
  for (auto seed : cfg.seeds) std::printf("%8.3f", batch0_retention_f1(naive, seed));
  std::printf("\n");

  // Per-batch F1 profile (val+test of each stream batch) for seed 1.
  std::printf("per-batch F1 profile, seed 1 (batches 0..T):\n");
  per_batch_profile(fm, 1, "fedmobile");
  per_batch_profile(naive, 1, "naive-ft");
  {
    ExperimentConfig fa = cfg;
    fa.algorithm = Algorithm::FedAvg;
    per_batch_profile(fa, 1, "fedavg");
    ExperimentConfig fs = cfg;
    fs.algorithm = Algorithm::FedSemFt;
    per_batch_profile(fs, 1, "fedsem");
    ExperimentConfig ce = cfg;
    ce.algorithm = Algorithm::Centralized;
    per_batch_profile(ce, 1, "centralized");
  }

  auto el = std::chrono::duration_cast<std::chrono::seconds>(
      std::chrono::steady_clock::now() - t0).count();
  std::printf("total time: %llds\n", (long long)el);
  return 0;
}
