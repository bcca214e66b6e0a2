#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "fedmobile/data.hpp"
#include "fedmobile/error.hpp"
#include "fedmobile/federated.hpp"
#include "fedmobile/metrics.hpp"

namespace fedmobile {

enum class Algorithm { FedMobile, Centralized, FedAvg, FedSemFt };

inline std::string algorithm_name(Algorithm a) {
  switch (a) {
    case Algorithm::FedMobile: return "fedmobile";
    case Algorithm::Centralized: return "centralized";
    case Algorithm::FedAvg: return "fedavg";
    case Algorithm::FedSemFt: return "fedsem_ft";
  }
  return "?";
}

inline Algorithm algorithm_from_name(const std::string& name) {
  if (name == "fedmobile") return Algorithm::FedMobile;
  if (name == "centralized") return Algorithm::Centralized;
  if (name == "fedavg") return Algorithm::FedAvg;
  if (name == "fedsem_ft") return Algorithm::FedSemFt;
  throw ConfigError("algo: unknown algorithm '" + name +
                    "' (expected fedmobile|centralized|fedavg|fedsem_ft)");
}

inline std::string model_kind_name(ModelKind k) {
  return k == ModelKind::MLP ? "mlp" : "gcn";
}

struct ExperimentConfig {
  Algorithm algorithm = Algorithm::FedMobile;
  ModelKind model_kind = ModelKind::MLP;
  GeneratorConfig gen;
  FedMobileConfig fl;
  std::vector<std::size_t> hidden_dims = {128, 128};
  std::size_t num_classes = 2;
  Activation activation = Activation::ReLU;
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  std::string output_dir = "results";

  ArchitectureSpec architecture() const {
    ArchitectureSpec arch;
    arch.model_kind = model_kind;
    GeneratorConfig g = effective_gen();
    arch.input_dim = g.input_dim();
    arch.hidden_dims = hidden_dims;
    arch.num_classes = num_classes;
    arch.activation = activation;
    return arch;
  }

  // The modality always follows the model kind, and the FL engine sees the
  // generator's client count.
  GeneratorConfig effective_gen() const {
    GeneratorConfig g = gen;
    g.modality = model_kind == ModelKind::GCN ? Modality::Graphs : Modality::Features;
    return g;
  }

  FedMobileConfig effective_fl() const {
    FedMobileConfig f = fl;
    f.num_clients = gen.num_clients;
    return f;
  }

  void validate() const {
    if (seeds.empty()) throw ConfigError("seeds: must not be empty");
    effective_gen().validate();
    effective_fl().validate();
    architecture().validate();
  }
};

// ----- flat key=value config text ---------------------------------------------

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(key + ": expected true|false, got '" + v + "'");
}

inline double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a number, got '" + v + "'");
  }
}

inline long parse_int(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    long i = std::stol(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return i;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected an integer, got '" + v + "'");
  }
}

template <typename T>
std::vector<T> parse_int_list(const std::string& key, const std::string& v) {
  std::vector<T> out;
  for (const auto& field : split_fields(v, ',')) {
    std::string f = trim(field);
    if (f.empty()) throw ConfigError(key + ": empty list element");
    out.push_back(static_cast<T>(parse_int(key, f)));
  }
  if (out.empty()) throw ConfigError(key + ": empty list");
  return out;
}

inline std::string fmt_bool(bool b) { return b ? "true" : "false"; }

}  // namespace detail

// Applies one "key = value" assignment. Unknown keys are rejected by name.
inline void apply_config_entry(ExperimentConfig& cfg, const std::string& key,
                               const std::string& value) {
  using detail::parse_bool;
  using detail::parse_double;
  using detail::parse_int;

  if (key == "algo") {
    cfg.algorithm = algorithm_from_name(value);
  } else if (key == "model") {
    if (value == "mlp") cfg.model_kind = ModelKind::MLP;
    else if (value == "gcn") cfg.model_kind = ModelKind::GCN;
    else throw ConfigError("model: expected mlp|gcn, got '" + value + "'");
  } else if (key == "seeds") {
    cfg.seeds = detail::parse_int_list<std::uint64_t>(key, value);
  } else if (key == "out") {
    cfg.output_dir = value;
  } else if (key == "gen.num_clients") {
    cfg.gen.num_clients = static_cast<int>(parse_int(key, value));
  } else if (key == "gen.samples_per_client") {
    cfg.gen.samples_per_client = static_cast<int>(parse_int(key, value));
  } else if (key == "gen.labeled_fraction") {
    cfg.gen.labeled_fraction = parse_double(key, value);
  } else if (key == "gen.positive_prevalence") {
    cfg.gen.positive_prevalence = parse_double(key, value);
  } else if (key == "gen.label_noise") {
    cfg.gen.label_noise = parse_double(key, value);
  } else if (key == "gen.drift_magnitude") {
    cfg.gen.drift_magnitude = parse_double(key, value);
  } else if (key == "gen.drift_rotation") {
    cfg.gen.drift_rotation = parse_double(key, value);
  } else if (key == "gen.partition") {
    if (value == "iid") cfg.gen.partition = PartitionMode::IID;
    else if (value == "dirichlet") cfg.gen.partition = PartitionMode::Dirichlet;
    else throw ConfigError("gen.partition: expected iid|dirichlet, got '" + value + "'");
  } else if (key == "gen.dirichlet_beta") {
    cfg.gen.dirichlet_beta = parse_double(key, value);
  } else if (key == "gen.feature_dim") {
    cfg.gen.feature_dim = static_cast<int>(parse_int(key, value));
  } else if (key == "gen.class_separation") {
    cfg.gen.class_separation = parse_double(key, value);
  } else if (key == "gen.noise_sd") {
    cfg.gen.noise_sd = parse_double(key, value);
  } else if (key == "gen.num_clusters") {
    cfg.gen.num_clusters = static_cast<int>(parse_int(key, value));
  } else if (key == "gen.walk_length") {
    cfg.gen.walk_length = static_cast<int>(parse_int(key, value));
  } else if (key == "arch.hidden") {
    cfg.hidden_dims = detail::parse_int_list<std::size_t>(key, value);
  } else if (key == "arch.num_classes") {
    cfg.num_classes = static_cast<std::size_t>(parse_int(key, value));
  } else if (key == "arch.activation") {
    if (value == "relu") cfg.activation = Activation::ReLU;
    else if (value == "tanh") cfg.activation = Activation::Tanh;
    else throw ConfigError("arch.activation: expected relu|tanh, got '" + value + "'");
  } else if (key == "loss.lambda") {
    cfg.fl.loss.lambda = parse_double(key, value);
    if (cfg.fl.loss.lambda < 0.0 || cfg.fl.loss.lambda >= 1.0)
      throw ConfigError("loss.lambda: must be in [0, 1), got " + value);
  } else if (key == "loss.alpha") {
    cfg.fl.loss.alpha = parse_double(key, value);
    if (cfg.fl.loss.alpha < 0.0 || cfg.fl.loss.alpha > 1.0)
      throw ConfigError("loss.alpha: must be in [0, 1], got " + value);
  } else if (key == "loss.l2") {
    cfg.fl.loss.l2_coeff = parse_double(key, value);
  } else if (key == "loss.kd_temperature") {
    cfg.fl.loss.kd_temperature = parse_double(key, value);
  } else if (key == "loss.kd_direction") {
    if (value == "teacher_to_student") cfg.fl.loss.kd_direction = KdDirection::TeacherToStudent;
    else if (value == "student_to_teacher")
      cfg.fl.loss.kd_direction = KdDirection::StudentToTeacher;
    else
      throw ConfigError(
          "loss.kd_direction: expected teacher_to_student|student_to_teacher, got '" + value +
          "'");
  } else if (key == "loss.cr_stop_gradient_clean") {
    cfg.fl.loss.cr_stop_gradient_clean = parse_bool(key, value);
  } else if (key == "fl.expert_rounds") {
    cfg.fl.expert_rounds = static_cast<int>(parse_int(key, value));
  } else if (key == "fl.incremental_rounds") {
    cfg.fl.incremental_rounds = static_cast<int>(parse_int(key, value));
  } else if (key == "fl.stream_batches") {
    cfg.fl.stream_batches = static_cast<int>(parse_int(key, value));
  } else if (key == "fl.local_epochs") {
    cfg.fl.local_epochs = static_cast<int>(parse_int(key, value));
  } else if (key == "fl.batch_size") {
    cfg.fl.batch_size = static_cast<int>(parse_int(key, value));
  } else if (key == "fl.unlabeled_ratio") {
    cfg.fl.unlabeled_ratio = parse_double(key, value);
  } else if (key == "fl.optimizer") {
    if (value == "sgd") cfg.fl.optimizer = OptimizerKind::SGD;
    else if (value == "adamw") cfg.fl.optimizer = OptimizerKind::AdamW;
    else throw ConfigError("fl.optimizer: expected sgd|adamw, got '" + value + "'");
  } else if (key == "fl.learning_rate") {
    cfg.fl.learning_rate = parse_double(key, value);
  } else if (key == "fl.incremental_learning_rate") {
    cfg.fl.incremental_learning_rate = parse_double(key, value);
  } else if (key == "fl.weight_decay") {
    cfg.fl.weight_decay = parse_double(key, value);
  } else if (key == "fl.feature_noise_sd") {
    cfg.fl.feature_noise_sd = parse_double(key, value);
  } else if (key == "fl.edge_flip_prob") {
    cfg.fl.edge_flip_prob = parse_double(key, value);
  } else if (key == "fl.warm_start_apprentice") {
    cfg.fl.warm_start_apprentice = parse_bool(key, value);
  } else if (key == "fl.pseudo_label_threshold") {
    cfg.fl.pseudo_label_threshold = parse_double(key, value);
  } else if (key == "fl.parallel_clients") {
    cfg.fl.parallel_clients = parse_bool(key, value);
  } else if (key == "fl.centralized_epochs") {
    cfg.fl.centralized_epochs = static_cast<int>(parse_int(key, value));
  } else {
    throw ConfigError("unknown key '" + key + "'");
  }
}

// Parses the flat "key = value" config text; '#' starts a comment. Missing
// keys keep their defaults. The fully assembled config is validated before it
// is returned.
inline ExperimentConfig parse_config(const std::string& text) {
  ExperimentConfig cfg;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
    std::string key = detail::trim(line.substr(0, eq));
    std::string value = detail::trim(line.substr(eq + 1));
    if (key.empty()) throw ConfigError("line " + std::to_string(line_no) + ": empty key");
    apply_config_entry(cfg, key, value);
  }
  cfg.validate();
  return cfg;
}

inline void apply_override(ExperimentConfig& cfg, const std::string& assignment) {
  std::size_t eq = assignment.find('=');
  if (eq == std::string::npos)
    throw ConfigError("override '" + assignment + "': expected key=value");
  apply_config_entry(cfg, detail::trim(assignment.substr(0, eq)),
                     detail::trim(assignment.substr(eq + 1)));
}

inline std::string serialize_config(const ExperimentConfig& cfg) {
  using detail::fmt_bool;
  using detail::fmt_double;
  std::ostringstream out;
  out << "algo = " << algorithm_name(cfg.algorithm) << '\n';
  out << "model = " << model_kind_name(cfg.model_kind) << '\n';
  out << "seeds = ";
  for (std::size_t i = 0; i < cfg.seeds.size(); ++i) out << (i ? "," : "") << cfg.seeds[i];
  out << '\n';
  out << "out = " << cfg.output_dir << '\n';
  out << "gen.num_clients = " << cfg.gen.num_clients << '\n';
  out << "gen.samples_per_client = " << cfg.gen.samples_per_client << '\n';
  out << "gen.labeled_fraction = " << fmt_double(cfg.gen.labeled_fraction) << '\n';
  out << "gen.positive_prevalence = " << fmt_double(cfg.gen.positive_prevalence) << '\n';
  out << "gen.label_noise = " << fmt_double(cfg.gen.label_noise) << '\n';
  out << "gen.drift_magnitude = " << fmt_double(cfg.gen.drift_magnitude) << '\n';
  out << "gen.drift_rotation = " << fmt_double(cfg.gen.drift_rotation) << '\n';
  out << "gen.partition = " << (cfg.gen.partition == PartitionMode::IID ? "iid" : "dirichlet")
      << '\n';
  out << "gen.dirichlet_beta = " << fmt_double(cfg.gen.dirichlet_beta) << '\n';
  out << "gen.feature_dim = " << cfg.gen.feature_dim << '\n';
  out << "gen.class_separation = " << fmt_double(cfg.gen.class_separation) << '\n';
  out << "gen.noise_sd = " << fmt_double(cfg.gen.noise_sd) << '\n';
  out << "gen.num_clusters = " << cfg.gen.num_clusters << '\n';
  out << "gen.walk_length = " << cfg.gen.walk_length << '\n';
  out << "arch.hidden = ";
  for (std::size_t i = 0; i < cfg.hidden_dims.size(); ++i)
    out << (i ? "," : "") << cfg.hidden_dims[i];
  out << '\n';
  out << "arch.num_classes = " << cfg.num_classes << '\n';
  out << "arch.activation = " << (cfg.activation == Activation::ReLU ? "relu" : "tanh") << '\n';
  out << "loss.lambda = " << fmt_double(cfg.fl.loss.lambda) << '\n';
  out << "loss.alpha = " << fmt_double(cfg.fl.loss.alpha) << '\n';
  out << "loss.l2 = " << fmt_double(cfg.fl.loss.l2_coeff) << '\n';
  out << "loss.kd_temperature = " << fmt_double(cfg.fl.loss.kd_temperature) << '\n';
  out << "loss.kd_direction = "
      << (cfg.fl.loss.kd_direction == KdDirection::TeacherToStudent ? "teacher_to_student"
                                                                    : "student_to_teacher")
      << '\n';
  out << "loss.cr_stop_gradient_clean = " << fmt_bool(cfg.fl.loss.cr_stop_gradient_clean) << '\n';
  out << "fl.expert_rounds = " << cfg.fl.expert_rounds << '\n';
  out << "fl.incremental_rounds = " << cfg.fl.incremental_rounds << '\n';
  out << "fl.stream_batches = " << cfg.fl.stream_batches << '\n';
  out << "fl.local_epochs = " << cfg.fl.local_epochs << '\n';
  out << "fl.batch_size = " << cfg.fl.batch_size << '\n';
  out << "fl.unlabeled_ratio = " << fmt_double(cfg.fl.unlabeled_ratio) << '\n';
  out << "fl.optimizer = " << (cfg.fl.optimizer == OptimizerKind::SGD ? "sgd" : "adamw") << '\n';
  out << "fl.learning_rate = " << fmt_double(cfg.fl.learning_rate) << '\n';
  out << "fl.incremental_learning_rate = " << fmt_double(cfg.fl.incremental_learning_rate)
      << '\n';
  out << "fl.weight_decay = " << fmt_double(cfg.fl.weight_decay) << '\n';
  out << "fl.feature_noise_sd = " << fmt_double(cfg.fl.feature_noise_sd) << '\n';
  out << "fl.edge_flip_prob = " << fmt_double(cfg.fl.edge_flip_prob) << '\n';
  out << "fl.warm_start_apprentice = " << fmt_bool(cfg.fl.warm_start_apprentice) << '\n';
  out << "fl.pseudo_label_threshold = " << fmt_double(cfg.fl.pseudo_label_threshold) << '\n';
  out << "fl.parallel_clients = " << fmt_bool(cfg.fl.parallel_clients) << '\n';
  out << "fl.centralized_epochs = " << cfg.fl.centralized_epochs << '\n';
  return out.str();
}

// ----- running experiments -----------------------------------------------------

struct ResultRow {
  std::string algorithm;
  std::string model;
  std::uint64_t seed = 0;
  int round = 0;
  std::string split;  // train | val | test
  double f1 = 0.0, pr_auc = 0.0, ce = 0.0, cr = 0.0, kd = 0.0, reg = 0.0;
};

struct SeedRunOutput {
  std::vector<RoundLog> logs;   // globally renumbered rounds, 1-based
  ModelParams final_model;
  std::vector<DatasetSplit> batch_splits;  // one per stream batch (0 = expert pool)
};

// Runs the configured algorithm for one seed. The generated stream has
// stream_batches + 1 batches: batch 0 is the expert-phase pool, batches
// 1..stream_batches feed the incremental phase. One-shot baselines train on
// all batches pooled (centralized) or on the expert pool (fedavg). Metrics
// are always evaluated on the union of the per-batch validation/test splits.
inline SeedRunOutput run_single_seed(const ExperimentConfig& cfg, std::uint64_t seed) {
  GeneratorConfig gen = cfg.effective_gen();
  gen.seed = seed;
  FedMobileConfig fl = cfg.effective_fl();
  ArchitectureSpec arch = cfg.architecture();

  SeedRunOutput out;
  const int total_batches = fl.stream_batches + 1;
  std::vector<StreamBatch> stream = generate_stream(gen, total_batches);
  out.batch_splits.reserve(stream.size());
  for (const auto& batch : stream)
    out.batch_splits.push_back(split_dataset(flatten(batch), {0.70, 0.20, 0.10},
                                             derive_seed(seed, 0x5911,
                                                         static_cast<std::uint64_t>(
                                                             batch.time_index))));

  // Per-batch per-client training views over the train split.
  auto views_of = [&](const DatasetSplit& split) {
    std::vector<ClientView> views(static_cast<std::size_t>(gen.num_clients));
    for (int k = 0; k < gen.num_clients; ++k)
      views[static_cast<std::size_t>(k)].client_id = k;
    for (const auto& s : split.train) {
      auto& view = views.at(static_cast<std::size_t>(s.client_id));
      if (s.label) view.labeled.push_back(&s);
      else view.unlabeled.push_back(&s);
    }
    return views;
  };
  std::vector<ClientView> expert_clients = views_of(out.batch_splits[0]);
  std::vector<std::vector<ClientView>> stream_clients;
  for (std::size_t t = 1; t < out.batch_splits.size(); ++t)
    stream_clients.push_back(views_of(out.batch_splits[t]));

  EvalData eval;
  for (const auto& split : out.batch_splits) {
    for (const auto& s : split.train) eval.train.push_back(&s);
    for (const auto& s : split.validation) eval.validation.push_back(&s);
    for (const auto& s : split.test) eval.test.push_back(&s);
  }

  const std::uint64_t train_seed = derive_seed(seed, 0x7a11);
  switch (cfg.algorithm) {
    case Algorithm::FedMobile: {
      TrainResult expert = train_expert(expert_clients, fl, arch, train_seed, &eval);
      StreamTrainResult apprentice =
          train_apprentice_stream(expert.model, stream_clients, fl, arch, train_seed, &eval);
      out.logs = std::move(expert.logs);
      for (auto& log : apprentice.logs) {
        log.round += fl.expert_rounds;
        out.logs.push_back(std::move(log));
      }
      out.final_model = std::move(apprentice.model);
      break;
    }
    case Algorithm::Centralized: {
      std::vector<const Sample*> labeled, unlabeled;
      for (const auto& split : out.batch_splits) {
        for (const auto& s : split.train) {
          if (s.label) labeled.push_back(&s);
          else unlabeled.push_back(&s);
        }
      }
      TrainResult r = centralized_train(labeled, unlabeled, fl, arch, train_seed, &eval);
      out.logs = std::move(r.logs);
      out.final_model = std::move(r.model);
      break;
    }
    case Algorithm::FedAvg: {
      TrainResult r = fedavg_supervised(expert_clients, fl, arch, train_seed, &eval);
      out.logs = std::move(r.logs);
      out.final_model = std::move(r.model);
      break;
    }
    case Algorithm::FedSemFt: {
      FedSemResult r = fedsem_ft(expert_clients, stream_clients, fl, arch, train_seed, &eval);
      out.logs = std::move(r.logs);
      out.final_model = std::move(r.model);
      break;
    }
  }
  return out;
}

inline std::vector<ResultRow> rows_from_logs(const ExperimentConfig& cfg, std::uint64_t seed,
                                             const std::vector<RoundLog>& logs) {
  std::vector<ResultRow> rows;
  rows.reserve(logs.size() * 3);
  const std::string algo = algorithm_name(cfg.algorithm);
  const std::string model = model_kind_name(cfg.model_kind);
  for (const auto& log : logs) {
    auto make_row = [&](const std::string& split, const MetricsReport& m, bool with_loss) {
      ResultRow row;
      row.algorithm = algo;
      row.model = model;
      row.seed = seed;
      row.round = log.round;
      row.split = split;
      row.f1 = m.f1;
      row.pr_auc = m.pr_auc;
      if (with_loss) {
        row.ce = log.mean_loss.ce;
        row.cr = log.mean_loss.cr;
        row.kd = log.mean_loss.kd;
        row.reg = log.mean_loss.reg;
      }
      return row;
    };
    rows.push_back(make_row("train", log.train, true));
    rows.push_back(make_row("val", log.validation, false));
    rows.push_back(make_row("test", log.test, false));
  }
  return rows;
}

// Runs every configured seed and flattens the logs into result rows, sorted by
// (algorithm, model, seed, round, split).
inline std::vector<ResultRow> run_experiment(const ExperimentConfig& cfg) {
  cfg.validate();
  std::vector<ResultRow> rows;
  for (std::uint64_t seed : cfg.seeds) {
    SeedRunOutput out = run_single_seed(cfg, seed);
    auto seed_rows = rows_from_logs(cfg, seed, out.logs);
    rows.insert(rows.end(), seed_rows.begin(), seed_rows.end());
  }
  auto split_rank = [](const std::string& s) { return s == "train" ? 0 : s == "val" ? 1 : 2; };
  std::stable_sort(rows.begin(), rows.end(), [&](const ResultRow& a, const ResultRow& b) {
    return std::tie(a.algorithm, a.model, a.seed, a.round) <
               std::tie(b.algorithm, b.model, b.seed, b.round) ||
           (std::tie(a.algorithm, a.model, a.seed, a.round) ==
                std::tie(b.algorithm, b.model, b.seed, b.round) &&
            split_rank(a.split) < split_rank(b.split));
  });
  return rows;
}

// ----- hyperparameter sweeps ----------------------------------------------------

struct SweepSpec {
  std::string parameter;  // lambda|alpha|learning_rate|batch_size|local_epochs|lr_step1|lr_step2
  std::vector<double> grid;

  void validate() const {
    static const char* known[] = {"lambda",       "alpha",    "learning_rate", "batch_size",
                                  "local_epochs", "lr_step1", "lr_step2"};
    bool ok = false;
    for (const char* k : known) ok = ok || parameter == k;
    if (!ok) throw ConfigError("sweep: unknown parameter '" + parameter + "'");
    if (grid.empty()) throw ConfigError("sweep: empty grid");
  }
};

inline ExperimentConfig with_sweep_value(const ExperimentConfig& base, const SweepSpec& spec,
                                         double value) {
  ExperimentConfig cfg = base;
  if (spec.parameter == "lambda") {
    if (value < 0.0 || value >= 1.0) throw ConfigError("sweep lambda: value outside [0, 1)");
    cfg.fl.loss.lambda = value;
  } else if (spec.parameter == "alpha") {
    if (value < 0.0 || value > 1.0) throw ConfigError("sweep alpha: value outside [0, 1]");
    cfg.fl.loss.alpha = value;
  } else if (spec.parameter == "learning_rate" || spec.parameter == "lr_step1") {
    cfg.fl.learning_rate = value;
  } else if (spec.parameter == "lr_step2") {
    cfg.fl.incremental_learning_rate = value;
  } else if (spec.parameter == "batch_size") {
    cfg.fl.batch_size = static_cast<int>(value);
  } else if (spec.parameter == "local_epochs") {
    cfg.fl.local_epochs = static_cast<int>(value);
  }
  return cfg;
}

struct SweepRow {
  double value = 0.0;
  MetricsAggregate test_metrics;  // final-round test metrics across seeds
};

// One run_experiment per grid value; the final-round test reports of each seed
// are aggregated into mean +- std.
inline std::vector<SweepRow> sweep_hyperparams(const ExperimentConfig& base,
                                               const SweepSpec& spec) {
  base.validate();
  spec.validate();
  std::vector<SweepRow> table;
  for (double value : spec.grid) {
    ExperimentConfig cfg = with_sweep_value(base, spec, value);
    cfg.validate();
    std::vector<MetricsReport> final_tests;
    for (std::uint64_t seed : cfg.seeds) {
      SeedRunOutput out = run_single_seed(cfg, seed);
      if (out.logs.empty()) throw StateError("sweep: run produced no rounds");
      final_tests.push_back(out.logs.back().test);
    }
    table.push_back({value, aggregate_runs(final_tests)});
  }
  return table;
}

// ----- result files ---------------------------------------------------------------

inline const char* kResultsHeader = "algorithm,model,seed,round,split,f1,pr_auc,ce,cr,kd,reg";

namespace detail {

inline std::string utc_timestamp() {
  std::time_t now = std::time(nullptr);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&now));
  return buf;
}

inline std::string fmt3(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3f", v);
  return buf;
}

}  // namespace detail

// Writes results.csv (all rows), summary.csv (final-round test mean +- std per
// algorithm/model) and plot_f1.csv (per-round mean test F1). The timestamp is
// confined to the leading metadata comment line of each file.
inline void write_results(const std::vector<ResultRow>& rows, const std::string& out_dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create output dir " + out_dir + ": " + ec.message());
  const std::string stamp = "# created_at=" + detail::utc_timestamp();

  {
    std::ofstream out(out_dir + "/results.csv");
    if (!out) throw IoError("cannot write " + out_dir + "/results.csv");
    out << stamp << '\n' << kResultsHeader << '\n';
    for (const auto& r : rows) {
      out << r.algorithm << ',' << r.model << ',' << r.seed << ',' << r.round << ',' << r.split
          << ',' << detail::fmt_double(r.f1) << ',' << detail::fmt_double(r.pr_auc) << ','
          << detail::fmt_double(r.ce) << ',' << detail::fmt_double(r.cr) << ','
          << detail::fmt_double(r.kd) << ',' << detail::fmt_double(r.reg) << '\n';
    }
    if (!out.good()) throw IoError("write failed: " + out_dir + "/results.csv");
  }

  // Final-round test rows per (algorithm, model, seed).
  std::map<std::pair<std::string, std::string>, std::map<std::uint64_t, ResultRow>> finals;
  std::map<std::pair<std::string, std::string>, std::map<int, std::vector<double>>> test_f1;
  for (const auto& r : rows) {
    if (r.split != "test") continue;
    auto key = std::make_pair(r.algorithm, r.model);
    auto& slot = finals[key];
    auto it = slot.find(r.seed);
    if (it == slot.end() || r.round > it->second.round) slot[r.seed] = r;
    test_f1[key][r.round].push_back(r.f1);
  }

  {
    std::ofstream out(out_dir + "/summary.csv");
    if (!out) throw IoError("cannot write " + out_dir + "/summary.csv");
    out << stamp << '\n' << "algorithm,model,metric,mean,std,formatted,n\n";
    for (const auto& [key, by_seed] : finals) {
      std::vector<double> f1s, aucs;
      for (const auto& [seed, row] : by_seed) {
        f1s.push_back(row.f1);
        aucs.push_back(row.pr_auc);
      }
      auto emit = [&](const std::string& metric, const std::vector<double>& v) {
        MeanStd ms = detail::mean_std(v);
        out << key.first << ',' << key.second << ',' << metric << ','
            << detail::fmt_double(ms.mean) << ',' << detail::fmt_double(ms.std) << ','
            << detail::fmt3(ms.mean) << " ± " << detail::fmt3(ms.std) << ',' << v.size()
            << '\n';
      };
      emit("f1", f1s);
      emit("pr_auc", aucs);
    }
    if (!out.good()) throw IoError("write failed: " + out_dir + "/summary.csv");
  }

  {
    std::ofstream out(out_dir + "/plot_f1.csv");
    if (!out) throw IoError("cannot write " + out_dir + "/plot_f1.csv");
    out << stamp << '\n' << "algorithm,model,round,mean_test_f1\n";
    for (const auto& [key, by_round] : test_f1) {
      for (const auto& [round, values] : by_round) {
        double mean = 0.0;
        for (double v : values) mean += v;
        mean /= static_cast<double>(values.size());
        out << key.first << ',' << key.second << ',' << round << ','
            << detail::fmt_double(mean) << '\n';
      }
    }
    if (!out.good()) throw IoError("write failed: " + out_dir + "/plot_f1.csv");
  }
}

inline std::vector<ResultRow> read_results(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::vector<ResultRow> rows;
  std::string line;
  bool header_seen = false;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (!header_seen) {
      if (line != kResultsHeader) throw IoError("results: unexpected header in " + path);
      header_seen = true;
      continue;
    }
    auto f = detail::split_fields(line, ',');
    if (f.size() != 11) throw IoError("results: malformed row in " + path);
    ResultRow r;
    r.algorithm = f[0];
    r.model = f[1];
    r.seed = static_cast<std::uint64_t>(std::stoull(f[2]));
    r.round = std::stoi(f[3]);
    r.split = f[4];
    r.f1 = std::stod(f[5]);
    r.pr_auc = std::stod(f[6]);
    r.ce = std::stod(f[7]);
    r.cr = std::stod(f[8]);
    r.kd = std::stod(f[9]);
    r.reg = std::stod(f[10]);
    rows.push_back(std::move(r));
  }
  if (!header_seen) throw IoError("results: missing header in " + path);
  return rows;
}

inline void write_sweep_results(const std::vector<SweepRow>& table, const SweepSpec& spec,
                                const std::string& out_dir) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create output dir " + out_dir + ": " + ec.message());
  const std::string path = out_dir + "/sweep_" + spec.parameter + ".csv";
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << "# created_at=" << detail::utc_timestamp() << '\n';
  out << "value,f1_mean,f1_std,pr_auc_mean,pr_auc_std,n\n";
  for (const auto& row : table) {
    out << detail::fmt_double(row.value) << ',' << detail::fmt_double(row.test_metrics.f1.mean)
        << ',' << detail::fmt_double(row.test_metrics.f1.std) << ','
        << detail::fmt_double(row.test_metrics.pr_auc.mean) << ','
        << detail::fmt_double(row.test_metrics.pr_auc.std) << ',' << row.test_metrics.n << '\n';
  }
  if (!out.good()) throw IoError("write failed: " + path);
}

// ----- model files ------------------------------------------------------------------

inline void save_model(const ModelParams& params, const std::string& path) {
  params.validate_shapes();
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << "model v1\n";
  out << "kind " << model_kind_name(params.spec.model_kind) << '\n';
  out << "activation " << (params.spec.activation == Activation::ReLU ? "relu" : "tanh") << '\n';
  out << "input_dim " << params.spec.input_dim << '\n';
  out << "num_classes " << params.spec.num_classes << '\n';
  out << "hidden";
  for (std::size_t h : params.spec.hidden_dims) out << ' ' << h;
  out << '\n';
  for (const auto& layer : params.layers) {
    out << "layer " << layer.weight.rows << ' ' << layer.weight.cols << '\n';
    for (std::size_t r = 0; r < layer.weight.rows; ++r) {
      for (std::size_t c = 0; c < layer.weight.cols; ++c)
        out << (c ? " " : "") << detail::fmt_double(layer.weight.at(r, c));
      out << '\n';
    }
    out << "bias";
    for (double b : layer.bias) out << ' ' << detail::fmt_double(b);
    out << '\n';
  }
  if (!out.good()) throw IoError("write failed: " + path);
}

inline ModelParams load_model(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::string line, word;
  std::getline(in, line);
  if (line != "model v1") throw IoError("model: unexpected file header in " + path);
  ModelParams params;
  std::string kind, act;
  in >> word >> kind;
  params.spec.model_kind = kind == "gcn" ? ModelKind::GCN : ModelKind::MLP;
  in >> word >> act;
  params.spec.activation = act == "tanh" ? Activation::Tanh : Activation::ReLU;
  in >> word >> params.spec.input_dim;
  in >> word >> params.spec.num_classes;
  in >> word;  // "hidden"
  std::getline(in, line);
  params.spec.hidden_dims.clear();
  {
    std::istringstream hs(line);
    std::size_t h;
    while (hs >> h) params.spec.hidden_dims.push_back(h);
  }
  while (in >> word) {
    if (word != "layer") throw IoError("model: expected layer block in " + path);
    LayerParams layer;
    std::size_t rows = 0, cols = 0;
    in >> rows >> cols;
    layer.weight = DenseMatrix(rows, cols);
    for (std::size_t i = 0; i < rows * cols; ++i) in >> layer.weight.values[i];
    in >> word;  // "bias"
    layer.bias.resize(cols);
    for (std::size_t i = 0; i < cols; ++i) in >> layer.bias[i];
    params.layers.push_back(std::move(layer));
  }
  params.validate();
  return params;
}

}  // namespace fedmobile
