#include <catch2/catch_amalgamated.hpp>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "fedmobile/experiment.hpp"

using namespace fedmobile;

namespace {

// A configuration small enough for fast end-to-end runs.
ExperimentConfig tiny_config() {
  ExperimentConfig cfg;
  cfg.gen.num_clients = 2;
  cfg.gen.samples_per_client = 30;
  cfg.gen.feature_dim = 4;
  cfg.fl.expert_rounds = 2;
  cfg.fl.incremental_rounds = 2;
  cfg.fl.stream_batches = 1;
  cfg.fl.batch_size = 16;
  cfg.fl.optimizer = OptimizerKind::SGD;
  cfg.fl.learning_rate = 0.05;
  cfg.hidden_dims = {6};
  cfg.seeds = {1};
  return cfg;
}

bool rows_equal(const std::vector<ResultRow>& a, const std::vector<ResultRow>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const auto& x = a[i];
    const auto& y = b[i];
    if (x.algorithm != y.algorithm || x.model != y.model || x.seed != y.seed ||
        x.round != y.round || x.split != y.split || x.f1 != y.f1 || x.pr_auc != y.pr_auc ||
        x.ce != y.ce || x.cr != y.cr || x.kd != y.kd || x.reg != y.reg)
      return false;
  }
  return true;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& name) : path(std::filesystem::temp_directory_path() / name) {
    std::filesystem::remove_all(path);
    std::filesystem::create_directories(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
};

}  // namespace

TEST_CASE("empty config text yields the documented defaults") {
  ExperimentConfig cfg = parse_config("");
  REQUIRE(cfg.algorithm == Algorithm::FedMobile);
  REQUIRE(cfg.model_kind == ModelKind::MLP);
  REQUIRE(cfg.fl.batch_size == 256);
  REQUIRE(cfg.hidden_dims == std::vector<std::size_t>{128, 128});
  REQUIRE(cfg.fl.expert_rounds == 40);
  REQUIRE(cfg.fl.stream_batches == 8);
  REQUIRE(cfg.fl.incremental_rounds == 10);
  REQUIRE(cfg.fl.loss.lambda == 0.3);
  REQUIRE(cfg.fl.loss.alpha == 0.6);
  REQUIRE(cfg.gen.labeled_fraction == 0.217);
  REQUIRE(cfg.gen.positive_prevalence == 0.18);
  REQUIRE(cfg.seeds == std::vector<std::uint64_t>{1, 2, 3, 4, 5});
}

TEST_CASE("config parser rejects out-of-range and unknown keys by name") {
  try {
    parse_config("loss.lambda = 1.5\n");
    FAIL("expected rejection");
  } catch (const ConfigError& e) {
    REQUIRE(std::string(e.what()).find("lambda") != std::string::npos);
    REQUIRE(std::string(e.what()).find("[0, 1)") != std::string::npos);
  }
  try {
    parse_config("no.such.key = 1\n");
    FAIL("expected rejection");
  } catch (const ConfigError& e) {
    REQUIRE(std::string(e.what()).find("no.such.key") != std::string::npos);
  }
  REQUIRE_THROWS_AS(parse_config("gen.num_clients zero\n"), ConfigError);
  REQUIRE_THROWS_AS(parse_config("seeds = \n"), ConfigError);
}

TEST_CASE("config parser handles comments, blanks and whitespace") {
  ExperimentConfig cfg = parse_config(
      "# a comment\n"
      "\n"
      "  algo = centralized   # trailing comment\n"
      "  fl.batch_size=64\n"
      "seeds = 7, 8\n");
  REQUIRE(cfg.algorithm == Algorithm::Centralized);
  REQUIRE(cfg.fl.batch_size == 64);
  REQUIRE(cfg.seeds == std::vector<std::uint64_t>{7, 8});
}

TEST_CASE("config serialization round trips") {
  ExperimentConfig cfg = tiny_config();
  cfg.algorithm = Algorithm::FedSemFt;
  cfg.model_kind = ModelKind::GCN;
  cfg.gen.partition = PartitionMode::Dirichlet;
  cfg.fl.loss.kd_direction = KdDirection::StudentToTeacher;
  cfg.fl.parallel_clients = true;
  cfg.fl.learning_rate = 3.25e-4;
  ExperimentConfig back = parse_config(serialize_config(cfg));
  REQUIRE(serialize_config(back) == serialize_config(cfg));
}

TEST_CASE("overrides apply on top of the config") {
  ExperimentConfig cfg = tiny_config();
  apply_override(cfg, "fl.batch_size=32");
  apply_override(cfg, "loss.alpha = 0.4");
  REQUIRE(cfg.fl.batch_size == 32);
  REQUIRE(cfg.fl.loss.alpha == 0.4);
  REQUIRE_THROWS_AS(apply_override(cfg, "nonsense"), ConfigError);
}

TEST_CASE("fedmobile run logs expert plus incremental rounds") {
  ExperimentConfig cfg = tiny_config();
  std::vector<ResultRow> rows = run_experiment(cfg);
  const int expected_rounds = cfg.fl.expert_rounds +
                              cfg.fl.stream_batches * cfg.fl.incremental_rounds;
  REQUIRE(rows.size() == static_cast<std::size_t>(expected_rounds) * 3);
  REQUIRE(rows.front().round == 1);
  REQUIRE(rows.back().round == expected_rounds);
  for (const auto& r : rows) REQUIRE(r.algorithm == "fedmobile");
}

TEST_CASE("round accounting per algorithm") {
  ExperimentConfig cfg = tiny_config();

  cfg.algorithm = Algorithm::FedAvg;
  REQUIRE(run_experiment(cfg).size() == static_cast<std::size_t>(cfg.fl.expert_rounds) * 3);

  cfg.algorithm = Algorithm::Centralized;
  REQUIRE(run_experiment(cfg).size() == static_cast<std::size_t>(cfg.fl.expert_rounds) * 3);
  cfg.fl.centralized_epochs = 5;
  REQUIRE(run_experiment(cfg).size() == 5 * 3);
  cfg.fl.centralized_epochs = 0;

  cfg.algorithm = Algorithm::FedSemFt;
  const int expected = cfg.fl.expert_rounds + cfg.fl.stream_batches * cfg.fl.incremental_rounds;
  REQUIRE(run_experiment(cfg).size() == static_cast<std::size_t>(expected) * 3);
}

TEST_CASE("identical config and seed give identical result rows") {
  ExperimentConfig cfg = tiny_config();
  std::vector<ResultRow> a = run_experiment(cfg);
  std::vector<ResultRow> b = run_experiment(cfg);
  REQUIRE(rows_equal(a, b));

  cfg.fl.parallel_clients = true;
  std::vector<ResultRow> c = run_experiment(cfg);
  REQUIRE(rows_equal(a, c));
}

TEST_CASE("result files round trip and keep the exact header") {
  TempDir dir("fm_results_test");
  ExperimentConfig cfg = tiny_config();
  std::vector<ResultRow> rows = run_experiment(cfg);
  write_results(rows, dir.path.string());

  std::string content = slurp((dir.path / "results.csv").string());
  std::istringstream lines(content);
  std::string first, second;
  std::getline(lines, first);
  std::getline(lines, second);
  REQUIRE(first.rfind("# created_at=", 0) == 0);
  REQUIRE(second == std::string(kResultsHeader));

  std::vector<ResultRow> back = read_results((dir.path / "results.csv").string());
  REQUIRE(rows_equal(rows, back));
}

TEST_CASE("empty rows produce a header-only results file") {
  TempDir dir("fm_empty_results");
  write_results({}, dir.path.string());
  std::string content = slurp((dir.path / "results.csv").string());
  std::istringstream lines(content);
  std::string line;
  int data_lines = 0;
  bool header_found = false;
  while (std::getline(lines, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (line == std::string(kResultsHeader)) {
      header_found = true;
      continue;
    }
    ++data_lines;
  }
  REQUIRE(header_found);
  REQUIRE(data_lines == 0);
}

TEST_CASE("summary formats mean and sample std to three decimals") {
  TempDir dir("fm_summary_test");
  std::vector<ResultRow> rows;
  for (std::uint64_t seed : {1, 2}) {
    ResultRow r;
    r.algorithm = "fedmobile";
    r.model = "mlp";
    r.seed = seed;
    r.round = 3;
    r.split = "test";
    r.f1 = seed == 1 ? 0.7 : 0.9;
    r.pr_auc = 0.5;
    rows.push_back(r);
  }
  write_results(rows, dir.path.string());
  std::string summary = slurp((dir.path / "summary.csv").string());
  REQUIRE(summary.find("0.800 ± 0.141") != std::string::npos);

  std::string plot = slurp((dir.path / "plot_f1.csv").string());
  REQUIRE(plot.find("fedmobile,mlp,3,") != std::string::npos);
}

TEST_CASE("sweep with a single grid value equals the plain run") {
  ExperimentConfig cfg = tiny_config();
  SweepSpec spec{"lambda", {0.3}};
  std::vector<SweepRow> table = sweep_hyperparams(cfg, spec);
  REQUIRE(table.size() == 1);
  REQUIRE(table[0].value == 0.3);

  SeedRunOutput out = run_single_seed(cfg, cfg.seeds[0]);
  REQUIRE(table[0].test_metrics.f1.mean == Catch::Approx(out.logs.back().test.f1).margin(1e-15));
  REQUIRE(table[0].test_metrics.n == 1);
}

TEST_CASE("sweep validates its parameter name and grid") {
  ExperimentConfig cfg = tiny_config();
  REQUIRE_THROWS_AS(sweep_hyperparams(cfg, {"dropout", {0.1}}), ConfigError);
  REQUIRE_THROWS_AS(sweep_hyperparams(cfg, {"lambda", {}}), ConfigError);
  REQUIRE_THROWS_AS(sweep_hyperparams(cfg, {"alpha", {1.5}}), ConfigError);
}

TEST_CASE("sweep over batch size and epochs changes the config under test") {
  ExperimentConfig cfg = tiny_config();
  SweepSpec spec{"batch_size", {8, 16}};
  std::vector<SweepRow> table = sweep_hyperparams(cfg, spec);
  REQUIRE(table.size() == 2);
  SweepSpec epochs{"local_epochs", {1, 2}};
  REQUIRE(sweep_hyperparams(cfg, epochs).size() == 2);
}

TEST_CASE("model files round trip exactly") {
  ExperimentConfig cfg = tiny_config();
  SeedRunOutput out = run_single_seed(cfg, 3);
  TempDir dir("fm_model_test");
  const std::string path = (dir.path / "model.txt").string();
  save_model(out.final_model, path);
  ModelParams back = load_model(path);
  REQUIRE(back == out.final_model);
}

TEST_CASE("gcn experiment runs end to end") {
  ExperimentConfig cfg = tiny_config();
  cfg.model_kind = ModelKind::GCN;
  cfg.gen.num_clusters = 4;
  cfg.gen.walk_length = 6;
  cfg.hidden_dims = {4};
  cfg.fl.expert_rounds = 1;
  cfg.fl.stream_batches = 1;
  cfg.fl.incremental_rounds = 1;
  std::vector<ResultRow> rows = run_experiment(cfg);
  REQUIRE(rows.size() == 2 * 3);
  for (const auto& r : rows) REQUIRE(r.model == "gcn");
}

TEST_CASE("dirichlet partition mode runs end to end") {
  ExperimentConfig cfg = tiny_config();
  cfg.gen.partition = PartitionMode::Dirichlet;
  cfg.gen.dirichlet_beta = 0.5;
  cfg.gen.samples_per_client = 60;
  std::vector<ResultRow> rows = run_experiment(cfg);
  REQUIRE_FALSE(rows.empty());
}
