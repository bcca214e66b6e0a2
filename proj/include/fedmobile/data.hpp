#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "fedmobile/error.hpp"
#include "fedmobile/graph.hpp"
#include "fedmobile/rng.hpp"

namespace fedmobile {

enum class Modality { Features, Graphs };
enum class PartitionMode { IID, Dirichlet };

struct Sample {
  std::variant<std::vector<double>, TrajectoryGraph> payload;
  std::optional<int> label;  // absent = unlabeled, never a sentinel class
  int client_id = 0;
  int time_index = 0;

  bool is_graph() const { return std::holds_alternative<TrajectoryGraph>(payload); }
  const std::vector<double>& features() const {
    if (is_graph()) throw StateError("sample: graph payload accessed as features");
    return std::get<std::vector<double>>(payload);
  }
  const TrajectoryGraph& graph() const {
    if (!is_graph()) throw StateError("sample: feature payload accessed as graph");
    return std::get<TrajectoryGraph>(payload);
  }

  bool operator==(const Sample&) const = default;
};

// Generator parameters in effect at one time step; equal descriptors mean the
// batches were drawn from the same distribution.
struct DomainDescriptor {
  std::vector<double> mean_class0, mean_class1;  // features modality
  double noise_sd = 0.0;
  std::vector<double> affinity_class0, affinity_class1;  // graphs modality
  double stay_prob_class0 = 0.0, stay_prob_class1 = 0.0;

  bool operator==(const DomainDescriptor&) const = default;
};

struct ClientData {
  std::vector<Sample> labeled;
  std::vector<Sample> unlabeled;
};

struct StreamBatch {
  int time_index = 0;
  std::vector<ClientData> clients;
  DomainDescriptor domain;
};

struct GeneratorConfig {
  int num_clients = 10;          // K
  int samples_per_client = 200;  // per time step
  double labeled_fraction = 0.217;
  double positive_prevalence = 0.18;
  double label_noise = 0.0;  // fraction of observed labels flipped (annotation error)
  double drift_magnitude = 0.8;  // mean translation per time step
  double drift_rotation = 0.25;  // boundary rotation per time step, radians
  PartitionMode partition = PartitionMode::IID;
  double dirichlet_beta = 0.5;
  Modality modality = Modality::Features;
  int feature_dim = 16;
  double class_separation = 3.0;  // distance between class means at t = 0
  double noise_sd = 1.0;          // class-conditional spread
  int num_clusters = 8;           // graphs: location-cluster vocabulary
  int walk_length = 12;           // graphs: trajectory length
  std::uint64_t seed = 0;

  std::size_t input_dim() const {
    return modality == Modality::Features ? static_cast<std::size_t>(feature_dim)
                                          : static_cast<std::size_t>(num_clusters) + 1;
  }

  void validate() const {
    if (num_clients < 1) throw ConfigError("gen: num_clients must be >= 1");
    if (samples_per_client < 1) throw ConfigError("gen: samples_per_client must be >= 1");
    if (labeled_fraction < 0.0 || labeled_fraction > 1.0)
      throw ConfigError("gen: labeled_fraction must be in [0, 1]");
    if (positive_prevalence < 0.0 || positive_prevalence > 1.0)
      throw ConfigError("gen: positive_prevalence must be in [0, 1]");
    if (label_noise < 0.0 || label_noise >= 1.0)
      throw ConfigError("gen: label_noise must be in [0, 1)");
    if (drift_magnitude < 0.0) throw ConfigError("gen: drift_magnitude must be >= 0");
    if (dirichlet_beta <= 0.0) throw ConfigError("gen: dirichlet_beta must be > 0");
    if (feature_dim < 2) throw ConfigError("gen: feature_dim must be >= 2");
    if (noise_sd <= 0.0) throw ConfigError("gen: noise_sd must be > 0");
    if (num_clusters < 2) throw ConfigError("gen: num_clusters must be >= 2");
    if (walk_length < 1) throw ConfigError("gen: walk_length must be >= 1");
  }
};

struct ClientPartition {
  std::vector<std::vector<std::size_t>> client_indices;  // ascending within each client
};

// IID: shuffled round-robin deal. Dirichlet: per-stratum client proportions
// drawn from Dirichlet(beta), strata being the label values plus "unlabeled".
inline ClientPartition partition_clients(const std::vector<Sample>& samples, PartitionMode mode,
                                         int num_clients, double dirichlet_beta,
                                         std::uint64_t seed) {
  if (num_clients < 1) throw ConfigError("partition: num_clients must be >= 1");
  if (samples.size() < static_cast<std::size_t>(num_clients))
    throw ConfigError("partition: fewer samples than clients");
  Rng rng(derive_seed(seed, 0x9a27));
  ClientPartition part;
  part.client_indices.resize(static_cast<std::size_t>(num_clients));

  if (mode == PartitionMode::IID) {
    std::vector<std::size_t> order(samples.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order);
    for (std::size_t i = 0; i < order.size(); ++i)
      part.client_indices[i % static_cast<std::size_t>(num_clients)].push_back(order[i]);
  } else {
    // Group indices by stratum: observed label values, then unlabeled.
    std::vector<std::vector<std::size_t>> strata;
    std::vector<int> stratum_labels;
    std::vector<std::size_t> unlabeled;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      if (!samples[i].label) {
        unlabeled.push_back(i);
        continue;
      }
      auto it = std::find(stratum_labels.begin(), stratum_labels.end(), *samples[i].label);
      if (it == stratum_labels.end()) {
        stratum_labels.push_back(*samples[i].label);
        strata.emplace_back();
        it = stratum_labels.end() - 1;
      }
      strata[static_cast<std::size_t>(it - stratum_labels.begin())].push_back(i);
    }
    if (!unlabeled.empty()) strata.push_back(std::move(unlabeled));

    for (auto& stratum : strata) {
      rng.shuffle(stratum);
      std::vector<double> props = rng.dirichlet(static_cast<std::size_t>(num_clients),
                                                dirichlet_beta);
      // Largest-remainder apportionment of the stratum across clients.
      std::vector<std::size_t> counts(props.size());
      std::vector<std::pair<double, std::size_t>> remainders;
      std::size_t assigned = 0;
      for (std::size_t k = 0; k < props.size(); ++k) {
        double exact = props[k] * static_cast<double>(stratum.size());
        counts[k] = static_cast<std::size_t>(std::floor(exact));
        assigned += counts[k];
        remainders.push_back({exact - std::floor(exact), k});
      }
      std::stable_sort(remainders.begin(), remainders.end(),
                       [](const auto& a, const auto& b) { return a.first > b.first; });
      for (std::size_t r = 0; assigned < stratum.size(); ++r, ++assigned)
        counts[remainders[r % remainders.size()].second]++;

      std::size_t cursor = 0;
      for (std::size_t k = 0; k < counts.size(); ++k)
        for (std::size_t c = 0; c < counts[k]; ++c)
          part.client_indices[k].push_back(stratum[cursor++]);
    }
  }
  for (auto& idx : part.client_indices) std::sort(idx.begin(), idx.end());
  return part;
}

namespace detail {

inline DomainDescriptor domain_at(const GeneratorConfig& cfg, int t) {
  DomainDescriptor d;
  if (cfg.modality == Modality::Features) {
    d.noise_sd = cfg.noise_sd;
    d.mean_class0.assign(static_cast<std::size_t>(cfg.feature_dim), 0.0);
    d.mean_class1.assign(static_cast<std::size_t>(cfg.feature_dim), 0.0);
    const double half = cfg.class_separation / 2.0;
    const double theta = cfg.drift_rotation * static_cast<double>(t);
    const double shift = cfg.drift_magnitude * static_cast<double>(t);
    // Class means sit at +-half on the first axis, rotated in the (0, 1)
    // plane, then both translated along the second axis.
    d.mean_class1[0] = half * std::cos(theta);
    d.mean_class1[1] = half * std::sin(theta) + shift;
    d.mean_class0[0] = -half * std::cos(theta);
    d.mean_class0[1] = -half * std::sin(theta) + shift;
  } else {
    d.stay_prob_class0 = 0.45;
    d.stay_prob_class1 = 0.80;
    const std::size_t c = static_cast<std::size_t>(cfg.num_clusters);
    std::vector<double> base0(c, 1.0);
    std::vector<double> base1(c, 0.25);
    base1[0] = 6.0;  // symptomatic trajectories concentrate on the home cluster
    base1[1] = 2.0;
    // Drift blends each affinity toward a version anchored half a vocabulary
    // away, shifting which clusters dominate the walks.
    const double w = std::min(1.0, 0.5 * cfg.drift_magnitude * static_cast<double>(t));
    auto blend = [&](const std::vector<double>& base) {
      std::vector<double> out(c);
      double sum = 0.0;
      for (std::size_t i = 0; i < c; ++i) {
        out[i] = (1.0 - w) * base[i] + w * base[(i + c / 2) % c];
        sum += out[i];
      }
      for (double& v : out) v /= sum;
      return out;
    };
    d.affinity_class0 = blend(base0);
    d.affinity_class1 = blend(base1);
  }
  return d;
}

inline std::size_t sample_categorical(const std::vector<double>& probs, Rng& rng) {
  double u = rng.uniform();
  double acc = 0.0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    acc += probs[i];
    if (u < acc) return i;
  }
  return probs.size() - 1;
}

inline Sample draw_sample(const GeneratorConfig& cfg, const DomainDescriptor& d, int t,
                          Rng& rng) {
  Sample s;
  s.time_index = t;
  int y = rng.bernoulli(cfg.positive_prevalence) ? 1 : 0;
  s.label = y;
  if (cfg.modality == Modality::Features) {
    const auto& mean = (y == 1) ? d.mean_class1 : d.mean_class0;
    std::vector<double> x(static_cast<std::size_t>(cfg.feature_dim));
    for (std::size_t i = 0; i < x.size(); ++i) x[i] = rng.normal(mean[i], d.noise_sd);
    s.payload = std::move(x);
  } else {
    const auto& affinity = (y == 1) ? d.affinity_class1 : d.affinity_class0;
    const double stay = (y == 1) ? d.stay_prob_class1 : d.stay_prob_class0;
    std::vector<int> walk;
    walk.reserve(static_cast<std::size_t>(cfg.walk_length));
    int here = static_cast<int>(sample_categorical(affinity, rng));
    walk.push_back(here);
    for (int step = 1; step < cfg.walk_length; ++step) {
      if (!rng.bernoulli(stay)) here = static_cast<int>(sample_categorical(affinity, rng));
      walk.push_back(here);
    }
    s.payload = build_mobility_graph(walk, cfg.num_clusters);
  }
  return s;
}

}  // namespace detail

// Generates T time-ordered batches. Per batch: draw labels and payloads from
// the t-th domain, partition across clients, then hide labels uniformly at
// random so that roughly labeled_fraction of samples keep theirs.
inline std::vector<StreamBatch> generate_stream(const GeneratorConfig& cfg, int num_batches) {
  cfg.validate();
  if (num_batches < 1) throw ConfigError("generate_stream: need at least one batch");
  std::vector<StreamBatch> stream;
  stream.reserve(static_cast<std::size_t>(num_batches));
  for (int t = 0; t < num_batches; ++t) {
    StreamBatch batch;
    batch.time_index = t;
    batch.domain = detail::domain_at(cfg, t);

    Rng rng(derive_seed(cfg.seed, 0x57e4, static_cast<std::uint64_t>(t)));
    const std::size_t total =
        static_cast<std::size_t>(cfg.num_clients) * static_cast<std::size_t>(cfg.samples_per_client);
    std::vector<Sample> drawn;
    drawn.reserve(total);
    for (std::size_t i = 0; i < total; ++i)
      drawn.push_back(detail::draw_sample(cfg, batch.domain, t, rng));

    ClientPartition part = partition_clients(
        drawn, cfg.partition, cfg.num_clients, cfg.dirichlet_beta,
        derive_seed(cfg.seed, 0x9a12, static_cast<std::uint64_t>(t)));

    std::vector<bool> keep_label(total);
    for (std::size_t i = 0; i < total; ++i) {
      keep_label[i] = rng.bernoulli(cfg.labeled_fraction);
      // Annotation error: an observed label flips with probability label_noise.
      if (keep_label[i] && cfg.label_noise > 0.0 && rng.bernoulli(cfg.label_noise))
        drawn[i].label = 1 - *drawn[i].label;
    }

    batch.clients.resize(static_cast<std::size_t>(cfg.num_clients));
    for (int k = 0; k < cfg.num_clients; ++k) {
      for (std::size_t idx : part.client_indices[static_cast<std::size_t>(k)]) {
        Sample s = drawn[idx];
        s.client_id = k;
        if (keep_label[idx]) {
          batch.clients[static_cast<std::size_t>(k)].labeled.push_back(std::move(s));
        } else {
          s.label.reset();
          batch.clients[static_cast<std::size_t>(k)].unlabeled.push_back(std::move(s));
        }
      }
    }
    stream.push_back(std::move(batch));
  }
  return stream;
}

// x + Gaussian noise, i.i.d. per coordinate.
inline std::vector<double> perturb_features(const std::vector<double>& x, double noise_sd,
                                            Rng& rng) {
  if (noise_sd < 0.0) throw InputError("perturb_features: noise_sd must be >= 0");
  if (noise_sd == 0.0) return x;
  std::vector<double> out = x;
  for (double& v : out) v += rng.normal(0.0, noise_sd);
  return out;
}

struct DatasetSplit {
  std::vector<Sample> train, validation, test;
};

// Stratified 70/20/10-style split: each label value and the unlabeled pool are
// split separately with largest-remainder rounding, so per-split prevalence
// tracks the global one.
inline DatasetSplit split_dataset(const std::vector<Sample>& samples,
                                  std::array<double, 3> ratios, std::uint64_t seed) {
  double sum = ratios[0] + ratios[1] + ratios[2];
  if (std::abs(sum - 1.0) > 1e-9) throw ConfigError("split: ratios must sum to 1");
  for (double r : ratios)
    if (r < 0.0) throw ConfigError("split: ratios must be >= 0");

  std::vector<std::vector<std::size_t>> strata;
  std::vector<int> stratum_labels;
  std::vector<std::size_t> unlabeled;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (!samples[i].label) {
      unlabeled.push_back(i);
      continue;
    }
    auto it = std::find(stratum_labels.begin(), stratum_labels.end(), *samples[i].label);
    if (it == stratum_labels.end()) {
      stratum_labels.push_back(*samples[i].label);
      strata.emplace_back();
      it = stratum_labels.end() - 1;
    }
    strata[static_cast<std::size_t>(it - stratum_labels.begin())].push_back(i);
  }
  if (!unlabeled.empty()) strata.push_back(std::move(unlabeled));

  Rng rng(derive_seed(seed, 0x5b1d));
  std::array<std::vector<std::size_t>, 3> picks;
  for (auto& stratum : strata) {
    rng.shuffle(stratum);
    std::array<std::size_t, 3> counts{};
    std::array<double, 3> rem{};
    std::size_t assigned = 0;
    for (std::size_t s = 0; s < 3; ++s) {
      double exact = ratios[s] * static_cast<double>(stratum.size());
      counts[s] = static_cast<std::size_t>(std::floor(exact));
      rem[s] = exact - std::floor(exact);
      assigned += counts[s];
    }
    while (assigned < stratum.size()) {
      std::size_t best = 0;
      for (std::size_t s = 1; s < 3; ++s)
        if (rem[s] > rem[best]) best = s;
      counts[best]++;
      rem[best] = -1.0;
      ++assigned;
    }
    std::size_t cursor = 0;
    for (std::size_t s = 0; s < 3; ++s)
      for (std::size_t c = 0; c < counts[s]; ++c) picks[s].push_back(stratum[cursor++]);
  }

  DatasetSplit split;
  for (std::size_t s = 0; s < 3; ++s) {
    std::sort(picks[s].begin(), picks[s].end());
    auto& dst = (s == 0) ? split.train : (s == 1) ? split.validation : split.test;
    dst.reserve(picks[s].size());
    for (std::size_t idx : picks[s]) dst.push_back(samples[idx]);
  }
  return split;
}

inline std::vector<Sample> flatten(const StreamBatch& batch) {
  std::vector<Sample> out;
  for (const auto& client : batch.clients) {
    out.insert(out.end(), client.labeled.begin(), client.labeled.end());
    out.insert(out.end(), client.unlabeled.begin(), client.unlabeled.end());
  }
  return out;
}

inline std::vector<Sample> flatten(const std::vector<StreamBatch>& stream) {
  std::vector<Sample> out;
  for (const auto& batch : stream) {
    auto part = flatten(batch);
    out.insert(out.end(), part.begin(), part.end());
  }
  return out;
}

// ----- dataset text files ----------------------------------------------------

namespace detail {

inline std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

inline std::vector<std::string> split_fields(const std::string& line, char delim) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, delim)) fields.push_back(field);
  if (!line.empty() && line.back() == delim) fields.push_back("");
  return fields;
}

}  // namespace detail

// Feature samples: one row per sample, "client_id,time_index,label,f0,f1,...",
// empty label field = unlabeled. Graph samples: one block per sample with a
// header row, node rows and edge rows. Both formats round-trip losslessly.
inline void write_dataset(const std::vector<Sample>& samples, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open for writing: " + path);
  for (const auto& s : samples) {
    if (!s.is_graph()) {
      out << s.client_id << ',' << s.time_index << ',';
      if (s.label) out << *s.label;
      for (double v : s.features()) out << ',' << detail::fmt_double(v);
      out << '\n';
    } else {
      const auto& g = s.graph();
      out << "graph " << s.client_id << ' ' << s.time_index << ' '
          << (s.label ? std::to_string(*s.label) : "?") << '\n';
      out << "nodes " << g.num_nodes() << ' ' << g.node_features.cols << '\n';
      for (std::size_t i = 0; i < g.num_nodes(); ++i) {
        out << "node " << g.node_ids[i];
        for (std::size_t c = 0; c < g.node_features.cols; ++c)
          out << ' ' << detail::fmt_double(g.node_features.at(i, c));
        out << '\n';
      }
      out << "edges " << g.edges.size() << '\n';
      for (auto [u, v] : g.edges) out << "edge " << u << ' ' << v << '\n';
    }
  }
  if (!out.good()) throw IoError("write failed: " + path);
}

inline std::vector<Sample> read_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open for reading: " + path);
  std::vector<Sample> samples;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (line.rfind("graph ", 0) == 0) {
      Sample s;
      TrajectoryGraph g;
      std::istringstream header(line.substr(6));
      std::string label_field;
      header >> s.client_id >> s.time_index >> label_field;
      if (label_field != "?") s.label = std::stoi(label_field);

      std::size_t n = 0, feat_dim = 0, m = 0;
      std::string tag;
      if (!(in >> tag >> n >> feat_dim) || tag != "nodes")
        throw IoError("dataset: malformed graph block in " + path);
      g.node_ids.resize(n);
      g.node_features = DenseMatrix(n, feat_dim);
      for (std::size_t i = 0; i < n; ++i) {
        if (!(in >> tag >> g.node_ids[i]) || tag != "node")
          throw IoError("dataset: malformed node row in " + path);
        for (std::size_t c = 0; c < feat_dim; ++c) in >> g.node_features.at(i, c);
      }
      if (!(in >> tag >> m) || tag != "edges")
        throw IoError("dataset: malformed edge header in " + path);
      g.edges.resize(m);
      for (std::size_t i = 0; i < m; ++i) {
        if (!(in >> tag >> g.edges[i].first >> g.edges[i].second) || tag != "edge")
          throw IoError("dataset: malformed edge row in " + path);
      }
      std::getline(in, line);  // consume the rest of the last edge line
      s.payload = std::move(g);
      samples.push_back(std::move(s));
    } else {
      auto fields = detail::split_fields(line, ',');
      if (fields.size() < 4) throw IoError("dataset: malformed row in " + path);
      Sample s;
      s.client_id = std::stoi(fields[0]);
      s.time_index = std::stoi(fields[1]);
      if (!fields[2].empty()) s.label = std::stoi(fields[2]);
      std::vector<double> x(fields.size() - 3);
      for (std::size_t i = 0; i < x.size(); ++i) x[i] = std::stod(fields[i + 3]);
      s.payload = std::move(x);
      samples.push_back(std::move(s));
    }
  }
  return samples;
}

}  // namespace fedmobile
