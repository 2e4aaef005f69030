#pragma once

// Run configuration and the data -> partition -> simulate pipeline.
//
// A configuration file holds one `key = value` per line; '#' starts a
// comment. Keys (defaults in parentheses):
//
//   dataset            synthetic | idx                      (synthetic)
//   synth_classes      classes for synthetic blobs           (10)
//   synth_per_class    samples per class                     (300)
//   synth_dim          feature dimension                     (20)
//   synth_separation   distance of a class mean from origin  (4)
//   synth_noise        per-coordinate standard deviation     (1)
//   idx_train_images / idx_train_labels                      IDX paths (.gz ok)
//   idx_test_images / idx_test_labels                        optional test pair
//   idx_limit          keep the first n training samples     (0 = all)
//   idx_test_limit     keep the first n test samples         (0 = all)
//   hidden             comma list of hidden widths, or none  (128)
//   activation         relu | tanh                           (relu)
//   clients            M                                     (500)
//   dirichlet_alpha    label-skew concentration              (0.1)
//   distill_frac       server distillation share of the pool (0.005)
//   test_frac          held-out test share                   (0.2 synthetic,
//                                                              0 with IDX test files)
//   partition_file     reuse a saved partition spec instead of drawing one
//   seed               base seed for every random stream     (1)
//   concurrency        P                                     (0.2)
//   resample_batch     clients drawn per top-up              (50)
//   latency_max        response time ~ U(0, latency_max)     (5000)
//   latency_mode       per_dispatch | per_client             (per_dispatch)
//   budget             virtual seconds                       (1296000)
//   max_rounds         stop once t_g reaches this, 0 = never (0)
//   eval_interval      aggregations between evaluations      (20)
//   correction_cost    virtual seconds per correction        (0)
//   strategy           fedavg|fedavgm|fedasync|fedfa|fedbuff|fedadt (fedadt)
//   buffer_size        K                                     (10)
//   server_momentum    fedavgm momentum                      (0.9)
//   sync_fraction      clients per synchronous round         (0.1)
//   correction         fedadt corrections on/off             (true)
//   lr, lr_decay       client step size and per-round decay  (0.01, 0.9999)
//   batch              client minibatch                      (32)
//   local_steps        Q                                     (5)
//   temperature        distillation T                        (3)
//   alpha_min, alpha_max                                     (0.2, 0.6)
//   warmup_rounds      T_g of the alpha ramp                 (1000)
//   distill_epochs     passes over the distillation set      (1)
//   distill_lr         distillation step size                (= lr)
//   distill_batch      distillation minibatch                (32)
//   kl_t_squared       multiply the KL term by T^2           (false)
//   out                metrics CSV path                      (metrics.csv)
//   trace              optional event trace path             ("")

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "fedadt/data.hpp"
#include "fedadt/distill.hpp"
#include "fedadt/error.hpp"
#include "fedadt/metrics.hpp"
#include "fedadt/nn.hpp"
#include "fedadt/simengine.hpp"
#include "fedadt/strategies.hpp"

namespace fedadt {

struct DatasetSpec {
  std::string kind = "synthetic";
  std::size_t synth_classes = 10;
  std::size_t synth_per_class = 300;
  std::size_t synth_dim = 20;
  BlobShape synth_shape;
  std::string idx_train_images, idx_train_labels;
  std::string idx_test_images, idx_test_labels;
  std::size_t idx_limit = 0;
  std::size_t idx_test_limit = 0;

  bool has_idx_test() const { return !idx_test_images.empty() || !idx_test_labels.empty(); }
};

struct RunConfig {
  DatasetSpec data;
  std::vector<std::size_t> hidden{128};
  Activation activation = Activation::relu;
  double dirichlet_alpha = 0.1;
  double distill_frac = 0.005;
  std::optional<double> test_frac;
  std::string partition_file;
  SimConfig sim{.seed = 1};
  StrategyKind strategy = StrategyKind::fedadt;
  StrategyParams strategy_params;
  TrainConfig train;
  DistillConfig distill;
  std::optional<double> distill_lr;
  std::string out = "metrics.csv";
  std::string trace;

  double effective_test_frac() const {
    if (test_frac) return *test_frac;
    return data.kind == "idx" && data.has_idx_test() ? 0.0 : 0.2;
  }

  DistillConfig effective_distill() const {
    DistillConfig d = distill;
    d.lr = distill_lr.value_or(train.lr);
    return d;
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  const auto e = s.find_last_not_of(" \t\r");
  return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
}

template <class T>
T parse_value(const std::string& key, const std::string& v) {
  T out{};
  if (!parse_number(std::string_view(v), out))
    throw ConfigError("config key '" + key + "': cannot parse '" + v + "'");
  return out;
}

inline bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw ConfigError("config key '" + key + "': expected true/false, got '" + v + "'");
}

using Setter = std::function<void(RunConfig&, const std::string& key, const std::string& v)>;

inline const std::map<std::string, Setter>& config_setters() {
  using R = RunConfig;
  using S = std::string;
  static const std::map<std::string, Setter> table = {
      {"dataset",
       [](R& c, const S& k, const S& v) {
         if (v != "synthetic" && v != "idx")
           throw ConfigError("config key '" + k + "': expected synthetic or idx");
         c.data.kind = v;
       }},
      {"synth_classes", [](R& c, const S& k, const S& v) { c.data.synth_classes = parse_value<std::size_t>(k, v); }},
      {"synth_per_class", [](R& c, const S& k, const S& v) { c.data.synth_per_class = parse_value<std::size_t>(k, v); }},
      {"synth_dim", [](R& c, const S& k, const S& v) { c.data.synth_dim = parse_value<std::size_t>(k, v); }},
      {"synth_separation", [](R& c, const S& k, const S& v) { c.data.synth_shape.separation = parse_value<double>(k, v); }},
      {"synth_noise", [](R& c, const S& k, const S& v) { c.data.synth_shape.noise = parse_value<double>(k, v); }},
      {"idx_train_images", [](R& c, const S&, const S& v) { c.data.idx_train_images = v; }},
      {"idx_train_labels", [](R& c, const S&, const S& v) { c.data.idx_train_labels = v; }},
      {"idx_test_images", [](R& c, const S&, const S& v) { c.data.idx_test_images = v; }},
      {"idx_test_labels", [](R& c, const S&, const S& v) { c.data.idx_test_labels = v; }},
      {"idx_limit", [](R& c, const S& k, const S& v) { c.data.idx_limit = parse_value<std::size_t>(k, v); }},
      {"idx_test_limit", [](R& c, const S& k, const S& v) { c.data.idx_test_limit = parse_value<std::size_t>(k, v); }},
      {"hidden",
       [](R& c, const S& k, const S& v) {
         c.hidden.clear();
         if (v == "none" || v.empty()) return;
         std::stringstream ss(v);
         std::string tok;
         while (std::getline(ss, tok, ',')) c.hidden.push_back(parse_value<std::size_t>(k, trim(tok)));
       }},
      {"activation",
       [](R& c, const S& k, const S& v) {
         if (v == "relu") c.activation = Activation::relu;
         else if (v == "tanh") c.activation = Activation::tanh;
         else throw ConfigError("config key '" + k + "': expected relu or tanh");
       }},
      {"clients", [](R& c, const S& k, const S& v) { c.sim.clients = parse_value<std::size_t>(k, v); }},
      {"dirichlet_alpha", [](R& c, const S& k, const S& v) { c.dirichlet_alpha = parse_value<double>(k, v); }},
      {"distill_frac", [](R& c, const S& k, const S& v) { c.distill_frac = parse_value<double>(k, v); }},
      {"test_frac", [](R& c, const S& k, const S& v) { c.test_frac = parse_value<double>(k, v); }},
      {"partition_file", [](R& c, const S&, const S& v) { c.partition_file = v; }},
      {"seed", [](R& c, const S& k, const S& v) { c.sim.seed = parse_value<std::uint64_t>(k, v); }},
      {"concurrency", [](R& c, const S& k, const S& v) { c.sim.concurrency = parse_value<double>(k, v); }},
      {"resample_batch", [](R& c, const S& k, const S& v) { c.sim.resample_batch = parse_value<std::size_t>(k, v); }},
      {"latency_max", [](R& c, const S& k, const S& v) { c.sim.latency_max = parse_value<double>(k, v); }},
      {"latency_mode",
       [](R& c, const S& k, const S& v) {
         if (v == "per_dispatch") c.sim.latency_mode = LatencyMode::per_dispatch;
         else if (v == "per_client") c.sim.latency_mode = LatencyMode::per_client;
         else throw ConfigError("config key '" + k + "': expected per_dispatch or per_client");
       }},
      {"budget", [](R& c, const S& k, const S& v) { c.sim.budget = parse_value<double>(k, v); }},
      {"max_rounds", [](R& c, const S& k, const S& v) { c.sim.max_rounds = parse_value<Timestamp>(k, v); }},
      {"eval_interval", [](R& c, const S& k, const S& v) { c.sim.eval_interval = parse_value<Timestamp>(k, v); }},
      {"correction_cost", [](R& c, const S& k, const S& v) { c.sim.correction_cost = parse_value<double>(k, v); }},
      {"strategy",
       [](R& c, const S&, const S& v) {
         c.strategy = parse_strategy(v);
       }},
      {"buffer_size", [](R& c, const S& k, const S& v) { c.strategy_params.buffer_size = parse_value<std::size_t>(k, v); }},
      {"server_momentum", [](R& c, const S& k, const S& v) { c.strategy_params.server_momentum = parse_value<double>(k, v); }},
      {"sync_fraction", [](R& c, const S& k, const S& v) { c.strategy_params.sync_fraction = parse_value<double>(k, v); }},
      {"correction", [](R& c, const S& k, const S& v) { c.strategy_params.correction_enabled = parse_bool(k, v); }},
      {"lr", [](R& c, const S& k, const S& v) { c.train.lr = parse_value<double>(k, v); }},
      {"lr_decay", [](R& c, const S& k, const S& v) { c.train.lr_decay = parse_value<double>(k, v); }},
      {"batch", [](R& c, const S& k, const S& v) { c.train.batch = parse_value<std::size_t>(k, v); }},
      {"local_steps", [](R& c, const S& k, const S& v) { c.train.local_steps = parse_value<std::size_t>(k, v); }},
      {"temperature", [](R& c, const S& k, const S& v) { c.distill.temperature = parse_value<double>(k, v); }},
      {"alpha_min", [](R& c, const S& k, const S& v) { c.distill.alpha_min = parse_value<double>(k, v); }},
      {"alpha_max", [](R& c, const S& k, const S& v) { c.distill.alpha_max = parse_value<double>(k, v); }},
      {"warmup_rounds", [](R& c, const S& k, const S& v) { c.distill.warmup_rounds = parse_value<Timestamp>(k, v); }},
      {"distill_epochs", [](R& c, const S& k, const S& v) { c.distill.epochs = parse_value<std::size_t>(k, v); }},
      {"distill_lr", [](R& c, const S& k, const S& v) { c.distill_lr = parse_value<double>(k, v); }},
      {"distill_batch", [](R& c, const S& k, const S& v) { c.distill.batch = parse_value<std::size_t>(k, v); }},
      {"kl_t_squared", [](R& c, const S& k, const S& v) { c.distill.kl_t_squared = parse_bool(k, v); }},
      {"out", [](R& c, const S&, const S& v) { c.out = v; }},
      {"trace", [](R& c, const S&, const S& v) { c.trace = v; }},
  };
  return table;
}

}  // namespace detail

inline void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value) {
  const auto& table = detail::config_setters();
  const auto it = table.find(key);
  if (it == table.end()) throw ConfigError("unknown config key '" + key + "'");
  it->second(cfg, key, value);
}

// "key=value" as given on the command line.
inline void apply_override(RunConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos)
    throw ConfigError("override '" + assignment + "' is not of the form key=value");
  apply_setting(cfg, detail::trim(assignment.substr(0, eq)), detail::trim(assignment.substr(eq + 1)));
}

inline RunConfig parse_config(std::istream& is, const std::string& name = "<config>") {
  RunConfig cfg;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(name + ":" + std::to_string(line_no) + ": expected key = value");
    try {
      apply_setting(cfg, detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(name + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return cfg;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file " + path);
  return parse_config(is, path);
}

// Range and file checks; everything here fails before any simulation work.
inline void validate(const RunConfig& cfg) {
  cfg.sim.validate();
  cfg.train.validate();
  try {
    cfg.strategy_params.validate();
    cfg.effective_distill().validate();
  } catch (const InvalidParameter& e) {
    throw ConfigError(e.what());
  }
  if (!(cfg.dirichlet_alpha > 0.0)) throw ConfigError("dirichlet_alpha must be > 0");
  if (!(cfg.distill_frac >= 0.0 && cfg.distill_frac < 0.5))
    throw ConfigError("distill_frac must be in [0, 0.5)");
  const double tf = cfg.effective_test_frac();
  if (!(tf >= 0.0 && tf < 0.5)) throw ConfigError("test_frac must be in [0, 0.5)");
  if (cfg.strategy == StrategyKind::fedadt && cfg.distill_frac <= 0.0 && cfg.partition_file.empty())
    throw ConfigError("fedadt needs distill_frac > 0");
  for (auto h : cfg.hidden)
    if (h == 0) throw ConfigError("hidden layer widths must be >= 1");
  auto need_file = [](const std::string& key, const std::string& path) {
    if (path.empty()) throw ConfigError("config key '" + key + "' is required");
    if (!std::filesystem::exists(path))
      throw ConfigError("config key '" + key + "': file not found: " + path);
  };
  if (cfg.data.kind == "idx") {
    need_file("idx_train_images", cfg.data.idx_train_images);
    need_file("idx_train_labels", cfg.data.idx_train_labels);
    if (cfg.data.has_idx_test()) {
      need_file("idx_test_images", cfg.data.idx_test_images);
      need_file("idx_test_labels", cfg.data.idx_test_labels);
    } else if (tf <= 0.0) {
      throw ConfigError("no IDX test files given and test_frac is 0: nothing to evaluate on");
    }
  } else if (cfg.data.synth_classes == 0 || cfg.data.synth_per_class == 0 ||
             cfg.data.synth_dim == 0) {
    throw ConfigError("synthetic dataset sizes must be >= 1");
  }
  if (!cfg.partition_file.empty()) need_file("partition_file", cfg.partition_file);
}

// Everything a simulation reads, owned in one place.
struct Experiment {
  Dataset train;
  std::optional<Dataset> test;  // separate IDX test split, if any
  PartitionSpec partition;
  ModelArch arch{{1, 1}};
  IndexList test_indices;

  const Dataset& test_data() const { return test ? *test : train; }
};

inline Dataset load_training_data(const RunConfig& cfg) {
  if (cfg.data.kind == "idx")
    return load_idx(cfg.data.idx_train_images, cfg.data.idx_train_labels, cfg.data.idx_limit);
  return synth_blobs(cfg.data.synth_classes, cfg.data.synth_per_class, cfg.data.synth_dim,
                     cfg.sim.seed, cfg.data.synth_shape);
}

inline constexpr std::size_t kPartitionAttempts = 1000;

// Draws a Dirichlet partition, retrying infeasible draws with derived seeds
// seed + k * 0x9E3779B97F4A7C15 (k = 0, 1, ...). The seed that succeeded is
// stored in the returned spec.
inline PartitionSpec make_partition(const RunConfig& cfg, const Dataset& ds) {
  if (!cfg.partition_file.empty()) {
    PartitionSpec spec = load_partition(cfg.partition_file);
    if (spec.num_samples != ds.size())
      throw ConfigError("partition file " + cfg.partition_file + " was built for " +
                        std::to_string(spec.num_samples) + " samples, dataset has " +
                        std::to_string(ds.size()));
    return spec;
  }
  for (std::size_t k = 0; k < kPartitionAttempts; ++k) {
    const std::uint64_t s = cfg.sim.seed + k * 0x9E3779B97F4A7C15ull;
    try {
      return dirichlet_partition(ds, cfg.sim.clients, cfg.dirichlet_alpha, cfg.distill_frac,
                                 cfg.effective_test_frac(), s);
    } catch (const InfeasiblePartition&) {
    }
  }
  throw ConfigError("could not find a partition giving every client a sample after " +
                    std::to_string(kPartitionAttempts) + " draws; use fewer clients or more data");
}

inline Experiment prepare_experiment(const RunConfig& cfg) {
  validate(cfg);
  Experiment ex;
  ex.train = load_training_data(cfg);
  if (cfg.data.kind == "idx" && cfg.data.has_idx_test())
    ex.test = load_idx(cfg.data.idx_test_images, cfg.data.idx_test_labels, cfg.data.idx_test_limit);
  ex.partition = make_partition(cfg, ex.train);
  if (ex.test) {
    ex.test_indices.resize(ex.test->size());
    for (std::size_t i = 0; i < ex.test_indices.size(); ++i) ex.test_indices[i] = i;
  } else {
    ex.test_indices = ex.partition.test_indices;
  }
  std::size_t classes = ex.train.class_count();
  if (ex.test) classes = std::max(classes, ex.test->class_count());
  std::vector<std::size_t> sizes{ex.train.dim()};
  sizes.insert(sizes.end(), cfg.hidden.begin(), cfg.hidden.end());
  sizes.push_back(classes);
  ex.arch = ModelArch(sizes, cfg.activation);
  return ex;
}

// The simulator for a prepared experiment. `ex` must outlive the result.
inline Simulator make_simulator(const RunConfig& cfg, const Experiment& ex) {
  std::optional<DistillContext> ctx;
  if (cfg.strategy == StrategyKind::fedadt) {
    if (ex.partition.distill_indices.empty())
      throw ConfigError("fedadt: the distillation set is empty; raise distill_frac");
    ctx = DistillContext{&ex.arch, DataView{&ex.train, ex.partition.distill_indices},
                         cfg.effective_distill()};
  }
  Strategy strategy(cfg.strategy, cfg.strategy_params, ctx);
  Workload wl{&ex.train, &ex.partition, &ex.test_data(), ex.test_indices};
  return Simulator(cfg.sim, cfg.train, std::move(strategy), ex.arch, std::move(wl),
                   init_params(ex.arch, cfg.sim.seed));
}

struct RunResult {
  std::vector<MetricsRecord> metrics;
  std::vector<TraceEntry> trace;  // filled when cfg.trace is set or requested
};

inline RunResult run_experiment(const RunConfig& cfg, bool keep_trace = false) {
  const Experiment ex = prepare_experiment(cfg);
  Simulator sim = make_simulator(cfg, ex);
  sim.set_record_trace(keep_trace || !cfg.trace.empty());
  RunResult out;
  out.metrics = sim.run();
  out.trace = sim.trace();
  return out;
}

}  // namespace fedadt
