#pragma once

// Deterministic discrete-event simulation of a federated server and its
// clients in virtual time.
//
// Events are processed in (time, seq) order; seq is a global insertion
// counter, so equal-time events run in scheduling order. Client training
// happens at dispatch against the snapshot (w_g, t_g); the result is held
// until the sampled response time elapses.
//
// Asynchronous strategies keep at least ceil(P * M) clients in flight: after
// every arrival, while fewer are in flight, up to resample_batch idle
// clients are drawn uniformly without replacement and dispatched.
// Synchronous strategies run classic rounds: sample ceil(fraction * M)
// clients, wait for all of them (the slowest one fixes the round length),
// aggregate, repeat.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <ostream>
#include <queue>
#include <random>
#include <string>
#include <vector>

#include "fedadt/data.hpp"
#include "fedadt/dataset.hpp"
#include "fedadt/distill.hpp"
#include "fedadt/error.hpp"
#include "fedadt/federation.hpp"
#include "fedadt/metrics.hpp"
#include "fedadt/nn.hpp"
#include "fedadt/rng.hpp"
#include "fedadt/strategies.hpp"

namespace fedadt {

enum class LatencyMode { per_dispatch, per_client };

struct SimConfig {
  std::size_t clients = 500;
  double concurrency = 0.2;
  std::size_t resample_batch = 50;
  double latency_max = 5000.0;
  LatencyMode latency_mode = LatencyMode::per_dispatch;
  double budget = 1'296'000.0;  // 15 days
  Timestamp max_rounds = 0;     // 0: stop on budget only
  Timestamp eval_interval = 20;
  std::uint64_t seed = 0;
  double correction_cost = 0.0;  // virtual seconds charged per FedADT correction

  void validate() const {
    if (clients == 0) throw ConfigError("sim: clients must be >= 1");
    if (!(concurrency > 0.0 && concurrency <= 1.0))
      throw ConfigError("sim: concurrency must be in (0, 1]");
    if (resample_batch == 0) throw ConfigError("sim: resample_batch must be >= 1");
    if (!(latency_max > 0.0)) throw ConfigError("sim: latency_max must be > 0");
    if (!(budget >= 0.0)) throw ConfigError("sim: budget must be >= 0");
    if (max_rounds < 0) throw ConfigError("sim: max_rounds must be >= 0");
    if (eval_interval <= 0) throw ConfigError("sim: eval_interval must be >= 1");
    if (!(correction_cost >= 0.0)) throw ConfigError("sim: correction_cost must be >= 0");
  }
};

// Client-side optimisation settings. The learning rate handed to a newly
// dispatched client is lr * lr_decay^t_g.
struct TrainConfig {
  double lr = 0.01;
  double lr_decay = 0.9999;
  std::size_t local_steps = 5;
  std::size_t batch = 32;

  void validate() const {
    if (!(lr >= 0.0)) throw ConfigError("train: lr must be >= 0");
    if (!(lr_decay > 0.0 && lr_decay <= 1.0)) throw ConfigError("train: lr_decay must be in (0, 1]");
    if (local_steps == 0) throw ConfigError("train: local_steps must be >= 1");
    if (batch == 0) throw ConfigError("train: batch must be >= 1");
  }
};

// Response time of the dispatch_index-th dispatch of `client`, drawn
// U(0, latency_max). In per_client mode every dispatch of a client reuses
// one draw.
inline double dispatch_latency(const SimConfig& cfg, std::size_t client,
                               std::uint64_t dispatch_index) {
  auto rng = cfg.latency_mode == LatencyMode::per_client
                 ? make_stream(cfg.seed, StreamTag::latency, {client})
                 : make_stream(cfg.seed, StreamTag::latency, {client, dispatch_index});
  return std::uniform_real_distribution<double>(0.0, cfg.latency_max)(rng);
}

enum class EventKind { arrival, eval, resample_check };

inline const char* to_string(EventKind k) {
  switch (k) {
    case EventKind::arrival: return "arrival";
    case EventKind::eval: return "eval";
    case EventKind::resample_check: return "resample_check";
  }
  return "?";
}

struct Event {
  double time = 0.0;
  EventKind kind = EventKind::eval;
  std::size_t client_id = 0;
  std::uint64_t seq = 0;
};

struct EventAfter {
  bool operator()(const Event& a, const Event& b) const {
    return a.time != b.time ? a.time > b.time : a.seq > b.seq;
  }
};

// One processed event. Fields that do not apply to the kind stay zero.
struct TraceEntry {
  double time = 0.0;
  EventKind kind = EventKind::eval;
  std::size_t client_id = 0;
  Timestamp t_g_before = 0;
  Timestamp t_g = 0;
  Timestamp trained_from = 0;
  Timestamp tau = 0;
  double beta = 0.0;
  double dispatch_time = 0.0;
  double arrival_time = 0.0;
  std::size_t in_flight = 0;  // after concurrency enforcement
  bool aggregated = false;
  bool corrected = false;
};

// Data the simulation reads. Test rows may live in a separate dataset.
struct Workload {
  const Dataset* train = nullptr;
  const PartitionSpec* partition = nullptr;
  const Dataset* test = nullptr;
  IndexList test_indices;
};

class Simulator {
 public:
  Simulator(SimConfig cfg, TrainConfig train, Strategy strategy, ModelArch arch, Workload wl,
            ParamVector w0)
      : cfg_(cfg),
        train_(train),
        strategy_(std::move(strategy)),
        arch_(std::move(arch)),
        wl_(std::move(wl)),
        sched_rng_(make_stream(cfg.seed, StreamTag::scheduler)) {
    cfg_.validate();
    train_.validate();
    if (!wl_.train || !wl_.partition || !wl_.test) throw ConfigError("sim: incomplete workload");
    if (wl_.partition->num_clients() != cfg_.clients)
      throw ConfigError("sim: partition has " + std::to_string(wl_.partition->num_clients()) +
                        " clients, config asks for " + std::to_string(cfg_.clients));
    if (wl_.partition->num_samples != wl_.train->size())
      throw ConfigError("sim: partition was built for a different dataset size");
    if (wl_.train->dim() != arch_.input_dim() || wl_.test->dim() != arch_.input_dim())
      throw ConfigError("sim: dataset dimension does not match model input");
    if (wl_.train->class_count() > arch_.class_count() ||
        wl_.test->class_count() > arch_.class_count())
      throw ConfigError("sim: dataset has more classes than the model outputs");
    if (wl_.test_indices.empty()) throw ConfigError("sim: empty test set");
    if (w0.size() != arch_.param_count()) throw ConfigError("sim: initial parameters mismatch");

    gs_.w = std::move(w0);
    clients_.resize(cfg_.clients);
    for (std::size_t c = 0; c < cfg_.clients; ++c) {
      auto& cs = clients_[c];
      cs.client_id = c;
      cs.shard = wl_.partition->client_shards[c];
      cs.rng_seed = cfg_.seed;
      cs.steps = train_.local_steps;
      cs.batch_size = train_.batch;
    }
    in_flight_.assign(cfg_.clients, false);
    pending_.resize(cfg_.clients);
  }

  // Schedules the initial evaluation and the first dispatch wave at time 0.
  void seed() {
    if (seeded_) return;
    seeded_ = true;
    push(0.0, EventKind::eval, 0);
    push(0.0, EventKind::resample_check, 0);
  }

  bool has_events() const noexcept { return !queue_.empty(); }
  const Event& peek() const {
    if (queue_.empty()) throw InvariantViolation("sim: event queue is empty");
    return queue_.top();
  }

  // Pops and processes the earliest event.
  Event step() {
    if (!seeded_) throw ConfigError("sim: step() before seed(); no events scheduled");
    if (queue_.empty()) throw InvariantViolation("sim: event queue is empty");
    const Event ev = queue_.top();
    queue_.pop();
    clock_ = std::max(clock_, ev.time);

    TraceEntry te;
    te.time = clock_;
    te.kind = ev.kind;
    te.client_id = ev.client_id;
    te.t_g_before = gs_.t_g;
    switch (ev.kind) {
      case EventKind::arrival: handle_arrival(ev.client_id, te); break;
      case EventKind::eval: evaluate_now(); break;
      case EventKind::resample_check:
        if (strategy_.synchronous())
          begin_round();
        else
          enforce_concurrency();
        break;
    }
    te.t_g = gs_.t_g;
    te.in_flight = in_flight_count_;
    if (record_trace_) trace_.push_back(te);
    return ev;
  }

  // Tops the in-flight set back up to ceil(P * M). No-op for synchronous
  // strategies and when every client is already busy.
  void enforce_concurrency() {
    if (strategy_.synchronous()) return;
    const std::size_t required = required_concurrency();
    while (in_flight_count_ < required) {
      std::vector<std::size_t> idle;
      for (std::size_t c = 0; c < cfg_.clients; ++c)
        if (!in_flight_[c]) idle.push_back(c);
      if (idle.empty()) break;
      for (auto c : sample_without_replacement(idle, cfg_.resample_batch)) dispatch(c);
    }
  }

  // Trains `client` from the current snapshot and schedules its arrival.
  Event dispatch(std::size_t client) {
    if (client >= cfg_.clients) throw InvalidInput("dispatch: unknown client");
    if (in_flight_[client])
      throw InvariantViolation("dispatch: client " + std::to_string(client) + " already in flight");
    auto& cs = clients_[client];
    cs.lr = train_.lr * std::pow(train_.lr_decay, static_cast<double>(gs_.t_g));
    UpdateMessage msg = client_train(cs, gs_.w, gs_.t_g, arch_, *wl_.train);
    msg.dispatch_time = clock_;
    msg.arrival_time = clock_ + dispatch_latency(cfg_, client, cs.dispatch_index);
    ++cs.dispatch_index;
    ++dispatches_;
    const double at = msg.arrival_time;
    pending_[client] = std::move(msg);
    in_flight_[client] = true;
    ++in_flight_count_;
    return push(at, EventKind::arrival, client);
  }

  // Runs until the next event would pass the budget, or max_rounds is hit,
  // then evaluates the final model if it has not been evaluated yet.
  const std::vector<MetricsRecord>& run() {
    seed();
    while (!queue_.empty() && !stopped_) {
      if (queue_.top().time > cfg_.budget) break;
      step();
    }
    if (records_.empty() || records_.back().round != gs_.t_g) evaluate_now();
    return records_;
  }

  std::size_t required_concurrency() const noexcept {
    // The small slack keeps e.g. 0.1 * 30 from rounding up to 4.
    const double want = cfg_.concurrency * static_cast<double>(cfg_.clients) - 1e-9;
    return std::min(cfg_.clients, static_cast<std::size_t>(std::max(0.0, std::ceil(want))));
  }

  void set_record_trace(bool on) { record_trace_ = on; }
  void set_record_arrivals(bool on) { record_arrivals_ = on; }

  double clock() const noexcept { return clock_; }
  const GlobalState& global() const noexcept { return gs_; }
  std::size_t in_flight() const noexcept { return in_flight_count_; }
  bool is_in_flight(std::size_t c) const { return in_flight_.at(c); }
  bool stopped() const noexcept { return stopped_; }
  std::uint64_t corrections() const noexcept { return corrections_; }
  const SimConfig& config() const noexcept { return cfg_; }
  const std::vector<MetricsRecord>& records() const noexcept { return records_; }
  const std::vector<TraceEntry>& trace() const noexcept { return trace_; }
  const std::vector<UpdateMessage>& arrivals() const noexcept { return arrivals_; }
  std::uint64_t dispatches() const noexcept { return dispatches_; }

 private:
  Event push(double time, EventKind kind, std::size_t client) {
    Event ev{time, kind, client, next_seq_++};
    queue_.push(ev);
    return ev;
  }

  std::vector<std::size_t> sample_without_replacement(std::vector<std::size_t> pool,
                                                      std::size_t k) {
    k = std::min(k, pool.size());
    for (std::size_t i = 0; i < k; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
      std::swap(pool[i], pool[pick(sched_rng_)]);
    }
    pool.resize(k);
    return pool;
  }

  void handle_arrival(std::size_t client, TraceEntry& te) {
    if (!in_flight_[client])
      throw InvariantViolation("arrival for idle client " + std::to_string(client));
    UpdateMessage msg = std::move(pending_[client]);
    in_flight_[client] = false;
    --in_flight_count_;
    const double latency = msg.arrival_time - msg.dispatch_time;
    if (!(latency >= 0.0 && latency <= cfg_.latency_max))
      throw InvariantViolation("arrival latency outside [0, latency_max]");
    te.dispatch_time = msg.dispatch_time;
    te.arrival_time = msg.arrival_time;
    te.trained_from = msg.trained_from;
    if (record_arrivals_) arrivals_.push_back(msg);

    if (strategy_.synchronous()) {
      te.tau = staleness(gs_.t_g, msg.trained_from);
      te.beta = 1.0;
      note_staleness(te.tau);
      round_msgs_.push_back(std::move(msg));
      if (round_msgs_.size() == round_selected_.size()) {
        strategy_.round(gs_, round_msgs_, round_selected_);
        check_finite();
        te.aggregated = true;
        round_msgs_.clear();
        after_aggregation();
        if (!stopped_) begin_round();
      }
      return;
    }

    const ArrivalOutcome out = strategy_.on_update(gs_, msg);
    check_finite();
    te.tau = out.tau;
    te.beta = out.beta;
    te.aggregated = out.aggregated;
    te.corrected = out.corrected;
    note_staleness(out.tau);
    if (out.corrected) {
      ++corrections_;
      clock_ += cfg_.correction_cost;
    }
    if (out.aggregated) after_aggregation();
    enforce_concurrency();
  }

  void begin_round() {
    std::vector<std::size_t> all(cfg_.clients);
    for (std::size_t c = 0; c < cfg_.clients; ++c) all[c] = c;
    const double want =
        strategy_.params().sync_fraction * static_cast<double>(cfg_.clients) - 1e-9;
    const std::size_t k =
        std::clamp<std::size_t>(static_cast<std::size_t>(std::max(0.0, std::ceil(want))), 1,
                                cfg_.clients);
    round_selected_ = sample_without_replacement(std::move(all), k);
    round_msgs_.clear();
    for (auto c : round_selected_) dispatch(c);
  }

  void after_aggregation() {
    if (cfg_.max_rounds > 0 && gs_.t_g >= cfg_.max_rounds) stopped_ = true;
    if (gs_.t_g % cfg_.eval_interval == 0) push(clock_, EventKind::eval, 0);
  }

  void note_staleness(Timestamp tau) {
    window_tau_sum_ += static_cast<double>(tau);
    ++window_count_;
    window_tau_max_ = std::max(window_tau_max_, tau);
  }

  void check_finite() const {
    if (!all_finite(gs_.w)) throw InvariantViolation("global model became non-finite");
  }

  // A second evaluation at an identical virtual time replaces the first, so
  // record times stay strictly increasing.
  void evaluate_now() {
    const Evaluation ev = evaluate(arch_, gs_.w, *wl_.test, wl_.test_indices);
    MetricsRecord r;
    r.virtual_time = clock_;
    r.round = gs_.t_g;
    r.test_accuracy = ev.accuracy;
    r.test_loss = ev.mean_loss;
    r.mean_staleness = window_count_ ? window_tau_sum_ / static_cast<double>(window_count_) : 0.0;
    r.max_staleness = window_tau_max_;
    r.corrections_applied = corrections_;
    if (!records_.empty() && records_.back().virtual_time == clock_)
      records_.back() = r;
    else
      records_.push_back(r);
    window_tau_sum_ = 0.0;
    window_count_ = 0;
    window_tau_max_ = 0;
  }

  SimConfig cfg_;
  TrainConfig train_;
  Strategy strategy_;
  ModelArch arch_;
  Workload wl_;
  Engine sched_rng_;

  GlobalState gs_;
  std::vector<ClientState> clients_;
  std::vector<bool> in_flight_;
  std::vector<UpdateMessage> pending_;
  std::size_t in_flight_count_ = 0;
  std::uint64_t dispatches_ = 0;

  std::priority_queue<Event, std::vector<Event>, EventAfter> queue_;
  std::uint64_t next_seq_ = 0;
  double clock_ = 0.0;
  bool seeded_ = false;
  bool stopped_ = false;

  std::vector<std::size_t> round_selected_;
  std::vector<UpdateMessage> round_msgs_;

  double window_tau_sum_ = 0.0;
  std::size_t window_count_ = 0;
  Timestamp window_tau_max_ = 0;
  std::uint64_t corrections_ = 0;

  std::vector<MetricsRecord> records_;
  bool record_trace_ = false;
  std::vector<TraceEntry> trace_;
  bool record_arrivals_ = false;
  std::vector<UpdateMessage> arrivals_;
};

// One line per processed event: time kind client_id t_g tau beta.
inline void write_trace(std::ostream& os, const std::vector<TraceEntry>& trace) {
  os << "time kind client_id t_g tau beta\n";
  for (const auto& e : trace)
    os << detail::format_real(e.time) << ' ' << to_string(e.kind) << ' ' << e.client_id << ' '
       << e.t_g << ' ' << e.tau << ' ' << detail::format_real(e.beta) << '\n';
}

}  // namespace fedadt
