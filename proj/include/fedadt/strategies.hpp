#pragma once

// Server-side aggregation rules.
//
// Asynchronous rules consume one UpdateMessage at a time:
//   fedasync  w_g <- blend(w_g, w_i, beta(tau))
//   fedadt    as fedasync, but updates with tau > 1 are first distilled
//             toward the current w_g (see distill.hpp)
//   fedbuff   collect K updates, then blend with their mean using the mean
//             beta over the buffer, and empty the buffer
//   fedfa     sliding window of the last K updates; once full, every arrival
//             blends the window mean into w_g using the mean window beta
// Synchronous rules consume a whole round:
//   fedavg    w_g <- |D_i|-weighted mean of the round's client models
//   fedavgm   server momentum on the pseudo-gradient w_g - mean
//
// FedBuff and FedFa are reference baselines reconstructed from their
// one-line descriptions; they are not guaranteed to match the original
// implementations.

#include <algorithm>
#include <cstddef>
#include <deque>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "fedadt/distill.hpp"
#include "fedadt/error.hpp"
#include "fedadt/federation.hpp"
#include "fedadt/nn.hpp"

namespace fedadt {

enum class StrategyKind { fedavg, fedavgm, fedasync, fedfa, fedbuff, fedadt };

inline std::string_view to_string(StrategyKind k) {
  switch (k) {
    case StrategyKind::fedavg: return "fedavg";
    case StrategyKind::fedavgm: return "fedavgm";
    case StrategyKind::fedasync: return "fedasync";
    case StrategyKind::fedfa: return "fedfa";
    case StrategyKind::fedbuff: return "fedbuff";
    case StrategyKind::fedadt: return "fedadt";
  }
  return "?";
}

inline StrategyKind parse_strategy(std::string_view name) {
  for (auto k : {StrategyKind::fedavg, StrategyKind::fedavgm, StrategyKind::fedasync,
                 StrategyKind::fedfa, StrategyKind::fedbuff, StrategyKind::fedadt})
    if (to_string(k) == name) return k;
  throw ConfigError("unknown strategy '" + std::string(name) + "'");
}

inline bool is_synchronous(StrategyKind k) {
  return k == StrategyKind::fedavg || k == StrategyKind::fedavgm;
}

struct StrategyParams {
  std::size_t buffer_size = 10;   // K for fedbuff / fedfa
  double server_momentum = 0.9;   // fedavgm
  double sync_fraction = 0.1;     // clients sampled per synchronous round
  bool correction_enabled = true; // fedadt only; false reduces it to fedasync

  void validate() const {
    if (buffer_size == 0) throw InvalidParameter("strategy: buffer_size must be >= 1");
    if (!(server_momentum >= 0.0 && server_momentum < 1.0))
      throw InvalidParameter("strategy: server_momentum must be in [0, 1)");
    if (!(sync_fraction > 0.0 && sync_fraction <= 1.0))
      throw InvalidParameter("strategy: sync_fraction must be in (0, 1]");
  }
};

struct GlobalState {
  ParamVector w;
  Timestamp t_g = 0;
  ParamVector momentum;               // fedavgm
  std::deque<UpdateMessage> buffer;   // fedbuff / fedfa
};

// What happened to one arrival.
struct ArrivalOutcome {
  bool aggregated = false;
  bool corrected = false;
  Timestamp tau = 0;
  double beta = 1.0;
};

// Everything FedADT needs to run a correction.
struct DistillContext {
  const ModelArch* arch = nullptr;
  DataView data;
  DistillConfig cfg;
};

inline ArrivalOutcome on_update_fedasync(GlobalState& gs, const UpdateMessage& msg) {
  ArrivalOutcome out;
  out.tau = staleness(gs.t_g, msg.trained_from);
  out.beta = beta_weight(out.tau);
  gs.w = blend(gs.w, msg.w_client, out.beta);
  gs.t_g += 1;
  out.aggregated = true;
  return out;
}

// The tau > 1 gate is strict: staleness 0 and 1 skip the correction.
// With correction_enabled = false this is exactly on_update_fedasync.
inline ArrivalOutcome on_update_fedadt(GlobalState& gs, const UpdateMessage& msg,
                                       const DistillContext& distill,
                                       bool correction_enabled = true) {
  const Timestamp tau = staleness(gs.t_g, msg.trained_from);
  if (!correction_enabled || tau <= 1) return on_update_fedasync(gs, msg);

  ArrivalOutcome out;
  out.tau = tau;
  out.corrected = true;
  const ParamVector w_i = correct(msg.w_client, gs.w, gs.t_g, distill.data, *distill.arch,
                                  distill.cfg);
  out.beta = beta_weight(tau);
  gs.w = blend(gs.w, w_i, out.beta);
  gs.t_g += 1;
  out.aggregated = true;
  return out;
}

namespace detail {

// Blend the buffer's mean model into w_g with the mean staleness weight,
// staleness measured against the current t_g.
inline void aggregate_buffer(GlobalState& gs) {
  const std::size_t n = gs.buffer.size();
  ParamVector mean(gs.w.size(), 0.0);
  double beta_sum = 0.0;
  for (const auto& m : gs.buffer) {
    if (m.w_client.size() != mean.size()) throw InvalidInput("buffer: length mismatch");
    for (std::size_t k = 0; k < mean.size(); ++k) mean[k] += m.w_client[k];
    beta_sum += beta_weight(staleness(gs.t_g, m.trained_from));
  }
  const double inv = static_cast<double>(n);
  for (auto& v : mean) v /= inv;
  gs.w = blend(gs.w, mean, beta_sum / inv);
  gs.t_g += 1;
}

}  // namespace detail

inline ArrivalOutcome on_update_fedbuff(GlobalState& gs, const UpdateMessage& msg,
                                        std::size_t capacity) {
  if (capacity == 0) throw InvalidParameter("fedbuff: capacity must be >= 1");
  ArrivalOutcome out;
  out.tau = staleness(gs.t_g, msg.trained_from);
  out.beta = beta_weight(out.tau);
  gs.buffer.push_back(msg);
  if (gs.buffer.size() >= capacity) {
    detail::aggregate_buffer(gs);
    gs.buffer.clear();
    out.aggregated = true;
  }
  return out;
}

inline ArrivalOutcome on_update_fedfa(GlobalState& gs, const UpdateMessage& msg,
                                      std::size_t capacity) {
  if (capacity == 0) throw InvalidParameter("fedfa: capacity must be >= 1");
  ArrivalOutcome out;
  out.tau = staleness(gs.t_g, msg.trained_from);
  out.beta = beta_weight(out.tau);
  gs.buffer.push_back(msg);
  while (gs.buffer.size() > capacity) gs.buffer.pop_front();
  if (gs.buffer.size() == capacity) {
    detail::aggregate_buffer(gs);
    out.aggregated = true;
  }
  return out;
}

// One synchronous round. `expected` lists the clients selected for the round;
// every one of them must appear in `msgs` exactly once.
inline void round_sync(GlobalState& gs, const std::vector<UpdateMessage>& msgs,
                       const std::vector<std::size_t>& expected, StrategyKind kind,
                       double momentum = 0.9) {
  if (!is_synchronous(kind)) throw InvalidParameter("round_sync: not a synchronous strategy");
  std::vector<std::size_t> got;
  got.reserve(msgs.size());
  for (const auto& m : msgs) got.push_back(m.client_id);
  std::vector<std::size_t> want = expected;
  std::sort(got.begin(), got.end());
  std::sort(want.begin(), want.end());
  if (got != want)
    throw ProtocolError("round_sync: received " + std::to_string(got.size()) +
                        " updates that do not match the " + std::to_string(want.size()) +
                        " selected clients");
  if (msgs.empty()) throw ProtocolError("round_sync: empty round");

  double total = 0.0;
  for (const auto& m : msgs) total += static_cast<double>(m.sample_count);
  if (!(total > 0.0)) throw ProtocolError("round_sync: updates carry no sample counts");
  ParamVector mean(gs.w.size(), 0.0);
  for (const auto& m : msgs) {
    staleness(gs.t_g, m.trained_from);
    if (m.w_client.size() != mean.size()) throw InvalidInput("round_sync: length mismatch");
    const double weight = static_cast<double>(m.sample_count) / total;
    for (std::size_t k = 0; k < mean.size(); ++k) mean[k] += weight * m.w_client[k];
  }

  if (kind == StrategyKind::fedavg) {
    gs.w = std::move(mean);
  } else {
    if (gs.momentum.size() != gs.w.size()) gs.momentum.assign(gs.w.size(), 0.0);
    for (std::size_t k = 0; k < gs.w.size(); ++k) {
      const double delta = gs.w[k] - mean[k];
      gs.momentum[k] = momentum * gs.momentum[k] + delta;
      gs.w[k] -= gs.momentum[k];
    }
  }
  gs.t_g += 1;
}

// A configured aggregation rule. Asynchronous kinds go through on_update();
// synchronous kinds through round(). FedADT needs a DistillContext.
class Strategy {
 public:
  Strategy(StrategyKind kind, StrategyParams params = {},
           std::optional<DistillContext> distill = std::nullopt)
      : kind_(kind), params_(params), distill_(std::move(distill)) {
    params_.validate();
    if (kind_ == StrategyKind::fedadt) {
      if (!distill_ || distill_->arch == nullptr)
        throw ConfigError("fedadt requires a distillation context");
      if (distill_->data.data == nullptr || distill_->data.indices.empty())
        throw ConfigError("fedadt requires a nonempty distillation set");
      distill_->cfg.validate();
    }
  }

  StrategyKind kind() const noexcept { return kind_; }
  const StrategyParams& params() const noexcept { return params_; }
  bool synchronous() const noexcept { return is_synchronous(kind_); }
  const std::optional<DistillContext>& distill() const noexcept { return distill_; }

  ArrivalOutcome on_update(GlobalState& gs, const UpdateMessage& msg) const {
    switch (kind_) {
      case StrategyKind::fedasync: return on_update_fedasync(gs, msg);
      case StrategyKind::fedadt:
        return on_update_fedadt(gs, msg, *distill_, params_.correction_enabled);
      case StrategyKind::fedbuff: return on_update_fedbuff(gs, msg, params_.buffer_size);
      case StrategyKind::fedfa: return on_update_fedfa(gs, msg, params_.buffer_size);
      default: throw InvalidParameter("on_update: synchronous strategy needs round()");
    }
  }

  void round(GlobalState& gs, const std::vector<UpdateMessage>& msgs,
             const std::vector<std::size_t>& expected) const {
    round_sync(gs, msgs, expected, kind_, params_.server_momentum);
  }

 private:
  StrategyKind kind_;
  StrategyParams params_;
  std::optional<DistillContext> distill_;
};

}  // namespace fedadt
