#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "fedadt/dataset.hpp"
#include "fedadt/error.hpp"
#include "fedadt/nn.hpp"
#include "fedadt/rng.hpp"

namespace fedadt {

using Timestamp = std::int64_t;

struct UpdateMessage {
  std::size_t client_id = 0;
  ParamVector w_client;
  Timestamp trained_from = 0;
  double dispatch_time = 0.0;
  double arrival_time = 0.0;
  std::size_t sample_count = 0;  // |D_i|, used by the synchronous weighting

  friend bool operator==(const UpdateMessage&, const UpdateMessage&) = default;
};

struct ClientState {
  std::size_t client_id = 0;
  IndexList shard;
  std::uint64_t rng_seed = 0;
  double lr = 0.01;
  std::size_t steps = 5;
  std::size_t batch_size = 32;
  // Bumped by the scheduler on every dispatch so each training run draws a
  // fresh minibatch stream while staying a pure function of this struct.
  std::uint64_t dispatch_index = 0;
};

// Q steps of minibatch SGD on the client's shard, starting from w.
// Minibatches are drawn uniformly with replacement, so shards smaller than
// the batch size are fine.
inline UpdateMessage client_train(const ClientState& cs, const ParamVector& w, Timestamp t,
                                  const ModelArch& arch, const Dataset& ds) {
  if (w.size() != arch.param_count()) throw InvalidInput("client_train: w does not match arch");
  if (cs.shard.empty()) throw InvalidInput("client_train: empty shard");
  if (cs.steps == 0 || cs.batch_size == 0)
    throw InvalidParameter("client_train: steps and batch_size must be >= 1");

  auto rng = make_stream(cs.rng_seed, StreamTag::client_train, {cs.client_id, cs.dispatch_index});
  std::uniform_int_distribution<std::size_t> pick(0, cs.shard.size() - 1);

  UpdateMessage msg;
  msg.client_id = cs.client_id;
  msg.trained_from = t;
  msg.sample_count = cs.shard.size();
  msg.w_client = w;

  IndexList batch(cs.batch_size);
  ParamVector grad;
  auto ce = [&](const Logits& z, std::size_t idx) { return cross_entropy(z, ds.label(idx)); };
  for (std::size_t q = 0; q < cs.steps; ++q) {
    for (auto& b : batch) b = cs.shard[pick(rng)];
    batch_gradient(arch, msg.w_client, ds, batch, ce, grad);
    sgd_update(msg.w_client, grad, cs.lr);
  }
  return msg;
}

inline Timestamp staleness(Timestamp t_global, Timestamp t_client) {
  if (t_client > t_global)
    throw InvariantViolation("staleness: client timestamp " + std::to_string(t_client) +
                             " is ahead of global timestamp " + std::to_string(t_global));
  return t_global - t_client;
}

// beta(tau) = 1 / sqrt(tau + 1)
inline double beta_weight(Timestamp tau) {
  if (tau < 0) throw InvalidParameter("beta_weight: negative staleness");
  return 1.0 / std::sqrt(static_cast<double>(tau) + 1.0);
}

// (1 - beta) * w_g + beta * w_i
inline ParamVector blend(const ParamVector& w_g, const ParamVector& w_i, double beta) {
  if (w_g.size() != w_i.size()) throw InvalidInput("blend: length mismatch");
  if (!(beta >= 0.0 && beta <= 1.0)) throw InvalidParameter("blend: beta must be in [0, 1]");
  ParamVector out(w_g.size());
  const double keep = 1.0 - beta;
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = keep * w_g[k] + beta * w_i[k];
  return out;
}

}  // namespace fedadt
