#pragma once

// Version correction for stale client models.
//
// A stale client model (student) is distilled toward the current global
// model (teacher) on a small server-held labelled set. The per-sample loss is
//
//   L = a * KL(softmax(z_S / T) || softmax(z_C / T)) + (1 - a) * CE(z_C, y)
//
// with the mixing weight a ramped linearly from alpha_min to alpha_max over
// the first warmup_rounds global rounds. The KL term carries no T^2 factor
// unless `kl_t_squared` is set.

#include <algorithm>
#include <cstddef>
#include <span>

#include "fedadt/dataset.hpp"
#include "fedadt/error.hpp"
#include "fedadt/federation.hpp"
#include "fedadt/nn.hpp"

namespace fedadt {

struct DistillConfig {
  double temperature = 3.0;
  double alpha_min = 0.2;
  double alpha_max = 0.6;
  Timestamp warmup_rounds = 1000;
  std::size_t epochs = 1;
  double lr = 0.01;
  std::size_t batch = 32;
  bool kl_t_squared = false;

  void validate() const {
    if (!(temperature > 0.0)) throw InvalidParameter("distill: temperature must be > 0");
    if (!(alpha_min >= 0.0 && alpha_min <= 1.0 && alpha_max >= 0.0 && alpha_max <= 1.0))
      throw InvalidParameter("distill: alpha_min/alpha_max must lie in [0, 1]");
    if (alpha_min > alpha_max) throw InvalidParameter("distill: alpha_min > alpha_max");
    if (warmup_rounds <= 0) throw InvalidParameter("distill: warmup_rounds must be >= 1");
    if (epochs == 0 || batch == 0)
      throw InvalidParameter("distill: epochs and batch must be >= 1");
    if (!(lr >= 0.0)) throw InvalidParameter("distill: lr must be >= 0");
  }
};

inline double adaptive_alpha(Timestamp t, const DistillConfig& cfg) {
  if (t < 0) throw InvalidParameter("adaptive_alpha: negative round");
  const double ramp = std::min(1.0, static_cast<double>(t) / static_cast<double>(cfg.warmup_rounds));
  return cfg.alpha_min + (cfg.alpha_max - cfg.alpha_min) * ramp;
}

// Loss and gradient w.r.t. the student logits only; the teacher is constant.
//   dKL/dz_C = (softmax(z_C/T) - softmax(z_S/T)) / T
//   dCE/dz_C = softmax(z_C) - onehot(y)
inline LossGrad kd_loss(std::span<const double> z_teacher, std::span<const double> z_student,
                        std::size_t label, double alpha, double temperature,
                        bool kl_t_squared = false) {
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw InvalidParameter("kd_loss: alpha must be in [0, 1]");
  if (!(temperature > 0.0)) throw InvalidParameter("kd_loss: temperature must be > 0");
  if (z_teacher.size() != z_student.size()) throw InvalidInput("kd_loss: logit length mismatch");

  const ProbDist p = softmax_t(z_teacher, temperature);
  const ProbDist q = softmax_t(z_student, temperature);
  LossGrad ce = cross_entropy(z_student, label);
  const double kl_scale = kl_t_squared ? temperature * temperature : 1.0;

  LossGrad out;
  out.loss = alpha * kl_scale * kl_div(p, q) + (1.0 - alpha) * ce.loss;
  out.grad.resize(z_student.size());
  const double kl_coeff = alpha * kl_scale / temperature;
  for (std::size_t i = 0; i < out.grad.size(); ++i)
    out.grad[i] = kl_coeff * (q[i] - p[i]) + (1.0 - alpha) * ce.grad[i];
  return out;
}

// Number of SGD steps one correction performs.
inline std::size_t distill_step_count(std::size_t set_size, const DistillConfig& cfg) {
  return cfg.epochs * ((set_size + cfg.batch - 1) / cfg.batch);
}

// Distills `w_stale` toward the frozen teacher `w_global` over `epochs`
// passes of the distillation set in its stored order, batch by batch.
// The weight a is adaptive_alpha(t_global).
inline ParamVector correct(const ParamVector& w_stale, const ParamVector& w_global,
                           Timestamp t_global, DataView distill_set, const ModelArch& arch,
                           const DistillConfig& cfg) {
  if (distill_set.data == nullptr || distill_set.indices.empty())
    throw ConfigError("correct: empty distillation set");
  if (w_stale.size() != arch.param_count() || w_global.size() != arch.param_count())
    throw InvalidInput("correct: parameter vector does not match arch");

  const Dataset& ds = *distill_set.data;
  const auto idx = distill_set.indices;
  const double alpha = adaptive_alpha(t_global, cfg);

  // Teacher logits do not change during the correction.
  std::vector<Logits> teacher(idx.size());
  for (std::size_t k = 0; k < idx.size(); ++k) teacher[k] = forward(arch, w_global, ds.row(idx[k]));

  ParamVector student = w_stale;
  ParamVector grad;
  std::size_t offset = 0;
  // batch_gradient visits a batch in order, so a running offset into idx
  // pairs each sample with its cached teacher logits.
  auto loss = [&](const Logits& z, std::size_t) {
    const std::size_t k = offset++;
    return kd_loss(teacher[k], z, ds.label(idx[k]), alpha, cfg.temperature, cfg.kl_t_squared);
  };
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    for (std::size_t start = 0; start < idx.size(); start += cfg.batch) {
      const std::size_t len = std::min(cfg.batch, idx.size() - start);
      offset = start;
      batch_gradient(arch, student, ds, idx.subspan(start, len), loss, grad);
      sgd_update(student, grad, cfg.lr);
    }
  }
  return student;
}

}  // namespace fedadt
