#pragma once

// Shared helpers for the test suites: independent oracles (finite
// differences, a naive MLP) and small workloads.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include <unistd.h>

#include "fedadt/fedadt.hpp"

namespace fedadt::testing {

// Central differences of f at x, step eps.
inline std::vector<double> numeric_gradient(const std::function<double(const std::vector<double>&)>& f,
                                            std::vector<double> x, double eps = 1e-5) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + eps;
    const double up = f(x);
    x[i] = orig - eps;
    const double down = f(x);
    x[i] = orig;
    g[i] = (up - down) / (2.0 * eps);
  }
  return g;
}

// ||a - b|| / max(||a||, ||b||), 0 when both vanish.
inline double relative_error(const std::vector<double>& a, const std::vector<double>& b) {
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double denom = std::sqrt(std::max(na, nb));
  return denom == 0.0 ? std::sqrt(diff) : std::sqrt(diff) / denom;
}

inline std::vector<double> random_vector(std::mt19937_64& rng, std::size_t n, double scale) {
  std::normal_distribution<double> g(0.0, scale);
  std::vector<double> v(n);
  for (auto& x : v) x = g(rng);
  return v;
}

inline std::vector<double> random_distribution(std::mt19937_64& rng, std::size_t n) {
  std::uniform_real_distribution<double> u(0.01, 1.0);
  std::vector<double> p(n);
  double s = 0.0;
  for (auto& x : p) s += (x = u(rng));
  for (auto& x : p) x /= s;
  return p;
}

// Straight matrix-vector MLP written without the flat-offset helpers:
// weights are first unpacked into nested per-layer matrices.
inline std::vector<double> naive_forward(const std::vector<std::size_t>& sizes, bool relu,
                                         const std::vector<double>& w,
                                         const std::vector<double>& x) {
  std::size_t pos = 0;
  std::vector<double> a = x;
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    const std::size_t in = sizes[l], out = sizes[l + 1];
    std::vector<std::vector<double>> W(out, std::vector<double>(in));
    for (std::size_t o = 0; o < out; ++o)
      for (std::size_t i = 0; i < in; ++i) W[o][i] = w[pos++];
    std::vector<double> b(out);
    for (std::size_t o = 0; o < out; ++o) b[o] = w[pos++];
    std::vector<double> z(out);
    for (std::size_t o = 0; o < out; ++o) {
      double s = 0.0;
      for (std::size_t i = 0; i < in; ++i) s += W[o][i] * a[i];
      z[o] = s + b[o];
    }
    if (l + 2 < sizes.size())
      for (auto& v : z) v = relu ? std::max(0.0, v) : std::tanh(v);
    a = z;
  }
  return a;
}

// Unique scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& tag) {
  auto dir = std::filesystem::temp_directory_path() /
             ("fedadt_test_" + tag + "_" + std::to_string(::getpid()));
  std::filesystem::create_directories(dir);
  return dir;
}

// A small self-contained workload: synthetic blobs, Dirichlet partition,
// MLP. Enough for simulator and strategy tests to run in milliseconds.
struct MiniWorkload {
  Dataset data;
  PartitionSpec partition;
  ModelArch arch;

  MiniWorkload(std::size_t clients, double alpha, std::uint64_t seed, std::size_t classes = 4,
               std::size_t per_class = 60, std::size_t dim = 6, std::size_t hidden = 8,
               double distill_frac = 0.05)
      : data(synth_blobs(classes, per_class, dim, seed)),
        arch(hidden ? std::vector<std::size_t>{dim, hidden, classes}
                    : std::vector<std::size_t>{dim, classes}) {
    for (std::uint64_t k = 0;; ++k) {
      try {
        partition = dirichlet_partition(data, clients, alpha, distill_frac, 0.2, seed + 7919 * k);
        break;
      } catch (const InfeasiblePartition&) {
      }
    }
  }

  Workload workload() const { return Workload{&data, &partition, &data, partition.test_indices}; }

  DistillContext distill(DistillConfig cfg = {}) const {
    return DistillContext{&arch, DataView{&data, partition.distill_indices}, cfg};
  }

  Simulator simulator(StrategyKind kind, SimConfig sim, StrategyParams params = {},
                      DistillConfig dcfg = {}, TrainConfig train = {}) const {
    std::optional<DistillContext> ctx;
    if (kind == StrategyKind::fedadt) ctx = distill(dcfg);
    return Simulator(sim, train, Strategy(kind, params, ctx), arch, workload(),
                     init_params(arch, sim.seed));
  }
};

}  // namespace fedadt::testing
