#pragma once

// Dataset ingestion and client partitioning.
//
//  * load_idx          MNIST-style IDX image/label pairs, plain or gzip.
//  * synth_blobs       Gaussian class clusters for runs without real data.
//  * dirichlet_partition
//                      carves test and distillation sets off the pool, then
//                      splits each class over the clients by a Dirichlet draw.
//
// Partition specs serialize to a line-oriented "key = value" text file; see
// write_partition() for the layout.

#include <zlib.h>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "fedadt/dataset.hpp"
#include "fedadt/error.hpp"
#include "fedadt/rng.hpp"

namespace fedadt {

struct PartitionSpec {
  std::vector<IndexList> client_shards;
  IndexList distill_indices;
  IndexList test_indices;
  double dirichlet_alpha = 1.0;
  std::uint64_t seed = 0;
  std::size_t num_samples = 0;

  std::size_t num_clients() const noexcept { return client_shards.size(); }
  friend bool operator==(const PartitionSpec&, const PartitionSpec&) = default;
};

namespace detail {

inline std::vector<unsigned char> read_maybe_gzip(const std::string& path) {
  gzFile f = gzopen(path.c_str(), "rb");
  if (!f) throw ParseError(path, "cannot open file");
  std::vector<unsigned char> bytes;
  unsigned char buf[1 << 16];
  int n = 0;
  while ((n = gzread(f, buf, sizeof buf)) > 0) bytes.insert(bytes.end(), buf, buf + n);
  const bool failed = n < 0;
  gzclose(f);
  if (failed) throw IdxError(IdxError::Kind::truncated, path, "corrupt gzip stream");
  return bytes;
}

inline std::uint32_t read_be32(const std::vector<unsigned char>& b, std::size_t off) {
  return (std::uint32_t{b[off]} << 24) | (std::uint32_t{b[off + 1]} << 16) |
         (std::uint32_t{b[off + 2]} << 8) | std::uint32_t{b[off + 3]};
}

}  // namespace detail

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

// Pixels are scaled by 1/255. class_count is max(label) + 1.
// `limit` > 0 keeps only the first `limit` samples.
inline Dataset load_idx(const std::string& images_path, const std::string& labels_path,
                        std::size_t limit = 0) {
  using K = IdxError::Kind;
  const auto img = detail::read_maybe_gzip(images_path);
  const auto lab = detail::read_maybe_gzip(labels_path);

  if (img.size() < 4) throw IdxError(K::truncated, images_path, "truncated IDX header");
  if (detail::read_be32(img, 0) != kIdxImagesMagic)
    throw IdxError(K::bad_magic, images_path, "bad IDX magic for image file");
  if (img.size() < 16) throw IdxError(K::truncated, images_path, "truncated IDX header");
  if (lab.size() < 4) throw IdxError(K::truncated, labels_path, "truncated IDX header");
  if (detail::read_be32(lab, 0) != kIdxLabelsMagic)
    throw IdxError(K::bad_magic, labels_path, "bad IDX magic for label file");
  if (lab.size() < 8) throw IdxError(K::truncated, labels_path, "truncated IDX header");

  const std::size_t n_img = detail::read_be32(img, 4);
  const std::size_t rows = detail::read_be32(img, 8);
  const std::size_t cols = detail::read_be32(img, 12);
  const std::size_t n_lab = detail::read_be32(lab, 4);
  const std::size_t dim = rows * cols;
  if (dim == 0) throw IdxError(K::truncated, images_path, "zero-sized images");
  if (img.size() < 16 + n_img * dim)
    throw IdxError(K::truncated, images_path,
                   "truncated pixel data (header claims " + std::to_string(n_img) + " images)");
  if (lab.size() < 8 + n_lab)
    throw IdxError(K::truncated, labels_path,
                   "truncated label data (header claims " + std::to_string(n_lab) + " labels)");
  if (n_img != n_lab)
    throw IdxError(K::count_mismatch, labels_path,
                   "label count " + std::to_string(n_lab) + " != image count " +
                       std::to_string(n_img) + " in " + images_path);

  const std::size_t n = limit > 0 ? std::min(limit, n_img) : n_img;
  std::vector<double> features(n * dim);
  for (std::size_t k = 0; k < n * dim; ++k) features[k] = img[16 + k] / 255.0;
  std::vector<Label> labels(n);
  Label max_label = 0;
  for (std::size_t k = 0; k < n; ++k) {
    labels[k] = lab[8 + k];
    max_label = std::max(max_label, labels[k]);
  }
  return Dataset(std::move(features), std::move(labels), dim, std::size_t{max_label} + 1);
}

// Shape of the synthetic clusters. Class c is centred on
// separation * (+/-) e_(c mod dim); the sign flips for c >= dim.
struct BlobShape {
  double separation = 4.0;
  double noise = 1.0;
};

// Isotropic Gaussian blobs, one per class, min-max scaled into [0, 1] with a
// single global range (so cluster geometry is preserved up to scale).
inline Dataset synth_blobs(std::size_t class_count, std::size_t per_class, std::size_t dim,
                           std::uint64_t seed, BlobShape shape = {}) {
  if (class_count == 0 || per_class == 0 || dim == 0)
    throw InvalidInput("synth_blobs: all counts must be >= 1");
  if (class_count > 2 * dim) throw InvalidInput("synth_blobs: need dim >= class_count / 2");
  auto rng = make_stream(seed, StreamTag::synth);
  std::normal_distribution<double> gauss(0.0, shape.noise);
  const std::size_t n = class_count * per_class;
  std::vector<double> features(n * dim);
  std::vector<Label> labels(n);
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t c = k % class_count;
    labels[k] = static_cast<Label>(c);
    for (std::size_t j = 0; j < dim; ++j) features[k * dim + j] = gauss(rng);
    features[k * dim + c % dim] += (c < dim ? 1.0 : -1.0) * shape.separation;
  }
  const auto [lo, hi] = std::minmax_element(features.begin(), features.end());
  const double lo_v = *lo;
  const double range = *hi - *lo > 0.0 ? *hi - *lo : 1.0;
  for (auto& v : features) v = (v - lo_v) / range;
  return Dataset(std::move(features), std::move(labels), dim, class_count);
}

// Per-class label-skew partition.
//
// Test indices are drawn uniformly first, then the distillation set
// (round(distill_frac * pool) samples, pool = N - |test|). Each class of the
// remaining pool is shuffled and cut at floor(cumsum(p) * n_c) where
// p ~ Dirichlet(alpha, ..., alpha) over the clients.
inline PartitionSpec dirichlet_partition(const Dataset& ds, std::size_t clients, double alpha,
                                         double distill_frac, double test_frac,
                                         std::uint64_t seed) {
  if (clients == 0) throw InvalidInput("dirichlet_partition: need at least one client");
  if (!(alpha > 0.0)) throw InvalidParameter("dirichlet_partition: alpha must be > 0");
  if (!(distill_frac >= 0.0 && distill_frac < 0.5))
    throw InvalidParameter("dirichlet_partition: distill_frac must be in [0, 0.5)");
  if (!(test_frac >= 0.0 && test_frac < 0.5))
    throw InvalidParameter("dirichlet_partition: test_frac must be in [0, 0.5)");

  const std::size_t n = ds.size();
  auto rng = make_stream(seed, StreamTag::partition);

  IndexList order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);

  PartitionSpec spec;
  spec.dirichlet_alpha = alpha;
  spec.seed = seed;
  spec.num_samples = n;

  const auto n_test = static_cast<std::size_t>(std::llround(test_frac * static_cast<double>(n)));
  const std::size_t pool = n - n_test;
  const auto n_distill =
      static_cast<std::size_t>(std::llround(distill_frac * static_cast<double>(pool)));
  spec.test_indices.assign(order.begin(), order.begin() + n_test);
  spec.distill_indices.assign(order.begin() + n_test, order.begin() + n_test + n_distill);
  std::sort(spec.test_indices.begin(), spec.test_indices.end());
  std::sort(spec.distill_indices.begin(), spec.distill_indices.end());

  std::vector<IndexList> by_class(ds.class_count());
  IndexList rest(order.begin() + n_test + n_distill, order.end());
  std::sort(rest.begin(), rest.end());
  for (auto i : rest) by_class[ds.label(i)].push_back(i);

  spec.client_shards.assign(clients, {});
  std::gamma_distribution<double> gamma(alpha, 1.0);
  std::vector<double> props(clients);
  for (auto& members : by_class) {
    if (members.empty()) continue;
    std::shuffle(members.begin(), members.end(), rng);
    double total = 0.0;
    for (auto& p : props) total += (p = gamma(rng));
    if (!(total > 0.0)) {
      // Every gamma variate underflowed (tiny alpha); fall back to one winner.
      std::fill(props.begin(), props.end(), 0.0);
      props[std::uniform_int_distribution<std::size_t>(0, clients - 1)(rng)] = 1.0;
      total = 1.0;
    }
    const double m = static_cast<double>(members.size());
    double cum = 0.0;
    std::size_t begin = 0;
    for (std::size_t c = 0; c < clients; ++c) {
      cum += props[c] / total;
      std::size_t end =
          c + 1 == clients ? members.size()
                           : std::min(members.size(), static_cast<std::size_t>(cum * m));
      end = std::max(end, begin);
      auto& shard = spec.client_shards[c];
      shard.insert(shard.end(), members.begin() + begin, members.begin() + end);
      begin = end;
    }
  }
  for (std::size_t c = 0; c < clients; ++c) {
    auto& shard = spec.client_shards[c];
    if (shard.empty())
      throw InfeasiblePartition("dirichlet_partition: client " + std::to_string(c) +
                                " received no samples (seed " + std::to_string(seed) + ")");
    std::sort(shard.begin(), shard.end());
  }
  return spec;
}

// Checks disjointness and bounds; with `require_coverage` every index in
// [0, num_samples) must be assigned somewhere.
inline void validate_partition(const PartitionSpec& spec, bool require_coverage = true) {
  std::vector<char> seen(spec.num_samples, 0);
  auto mark = [&](const IndexList& list, const char* what) {
    for (auto i : list) {
      if (i >= spec.num_samples)
        throw InvalidInput(std::string("partition: ") + what + " index out of range");
      if (seen[i]) throw InvalidInput(std::string("partition: ") + what + " index reused");
      seen[i] = 1;
    }
  };
  mark(spec.test_indices, "test");
  mark(spec.distill_indices, "distill");
  for (const auto& shard : spec.client_shards) {
    if (shard.empty()) throw InvalidInput("partition: empty client shard");
    mark(shard, "client");
  }
  if (require_coverage && std::find(seen.begin(), seen.end(), 0) != seen.end())
    throw InvalidInput("partition: some samples are not assigned");
}

// Layout:
//   format = fedadt-partition-v1
//   num_samples = N
//   clients = M
//   dirichlet_alpha = a
//   seed = s
//   test = i i i ...
//   distill = i i ...
//   client.0 = i i ...
//   ...
// Blank lines and '#' comments are ignored on import.
inline void write_partition(std::ostream& os, const PartitionSpec& spec) {
  auto list = [&](const char* key, const IndexList& v) {
    os << key << " =";
    for (auto i : v) os << ' ' << i;
    os << '\n';
  };
  std::ostringstream alpha;
  alpha.precision(17);
  alpha << spec.dirichlet_alpha;
  os << "format = fedadt-partition-v1\n"
     << "num_samples = " << spec.num_samples << '\n'
     << "clients = " << spec.client_shards.size() << '\n'
     << "dirichlet_alpha = " << alpha.str() << '\n'
     << "seed = " << spec.seed << '\n';
  list("test", spec.test_indices);
  list("distill", spec.distill_indices);
  for (std::size_t c = 0; c < spec.client_shards.size(); ++c)
    list(("client." + std::to_string(c)).c_str(), spec.client_shards[c]);
}

inline PartitionSpec read_partition(std::istream& is, const std::string& name = "<partition>") {
  PartitionSpec spec;
  std::string line;
  bool have_format = false;
  std::size_t declared_clients = 0;
  std::size_t line_no = 0;
  auto parse_list = [&](const std::string& s) {
    IndexList v;
    std::istringstream in(s);
    std::string tok;
    while (in >> tok) {
      try {
        std::size_t pos = 0;
        v.push_back(std::stoull(tok, &pos));
        if (pos != tok.size()) throw std::invalid_argument(tok);
      } catch (const std::exception&) {
        throw ParseError(name, "line " + std::to_string(line_no) + ": bad index '" + tok + "'");
      }
    }
    return v;
  };
  while (std::getline(is, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ParseError(name, "line " + std::to_string(line_no) + ": expected key = value");
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
    };
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    try {
      if (key == "format") {
        if (val != "fedadt-partition-v1") throw ParseError(name, "unknown format '" + val + "'");
        have_format = true;
      } else if (key == "num_samples") {
        spec.num_samples = std::stoull(val);
      } else if (key == "clients") {
        declared_clients = std::stoull(val);
        spec.client_shards.resize(declared_clients);
      } else if (key == "dirichlet_alpha") {
        spec.dirichlet_alpha = std::stod(val);
      } else if (key == "seed") {
        spec.seed = std::stoull(val);
      } else if (key == "test") {
        spec.test_indices = parse_list(val);
      } else if (key == "distill") {
        spec.distill_indices = parse_list(val);
      } else if (key.rfind("client.", 0) == 0) {
        const std::size_t c = std::stoull(key.substr(7));
        if (c >= declared_clients)
          throw ParseError(name, "client index " + std::to_string(c) + " exceeds 'clients'");
        spec.client_shards[c] = parse_list(val);
      } else {
        throw ParseError(name, "line " + std::to_string(line_no) + ": unknown key '" + key + "'");
      }
    } catch (const ParseError&) {
      throw;
    } catch (const std::exception&) {
      throw ParseError(name, "line " + std::to_string(line_no) + ": bad value for '" + key + "'");
    }
  }
  if (!have_format) throw ParseError(name, "missing 'format' line");
  try {
    validate_partition(spec, false);
  } catch (const InvalidInput& e) {
    throw ParseError(name, e.what());
  }
  return spec;
}

inline void save_partition(const std::string& path, const PartitionSpec& spec) {
  std::ofstream os(path);
  if (!os) throw ConfigError("cannot write partition file " + path);
  write_partition(os, spec);
}

inline PartitionSpec load_partition(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open partition file " + path);
  return read_partition(is, path);
}

}  // namespace fedadt
