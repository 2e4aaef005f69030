#include <gtest/gtest.h>
#include <zlib.h>

#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include "fedadt/data.hpp"
#include "fedadt/nn.hpp"
#include "test_util.hpp"

using namespace fedadt;

namespace {

void put_be32(std::string& s, std::uint32_t v) {
  s.push_back(static_cast<char>(v >> 24));
  s.push_back(static_cast<char>(v >> 16));
  s.push_back(static_cast<char>(v >> 8));
  s.push_back(static_cast<char>(v));
}

std::string idx_images(std::uint32_t n, std::uint32_t rows, std::uint32_t cols) {
  std::string s;
  put_be32(s, kIdxImagesMagic);
  put_be32(s, n);
  put_be32(s, rows);
  put_be32(s, cols);
  for (std::uint32_t k = 0; k < n * rows * cols; ++k) s.push_back(static_cast<char>((k * 37) % 256));
  return s;
}

std::string idx_labels(std::uint32_t n) {
  std::string s;
  put_be32(s, kIdxLabelsMagic);
  put_be32(s, n);
  for (std::uint32_t k = 0; k < n; ++k) s.push_back(static_cast<char>(k % 10));
  return s;
}

std::string write_file(const std::filesystem::path& p, const std::string& bytes) {
  std::ofstream os(p, std::ios::binary);
  os << bytes;
  return p.string();
}

std::string write_gz(const std::filesystem::path& p, const std::string& bytes) {
  gzFile f = gzopen(p.string().c_str(), "wb");
  gzwrite(f, bytes.data(), static_cast<unsigned>(bytes.size()));
  gzclose(f);
  return p.string();
}

IdxError::Kind idx_error_kind(const std::string& img, const std::string& lab) {
  try {
    load_idx(img, lab);
  } catch (const IdxError& e) {
    return e.kind();
  }
  ADD_FAILURE() << "expected IdxError";
  return IdxError::Kind::bad_magic;
}

double label_entropy(const Dataset& ds, const IndexList& shard) {
  std::vector<double> counts(ds.class_count(), 0.0);
  for (auto i : shard) counts[ds.label(i)] += 1.0;
  double h = 0.0;
  for (double c : counts)
    if (c > 0) {
      const double p = c / static_cast<double>(shard.size());
      h -= p * std::log(p);
    }
  return h;
}

}  // namespace

TEST(LoadIdx, ReadsPlainAndGzip) {
  const auto dir = fedadt::testing::scratch_dir("idx");
  const auto img = idx_images(12, 3, 2);
  const auto lab = idx_labels(12);
  for (bool gz : {false, true}) {
    const auto ip = gz ? write_gz(dir / "img.gz", img) : write_file(dir / "img", img);
    const auto lp = gz ? write_gz(dir / "lab.gz", lab) : write_file(dir / "lab", lab);
    const Dataset ds = load_idx(ip, lp);
    EXPECT_EQ(ds.size(), 12u);
    EXPECT_EQ(ds.dim(), 6u);
    EXPECT_EQ(ds.class_count(), 10u);
    EXPECT_DOUBLE_EQ(ds.row(1)[0], ((6 * 37) % 256) / 255.0);
    EXPECT_EQ(ds.label(11), 1u);
  }
  EXPECT_EQ(load_idx(dir / "img", dir / "lab", 5).size(), 5u);
}

TEST(LoadIdx, DistinctErrors) {
  const auto dir = fedadt::testing::scratch_dir("idx_err");
  const auto good_img = write_file(dir / "img", idx_images(4, 2, 2));
  const auto good_lab = write_file(dir / "lab", idx_labels(4));
  const auto other_lab = write_file(dir / "lab5", idx_labels(5));
  const auto empty = write_file(dir / "empty", "");
  auto bad_magic_img = idx_images(4, 2, 2);
  bad_magic_img[3] = 0x01;
  const auto bad_img = write_file(dir / "badimg", bad_magic_img);
  auto cut = idx_images(4, 2, 2);
  cut.resize(cut.size() - 3);
  const auto cut_img = write_file(dir / "cutimg", cut);

  EXPECT_EQ(idx_error_kind(good_img, other_lab), IdxError::Kind::count_mismatch);
  EXPECT_EQ(idx_error_kind(empty, good_lab), IdxError::Kind::truncated);
  EXPECT_EQ(idx_error_kind(good_img, empty), IdxError::Kind::truncated);
  EXPECT_EQ(idx_error_kind(bad_img, good_lab), IdxError::Kind::bad_magic);
  EXPECT_EQ(idx_error_kind(good_lab, good_lab), IdxError::Kind::bad_magic);
  EXPECT_EQ(idx_error_kind(cut_img, good_lab), IdxError::Kind::truncated);
  try {
    load_idx(bad_img, good_lab);
  } catch (const IdxError& e) {
    EXPECT_EQ(e.file(), bad_img);
  }
  EXPECT_THROW(load_idx((dir / "missing").string(), good_lab), ParseError);
}

TEST(SynthBlobs, DeterministicAndBalanced) {
  const Dataset a = synth_blobs(2, 10, 5, 99);
  EXPECT_EQ(a, synth_blobs(2, 10, 5, 99));
  EXPECT_NE(a, synth_blobs(2, 10, 5, 100));
  EXPECT_EQ(a.size(), 20u);
  const auto zeros = std::count(a.labels().begin(), a.labels().end(), 0u);
  EXPECT_EQ(zeros, 10);
  for (double v : a.features()) {
    EXPECT_GE(v, 0.0);
    EXPECT_LE(v, 1.0);
  }
}

TEST(SynthBlobs, WellSeparatedClustersAreLinearlySeparable) {
  // Means sqrt(2) * separation apart; separation = 7.1 puts them ~10 sigma apart.
  const Dataset ds = synth_blobs(3, 40, 4, 5, BlobShape{7.1, 1.0});
  ModelArch a({4, 3});
  ParamVector w = init_params(a, 1);
  std::vector<std::size_t> all(ds.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  auto ce = [&](const Logits& z, std::size_t i) { return cross_entropy(z, ds.label(i)); };
  ParamVector grad;
  for (int step = 0; step < 2000; ++step) {
    batch_gradient(a, w, ds, all, ce, grad);
    sgd_update(w, grad, 1.0);
  }
  EXPECT_EQ(evaluate(a, w, ds, all).accuracy, 1.0);
}

TEST(DirichletPartition, SingleClientTakesWholePool) {
  const Dataset ds = synth_blobs(4, 25, 3, 1);
  const auto p = dirichlet_partition(ds, 1, 0.5, 0.04, 0.2, 7);
  EXPECT_EQ(p.test_indices.size(), 20u);
  EXPECT_EQ(p.distill_indices.size(), 3u);  // round(0.04 * 80) = 3
  EXPECT_EQ(p.client_shards[0].size(), 77u);
}

TEST(DirichletPartition, DistillSizeIsHalfPercentOfPool) {
  const Dataset ds = synth_blobs(10, 1000, 5, 3);
  const auto p = dirichlet_partition(ds, 20, 0.5, 0.005, 0.2, 3);
  EXPECT_EQ(p.distill_indices.size(), 40u);  // 0.005 * 8000
}

TEST(DirichletPartition, ConservationAndDisjointnessSweep) {
  const Dataset ds = synth_blobs(6, 50, 3, 4);
  int built = 0;
  for (std::uint64_t seed = 0; seed < 60; ++seed) {
    const std::size_t m = 1 + seed % 12;
    const double alpha = std::vector<double>{0.1, 0.5, 1.0, 10.0}[seed % 4];
    PartitionSpec p;
    try {
      p = dirichlet_partition(ds, m, alpha, 0.01 * (seed % 5), 0.1 * (seed % 4), seed);
    } catch (const InfeasiblePartition&) {
      continue;
    }
    ++built;
    std::size_t total = p.test_indices.size() + p.distill_indices.size();
    for (const auto& s : p.client_shards) total += s.size();
    EXPECT_EQ(total, ds.size());
    EXPECT_NO_THROW(validate_partition(p, true));
    std::set<std::size_t> test(p.test_indices.begin(), p.test_indices.end());
    for (auto i : p.distill_indices) EXPECT_FALSE(test.count(i));
    EXPECT_EQ(p, dirichlet_partition(ds, m, alpha, 0.01 * (seed % 5), 0.1 * (seed % 4), seed));
  }
  EXPECT_GE(built, 40);
}

TEST(DirichletPartition, LargeAlphaTracksGlobalProportions) {
  const Dataset ds = synth_blobs(5, 1000, 3, 6);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto p = dirichlet_partition(ds, 10, 1000.0, 0.005, 0.0, seed);
    std::vector<double> global(5, 0.0);
    std::size_t pool = 0;
    for (const auto& s : p.client_shards)
      for (auto i : s) global[ds.label(i)] += 1.0, ++pool;
    for (const auto& s : p.client_shards) {
      std::vector<double> local(5, 0.0);
      for (auto i : s) local[ds.label(i)] += 1.0;
      for (std::size_t c = 0; c < 5; ++c)
        EXPECT_NEAR(local[c] / s.size(), global[c] / pool, 0.05) << "seed " << seed;
    }
  }
}

TEST(DirichletPartition, SmallerAlphaIsMoreHeterogeneous) {
  const Dataset ds = synth_blobs(10, 200, 5, 8);
  auto mean_entropy = [&](double alpha) {
    double h = 0.0;
    int n = 0;
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      for (std::uint64_t k = 0;; ++k) {
        try {
          const auto p = dirichlet_partition(ds, 10, alpha, 0.005, 0.2, seed * 1000 + k);
          for (const auto& s : p.client_shards) h += label_entropy(ds, s), ++n;
          break;
        } catch (const InfeasiblePartition&) {
        }
      }
    }
    return h / n;
  };
  EXPECT_LT(mean_entropy(0.1), mean_entropy(1.0));
}

TEST(DirichletPartition, InfeasibleAndInvalidInputs) {
  const Dataset ds = synth_blobs(2, 3, 2, 1);
  EXPECT_THROW(dirichlet_partition(ds, 50, 0.1, 0.0, 0.0, 1), InfeasiblePartition);
  EXPECT_THROW(dirichlet_partition(ds, 0, 0.1, 0.0, 0.0, 1), InvalidInput);
  EXPECT_THROW(dirichlet_partition(ds, 1, 0.0, 0.0, 0.0, 1), InvalidParameter);
  EXPECT_THROW(dirichlet_partition(ds, 1, 1.0, 0.5, 0.0, 1), InvalidParameter);
}

TEST(PartitionFile, RoundTripsAndRejectsCorruption) {
  const Dataset ds = synth_blobs(4, 30, 3, 2);
  const auto p = dirichlet_partition(ds, 5, 1.0, 0.05, 0.2, 11);
  std::stringstream ss;
  write_partition(ss, p);
  EXPECT_EQ(read_partition(ss), p);

  std::stringstream missing_format("num_samples = 3\nclients = 1\nclient.0 = 0 1 2\n");
  EXPECT_THROW(read_partition(missing_format), ParseError);
  std::stringstream overlap(
      "format = fedadt-partition-v1\nnum_samples = 3\nclients = 1\ntest = 0\nclient.0 = 0 1 2\n");
  EXPECT_THROW(read_partition(overlap), ParseError);
  std::stringstream junk("format = fedadt-partition-v1\nnum_samples = 3\nclients = 1\nclient.0 = 0 x\n");
  EXPECT_THROW(read_partition(junk), ParseError);
}
