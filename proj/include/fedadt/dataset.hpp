#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fedadt/error.hpp"

namespace fedadt {

using Label = std::uint32_t;
using IndexList = std::vector<std::size_t>;

// Row-major N x dim feature matrix with one class label per row.
class Dataset {
 public:
  Dataset() = default;

  Dataset(std::vector<double> features, std::vector<Label> labels, std::size_t dim,
          std::size_t class_count)
      : features_(std::move(features)),
        labels_(std::move(labels)),
        dim_(dim),
        class_count_(class_count) {
    if (dim_ == 0) throw InvalidInput("dataset: feature dimension must be >= 1");
    if (class_count_ == 0) throw InvalidInput("dataset: class_count must be >= 1");
    if (features_.size() != labels_.size() * dim_)
      throw InvalidInput("dataset: feature rows (" + std::to_string(features_.size() / dim_) +
                         ") != label count (" + std::to_string(labels_.size()) + ")");
    for (auto y : labels_)
      if (y >= class_count_)
        throw InvalidInput("dataset: label " + std::to_string(y) + " >= class_count " +
                           std::to_string(class_count_));
  }

  std::size_t size() const noexcept { return labels_.size(); }
  std::size_t dim() const noexcept { return dim_; }
  std::size_t class_count() const noexcept { return class_count_; }

  std::span<const double> row(std::size_t i) const {
    return {features_.data() + i * dim_, dim_};
  }
  Label label(std::size_t i) const { return labels_[i]; }

  const std::vector<double>& features() const noexcept { return features_; }
  const std::vector<Label>& labels() const noexcept { return labels_; }

  friend bool operator==(const Dataset&, const Dataset&) = default;

 private:
  std::vector<double> features_;
  std::vector<Label> labels_;
  std::size_t dim_ = 0;
  std::size_t class_count_ = 0;
};

// Dataset plus the subset of its rows that take part in an operation.
struct DataView {
  const Dataset* data = nullptr;
  std::span<const std::size_t> indices;

  std::size_t size() const noexcept { return indices.size(); }
};

}  // namespace fedadt
