#include "ndpann/common.hpp"

#include <algorithm>

#include "ndpann/distance.hpp"

namespace ndpann {

const char* to_string(Metric m) { return m == Metric::L2 ? "l2" : "ip"; }

Metric metric_from_string(const std::string& s) {
  if (s == "l2" || s == "L2") return Metric::L2;
  if (s == "ip" || s == "IP" || s == "inner_product") return Metric::InnerProduct;
  throw Error("unknown metric '" + s + "'");
}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<float> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    throw MismatchError("matrix data size does not match " + std::to_string(rows_) + "x" +
                        std::to_string(cols_));
  }
}

Matrix Matrix::slice_rows(std::size_t begin, std::size_t end) const {
  end = std::min(end, rows_);
  if (begin > end) begin = end;
  std::vector<float> out(data_.begin() + static_cast<std::ptrdiff_t>(begin * cols_),
                         data_.begin() + static_cast<std::ptrdiff_t>(end * cols_));
  return Matrix(end - begin, cols_, std::move(out));
}

void Matrix::append_row(std::span<const float> r) {
  if (rows_ == 0 && cols_ == 0) cols_ = r.size();
  if (r.size() != cols_) throw MismatchError("appended row has wrong dimension");
  data_.insert(data_.end(), r.begin(), r.end());
  ++rows_;
}

std::uint64_t derive_seed(std::uint64_t root, std::string_view stage) {
  // FNV-1a over the stage name, mixed with the root through splitmix64.
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : stage) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  std::uint64_t z = root ^ h;
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

void DistanceAccumulator::add(std::span<const float> q, std::span<const float> v,
                              std::size_t begin, std::size_t end) {
  const float* a = q.data();
  const float* b = v.data();
  std::size_t i = begin;
  if (metric_ == Metric::L2) {
    for (; i < end && (i & 7) != 0; ++i) {
      const float d = a[i] - b[i];
      lanes_[i & 7] += d * d;
    }
    for (; i + 8 <= end; i += 8) {
      for (std::size_t j = 0; j < 8; ++j) {
        const float d = a[i + j] - b[i + j];
        lanes_[j] += d * d;
      }
    }
    for (; i < end; ++i) {
      const float d = a[i] - b[i];
      lanes_[i & 7] += d * d;
    }
  } else {
    for (; i < end && (i & 7) != 0; ++i) lanes_[i & 7] -= a[i] * b[i];
    for (; i + 8 <= end; i += 8) {
      for (std::size_t j = 0; j < 8; ++j) lanes_[j] -= a[i + j] * b[i + j];
    }
    for (; i < end; ++i) lanes_[i & 7] -= a[i] * b[i];
  }
}

float distance(Metric metric, std::span<const float> q, std::span<const float> v) {
  DistanceAccumulator acc(metric);
  acc.add(q, v, 0, q.size());
  return acc.total();
}

}  // namespace ndpann
