#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace ndpann {

using NodeId = std::uint32_t;
inline constexpr NodeId kInvalidNode = std::numeric_limits<NodeId>::max();

/// Distance convention used everywhere in the engine: smaller is better.
/// L2 stores the squared Euclidean distance; InnerProduct stores the
/// negated dot product.
enum class Metric : std::uint8_t { L2 = 0, InnerProduct = 1 };

const char* to_string(Metric m);
Metric metric_from_string(const std::string& s);

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed file contents (xvecs, index, model, trace, layout).
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Shapes or identifiers that do not agree with each other.
class MismatchError : public Error {
 public:
  using Error::Error;
};

/// Row-major dense matrix of 32-bit reals.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, float fill = 0.0f)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<float> data);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool empty() const { return rows_ == 0; }

  std::span<const float> row(std::size_t i) const {
    return {data_.data() + i * cols_, cols_};
  }
  std::span<float> row(std::size_t i) { return {data_.data() + i * cols_, cols_}; }

  float operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  float& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }

  const std::vector<float>& data() const { return data_; }
  std::vector<float>& data() { return data_; }

  Matrix slice_rows(std::size_t begin, std::size_t end) const;
  void append_row(std::span<const float> r);

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<float> data_;
};

/// Uniform double in [0, 1) from the top 53 bits.
inline double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

/// Independent child seed for a named stage.
std::uint64_t derive_seed(std::uint64_t root, std::string_view stage);

}  // namespace ndpann
