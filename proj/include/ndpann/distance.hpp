#pragma once

#include <cstddef>
#include <span>

#include "ndpann/common.hpp"

namespace ndpann {

/// Running distance with eight fixed lanes: dimension i always lands in
/// lane i % 8 and lanes are combined in a fixed tree. A sum evaluated in
/// arbitrary chunks therefore equals the one-shot sum bit for bit, which is
/// what lets early-exit evaluation return exactly the brute-force distance.
class DistanceAccumulator {
 public:
  explicit DistanceAccumulator(Metric metric) : metric_(metric) {}

  /// Adds dimensions [begin, end) of (q, v).
  void add(std::span<const float> q, std::span<const float> v, std::size_t begin,
           std::size_t end);

  float total() const {
    const float a = (lanes_[0] + lanes_[1]) + (lanes_[2] + lanes_[3]);
    const float b = (lanes_[4] + lanes_[5]) + (lanes_[6] + lanes_[7]);
    return a + b;
  }

  void reset() {
    for (float& l : lanes_) l = 0.0f;
  }

 private:
  Metric metric_;
  alignas(32) float lanes_[8] = {0, 0, 0, 0, 0, 0, 0, 0};
};

/// Full distance under the engine convention (squared L2 or negated IP).
float distance(Metric metric, std::span<const float> q, std::span<const float> v);

}  // namespace ndpann
