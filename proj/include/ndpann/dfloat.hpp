#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "ndpann/common.hpp"

namespace ndpann {

/// Sign / exponent / mantissa widths of one reduced float format. Exponent
/// bias is 2^(n_exp-1) - 1; a zero exponent field encodes zero and there are
/// no subnormals, infinities or NaNs.
struct DfloatFormat {
  std::uint8_t n_exp = 8;
  std::uint8_t n_man = 23;

  int width() const { return 1 + n_exp + n_man; }
  int bias() const { return (1 << (n_exp - 1)) - 1; }
  /// Largest exponent field in use; capped so that widening to fp32 stays finite.
  int max_biased_exponent() const;
  void validate() const;

  friend bool operator==(const DfloatFormat&, const DfloatFormat&) = default;
};

/// Rounds to nearest-even, flushes underflow to the all-zero word and
/// saturates overflow to the largest finite magnitude. Throws on NaN/Inf.
std::uint32_t dfloat_encode(float x, DfloatFormat fmt);

/// Widens to fp32 by re-biasing the exponent and zero-padding the mantissa.
float dfloat_decode(std::uint32_t bits, DfloatFormat fmt);

inline float dfloat_round_trip(float x, DfloatFormat fmt) {
  return dfloat_decode(dfloat_encode(x, fmt), fmt);
}

/// Inclusive, 1-based dimension range sharing one format.
struct DfloatSegment {
  std::uint32_t dim_start = 1;
  std::uint32_t dim_end = 1;
  DfloatFormat format;

  std::uint32_t count() const { return dim_end - dim_start + 1; }
  friend bool operator==(const DfloatSegment&, const DfloatSegment&) = default;
};

/// Burst-aligned layout of one vector. Features never straddle a burst and
/// each burst holds a single format; a memory step reads one burst from each
/// device of the sub-channel in parallel.
class DfloatConfig {
 public:
  DfloatConfig() = default;
  DfloatConfig(std::vector<DfloatSegment> segments, std::uint32_t burst_bits,
               std::uint32_t devices);

  /// Single 32-bit segment: the uncompressed layout.
  static DfloatConfig full_precision(std::uint32_t dim, std::uint32_t burst_bits = 128,
                                     std::uint32_t devices = 4);

  const std::vector<DfloatSegment>& segments() const { return segments_; }
  std::uint32_t burst_bits() const { return burst_bits_; }
  std::uint32_t devices() const { return devices_; }
  std::uint32_t dim() const { return segments_.empty() ? 0 : segments_.back().dim_end; }

  std::uint32_t features_per_burst(std::size_t segment) const;
  std::uint32_t bursts_in_segment(std::size_t segment) const;
  std::uint32_t total_bursts() const;
  /// Synchronized multi-device accesses needed for the whole vector.
  std::uint32_t steps() const;
  bool is_full_precision() const;

  /// Format of 0-based dimension i.
  const DfloatFormat& format_of(std::uint32_t dim_index) const;
  /// Cumulative feature count available after each memory step, ending at D.
  std::vector<std::uint32_t> step_boundaries() const;

  /// Widths in [12, 32], non-increasing widths, and a
  /// burst total that is a multiple of the device count. Coverage and
  /// burst alignment are checked by the constructor.
  bool satisfies_rules(std::string* why = nullptr) const;

  std::string to_text() const;
  static DfloatConfig from_text(const std::string& text);

  friend bool operator==(const DfloatConfig&, const DfloatConfig&) = default;

 private:
  std::vector<DfloatSegment> segments_;
  std::uint32_t burst_bits_ = 128;
  std::uint32_t devices_ = 4;
  std::vector<std::uint32_t> segment_of_dim_;
};

void save_dfloat_config(const std::filesystem::path& path, const DfloatConfig& cfg);
DfloatConfig load_dfloat_config(const std::filesystem::path& path);

/// Number of memory steps needed to make `dims` leading features available.
std::uint32_t steps_for_dims(std::span<const std::uint32_t> step_boundaries,
                             std::uint32_t dims);

/// Per-device burst streams of one packed vector; each burst is
/// burst_bits / 32 little-endian words, features packed LSB-first.
struct PackedVector {
  std::uint32_t burst_words = 4;
  std::vector<std::vector<std::uint32_t>> device_streams;

  /// Burst b of the vector (global order), as a word span.
  std::span<const std::uint32_t> burst(std::uint32_t b) const;
};

PackedVector pack_vector(std::span<const float> v, const DfloatConfig& cfg);
std::vector<float> unpack_vector(const PackedVector& packed, const DfloatConfig& cfg);

/// decode(encode(.)) per dimension without building bursts.
std::vector<float> mask_emulate(std::span<const float> v, const DfloatConfig& cfg);
Matrix mask_emulate_rows(const Matrix& rows, const DfloatConfig& cfg);

/// Picks an exponent width for a segment of the given total width.
using ExponentPolicy =
    std::function<DfloatFormat(std::uint32_t dim_start, std::uint32_t dim_end, int width)>;

/// Data-free default: fp32 for 32-bit segments, otherwise 5 exponent bits.
DfloatFormat default_exponent_policy(std::uint32_t dim_start, std::uint32_t dim_end, int width);

/// Smallest exponent width whose range covers each segment's largest
/// magnitude and its 1st-percentile non-zero magnitude in `data`.
ExponentPolicy make_data_exponent_policy(const Matrix& data);

struct CandidateOptions {
  std::vector<int> width_ladder = {12, 14, 16, 18, 20, 24, 28, 32};
  std::size_t max_segments = 3;
  ExponentPolicy exponent_policy = default_exponent_policy;
};

/// All configurations with exactly `n_burst` bursts that pass satisfies_rules(),
/// reduced to those no other candidate dominates dimension-wise in width,
/// ordered widest first.
std::vector<DfloatConfig> cfg_validate(std::uint32_t n_burst, std::uint32_t dim,
                                       std::uint32_t burst_bits, std::uint32_t devices,
                                       const CandidateOptions& options = {});

/// Lower and upper burst bounds of the configuration search, each rounded
/// up to a multiple of `devices`.
std::pair<std::uint32_t, std::uint32_t> burst_search_bounds(std::uint32_t dim,
                                                            std::uint32_t burst_bits,
                                                            std::uint32_t devices);

}  // namespace ndpann
