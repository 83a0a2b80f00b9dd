#pragma once

#include <string>
#include <vector>

#include "ndpann/dfloat.hpp"
#include "ndpann/search.hpp"

namespace ndpann {

struct TuneOptions {
  double target_recall = 0.9;
  std::uint32_t burst_bits = 128;
  std::uint32_t devices = 4;
  SearchParams search;
  std::uint32_t batch = 16;
  std::uint32_t workers = 1;
  /// Candidates evaluated per burst count, widest first.
  std::size_t max_candidates = 8;
  CandidateOptions candidates;
};

struct TuneProbe {
  std::uint32_t n_burst = 0;
  std::size_t candidates = 0;
  double best_recall = 0.0;
  bool feasible = false;
};

struct TuneResult {
  DfloatConfig config;
  double recall = 0.0;
  bool fallback = false;
  std::vector<TuneProbe> probes;  ///< in evaluation order
  std::vector<std::string> warnings;
};

/// Recall@k of FeeSpca search over `queries` with the database emulated at `cfg`.
double dfloat_recall(const GraphIndex& index, const Matrix& transformed_db, const PcaModel& pca,
                     const QuerySet& queries, const DfloatConfig& cfg, const TuneOptions& options);

/// Lower-bound binary search over burst counts (multiples of the device
/// count) for the fewest bursts whose best candidate reaches the target
/// recall. Falls back to the 32-bit layout with a warning when none does.
/// `transformed_db` and the query rows must already be in PCA space.
TuneResult search_config(const GraphIndex& index, const Matrix& transformed_db, const PcaModel& pca,
                         const QuerySet& queries, const TuneOptions& options);

}  // namespace ndpann
