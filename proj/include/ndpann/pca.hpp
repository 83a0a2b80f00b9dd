#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "ndpann/common.hpp"
#include "ndpann/vecdb.hpp"

namespace ndpann {

/// Early-exit parameters at one checkpoint (k leading dimensions computed).
struct CheckpointParams {
  std::uint32_t k = 0;
  double alpha = 1.0;  ///< total eigenvalue mass / leading-k mass
  double var = 0.0;    ///< sample variance of alpha * d_part / d_all
  double beta = 1.0;   ///< 1 + epsilon, the Chebyshev correction
};

/// PCA basis plus per-checkpoint estimation parameters.
///
/// The basis columns are eigenvectors of the sample covariance, sorted by
/// descending eigenvalue. For L2 the transform centers by the mean before
/// rotating; for inner product it only rotates.
struct PcaModel {
  Metric metric = Metric::L2;
  std::vector<float> mean;
  Matrix basis;  ///< D x D, column j is eigenvector j
  std::vector<double> eigenvalues;
  double target_prob = 0.9;
  std::vector<CheckpointParams> checkpoints;

  std::size_t dim() const { return mean.size(); }
  bool centers() const { return metric == Metric::L2; }
  /// nullptr when k is not a registered checkpoint.
  const CheckpointParams* find_checkpoint(std::uint32_t k) const;
  void validate() const;
};

/// Covariance eigendecomposition (1/(n-1) normalization). Checkpoint
/// parameters are left empty.
PcaModel fit_pca(const VectorDatabase& db);

std::vector<float> transform(const PcaModel& model, std::span<const float> v);
Matrix transform_rows(const PcaModel& model, const Matrix& rows);
VectorDatabase transform_database(const PcaModel& model, const VectorDatabase& db);

/// alpha_k = sum(lambda) / sum_{i<=k}(lambda) for each checkpoint.
std::vector<double> compute_alpha(std::span<const double> eigenvalues,
                                  std::span<const std::uint32_t> checkpoints);

/// Var_k of alpha_k * d_part^k / d_all over random (probe, target) pairs.
/// Probes come from `probes` when non-empty (already transformed), otherwise
/// from database rows. Pairs with d_all == 0 are skipped.
std::vector<double> estimate_variance(const PcaModel& model, const VectorDatabase& transformed,
                                      const Matrix& probes, std::size_t sample_pairs,
                                      std::uint64_t seed,
                                      std::span<const std::uint32_t> checkpoints);

/// beta_k = 1 + sqrt(Var_k / (2 (1 - p))), exactly 1 when Var_k is 0.
std::vector<double> compute_beta(std::span<const double> var, double target_prob);

/// alpha_k * d_part / beta_k at a registered checkpoint.
double estimate_distance(const PcaModel& model, double d_part, std::uint32_t k);

/// Checkpoints 1..D.
std::vector<std::uint32_t> all_dimensions(std::size_t dim);

struct PreprocessOptions {
  double target_prob = 0.9;
  std::size_t sample_pairs = 10000;
  std::uint64_t seed = 1;
  /// Empty registers every dimension 1..D.
  std::vector<std::uint32_t> checkpoints;
};

struct PreprocessResult {
  PcaModel model;
  VectorDatabase transformed;
  Matrix transformed_probes;
};

/// Fits PCA, transforms the database and probe pool, and fills in the
/// per-checkpoint alpha / Var / beta tables.
PreprocessResult preprocess(const VectorDatabase& db, const Matrix& probes,
                            const PreprocessOptions& options);

void save_pca(const std::filesystem::path& path, const PcaModel& model);
PcaModel load_pca(const std::filesystem::path& path);

}  // namespace ndpann
