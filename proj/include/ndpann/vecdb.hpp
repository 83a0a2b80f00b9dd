#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "ndpann/common.hpp"

namespace ndpann {

/// Vector corpus. Node ids are the row indices 0..n-1.
struct VectorDatabase {
  Matrix vectors;
  Metric metric = Metric::L2;

  std::size_t size() const { return vectors.rows(); }
  std::size_t dim() const { return vectors.cols(); }
  std::span<const float> operator[](NodeId id) const { return vectors.row(id); }

  /// Throws if the database is empty, zero-dimensional or holds non-finite values.
  void validate() const;
};

struct QuerySet {
  Matrix queries;
  /// Exact top-k ids per query, best first.
  std::vector<std::vector<NodeId>> ground_truth;

  std::size_t size() const { return queries.rows(); }
  std::size_t k() const { return ground_truth.empty() ? 0 : ground_truth.front().size(); }
};

enum class XvecsKind { Fvecs, Ivecs, Bvecs };

XvecsKind xvecs_kind_from_path(const std::filesystem::path& path);

/// Reads an fvecs/ivecs/bvecs container. Integer and byte payloads are
/// widened to float; use load_ivecs for id lists.
Matrix load_xvecs(const std::filesystem::path& path, XvecsKind kind);
std::vector<std::vector<std::int32_t>> load_ivecs(const std::filesystem::path& path);

void write_fvecs(const std::filesystem::path& path, const Matrix& m);
void write_ivecs(const std::filesystem::path& path,
                 const std::vector<std::vector<std::int32_t>>& rows);
/// Payload values must already lie in [0, 255].
void write_bvecs(const std::filesystem::path& path, const Matrix& m);

struct Neighbor {
  NodeId id;
  float distance;
};

/// Exact top-k by full scan; ties go to the smaller id.
std::vector<Neighbor> brute_force_knn_with_distances(const VectorDatabase& db,
                                                     std::span<const float> q, std::size_t k);
std::vector<NodeId> brute_force_knn(const VectorDatabase& db, std::span<const float> q,
                                    std::size_t k);

/// Exact ground truth for every query row.
QuerySet make_query_set(const VectorDatabase& db, Matrix queries, std::size_t k);

/// |found ∩ truth| / |truth|; 0 when truth is empty.
double recall_at_k(std::span<const NodeId> found, std::span<const NodeId> truth);

/// Mean recall over a query set.
double mean_recall(const std::vector<std::vector<NodeId>>& found, const QuerySet& qs);

/// Zero-mean Gaussian rows with variance decay^i on axis i, then a random
/// rotation. Deterministic for a fixed seed.
VectorDatabase make_synthetic(std::size_t n, std::size_t dim, double decay, std::uint64_t seed);

/// Draws n + extra rows from the same distribution in one pass and splits
/// them, so held-out queries share the database's rotation.
std::pair<VectorDatabase, Matrix> make_synthetic_split(std::size_t n, std::size_t extra,
                                                       std::size_t dim, double decay,
                                                       std::uint64_t seed);

/// Random permutation of 0..n-1.
std::vector<NodeId> shuffled_ids(std::size_t n, std::uint64_t seed);

}  // namespace ndpann
