#pragma once

#include <cstdint>
#include <filesystem>
#include <limits>
#include <memory>
#include <span>
#include <vector>

#include "ndpann/common.hpp"
#include "ndpann/dfloat.hpp"
#include "ndpann/graph_index.hpp"
#include "ndpann/pca.hpp"
#include "ndpann/vecdb.hpp"

namespace ndpann {

enum class EvalMode : std::uint8_t { Exact = 0, FeePartial = 1, FeeSpca = 2 };

const char* to_string(EvalMode m);
EvalMode eval_mode_from_string(const std::string& s);

inline constexpr float kInfDistance = std::numeric_limits<float>::infinity();

/// How base-layer distances are evaluated: where exits are tested and the
/// scale applied to the partial distance at each test.
struct EvalPlan {
  EvalMode mode = EvalMode::Exact;
  Metric metric = Metric::L2;
  std::uint32_t dim = 0;
  /// Ascending feature counts at which an exit may trigger; the last is dim.
  std::vector<std::uint32_t> checkpoints;
  /// Multiplier on d_part per checkpoint: 1 for FeePartial, alpha/beta for FeeSpca.
  std::vector<double> scale;
  /// Memory layout the checkpoints follow; full precision when no Dfloat config is used.
  DfloatConfig layout;
};

/// Checkpoints follow the memory steps of `layout` (or the 32-bit layout of
/// 128-bit bursts over four devices when null). FeeSpca needs a model whose
/// registered checkpoints cover every step boundary.
EvalPlan make_eval_plan(EvalMode mode, Metric metric, std::uint32_t dim,
                        const PcaModel* pca = nullptr, const DfloatConfig* layout = nullptr);

struct EvalResult {
  float distance = 0.0f;  ///< exact d_all when not exited, else the partial sum at exit
  std::uint32_t dims = 0;
  bool exited = false;
};

/// Accumulates checkpoint by checkpoint and stops as soon as the scaled
/// partial distance reaches the threshold. Completed evaluations return the
/// exact distance bit for bit.
EvalResult evaluate_distance(std::span<const float> q, std::span<const float> v,
                             const EvalPlan& plan, float threshold);

enum class Outcome : std::uint8_t {
  Visited = 0,    ///< already seen, no evaluation
  Exited = 1,     ///< early exit at `dims`
  Completed = 2,  ///< all dims computed, not admitted to the queue
  Accepted = 3,   ///< all dims computed, admitted to the queue
};

struct NeighborEval {
  NodeId id = 0;
  float distance = 0.0f;
  std::uint16_t dims = 0;
  Outcome outcome = Outcome::Visited;

  friend bool operator==(const NeighborEval&, const NeighborEval&) = default;
};

struct HopRecord {
  NodeId node = 0;
  std::uint32_t layer = 0;
  /// Closest unexpanded candidate left after this hop's pop, before any inserts.
  NodeId carry_best = kInvalidNode;
  std::vector<NeighborEval> evals;

  friend bool operator==(const HopRecord&, const HopRecord&) = default;
};

/// Every evaluation made while answering one query, in hop order. In a
/// batched run hop h of every query in the batch executes in round h.
struct SearchTrace {
  std::uint32_t query = 0;
  std::uint32_t batch = 0;
  NodeId entry = 0;
  std::vector<HopRecord> hops;

  friend bool operator==(const SearchTrace&, const SearchTrace&) = default;
};

struct SearchParams {
  std::uint32_t ef_search = 64;
  std::uint32_t k = 10;
  bool record_trace = true;
};

struct SearchResult {
  std::vector<Neighbor> neighbors;  ///< best first
  SearchTrace trace;
};

/// Read-only inputs shared by all searches. `vectors` holds the database as
/// the search sees it: PCA-transformed and Dfloat-emulated as the plan requires.
struct SearchContext {
  const GraphIndex* index = nullptr;
  const Matrix* vectors = nullptr;
  const EvalPlan* plan = nullptr;
};

/// One query's traversal, advanced one hop at a time.
class SearchState {
 public:
  SearchState(const SearchContext& ctx, std::span<const float> q, const SearchParams& params,
              std::uint32_t query_id = 0);
  SearchState(SearchState&&) noexcept;
  SearchState& operator=(SearchState&&) noexcept;
  ~SearchState();

  bool done() const;
  /// Expands one node; no-op once done.
  void step();
  SearchResult finish();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

SearchResult search(const SearchContext& ctx, std::span<const float> q, const SearchParams& params,
                    std::uint32_t query_id = 0);

struct BatchResult {
  std::vector<std::vector<Neighbor>> results;
  std::vector<SearchTrace> traces;  ///< indexed by query
  std::uint32_t batch_size = 1;

  std::vector<std::vector<NodeId>> ids() const;
};

/// Queries are grouped into consecutive batches; within a batch every
/// active query advances one hop per round. Batches run on `workers`
/// threads. Results do not depend on batch size or worker count.
BatchResult batch_search(const SearchContext& ctx, const Matrix& queries, std::uint32_t batch,
                         const SearchParams& params, std::uint32_t workers = 1);

struct FeatureUsage {
  std::vector<std::uint32_t> dims;   ///< checkpoint feature counts
  std::vector<double> cumulative;    ///< fraction of evaluations finished at or before dims[i]
  std::uint64_t evaluations = 0;
  std::uint64_t exits = 0;
  double mean_dims = 0.0;
  /// Feature count by which 80% of triggered exits have fired; dim when none fire.
  std::uint32_t p80_exit_dim = 0;
};

/// Base-layer evaluations only. Throws on empty input.
FeatureUsage feature_usage_histogram(const std::vector<SearchTrace>& traces, const EvalPlan& plan);

void save_traces(const std::filesystem::path& path, const std::vector<SearchTrace>& traces,
                 std::uint32_t dim, std::uint32_t batch_size);
struct TraceFile {
  std::uint32_t dim = 0;
  std::uint32_t batch_size = 1;
  std::vector<SearchTrace> traces;
};
TraceFile load_traces(const std::filesystem::path& path);

}  // namespace ndpann
