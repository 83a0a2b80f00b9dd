#pragma once

#include <ostream>
#include <string>
#include <vector>

#include "ndpann/ndp_sim.hpp"
#include "ndpann/search.hpp"

namespace ndpann {

enum class SweepParam : std::uint8_t { EfSearch, LncdCapacity, Batch, M };

const char* to_string(SweepParam p);
SweepParam sweep_param_from_string(const std::string& s);

/// Everything held fixed while one parameter varies. Pointers are borrowed.
struct SweepSetup {
  const Matrix* build_vectors = nullptr;  ///< exact vectors used when M changes
  Metric metric = Metric::L2;
  const Matrix* search_vectors = nullptr;
  const QuerySet* queries = nullptr;
  const EvalPlan* plan = nullptr;
  const GraphIndex* index = nullptr;
  HnswParams hnsw;
  SearchParams search;
  std::uint32_t batch = 16;
  std::uint32_t workers = 1;
  NdpTopology topology;
  SimSwitches switches;
  PlacementPolicy placement = PlacementPolicy::Shuffled;
  std::uint64_t placement_seed = 1;
};

struct SweepRow {
  std::uint32_t value = 0;
  double recall = 0.0;
  SimStats stats;
};

/// One search + simulate run per value. LNC-D capacities are in KB. Grid
/// points run on `setup.workers` threads; rows come back in input order.
std::vector<SweepRow> sweep(SweepParam param, const std::vector<std::uint32_t>& values,
                            const SweepSetup& setup);

void write_sweep_csv(std::ostream& out, SweepParam param, const std::vector<SweepRow>& rows);

}  // namespace ndpann
