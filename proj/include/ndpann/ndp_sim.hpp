#pragma once

#include <cstdint>
#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include "ndpann/dfloat.hpp"
#include "ndpann/graph_index.hpp"
#include "ndpann/search.hpp"

namespace ndpann {

/// Memory organization and cost parameters. Costs are in accelerator cycles.
struct NdpTopology {
  std::uint32_t channels = 2;
  std::uint32_t dimms_per_channel = 2;
  std::uint32_t ranks_per_dimm = 2;
  std::uint32_t subchannels_per_rank = 2;
  std::uint32_t devices_per_subchannel = 4;
  std::uint32_t burst_bits_per_device = 128;

  double clock_ghz = 1.2;
  std::uint64_t t_burst = 16;       ///< one synchronized access of all devices in a sub-channel
  std::uint64_t t_cross = 64;       ///< extra cost per burst moved between sub-channels
  std::uint64_t t_feature = 1;      ///< per group of `lanes` features
  std::uint32_t lanes = 4;
  std::uint64_t t_merge = 6000;     ///< host merge per round
  std::uint64_t t_hop_launch = 200; ///< host command per active query per round
  std::uint64_t t_host_lookup = 1300; ///< host-side neighbor-list lookup per hop
  std::uint64_t t_cache_hit = 1;

  std::uint32_t lnct_bytes = 8 * 1024;
  std::uint32_t lncd_bytes = 256 * 1024;
  std::uint32_t lncd_ways = 8;

  std::uint32_t subchannels() const {
    return channels * dimms_per_channel * ranks_per_dimm * subchannels_per_rank;
  }
  /// Bytes delivered by one sub-channel access.
  std::uint32_t line_bytes() const { return devices_per_subchannel * burst_bits_per_device / 8; }
  void validate() const;

  std::string to_text() const;
  /// key=value lines; unknown keys are errors, missing keys keep defaults.
  static NdpTopology from_text(const std::string& text);
};

NdpTopology load_topology(const std::filesystem::path& path);
void save_topology(const std::filesystem::path& path, const NdpTopology& topo);

enum class PlacementPolicy : std::uint8_t {
  Shuffled = 0,    ///< round-robin over a seeded permutation of node ids
  RoundRobin = 1,  ///< node id modulo sub-channel count
  Blocked = 2,     ///< contiguous id ranges per sub-channel
};

const char* to_string(PlacementPolicy p);
PlacementPolicy placement_from_string(const std::string& s);

struct NltEntry {
  std::uint32_t start = 0;  ///< byte offset in the sub-channel's neighbor region, < 2^24
  std::uint8_t length = 0;  ///< neighbor ids in the partition

  friend bool operator==(const NltEntry&, const NltEntry&) = default;
};

struct SubchannelLayout {
  /// Dense by node id: entry for every node, length 0 when no local neighbors.
  std::vector<NltEntry> nlt;
  /// Base-layer neighbor partitions, concatenated in node order.
  std::vector<NodeId> region;
  std::uint32_t vectors = 0;

  friend bool operator==(const SubchannelLayout&, const SubchannelLayout&) = default;
};

/// Placement of vectors and partitioned base-layer neighbor lists.
struct NdpLayout {
  std::vector<std::uint32_t> home;  ///< node -> sub-channel
  std::vector<SubchannelLayout> subchannels;
  std::uint32_t bursts_per_vector = 0;

  std::size_t size() const { return home.size(); }
  /// Neighbor ids of `node` stored in sub-channel `s`.
  std::span<const NodeId> partition(NodeId node, std::uint32_t s) const;

  friend bool operator==(const NdpLayout&, const NdpLayout&) = default;
};

/// Homes vectors by `policy` and stores each node's base-layer list split by
/// the neighbors' home sub-channel. Throws when a partition exceeds 255 ids
/// or a neighbor region outgrows the 3-byte address field.
NdpLayout map_database(const GraphIndex& index, const DfloatConfig& vector_layout,
                       const NdpTopology& topo, PlacementPolicy policy, std::uint64_t seed = 1);

/// Layout for an explicit node -> sub-channel assignment.
NdpLayout map_database_with_homes(const GraphIndex& index, const DfloatConfig& vector_layout,
                                  std::uint32_t subchannels, std::vector<std::uint32_t> home);

void save_layout(const std::filesystem::path& path, const NdpLayout& layout);
NdpLayout load_layout(const std::filesystem::path& path);

/// Set-associative LRU cache over 64-bit keys; one set gives full associativity.
class LruCache {
 public:
  LruCache() = default;
  LruCache(std::uint32_t sets, std::uint32_t ways);

  /// Demand access: true on hit; installs the key on miss.
  bool access(std::uint64_t key);
  /// Installs without counting; true when already present.
  bool fill(std::uint64_t key);
  bool contains(std::uint64_t key) const;
  std::uint32_t sets() const { return sets_; }
  std::uint32_t ways() const { return ways_; }

 private:
  struct Slot {
    std::uint64_t key = 0;
    std::uint64_t stamp = 0;
    bool valid = false;
  };
  Slot* find(std::uint64_t key);
  void install(std::uint64_t key);

  std::uint32_t sets_ = 0;
  std::uint32_t ways_ = 0;
  std::uint64_t clock_ = 0;
  std::vector<Slot> slots_;
};

struct SimSwitches {
  bool dam = true;
  bool lnc = true;
  bool prefetch = true;
};

/// Parses a comma-separated subset of {dam, lnc, prefetch}; "none" disables all.
SimSwitches switches_from_string(const std::string& s);
std::string to_string(const SimSwitches& s);

struct SimStats {
  std::uint64_t queries = 0;
  std::uint64_t batches = 0;
  std::uint64_t rounds = 0;
  std::uint64_t hops = 0;
  std::uint64_t evaluations = 0;
  std::uint64_t features = 0;
  std::uint64_t vector_bursts = 0;
  std::uint64_t nlt_bursts = 0;
  std::uint64_t nbrlist_bursts = 0;
  std::uint64_t cross_channel_bursts = 0;
  std::uint64_t lnct_hits = 0;
  std::uint64_t lnct_misses = 0;
  std::uint64_t lncd_hits = 0;
  std::uint64_t lncd_misses = 0;
  std::uint64_t prefetch_issued = 0;
  std::uint64_t prefetch_hits = 0;
  std::vector<std::uint64_t> prefetch_issued_by_hop;  ///< indexed by base-layer hop
  std::vector<std::uint64_t> prefetch_hits_by_hop;

  std::uint64_t total_cycles = 0;
  std::vector<std::uint64_t> batch_cycles;
  std::vector<std::uint64_t> busy_cycles;  ///< per sub-channel
  std::uint64_t retrieval_cycles = 0;
  std::uint64_t distance_cycles = 0;
  std::uint64_t partial_cycles = 0;
  /// Mean over batches of (batch latency - least busy sub-channel) / batch latency.
  double idle_ratio = 0.0;
  double clock_ghz = 1.2;

  double qps() const;
  double lncd_hit_rate() const;
  double lnct_hit_rate() const;
  double prefetch_hit_rate() const;
  /// Bytes of vector, NLT and neighbor-list traffic per query.
  double bytes_per_query(std::uint32_t line_bytes) const;

  friend bool operator==(const SimStats&, const SimStats&) = default;
};

/// Replays batch-aligned traces. `vector_layout` must be the layout the
/// traces were produced with, so exits translate to the right burst counts.
SimStats simulate(const std::vector<SearchTrace>& traces, const NdpLayout& layout,
                  const DfloatConfig& vector_layout, const NdpTopology& topo,
                  const SimSwitches& enable);

struct LatencyBreakdown {
  double neighbor_retrieval = 0.0;  ///< percent
  double distance_compute = 0.0;
  double partial_result_processing = 0.0;
};

LatencyBreakdown latency_breakdown(const SimStats& stats);

/// Header and one row per run; `label` goes in the first column.
void write_stats_csv_header(std::ostream& out);
void write_stats_csv_row(std::ostream& out, const std::string& label, const SimStats& stats);

}  // namespace ndpann
