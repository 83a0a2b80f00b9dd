#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include "ndpann/common.hpp"
#include "ndpann/vecdb.hpp"

namespace ndpann {

struct HnswParams {
  std::uint32_t M = 16;
  std::uint32_t ef_construction = 200;
  std::uint64_t seed = 1;
};

/// Multi-layer proximity graph. Layer 0 holds every node; a node present at
/// layer l is present at all layers below it.
class GraphIndex {
 public:
  GraphIndex() = default;
  GraphIndex(std::size_t n, std::uint32_t dim, std::uint32_t M);

  std::size_t size() const { return links_.size(); }
  std::uint32_t dim() const { return dim_; }
  std::uint32_t M() const { return M_; }
  /// Highest layer index; 0 for a flat graph.
  std::uint32_t top_layer() const { return top_layer_; }
  NodeId entry_point() const { return entry_; }
  /// Degree cap at a layer: 2M at the base, M above.
  std::uint32_t max_degree(std::uint32_t layer) const { return layer == 0 ? 2 * M_ : M_; }

  /// Highest layer containing the node.
  std::uint32_t level(NodeId node) const;
  bool has_node(NodeId node, std::uint32_t layer) const {
    return node < links_.size() && layer < links_[node].size();
  }
  /// Throws when the node is absent at the layer.
  std::span<const NodeId> neighbors(NodeId node, std::uint32_t layer) const;
  std::vector<NodeId>& mutable_neighbors(NodeId node, std::uint32_t layer);

  /// Ids present at a layer, ascending.
  std::vector<NodeId> layer_nodes(std::uint32_t layer) const;
  std::size_t edge_count(std::uint32_t layer) const;

  /// Grows the node's layer list to `level` + 1 entries.
  void set_level(NodeId node, std::uint32_t level);
  void set_entry_point(NodeId node);

  /// Throws with the offending node and layer on any structural violation.
  void validate() const;

  friend bool operator==(const GraphIndex&, const GraphIndex&) = default;

 private:
  std::vector<std::vector<std::vector<NodeId>>> links_;  // [node][layer]
  std::uint32_t dim_ = 0;
  std::uint32_t M_ = 16;
  std::uint32_t top_layer_ = 0;
  NodeId entry_ = 0;
};

/// Standard HNSW insertion in id order with heuristic neighbor selection.
GraphIndex build_hnsw(const VectorDatabase& db, const HnswParams& params);

/// Nodes reachable from the entry point over base-layer edges.
std::size_t base_layer_reachable(const GraphIndex& index);

void save_index(const std::filesystem::path& path, const GraphIndex& index);
/// Reads and validates an index file.
GraphIndex import_index(const std::filesystem::path& path);

/// Reads `node,layer,neighbor` rows (an optional header line is skipped).
/// A node's level is the highest layer it lists edges in; the entry point is
/// the smallest id on the top layer. `n` = 0 infers the node count from the
/// largest id seen. M is inferred from the largest degrees when 0.
GraphIndex import_edge_csv(const std::filesystem::path& path, std::size_t n = 0,
                           std::uint32_t dim = 0, std::uint32_t M = 0);

}  // namespace ndpann
