#include <algorithm>
#include <fstream>
#include <set>

#include "ndpann/graph_index.hpp"
#include "test_util.hpp"

using namespace ndpann;
using ndpann::test::TempDir;

namespace {

constexpr std::uint32_t kMagic = 0x58494750;

struct RawNode {
  std::uint32_t id;
  std::vector<std::uint32_t> nb;
};

// Index file assembled word by word: header n, D, M, layers, entry; then per
// layer a node count and (id, degree, ids...) records.
void write_raw_index(const std::filesystem::path& p, std::uint32_t n, std::uint32_t M, std::uint32_t entry,
                     const std::vector<std::vector<RawNode>>& layers) {
  std::vector<std::uint32_t> w = {kMagic, 1, n, 4, M, static_cast<std::uint32_t>(layers.size()), entry};
  for (const auto& layer : layers) {
    w.push_back(static_cast<std::uint32_t>(layer.size()));
    for (const auto& node : layer) {
      w.push_back(node.id);
      w.push_back(static_cast<std::uint32_t>(node.nb.size()));
      w.insert(w.end(), node.nb.begin(), node.nb.end());
    }
  }
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(w.data()), static_cast<std::streamsize>(w.size() * 4));
}

std::string import_error(const std::filesystem::path& p) {
  try {
    import_index(p);
  } catch (const FormatError& e) {
    return e.what();
  }
  return "";
}

// Small graph on nodes 1..6, with node 0 a leaf on 1.
GraphIndex toy_graph() {
  GraphIndex g(7, 2, 4);
  const std::vector<std::vector<NodeId>> adj = {{1}, {2, 3, 6, 0}, {1, 3}, {1, 2, 4}, {3, 5}, {4, 6}, {1, 5}};
  for (NodeId i = 0; i < 7; ++i) g.mutable_neighbors(i, 0) = adj[i];
  g.set_entry_point(1);
  return g;
}

}  // namespace

TEST(Build, SingleNode) {
  VectorDatabase db{Matrix(1, 3, {1, 2, 3}), Metric::L2};
  const GraphIndex g = build_hnsw(db, {8, 32, 1});
  EXPECT_EQ(g.size(), 1u);
  EXPECT_EQ(g.entry_point(), 0u);
  for (std::uint32_t l = 0; l <= g.top_layer(); ++l) EXPECT_TRUE(g.neighbors(0, l).empty());
  EXPECT_NO_THROW(g.validate());
}

TEST(Build, RecallAgainstBruteForce) {
  VectorDatabase db{test::gaussian_matrix(1000, 16, 21), Metric::L2};
  const GraphIndex g = build_hnsw(db, {16, 200, 2});
  g.validate();
  EXPECT_EQ(base_layer_reachable(g), g.size());
  // greedy descent then ef=64 beam search, written here against the public adjacency
  const Matrix qs = test::gaussian_matrix(100, 16, 22);
  double hits = 0.0;
  for (std::size_t qi = 0; qi < qs.rows(); ++qi) {
    const auto q = qs.row(qi);
    auto dist = [&](NodeId x) {
      double s = 0.0;
      for (std::size_t j = 0; j < 16; ++j) s += (db.vectors(x, j) - q[j]) * (db.vectors(x, j) - q[j]);
      return s;
    };
    NodeId cur = g.entry_point();
    for (std::uint32_t l = g.top_layer(); l > 0; --l) {
      for (bool moved = true; moved;) {
        moved = false;
        for (NodeId e : g.neighbors(cur, l)) {
          if (dist(e) < dist(cur)) {
            cur = e;
            moved = true;
          }
        }
      }
    }
    std::set<std::pair<double, NodeId>> cand = {{dist(cur), cur}}, best = cand;
    std::set<NodeId> seen = {cur};
    while (!cand.empty()) {
      auto [d, x] = *cand.begin();
      cand.erase(cand.begin());
      if (best.size() >= 64 && d > best.rbegin()->first) break;
      for (NodeId e : g.neighbors(x, 0)) {
        if (!seen.insert(e).second) continue;
        const double de = dist(e);
        if (best.size() < 64 || de < best.rbegin()->first) {
          cand.insert({de, e});
          best.insert({de, e});
          if (best.size() > 64) best.erase(std::prev(best.end()));
        }
      }
    }
    std::vector<NodeId> found;
    for (auto it = best.begin(); found.size() < 10; ++it) found.push_back(it->second);
    hits += recall_at_k(found, brute_force_knn(db, q, 10));
  }
  EXPECT_GE(hits / qs.rows(), 0.95);
}

TEST(Build, StructuralInvariants) {
  VectorDatabase db{test::gaussian_matrix(800, 8, 23), Metric::L2};
  const GraphIndex g = build_hnsw(db, {6, 50, 3});
  for (std::uint32_t l = 0; l <= g.top_layer(); ++l) {
    for (NodeId x : g.layer_nodes(l)) {
      const auto nb = g.neighbors(x, l);
      EXPECT_LE(nb.size(), g.max_degree(l));
      for (NodeId e : nb) {
        EXPECT_LT(e, g.size());
        EXPECT_NE(e, x);
        EXPECT_TRUE(g.has_node(e, l));
      }
    }
  }
  EXPECT_LE(g.neighbors(g.entry_point(), g.top_layer()).size(), g.M());
  EXPECT_EQ(g.level(g.entry_point()), g.top_layer());
}

TEST(Build, DeterministicForSeed) {
  VectorDatabase db{test::gaussian_matrix(500, 8, 24), Metric::L2};
  EXPECT_EQ(build_hnsw(db, {8, 64, 5}), build_hnsw(db, {8, 64, 5}));
}

TEST(Build, LevelDistributionFollowsGeometricLaw) {
  VectorDatabase db{test::gaussian_matrix(4000, 4, 25), Metric::L2};
  const GraphIndex g = build_hnsw(db, {4, 16, 6});
  // P(level >= 1) = 1/M
  const double upper = static_cast<double>(g.layer_nodes(1).size()) / g.size();
  EXPECT_NEAR(upper, 0.25, 0.03);
}

TEST(Index, FileRoundTrip) {
  TempDir dir("idx");
  VectorDatabase db{test::gaussian_matrix(300, 8, 26), Metric::L2};
  const GraphIndex g = build_hnsw(db, {8, 40, 7});
  save_index(dir / "g.bin", g);
  EXPECT_EQ(import_index(dir / "g.bin"), g);
}

TEST(Index, OutOfRangeNeighborCitesNode) {
  TempDir dir("idx");
  write_raw_index(dir / "bad.bin", 3, 2, 0, {{{0, {1}}, {1, {0, 7}}, {2, {1}}}});
  const std::string msg = import_error(dir / "bad.bin");
  EXPECT_NE(msg.find("node 1"), std::string::npos) << msg;
  EXPECT_NE(msg.find('7'), std::string::npos) << msg;
}

TEST(Index, NodeMissingFromLowerLayer) {
  TempDir dir("idx");
  write_raw_index(dir / "bad.bin", 3, 2, 2,
                  {{{0, {1}}, {1, {0}}, {2, {0}}}, {{0, {}}}, {{0, {}}, {2, {0}}}});
  const std::string msg = import_error(dir / "bad.bin");
  EXPECT_NE(msg.find("node 2"), std::string::npos) << msg;
  EXPECT_NE(msg.find("layer 1"), std::string::npos) << msg;
}

TEST(Index, OtherCorruptionsRejected) {
  TempDir dir("idx");
  write_raw_index(dir / "deg.bin", 2, 1, 0, {{{0, {1, 1, 1}}, {1, {0}}}});
  EXPECT_FALSE(import_error(dir / "deg.bin").empty());
  write_raw_index(dir / "miss.bin", 3, 2, 0, {{{0, {1}}, {1, {0}}}});
  EXPECT_FALSE(import_error(dir / "miss.bin").empty());
  write_raw_index(dir / "self.bin", 2, 2, 0, {{{0, {0}}, {1, {0}}}});
  EXPECT_FALSE(import_error(dir / "self.bin").empty());
  std::ofstream(dir / "junk.bin") << "not an index";
  EXPECT_FALSE(import_error(dir / "junk.bin").empty());
}

TEST(Index, ToyGraphNeighbors) {
  const GraphIndex g = toy_graph();
  const auto nb = g.neighbors(1, 0);
  EXPECT_EQ(std::set<NodeId>(nb.begin(), nb.end()), (std::set<NodeId>{0, 2, 3, 6}));
  EXPECT_THROW(g.neighbors(1, 1), Error);
}

TEST(Index, EdgeCsvImportIsVerbatim) {
  TempDir dir("idx");
  {
    std::ofstream out(dir / "toy.csv");
    out << "node,layer,neighbor\n";
    const GraphIndex g = toy_graph();
    for (NodeId x = 0; x < 7; ++x) {
      for (NodeId e : g.neighbors(x, 0)) out << x << ",0," << e << "\n";
    }
    out << "1,1,3\n3,1,1\n";
  }
  const GraphIndex g = import_edge_csv(dir / "toy.csv", 7, 2, 4);
  const GraphIndex ref = toy_graph();
  for (NodeId x = 0; x < 7; ++x) {
    const auto a = g.neighbors(x, 0), b = ref.neighbors(x, 0);
    EXPECT_TRUE(std::equal(a.begin(), a.end(), b.begin(), b.end())) << "node " << x;
  }
  EXPECT_EQ(g.top_layer(), 1u);
  EXPECT_EQ(g.entry_point(), 1u);
  EXPECT_EQ(std::vector<NodeId>(g.neighbors(1, 1).begin(), g.neighbors(1, 1).end()), (std::vector<NodeId>{3}));
}

TEST(Index, EdgeCsvRejectsBadRows) {
  TempDir dir("idx");
  std::ofstream(dir / "bad.csv") << "0,0,1\n1,0,x\n";
  EXPECT_THROW(import_edge_csv(dir / "bad.csv"), FormatError);
  std::ofstream(dir / "range.csv") << "0,0,9\n";
  EXPECT_THROW(import_edge_csv(dir / "range.csv", 3), FormatError);
}
