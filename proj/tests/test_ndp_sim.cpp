#include <algorithm>
#include <set>

#include "ndpann/ndp_sim.hpp"
#include "ndpann/pca.hpp"
#include "test_util.hpp"

using namespace ndpann;

namespace {

GraphIndex toy_graph() {
  GraphIndex g(7, 2, 4);
  const std::vector<std::vector<NodeId>> adj = {{1}, {2, 3, 6}, {1, 3}, {1, 2, 4}, {3, 5}, {4, 6}, {1, 5}};
  for (NodeId i = 0; i < 7; ++i) g.mutable_neighbors(i, 0) = adj[i];
  g.set_entry_point(1);
  return g;
}

struct World {
  VectorDatabase db;
  Matrix queries;
  PcaModel model;
  GraphIndex index;
  DfloatConfig layout_cfg;
  NdpTopology topo;
};

const World& world() {
  static const World w = [] {
    World x;
    auto [raw, extra] = make_synthetic_split(3000, 200, 64, 0.95, 50);
    auto pre = preprocess(raw, extra, {});
    x.db = std::move(pre.transformed);
    x.queries = std::move(pre.transformed_probes);
    x.model = std::move(pre.model);
    x.index = build_hnsw(x.db, {12, 100, 51});
    x.layout_cfg = DfloatConfig::full_precision(64);
    return x;
  }();
  return w;
}

std::vector<SearchTrace> traces_for(EvalMode mode, const Matrix& queries, std::uint32_t batch, std::uint32_t ef = 64) {
  const World& w = world();
  const EvalPlan plan = make_eval_plan(mode, Metric::L2, 64, &w.model, &w.layout_cfg);
  const SearchContext ctx{&w.index, &w.db.vectors, &plan};
  SearchParams p;
  p.ef_search = ef;
  return batch_search(ctx, queries, batch, p).traces;
}

NdpLayout world_layout() {
  const World& w = world();
  return map_database(w.index, w.layout_cfg, w.topo, PlacementPolicy::Shuffled, 3);
}

}  // namespace

TEST(Mapping, ToyPartition) {
  const GraphIndex g = toy_graph();
  const auto cfg = DfloatConfig::full_precision(2);
  const NdpLayout layout = map_database_with_homes(g, cfg, 2, {0, 0, 0, 0, 1, 1, 1});
  const auto p0 = layout.partition(1, 0), p1 = layout.partition(1, 1);
  EXPECT_EQ(std::vector<NodeId>(p0.begin(), p0.end()), (std::vector<NodeId>{2, 3}));
  EXPECT_EQ(std::vector<NodeId>(p1.begin(), p1.end()), (std::vector<NodeId>{6}));
  EXPECT_EQ(layout.subchannels[0].nlt[1].length, 2u);
  EXPECT_EQ(layout.subchannels[1].nlt[1].length, 1u);
  EXPECT_EQ(layout.subchannels[0].vectors, 4u);
  EXPECT_EQ(layout.subchannels[1].vectors, 3u);
}

TEST(Mapping, SingleSubchannelKeepsLists) {
  const GraphIndex g = toy_graph();
  const NdpLayout layout = map_database_with_homes(g, DfloatConfig::full_precision(2), 1, std::vector<std::uint32_t>(7, 0));
  for (NodeId x = 0; x < 7; ++x) {
    const auto a = layout.partition(x, 0);
    const auto b = g.neighbors(x, 0);
    EXPECT_TRUE(std::equal(a.begin(), a.end(), b.begin(), b.end()));
  }
}

TEST(Mapping, PartitionsReconstructAdjacency) {
  const World& w = world();
  for (PlacementPolicy policy : {PlacementPolicy::Shuffled, PlacementPolicy::RoundRobin, PlacementPolicy::Blocked}) {
    const NdpLayout layout = map_database(w.index, w.layout_cfg, w.topo, policy, 9);
    ASSERT_EQ(layout.subchannels.size(), w.topo.subchannels());
    for (NodeId x = 0; x < w.index.size(); ++x) {
      std::multiset<NodeId> got;
      for (std::uint32_t s = 0; s < layout.subchannels.size(); ++s) {
        for (NodeId e : layout.partition(x, s)) {
          EXPECT_EQ(layout.home[e], s);
          got.insert(e);
        }
      }
      const auto nb = w.index.neighbors(x, 0);
      EXPECT_EQ(got, std::multiset<NodeId>(nb.begin(), nb.end())) << "node " << x;
    }
  }
}

TEST(Mapping, LayoutFileRoundTrip) {
  test::TempDir dir("lay");
  const NdpLayout layout = world_layout();
  save_layout(dir / "l.bin", layout);
  EXPECT_EQ(load_layout(dir / "l.bin"), layout);
}

TEST(Lru, CompulsoryMissesOnly) {
  LruCache c(4, 2);
  int misses = 0;
  for (int round = 0; round < 3; ++round) {
    for (std::uint64_t k = 0; k < 8; ++k) misses += !c.access(k);
  }
  EXPECT_EQ(misses, 8);
}

TEST(Lru, EvictsLeastRecent) {
  LruCache c(1, 2);
  c.access(1);
  c.access(2);
  c.access(1);
  c.access(3);
  EXPECT_TRUE(c.contains(1));
  EXPECT_FALSE(c.contains(2));
  EXPECT_TRUE(c.contains(3));
  EXPECT_TRUE(c.fill(3));
  EXPECT_FALSE(c.fill(4));
  EXPECT_FALSE(c.contains(1));
}

TEST(Simulate, DataAwareMappingHasNoCrossTraffic) {
  const World& w = world();
  const auto traces = traces_for(EvalMode::FeeSpca, w.queries.slice_rows(0, 64), 16);
  const NdpLayout layout = world_layout();
  for (const char* sw : {"dam", "dam,lnc", "all"}) {
    EXPECT_EQ(simulate(traces, layout, w.layout_cfg, w.topo, switches_from_string(sw)).cross_channel_bursts, 0u) << sw;
  }
  EXPECT_GT(simulate(traces, layout, w.layout_cfg, w.topo, switches_from_string("none")).cross_channel_bursts, 0u);
}

TEST(Simulate, CachesOnlyRemoveListTraffic) {
  const World& w = world();
  const auto traces = traces_for(EvalMode::FeeSpca, w.queries.slice_rows(0, 64), 16);
  const NdpLayout layout = world_layout();
  const SimStats off = simulate(traces, layout, w.layout_cfg, w.topo, {true, false, false});
  const SimStats on = simulate(traces, layout, w.layout_cfg, w.topo, {true, true, false});
  EXPECT_EQ(on.vector_bursts, off.vector_bursts);
  EXPECT_LT(on.nbrlist_bursts + on.nlt_bursts, off.nbrlist_bursts + off.nlt_bursts);
  EXPECT_LE(on.total_cycles, off.total_cycles);
  EXPECT_EQ(off.prefetch_issued, 0u);
}

TEST(Simulate, RepeatedQueryHitsLocalCaches) {
  const World& w = world();
  Matrix twice = w.queries.slice_rows(0, 1);
  twice.append_row(w.queries.row(0));
  const auto traces = traces_for(EvalMode::FeeSpca, twice, 1);
  ASSERT_EQ(traces[0].hops, traces[1].hops);
  const NdpLayout layout = world_layout();
  const SimSwitches sw{true, true, false};
  const SimStats first = simulate({traces[0]}, layout, w.layout_cfg, w.topo, sw);
  const SimStats both = simulate(traces, layout, w.layout_cfg, w.topo, sw);
  const auto hits = (both.lnct_hits - first.lnct_hits) + (both.lncd_hits - first.lncd_hits);
  const auto misses = (both.lnct_misses - first.lnct_misses) + (both.lncd_misses - first.lncd_misses);
  ASSERT_GT(hits + misses, 0u);
  EXPECT_GE(static_cast<double>(hits) / static_cast<double>(hits + misses), 0.9);
}

TEST(Simulate, Deterministic) {
  const World& w = world();
  const auto traces = traces_for(EvalMode::FeeSpca, w.queries.slice_rows(0, 48), 16);
  const NdpLayout layout = world_layout();
  EXPECT_EQ(simulate(traces, layout, w.layout_cfg, w.topo, {}), simulate(traces, layout, w.layout_cfg, w.topo, {}));
}

TEST(Simulate, VectorBurstsFollowExitDims) {
  const World& w = world();
  const auto traces = traces_for(EvalMode::FeeSpca, w.queries.slice_rows(0, 16), 16);
  const auto bounds = w.layout_cfg.step_boundaries();
  std::uint64_t expected = 0;
  for (const auto& t : traces) {
    for (const auto& h : t.hops) {
      for (const auto& e : h.evals) {
        if (e.outcome != Outcome::Visited) expected += std::uint64_t{steps_for_dims(bounds, e.dims)};
      }
    }
  }
  const SimStats s = simulate(traces, world_layout(), w.layout_cfg, w.topo, {});
  EXPECT_EQ(s.vector_bursts, expected);
}

TEST(Simulate, PrefetchNeedsAllSwitches) {
  const World& w = world();
  const auto traces = traces_for(EvalMode::FeeSpca, w.queries.slice_rows(0, 32), 16);
  const NdpLayout layout = world_layout();
  EXPECT_EQ(simulate(traces, layout, w.layout_cfg, w.topo, {false, true, true}).prefetch_issued, 0u);
  EXPECT_EQ(simulate(traces, layout, w.layout_cfg, w.topo, {true, false, true}).prefetch_issued, 0u);
  const SimStats s = simulate(traces, layout, w.layout_cfg, w.topo, {true, true, true});
  EXPECT_GT(s.prefetch_issued, 0u);
  EXPECT_LE(s.prefetch_hits, s.prefetch_issued);
}

TEST(Breakdown, NoHostCostsMeansNoPartialShare) {
  const World& w = world();
  const auto traces = traces_for(EvalMode::FeeSpca, w.queries.slice_rows(0, 32), 16);
  NdpTopology t = w.topo;
  t.t_merge = 0;
  t.t_hop_launch = 0;
  const auto b = latency_breakdown(simulate(traces, world_layout(), w.layout_cfg, t, {}));
  EXPECT_EQ(b.partial_result_processing, 0.0);
  EXPECT_NEAR(b.neighbor_retrieval + b.distance_compute, 100.0, 0.1);
}

TEST(Breakdown, SharesSumToHundred) {
  const World& w = world();
  const auto traces = traces_for(EvalMode::Exact, w.queries.slice_rows(0, 32), 16);
  for (const char* sw : {"none", "dam", "all"}) {
    const auto b = latency_breakdown(simulate(traces, world_layout(), w.layout_cfg, w.topo, switches_from_string(sw)));
    EXPECT_NEAR(b.neighbor_retrieval + b.distance_compute + b.partial_result_processing, 100.0, 0.1) << sw;
  }
}

TEST(Breakdown, EarlyExitShrinksDistanceShare) {
  const World& w = world();
  const Matrix qs = w.queries.slice_rows(0, 64);
  const NdpLayout layout = world_layout();
  const auto exact = latency_breakdown(simulate(traces_for(EvalMode::Exact, qs, 16), layout, w.layout_cfg, w.topo, {}));
  const auto fee = latency_breakdown(simulate(traces_for(EvalMode::FeeSpca, qs, 16), layout, w.layout_cfg, w.topo, {}));
  EXPECT_LT(fee.distance_compute, exact.distance_compute);
}

TEST(Topology, TextRoundTripAndErrors) {
  test::TempDir dir("topo");
  NdpTopology t;
  t.lncd_bytes = 64 * 1024;
  t.t_merge = 123;
  EXPECT_EQ(NdpTopology::from_text(t.to_text()).to_text(), t.to_text());
  save_topology(dir / "t.txt", t);
  EXPECT_EQ(load_topology(dir / "t.txt").t_merge, 123u);
  EXPECT_THROW(NdpTopology::from_text("bogus=1\n"), Error);
  EXPECT_EQ(t.subchannels(), 16u);
  EXPECT_EQ(t.line_bytes(), 64u);
}

TEST(Switches, Parse) {
  const SimSwitches none = switches_from_string("none");
  EXPECT_FALSE(none.dam || none.lnc || none.prefetch);
  const SimSwitches some = switches_from_string("dam,prefetch");
  EXPECT_TRUE(some.dam);
  EXPECT_FALSE(some.lnc);
  EXPECT_TRUE(some.prefetch);
  EXPECT_THROW(switches_from_string("dam,turbo"), Error);
  EXPECT_EQ(to_string(switches_from_string(to_string(some))), to_string(some));
}
