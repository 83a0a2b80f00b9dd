#include "ndpann/dfloat_tune.hpp"
#include "ndpann/pca.hpp"
#include "test_util.hpp"

using namespace ndpann;

namespace {

struct World {
  PcaModel model;
  VectorDatabase db;
  GraphIndex index;
  QuerySet tune, held_out;
};

const World& world() {
  static const World w = [] {
    World x;
    auto [raw, extra] = make_synthetic_split(3000, 500, 64, 0.95, 80);
    auto pre = preprocess(raw, extra.slice_rows(0, 100), {});
    x.model = std::move(pre.model);
    x.db = std::move(pre.transformed);
    x.index = build_hnsw(x.db, {12, 100, 81});
    x.tune = make_query_set(x.db, transform_rows(x.model, extra.slice_rows(100, 300)), 10);
    x.held_out = make_query_set(x.db, transform_rows(x.model, extra.slice_rows(300, 500)), 10);
    return x;
  }();
  return w;
}

TuneOptions options(double target) {
  TuneOptions o;
  o.target_recall = target;
  o.search.ef_search = 64;
  o.search.k = 10;
  o.candidates.exponent_policy = make_data_exponent_policy(world().db.vectors);
  return o;
}

}  // namespace

TEST(Tune, ZeroTargetGivesFewestBursts) {
  const World& w = world();
  const TuneResult r = search_config(w.index, w.db.vectors, w.model, w.tune, options(0.0));
  EXPECT_FALSE(r.fallback);
  EXPECT_EQ(r.config.total_bursts(), burst_search_bounds(64, 128, 4).first);
  EXPECT_TRUE(r.warnings.empty());
}

TEST(Tune, UnreachableTargetFallsBackToFullPrecision) {
  const World& w = world();
  const TuneResult r = search_config(w.index, w.db.vectors, w.model, w.tune, options(1.01));
  EXPECT_TRUE(r.fallback);
  EXPECT_EQ(r.config, DfloatConfig::full_precision(64));
  ASSERT_FALSE(r.warnings.empty());
  EXPECT_NE(r.warnings.back().find("32-bit"), std::string::npos);
}

TEST(Tune, HeldOutRecallTracksTarget) {
  const World& w = world();
  const TuneOptions base = options(0.0);
  const double full = dfloat_recall(w.index, w.db.vectors, w.model, w.tune, DfloatConfig::full_precision(64), base);
  const double target = 0.9 * full;
  const TuneResult r = search_config(w.index, w.db.vectors, w.model, w.tune, options(target));
  EXPECT_FALSE(r.fallback);
  EXPECT_GE(r.recall, target);
  EXPECT_LT(r.config.total_bursts(), DfloatConfig::full_precision(64).total_bursts());
  const double held = dfloat_recall(w.index, w.db.vectors, w.model, w.held_out, r.config, base);
  EXPECT_GE(held, target - 0.02) << "tuned " << r.recall << " target " << target;
}

TEST(Tune, ProbesAreDeviceMultiplesAndResultIsLeastFeasible) {
  const World& w = world();
  const TuneOptions o = options(0.85);
  const TuneResult r = search_config(w.index, w.db.vectors, w.model, w.tune, o);
  ASSERT_FALSE(r.probes.empty());
  for (const auto& p : r.probes) {
    EXPECT_EQ(p.n_burst % 4, 0u);
    EXPECT_LE(p.candidates, o.max_candidates);
    EXPECT_EQ(p.feasible, p.candidates > 0 && p.best_recall >= o.target_recall);
    if (!r.fallback && p.n_burst < r.config.total_bursts()) {
      EXPECT_FALSE(p.feasible) << p.n_burst;
    }
  }
  EXPECT_TRUE(r.config.satisfies_rules());
}

TEST(Tune, Deterministic) {
  const World& w = world();
  TuneOptions a = options(0.85), b = options(0.85);
  b.workers = 3;
  EXPECT_EQ(search_config(w.index, w.db.vectors, w.model, w.tune, a).config,
            search_config(w.index, w.db.vectors, w.model, w.tune, b).config);
}

TEST(Tune, EmptyQuerySampleRejected) {
  const World& w = world();
  EXPECT_THROW(search_config(w.index, w.db.vectors, w.model, QuerySet{}, options(0.5)), Error);
}
