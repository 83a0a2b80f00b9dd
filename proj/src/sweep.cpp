#include "ndpann/sweep.hpp"

#include <algorithm>
#include <atomic>
#include <mutex>
#include <optional>
#include <sstream>
#include <thread>

namespace ndpann {

const char* to_string(SweepParam p) {
  switch (p) {
    case SweepParam::EfSearch: return "ef_search";
    case SweepParam::LncdCapacity: return "lncd_capacity";
    case SweepParam::Batch: return "batch";
    case SweepParam::M: return "M";
  }
  return "?";
}

SweepParam sweep_param_from_string(const std::string& s) {
  if (s == "ef_search" || s == "efSearch" || s == "ef") return SweepParam::EfSearch;
  if (s == "lncd_capacity" || s == "lncd") return SweepParam::LncdCapacity;
  if (s == "batch") return SweepParam::Batch;
  if (s == "M" || s == "m") return SweepParam::M;
  throw Error("unknown sweep parameter '" + s + "'");
}

namespace {

SweepRow run_point(SweepParam param, std::uint32_t value, const SweepSetup& s) {
  SearchParams sp = s.search;
  std::uint32_t batch = s.batch;
  NdpTopology topo = s.topology;
  const GraphIndex* index = s.index;
  std::optional<GraphIndex> rebuilt;
  switch (param) {
    case SweepParam::EfSearch:
      sp.ef_search = std::max(value, sp.k);
      break;
    case SweepParam::LncdCapacity:
      topo.lncd_bytes = value * 1024;
      break;
    case SweepParam::Batch:
      batch = value;
      break;
    case SweepParam::M: {
      if (s.build_vectors == nullptr) throw Error("an M sweep needs the build vectors");
      HnswParams hp = s.hnsw;
      hp.M = value;
      rebuilt = build_hnsw(VectorDatabase{*s.build_vectors, s.metric}, hp);
      index = &*rebuilt;
      break;
    }
  }
  const SearchContext ctx{index, s.search_vectors, s.plan};
  const auto res = batch_search(ctx, s.queries->queries, batch, sp, 1);
  const auto layout = map_database(*index, s.plan->layout, topo, s.placement, s.placement_seed);
  SweepRow row;
  row.value = value;
  row.recall = mean_recall(res.ids(), *s.queries);
  row.stats = simulate(res.traces, layout, s.plan->layout, topo, s.switches);
  return row;
}

}  // namespace

std::vector<SweepRow> sweep(SweepParam param, const std::vector<std::uint32_t>& values,
                            const SweepSetup& setup) {
  if (setup.search_vectors == nullptr || setup.queries == nullptr || setup.plan == nullptr ||
      setup.index == nullptr) {
    throw Error("sweep setup is incomplete");
  }
  if (values.empty()) throw Error("sweep needs at least one value");
  std::vector<SweepRow> rows(values.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex mu;
  auto work = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < values.size();) {
      try {
        rows[i] = run_point(param, values[i], setup);
      } catch (...) {
        std::lock_guard lock(mu);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  const std::size_t threads = std::min<std::size_t>(std::max<std::uint32_t>(1, setup.workers), values.size());
  if (threads == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);
  return rows;
}

void write_sweep_csv(std::ostream& out, SweepParam param, const std::vector<SweepRow>& rows) {
  out << to_string(param) << ",recall,lncd_hit_rate,lnct_hit_rate,prefetch_hit_rate,total_cycles,qps,idle_ratio\n";
  for (const auto& r : rows) {
    std::ostringstream line;
    line.precision(10);
    line << r.value << ',' << r.recall << ',' << r.stats.lncd_hit_rate() << ',' << r.stats.lnct_hit_rate()
         << ',' << r.stats.prefetch_hit_rate() << ',' << r.stats.total_cycles << ',' << r.stats.qps()
         << ',' << r.stats.idle_ratio << '\n';
    out << line.str();
  }
}

}  // namespace ndpann
