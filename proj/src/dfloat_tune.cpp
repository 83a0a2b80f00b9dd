#include "ndpann/dfloat_tune.hpp"

#include <algorithm>
#include <atomic>
#include <map>
#include <mutex>
#include <thread>

namespace ndpann {

double dfloat_recall(const GraphIndex& index, const Matrix& transformed_db, const PcaModel& pca,
                     const QuerySet& queries, const DfloatConfig& cfg, const TuneOptions& options) {
  const Matrix emulated = mask_emulate_rows(transformed_db, cfg);
  const EvalPlan plan = make_eval_plan(EvalMode::FeeSpca, pca.metric,
                                       static_cast<std::uint32_t>(transformed_db.cols()), &pca, &cfg);
  SearchParams sp = options.search;
  sp.record_trace = false;
  const SearchContext ctx{&index, &emulated, &plan};
  const auto res = batch_search(ctx, queries.queries, options.batch, sp, 1);
  return mean_recall(res.ids(), queries);
}

TuneResult search_config(const GraphIndex& index, const Matrix& transformed_db, const PcaModel& pca,
                         const QuerySet& queries, const TuneOptions& options) {
  if (queries.size() == 0) throw Error("Dfloat tuning needs a non-empty query sample");
  if (options.devices == 0) throw Error("device count must be positive");
  const auto dim = static_cast<std::uint32_t>(transformed_db.cols());
  const auto [n_min, n_max] = burst_search_bounds(dim, options.burst_bits, options.devices);

  TuneResult out;
  struct Outcome {
    bool feasible = false;
    double recall = 0.0;
    DfloatConfig cfg;
  };
  std::map<std::uint32_t, Outcome> seen;

  auto probe = [&](std::uint32_t n) -> const Outcome& {
    if (auto it = seen.find(n); it != seen.end()) return it->second;
    auto cands = cfg_validate(n, dim, options.burst_bits, options.devices, options.candidates);
    if (cands.size() > options.max_candidates) cands.resize(options.max_candidates);
    std::vector<double> recall(cands.size(), 0.0);
    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex mu;
    auto work = [&] {
      for (std::size_t i; (i = next.fetch_add(1)) < cands.size();) {
        try {
          recall[i] = dfloat_recall(index, transformed_db, pca, queries, cands[i], options);
        } catch (...) {
          std::lock_guard lock(mu);
          if (!failure) failure = std::current_exception();
        }
      }
    };
    const std::size_t threads = std::min<std::size_t>(std::max<std::uint32_t>(1, options.workers), cands.size());
    if (threads <= 1) {
      work();
    } else {
      std::vector<std::thread> pool;
      for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(work);
      for (auto& t : pool) t.join();
    }
    if (failure) std::rethrow_exception(failure);

    Outcome o;
    for (std::size_t i = 0; i < cands.size(); ++i) {
      if (i == 0 || recall[i] > o.recall) {
        o.recall = recall[i];
        o.cfg = cands[i];
      }
    }
    o.feasible = !cands.empty() && o.recall >= options.target_recall;
    out.probes.push_back({n, cands.size(), o.recall, o.feasible});
    return seen.emplace(n, std::move(o)).first->second;
  };

  std::uint32_t lo = n_min / options.devices, hi = n_max / options.devices;
  while (lo < hi) {
    const std::uint32_t mid = lo + (hi - lo) / 2;
    if (probe(mid * options.devices).feasible) {
      hi = mid;
    } else {
      lo = mid + 1;
    }
  }
  const Outcome& final_probe = probe(lo * options.devices);

  bool feasible_below = false, inverted = false;
  for (const auto& [n, o] : seen) {
    if (o.feasible) feasible_below = true;
    else if (feasible_below) inverted = true;
  }
  if (inverted) {
    out.warnings.push_back("recall feasibility is not monotone in the burst count over the probed points");
  }

  if (final_probe.feasible) {
    out.config = final_probe.cfg;
    out.recall = final_probe.recall;
  } else {
    out.fallback = true;
    out.config = DfloatConfig::full_precision(dim, options.burst_bits, options.devices);
    out.recall = dfloat_recall(index, transformed_db, pca, queries, out.config, options);
    out.warnings.push_back("no Dfloat configuration reached the target recall; using 32-bit features");
  }
  return out;
}

}  // namespace ndpann
