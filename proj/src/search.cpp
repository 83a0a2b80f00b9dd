#include "ndpann/search.hpp"

#include <algorithm>
#include <atomic>
#include <mutex>
#include <cmath>
#include <thread>

#include "binary_io.hpp"
#include "ndpann/distance.hpp"

namespace ndpann {

namespace {

constexpr std::uint32_t kTraceMagic = 0x4352544e;  // "NTRC"
constexpr std::uint32_t kTraceVersion = 1;

struct Scored {
  float d;
  NodeId id;
  friend bool operator<(const Scored& a, const Scored& b) {
    return a.d < b.d || (a.d == b.d && a.id < b.id);
  }
};

struct Farther {
  bool operator()(const Scored& a, const Scored& b) const { return b < a; }
};

}  // namespace

const char* to_string(EvalMode m) {
  switch (m) {
    case EvalMode::Exact: return "exact";
    case EvalMode::FeePartial: return "fee-partial";
    case EvalMode::FeeSpca: return "fee-spca";
  }
  return "?";
}

EvalMode eval_mode_from_string(const std::string& s) {
  if (s == "exact") return EvalMode::Exact;
  if (s == "fee-partial") return EvalMode::FeePartial;
  if (s == "fee-spca") return EvalMode::FeeSpca;
  throw Error("unknown evaluation mode '" + s + "'");
}

EvalPlan make_eval_plan(EvalMode mode, Metric metric, std::uint32_t dim, const PcaModel* pca,
                        const DfloatConfig* layout) {
  if (dim == 0) throw Error("evaluation plan needs a positive dimension");
  EvalPlan plan;
  plan.mode = mode;
  plan.metric = metric;
  plan.dim = dim;
  plan.layout = layout != nullptr ? *layout : DfloatConfig::full_precision(dim);
  if (plan.layout.dim() != dim) {
    throw MismatchError("Dfloat config covers " + std::to_string(plan.layout.dim()) +
                        " dims, expected " + std::to_string(dim));
  }
  plan.checkpoints = plan.layout.step_boundaries();
  plan.scale.assign(plan.checkpoints.size(), 1.0);
  if (mode == EvalMode::FeeSpca) {
    if (pca == nullptr) throw Error("fee-spca evaluation requires a PCA model");
    if (pca->dim() != dim) throw MismatchError("PCA model dimension does not match the plan");
    if (pca->metric != metric) throw MismatchError("PCA model metric does not match the plan");
    for (std::size_t i = 0; i < plan.checkpoints.size(); ++i) {
      const auto* cp = pca->find_checkpoint(plan.checkpoints[i]);
      if (cp == nullptr) {
        throw Error("PCA model has no parameters for checkpoint " +
                    std::to_string(plan.checkpoints[i]));
      }
      plan.scale[i] = cp->alpha / cp->beta;
    }
  }
  return plan;
}

EvalResult evaluate_distance(std::span<const float> q, std::span<const float> v,
                             const EvalPlan& plan, float threshold) {
  DistanceAccumulator acc(plan.metric);
  const std::uint32_t d = plan.dim;
  if (plan.mode == EvalMode::Exact || !std::isfinite(threshold)) {
    acc.add(q, v, 0, d);
    return {acc.total(), d, false};
  }
  std::uint32_t prev = 0;
  for (std::size_t i = 0; i < plan.checkpoints.size(); ++i) {
    const std::uint32_t k = plan.checkpoints[i];
    acc.add(q, v, prev, k);
    prev = k;
    if (k >= d) break;
    const float part = acc.total();
    if (plan.scale[i] * static_cast<double>(part) >= static_cast<double>(threshold)) {
      return {part, k, true};
    }
  }
  return {acc.total(), d, false};
}

struct SearchState::Impl {
  const GraphIndex& index;
  const Matrix& vectors;
  const EvalPlan& plan;
  std::vector<float> q;
  SearchParams params;
  SearchTrace trace;

  std::uint32_t layer = 0;
  bool in_base = false;
  bool finished = false;
  Scored cur{};
  std::vector<Scored> cand;  // min-heap
  std::vector<Scored> top;   // max-heap, size <= ef
  std::vector<std::uint8_t> visited;

  Impl(const SearchContext& ctx, std::span<const float> query, const SearchParams& p,
       std::uint32_t id)
      : index(*ctx.index), vectors(*ctx.vectors), plan(*ctx.plan), q(query.begin(), query.end()),
        params(p) {
    if (p.k == 0 || p.k > p.ef_search) throw Error("search needs 1 <= k <= efSearch");
    if (query.size() != vectors.cols()) throw MismatchError("query dimension does not match the database");
    if (vectors.rows() != index.size()) throw MismatchError("index and database sizes differ");
    trace.query = id;
    const NodeId entry = index.entry_point();
    trace.entry = entry;
    cur = {exact(entry), entry};
    layer = index.top_layer();
    if (layer == 0) enter_base();
  }

  float exact(NodeId v) const { return distance(plan.metric, q, vectors.row(v)); }

  void enter_base() {
    in_base = true;
    visited.assign(index.size(), 0);
    visited[cur.id] = 1;
    cand.push_back(cur);
    top.push_back(cur);
  }

  bool base_done() const { return cand.empty() || (top.size() >= params.ef_search && top.front() < cand.front()); }

  bool done() const { return finished || (in_base && base_done()); }

  void step() {
    if (done()) return;
    HopRecord hop;
    if (!in_base) {
      hop.node = cur.id;
      hop.layer = layer;
      Scored best = cur;
      const auto nb = index.neighbors(cur.id, layer);
      hop.evals.reserve(nb.size());
      for (NodeId e : nb) {
        const Scored s{exact(e), e};
        hop.evals.push_back({e, s.d, static_cast<std::uint16_t>(plan.dim), Outcome::Completed});
        if (s < best) best = s;
      }
      if (best.id != cur.id) {
        for (auto& ev : hop.evals) {
          if (ev.id == best.id) ev.outcome = Outcome::Accepted;
        }
        cur = best;
      } else if (--layer == 0) {
        enter_base();
      }
    } else {
      std::pop_heap(cand.begin(), cand.end(), Farther{});
      const Scored c = cand.back();
      cand.pop_back();
      hop.node = c.id;
      hop.layer = 0;
      hop.carry_best = cand.empty() ? kInvalidNode : cand.front().id;
      const auto nb = index.neighbors(c.id, 0);
      hop.evals.reserve(nb.size());
      for (NodeId e : nb) {
        if (visited[e]) {
          hop.evals.push_back({e, 0.0f, 0, Outcome::Visited});
          continue;
        }
        visited[e] = 1;
        const bool full = top.size() >= params.ef_search;
        const float threshold = full ? top.front().d : kInfDistance;
        const EvalResult r = evaluate_distance(q, vectors.row(e), plan, threshold);
        if (r.exited) {
          hop.evals.push_back({e, r.distance, static_cast<std::uint16_t>(r.dims), Outcome::Exited});
          continue;
        }
        const Scored s{r.distance, e};
        if (!full || s < top.front()) {
          cand.push_back(s);
          std::push_heap(cand.begin(), cand.end(), Farther{});
          top.push_back(s);
          std::push_heap(top.begin(), top.end());
          if (top.size() > params.ef_search) {
            std::pop_heap(top.begin(), top.end());
            top.pop_back();
          }
          hop.evals.push_back({e, s.d, static_cast<std::uint16_t>(r.dims), Outcome::Accepted});
        } else {
          hop.evals.push_back({e, s.d, static_cast<std::uint16_t>(r.dims), Outcome::Completed});
        }
      }
    }
    if (params.record_trace) trace.hops.push_back(std::move(hop));
  }

  SearchResult finish() {
    while (!done()) step();
    finished = true;
    std::vector<Scored> sorted = top;
    std::sort(sorted.begin(), sorted.end());
    SearchResult out;
    const std::size_t k = std::min<std::size_t>(params.k, sorted.size());
    for (std::size_t i = 0; i < k; ++i) out.neighbors.push_back({sorted[i].id, sorted[i].d});
    out.trace = std::move(trace);
    return out;
  }
};

SearchState::SearchState(const SearchContext& ctx, std::span<const float> q,
                         const SearchParams& params, std::uint32_t query_id) {
  if (ctx.index == nullptr || ctx.vectors == nullptr || ctx.plan == nullptr) {
    throw Error("search context is incomplete");
  }
  impl_ = std::make_unique<Impl>(ctx, q, params, query_id);
}
SearchState::SearchState(SearchState&&) noexcept = default;
SearchState& SearchState::operator=(SearchState&&) noexcept = default;
SearchState::~SearchState() = default;

bool SearchState::done() const { return impl_->done(); }
void SearchState::step() { impl_->step(); }
SearchResult SearchState::finish() { return impl_->finish(); }

SearchResult search(const SearchContext& ctx, std::span<const float> q, const SearchParams& params,
                    std::uint32_t query_id) {
  SearchState s(ctx, q, params, query_id);
  return s.finish();
}

std::vector<std::vector<NodeId>> BatchResult::ids() const {
  std::vector<std::vector<NodeId>> out(results.size());
  for (std::size_t i = 0; i < results.size(); ++i) {
    for (const auto& n : results[i]) out[i].push_back(n.id);
  }
  return out;
}

BatchResult batch_search(const SearchContext& ctx, const Matrix& queries, std::uint32_t batch,
                         const SearchParams& params, std::uint32_t workers) {
  if (batch == 0) throw Error("batch size must be at least 1");
  const std::size_t m = queries.rows();
  BatchResult out;
  out.batch_size = batch;
  out.results.resize(m);
  out.traces.resize(m);
  const std::size_t batches = (m + batch - 1) / batch;
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mu;

  auto run = [&] {
    for (std::size_t b; (b = next.fetch_add(1)) < batches;) {
      try {
        const std::size_t lo = b * batch, hi = std::min(m, lo + batch);
        std::vector<SearchState> states;
        states.reserve(hi - lo);
        for (std::size_t i = lo; i < hi; ++i) {
          states.emplace_back(ctx, queries.row(i), params, static_cast<std::uint32_t>(i));
        }
        bool active = true;
        while (active) {
          active = false;
          for (auto& s : states) {
            if (!s.done()) {
              s.step();
              active = true;
            }
          }
        }
        for (std::size_t i = lo; i < hi; ++i) {
          auto r = states[i - lo].finish();
          r.trace.batch = static_cast<std::uint32_t>(b);
          out.results[i] = std::move(r.neighbors);
          out.traces[i] = std::move(r.trace);
        }
      } catch (...) {
        std::lock_guard lock(failure_mu);
        if (!failure) failure = std::current_exception();
        next = batches;
      }
    }
  };

  const std::uint32_t threads = std::max<std::uint32_t>(1, std::min<std::uint32_t>(workers, static_cast<std::uint32_t>(batches)));
  if (threads == 1) {
    run();
  } else {
    std::vector<std::thread> pool;
    for (std::uint32_t t = 0; t < threads; ++t) pool.emplace_back(run);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);
  return out;
}

FeatureUsage feature_usage_histogram(const std::vector<SearchTrace>& traces, const EvalPlan& plan) {
  if (traces.empty()) throw Error("feature usage needs at least one trace");
  FeatureUsage fu;
  fu.dims = plan.checkpoints;
  std::vector<std::uint64_t> at(plan.checkpoints.size(), 0);
  std::vector<std::uint32_t> exit_dims;
  double dims_total = 0.0;
  for (const auto& t : traces) {
    for (const auto& h : t.hops) {
      if (h.layer != 0) continue;
      for (const auto& e : h.evals) {
        if (e.outcome == Outcome::Visited) continue;
        ++fu.evaluations;
        dims_total += e.dims;
        if (e.outcome == Outcome::Exited) {
          ++fu.exits;
          exit_dims.push_back(e.dims);
        }
        const auto it = std::lower_bound(plan.checkpoints.begin(), plan.checkpoints.end(),
                                         static_cast<std::uint32_t>(e.dims));
        if (it == plan.checkpoints.end()) throw MismatchError("trace dims exceed the plan dimension");
        ++at[static_cast<std::size_t>(it - plan.checkpoints.begin())];
      }
    }
  }
  if (fu.evaluations == 0) throw Error("traces contain no base-layer evaluations");
  fu.cumulative.resize(at.size());
  std::uint64_t run = 0;
  for (std::size_t i = 0; i < at.size(); ++i) {
    run += at[i];
    fu.cumulative[i] = static_cast<double>(run) / static_cast<double>(fu.evaluations);
  }
  fu.mean_dims = dims_total / static_cast<double>(fu.evaluations);
  if (exit_dims.empty()) {
    fu.p80_exit_dim = plan.dim;
  } else {
    std::sort(exit_dims.begin(), exit_dims.end());
    const auto idx = static_cast<std::size_t>(std::ceil(0.8 * static_cast<double>(exit_dims.size()))) - 1;
    fu.p80_exit_dim = exit_dims[idx];
  }
  return fu;
}

void save_traces(const std::filesystem::path& path, const std::vector<SearchTrace>& traces,
                 std::uint32_t dim, std::uint32_t batch_size) {
  io::Writer w(path);
  w.put(kTraceMagic);
  w.put(kTraceVersion);
  w.put(dim);
  w.put(batch_size);
  w.put(static_cast<std::uint32_t>(traces.size()));
  for (const auto& t : traces) {
    w.put(t.query);
    w.put(t.batch);
    w.put(t.entry);
    w.put(static_cast<std::uint32_t>(t.hops.size()));
    for (const auto& h : t.hops) {
      w.put(h.node);
      w.put(h.layer);
      w.put(h.carry_best);
      w.put(static_cast<std::uint32_t>(h.evals.size()));
      for (const auto& e : h.evals) {
        w.put(e.id);
        w.put(e.distance);
        w.put(e.dims);
        w.put(static_cast<std::uint8_t>(e.outcome));
        w.put(std::uint8_t{0});
      }
    }
  }
  w.finish();
}

TraceFile load_traces(const std::filesystem::path& path) {
  io::Reader r(path);
  if (r.get<std::uint32_t>() != kTraceMagic) throw FormatError("'" + path.string() + "' is not a trace file");
  const auto version = r.get<std::uint32_t>();
  if (version != kTraceVersion) throw FormatError("unsupported trace version " + std::to_string(version));
  TraceFile tf;
  tf.dim = r.get<std::uint32_t>();
  tf.batch_size = r.get<std::uint32_t>();
  const auto count = r.get<std::uint32_t>();
  tf.traces.resize(count);
  for (auto& t : tf.traces) {
    t.query = r.get<std::uint32_t>();
    t.batch = r.get<std::uint32_t>();
    t.entry = r.get<std::uint32_t>();
    t.hops.resize(r.get<std::uint32_t>());
    for (auto& h : t.hops) {
      h.node = r.get<std::uint32_t>();
      h.layer = r.get<std::uint32_t>();
      h.carry_best = r.get<std::uint32_t>();
      h.evals.resize(r.get<std::uint32_t>());
      for (auto& e : h.evals) {
        e.id = r.get<std::uint32_t>();
        e.distance = r.get<float>();
        e.dims = r.get<std::uint16_t>();
        const auto o = r.get<std::uint8_t>();
        if (o > 3) throw FormatError("bad evaluation outcome at byte " + std::to_string(r.offset() - 1));
        e.outcome = static_cast<Outcome>(o);
        r.get<std::uint8_t>();
      }
    }
  }
  if (!r.at_end()) throw FormatError("trailing bytes in trace file at offset " + std::to_string(r.offset()));
  return tf;
}

}  // namespace ndpann
