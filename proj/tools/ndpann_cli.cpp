#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "ndpann/dfloat_tune.hpp"
#include "ndpann/experiment.hpp"
#include "ndpann/graph_index.hpp"
#include "ndpann/ndp_sim.hpp"
#include "ndpann/pca.hpp"
#include "ndpann/search.hpp"
#include "ndpann/sweep.hpp"
#include "ndpann/vecdb.hpp"

namespace fs = std::filesystem;
using namespace ndpann;

namespace {

Matrix read_vectors(const fs::path& p) { return load_xvecs(p, xvecs_kind_from_path(p)); }

std::vector<std::uint32_t> parse_values(const std::string& s) {
  std::vector<std::uint32_t> out;
  std::istringstream in(s);
  std::string tok;
  while (std::getline(in, tok, ',')) {
    std::size_t used = 0;
    const unsigned long v = std::stoul(tok, &used);
    if (used != tok.size()) throw Error("bad value '" + tok + "' in --values");
    out.push_back(static_cast<std::uint32_t>(v));
  }
  if (out.empty()) throw Error("--values is empty");
  return out;
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p);
  if (!out) throw Error("cannot write '" + p.string() + "'");
  out << text;
}

/// Inputs shared by search-like commands.
struct SearchInputs {
  std::string index, base, queries, pca, dfloat, metric = "l2", mode = "fee-spca";
  SearchParams params;
  std::uint32_t batch = 16, workers = 1;

  void add(CLI::App* c) {
    c->add_option("--index", index, "index file")->required();
    c->add_option("--base", base, "database vectors in the index's space (fvecs)")->required();
    c->add_option("--queries", queries, "query vectors in the original space (fvecs)")->required();
    c->add_option("--pca", pca, "PCA model; queries are transformed with it");
    c->add_option("--dfloat-config", dfloat, "Dfloat layout; the database is emulated at it");
    c->add_option("--metric", metric, "l2 or ip");
    c->add_option("--mode", mode, "exact, fee-partial or fee-spca");
    c->add_option("--ef-search", params.ef_search);
    c->add_option("--k", params.k);
    c->add_option("--batch", batch);
    c->add_option("--workers", workers);
  }
};

struct LoadedSearch {
  GraphIndex index;
  VectorDatabase db;
  std::optional<PcaModel> pca;
  DfloatConfig layout;
  Matrix search_vectors;
  QuerySet queries;
  EvalPlan plan;
};

LoadedSearch load_search(const SearchInputs& in, const NdpTopology& topo) {
  LoadedSearch s;
  s.index = import_index(in.index);
  s.db = VectorDatabase{read_vectors(in.base), metric_from_string(in.metric)};
  s.db.validate();
  if (s.index.size() != s.db.size()) throw MismatchError("index and database sizes differ");
  Matrix q = read_vectors(in.queries);
  if (!in.pca.empty()) {
    s.pca = load_pca(in.pca);
    q = transform_rows(*s.pca, q);
  }
  const auto dim = static_cast<std::uint32_t>(s.db.dim());
  s.layout = in.dfloat.empty() ? DfloatConfig::full_precision(dim, topo.burst_bits_per_device, topo.devices_per_subchannel)
                               : load_dfloat_config(in.dfloat);
  s.search_vectors = in.dfloat.empty() ? s.db.vectors : mask_emulate_rows(s.db.vectors, s.layout);
  s.queries = make_query_set(s.db, std::move(q), in.params.k);
  s.plan = make_eval_plan(eval_mode_from_string(in.mode), s.db.metric, dim, s.pca ? &*s.pca : nullptr, &s.layout);
  return s;
}

int run(int argc, char** argv) {
  CLI::App app{"Graph ANN search with early-exit distances, Dfloat storage and a near-memory cost model"};
  app.require_subcommand(1);

  // synth
  std::size_t n = 10000, dim = 128, nq = 1000, nprobe = 1000;
  double decay = 0.97;
  std::uint64_t seed = 1;
  std::string out_dir = ".";
  auto* synth = app.add_subcommand("synth", "write a synthetic database, queries and probes as fvecs");
  synth->add_option("--n", n);
  synth->add_option("--dim", dim);
  synth->add_option("--decay", decay, "per-axis variance decay");
  synth->add_option("--queries", nq);
  synth->add_option("--probes", nprobe);
  synth->add_option("--seed", seed);
  synth->add_option("--out", out_dir, "output directory");

  // preprocess
  std::string pp_in, pp_probes, pp_out = ".", pp_metric = "l2";
  double target_prob = 0.9;
  std::size_t samples = 10000;
  auto* pre = app.add_subcommand("preprocess", "fit PCA and the early-exit tables, write the transformed database");
  pre->add_option("--input", pp_in, "database vectors")->required();
  pre->add_option("--probes", pp_probes, "held-out query-like vectors for variance estimation");
  pre->add_option("--output", pp_out, "output directory");
  pre->add_option("--target-prob", target_prob);
  pre->add_option("--samples", samples, "(probe, target) pairs for Var_k");
  pre->add_option("--metric", pp_metric);
  pre->add_option("--seed", seed);

  // build-index
  std::string bi_in, bi_out = "index.bin", bi_metric = "l2";
  HnswParams hp;
  auto* build = app.add_subcommand("build-index", "build an HNSW index");
  build->add_option("--input", bi_in, "vectors (fvecs)")->required();
  build->add_option("--output", bi_out);
  build->add_option("--M", hp.M);
  build->add_option("--ef-construction", hp.ef_construction);
  build->add_option("--seed", hp.seed);
  build->add_option("--metric", bi_metric);

  // import-index
  std::string ii_edges, ii_out = "index.bin";
  std::size_t ii_n = 0, ii_dim = 0;
  std::uint32_t ii_M = 0;
  auto* imp = app.add_subcommand("import-index", "validate an index file or node,layer,neighbor CSV");
  imp->add_option("--edges", ii_edges)->required();
  imp->add_option("--output", ii_out);
  imp->add_option("--n", ii_n, "node count (0 infers)");
  imp->add_option("--dim", ii_dim);
  imp->add_option("--M", ii_M, "degree parameter (0 infers)");

  // tune-dfloat
  SearchInputs tune_in;
  tune_in.mode = "fee-spca";
  double target_recall = 0.9;
  std::uint32_t burst_bits = 128, devices = 4;
  std::size_t max_candidates = 8;
  std::string tune_out = "dfloat.txt";
  auto* tune = app.add_subcommand("tune-dfloat", "search Dfloat layouts for the fewest bursts meeting a recall target");
  tune->add_option("--index", tune_in.index)->required();
  tune->add_option("--base", tune_in.base, "PCA-space database (fvecs)")->required();
  tune->add_option("--queries", tune_in.queries, "tuning queries in the original space")->required();
  tune->add_option("--pca", tune_in.pca)->required();
  tune->add_option("--target-recall", target_recall);
  tune->add_option("--burst-bits", burst_bits);
  tune->add_option("--devices", devices);
  tune->add_option("--max-candidates", max_candidates);
  tune->add_option("--ef-search", tune_in.params.ef_search);
  tune->add_option("--k", tune_in.params.k);
  tune->add_option("--batch", tune_in.batch);
  tune->add_option("--output", tune_out);

  // search
  SearchInputs search_in;
  std::string trace_out, results_out;
  auto* srch = app.add_subcommand("search", "batched search; prints recall against brute force");
  search_in.add(srch);
  srch->add_option("--trace-out", trace_out);
  srch->add_option("--results-out", results_out, "top-k ids (ivecs)");

  // map
  std::string map_index, map_dfloat, map_topo, map_out = "layout.bin", map_policy = "shuffled";
  std::uint64_t map_seed = 1;
  auto* map = app.add_subcommand("map", "place vectors and partitioned neighbor lists on sub-channels");
  map->add_option("--index", map_index)->required();
  map->add_option("--dfloat-config", map_dfloat, "vector layout (default fp32)");
  map->add_option("--topology", map_topo);
  map->add_option("--placement", map_policy, "shuffled, round-robin or blocked");
  map->add_option("--seed", map_seed);
  map->add_option("--output", map_out);

  // simulate
  std::string sim_trace, sim_layout, sim_dfloat, sim_topo, sim_enable = "all", sim_out;
  auto* sim = app.add_subcommand("simulate", "replay a trace through the cost model");
  sim->add_option("--trace", sim_trace)->required();
  sim->add_option("--layout", sim_layout)->required();
  sim->add_option("--dfloat-config", sim_dfloat, "layout the trace was produced with (default fp32)");
  sim->add_option("--topology", sim_topo);
  sim->add_option("--enable", sim_enable, "none, all, or a subset of dam,lnc,prefetch");
  sim->add_option("--out", sim_out, "stats CSV (stdout when omitted)");

  // sweep
  SearchInputs sweep_in;
  std::string sw_param, sw_values, sw_out, sw_topo, sw_enable = "all", sw_policy = "shuffled";
  auto* swp = app.add_subcommand("sweep", "search + simulate over a parameter grid");
  sweep_in.add(swp);
  swp->add_option("--param", sw_param, "ef_search, lncd_capacity (KB), batch or M")->required();
  swp->add_option("--values", sw_values, "comma-separated values")->required();
  swp->add_option("--topology", sw_topo);
  swp->add_option("--enable", sw_enable);
  swp->add_option("--placement", sw_policy);
  swp->add_option("--out", sw_out, "CSV (stdout when omitted)");

  // run / report
  std::string spec_path, bundle, format = "csv";
  auto* runc = app.add_subcommand("run", "run an experiment file");
  runc->add_option("--spec", spec_path)->required();
  auto* rep = app.add_subcommand("report", "regenerate derived tables of a bundle");
  rep->add_option("--bundle", bundle)->required();
  rep->add_option("--format", format)->check(CLI::IsMember({"csv", "plot"}));

  CLI11_PARSE(app, argc, argv);

  auto topology_from = [](const std::string& p) { return p.empty() ? NdpTopology{} : load_topology(p); };

  if (*synth) {
    fs::create_directories(out_dir);
    auto [db, extra] = make_synthetic_split(n, nq + nprobe, dim, decay, seed);
    write_fvecs(fs::path(out_dir) / "base.fvecs", db.vectors);
    write_fvecs(fs::path(out_dir) / "queries.fvecs", extra.slice_rows(0, nq));
    write_fvecs(fs::path(out_dir) / "probes.fvecs", extra.slice_rows(nq, nq + nprobe));
    std::cout << "wrote " << n << " + " << nq << " + " << nprobe << " vectors of dim " << dim << " to " << out_dir << '\n';
  } else if (*pre) {
    VectorDatabase db{read_vectors(pp_in), metric_from_string(pp_metric)};
    db.validate();
    const Matrix probes = pp_probes.empty() ? Matrix{} : read_vectors(pp_probes);
    PreprocessOptions po;
    po.target_prob = target_prob;
    po.sample_pairs = samples;
    po.seed = seed;
    const auto r = preprocess(db, probes, po);
    fs::create_directories(pp_out);
    save_pca(fs::path(pp_out) / "pca.bin", r.model);
    write_fvecs(fs::path(pp_out) / "base_pca.fvecs", r.transformed.vectors);
    std::cout << "wrote pca.bin and base_pca.fvecs to " << pp_out << '\n';
  } else if (*build) {
    VectorDatabase db{read_vectors(bi_in), metric_from_string(bi_metric)};
    db.validate();
    const GraphIndex index = build_hnsw(db, hp);
    save_index(bi_out, index);
    std::cout << "nodes " << index.size() << ", layers " << index.top_layer() + 1 << ", base edges "
              << index.edge_count(0) << ", reachable " << base_layer_reachable(index) << '\n';
  } else if (*imp) {
    const GraphIndex index = fs::path(ii_edges).extension() == ".csv"
                                 ? import_edge_csv(ii_edges, ii_n, static_cast<std::uint32_t>(ii_dim), ii_M)
                                 : import_index(ii_edges);
    save_index(ii_out, index);
    std::cout << "imported " << index.size() << " nodes, " << index.top_layer() + 1 << " layers\n";
  } else if (*tune) {
    NdpTopology topo;
    topo.burst_bits_per_device = burst_bits;
    topo.devices_per_subchannel = devices;
    const LoadedSearch s = load_search(tune_in, topo);
    TuneOptions to;
    to.target_recall = target_recall;
    to.burst_bits = burst_bits;
    to.devices = devices;
    to.search = tune_in.params;
    to.batch = tune_in.batch;
    to.max_candidates = max_candidates;
    to.candidates.exponent_policy = make_data_exponent_policy(s.db.vectors);
    const TuneResult r = search_config(s.index, s.db.vectors, *s.pca, s.queries, to);
    for (const auto& w : r.warnings) std::cerr << "warning: " << w << '\n';
    save_dfloat_config(tune_out, r.config);
    std::cout << r.config.to_text() << "recall " << r.recall << ", " << r.config.total_bursts() << " bursts\n";
  } else if (*srch) {
    const LoadedSearch s = load_search(search_in, NdpTopology{});
    const SearchContext ctx{&s.index, &s.search_vectors, &s.plan};
    const BatchResult r = batch_search(ctx, s.queries.queries, search_in.batch, search_in.params, search_in.workers);
    const auto ids = r.ids();
    std::cout << "recall@" << search_in.params.k << " " << mean_recall(ids, s.queries) << '\n';
    const auto fu = feature_usage_histogram(r.traces, s.plan);
    std::cout << "mean dims " << fu.mean_dims << " of " << s.db.dim() << ", p80 exit dim " << fu.p80_exit_dim << '\n';
    if (!trace_out.empty()) save_traces(trace_out, r.traces, static_cast<std::uint32_t>(s.db.dim()), search_in.batch);
    if (!results_out.empty()) {
      std::vector<std::vector<std::int32_t>> rows;
      for (const auto& row : ids) rows.emplace_back(row.begin(), row.end());
      write_ivecs(results_out, rows);
    }
  } else if (*map) {
    const NdpTopology topo = topology_from(map_topo);
    const GraphIndex index = import_index(map_index);
    const DfloatConfig cfg = map_dfloat.empty() ? DfloatConfig::full_precision(index.dim(), topo.burst_bits_per_device,
                                                                               topo.devices_per_subchannel)
                                                : load_dfloat_config(map_dfloat);
    const NdpLayout layout = map_database(index, cfg, topo, placement_from_string(map_policy), map_seed);
    save_layout(map_out, layout);
    std::cout << "mapped " << layout.size() << " nodes onto " << layout.subchannels.size() << " sub-channels\n";
  } else if (*sim) {
    const NdpTopology topo = topology_from(sim_topo);
    const TraceFile tf = load_traces(sim_trace);
    const NdpLayout layout = load_layout(sim_layout);
    const DfloatConfig cfg = sim_dfloat.empty() ? DfloatConfig::full_precision(tf.dim, topo.burst_bits_per_device,
                                                                               topo.devices_per_subchannel)
                                                : load_dfloat_config(sim_dfloat);
    const SimStats st = simulate(tf.traces, layout, cfg, topo, switches_from_string(sim_enable));
    std::ostringstream csv;
    write_stats_csv_header(csv);
    write_stats_csv_row(csv, sim_enable, st);
    if (sim_out.empty()) {
      std::cout << csv.str();
    } else {
      write_text(sim_out, csv.str());
    }
    const auto b = latency_breakdown(st);
    std::cerr << "qps " << st.qps() << ", breakdown retrieval/distance/partial " << b.neighbor_retrieval << "/"
              << b.distance_compute << "/" << b.partial_result_processing << " %\n";
  } else if (*swp) {
    const NdpTopology topo = topology_from(sw_topo);
    const LoadedSearch s = load_search(sweep_in, topo);
    SweepSetup setup;
    setup.build_vectors = &s.db.vectors;
    setup.metric = s.db.metric;
    setup.search_vectors = &s.search_vectors;
    setup.queries = &s.queries;
    setup.plan = &s.plan;
    setup.index = &s.index;
    setup.hnsw.M = s.index.M();
    setup.search = sweep_in.params;
    setup.batch = sweep_in.batch;
    setup.workers = sweep_in.workers;
    setup.topology = topo;
    setup.switches = switches_from_string(sw_enable);
    setup.placement = placement_from_string(sw_policy);
    const SweepParam p = sweep_param_from_string(sw_param);
    const auto rows = sweep(p, parse_values(sw_values), setup);
    std::ostringstream csv;
    write_sweep_csv(csv, p, rows);
    if (sw_out.empty()) {
      std::cout << csv.str();
    } else {
      write_text(sw_out, csv.str());
    }
  } else if (*runc) {
    const ExperimentSpec spec = ExperimentSpec::load(spec_path);
    const ExperimentResult r = run_experiment(spec);
    std::cout << "bundle " << r.bundle.string() << ", digest " << bundle_digest(r.bundle) << '\n';
  } else if (*rep) {
    if (format == "plot") throw Error("plot output is not built into this tool; use the CSV tables");
    write_report(bundle);
    std::cout << "regenerated tables in " << bundle << "; digest " << bundle_digest(bundle) << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
