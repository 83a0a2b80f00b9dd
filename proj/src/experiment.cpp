#include "ndpann/experiment.hpp"

#include <algorithm>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>

namespace ndpann {

namespace fs = std::filesystem;

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::istringstream in(s);
  std::string tok;
  while (std::getline(in, tok, ',')) {
    tok = trim(tok);
    if (!tok.empty()) out.push_back(tok);
  }
  return out;
}

std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  std::ostringstream o;
  o << std::hex << std::setw(16) << std::setfill('0') << v;
  return o.str();
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw Error("cannot open '" + p.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  if (!out) throw Error("cannot write '" + p.string() + "'");
  out << text;
  if (!out) throw Error("write failed for '" + p.string() + "'");
}

template <typename T>
T parse_number(const std::string& section, const std::string& key, const std::string& v) {
  std::istringstream in(v);
  T x{};
  if (!(in >> x) || !(in >> std::ws).eof()) {
    throw FormatError("[" + section + "] " + key + ": '" + v + "' is not a valid number");
  }
  return x;
}

std::vector<std::uint32_t> parse_u32_list(const std::string& section, const std::string& key,
                                          const std::string& v) {
  std::vector<std::uint32_t> out;
  for (const auto& t : split_list(v)) out.push_back(parse_number<std::uint32_t>(section, key, t));
  return out;
}

std::string join(const std::vector<std::uint32_t>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

std::string fmt(double v) {
  std::ostringstream o;
  o << std::setprecision(10) << v;
  return o.str();
}

const std::map<std::string, std::vector<std::string>>& stage_deps() {
  static const std::map<std::string, std::vector<std::string>> deps = {
      {"preprocess", {}},
      {"build-index", {"preprocess"}},
      {"import-index", {"preprocess"}},
      {"tune-dfloat", {"preprocess", "index"}},
      {"search", {"preprocess", "index"}},
      {"map", {"index"}},
      {"simulate", {"search", "map"}},
      {"sweep", {"simulate"}},
  };
  return deps;
}

const std::vector<std::string> kStageOrder = {"preprocess", "build-index", "import-index", "tune-dfloat",
                                              "search",     "map",         "simulate",     "sweep"};

struct ModeName {
  EvalMode mode;
  bool dfloat;
};

ModeName parse_mode_name(const std::string& s) {
  const auto plus = s.find('+');
  if (plus == std::string::npos) return {eval_mode_from_string(s), false};
  if (s.substr(plus + 1) != "dfloat") throw Error("unknown mode suffix in '" + s + "'");
  return {eval_mode_from_string(s.substr(0, plus)), true};
}

std::string file_stamp(const fs::path& p) {
  if (p.empty()) return "";
  std::error_code ec;
  const auto size = fs::file_size(p, ec);
  const auto time = fs::last_write_time(p, ec).time_since_epoch().count();
  return p.string() + "@" + std::to_string(size) + "@" + std::to_string(time);
}

/// One cache directory per stage, named by a hash of everything the stage reads.
class StageCache {
 public:
  StageCache(fs::path root, std::string stage, const std::string& key)
      : dir_(std::move(root) / (stage + "-" + hex64(fnv1a(key)))), key_(key) {}
  const fs::path& dir() const { return dir_; }
  std::string hash() const { return hex64(fnv1a(key_)); }
  bool ready() const { return fs::exists(dir_ / "complete"); }
  void begin() const { fs::create_directories(dir_); }
  void commit() const { write_file(dir_ / "complete", key_ + "\n"); }
  fs::path operator/(const std::string& name) const { return dir_ / name; }

 private:
  fs::path dir_;
  std::string key_;
};

struct Dataset {
  VectorDatabase db;
  Matrix queries;
  Matrix probes;
};

Dataset load_dataset(const DatasetSpec& d, std::uint64_t seed) {
  Dataset out;
  if (d.synthetic) {
    auto [db, extra] = make_synthetic_split(d.n, d.queries + d.probes, d.dim, d.decay,
                                            derive_seed(seed, "dataset"));
    db.metric = d.metric;
    out.db = std::move(db);
    out.queries = extra.slice_rows(0, d.queries);
    out.probes = extra.slice_rows(d.queries, d.queries + d.probes);
    return out;
  }
  if (d.base.empty() || d.query_file.empty()) throw Error("[dataset] needs base and queries paths");
  Matrix base = load_xvecs(d.base, xvecs_kind_from_path(d.base));
  if (d.max_base != 0 && base.rows() > d.max_base) base = base.slice_rows(0, d.max_base);
  out.db = VectorDatabase{std::move(base), d.metric};
  out.db.validate();
  Matrix q = load_xvecs(d.query_file, xvecs_kind_from_path(d.query_file));
  if (q.cols() != out.db.dim()) throw MismatchError("query dimension differs from the database");
  if (!d.train_file.empty()) {
    Matrix t = load_xvecs(d.train_file, xvecs_kind_from_path(d.train_file));
    out.probes = t.slice_rows(0, std::min(t.rows(), d.probes));
  } else if (q.rows() > d.probes) {
    out.probes = q.slice_rows(q.rows() - d.probes, q.rows());
    q = q.slice_rows(0, q.rows() - d.probes);
  }
  if (d.max_queries != 0 && q.rows() > d.max_queries) q = q.slice_rows(0, d.max_queries);
  out.queries = std::move(q);
  return out;
}

}  // namespace

IniFile IniFile::parse(const std::string& text) {
  IniFile ini;
  std::istringstream in(text);
  std::string line, current;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line = trim(line.substr(0, line.find('#')));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw FormatError("line " + std::to_string(line_no) + ": unterminated section header");
      current = trim(line.substr(1, line.size() - 2));
      ini.data_[current];
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError("line " + std::to_string(line_no) + ": expected key = value");
    if (current.empty()) throw FormatError("line " + std::to_string(line_no) + ": key outside any section");
    ini.data_[current][trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return ini;
}

IniFile IniFile::load(const fs::path& path) { return parse(read_file(path)); }

bool IniFile::has(const std::string& section, const std::string& key) const {
  auto it = data_.find(section);
  return it != data_.end() && it->second.count(key) != 0;
}

std::string IniFile::get(const std::string& section, const std::string& key, const std::string& fallback) const {
  auto it = data_.find(section);
  if (it == data_.end()) return fallback;
  auto kt = it->second.find(key);
  return kt == it->second.end() ? fallback : kt->second;
}

const std::map<std::string, std::string>& IniFile::section(const std::string& name) const {
  static const std::map<std::string, std::string> empty;
  auto it = data_.find(name);
  return it == data_.end() ? empty : it->second;
}

std::vector<std::string> IniFile::sections() const {
  std::vector<std::string> out;
  for (const auto& [k, v] : data_) out.push_back(k);
  return out;
}

void IniFile::set(const std::string& section, const std::string& key, const std::string& value) {
  data_[section][key] = value;
}

std::string IniFile::to_text() const {
  std::ostringstream out;
  for (const auto& [sec, kv] : data_) {
    out << "[" << sec << "]\n";
    for (const auto& [k, v] : kv) out << k << " = " << v << "\n";
  }
  return out.str();
}

ExperimentSpec ExperimentSpec::from_ini(const IniFile& ini) {
  static const std::map<std::string, std::set<std::string>> known = {
      {"experiment", {"name", "seed", "stages", "output"}},
      {"dataset", {"synthetic", "n", "dim", "decay", "queries", "probes", "metric", "base", "query_file",
                   "train", "groundtruth", "max_base", "max_queries"}},
      {"preprocess", {"target_prob", "samples"}},
      {"build-index", {"M", "ef_construction"}},
      {"import-index", {"path", "M"}},
      {"tune-dfloat", {"target_recall", "offset", "candidates", "width_ladder", "max_segments"}},
      {"search", {"modes", "ef_search", "k", "batch", "workers", "ef_grid"}},
      {"simulate", {"topology", "placement", "enable"}},
      {"topology", {}},
      {"sweep", {"ef_search", "lncd_kb", "batch", "M", "fixed_lncd_kb", "cache_enable"}},
  };
  for (const auto& sec : ini.sections()) {
    auto it = known.find(sec);
    if (it == known.end()) throw FormatError("unknown section [" + sec + "]");
    if (sec == "topology") continue;
    for (const auto& [k, v] : ini.section(sec)) {
      if (!it->second.count(k)) throw FormatError("unknown key '" + k + "' in [" + sec + "]");
    }
  }
  ExperimentSpec s;
  auto str = [&](const char* sec, const char* key, const std::string& fb) { return ini.get(sec, key, fb); };
  auto u64 = [&](const char* sec, const char* key, std::uint64_t fb) {
    return ini.has(sec, key) ? parse_number<std::uint64_t>(sec, key, ini.get(sec, key, "")) : fb;
  };
  auto u32 = [&](const char* sec, const char* key, std::uint32_t fb) {
    return static_cast<std::uint32_t>(u64(sec, key, fb));
  };
  auto dbl = [&](const char* sec, const char* key, double fb) {
    return ini.has(sec, key) ? parse_number<double>(sec, key, ini.get(sec, key, "")) : fb;
  };
  auto list = [&](const char* sec, const char* key, const std::vector<std::uint32_t>& fb) {
    return ini.has(sec, key) ? parse_u32_list(sec, key, ini.get(sec, key, "")) : fb;
  };

  s.name = str("experiment", "name", s.name);
  s.seed = u64("experiment", "seed", s.seed);
  s.stages = split_list(str("experiment", "stages", ""));
  s.output_dir = str("experiment", "output", s.output_dir.string());

  auto& d = s.dataset;
  d.synthetic = str("dataset", "synthetic", "true") == "true";
  d.n = u64("dataset", "n", d.n);
  d.dim = u64("dataset", "dim", d.dim);
  d.decay = dbl("dataset", "decay", d.decay);
  d.queries = u64("dataset", "queries", d.queries);
  d.probes = u64("dataset", "probes", d.probes);
  d.metric = metric_from_string(str("dataset", "metric", "l2"));
  d.base = str("dataset", "base", "");
  d.query_file = str("dataset", "query_file", "");
  d.train_file = str("dataset", "train", "");
  d.groundtruth = str("dataset", "groundtruth", "");
  d.max_base = u64("dataset", "max_base", 0);
  d.max_queries = u64("dataset", "max_queries", 0);

  s.target_prob = dbl("preprocess", "target_prob", s.target_prob);
  s.variance_samples = u64("preprocess", "samples", s.variance_samples);

  s.hnsw.M = u32("build-index", "M", s.hnsw.M);
  s.hnsw.ef_construction = u32("build-index", "ef_construction", s.hnsw.ef_construction);
  s.hnsw.seed = derive_seed(s.seed, "build-index");
  s.import_path = str("import-index", "path", "");

  const std::string target = str("tune-dfloat", "target_recall", "auto");
  s.tune_target = target == "auto" ? -1.0 : parse_number<double>("tune-dfloat", "target_recall", target);
  s.tune_offset = dbl("tune-dfloat", "offset", s.tune_offset);
  s.tune_candidates = u64("tune-dfloat", "candidates", s.tune_candidates);
  if (ini.has("tune-dfloat", "width_ladder")) {
    s.candidates.width_ladder.clear();
    for (auto w : list("tune-dfloat", "width_ladder", {})) s.candidates.width_ladder.push_back(static_cast<int>(w));
  }
  s.candidates.max_segments = u64("tune-dfloat", "max_segments", s.candidates.max_segments);

  if (ini.has("search", "modes")) s.modes = split_list(str("search", "modes", ""));
  for (const auto& m : s.modes) parse_mode_name(m);
  s.ef_search = u32("search", "ef_search", s.ef_search);
  s.k = u32("search", "k", s.k);
  s.batch = u32("search", "batch", s.batch);
  s.workers = u32("search", "workers", s.workers);
  s.ef_grid = list("search", "ef_grid", s.ef_grid);

  if (ini.has("simulate", "topology")) s.topology = load_topology(str("simulate", "topology", ""));
  if (ini.has_section("topology")) {
    std::string text = s.topology.to_text();
    for (const auto& [k, v] : ini.section("topology")) text += k + "=" + v + "\n";
    s.topology = NdpTopology::from_text(text);
  }
  s.placement = placement_from_string(str("simulate", "placement", to_string(s.placement)));
  if (ini.has("simulate", "enable")) s.system_switches = switches_from_string(str("simulate", "enable", ""));

  s.sweep_ef = list("sweep", "ef_search", s.sweep_ef);
  s.sweep_lncd_kb = list("sweep", "lncd_kb", s.sweep_lncd_kb);
  s.sweep_batch = list("sweep", "batch", s.sweep_batch);
  s.sweep_M = list("sweep", "M", s.sweep_M);
  s.sweep_fixed_lncd_kb = u32("sweep", "fixed_lncd_kb", s.sweep_fixed_lncd_kb);
  if (ini.has("sweep", "cache_enable")) s.cache_switches = switches_from_string(str("sweep", "cache_enable", ""));

  if (s.stages.empty()) throw FormatError("[experiment] stages is empty");
  s.check_stages();
  return s;
}

ExperimentSpec ExperimentSpec::load(const fs::path& path) {
  IniFile ini = IniFile::load(path);
  const fs::path base = path.parent_path();
  auto resolve = [&](const char* sec, const char* key) {
    if (!ini.has(sec, key)) return;
    fs::path p = ini.get(sec, key, "");
    if (p.is_relative()) ini.set(sec, key, (base / p).lexically_normal().string());
  };
  resolve("experiment", "output");
  resolve("dataset", "base");
  resolve("dataset", "query_file");
  resolve("dataset", "train");
  resolve("dataset", "groundtruth");
  resolve("import-index", "path");
  resolve("simulate", "topology");
  return from_ini(ini);
}

void ExperimentSpec::check_stages() const {
  std::set<std::string> listed(stages.begin(), stages.end());
  for (const auto& st : stages) {
    auto it = stage_deps().find(st);
    if (it == stage_deps().end()) throw Error("unknown stage '" + st + "'");
    for (const auto& dep : it->second) {
      const bool ok = dep == "index" ? (listed.count("build-index") || listed.count("import-index")) : listed.count(dep) != 0;
      if (!ok) {
        throw Error("stage '" + st + "' requires stage '" + (dep == "index" ? std::string("build-index") : dep) +
                    "', which is not in the stage list");
      }
    }
  }
  if (listed.count("build-index") && listed.count("import-index")) {
    throw Error("list either build-index or import-index, not both");
  }
  if (listed.count("search")) {
    for (const auto& m : modes) {
      if (parse_mode_name(m).dfloat && !listed.count("tune-dfloat")) {
        throw Error("stage 'search' mode '" + m + "' requires stage 'tune-dfloat'");
      }
    }
  }
  if (listed.count("import-index") && import_path.empty()) throw Error("stage 'import-index' needs [import-index] path");
}

std::vector<TrafficRow> compare_traffic(const std::vector<TrafficRun>& runs) {
  if (runs.empty()) throw Error("traffic comparison needs at least one run");
  double lo = runs.front().recall, hi = lo;
  for (const auto& r : runs) {
    lo = std::min(lo, r.recall);
    hi = std::max(hi, r.recall);
  }
  if (hi - lo > 0.01) {
    throw Error("recall differs by " + fmt(hi - lo) + " across runs; traffic comparison needs matched recall");
  }
  const double base = runs.front().bytes_per_query;
  if (!(base > 0.0)) throw Error("baseline run fetched no bytes");
  std::vector<TrafficRow> out;
  for (const auto& r : runs) out.push_back({r.label, r.recall, r.bytes_per_query, r.bytes_per_query / base});
  return out;
}

std::vector<std::pair<std::string, SimStats>> read_stats_csv(const fs::path& path) {
  std::istringstream in(read_file(path));
  std::string line;
  if (!std::getline(in, line)) throw FormatError("'" + path.string() + "' is empty");
  std::vector<std::string> header;
  {
    std::istringstream h(line);
    std::string c;
    while (std::getline(h, c, ',')) header.push_back(c);
  }
  std::vector<std::pair<std::string, SimStats>> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::istringstream r(line);
    std::string c;
    while (std::getline(r, c, ',')) cells.push_back(c);
    if (cells.size() != header.size()) throw FormatError("'" + path.string() + "' has a ragged row");
    SimStats s;
    std::map<std::string, std::uint64_t*> u = {
        {"queries", &s.queries}, {"batches", &s.batches}, {"rounds", &s.rounds}, {"hops", &s.hops},
        {"evaluations", &s.evaluations}, {"features", &s.features}, {"vector_bursts", &s.vector_bursts},
        {"nlt_bursts", &s.nlt_bursts}, {"nbrlist_bursts", &s.nbrlist_bursts},
        {"cross_channel_bursts", &s.cross_channel_bursts}, {"lnct_hits", &s.lnct_hits},
        {"lnct_misses", &s.lnct_misses}, {"lncd_hits", &s.lncd_hits}, {"lncd_misses", &s.lncd_misses},
        {"prefetch_issued", &s.prefetch_issued}, {"prefetch_hits", &s.prefetch_hits},
        {"total_cycles", &s.total_cycles}, {"retrieval_cycles", &s.retrieval_cycles},
        {"distance_cycles", &s.distance_cycles}, {"partial_cycles", &s.partial_cycles}};
    for (std::size_t i = 1; i < header.size(); ++i) {
      if (auto it = u.find(header[i]); it != u.end()) *it->second = parse_number<std::uint64_t>("csv", header[i], cells[i]);
      if (header[i] == "idle_ratio") s.idle_ratio = parse_number<double>("csv", header[i], cells[i]);
    }
    out.emplace_back(cells[0], std::move(s));
  }
  return out;
}

void write_report(const fs::path& bundle) {
  struct ModeRow {
    std::string label;
    double recall;
    std::uint32_t dim;
    fs::path layout, trace;
  };
  std::vector<ModeRow> rows;
  {
    std::istringstream in(read_file(bundle / "modes.csv"));
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      std::vector<std::string> c;
      std::istringstream r(line);
      std::string cell;
      while (std::getline(r, cell, ',')) c.push_back(cell);
      if (c.size() != 5) throw FormatError("modes.csv has a malformed row");
      rows.push_back({c[0], parse_number<double>("modes", "recall", c[1]),
                      parse_number<std::uint32_t>("modes", "dim", c[2]), bundle / c[3], bundle / c[4]});
    }
  }
  const auto stats = read_stats_csv(bundle / "mode_stats.csv");
  std::map<std::string, SimStats> by_label(stats.begin(), stats.end());

  std::ostringstream fu_csv, summary, traffic_csv, bd_csv;
  fu_csv << "mode,dims,cumulative_exit_fraction\n";
  summary << "mode                recall    mean_dims  p80_exit_dim  exit_fraction\n";
  std::vector<TrafficRun> traffic;
  NdpTopology line_topo;
  for (const auto& m : rows) {
    const auto cfg = load_dfloat_config(m.layout);
    const EvalPlan plan = make_eval_plan(EvalMode::Exact, Metric::L2, m.dim, nullptr, &cfg);
    const auto tf = load_traces(m.trace);
    const auto fu = feature_usage_histogram(tf.traces, plan);
    for (std::size_t i = 0; i < fu.dims.size(); ++i) fu_csv << m.label << ',' << fu.dims[i] << ',' << fmt(fu.cumulative[i]) << '\n';
    summary << std::left << std::setw(20) << m.label << std::setw(10) << fmt(m.recall).substr(0, 8) << std::setw(11)
            << fmt(fu.mean_dims).substr(0, 8) << std::setw(14) << fu.p80_exit_dim
            << fmt(static_cast<double>(fu.exits) / static_cast<double>(fu.evaluations)).substr(0, 8) << '\n';
    auto st = by_label.find(m.label);
    if (st == by_label.end()) throw FormatError("mode_stats.csv lacks a row for " + m.label);
    traffic.push_back({m.label, m.recall, st->second.bytes_per_query(line_topo.line_bytes())});
  }
  write_file(bundle / "feature_usage.csv", fu_csv.str());

  summary << '\n';
  traffic_csv << "mode,recall,bytes_per_query,normalized\n";
  if (!traffic.empty()) {
    try {
      for (const auto& t : compare_traffic(traffic)) {
        traffic_csv << t.label << ',' << fmt(t.recall) << ',' << fmt(t.bytes_per_query) << ',' << fmt(t.normalized) << '\n';
        summary << "traffic " << t.label << ": " << fmt(t.normalized).substr(0, 6) << " of " << traffic.front().label << '\n';
      }
    } catch (const Error& e) {
      summary << "traffic comparison skipped: " << e.what() << '\n';
    }
  }
  write_file(bundle / "traffic.csv", traffic_csv.str());

  bd_csv << "run,neighbor_retrieval_pct,distance_compute_pct,partial_result_processing_pct,total_cycles\n";
  auto add_bd = [&](const std::string& label, const SimStats& s) {
    const auto b = latency_breakdown(s);
    bd_csv << label << ',' << fmt(b.neighbor_retrieval) << ',' << fmt(b.distance_compute) << ','
           << fmt(b.partial_result_processing) << ',' << s.total_cycles << '\n';
  };
  for (const auto& [label, s] : stats) add_bd(label, s);
  if (fs::exists(bundle / "ablation.csv")) {
    summary << '\n' << "ablation (modeled cycles)\n";
    for (const auto& [label, s] : read_stats_csv(bundle / "ablation.csv")) {
      add_bd("ablation:" + label, s);
      summary << "  " << std::left << std::setw(12) << label << s.total_cycles << '\n';
    }
  }
  write_file(bundle / "latency_breakdown.csv", bd_csv.str());
  if (fs::exists(bundle / "dfloat_config.txt")) summary << "\nDfloat configuration\n" << read_file(bundle / "dfloat_config.txt");
  write_file(bundle / "summary.txt", summary.str());
}

std::string bundle_digest(const fs::path& bundle) {
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(bundle)) {
    if (!e.is_regular_file()) continue;
    const auto ext = e.path().extension();
    if (ext == ".csv" || e.path().filename() == "summary.txt") files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& f : files) {
    h = fnv1a(f.filename().string(), h);
    h = fnv1a(read_file(f), h);
  }
  return hex64(h);
}

ExperimentResult run_experiment(const ExperimentSpec& spec) {
  spec.check_stages();
  const std::set<std::string> listed(spec.stages.begin(), spec.stages.end());
  auto has = [&](const char* s) { return listed.count(s) != 0; };
  const fs::path out_dir = spec.output_dir;
  const fs::path cache_root = out_dir / "cache";
  fs::create_directories(cache_root);
  ExperimentResult result;
  result.bundle = out_dir;
  auto log = [&](const std::string& msg) { std::cerr << "[" << spec.name << "] " << msg << '\n'; };

  // Dataset and cache keys.
  const auto& d = spec.dataset;
  std::ostringstream dkey;
  dkey << "dataset|" << d.synthetic << '|' << d.n << '|' << d.dim << '|' << fmt(d.decay) << '|' << d.queries << '|'
       << d.probes << '|' << to_string(d.metric) << '|' << file_stamp(d.base) << '|' << file_stamp(d.query_file)
       << '|' << file_stamp(d.train_file) << '|' << d.max_base << '|' << d.max_queries << '|' << spec.seed;
  Dataset data = load_dataset(d, spec.seed);
  log("dataset " + std::to_string(data.db.size()) + " x " + std::to_string(data.db.dim()) + ", " +
      std::to_string(data.queries.rows()) + " queries");
  const auto dim = static_cast<std::uint32_t>(data.db.dim());

  // preprocess
  std::ostringstream pkey_s;
  pkey_s << dkey.str() << "|pca|" << fmt(spec.target_prob) << '|' << spec.variance_samples;
  StageCache pcache(cache_root, "preprocess", pkey_s.str());
  PcaModel model;
  if (pcache.ready()) {
    model = load_pca(pcache / "pca.bin");
    log("preprocess: cached " + pcache.hash());
  } else {
    PreprocessOptions po;
    po.target_prob = spec.target_prob;
    po.sample_pairs = spec.variance_samples;
    po.seed = derive_seed(spec.seed, "preprocess");
    auto pre = preprocess(data.db, data.probes, po);
    model = std::move(pre.model);
    pcache.begin();
    save_pca(pcache / "pca.bin", model);
    pcache.commit();
    log("preprocess: fitted");
  }
  const VectorDatabase tdb = transform_database(model, data.db);
  const Matrix tqueries = transform_rows(model, data.queries);
  QuerySet test;
  if (!d.groundtruth.empty() && d.metric == Metric::L2 && d.max_base == 0) {
    const auto gt = load_ivecs(d.groundtruth);
    if (gt.size() < tqueries.rows()) throw MismatchError("ground-truth file has fewer rows than queries");
    test.queries = tqueries;
    for (std::size_t q = 0; q < tqueries.rows(); ++q) {
      if (gt[q].size() < spec.k) throw MismatchError("ground-truth rows are shorter than k");
      std::vector<NodeId> row;
      for (std::size_t j = 0; j < spec.k; ++j) {
        if (gt[q][j] < 0 || static_cast<std::size_t>(gt[q][j]) >= tdb.size()) {
          throw MismatchError("ground-truth id out of range at query " + std::to_string(q));
        }
        row.push_back(static_cast<NodeId>(gt[q][j]));
      }
      test.ground_truth.push_back(std::move(row));
    }
  } else {
    test = make_query_set(tdb, tqueries, spec.k);
  }
  QuerySet tune_sample;
  if (data.probes.rows() > 0) {
    tune_sample = make_query_set(tdb, transform_rows(model, data.probes), spec.k);
  } else {
    tune_sample = test;
  }

  // index
  std::ostringstream ikey_s;
  GraphIndex index;
  if (has("import-index")) {
    ikey_s << "import|" << file_stamp(spec.import_path);
  } else {
    ikey_s << pkey_s.str() << "|hnsw|" << spec.hnsw.M << '|' << spec.hnsw.ef_construction << '|' << spec.hnsw.seed;
  }
  StageCache icache(cache_root, "index", ikey_s.str());
  if (icache.ready()) {
    index = import_index(icache / "index.bin");
    log("index: cached " + icache.hash());
  } else {
    if (has("import-index")) {
      const auto ext = spec.import_path.extension();
      index = ext == ".csv" ? import_edge_csv(spec.import_path, tdb.size(), dim) : import_index(spec.import_path);
    } else {
      index = build_hnsw(tdb, spec.hnsw);
    }
    icache.begin();
    save_index(icache / "index.bin", index);
    icache.commit();
    log("index: built");
  }
  if (index.size() != tdb.size()) throw MismatchError("index size differs from the database");
  const std::size_t reach = base_layer_reachable(index);
  if (reach != index.size()) log("index: base layer reaches " + std::to_string(reach) + " of " + std::to_string(index.size()));

  SearchParams sp;
  sp.ef_search = spec.ef_search;
  sp.k = spec.k;

  // tune-dfloat
  std::optional<DfloatConfig> dcfg;
  if (has("tune-dfloat")) {
    std::ostringstream tkey;
    tkey << pkey_s.str() << '|' << ikey_s.str() << "|tune|" << fmt(spec.tune_target) << '|' << fmt(spec.tune_offset)
         << '|' << spec.tune_candidates << '|' << spec.candidates.max_segments << '|';
    for (int w : spec.candidates.width_ladder) tkey << w << ',';
    tkey << '|' << spec.topology.burst_bits_per_device << '|' << spec.topology.devices_per_subchannel << '|'
         << spec.ef_search << '|' << spec.k << '|' << spec.batch;
    StageCache tcache(cache_root, "tune-dfloat", tkey.str());
    if (tcache.ready()) {
      dcfg = load_dfloat_config(tcache / "dfloat.txt");
      result.tune_target = parse_number<double>("cache", "target", trim(read_file(tcache / "target.txt")));
      log("tune-dfloat: cached " + tcache.hash());
    } else {
      TuneOptions to;
      to.burst_bits = spec.topology.burst_bits_per_device;
      to.devices = spec.topology.devices_per_subchannel;
      to.search = sp;
      to.batch = spec.batch;
      to.workers = spec.workers;
      to.max_candidates = spec.tune_candidates;
      to.candidates = spec.candidates;
      to.candidates.exponent_policy = make_data_exponent_policy(tdb.vectors);
      if (spec.tune_target < 0.0) {
        const auto raw = DfloatConfig::full_precision(dim, to.burst_bits, to.devices);
        to.target_recall = dfloat_recall(index, tdb.vectors, model, tune_sample, raw, to) - spec.tune_offset;
      } else {
        to.target_recall = spec.tune_target;
      }
      auto tr = search_config(index, tdb.vectors, model, tune_sample, to);
      for (const auto& w : tr.warnings) log("tune-dfloat: " + w);
      dcfg = tr.config;
      result.tune_target = to.target_recall;
      result.tuning = std::move(tr);
      tcache.begin();
      save_dfloat_config(tcache / "dfloat.txt", *dcfg);
      write_file(tcache / "target.txt", fmt(to.target_recall) + "\n");
      std::ostringstream probes;
      probes << "n_burst,candidates,best_recall,feasible\n";
      for (const auto& p : result.tuning->probes) {
        probes << p.n_burst << ',' << p.candidates << ',' << fmt(p.best_recall) << ',' << p.feasible << '\n';
      }
      write_file(tcache / "probes.csv", probes.str());
      tcache.commit();
      log("tune-dfloat: " + std::to_string(dcfg->total_bursts()) + " bursts per vector");
    }
    write_file(out_dir / "dfloat_config.txt", dcfg->to_text());
    fs::copy_file(tcache / "probes.csv", out_dir / "dfloat_search.csv", fs::copy_options::overwrite_existing);
    result.files.push_back("dfloat_search.csv");
  }

  const DfloatConfig raw_layout =
      DfloatConfig::full_precision(dim, spec.topology.burst_bits_per_device, spec.topology.devices_per_subchannel);
  std::optional<Matrix> emulated;
  if (dcfg) emulated = mask_emulate_rows(tdb.vectors, *dcfg);

  struct ModeData {
    std::string label;
    ModeName name;
    EvalPlan plan;
    const Matrix* vectors;
    std::vector<SearchTrace> traces;
    double recall;
  };
  std::vector<ModeData> mode_data;
  std::map<std::string, NdpLayout> layouts;
  auto layout_for = [&](const DfloatConfig& cfg, const std::string& key) -> const NdpLayout& {
    auto it = layouts.find(key);
    if (it != layouts.end()) return it->second;
    return layouts.emplace(key, map_database(index, cfg, spec.topology, spec.placement,
                                             derive_seed(spec.seed, "map"))).first->second;
  };

  // search
  if (has("search")) {
    std::ostringstream modes_csv, grid_csv;
    modes_csv << "mode,recall,dim,layout,trace\n";
    grid_csv << "mode,ef_search,recall,mean_dims,p80_exit_dim\n";
    fs::create_directories(out_dir / "layouts");
    for (const auto& label : spec.modes) {
      const ModeName mn = parse_mode_name(label);
      const DfloatConfig& cfg = mn.dfloat ? *dcfg : raw_layout;
      ModeData md{label, mn, make_eval_plan(mn.mode, d.metric, dim, &model, &cfg),
                  mn.dfloat ? &*emulated : &tdb.vectors, {}, 0.0};
      std::ostringstream skey;
      skey << pkey_s.str() << '|' << ikey_s.str() << "|search|" << label << '|' << cfg.to_text() << '|'
           << spec.ef_search << '|' << spec.k << '|' << spec.batch << '|' << join(spec.ef_grid);
      StageCache scache(cache_root, "search-" + label, skey.str());
      const SearchContext ctx{&index, md.vectors, &md.plan};
      if (scache.ready()) {
        md.traces = load_traces(scache / "traces.bin").traces;
        md.recall = parse_number<double>("cache", "recall", trim(read_file(scache / "recall.txt")));
        log("search " + label + ": cached " + scache.hash());
      } else {
        scache.begin();
        auto res = batch_search(ctx, test.queries, spec.batch, sp, spec.workers);
        md.recall = mean_recall(res.ids(), test);
        md.traces = std::move(res.traces);
        save_traces(scache / "traces.bin", md.traces, dim, spec.batch);
        write_file(scache / "recall.txt", fmt(md.recall) + "\n");
        std::ostringstream grid;
        for (auto ef : spec.ef_grid) {
          SearchParams g = sp;
          g.ef_search = std::max(ef, spec.k);
          auto r = batch_search(ctx, test.queries, spec.batch, g, spec.workers);
          const auto fu = feature_usage_histogram(r.traces, md.plan);
          grid << label << ',' << g.ef_search << ',' << fmt(mean_recall(r.ids(), test)) << ',' << fmt(fu.mean_dims)
               << ',' << fu.p80_exit_dim << '\n';
        }
        write_file(scache / "grid.csv", grid.str());
        scache.commit();
        log("search " + label + ": recall " + fmt(md.recall));
      }
      grid_csv << read_file(scache / "grid.csv");
      const std::string layout_name = "layouts/" + (mn.dfloat ? std::string("dfloat") : std::string("raw")) + ".txt";
      save_dfloat_config(out_dir / layout_name, cfg);
      modes_csv << label << ',' << fmt(md.recall) << ',' << dim << ',' << layout_name << ','
                << fs::relative(scache / "traces.bin", out_dir).string() << '\n';
      ModeRun run;
      run.label = label;
      run.mode = mn.mode;
      run.dfloat = mn.dfloat;
      run.recall = md.recall;
      run.usage = feature_usage_histogram(md.traces, md.plan);
      result.modes.push_back(std::move(run));
      mode_data.push_back(std::move(md));
    }
    write_file(out_dir / "modes.csv", modes_csv.str());
    write_file(out_dir / "recall_vs_ef.csv", grid_csv.str());
    result.files.push_back("recall_vs_ef.csv");
  }

  // map + simulate
  if (has("map")) {
    save_layout(out_dir / "layout_raw.bin", layout_for(raw_layout, "raw"));
    if (dcfg) save_layout(out_dir / "layout_dfloat.bin", layout_for(*dcfg, "dfloat"));
  }
  auto find_mode = [&](const std::string& label) -> const ModeData* {
    for (const auto& m : mode_data) {
      if (m.label == label) return &m;
    }
    return nullptr;
  };
  if (has("simulate")) {
    std::ostringstream mode_stats;
    write_stats_csv_header(mode_stats);
    for (std::size_t i = 0; i < mode_data.size(); ++i) {
      const auto& m = mode_data[i];
      const auto& cfg = m.plan.layout;
      const auto& layout = layout_for(cfg, m.name.dfloat ? "dfloat" : "raw");
      result.modes[i].stats = simulate(m.traces, layout, cfg, spec.topology, spec.system_switches);
      write_stats_csv_row(mode_stats, m.label, result.modes[i].stats);
    }
    write_file(out_dir / "mode_stats.csv", mode_stats.str());
    result.files.push_back("mode_stats.csv");

    const ModeData* base = find_mode("exact");
    const ModeData* spca = find_mode("fee-spca");
    const ModeData* spca_d = find_mode("fee-spca+dfloat");
    if (base && spca && spca_d) {
      struct Step {
        const char* label;
        const ModeData* mode;
        SimSwitches sw;
      };
      const Step steps[] = {{"baseline", base, {false, false, false}},
                            {"+fee-spca", spca, {false, false, false}},
                            {"+dfloat", spca_d, {false, false, false}},
                            {"+dam", spca_d, {true, false, false}},
                            {"+lnc", spca_d, {true, true, false}},
                            {"+prefetch", spca_d, {true, true, true}}};
      std::ostringstream abl;
      write_stats_csv_header(abl);
      for (const auto& s : steps) {
        const auto& cfg = s.mode->plan.layout;
        const auto& layout = layout_for(cfg, s.mode->name.dfloat ? "dfloat" : "raw");
        SimStats st = simulate(s.mode->traces, layout, cfg, spec.topology, s.sw);
        write_stats_csv_row(abl, s.label, st);
        result.ablation.emplace_back(s.label, std::move(st));
      }
      write_file(out_dir / "ablation.csv", abl.str());
      result.files.push_back("ablation.csv");
    } else {
      log("simulate: ablation needs modes exact, fee-spca and fee-spca+dfloat; skipped");
    }
  }

  // sweep
  if (has("sweep") && !mode_data.empty()) {
    const ModeData* m = find_mode("fee-spca+dfloat");
    if (!m) m = find_mode("fee-spca");
    if (!m) m = &mode_data.back();
    SweepSetup setup;
    setup.build_vectors = &tdb.vectors;
    setup.metric = d.metric;
    setup.search_vectors = m->vectors;
    setup.queries = &test;
    setup.plan = &m->plan;
    setup.index = &index;
    setup.hnsw = spec.hnsw;
    setup.search = sp;
    setup.batch = spec.batch;
    setup.workers = spec.workers;
    setup.topology = spec.topology;
    setup.topology.lncd_bytes = spec.sweep_fixed_lncd_kb * 1024;
    setup.placement = spec.placement;
    setup.placement_seed = derive_seed(spec.seed, "map");
    auto run_sweep = [&](SweepParam p, const std::vector<std::uint32_t>& values, const SimSwitches& sw) {
      if (values.empty()) return;
      SweepSetup s = setup;
      s.switches = sw;
      auto rows = sweep(p, values, s);
      std::ostringstream csv;
      write_sweep_csv(csv, p, rows);
      const std::string name = std::string("sweep_") + to_string(p) + ".csv";
      write_file(out_dir / name, csv.str());
      result.files.push_back(name);
      result.sweeps[to_string(p)] = std::move(rows);
    };
    run_sweep(SweepParam::LncdCapacity, spec.sweep_lncd_kb, spec.cache_switches);
    run_sweep(SweepParam::EfSearch, spec.sweep_ef, spec.cache_switches);
    run_sweep(SweepParam::Batch, spec.sweep_batch, spec.system_switches);
    run_sweep(SweepParam::M, spec.sweep_M, spec.system_switches);

    for (const auto& run : result.modes) {
      if (run.label != m->label) continue;
      std::ostringstream pf;
      pf << "base_hop,prefetch_issued,prefetch_hits,hit_rate\n";
      for (std::size_t h = 0; h < run.stats.prefetch_issued_by_hop.size(); ++h) {
        const auto iss = run.stats.prefetch_issued_by_hop[h];
        const auto hit = run.stats.prefetch_hits_by_hop[h];
        pf << h << ',' << iss << ',' << hit << ',' << fmt(iss ? static_cast<double>(hit) / static_cast<double>(iss) : 0.0) << '\n';
      }
      write_file(out_dir / "prefetch_by_hop.csv", pf.str());
      result.files.push_back("prefetch_by_hop.csv");
    }
  }

  if (fs::exists(out_dir / "modes.csv") && fs::exists(out_dir / "mode_stats.csv")) {
    write_report(out_dir);
    for (const char* f : {"feature_usage.csv", "traffic.csv", "latency_breakdown.csv", "summary.txt"}) {
      result.files.push_back(f);
    }
  }
  std::ostringstream manifest;
  manifest << "digest " << bundle_digest(out_dir) << '\n';
  write_file(out_dir / "manifest.txt", manifest.str());
  return result;
}

}  // namespace ndpann
