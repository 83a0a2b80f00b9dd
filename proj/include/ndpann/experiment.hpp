#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "ndpann/dfloat_tune.hpp"
#include "ndpann/ndp_sim.hpp"
#include "ndpann/search.hpp"
#include "ndpann/sweep.hpp"

namespace ndpann {

/// `[section]` headers followed by `key = value` lines; `#` starts a comment.
class IniFile {
 public:
  static IniFile parse(const std::string& text);
  static IniFile load(const std::filesystem::path& path);

  bool has_section(const std::string& section) const { return data_.count(section) != 0; }
  bool has(const std::string& section, const std::string& key) const;
  std::string get(const std::string& section, const std::string& key, const std::string& fallback) const;
  const std::map<std::string, std::string>& section(const std::string& name) const;
  std::vector<std::string> sections() const;
  void set(const std::string& section, const std::string& key, const std::string& value);
  std::string to_text() const;

 private:
  std::map<std::string, std::map<std::string, std::string>> data_;
};

struct DatasetSpec {
  bool synthetic = true;
  std::size_t n = 10000;
  std::size_t dim = 128;
  double decay = 0.97;
  std::size_t queries = 1000;
  std::size_t probes = 1000;  ///< held-out rows for variance estimation and Dfloat tuning
  Metric metric = Metric::L2;
  std::filesystem::path base, query_file, train_file, groundtruth;
  std::size_t max_base = 0;     ///< 0 keeps every row
  std::size_t max_queries = 0;
};

struct ExperimentSpec {
  std::string name = "experiment";
  std::uint64_t seed = 1;
  std::vector<std::string> stages;
  std::filesystem::path output_dir = "bundle";

  DatasetSpec dataset;

  double target_prob = 0.9;
  std::size_t variance_samples = 10000;

  HnswParams hnsw;
  std::filesystem::path import_path;  ///< index file or node,layer,neighbor CSV when importing

  /// Negative: recall of fee-spca on raw data over the tuning sample minus `tune_offset`.
  double tune_target = -1.0;
  double tune_offset = 0.01;
  std::size_t tune_candidates = 8;
  CandidateOptions candidates;

  std::vector<std::string> modes = {"exact", "fee-partial", "fee-spca", "fee-spca+dfloat"};
  std::uint32_t ef_search = 100;
  std::uint32_t k = 10;
  std::uint32_t batch = 16;
  std::uint32_t workers = 1;
  std::vector<std::uint32_t> ef_grid = {10, 25, 50, 100, 200};

  NdpTopology topology;
  PlacementPolicy placement = PlacementPolicy::Shuffled;
  SimSwitches system_switches{true, true, true};

  std::vector<std::uint32_t> sweep_ef = {10, 25, 50, 100, 200};
  std::vector<std::uint32_t> sweep_lncd_kb = {32, 64, 128, 256};
  std::vector<std::uint32_t> sweep_batch = {1, 4, 16, 48};
  std::vector<std::uint32_t> sweep_M;
  /// LNC-D capacity held fixed while efSearch, batch or M vary.
  std::uint32_t sweep_fixed_lncd_kb = 32;
  /// Switches for the LNC-D capacity and efSearch sweeps.
  SimSwitches cache_switches{true, true, false};

  static ExperimentSpec from_ini(const IniFile& ini);
  static ExperimentSpec load(const std::filesystem::path& path);
  /// Throws naming the stage whose prerequisite stage is not listed.
  void check_stages() const;
};

struct ModeRun {
  std::string label;
  EvalMode mode = EvalMode::Exact;
  bool dfloat = false;
  double recall = 0.0;
  FeatureUsage usage;
  SimStats stats;  ///< under the system switches
};

struct ExperimentResult {
  std::filesystem::path bundle;
  std::vector<ModeRun> modes;
  std::vector<std::pair<std::string, SimStats>> ablation;
  std::optional<TuneResult> tuning;
  double tune_target = 0.0;
  std::map<std::string, std::vector<SweepRow>> sweeps;
  std::vector<std::string> files;  ///< bundle-relative outputs
};

/// Runs the listed stages in dependency order, reusing stage outputs cached
/// under `<output_dir>/cache` by content hash, and writes the CSV bundle.
ExperimentResult run_experiment(const ExperimentSpec& spec);

struct TrafficRun {
  std::string label;
  double recall = 0.0;
  double bytes_per_query = 0.0;
};

struct TrafficRow {
  std::string label;
  double recall = 0.0;
  double bytes_per_query = 0.0;
  double normalized = 0.0;
};

/// Normalizes to the first run. Throws when recalls spread by more than 0.01.
std::vector<TrafficRow> compare_traffic(const std::vector<TrafficRun>& runs);

/// Re-derives feature_usage.csv, traffic.csv, latency_breakdown.csv and
/// summary.txt from the stored traces and counter tables of a bundle.
void write_report(const std::filesystem::path& bundle);

/// Reads a table written by write_stats_csv_header / write_stats_csv_row.
std::vector<std::pair<std::string, SimStats>> read_stats_csv(const std::filesystem::path& path);

/// 64-bit FNV-1a over the bundle's CSV and summary files, in name order.
std::string bundle_digest(const std::filesystem::path& bundle);

}  // namespace ndpann
