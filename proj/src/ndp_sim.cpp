#include "ndpann/ndp_sim.hpp"

#include <algorithm>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <unordered_map>

#include "binary_io.hpp"

namespace ndpann {

namespace {

constexpr std::uint32_t kLayoutMagic = 0x544c444e;  // "NDLT"
constexpr std::uint32_t kLayoutVersion = 1;
constexpr std::uint32_t kMaxRegionBytes = 1u << 24;

struct TopoField {
  const char* key;
  std::function<std::string(const NdpTopology&)> get;
  std::function<void(NdpTopology&, const std::string&)> set;
};

template <typename T>
TopoField field(const char* key, T NdpTopology::*member) {
  return {key,
          [member](const NdpTopology& t) {
            std::ostringstream o;
            o << t.*member;
            return o.str();
          },
          [member, key](NdpTopology& t, const std::string& v) {
            std::istringstream in(v);
            T x{};
            if (!(in >> x) || !in.eof()) throw FormatError(std::string("bad value for ") + key + ": '" + v + "'");
            t.*member = x;
          }};
}

const std::vector<TopoField>& topo_fields() {
  static const std::vector<TopoField> fields = {
      field("channels", &NdpTopology::channels),
      field("dimms_per_channel", &NdpTopology::dimms_per_channel),
      field("ranks_per_dimm", &NdpTopology::ranks_per_dimm),
      field("subchannels_per_rank", &NdpTopology::subchannels_per_rank),
      field("devices_per_subchannel", &NdpTopology::devices_per_subchannel),
      field("burst_bits_per_device", &NdpTopology::burst_bits_per_device),
      field("clock_ghz", &NdpTopology::clock_ghz),
      field("t_burst", &NdpTopology::t_burst),
      field("t_cross", &NdpTopology::t_cross),
      field("t_feature", &NdpTopology::t_feature),
      field("lanes", &NdpTopology::lanes),
      field("t_merge", &NdpTopology::t_merge),
      field("t_hop_launch", &NdpTopology::t_hop_launch),
      field("t_host_lookup", &NdpTopology::t_host_lookup),
      field("t_cache_hit", &NdpTopology::t_cache_hit),
      field("lnct_bytes", &NdpTopology::lnct_bytes),
      field("lncd_bytes", &NdpTopology::lncd_bytes),
      field("lncd_ways", &NdpTopology::lncd_ways),
  };
  return fields;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

void NdpTopology::validate() const {
  if (channels == 0 || dimms_per_channel == 0 || ranks_per_dimm == 0 || subchannels_per_rank == 0 ||
      devices_per_subchannel == 0) {
    throw Error("topology counts must all be at least 1");
  }
  if (burst_bits_per_device == 0 || burst_bits_per_device % 32 != 0) {
    throw Error("burst bits per device must be a positive multiple of 32");
  }
  if (line_bytes() % 4 != 0) throw Error("sub-channel access must hold whole 4-byte entries");
  if (lanes == 0) throw Error("lane count must be positive");
  if (!(clock_ghz > 0.0)) throw Error("clock must be positive");
  if (lnct_bytes < line_bytes()) throw Error("LNC-T smaller than one line");
  if (lncd_ways == 0 || lncd_bytes < line_bytes() * lncd_ways) throw Error("LNC-D smaller than one set");
}

std::string NdpTopology::to_text() const {
  std::ostringstream out;
  for (const auto& f : topo_fields()) out << f.key << "=" << f.get(*this) << "\n";
  return out.str();
}

NdpTopology NdpTopology::from_text(const std::string& text) {
  NdpTopology t;
  std::istringstream in(text);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line = trim(line.substr(0, line.find('#')));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw FormatError("topology line " + std::to_string(line_no) + ": expected key=value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const auto& fields = topo_fields();
    auto it = std::find_if(fields.begin(), fields.end(), [&](const TopoField& f) { return key == f.key; });
    if (it == fields.end()) throw FormatError("unknown topology key '" + key + "'");
    it->set(t, value);
  }
  t.validate();
  return t;
}

NdpTopology load_topology(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return NdpTopology::from_text(ss.str());
}

void save_topology(const std::filesystem::path& path, const NdpTopology& topo) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out << topo.to_text();
}

const char* to_string(PlacementPolicy p) {
  switch (p) {
    case PlacementPolicy::Shuffled: return "shuffled";
    case PlacementPolicy::RoundRobin: return "round-robin";
    case PlacementPolicy::Blocked: return "blocked";
  }
  return "?";
}

PlacementPolicy placement_from_string(const std::string& s) {
  if (s == "shuffled") return PlacementPolicy::Shuffled;
  if (s == "round-robin") return PlacementPolicy::RoundRobin;
  if (s == "blocked") return PlacementPolicy::Blocked;
  throw Error("unknown placement policy '" + s + "'");
}

std::span<const NodeId> NdpLayout::partition(NodeId node, std::uint32_t s) const {
  const auto& sc = subchannels.at(s);
  if (node >= sc.nlt.size()) throw MismatchError("node " + std::to_string(node) + " is not in the layout");
  const auto& e = sc.nlt[node];
  return std::span<const NodeId>(sc.region).subspan(e.start / 4, e.length);
}

NdpLayout map_database_with_homes(const GraphIndex& index, const DfloatConfig& vector_layout,
                                  std::uint32_t subchannels, std::vector<std::uint32_t> home) {
  const std::size_t n = index.size();
  if (home.size() != n) throw MismatchError("home assignment size differs from the index");
  if (subchannels == 0) throw Error("need at least one sub-channel");
  NdpLayout layout;
  layout.home = std::move(home);
  layout.bursts_per_vector = vector_layout.steps();
  layout.subchannels.resize(subchannels);
  for (auto& sc : layout.subchannels) sc.nlt.resize(n);
  for (NodeId x = 0; x < n; ++x) {
    if (layout.home[x] >= subchannels) throw Error("node " + std::to_string(x) + " homed outside the topology");
    ++layout.subchannels[layout.home[x]].vectors;
  }
  std::vector<std::vector<NodeId>> parts(subchannels);
  for (NodeId x = 0; x < n; ++x) {
    for (auto& p : parts) p.clear();
    for (NodeId e : index.neighbors(x, 0)) parts[layout.home[e]].push_back(e);
    for (std::uint32_t s = 0; s < subchannels; ++s) {
      auto& sc = layout.subchannels[s];
      if (parts[s].size() > 255) {
        throw Error("node " + std::to_string(x) + " has " + std::to_string(parts[s].size()) +
                    " neighbors in sub-channel " + std::to_string(s) + ", above the 255 NLT limit");
      }
      const std::size_t start = sc.region.size() * 4;
      if (start + parts[s].size() * 4 > kMaxRegionBytes) {
        throw Error("neighbor region of sub-channel " + std::to_string(s) + " exceeds 16 MB");
      }
      sc.nlt[x] = {static_cast<std::uint32_t>(start), static_cast<std::uint8_t>(parts[s].size())};
      sc.region.insert(sc.region.end(), parts[s].begin(), parts[s].end());
    }
  }
  return layout;
}

NdpLayout map_database(const GraphIndex& index, const DfloatConfig& vector_layout,
                       const NdpTopology& topo, PlacementPolicy policy, std::uint64_t seed) {
  topo.validate();
  const std::size_t n = index.size();
  const std::uint32_t s = topo.subchannels();
  std::vector<std::uint32_t> home(n);
  switch (policy) {
    case PlacementPolicy::RoundRobin:
      for (NodeId x = 0; x < n; ++x) home[x] = x % s;
      break;
    case PlacementPolicy::Blocked:
      for (NodeId x = 0; x < n; ++x) home[x] = static_cast<std::uint32_t>(std::uint64_t{x} * s / n);
      break;
    case PlacementPolicy::Shuffled: {
      const auto order = shuffled_ids(n, seed);
      for (std::size_t i = 0; i < n; ++i) home[order[i]] = static_cast<std::uint32_t>(i % s);
      break;
    }
  }
  return map_database_with_homes(index, vector_layout, s, std::move(home));
}

void save_layout(const std::filesystem::path& path, const NdpLayout& layout) {
  io::Writer w(path);
  w.put(kLayoutMagic);
  w.put(kLayoutVersion);
  w.put(static_cast<std::uint32_t>(layout.subchannels.size()));
  w.put(static_cast<std::uint32_t>(layout.size()));
  w.put(layout.bursts_per_vector);
  w.put_array(layout.home);
  for (const auto& sc : layout.subchannels) {
    w.put(sc.vectors);
    std::vector<std::uint32_t> packed(sc.nlt.size());
    for (std::size_t i = 0; i < sc.nlt.size(); ++i) packed[i] = (sc.nlt[i].start << 8) | sc.nlt[i].length;
    w.put_array(packed);
    w.put(static_cast<std::uint32_t>(sc.region.size()));
    w.put_array(sc.region);
  }
  w.finish();
}

NdpLayout load_layout(const std::filesystem::path& path) {
  io::Reader r(path);
  if (r.get<std::uint32_t>() != kLayoutMagic) throw FormatError("'" + path.string() + "' is not a layout file");
  const auto version = r.get<std::uint32_t>();
  if (version != kLayoutVersion) throw FormatError("unsupported layout version " + std::to_string(version));
  NdpLayout layout;
  const auto subchannels = r.get<std::uint32_t>();
  const auto n = r.get<std::uint32_t>();
  layout.bursts_per_vector = r.get<std::uint32_t>();
  layout.home = r.get_array<std::uint32_t>(n);
  for (NodeId x = 0; x < n; ++x) {
    if (layout.home[x] >= subchannels) throw FormatError("node " + std::to_string(x) + " homed outside the layout");
  }
  layout.subchannels.resize(subchannels);
  for (auto& sc : layout.subchannels) {
    sc.vectors = r.get<std::uint32_t>();
    const auto packed = r.get_array<std::uint32_t>(n);
    sc.nlt.resize(n);
    for (std::size_t i = 0; i < n; ++i) sc.nlt[i] = {packed[i] >> 8, static_cast<std::uint8_t>(packed[i] & 0xff)};
    sc.region = r.get_array<NodeId>(r.get<std::uint32_t>());
    for (const auto& e : sc.nlt) {
      if (e.start % 4 != 0 || e.start / 4 + e.length > sc.region.size()) {
        throw FormatError("NLT entry points outside its neighbor region");
      }
    }
  }
  if (!r.at_end()) throw FormatError("trailing bytes in layout file");
  return layout;
}

LruCache::LruCache(std::uint32_t sets, std::uint32_t ways)
    : sets_(sets), ways_(ways), slots_(static_cast<std::size_t>(sets) * ways) {
  if (sets == 0 || ways == 0) throw Error("cache needs at least one set and one way");
}

LruCache::Slot* LruCache::find(std::uint64_t key) {
  Slot* base = slots_.data() + (key % sets_) * ways_;
  for (std::uint32_t w = 0; w < ways_; ++w) {
    if (base[w].valid && base[w].key == key) return base + w;
  }
  return nullptr;
}

bool LruCache::contains(std::uint64_t key) const {
  return const_cast<LruCache*>(this)->find(key) != nullptr;
}

void LruCache::install(std::uint64_t key) {
  Slot* base = slots_.data() + (key % sets_) * ways_;
  Slot* victim = base;
  for (std::uint32_t w = 0; w < ways_; ++w) {
    if (!base[w].valid) {
      victim = base + w;
      break;
    }
    if (base[w].stamp < victim->stamp) victim = base + w;
  }
  *victim = {key, ++clock_, true};
}

bool LruCache::access(std::uint64_t key) {
  if (Slot* s = find(key)) {
    s->stamp = ++clock_;
    return true;
  }
  install(key);
  return false;
}

bool LruCache::fill(std::uint64_t key) {
  if (Slot* s = find(key)) {
    s->stamp = ++clock_;
    return true;
  }
  install(key);
  return false;
}

SimSwitches switches_from_string(const std::string& s) {
  SimSwitches w{false, false, false};
  if (s.empty() || s == "none") return w;
  std::istringstream in(s);
  std::string tok;
  while (std::getline(in, tok, ',')) {
    tok = trim(tok);
    if (tok == "dam") w.dam = true;
    else if (tok == "lnc") w.lnc = true;
    else if (tok == "prefetch") w.prefetch = true;
    else if (tok == "all") w = {true, true, true};
    else throw Error("unknown optimization switch '" + tok + "'");
  }
  return w;
}

std::string to_string(const SimSwitches& s) {
  std::string out;
  auto add = [&](bool on, const char* name) {
    if (!on) return;
    if (!out.empty()) out += ',';
    out += name;
  };
  add(s.dam, "dam");
  add(s.lnc, "lnc");
  add(s.prefetch, "prefetch");
  return out.empty() ? "none" : out;
}

double SimStats::qps() const {
  if (total_cycles == 0) return 0.0;
  return static_cast<double>(queries) * clock_ghz * 1e9 / static_cast<double>(total_cycles);
}

double SimStats::lncd_hit_rate() const {
  const auto t = lncd_hits + lncd_misses;
  return t == 0 ? 0.0 : static_cast<double>(lncd_hits) / static_cast<double>(t);
}

double SimStats::lnct_hit_rate() const {
  const auto t = lnct_hits + lnct_misses;
  return t == 0 ? 0.0 : static_cast<double>(lnct_hits) / static_cast<double>(t);
}

double SimStats::prefetch_hit_rate() const {
  return prefetch_issued == 0 ? 0.0 : static_cast<double>(prefetch_hits) / static_cast<double>(prefetch_issued);
}

double SimStats::bytes_per_query(std::uint32_t line_bytes) const {
  if (queries == 0) return 0.0;
  return static_cast<double>((vector_bursts + nlt_bursts + nbrlist_bursts) * line_bytes) /
         static_cast<double>(queries);
}

namespace {

class Simulator {
 public:
  Simulator(const NdpLayout& layout, const DfloatConfig& vl, const NdpTopology& topo, const SimSwitches& sw)
      : layout_(layout), topo_(topo), sw_(sw), bounds_(vl.step_boundaries()), s_count_(static_cast<std::uint32_t>(layout.subchannels.size())) {
    topo.validate();
    if (s_count_ != topo.subchannels()) {
      throw MismatchError("layout has " + std::to_string(s_count_) + " sub-channels, topology has " +
                          std::to_string(topo.subchannels()));
    }
    const std::uint32_t line = topo.line_bytes();
    entries_per_line_ = line / 4;
    for (std::uint32_t s = 0; s < s_count_; ++s) {
      lnct_.emplace_back(1, topo.lnct_bytes / line);
      lncd_.emplace_back(topo.lncd_bytes / line / topo.lncd_ways, topo.lncd_ways);
    }
    // Unpartitioned lists, each stored whole where its node is homed.
    const std::size_t n = layout.size();
    full_start_.resize(n);
    full_len_.resize(n, 0);
    std::vector<std::uint64_t> cursor(s_count_, 0);
    for (NodeId x = 0; x < n; ++x) {
      std::uint32_t len = 0;
      for (std::uint32_t s = 0; s < s_count_; ++s) len += layout.subchannels[s].nlt[x].length;
      full_len_[x] = len;
      full_start_[x] = cursor[layout.home[x]];
      cursor[layout.home[x]] += std::uint64_t{len} * 4;
    }
    stats_.busy_cycles.assign(s_count_, 0);
    stats_.clock_ghz = topo.clock_ghz;
  }

  SimStats run(const std::vector<SearchTrace>& traces) {
    std::map<std::uint32_t, std::vector<const SearchTrace*>> batches;
    for (const auto& t : traces) {
      check_node(t.entry);
      batches[t.batch].push_back(&t);
    }
    double idle_sum = 0.0;
    for (const auto& [id, members] : batches) idle_sum += run_batch(members);
    stats_.batches = batches.size();
    stats_.queries = traces.size();
    stats_.idle_ratio = batches.empty() ? 0.0 : idle_sum / static_cast<double>(batches.size());
    return stats_;
  }

 private:
  struct Work {
    std::uint64_t retrieval = 0;
    std::uint64_t distance = 0;
    std::uint64_t total() const { return retrieval + distance; }
  };

  void check_node(NodeId x) const {
    if (x >= layout_.size()) throw MismatchError("trace references node " + std::to_string(x) + " absent from the layout");
  }

  std::uint64_t nlt_access(std::uint32_t s, NodeId x) {
    const std::uint64_t key = x / entries_per_line_;
    if (sw_.lnc) {
      if (lnct_[s].access(key)) {
        ++stats_.lnct_hits;
        return topo_.t_cache_hit;
      }
      ++stats_.lnct_misses;
    }
    ++stats_.nlt_bursts;
    return topo_.t_burst;
  }

  std::uint64_t list_access(std::uint32_t s, std::uint64_t start, std::uint32_t len) {
    if (len == 0) return 0;
    const std::uint64_t line = topo_.line_bytes();
    std::uint64_t cost = 0;
    for (std::uint64_t l = start / line; l <= (start + std::uint64_t{len} * 4 - 1) / line; ++l) {
      if (sw_.lnc) {
        if (lncd_[s].access(l)) {
          ++stats_.lncd_hits;
          cost += topo_.t_cache_hit;
          continue;
        }
        ++stats_.lncd_misses;
      }
      ++stats_.nbrlist_bursts;
      cost += topo_.t_burst;
    }
    return cost;
  }

  std::uint64_t prefetch_fill(std::uint32_t s, NodeId x) {
    std::uint64_t cost = 0;
    if (!lnct_[s].fill(x / entries_per_line_)) {
      ++stats_.nlt_bursts;
      cost += topo_.t_burst;
    }
    const auto& e = layout_.subchannels[s].nlt[x];
    const std::uint64_t line = topo_.line_bytes();
    for (std::uint64_t l = e.start / line; l <= (std::uint64_t{e.start} + e.length * 4u - 1) / line; ++l) {
      if (!lncd_[s].fill(l)) {
        ++stats_.nbrlist_bursts;
        cost += topo_.t_burst;
      }
    }
    return cost;
  }

  std::uint64_t eval_cost(std::uint32_t dims, bool remote) {
    const std::uint64_t steps = steps_for_dims(bounds_, dims);
    ++stats_.evaluations;
    stats_.features += dims;
    stats_.vector_bursts += steps;
    std::uint64_t cost = steps * topo_.t_burst + ((dims + topo_.lanes - 1) / topo_.lanes) * topo_.t_feature;
    if (remote) {
      stats_.cross_channel_bursts += steps;
      cost += steps * topo_.t_cross;
    }
    return cost;
  }

  /// Returns the idle ratio of the batch.
  double run_batch(const std::vector<const SearchTrace*>& members) {
    std::size_t rounds = 0;
    for (const auto* t : members) rounds = std::max(rounds, t->hops.size());
    std::vector<std::uint64_t> batch_busy(s_count_, 0);
    std::uint64_t batch_latency = 0;
    std::vector<std::unordered_map<NodeId, float>> accepted(members.size());
    std::vector<std::uint32_t> base_hops(members.size(), 0);
    std::vector<Work> work(s_count_);
    std::vector<std::uint64_t> pf(s_count_);

    for (std::size_t r = 0; r < rounds; ++r) {
      std::fill(work.begin(), work.end(), Work{});
      std::fill(pf.begin(), pf.end(), 0);
      std::uint64_t launch = 0, host_lookup = 0;
      for (std::size_t qi = 0; qi < members.size(); ++qi) {
        const auto& t = *members[qi];
        if (r >= t.hops.size()) continue;
        const HopRecord& hop = t.hops[r];
        check_node(hop.node);
        ++stats_.hops;
        launch += topo_.t_hop_launch;
        for (const auto& e : hop.evals) {
          check_node(e.id);
          if (e.outcome == Outcome::Accepted) accepted[qi][e.id] = e.distance;
        }
        if (hop.layer > 0) {
          host_lookup += topo_.t_host_lookup;
          for (const auto& e : hop.evals) {
            if (e.outcome != Outcome::Visited) work[layout_.home[e.id]].distance += eval_cost(e.dims, false);
          }
          continue;
        }
        if (sw_.dam) {
          for (std::uint32_t s = 0; s < s_count_; ++s) {
            work[s].retrieval += nlt_access(s, hop.node);
            const auto& ent = layout_.subchannels[s].nlt[hop.node];
            work[s].retrieval += list_access(s, ent.start, ent.length);
          }
          for (const auto& e : hop.evals) {
            if (e.outcome != Outcome::Visited) work[layout_.home[e.id]].distance += eval_cost(e.dims, false);
          }
        } else {
          host_lookup += topo_.t_host_lookup;
          const std::uint32_t h = layout_.home[hop.node];
          work[h].retrieval += list_access(h, full_start_[hop.node], full_len_[hop.node]);
          for (const auto& e : hop.evals) {
            if (e.outcome != Outcome::Visited) {
              work[h].distance += eval_cost(e.dims, layout_.home[e.id] != h);
            }
          }
        }
        if (sw_.dam && sw_.lnc && sw_.prefetch) prefetch(t, r, accepted[qi], base_hops[qi], pf);
        ++base_hops[qi];
      }
      std::uint32_t crit = 0;
      for (std::uint32_t s = 1; s < s_count_; ++s) {
        if (work[s].total() > work[crit].total()) crit = s;
      }
      const std::uint64_t pf_max = *std::max_element(pf.begin(), pf.end());
      const std::uint64_t excess = pf_max > topo_.t_merge ? pf_max - topo_.t_merge : 0;
      const std::uint64_t latency = launch + host_lookup + work[crit].total() + topo_.t_merge + excess;
      stats_.retrieval_cycles += host_lookup + work[crit].retrieval + excess;
      stats_.distance_cycles += work[crit].distance;
      stats_.partial_cycles += launch + topo_.t_merge;
      for (std::uint32_t s = 0; s < s_count_; ++s) {
        const std::uint64_t busy = work[s].total() + pf[s];
        batch_busy[s] += busy;
        stats_.busy_cycles[s] += busy;
      }
      batch_latency += latency;
      ++stats_.rounds;
    }
    stats_.batch_cycles.push_back(batch_latency);
    stats_.total_cycles += batch_latency;
    if (batch_latency == 0) return 0.0;
    const std::uint64_t least = *std::min_element(batch_busy.begin(), batch_busy.end());
    return static_cast<double>(batch_latency - least) / static_cast<double>(batch_latency);
  }

  // Each sub-channel guesses the next hop from what it can see: the best
  // candidate left over from before this hop plus its own newly accepted
  // neighbors, and pulls its partition of that node into the caches.
  void prefetch(const SearchTrace& t, std::size_t r, const std::unordered_map<NodeId, float>& accepted,
                std::uint32_t base_hop, std::vector<std::uint64_t>& pf) {
    const HopRecord& hop = t.hops[r];
    const bool has_next = r + 1 < t.hops.size() && t.hops[r + 1].layer == 0;
    const NodeId next = has_next ? t.hops[r + 1].node : kInvalidNode;
    float carry_d = kInfDistance;
    if (hop.carry_best != kInvalidNode) {
      auto it = accepted.find(hop.carry_best);
      if (it != accepted.end()) carry_d = it->second;
    }
    if (stats_.prefetch_issued_by_hop.size() <= base_hop) {
      stats_.prefetch_issued_by_hop.resize(base_hop + 1, 0);
      stats_.prefetch_hits_by_hop.resize(base_hop + 1, 0);
    }
    for (std::uint32_t s = 0; s < s_count_; ++s) {
      NodeId pred = hop.carry_best;
      float pred_d = carry_d;
      for (const auto& e : hop.evals) {
        if (e.outcome != Outcome::Accepted || layout_.home[e.id] != s) continue;
        if (pred == kInvalidNode || e.distance < pred_d || (e.distance == pred_d && e.id < pred)) {
          pred = e.id;
          pred_d = e.distance;
        }
      }
      if (pred == kInvalidNode || layout_.subchannels[s].nlt[pred].length == 0) continue;
      ++stats_.prefetch_issued;
      ++stats_.prefetch_issued_by_hop[base_hop];
      if (pred == next) {
        ++stats_.prefetch_hits;
        ++stats_.prefetch_hits_by_hop[base_hop];
      }
      pf[s] += prefetch_fill(s, pred);
    }
  }

  const NdpLayout& layout_;
  const NdpTopology& topo_;
  SimSwitches sw_;
  std::vector<std::uint32_t> bounds_;
  std::uint32_t s_count_;
  std::uint32_t entries_per_line_ = 16;
  std::vector<LruCache> lnct_, lncd_;
  std::vector<std::uint64_t> full_start_;
  std::vector<std::uint32_t> full_len_;
  SimStats stats_;
};

}  // namespace

SimStats simulate(const std::vector<SearchTrace>& traces, const NdpLayout& layout,
                  const DfloatConfig& vector_layout, const NdpTopology& topo, const SimSwitches& enable) {
  if (layout.bursts_per_vector != vector_layout.steps()) {
    throw MismatchError("layout was mapped for a different vector layout");
  }
  return Simulator(layout, vector_layout, topo, enable).run(traces);
}

LatencyBreakdown latency_breakdown(const SimStats& stats) {
  const double total = static_cast<double>(stats.retrieval_cycles + stats.distance_cycles + stats.partial_cycles);
  if (total == 0.0) return {};
  return {100.0 * static_cast<double>(stats.retrieval_cycles) / total,
          100.0 * static_cast<double>(stats.distance_cycles) / total,
          100.0 * static_cast<double>(stats.partial_cycles) / total};
}

void write_stats_csv_header(std::ostream& out) {
  out << "label,queries,batches,rounds,hops,evaluations,features,vector_bursts,nlt_bursts,"
         "nbrlist_bursts,cross_channel_bursts,lnct_hits,lnct_misses,lncd_hits,lncd_misses,"
         "prefetch_issued,prefetch_hits,total_cycles,retrieval_cycles,distance_cycles,"
         "partial_cycles,max_busy_cycles,min_busy_cycles,idle_ratio,qps,lncd_hit_rate,"
         "prefetch_hit_rate\n";
}

void write_stats_csv_row(std::ostream& out, const std::string& label, const SimStats& s) {
  const auto [mn, mx] = s.busy_cycles.empty()
                            ? std::pair<std::uint64_t, std::uint64_t>{0, 0}
                            : std::pair{*std::min_element(s.busy_cycles.begin(), s.busy_cycles.end()),
                                        *std::max_element(s.busy_cycles.begin(), s.busy_cycles.end())};
  std::ostringstream row;
  row.precision(10);
  row << label << ',' << s.queries << ',' << s.batches << ',' << s.rounds << ',' << s.hops << ','
      << s.evaluations << ',' << s.features << ',' << s.vector_bursts << ',' << s.nlt_bursts << ','
      << s.nbrlist_bursts << ',' << s.cross_channel_bursts << ',' << s.lnct_hits << ',' << s.lnct_misses
      << ',' << s.lncd_hits << ',' << s.lncd_misses << ',' << s.prefetch_issued << ',' << s.prefetch_hits
      << ',' << s.total_cycles << ',' << s.retrieval_cycles << ',' << s.distance_cycles << ','
      << s.partial_cycles << ',' << mx << ',' << mn << ',' << s.idle_ratio << ',' << s.qps() << ','
      << s.lncd_hit_rate() << ',' << s.prefetch_hit_rate() << '\n';
  out << row.str();
}

}  // namespace ndpann
