#include "ndpann/graph_index.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <queue>
#include <sstream>

#include "binary_io.hpp"
#include "ndpann/distance.hpp"

namespace ndpann {

namespace {

constexpr std::uint32_t kIndexMagic = 0x58494750;  // "PGIX"
constexpr std::uint32_t kIndexVersion = 1;

struct Scored {
  float d;
  NodeId id;
  friend bool operator<(const Scored& a, const Scored& b) {
    return a.d < b.d || (a.d == b.d && a.id < b.id);
  }
  friend bool operator>(const Scored& a, const Scored& b) { return b < a; }
};

class Builder {
 public:
  Builder(const VectorDatabase& db, const HnswParams& p)
      : db_(db), p_(p), index_(db.size(), static_cast<std::uint32_t>(db.dim()), p.M),
        visit_mark_(db.size(), 0) {}

  GraphIndex run() {
    std::mt19937_64 rng(p_.seed);
    const double ml = 1.0 / std::log(static_cast<double>(std::max<std::uint32_t>(p_.M, 2)));
    bool first = true;
    std::uint32_t max_level = 0;
    NodeId entry = 0;
    for (NodeId x = 0; x < db_.size(); ++x) {
      const double u = uniform01(rng);
      const auto level = static_cast<std::uint32_t>(std::floor(-std::log(1.0 - u) * ml));
      index_.set_level(x, level);
      if (first) {
        first = false;
        max_level = level;
        entry = x;
        index_.set_entry_point(x);
        continue;
      }
      const auto q = db_[x];
      Scored cur{dist(q, entry), entry};
      for (std::uint32_t lc = max_level; lc > level; --lc) cur = greedy(q, cur, lc);
      std::vector<Scored> eps{cur};
      for (std::uint32_t lc = std::min(level, max_level) + 1; lc-- > 0;) {
        auto w = search_layer(q, eps, p_.ef_construction, lc);
        auto chosen = select(w, p_.M);
        auto& mine = index_.mutable_neighbors(x, lc);
        for (const auto& c : chosen) mine.push_back(c.id);
        for (const auto& c : chosen) connect(c.id, x, c.d, lc);
        eps = std::move(w);
      }
      if (level > max_level) {
        max_level = level;
        entry = x;
        index_.set_entry_point(x);
      }
    }
    return std::move(index_);
  }

 private:
  float dist(std::span<const float> q, NodeId v) const { return distance(db_.metric, q, db_[v]); }

  Scored greedy(std::span<const float> q, Scored cur, std::uint32_t layer) const {
    bool changed = true;
    while (changed) {
      changed = false;
      for (NodeId e : index_.neighbors(cur.id, layer)) {
        Scored s{dist(q, e), e};
        if (s < cur) {
          cur = s;
          changed = true;
        }
      }
    }
    return cur;
  }

  std::vector<Scored> search_layer(std::span<const float> q, const std::vector<Scored>& eps,
                                   std::uint32_t ef, std::uint32_t layer) {
    ++epoch_;
    std::priority_queue<Scored, std::vector<Scored>, std::greater<>> cand;
    std::priority_queue<Scored> w;
    for (const auto& e : eps) {
      visit_mark_[e.id] = epoch_;
      cand.push(e);
      w.push(e);
      if (w.size() > ef) w.pop();
    }
    while (!cand.empty()) {
      const Scored c = cand.top();
      if (w.top() < c && w.size() >= ef) break;
      cand.pop();
      for (NodeId e : index_.neighbors(c.id, layer)) {
        if (visit_mark_[e] == epoch_) continue;
        visit_mark_[e] = epoch_;
        Scored s{dist(q, e), e};
        if (w.size() < ef || s < w.top()) {
          cand.push(s);
          w.push(s);
          if (w.size() > ef) w.pop();
        }
      }
    }
    std::vector<Scored> out;
    out.reserve(w.size());
    while (!w.empty()) {
      out.push_back(w.top());
      w.pop();
    }
    std::reverse(out.begin(), out.end());
    return out;
  }

  // Keeps a candidate only if it is closer to the base than to every kept one.
  std::vector<Scored> select(std::vector<Scored> cands, std::uint32_t m) const {
    std::sort(cands.begin(), cands.end());
    std::vector<Scored> kept;
    for (const auto& c : cands) {
      if (kept.size() >= m) break;
      bool good = true;
      for (const auto& r : kept) {
        if (distance(db_.metric, db_[c.id], db_[r.id]) < c.d) {
          good = false;
          break;
        }
      }
      if (good) kept.push_back(c);
    }
    return kept;
  }

  void connect(NodeId from, NodeId to, float d, std::uint32_t layer) {
    auto& list = index_.mutable_neighbors(from, layer);
    const std::uint32_t cap = index_.max_degree(layer);
    if (list.size() < cap) {
      list.push_back(to);
      return;
    }
    std::vector<Scored> cands;
    cands.reserve(list.size() + 1);
    const auto base = db_[from];
    for (NodeId e : list) cands.push_back({dist(base, e), e});
    cands.push_back({d, to});
    auto kept = select(std::move(cands), cap);
    list.clear();
    for (const auto& k : kept) list.push_back(k.id);
  }

  const VectorDatabase& db_;
  HnswParams p_;
  GraphIndex index_;
  std::vector<std::uint32_t> visit_mark_;
  std::uint32_t epoch_ = 0;
};

std::string where(NodeId node, std::uint32_t layer) {
  return "node " + std::to_string(node) + " at layer " + std::to_string(layer);
}

}  // namespace

GraphIndex::GraphIndex(std::size_t n, std::uint32_t dim, std::uint32_t M)
    : links_(n, std::vector<std::vector<NodeId>>(1)), dim_(dim), M_(M) {
  if (M == 0) throw Error("M must be positive");
}

std::uint32_t GraphIndex::level(NodeId node) const {
  if (node >= links_.size()) throw Error("node " + std::to_string(node) + " out of range");
  return static_cast<std::uint32_t>(links_[node].size()) - 1;
}

std::span<const NodeId> GraphIndex::neighbors(NodeId node, std::uint32_t layer) const {
  if (!has_node(node, layer)) throw Error(where(node, layer) + " is not in the graph");
  return links_[node][layer];
}

std::vector<NodeId>& GraphIndex::mutable_neighbors(NodeId node, std::uint32_t layer) {
  if (!has_node(node, layer)) throw Error(where(node, layer) + " is not in the graph");
  return links_[node][layer];
}

std::vector<NodeId> GraphIndex::layer_nodes(std::uint32_t layer) const {
  std::vector<NodeId> out;
  for (NodeId i = 0; i < links_.size(); ++i) {
    if (layer < links_[i].size()) out.push_back(i);
  }
  return out;
}

std::size_t GraphIndex::edge_count(std::uint32_t layer) const {
  std::size_t total = 0;
  for (const auto& l : links_) {
    if (layer < l.size()) total += l[layer].size();
  }
  return total;
}

void GraphIndex::set_level(NodeId node, std::uint32_t level) {
  if (node >= links_.size()) throw Error("node " + std::to_string(node) + " out of range");
  if (links_[node].size() < level + 1) links_[node].resize(level + 1);
  top_layer_ = std::max(top_layer_, level);
}

void GraphIndex::set_entry_point(NodeId node) {
  if (node >= links_.size()) throw Error("entry point out of range");
  entry_ = node;
}

void GraphIndex::validate() const {
  if (links_.empty()) throw Error("graph has no nodes");
  std::uint32_t top = 0;
  for (NodeId i = 0; i < links_.size(); ++i) {
    if (links_[i].empty()) throw Error("node " + std::to_string(i) + " is missing from layer 0");
    top = std::max(top, static_cast<std::uint32_t>(links_[i].size() - 1));
    for (std::uint32_t l = 0; l < links_[i].size(); ++l) {
      const auto& list = links_[i][l];
      if (list.size() > max_degree(l)) {
        throw Error(where(i, l) + " has degree " + std::to_string(list.size()) + " above cap " +
                    std::to_string(max_degree(l)));
      }
      for (NodeId e : list) {
        if (e >= links_.size()) {
          throw Error(where(i, l) + " lists out-of-range neighbor " + std::to_string(e));
        }
        if (e == i) throw Error(where(i, l) + " has a self-loop");
        if (l >= links_[e].size()) {
          throw Error(where(i, l) + " lists neighbor " + std::to_string(e) +
                      " which is absent from that layer");
        }
      }
    }
  }
  if (top != top_layer_) throw Error("recorded top layer disagrees with node levels");
  if (entry_ >= links_.size() || links_[entry_].size() - 1 != top_layer_) {
    throw Error("entry point " + std::to_string(entry_) + " is not on the top layer");
  }
}

GraphIndex build_hnsw(const VectorDatabase& db, const HnswParams& params) {
  if (db.size() == 0) throw Error("cannot build an index over an empty database");
  if (params.M < 2) throw Error("M must be at least 2");
  if (params.ef_construction == 0) throw Error("ef_construction must be positive");
  return Builder(db, params).run();
}

std::size_t base_layer_reachable(const GraphIndex& index) {
  std::vector<char> seen(index.size(), 0);
  std::vector<NodeId> stack{index.entry_point()};
  seen[index.entry_point()] = 1;
  std::size_t count = 1;
  while (!stack.empty()) {
    const NodeId x = stack.back();
    stack.pop_back();
    for (NodeId e : index.neighbors(x, 0)) {
      if (!seen[e]) {
        seen[e] = 1;
        ++count;
        stack.push_back(e);
      }
    }
  }
  return count;
}

void save_index(const std::filesystem::path& path, const GraphIndex& index) {
  io::Writer w(path);
  w.put(kIndexMagic);
  w.put(kIndexVersion);
  w.put(static_cast<std::uint32_t>(index.size()));
  w.put(index.dim());
  w.put(index.M());
  w.put(index.top_layer() + 1);
  w.put(index.entry_point());
  for (std::uint32_t l = 0; l <= index.top_layer(); ++l) {
    const auto nodes = index.layer_nodes(l);
    w.put(static_cast<std::uint32_t>(nodes.size()));
    for (NodeId x : nodes) {
      const auto nb = index.neighbors(x, l);
      w.put(x);
      w.put(static_cast<std::uint32_t>(nb.size()));
      w.put_array(std::vector<NodeId>(nb.begin(), nb.end()));
    }
  }
  w.finish();
}

GraphIndex import_index(const std::filesystem::path& path) {
  io::Reader r(path);
  if (r.get<std::uint32_t>() != kIndexMagic) throw FormatError("'" + path.string() + "' is not an index file");
  const auto version = r.get<std::uint32_t>();
  if (version != kIndexVersion) throw FormatError("unsupported index version " + std::to_string(version));
  const auto n = r.get<std::uint32_t>();
  const auto dim = r.get<std::uint32_t>();
  const auto M = r.get<std::uint32_t>();
  const auto layers = r.get<std::uint32_t>();
  const auto entry = r.get<std::uint32_t>();
  if (n == 0) throw FormatError("index declares zero nodes");
  if (layers == 0) throw FormatError("index declares zero layers");
  if (M == 0) throw FormatError("index declares M = 0");
  GraphIndex g(n, dim, M);
  std::vector<std::vector<char>> present(layers, std::vector<char>(n, 0));
  std::vector<std::vector<std::vector<NodeId>>> lists(layers);
  for (std::uint32_t l = 0; l < layers; ++l) {
    const auto count = r.get<std::uint32_t>();
    if (count > n) throw FormatError("layer " + std::to_string(l) + " lists more nodes than the graph has");
    lists[l].resize(n);
    for (std::uint32_t i = 0; i < count; ++i) {
      const auto id = r.get<std::uint32_t>();
      const auto degree = r.get<std::uint32_t>();
      if (id >= n) throw FormatError("layer " + std::to_string(l) + " lists out-of-range node " + std::to_string(id));
      if (present[l][id]) throw FormatError(where(id, l) + " appears twice");
      if (degree > g.max_degree(l)) {
        throw FormatError(where(id, l) + " has degree " + std::to_string(degree) + " above cap");
      }
      present[l][id] = 1;
      lists[l][id] = r.get_array<NodeId>(degree);
    }
  }
  if (!r.at_end()) throw FormatError("trailing bytes after index at offset " + std::to_string(r.offset()));
  for (NodeId x = 0; x < n; ++x) {
    if (!present[0][x]) throw FormatError("node " + std::to_string(x) + " is missing from layer 0");
    std::uint32_t lvl = 0;
    for (std::uint32_t l = 1; l < layers; ++l) {
      if (present[l][x]) {
        if (!present[l - 1][x]) {
          throw FormatError(where(x, l) + " is missing from layer " + std::to_string(l - 1));
        }
        lvl = l;
      }
    }
    g.set_level(x, lvl);
    for (std::uint32_t l = 0; l <= lvl; ++l) g.mutable_neighbors(x, l) = std::move(lists[l][x]);
  }
  if (entry >= n) throw FormatError("entry point out of range");
  g.set_entry_point(entry);
  try {
    g.validate();
  } catch (const FormatError&) {
    throw;
  } catch (const Error& e) {
    throw FormatError(e.what());
  }
  return g;
}

GraphIndex import_edge_csv(const std::filesystem::path& path, std::size_t n, std::uint32_t dim,
                           std::uint32_t M) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open '" + path.string() + "'");
  struct Edge {
    NodeId node;
    std::uint32_t layer;
    NodeId nb;
  };
  std::vector<Edge> edges;
  std::string line;
  std::size_t line_no = 0;
  NodeId max_id = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::replace(line.begin(), line.end(), ',', ' ');
    std::istringstream ls(line);
    long long a, b, c;
    if (!(ls >> a >> b >> c)) {
      if (line_no == 1) continue;  // header
      throw FormatError("edge list line " + std::to_string(line_no) + " is malformed");
    }
    if (a < 0 || b < 0 || c < 0 || a > 0xfffffffeLL || c > 0xfffffffeLL || b > 64) {
      throw FormatError("edge list line " + std::to_string(line_no) + " has out-of-range values");
    }
    edges.push_back({static_cast<NodeId>(a), static_cast<std::uint32_t>(b), static_cast<NodeId>(c)});
    max_id = std::max({max_id, edges.back().node, edges.back().nb});
  }
  if (n == 0) n = edges.empty() ? 1 : static_cast<std::size_t>(max_id) + 1;
  for (const auto& e : edges) {
    if (e.node >= n || e.nb >= n) {
      throw FormatError("edge " + std::to_string(e.node) + "->" + std::to_string(e.nb) +
                        " references a node beyond " + std::to_string(n));
    }
  }
  std::vector<std::uint32_t> level(n, 0);
  for (const auto& e : edges) level[e.node] = std::max(level[e.node], e.layer);
  if (M == 0) {
    std::vector<std::vector<std::uint32_t>> deg(n);
    std::uint32_t base_max = 0, upper_max = 0;
    for (const auto& e : edges) {
      auto& dn = deg[e.node];
      if (dn.size() <= e.layer) dn.resize(e.layer + 1, 0);
      const auto d = ++dn[e.layer];
      (e.layer == 0 ? base_max : upper_max) = std::max(e.layer == 0 ? base_max : upper_max, d);
    }
    M = std::max({2u, upper_max, (base_max + 1) / 2});
  }
  GraphIndex g(n, dim, M);
  for (NodeId x = 0; x < n; ++x) g.set_level(x, level[x]);
  for (const auto& e : edges) g.mutable_neighbors(e.node, e.layer).push_back(e.nb);
  const std::uint32_t top = g.top_layer();
  for (NodeId x = 0; x < n; ++x) {
    if (level[x] == top) {
      g.set_entry_point(x);
      break;
    }
  }
  g.validate();
  return g;
}

}  // namespace ndpann
