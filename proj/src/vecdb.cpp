#include "ndpann/vecdb.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <unordered_set>

#include "ndpann/distance.hpp"

namespace ndpann {

void VectorDatabase::validate() const {
  if (vectors.rows() == 0) throw Error("vector database is empty");
  if (vectors.cols() == 0) throw Error("vector database has zero dimensions");
  for (float x : vectors.data()) {
    if (!std::isfinite(x)) throw Error("vector database contains non-finite values");
  }
}

XvecsKind xvecs_kind_from_path(const std::filesystem::path& path) {
  const auto ext = path.extension().string();
  if (ext == ".fvecs") return XvecsKind::Fvecs;
  if (ext == ".ivecs") return XvecsKind::Ivecs;
  if (ext == ".bvecs") return XvecsKind::Bvecs;
  throw Error("cannot infer xvecs kind from '" + path.string() + "'");
}

namespace {

std::size_t payload_width(XvecsKind kind) { return kind == XvecsKind::Bvecs ? 1 : 4; }

std::vector<char> read_all(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path.string() + "'");
  return std::vector<char>(std::istreambuf_iterator<char>(in), {});
}

std::int32_t read_i32(const char* p) {
  std::uint32_t u = static_cast<std::uint8_t>(p[0]) | (static_cast<std::uint8_t>(p[1]) << 8) |
                    (static_cast<std::uint8_t>(p[2]) << 16) |
                    (static_cast<std::uint32_t>(static_cast<std::uint8_t>(p[3])) << 24);
  return static_cast<std::int32_t>(u);
}

float read_f32(const char* p) {
  const std::uint32_t u = static_cast<std::uint32_t>(read_i32(p));
  float f;
  std::memcpy(&f, &u, sizeof f);
  return f;
}

void put_u32(std::ofstream& out, std::uint32_t u) {
  const char b[4] = {static_cast<char>(u & 0xff), static_cast<char>((u >> 8) & 0xff),
                     static_cast<char>((u >> 16) & 0xff), static_cast<char>((u >> 24) & 0xff)};
  out.write(b, 4);
}

template <typename Emit>
std::size_t scan_records(const std::vector<char>& bytes, XvecsKind kind, Emit&& emit) {
  const std::size_t width = payload_width(kind);
  std::size_t offset = 0;
  std::size_t record = 0;
  std::int64_t dim = -1;
  while (offset < bytes.size()) {
    if (offset + 4 > bytes.size()) {
      throw FormatError("truncated record header at byte offset " + std::to_string(offset));
    }
    const std::int32_t d = read_i32(bytes.data() + offset);
    if (d <= 0) {
      throw FormatError("record " + std::to_string(record) + " declares dimension " +
                        std::to_string(d));
    }
    if (dim >= 0 && d != dim) {
      throw FormatError("record " + std::to_string(record) + " declares dimension " +
                        std::to_string(d) + " but earlier records use " + std::to_string(dim));
    }
    dim = d;
    const std::size_t payload = static_cast<std::size_t>(d) * width;
    if (offset + 4 + payload > bytes.size()) {
      throw FormatError("truncated record " + std::to_string(record) + " at byte offset " +
                        std::to_string(offset));
    }
    emit(bytes.data() + offset + 4, static_cast<std::size_t>(d));
    offset += 4 + payload;
    ++record;
  }
  return dim < 0 ? 0 : static_cast<std::size_t>(dim);
}

}  // namespace

Matrix load_xvecs(const std::filesystem::path& path, XvecsKind kind) {
  const auto bytes = read_all(path);
  std::vector<float> data;
  std::size_t rows = 0;
  const std::size_t dim = scan_records(bytes, kind, [&](const char* p, std::size_t d) {
    for (std::size_t j = 0; j < d; ++j) {
      switch (kind) {
        case XvecsKind::Fvecs: data.push_back(read_f32(p + 4 * j)); break;
        case XvecsKind::Ivecs: data.push_back(static_cast<float>(read_i32(p + 4 * j))); break;
        case XvecsKind::Bvecs: data.push_back(static_cast<float>(static_cast<std::uint8_t>(p[j])));
      }
    }
    ++rows;
  });
  return Matrix(rows, dim, std::move(data));
}

std::vector<std::vector<std::int32_t>> load_ivecs(const std::filesystem::path& path) {
  const auto bytes = read_all(path);
  std::vector<std::vector<std::int32_t>> rows;
  scan_records(bytes, XvecsKind::Ivecs, [&](const char* p, std::size_t d) {
    std::vector<std::int32_t> r(d);
    for (std::size_t j = 0; j < d; ++j) r[j] = read_i32(p + 4 * j);
    rows.push_back(std::move(r));
  });
  return rows;
}

void write_fvecs(const std::filesystem::path& path, const Matrix& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  for (std::size_t i = 0; i < m.rows(); ++i) {
    put_u32(out, static_cast<std::uint32_t>(m.cols()));
    for (float f : m.row(i)) {
      std::uint32_t u;
      std::memcpy(&u, &f, sizeof u);
      put_u32(out, u);
    }
  }
}

void write_ivecs(const std::filesystem::path& path,
                 const std::vector<std::vector<std::int32_t>>& rows) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  for (const auto& r : rows) {
    put_u32(out, static_cast<std::uint32_t>(r.size()));
    for (std::int32_t v : r) put_u32(out, static_cast<std::uint32_t>(v));
  }
}

void write_bvecs(const std::filesystem::path& path, const Matrix& m) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  for (std::size_t i = 0; i < m.rows(); ++i) {
    put_u32(out, static_cast<std::uint32_t>(m.cols()));
    for (float f : m.row(i)) {
      if (f < 0.0f || f > 255.0f) throw Error("bvecs payload out of byte range");
      out.put(static_cast<char>(static_cast<std::uint8_t>(f)));
    }
  }
}

std::vector<Neighbor> brute_force_knn_with_distances(const VectorDatabase& db,
                                                     std::span<const float> q, std::size_t k) {
  if (q.size() != db.dim()) {
    throw MismatchError("query dimension " + std::to_string(q.size()) +
                        " does not match database dimension " + std::to_string(db.dim()));
  }
  if (k > db.size()) throw Error("k exceeds database size");
  std::vector<Neighbor> all(db.size());
  for (std::size_t i = 0; i < db.size(); ++i) {
    all[i] = {static_cast<NodeId>(i), distance(db.metric, q, db[static_cast<NodeId>(i)])};
  }
  auto less = [](const Neighbor& a, const Neighbor& b) {
    return a.distance < b.distance || (a.distance == b.distance && a.id < b.id);
  };
  std::partial_sort(all.begin(), all.begin() + static_cast<std::ptrdiff_t>(k), all.end(), less);
  all.resize(k);
  return all;
}

std::vector<NodeId> brute_force_knn(const VectorDatabase& db, std::span<const float> q,
                                    std::size_t k) {
  std::vector<NodeId> ids;
  for (const auto& nb : brute_force_knn_with_distances(db, q, k)) ids.push_back(nb.id);
  return ids;
}

QuerySet make_query_set(const VectorDatabase& db, Matrix queries, std::size_t k) {
  if (queries.cols() != db.dim()) throw MismatchError("query dimension mismatch");
  QuerySet qs;
  qs.queries = std::move(queries);
  qs.ground_truth.reserve(qs.queries.rows());
  for (std::size_t i = 0; i < qs.queries.rows(); ++i) {
    qs.ground_truth.push_back(brute_force_knn(db, qs.queries.row(i), k));
  }
  return qs;
}

double recall_at_k(std::span<const NodeId> found, std::span<const NodeId> truth) {
  if (truth.empty()) return 0.0;
  std::unordered_set<NodeId> t(truth.begin(), truth.end());
  std::size_t hit = 0;
  for (NodeId id : found) hit += t.count(id);
  return static_cast<double>(hit) / static_cast<double>(truth.size());
}

double mean_recall(const std::vector<std::vector<NodeId>>& found, const QuerySet& qs) {
  if (found.size() != qs.size()) throw MismatchError("result count does not match query count");
  if (found.empty()) return 0.0;
  double sum = 0.0;
  for (std::size_t i = 0; i < found.size(); ++i) sum += recall_at_k(found[i], qs.ground_truth[i]);
  return sum / static_cast<double>(found.size());
}

std::pair<VectorDatabase, Matrix> make_synthetic_split(std::size_t n, std::size_t extra,
                                                       std::size_t dim, double decay,
                                                       std::uint64_t seed) {
  if (n == 0 || dim == 0) throw Error("synthetic database needs n >= 1 and dim >= 1");
  if (!(decay > 0.0)) throw Error("decay must be positive");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);

  Eigen::MatrixXd g(dim, dim);
  for (Eigen::Index c = 0; c < g.cols(); ++c)
    for (Eigen::Index r = 0; r < g.rows(); ++r) g(r, c) = gauss(rng);
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q = qr.householderQ();
  const Eigen::MatrixXd rmat = qr.matrixQR().triangularView<Eigen::Upper>();
  for (Eigen::Index c = 0; c < q.cols(); ++c) {
    if (rmat(c, c) < 0) q.col(c) *= -1.0;
  }
  const Eigen::MatrixXf rot = q.cast<float>();

  std::vector<double> sigma(dim);
  for (std::size_t i = 0; i < dim; ++i) sigma[i] = std::sqrt(std::pow(decay, static_cast<double>(i)));

  const std::size_t total = n + extra;
  using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  RowMat z(total, dim);
  for (std::size_t r = 0; r < total; ++r)
    for (std::size_t c = 0; c < dim; ++c) z(r, c) = static_cast<float>(sigma[c] * gauss(rng));
  RowMat x = z * rot.transpose();

  std::vector<float> all(x.data(), x.data() + x.size());
  Matrix m(total, dim, std::move(all));
  VectorDatabase db{m.slice_rows(0, n), Metric::L2};
  return {std::move(db), m.slice_rows(n, total)};
}

VectorDatabase make_synthetic(std::size_t n, std::size_t dim, double decay, std::uint64_t seed) {
  return make_synthetic_split(n, 0, dim, decay, seed).first;
}

std::vector<NodeId> shuffled_ids(std::size_t n, std::uint64_t seed) {
  std::vector<NodeId> ids(n);
  std::iota(ids.begin(), ids.end(), 0);
  std::mt19937_64 rng(seed);
  for (std::size_t i = n; i > 1; --i) {
    const auto j = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(i));
    std::swap(ids[i - 1], ids[std::min(j, i - 1)]);
  }
  return ids;
}

}  // namespace ndpann
