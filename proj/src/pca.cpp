#include "ndpann/pca.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>

#include "binary_io.hpp"

namespace ndpann {

namespace {

using RowMatF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

constexpr std::uint32_t kPcaMagic = 0x4143504e;  // "NPCA"
constexpr std::uint32_t kPcaVersion = 1;

}  // namespace

const CheckpointParams* PcaModel::find_checkpoint(std::uint32_t k) const {
  auto it = std::lower_bound(checkpoints.begin(), checkpoints.end(), k,
                             [](const CheckpointParams& c, std::uint32_t v) { return c.k < v; });
  if (it == checkpoints.end() || it->k != k) return nullptr;
  return &*it;
}

void PcaModel::validate() const {
  const std::size_t d = dim();
  if (d == 0) throw Error("PCA model has zero dimensions");
  if (basis.rows() != d || basis.cols() != d || eigenvalues.size() != d) {
    throw MismatchError("PCA model components disagree on dimension");
  }
  if (!(target_prob > 0.0 && target_prob < 1.0)) throw Error("target probability outside (0,1)");
  for (std::size_t i = 0; i < checkpoints.size(); ++i) {
    const auto& c = checkpoints[i];
    if (c.k == 0 || c.k > d) throw Error("checkpoint outside 1..D");
    if (i > 0 && checkpoints[i - 1].k >= c.k) throw Error("checkpoints not strictly ascending");
    if (c.beta < 1.0) throw Error("beta below 1 at checkpoint " + std::to_string(c.k));
  }
  if (!checkpoints.empty() && checkpoints.back().k != d) {
    throw Error("last checkpoint must equal the dimension");
  }
}

PcaModel fit_pca(const VectorDatabase& db) {
  const std::size_t n = db.size();
  const std::size_t d = db.dim();
  if (n < 2) throw Error("PCA needs at least two vectors");
  db.validate();

  Eigen::VectorXd mean = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(d));
  for (std::size_t i = 0; i < n; ++i) {
    const auto r = db.vectors.row(i);
    for (std::size_t j = 0; j < d; ++j) mean[static_cast<Eigen::Index>(j)] += r[j];
  }
  mean /= static_cast<double>(n);

  // Blocked centered Gram accumulation keeps memory at one block in double.
  Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(d),
                                              static_cast<Eigen::Index>(d));
  constexpr std::size_t kBlock = 2048;
  for (std::size_t b = 0; b < n; b += kBlock) {
    const std::size_t rows = std::min(kBlock, n - b);
    Eigen::MatrixXd x(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(d));
    for (std::size_t i = 0; i < rows; ++i) {
      const auto r = db.vectors.row(b + i);
      for (std::size_t j = 0; j < d; ++j) {
        x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
            r[j] - mean[static_cast<Eigen::Index>(j)];
      }
    }
    cov.selfadjointView<Eigen::Lower>().rankUpdate(x.transpose());
  }
  cov = cov.selfadjointView<Eigen::Lower>();
  cov /= static_cast<double>(n - 1);

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  if (solver.info() != Eigen::Success) throw Error("eigendecomposition failed");

  PcaModel model;
  model.metric = db.metric;
  model.mean.resize(d);
  for (std::size_t j = 0; j < d; ++j) model.mean[j] = static_cast<float>(mean[static_cast<Eigen::Index>(j)]);
  model.basis = Matrix(d, d);
  model.eigenvalues.resize(d);
  const auto& values = solver.eigenvalues();
  const auto& vectors = solver.eigenvectors();
  for (std::size_t c = 0; c < d; ++c) {
    // Eigen sorts ascending; output column c takes the c-th largest.
    const auto src = static_cast<Eigen::Index>(d - 1 - c);
    model.eigenvalues[c] = std::max(0.0, values[src]);
    Eigen::VectorXd v = vectors.col(src);
    Eigen::Index arg = 0;
    v.cwiseAbs().maxCoeff(&arg);
    if (v[arg] < 0) v = -v;
    for (std::size_t r = 0; r < d; ++r) model.basis(r, c) = static_cast<float>(v[static_cast<Eigen::Index>(r)]);
  }
  return model;
}

std::vector<float> transform(const PcaModel& model, std::span<const float> v) {
  const std::size_t d = model.dim();
  if (v.size() != d) {
    throw MismatchError("transform input has dimension " + std::to_string(v.size()) +
                        ", model expects " + std::to_string(d));
  }
  std::vector<double> centered(d);
  for (std::size_t i = 0; i < d; ++i) {
    centered[i] = model.centers() ? static_cast<double>(v[i]) - model.mean[i] : v[i];
  }
  std::vector<float> out(d);
  for (std::size_t j = 0; j < d; ++j) {
    double s = 0.0;
    for (std::size_t i = 0; i < d; ++i) s += model.basis(i, j) * centered[i];
    out[j] = static_cast<float>(s);
  }
  return out;
}

Matrix transform_rows(const PcaModel& model, const Matrix& rows) {
  const std::size_t d = model.dim();
  if (rows.empty()) return Matrix(0, d);
  if (rows.cols() != d) throw MismatchError("transform input dimension mismatch");
  Eigen::Map<const RowMatF> basis(model.basis.data().data(), static_cast<Eigen::Index>(d),
                                  static_cast<Eigen::Index>(d));
  Eigen::Map<const RowMatF> x(rows.data().data(), static_cast<Eigen::Index>(rows.rows()),
                              static_cast<Eigen::Index>(d));
  RowMatF centered = x;
  if (model.centers()) {
    Eigen::Map<const Eigen::RowVectorXf> mu(model.mean.data(), static_cast<Eigen::Index>(d));
    centered.rowwise() -= mu;
  }
  RowMatF y = centered * basis;
  return Matrix(rows.rows(), d, std::vector<float>(y.data(), y.data() + y.size()));
}

VectorDatabase transform_database(const PcaModel& model, const VectorDatabase& db) {
  return VectorDatabase{transform_rows(model, db.vectors), db.metric};
}

std::vector<double> compute_alpha(std::span<const double> eigenvalues,
                                  std::span<const std::uint32_t> checkpoints) {
  std::vector<double> prefix(eigenvalues.size() + 1, 0.0);
  for (std::size_t i = 0; i < eigenvalues.size(); ++i) prefix[i + 1] = prefix[i] + eigenvalues[i];
  const double total = prefix.back();
  std::vector<double> alpha;
  alpha.reserve(checkpoints.size());
  for (std::uint32_t k : checkpoints) {
    if (k == 0 || k > eigenvalues.size()) throw Error("checkpoint outside 1..D");
    if (!(prefix[k] > 0.0)) {
      throw Error("degenerate spectrum: leading eigenvalue mass is zero at k=" + std::to_string(k));
    }
    alpha.push_back(k == eigenvalues.size() ? 1.0 : total / prefix[k]);
  }
  return alpha;
}

std::vector<double> estimate_variance(const PcaModel& model, const VectorDatabase& transformed,
                                      const Matrix& probes, std::size_t sample_pairs,
                                      std::uint64_t seed,
                                      std::span<const std::uint32_t> checkpoints) {
  if (sample_pairs < 100) throw Error("variance estimation needs at least 100 sample pairs");
  const std::size_t d = transformed.dim();
  if (d != model.dim()) throw MismatchError("transformed database does not match model");
  if (!probes.empty() && probes.cols() != d) throw MismatchError("probe dimension mismatch");
  const auto alpha = compute_alpha(model.eigenvalues, checkpoints);
  const bool ip = model.metric == Metric::InnerProduct;
  const std::size_t pool = probes.empty() ? transformed.size() : probes.rows();

  std::mt19937_64 rng(seed);
  std::vector<double> sum(checkpoints.size(), 0.0), sumsq(checkpoints.size(), 0.0);
  std::vector<double> prefix(d + 1);
  std::size_t used = 0;
  for (std::size_t s = 0; s < sample_pairs; ++s) {
    const auto pi = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(pool));
    const auto ti = static_cast<std::size_t>(uniform01(rng) * static_cast<double>(transformed.size()));
    const auto p = probes.empty() ? transformed.vectors.row(pi) : probes.row(pi);
    const auto t = transformed.vectors.row(ti);
    prefix[0] = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double term = ip ? -static_cast<double>(p[j]) * t[j]
                             : (static_cast<double>(p[j]) - t[j]) * (static_cast<double>(p[j]) - t[j]);
      prefix[j + 1] = prefix[j] + term;
    }
    const double all = prefix[d];
    if (all == 0.0) continue;
    ++used;
    for (std::size_t c = 0; c < checkpoints.size(); ++c) {
      const double r = alpha[c] * prefix[checkpoints[c]] / all;
      sum[c] += r;
      sumsq[c] += r * r;
    }
  }
  if (used < 2) throw Error("all sampled pairs are degenerate (zero full distance)");
  std::vector<double> var(checkpoints.size());
  for (std::size_t c = 0; c < checkpoints.size(); ++c) {
    const double m = sum[c] / static_cast<double>(used);
    const double v = (sumsq[c] - static_cast<double>(used) * m * m) / static_cast<double>(used - 1);
    var[c] = std::max(0.0, v);
    // r_D is identically 1; floating residue must not inflate beta_D.
    if (checkpoints[c] == d) var[c] = 0.0;
  }
  // Constant ratios leave only rounding noise.
  for (std::size_t c = 0; c < checkpoints.size(); ++c) {
    const double m = sum[c] / static_cast<double>(used);
    if (var[c] <= 1e-12 * std::max(1.0, m * m)) var[c] = 0.0;
  }
  return var;
}

std::vector<double> compute_beta(std::span<const double> var, double target_prob) {
  if (!(target_prob > 0.0 && target_prob < 1.0)) {
    throw Error("target probability must lie in (0,1)");
  }
  std::vector<double> beta;
  beta.reserve(var.size());
  for (double v : var) {
    beta.push_back(v == 0.0 ? 1.0 : 1.0 + std::sqrt(v / (2.0 * (1.0 - target_prob))));
  }
  return beta;
}

double estimate_distance(const PcaModel& model, double d_part, std::uint32_t k) {
  const auto* c = model.find_checkpoint(k);
  if (c == nullptr) throw Error("dimension " + std::to_string(k) + " is not a registered checkpoint");
  return c->alpha * d_part / c->beta;
}

std::vector<std::uint32_t> all_dimensions(std::size_t dim) {
  std::vector<std::uint32_t> ks(dim);
  std::iota(ks.begin(), ks.end(), 1u);
  return ks;
}

PreprocessResult preprocess(const VectorDatabase& db, const Matrix& probes,
                            const PreprocessOptions& options) {
  PreprocessResult out;
  out.model = fit_pca(db);
  out.model.target_prob = options.target_prob;
  out.transformed = transform_database(out.model, db);
  out.transformed_probes = transform_rows(out.model, probes);

  auto ks = options.checkpoints.empty() ? all_dimensions(db.dim()) : options.checkpoints;
  std::sort(ks.begin(), ks.end());
  ks.erase(std::unique(ks.begin(), ks.end()), ks.end());
  if (ks.back() != db.dim()) ks.push_back(static_cast<std::uint32_t>(db.dim()));

  const auto alpha = compute_alpha(out.model.eigenvalues, ks);
  const auto var = estimate_variance(out.model, out.transformed, out.transformed_probes,
                                     options.sample_pairs, options.seed, ks);
  const auto beta = compute_beta(var, options.target_prob);
  out.model.checkpoints.clear();
  for (std::size_t i = 0; i < ks.size(); ++i) {
    out.model.checkpoints.push_back({ks[i], alpha[i], var[i], beta[i]});
  }
  out.model.validate();
  return out;
}

void save_pca(const std::filesystem::path& path, const PcaModel& model) {
  model.validate();
  io::Writer w(path);
  w.put(kPcaMagic);
  w.put(kPcaVersion);
  w.put(static_cast<std::uint32_t>(model.dim()));
  w.put(static_cast<std::uint32_t>(model.metric));
  w.put(model.target_prob);
  w.put(static_cast<std::uint32_t>(model.checkpoints.size()));
  w.put_array(model.mean);
  w.put_array(model.basis.data());
  w.put_array(model.eigenvalues);
  for (const auto& c : model.checkpoints) {
    w.put(c.k);
    w.put(c.alpha);
    w.put(c.var);
    w.put(c.beta);
  }
  w.finish();
}

PcaModel load_pca(const std::filesystem::path& path) {
  io::Reader r(path);
  if (r.get<std::uint32_t>() != kPcaMagic) throw FormatError("not a PCA model file");
  if (const auto v = r.get<std::uint32_t>(); v != kPcaVersion) {
    throw FormatError("unsupported PCA model version " + std::to_string(v));
  }
  PcaModel m;
  const auto d = r.get<std::uint32_t>();
  const auto metric = r.get<std::uint32_t>();
  if (metric > 1) throw FormatError("unknown metric code in PCA model");
  m.metric = static_cast<Metric>(metric);
  m.target_prob = r.get<double>();
  const auto count = r.get<std::uint32_t>();
  m.mean = r.get_array<float>(d);
  m.basis = Matrix(d, d, r.get_array<float>(static_cast<std::size_t>(d) * d));
  m.eigenvalues = r.get_array<double>(d);
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointParams c;
    c.k = r.get<std::uint32_t>();
    c.alpha = r.get<double>();
    c.var = r.get<double>();
    c.beta = r.get<double>();
    m.checkpoints.push_back(c);
  }
  if (!r.at_end()) throw FormatError("trailing bytes in PCA model file");
  m.validate();
  return m;
}

}  // namespace ndpann
