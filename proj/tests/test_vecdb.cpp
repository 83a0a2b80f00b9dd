#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include "ndpann/vecdb.hpp"
#include "test_util.hpp"

using namespace ndpann;
using ndpann::test::TempDir;

namespace {

void write_raw(const std::filesystem::path& p, const std::vector<std::int32_t>& words) {
  std::ofstream out(p, std::ios::binary);
  out.write(reinterpret_cast<const char*>(words.data()), static_cast<std::streamsize>(words.size() * 4));
}

std::int32_t float_word(float f) {
  std::int32_t w;
  std::memcpy(&w, &f, 4);
  return w;
}

// Second scan written independently: full sort by (distance in double, id).
std::vector<NodeId> reference_knn(const Matrix& db, std::span<const float> q, std::size_t k) {
  std::vector<std::pair<double, NodeId>> all;
  for (std::size_t i = 0; i < db.rows(); ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < db.cols(); ++j) {
      const double d = static_cast<double>(db(i, j)) - q[j];
      s += d * d;
    }
    all.emplace_back(s, static_cast<NodeId>(i));
  }
  std::sort(all.begin(), all.end());
  std::vector<NodeId> out;
  for (std::size_t i = 0; i < k; ++i) out.push_back(all[i].second);
  return out;
}

}  // namespace

TEST(Xvecs, SingleRecordRoundTrip) {
  TempDir dir("xv");
  write_raw(dir / "one.fvecs", {4, float_word(1), float_word(2), float_word(3), float_word(4)});
  const Matrix m = load_xvecs(dir / "one.fvecs", XvecsKind::Fvecs);
  ASSERT_EQ(m.rows(), 1u);
  ASSERT_EQ(m.cols(), 4u);
  EXPECT_EQ(m.data(), (std::vector<float>{1, 2, 3, 4}));
}

TEST(Xvecs, DimensionChangeNamesRecord) {
  TempDir dir("xv");
  write_raw(dir / "bad.fvecs", {4, 0, 0, 0, 0, 5, 0, 0, 0, 0, 0});
  try {
    load_xvecs(dir / "bad.fvecs", XvecsKind::Fvecs);
    FAIL() << "expected a format error";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("record 1"), std::string::npos) << e.what();
  }
}

TEST(Xvecs, WriteReadAllKinds) {
  TempDir dir("xv");
  Matrix m(3, 5);
  for (std::size_t i = 0; i < 15; ++i) m.data()[i] = static_cast<float>(i * 7 % 256);
  write_fvecs(dir / "a.fvecs", m);
  write_bvecs(dir / "a.bvecs", m);
  EXPECT_EQ(load_xvecs(dir / "a.fvecs", XvecsKind::Fvecs), m);
  EXPECT_EQ(load_xvecs(dir / "a.bvecs", XvecsKind::Bvecs), m);
  write_ivecs(dir / "a.ivecs", {{1, 2}, {3, 4}});
  EXPECT_EQ(load_ivecs(dir / "a.ivecs"), (std::vector<std::vector<std::int32_t>>{{1, 2}, {3, 4}}));
  EXPECT_EQ(xvecs_kind_from_path("x/y.bvecs"), XvecsKind::Bvecs);
  EXPECT_THROW(xvecs_kind_from_path("x/y.txt"), Error);
}

TEST(Xvecs, TruncatedFileRejected) {
  TempDir dir("xv");
  write_raw(dir / "t.fvecs", {4, 0, 0});
  EXPECT_THROW(load_xvecs(dir / "t.fvecs", XvecsKind::Fvecs), FormatError);
}

TEST(BruteForce, HandExamples) {
  VectorDatabase db{Matrix(3, 2, {0, 0, 1, 0, 3, 0}), Metric::L2};
  const std::vector<float> q = {0.9f, 0.0f};
  EXPECT_EQ(brute_force_knn(db, q, 1), (std::vector<NodeId>{1}));
  EXPECT_EQ(brute_force_knn(db, q, 3), (std::vector<NodeId>{1, 0, 2}));
}

TEST(BruteForce, MatchesIndependentScan) {
  VectorDatabase db{test::gaussian_matrix(200, 16, 5), Metric::L2};
  const Matrix qs = test::gaussian_matrix(20, 16, 6);
  for (std::size_t i = 0; i < qs.rows(); ++i) {
    EXPECT_EQ(brute_force_knn(db, qs.row(i), 10), reference_knn(db.vectors, qs.row(i), 10)) << "query " << i;
  }
}

TEST(BruteForce, InnerProductPrefersLargerDot) {
  VectorDatabase db{Matrix(3, 2, {1, 0, 2, 0, -1, 0}), Metric::InnerProduct};
  const std::vector<float> q = {1.0f, 0.0f};
  EXPECT_EQ(brute_force_knn(db, q, 3), (std::vector<NodeId>{1, 0, 2}));
}

TEST(Recall, DirectCounts) {
  std::vector<NodeId> truth(10);
  std::iota(truth.begin(), truth.end(), 0);
  EXPECT_DOUBLE_EQ(recall_at_k(truth, truth), 1.0);
  std::vector<NodeId> nine = truth;
  nine.back() = 99;
  EXPECT_DOUBLE_EQ(recall_at_k(nine, truth), 0.9);
  EXPECT_DOUBLE_EQ(recall_at_k({}, truth), 0.0);
}

TEST(Synthetic, Deterministic) {
  const auto a = make_synthetic(1000, 32, 0.9, 7);
  const auto b = make_synthetic(1000, 32, 0.9, 7);
  EXPECT_EQ(a.vectors, b.vectors);
  EXPECT_NE(a.vectors, make_synthetic(1000, 32, 0.9, 8).vectors);
}

TEST(Synthetic, FlatDecayGivesEqualVariances) {
  const std::size_t n = 20000, d = 8;
  const auto db = make_synthetic(n, d, 1.0, 3);
  for (std::size_t j = 0; j < d; ++j) {
    double s = 0.0, s2 = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      s += db.vectors(i, j);
      s2 += static_cast<double>(db.vectors(i, j)) * db.vectors(i, j);
    }
    const double var = s2 / n - (s / n) * (s / n);
    EXPECT_NEAR(var, 1.0, 3.0 / std::sqrt(static_cast<double>(n))) << "axis " << j;
  }
}

TEST(Synthetic, SplitSharesDistribution) {
  auto [db, extra] = make_synthetic_split(500, 50, 16, 0.9, 4);
  EXPECT_EQ(db.size(), 500u);
  EXPECT_EQ(extra.rows(), 50u);
  EXPECT_EQ(extra.cols(), 16u);
}

TEST(Database, ValidateRejectsNonFinite) {
  VectorDatabase db{Matrix(2, 2, {0, 1, std::nanf(""), 0}), Metric::L2};
  EXPECT_THROW(db.validate(), Error);
  EXPECT_THROW((VectorDatabase{Matrix{}, Metric::L2}.validate()), Error);
}

TEST(Shuffle, IsPermutation) {
  auto ids = shuffled_ids(100, 9);
  std::sort(ids.begin(), ids.end());
  for (NodeId i = 0; i < 100; ++i) EXPECT_EQ(ids[i], i);
}
