#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <set>

#include "hybridivf/clustering.hpp"
#include "testutil.hpp"

namespace hybridivf {
namespace {

using testing::random_matrix;

FloatMatrix two_blobs(std::size_t per_blob, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> nd(0.0f, 1.0f);
  FloatMatrix m(2 * per_blob, 2);
  for (std::size_t i = 0; i < m.rows(); ++i) {
    const float c = i < per_blob ? 0.0f : 10.0f;
    m.row(i)[0] = c + nd(rng);
    m.row(i)[1] = c + nd(rng);
  }
  return m;
}

std::size_t exhaustive_argmin(std::span<const float> v, const CentroidSet& cs) {
  std::size_t best = 0;
  float best_d = std::numeric_limits<float>::infinity();
  for (std::size_t c = 0; c < cs.k(); ++c) {
    const float d = distance(v, cs.centroids.row(c), cs.metric);
    if (d < best_d) {
      best_d = d;
      best = c;
    }
  }
  return best;
}

// Independent oracle: plain Lloyd from uniformly sampled initial points,
// restarted many times; returns the lowest within-cluster sum of squares.
double best_of_restarts(const FloatMatrix& data, std::size_t k, int restarts) {
  double best = std::numeric_limits<double>::infinity();
  std::mt19937_64 rng(99);
  for (int r = 0; r < restarts; ++r) {
    std::vector<std::vector<double>> c(k);
    std::uniform_int_distribution<std::size_t> pick(0, data.rows() - 1);
    for (auto& ci : c) {
      const auto row = data.row(pick(rng));
      ci.assign(row.begin(), row.end());
    }
    std::vector<std::size_t> a(data.rows());
    double sse = 0;
    for (int it = 0; it < 100; ++it) {
      sse = 0;
      for (std::size_t i = 0; i < data.rows(); ++i) {
        double bd = std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < k; ++j) {
          double d = 0;
          for (std::size_t t = 0; t < data.cols(); ++t) d += (data.row(i)[t] - c[j][t]) * (data.row(i)[t] - c[j][t]);
          if (d < bd) {
            bd = d;
            a[i] = j;
          }
        }
        sse += bd;
      }
      std::vector<std::vector<double>> sum(k, std::vector<double>(data.cols(), 0.0));
      std::vector<std::size_t> cnt(k, 0);
      for (std::size_t i = 0; i < data.rows(); ++i) {
        ++cnt[a[i]];
        for (std::size_t t = 0; t < data.cols(); ++t) sum[a[i]][t] += data.row(i)[t];
      }
      for (std::size_t j = 0; j < k; ++j) {
        if (cnt[j] == 0) continue;
        for (std::size_t t = 0; t < data.cols(); ++t) c[j][t] = sum[j][t] / static_cast<double>(cnt[j]);
      }
    }
    best = std::min(best, sse);
  }
  return best;
}

TEST(DefaultK, Heuristic) {
  EXPECT_EQ(default_k(500000), 500U);
  EXPECT_EQ(default_k(1), 1U);
  EXPECT_EQ(default_k(1000), 1U);
  EXPECT_EQ(default_k(20000), 20U);
  EXPECT_EQ(default_k(1000000), 1000U);
  EXPECT_EQ(default_k(1000000000), 31623U);
  EXPECT_EQ(default_k(1500), 2U);
  for (std::size_t n : {1U, 2U, 5U, 499U, 999U}) EXPECT_LE(default_k(n), n);
}

TEST(SampleRows, SortedDistinctDeterministic) {
  const auto s = sample_rows(1000, 100, 4);
  EXPECT_EQ(s.size(), 100U);
  EXPECT_TRUE(std::is_sorted(s.begin(), s.end()));
  EXPECT_EQ(std::set<std::size_t>(s.begin(), s.end()).size(), 100U);
  EXPECT_LT(s.back(), 1000U);
  EXPECT_EQ(s, sample_rows(1000, 100, 4));
  EXPECT_NE(s, sample_rows(1000, 100, 5));
}

TEST(TrainKMeans, SingleClusterIsMean) {
  std::mt19937_64 rng(1);
  const FloatMatrix data = random_matrix(257, 5, rng);
  for (KMeansMode mode : {KMeansMode::kLloyd, KMeansMode::kMiniBatch}) {
    KMeansParams p{.k = 1, .metric = Metric::kEuclidean, .mode = mode, .seed = 2};
    const auto res = train_kmeans(data, p);
    if (mode == KMeansMode::kMiniBatch) continue;  // mini-batch only approaches the mean
    for (std::size_t t = 0; t < data.cols(); ++t) {
      double mean = 0;
      for (std::size_t i = 0; i < data.rows(); ++i) mean += data.row(i)[t];
      mean /= static_cast<double>(data.rows());
      EXPECT_NEAR(res.centroids.centroids.row(0)[t], mean, 1e-5);
    }
  }
}

TEST(TrainKMeans, DistinctPointsAreFixedPoint) {
  std::mt19937_64 rng(8);
  const FloatMatrix data = random_matrix(12, 3, rng);
  const auto res = train_kmeans(data, {.k = 12, .metric = Metric::kEuclidean, .seed = 3});
  std::multiset<std::vector<float>> want, got;
  for (std::size_t i = 0; i < 12; ++i) {
    want.emplace(data.row(i).begin(), data.row(i).end());
    got.emplace(res.centroids.centroids.row(i).begin(), res.centroids.centroids.row(i).end());
  }
  EXPECT_EQ(got, want);
}

TEST(TrainKMeans, BlobsNearBestOfRestarts) {
  const FloatMatrix data = two_blobs(200, 17);
  const double oracle = best_of_restarts(data, 2, 20);
  const auto res = train_kmeans(data, {.k = 2, .metric = Metric::kEuclidean, .seed = 1});
  const double got = inertia(data, res.centroids, assign(data, res.centroids));
  EXPECT_LE(got, oracle * 1.05);

  const auto mb = train_kmeans(
      data, {.k = 2, .metric = Metric::kEuclidean, .mode = KMeansMode::kMiniBatch, .seed = 1, .batch_size = 64});
  EXPECT_LE(inertia(data, mb.centroids, assign(data, mb.centroids)), oracle * 1.05);
}

TEST(TrainKMeans, LloydInertiaNonIncreasing) {
  std::mt19937_64 rng(21);
  const FloatMatrix data = random_matrix(3000, 8, rng);
  const auto res = train_kmeans(data, {.k = 30, .metric = Metric::kEuclidean, .seed = 9, .max_iters = 60});
  ASSERT_GE(res.inertia_history.size(), 2U);
  for (std::size_t t = 1; t < res.inertia_history.size(); ++t) {
    EXPECT_LE(res.inertia_history[t], res.inertia_history[t - 1] + 1e-6) << "iteration " << t;
  }
}

TEST(TrainKMeans, DeterministicPerSeed) {
  std::mt19937_64 rng(2);
  const FloatMatrix data = random_matrix(1500, 6, rng, true);
  for (KMeansMode mode : {KMeansMode::kLloyd, KMeansMode::kMiniBatch}) {
    KMeansParams p{.k = 10, .metric = Metric::kCosine, .mode = mode, .seed = 77, .batch_size = 128};
    const auto a = train_kmeans(data, p);
    const auto b = train_kmeans(data, p);
    EXPECT_EQ(a.centroids.centroids, b.centroids.centroids);
    p.seed = 78;
    EXPECT_NE(train_kmeans(data, p).centroids.centroids, a.centroids.centroids);
  }
}

TEST(TrainKMeans, CosineCentroidsAreUnit) {
  std::mt19937_64 rng(6);
  const FloatMatrix data = random_matrix(800, 16, rng, true);
  for (KMeansMode mode : {KMeansMode::kLloyd, KMeansMode::kMiniBatch}) {
    const auto res = train_kmeans(data, {.k = 8, .metric = Metric::kCosine, .mode = mode, .seed = 1});
    for (std::size_t c = 0; c < res.centroids.k(); ++c) {
      EXPECT_NEAR(squared_norm(res.centroids.centroids.row(c)), 1.0, 1e-5);
    }
  }
}

TEST(TrainKMeans, DuplicatesNeverProduceNaN) {
  FloatMatrix data(40, 2);
  for (std::size_t i = 0; i < data.rows(); ++i) {
    data.row(i)[0] = static_cast<float>(i % 3);
    data.row(i)[1] = 1.0f;
  }
  for (KMeansMode mode : {KMeansMode::kLloyd, KMeansMode::kMiniBatch}) {
    const auto res = train_kmeans(data, {.k = 6, .metric = Metric::kEuclidean, .mode = mode, .seed = 4});
    EXPECT_TRUE(all_finite(res.centroids.centroids.data()));
    EXPECT_EQ(res.centroids.k(), 6U);
  }
}

TEST(TrainKMeans, RejectsBadArguments) {
  FloatMatrix data(5, 2);
  EXPECT_THROW(train_kmeans(data, {.k = 6}), UsageError);
  EXPECT_THROW(train_kmeans(data, {.k = 0}), UsageError);
  EXPECT_THROW(train_kmeans(FloatMatrix(0, 2), {.k = 1}), UsageError);
}

TEST(Assign, Examples) {
  CentroidSet cs{FloatMatrix(std::vector<float>{0, 0, 10, 10}, 2), Metric::kEuclidean, 0};
  const std::vector<float> p{1, 1};
  EXPECT_EQ(nearest_cell(p, cs), 0U);

  FloatMatrix c(6, 2);
  for (std::size_t i = 0; i < 6; ++i) {
    c.row(i)[0] = 100.0f + static_cast<float>(i);
    c.row(i)[1] = 100.0f;
  }
  c.row(2)[0] = 1.0f, c.row(2)[1] = 0.0f;
  c.row(5)[0] = -1.0f, c.row(5)[1] = 0.0f;
  CentroidSet tie{c, Metric::kEuclidean, 0};
  const std::vector<float> origin{0, 0};
  EXPECT_EQ(nearest_cell(origin, tie), 2U);
  EXPECT_EQ(assign(FloatMatrix(origin, 2), tie), (std::vector<CellId>{2}));
}

TEST(Assign, MatchesExhaustiveArgmin) {
  std::mt19937_64 rng(31);
  for (Metric metric : {Metric::kEuclidean, Metric::kCosine}) {
    const FloatMatrix data = random_matrix(1000, 12, rng, true);
    const CentroidSet cs{random_matrix(37, 12, rng, true), metric, 0};
    for (std::size_t threads : {1U, 3U}) {
      const auto cells = assign(data, cs, threads);
      ASSERT_EQ(cells.size(), data.rows());
      for (std::size_t i = 0; i < data.rows(); ++i) {
        ASSERT_EQ(cells[i], exhaustive_argmin(data.row(i), cs)) << "row " << i;
      }
    }
  }
}

TEST(Assign, DimensionMismatch) {
  const CentroidSet cs{FloatMatrix(2, 3), Metric::kEuclidean, 0};
  EXPECT_THROW(assign(FloatMatrix(4, 2), cs), UsageError);
}

TEST(NearestCells, OrderedPrefixOfFullSort) {
  std::mt19937_64 rng(12);
  const CentroidSet cs{random_matrix(64, 10, rng, true), Metric::kCosine, 0};
  const FloatMatrix q = random_matrix(1, 10, rng, true);
  std::vector<std::pair<float, CellId>> all;
  for (CellId c = 0; c < 64; ++c) all.emplace_back(distance(q.row(0), cs.centroids.row(c), cs.metric), c);
  std::sort(all.begin(), all.end());
  const auto top7 = nearest_cells(q.row(0), cs, 7);
  ASSERT_EQ(top7.size(), 7U);
  for (std::size_t i = 0; i < 7; ++i) EXPECT_EQ(top7[i], all[i].second);
  EXPECT_EQ(nearest_cells(q.row(0), cs, 500).size(), 64U);
  EXPECT_EQ(nearest_cells(cs.centroids.row(5), cs, 1).front(), 5U);
}

}  // namespace
}  // namespace hybridivf
