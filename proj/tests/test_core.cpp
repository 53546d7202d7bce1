#include <gtest/gtest.h>

#include <cmath>

#include "hybridivf/core.hpp"
#include "testutil.hpp"

namespace hybridivf {
namespace {

using testing::random_matrix;

// Plain float-free reference: accumulate in long double, one element at a time.
double reference_distance(std::span<const float> a, std::span<const float> b, Metric m) {
  long double acc = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (m == Metric::kEuclidean) {
      const long double d = static_cast<long double>(a[i]) - b[i];
      acc += d * d;
    } else {
      acc += static_cast<long double>(a[i]) * b[i];
    }
  }
  return m == Metric::kEuclidean ? std::sqrt(static_cast<double>(acc))
                                 : std::max(0.0, 1.0 - static_cast<double>(acc));
}

TEST(Distance, Examples) {
  const std::vector<float> o{0, 0}, p{3, 4}, x{1, 0}, y{0, 1};
  EXPECT_FLOAT_EQ(distance(o, p, Metric::kEuclidean), 5.0f);
  EXPECT_FLOAT_EQ(distance(x, y, Metric::kCosine), 1.0f);
  const auto v = normalize(std::vector<float>{0.3f, -1.2f, 2.5f});
  EXPECT_NEAR(distance(v, v, Metric::kCosine), 0.0f, 1e-6);
}

TEST(Distance, DimensionMismatchIsUsageError) {
  const std::vector<float> a{1, 2}, b{1, 2, 3};
  EXPECT_THROW(distance(a, b, Metric::kEuclidean), UsageError);
  FloatMatrix block(2, 3);
  EXPECT_THROW(batch_distances(a, block, Metric::kEuclidean), UsageError);
}

TEST(Distance, MatchesHighPrecisionReference) {
  std::mt19937_64 rng(11);
  for (std::size_t d : {1U, 7U, 8U, 9U, 64U, 131U, 768U}) {
    const FloatMatrix m = random_matrix(20, d, rng, true);
    for (std::size_t i = 1; i < m.rows(); ++i) {
      for (Metric metric : {Metric::kEuclidean, Metric::kCosine}) {
        EXPECT_NEAR(distance(m.row(0), m.row(i), metric), reference_distance(m.row(0), m.row(i), metric),
                    1e-6)
            << "d=" << d;
      }
    }
  }
}

TEST(Distance, MetricAxioms) {
  std::mt19937_64 rng(5);
  const FloatMatrix m = random_matrix(300, 24, rng, true);
  for (std::size_t i = 0; i + 2 < m.rows(); i += 3) {
    const auto a = m.row(i), b = m.row(i + 1), c = m.row(i + 2);
    for (Metric metric : {Metric::kEuclidean, Metric::kCosine}) {
      EXPECT_LE(distance(a, a, metric), 1e-6);
      EXPECT_NEAR(distance(a, b, metric), distance(b, a, metric), 1e-6);
    }
    EXPECT_LE(distance(a, c, Metric::kEuclidean),
              distance(a, b, Metric::kEuclidean) + distance(b, c, Metric::kEuclidean) + 1e-5);
    const float cd = distance(a, b, Metric::kCosine);
    EXPECT_GE(cd, 0.0f);
    EXPECT_LE(cd, 2.0f + 1e-6f);
  }
}

TEST(BatchDistances, Examples) {
  const std::vector<float> q{1, 0};
  FloatMatrix block(std::vector<float>{1, 0, 0, 1}, 2);
  EXPECT_EQ(batch_distances(q, block, Metric::kCosine), (std::vector<float>{0.0f, 1.0f}));
  EXPECT_TRUE(batch_distances(q, FloatMatrix(0, 2), Metric::kCosine).empty());
}

TEST(BatchDistances, BitIdenticalToScalarLoop) {
  std::mt19937_64 rng(3);
  for (std::size_t d : {3U, 16U, 100U}) {
    const FloatMatrix block = random_matrix(100, d, rng, true);
    const FloatMatrix q = random_matrix(1, d, rng, true);
    for (Metric metric : {Metric::kEuclidean, Metric::kCosine}) {
      const auto got = batch_distances(q.row(0), block, metric);
      ASSERT_EQ(got.size(), 100U);
      for (std::size_t i = 0; i < block.rows(); ++i) {
        EXPECT_EQ(got[i], distance(q.row(0), block.row(i), metric));
      }
    }
  }
}

TEST(Normalize, Examples) {
  const auto v = normalize(std::vector<float>{3, 4});
  EXPECT_FLOAT_EQ(v[0], 0.6f);
  EXPECT_FLOAT_EQ(v[1], 0.8f);
  const auto again = normalize(v);
  EXPECT_NEAR(again[0], v[0], 1e-6);
  EXPECT_NEAR(again[1], v[1], 1e-6);
  EXPECT_THROW(normalize(std::vector<float>{0, 0}), UsageError);
}

TEST(PrepareForStorage, CosineRejectsZeroEuclideanAccepts) {
  std::vector<float> z{0, 0, 0};
  EXPECT_NO_THROW(prepare_for_storage(z, Metric::kEuclidean));
  EXPECT_THROW(prepare_for_storage(z, Metric::kCosine), UsageError);
  std::vector<float> nan{1, NAN, 0};
  EXPECT_THROW(prepare_for_storage(nan, Metric::kEuclidean), UsageError);
  std::vector<float> v{0, 2, 0};
  prepare_for_storage(v, Metric::kCosine);
  EXPECT_EQ(v, (std::vector<float>{0, 1, 0}));
}

TEST(Metric, NamesRoundTrip) {
  for (Metric m : {Metric::kEuclidean, Metric::kCosine}) EXPECT_EQ(parse_metric(metric_name(m)), m);
  EXPECT_EQ(parse_metric("L2"), Metric::kEuclidean);
  EXPECT_THROW(parse_metric("manhattan"), UsageError);
}

}  // namespace
}  // namespace hybridivf
