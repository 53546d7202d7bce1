#include <gtest/gtest.h>

#include <set>

#include "hybridivf/oracle.hpp"
#include "hybridivf/search.hpp"
#include "testutil.hpp"

namespace hybridivf {
namespace {

using testing::TempDir;

class SearchFixture : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new TempDir("search");
    data_ = new SyntheticData(gen_synthetic({.n = 6000, .d = 24, .m = 3, .seed = 11}));
    BuildParams p;
    p.num_lists = 40;
    p.seed = 2;
    HybridIndex::build(data_->vectors, data_->attrs, p, dir_->path());
    index_ = HybridIndex::open(dir_->path()).release();
  }
  static void TearDownTestSuite() {
    delete index_;
    delete data_;
    delete dir_;
  }

  static Query query_for(std::size_t i, std::size_t k, std::size_t probes, const char* filter) {
    Query q;
    const auto row = data_->vectors.row(i);
    q.vector.assign(row.begin(), row.end());
    q.vector[0] += 0.05f;
    q.k = k;
    q.probes = probes;
    if (filter != nullptr) q.filter = parse_filter(filter, 3);
    return q;
  }

  static TempDir* dir_;
  static SyntheticData* data_;
  static HybridIndex* index_;
};

TempDir* SearchFixture::dir_ = nullptr;
SyntheticData* SearchFixture::data_ = nullptr;
HybridIndex* SearchFixture::index_ = nullptr;

TEST_F(SearchFixture, FullProbeEqualsBruteForce) {
  for (const char* filter : {static_cast<const char*>(nullptr), "a0 >= 0", "a1 BETWEEN -10000 AND 5000 OR a2 < -30000"}) {
    for (std::size_t i = 0; i < 30; ++i) {
      const Query q = query_for(i * 131, 10, 40, filter);
      const auto got = search(*index_, q);
      const auto want = exact_filtered_knn(data_->vectors, data_->attrs, q, Metric::kCosine);
      ASSERT_EQ(got.neighbors.size(), want.neighbors.size());
      for (std::size_t j = 0; j < got.neighbors.size(); ++j) {
        EXPECT_EQ(got.neighbors[j].id, want.neighbors[j].id);
        EXPECT_NEAR(got.neighbors[j].distance, want.neighbors[j].distance, 1e-5);
      }
      EXPECT_FALSE(got.partial);
    }
  }
}

TEST_F(SearchFixture, ResultInvariants) {
  for (std::size_t i = 0; i < 50; ++i) {
    const Query q = query_for(i * 17, 25, 1 + i % 10, "a0 > 1000 AND NOT a1 IN (1, 2, 3)");
    const auto r = search(*index_, q);
    EXPECT_LE(r.neighbors.size(), 25U);
    EXPECT_TRUE(std::is_sorted(r.neighbors.begin(), r.neighbors.end(), neighbor_less));
    std::set<RecordId> ids;
    std::vector<float> query = q.vector;
    normalize_inplace(query);
    for (const auto& n : r.neighbors) {
      EXPECT_TRUE(ids.insert(n.id).second);
      EXPECT_TRUE(eval_filter(*q.filter, data_->attrs.row(n.id)));
      EXPECT_NEAR(n.distance, distance(query, data_->vectors.row(n.id), Metric::kCosine), 1e-5);
    }
    EXPECT_LE(r.load.lists_loaded, q.probes);
    EXPECT_LE(r.load.vector_rows_read, r.candidates);
    EXPECT_GE(r.timings.total, r.timings.centroid_search + r.timings.filtering + r.timings.detailed_search);
  }
}

TEST_F(SearchFixture, ZeroSurvivorsLoadsNothing) {
  index_->reset_load_stats();
  const Query q = query_for(3, 10, 40, "a0 > 40000");
  const auto r = search(*index_, q);
  EXPECT_TRUE(r.neighbors.empty());
  EXPECT_TRUE(r.partial);
  EXPECT_EQ(r.load.vector_rows_read, 0U);
  EXPECT_EQ(r.load.lists_loaded, 0U);
  EXPECT_EQ(index_->load_stats().vector_rows_read, 0U);
}

TEST_F(SearchFixture, PartialWhenFewSurvivors) {
  const Query q = query_for(3, 10, 2, "a0 = 17 OR a0 = 18");
  const auto r = search(*index_, q);
  EXPECT_EQ(r.partial, r.candidates < 10);
  EXPECT_EQ(r.neighbors.size(), std::min<std::size_t>(10, r.candidates));
}

TEST_F(SearchFixture, ValidationErrors) {
  Query q = query_for(0, 10, 7, nullptr);
  q.k = 0;
  EXPECT_THROW(search(*index_, q), UsageError);
  q.k = 1;
  q.probes = 0;
  EXPECT_THROW(search(*index_, q), UsageError);
  q.probes = 7;
  q.vector.pop_back();
  EXPECT_THROW(search(*index_, q), UsageError);
  q = query_for(0, 10, 7, nullptr);
  q.filter = FilterExpr::leaf({5, CompareOp::kEq, {1}});
  index_->reset_load_stats();
  EXPECT_THROW(search(*index_, q), UsageError);
  EXPECT_EQ(index_->load_stats(), LoadStats{});
}

TEST_F(SearchFixture, ProbesBeyondKAreClamped) {
  const Query q = query_for(9, 10, 1000, "a0 < 0");
  const auto r = search(*index_, q);
  EXPECT_LE(r.load.lists_loaded, 40U);
  EXPECT_EQ(r.neighbors, search(*index_, query_for(9, 10, 40, "a0 < 0")).neighbors);
}

TEST_F(SearchFixture, NearestCentroidsMatchExhaustive) {
  const auto snap = index_->snapshot();
  const auto& cs = snap->centroids();
  const Query q = query_for(77, 1, 1, nullptr);
  std::vector<float> v = normalize(q.vector);
  std::vector<std::pair<float, CellId>> all;
  for (CellId c = 0; c < cs.k(); ++c) all.emplace_back(distance(v, cs.centroids.row(c), cs.metric), c);
  std::sort(all.begin(), all.end());
  const auto got = nearest_centroids(*index_, q.vector, 7);
  for (std::size_t i = 0; i < 7; ++i) EXPECT_EQ(got[i], all[i].second);
  EXPECT_EQ(nearest_centroids(*index_, cs.centroids.row(5), 1).front(), 5U);
  EXPECT_EQ(nearest_centroids(*index_, q.vector, 40).size(), 40U);
}

TEST_F(SearchFixture, BatchMatchesSequentialAtAnyParallelism) {
  std::vector<Query> queries;
  for (std::size_t i = 0; i < 64; ++i) queries.push_back(query_for(i * 89, 10, 7, i % 2 ? "a2 >= -5000" : nullptr));
  queries[10].k = 0;  // one bad slot must not abort the batch
  const auto p1 = search_batch(*index_, queries, 1);
  const auto p8 = search_batch(*index_, queries, 8);
  ASSERT_EQ(p1.size(), 64U);
  for (std::size_t i = 0; i < queries.size(); ++i) {
    if (i == 10) {
      EXPECT_FALSE(p1[i].result.has_value());
      EXPECT_TRUE(p1[i].usage_error);
      EXPECT_FALSE(p8[i].result.has_value());
      continue;
    }
    ASSERT_TRUE(p1[i].result && p8[i].result);
    EXPECT_EQ(p1[i].result->neighbors, p8[i].result->neighbors);
    EXPECT_EQ(p1[i].result->neighbors, search(*index_, queries[i]).neighbors);
  }
  EXPECT_THROW(search_batch(*index_, queries, 0), UsageError);
}

TEST(QueryJson, ParseAndEmit) {
  const auto j = nlohmann::json::parse(R"({"vector":[1,2],"filter":"a0 >= 1","k":3,"probes":4})");
  const Query q = query_from_json(j, 2);
  EXPECT_EQ(q.vector, (std::vector<float>{1, 2}));
  EXPECT_EQ(q.k, 3U);
  EXPECT_EQ(q.probes, 4U);
  ASSERT_TRUE(q.filter);
  EXPECT_EQ(to_string(*q.filter), "a0 >= 1");

  const Query d = query_from_json(nlohmann::json::parse(R"({"vector":[1]})"), 1);
  EXPECT_EQ(d.probes, kDefaultProbes);
  EXPECT_EQ(d.k, 10U);
  EXPECT_FALSE(d.filter);

  EXPECT_THROW(query_from_json(nlohmann::json::parse(R"({"k":3})"), 1), UsageError);
  EXPECT_THROW(query_from_json(nlohmann::json::parse(R"({"vector":[1],"k":0})"), 1), UsageError);
  EXPECT_THROW(query_from_json(nlohmann::json::parse(R"({"vector":[1],"filter":"a3 = 1"})"), 1), UsageError);

  SearchResult r;
  r.neighbors = {{4, 0.5f}};
  const auto out = result_to_json(r);
  EXPECT_EQ(out["neighbors"][0]["id"], 4);
  for (const char* key : {"centroid_search", "filtering", "detailed_search", "total"}) {
    EXPECT_TRUE(out["timings"].contains(key)) << key;
  }
  EXPECT_FALSE(out["partial"].get<bool>());
}

}  // namespace
}  // namespace hybridivf
