#include <gtest/gtest.h>

#include <fstream>
#include <thread>

#include "hybridivf/index.hpp"
#include "hybridivf/search.hpp"
#include "testutil.hpp"

namespace hybridivf {
namespace {

namespace fs = std::filesystem;
using testing::TempDir;

struct Dataset {
  FloatMatrix vectors;
  AttrMatrix attrs;
};

Dataset make_dataset(std::size_t n, std::size_t d, std::size_t m, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return {testing::random_matrix(n, d, rng, true), testing::random_attrs(n, m, rng, -100, 100)};
}

std::vector<char> bytes_of(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void poke(const fs::path& p, std::size_t offset, char value) {
  std::fstream f(p, std::ios::in | std::ios::out | std::ios::binary);
  f.seekp(static_cast<std::streamoff>(offset));
  f.put(value);
}

CellId exhaustive_cell(std::span<const float> v, const CentroidSet& cs) {
  CellId best = 0;
  for (CellId c = 1; c < cs.k(); ++c) {
    if (distance(v, cs.centroids.row(c), cs.metric) < distance(v, cs.centroids.row(best), cs.metric)) best = c;
  }
  return best;
}

TEST(Build, DefaultKOnSmallDataset) {
  TempDir dir("idx");
  const auto ds = make_dataset(1000, 8, 2, 1);
  const auto m = HybridIndex::build(ds.vectors, ds.attrs, {}, dir.path());
  EXPECT_EQ(m.num_lists, 1U);
  EXPECT_EQ(m.lists.at(0).count, 1000U);
  for (const char* f : {"manifest.json", "centroids.bin", "lists.bin", "codebook.json"}) {
    EXPECT_TRUE(fs::exists(dir / f)) << f;
  }
}

TEST(Build, ConservationAndVoronoi) {
  TempDir dir("idx");
  const auto ds = make_dataset(5000, 16, 3, 2);
  BuildParams p;
  p.num_lists = 50;
  p.seed = 4;
  const auto m = HybridIndex::build(ds.vectors, ds.attrs, p, dir.path());
  std::uint64_t total = 0;
  for (const auto& e : m.lists) total += e.total();
  EXPECT_EQ(total, 5000U);
  EXPECT_DOUBLE_EQ(m.mean_list_size(), 100.0);

  auto index = HybridIndex::open(dir.path());
  const auto snap = index->snapshot();
  std::vector<bool> seen(5000, false);
  for (CellId c = 0; c < snap->num_lists(); ++c) {
    const ListView& lv = snap->list(c);
    for (std::size_t r = 0; r < lv.size(); ++r) {
      const RecordId id = lv.ids[r];
      ASSERT_FALSE(seen[id]);
      seen[id] = true;
      EXPECT_EQ(exhaustive_cell(ds.vectors.row(id), snap->centroids()), c);
      EXPECT_EQ(lv.attrs.row(r), std::vector<std::int64_t>(ds.attrs.row(id).begin(), ds.attrs.row(id).end()));
    }
  }
}

TEST(Build, RejectsBadInput) {
  TempDir dir("idx");
  const auto ds = make_dataset(100, 4, 2, 3);
  BuildParams p;
  p.num_lists = 101;
  EXPECT_THROW(HybridIndex::build(ds.vectors, ds.attrs, p, dir.path()), UsageError);
  p.num_lists = 5;
  EXPECT_THROW(HybridIndex::build(ds.vectors, AttrMatrix(99, 2), p, dir.path()), UsageError);
  FloatMatrix zero(100, 4);
  EXPECT_THROW(HybridIndex::build(zero, ds.attrs, p, dir.path()), UsageError);
  p.metric = Metric::kEuclidean;
  EXPECT_NO_THROW(HybridIndex::build(zero, ds.attrs, p, dir.path()));
}

TEST(Build, DeterministicFiles) {
  TempDir a("idx"), b("idx");
  const auto ds = make_dataset(3000, 12, 2, 5);
  BuildParams p;
  p.num_lists = 20;
  p.seed = 99;
  HybridIndex::build(ds.vectors, ds.attrs, p, a.path());
  p.threads = 3;
  HybridIndex::build(ds.vectors, ds.attrs, p, b.path());
  EXPECT_EQ(bytes_of(a / "centroids.bin"), bytes_of(b / "centroids.bin"));
  EXPECT_EQ(bytes_of(a / "lists.bin"), bytes_of(b / "lists.bin"));
}

TEST(Build, TrainSampleAndMiniBatch) {
  TempDir dir("idx");
  const auto ds = make_dataset(4000, 8, 1, 6);
  BuildParams p;
  p.num_lists = 16;
  p.kmeans_mode = KMeansMode::kMiniBatch;
  p.train_sample = 1000;
  const auto m = HybridIndex::build(ds.vectors, ds.attrs, p, dir.path());
  EXPECT_EQ(m.build.trained_on, 1000U);
  EXPECT_EQ(m.num_records, 4000U);
  p.train_sample = 10;
  EXPECT_THROW(HybridIndex::build(ds.vectors, ds.attrs, p, dir.path()), UsageError);
}

class OpenedIndex : public ::testing::Test {
 protected:
  void SetUp() override {
    ds_ = make_dataset(2000, 16, 2, 7);
    BuildParams p;
    p.num_lists = 10;
    p.seed = 1;
    HybridIndex::build(ds_.vectors, ds_.attrs, p, dir_.path());
    prepare_for_storage(ds_.vectors, Metric::kCosine);
  }

  TempDir dir_{"idx"};
  Dataset ds_;
};

TEST_F(OpenedIndex, OpenIsLazy) {
  auto index = HybridIndex::open(dir_.path());
  EXPECT_EQ(index->load_stats(), LoadStats{});
  EXPECT_EQ(index->num_lists(), 10U);
  EXPECT_EQ(index->size(), 2000U);
}

TEST_F(OpenedIndex, ProbeCountBoundsListsLoaded) {
  auto index = HybridIndex::open(dir_.path());
  Query q;
  q.vector.assign(ds_.vectors.row(0).begin(), ds_.vectors.row(0).end());
  q.probes = 3;
  const auto r = search(*index, q);
  EXPECT_EQ(r.load.lists_loaded, 3U);
  EXPECT_EQ(index->load_stats().lists_loaded, 3U);
}

TEST_F(OpenedIndex, LoadSelectors) {
  auto index = HybridIndex::open(dir_.path());
  const auto snap = index->snapshot();
  const ListView& lv = snap->list(4);
  ASSERT_GT(lv.size(), 2U);

  const FloatMatrix none = index->load_list_vectors(4, Bitmask(lv.size(), false));
  EXPECT_EQ(none.rows(), 0U);
  EXPECT_EQ(index->load_stats().vector_rows_read, 0U);
  EXPECT_EQ(index->load_stats().lists_loaded, 0U);

  const FloatMatrix full = index->load_list_vectors(4, Bitmask(lv.size(), true));
  ASSERT_EQ(full.rows(), lv.size());
  EXPECT_EQ(index->load_stats().vector_rows_read, lv.size());
  for (std::size_t r = 0; r < lv.size(); ++r) {
    const auto want = ds_.vectors.row(lv.ids[r]);
    ASSERT_TRUE(std::equal(want.begin(), want.end(), full.row(r).begin()));
  }

  std::mt19937_64 rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    Bitmask sel(lv.size());
    for (std::size_t r = 0; r < lv.size(); ++r) sel.set(r, rng() % 3 == 0);
    index->reset_load_stats();
    const FloatMatrix got = index->load_list_vectors(4, sel);
    ASSERT_EQ(got.rows(), sel.count());
    EXPECT_EQ(index->load_stats().vector_rows_read, sel.count());
    std::size_t j = 0;
    for (std::size_t r = 0; r < lv.size(); ++r) {
      if (!sel.test(r)) continue;
      ASSERT_TRUE(std::equal(full.row(r).begin(), full.row(r).end(), got.row(j++).begin()));
    }
  }
  EXPECT_THROW(index->load_list_vectors(10, Bitmask(1)), UsageError);
  EXPECT_THROW(index->load_list_vectors(4, Bitmask(lv.size() + 1)), UsageError);
}

TEST_F(OpenedIndex, TamperedFilesRefuseToOpen) {
  poke(dir_ / "centroids.bin", 0, 'X');
  EXPECT_THROW(HybridIndex::open(dir_.path()), IoError);
  poke(dir_ / "centroids.bin", 0, 'H');
  EXPECT_NO_THROW(HybridIndex::open(dir_.path()));
  poke(dir_ / "lists.bin", 1, 'X');
  EXPECT_THROW(HybridIndex::open(dir_.path()), IoError);
  poke(dir_ / "lists.bin", 1, 'I');
  std::ofstream(dir_ / "manifest.json") << "{ not json";
  EXPECT_THROW(HybridIndex::open(dir_.path()), IoError);
  EXPECT_THROW(HybridIndex::open(dir_ / "absent"), IoError);
}

TEST_F(OpenedIndex, TruncatedListsFile) {
  fs::resize_file(dir_ / "lists.bin", fs::file_size(dir_ / "lists.bin") - 4);
  EXPECT_THROW(HybridIndex::open(dir_.path()), IoError);
}

TEST_F(OpenedIndex, AddVectorContract) {
  auto ro = HybridIndex::open(dir_.path());
  const std::vector<float> v(16, 0.25f);
  const std::vector<std::int64_t> a{1, 2};
  EXPECT_THROW(ro->add_vector(v, a), UsageError);

  auto index = HybridIndex::open(dir_.path(), {.writable = true});
  EXPECT_THROW(index->add_vector(std::vector<float>(15, 1.0f), a), UsageError);
  EXPECT_THROW(index->add_vector(v, std::vector<std::int64_t>{1}), UsageError);

  const auto c3 = index->snapshot()->centroids().centroids.row(3);
  const auto [id, cell] = index->add_vector(c3, a);
  EXPECT_EQ(id, 2000U);
  EXPECT_EQ(cell, 3U);
  EXPECT_EQ(index->size(), 2001U);

  Query q;
  q.vector.assign(c3.begin(), c3.end());
  q.k = 1;
  q.probes = 1;
  q.filter = parse_filter("a0 = 1 AND a1 = 2", 2);
  auto r = search(*index, q);
  ASSERT_EQ(r.neighbors.size(), 1U);
  EXPECT_EQ(r.neighbors[0].id, 2000U);
  EXPECT_LE(r.neighbors[0].distance, 1e-5);

  // Durable without flush.
  index.reset();
  auto reopened = HybridIndex::open(dir_.path(), {.writable = true});
  EXPECT_EQ(reopened->size(), 2001U);
  EXPECT_EQ(search(*reopened, q).neighbors, r.neighbors);
  const auto [id2, cell2] = reopened->add_vector(v, a);
  EXPECT_EQ(id2, 2001U);
  EXPECT_EQ(reopened->list_sizes()[cell2], reopened->manifest().lists[cell2].total());
}

TEST_F(OpenedIndex, FlushCompactsSegments) {
  auto index = HybridIndex::open(dir_.path(), {.writable = true});
  std::mt19937_64 rng(9);
  const FloatMatrix extra = testing::random_matrix(30, 16, rng, true);
  for (std::size_t i = 0; i < extra.rows(); ++i) {
    index->add_vector(extra.row(i), std::vector<std::int64_t>{static_cast<std::int64_t>(i), 0});
  }
  Query q;
  q.vector.assign(extra.row(5).begin(), extra.row(5).end());
  q.probes = 10;
  q.k = 20;
  const auto before = search(*index, q).neighbors;
  const auto gen = index->manifest().generation;
  index->flush();
  EXPECT_EQ(index->manifest().generation, gen + 1);
  for (const auto& e : index->manifest().lists) EXPECT_EQ(e.segment_count, 0U);
  EXPECT_FALSE(fs::exists(segment_path(dir_.path(), 0)) && fs::file_size(segment_path(dir_.path(), 0)) > 0);
  EXPECT_EQ(search(*index, q).neighbors, before);
  index.reset();
  auto reopened = HybridIndex::open(dir_.path());
  EXPECT_EQ(reopened->size(), 2030U);
  EXPECT_EQ(search(*reopened, q).neighbors, before);
}

TEST_F(OpenedIndex, ReopenGivesIdenticalResults) {
  std::vector<std::vector<Neighbor>> first;
  {
    auto index = HybridIndex::open(dir_.path());
    for (std::size_t i = 0; i < 20; ++i) {
      Query q;
      q.vector.assign(ds_.vectors.row(i * 7).begin(), ds_.vectors.row(i * 7).end());
      q.filter = parse_filter("a0 > 0", 2);
      first.push_back(search(*index, q).neighbors);
    }
  }
  auto index = HybridIndex::open(dir_.path(), {.cache_blocks = 3});
  for (int pass = 0; pass < 2; ++pass) {
    for (std::size_t i = 0; i < 20; ++i) {
      Query q;
      q.vector.assign(ds_.vectors.row(i * 7).begin(), ds_.vectors.row(i * 7).end());
      q.filter = parse_filter("a0 > 0", 2);
      EXPECT_EQ(search(*index, q).neighbors, first[i]);
    }
  }
}

TEST_F(OpenedIndex, ReadersDuringWrites) {
  auto index = HybridIndex::open(dir_.path(), {.writable = true});
  std::atomic<bool> stop{false};
  std::atomic<int> failures{0};
  std::jthread reader([&] {
    Query q;
    q.vector.assign(ds_.vectors.row(1).begin(), ds_.vectors.row(1).end());
    q.probes = 10;
    while (!stop) {
      const auto r = search(*index, q);
      if (r.neighbors.empty() || r.neighbors[0].id != 1) ++failures;
    }
  });
  std::mt19937_64 rng(4);
  const FloatMatrix extra = testing::random_matrix(40, 16, rng, true);
  for (std::size_t i = 0; i < extra.rows(); ++i) {
    index->add_vector(extra.row(i), std::vector<std::int64_t>{0, 0});
    if (i == 20) index->flush();
  }
  stop = true;
  reader.join();
  EXPECT_EQ(failures, 0);
  EXPECT_EQ(index->size(), 2040U);
}

TEST(Manifest, JsonRoundTripAndValidation) {
  TempDir dir("idx");
  const auto ds = make_dataset(500, 4, 1, 8);
  BuildParams p;
  p.num_lists = 5;
  const auto m = HybridIndex::build(ds.vectors, ds.attrs, p, dir.path());
  EXPECT_EQ(IndexManifest::from_json(m.to_json()), m);
  IndexManifest bad = m;
  bad.lists[0].count += 1;
  EXPECT_THROW(bad.validate(), IoError);
  bad = m;
  bad.lists[1].ids_offset = bad.lists[0].ids_offset;
  EXPECT_THROW(bad.validate(), IoError);
}

}  // namespace
}  // namespace hybridivf
