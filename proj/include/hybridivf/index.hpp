#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <span>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "hybridivf/clustering.hpp"
#include "hybridivf/codebook.hpp"
#include "hybridivf/core.hpp"
#include "hybridivf/filters.hpp"
#include "hybridivf/io.hpp"

namespace hybridivf {

// Index directory layout:
//   manifest.json   IndexManifest
//   centroids.bin   "HCEN", u32 version, u32 K, u32 D, K*D float32
//   lists.bin       "HIVF", u32 version, then per cell: ids (u64), attrs (i64, row-major),
//                   vectors (float32, row-major); offsets live in the manifest
//   segments/       list_<cell>.seg append segments:
//                   "HSEG", u32 version, u32 cell, u32 M, u32 D, then rows of
//                   (u64 id, M*i64 attrs, D*float32 vector)
//   codebook.json   AttributeCodebook
// All multi-byte values are little-endian.

inline constexpr std::size_t kListsHeaderBytes = 8;
inline constexpr std::size_t kSegmentHeaderBytes = 20;

struct ListEntry {
  std::uint64_t count = 0;  // rows in the main block
  std::uint64_t ids_offset = 0;
  std::uint64_t attrs_offset = 0;
  std::uint64_t vectors_offset = 0;
  std::uint64_t segment_count = 0;  // rows appended since the last compaction

  std::uint64_t total() const { return count + segment_count; }
  bool operator==(const ListEntry&) const = default;
};

struct BuildInfo {
  std::uint64_t seed = 0;
  KMeansMode kmeans_mode = KMeansMode::kLloyd;
  std::uint64_t iterations = 0;
  std::uint64_t max_iters = 0;
  std::uint64_t batch_size = 0;
  std::uint64_t trained_on = 0;
  std::uint64_t reseeded = 0;

  bool operator==(const BuildInfo&) const = default;
};

struct IndexManifest {
  std::uint32_t format_version = kFormatVersion;
  Metric metric = Metric::kCosine;
  std::uint32_t dim = 0;
  std::uint32_t num_attrs = 0;
  std::uint32_t num_lists = 0;
  std::uint64_t num_records = 0;
  std::uint64_t next_id = 0;
  std::uint64_t generation = 0;  // bumped by every compaction
  std::uint64_t lists_file_size = 0;
  std::string codebook_file = "codebook.json";
  BuildInfo build;
  std::vector<ListEntry> lists;

  /// Structural checks: counts sum to N, blocks inside the file and
  /// non-overlapping. Throws IoError.
  void validate() const;
  double mean_list_size() const;

  nlohmann::json to_json() const;
  static IndexManifest from_json(const nlohmann::json& j);

  bool operator==(const IndexManifest&) const = default;
};

struct LoadStats {
  std::uint64_t lists_loaded = 0;
  std::uint64_t vector_rows_read = 0;
  std::uint64_t bytes_read = 0;

  LoadStats& operator+=(const LoadStats& o) {
    lists_loaded += o.lists_loaded;
    vector_rows_read += o.vector_rows_read;
    bytes_read += o.bytes_read;
    return *this;
  }
  bool operator==(const LoadStats&) const = default;
};

struct BuildParams {
  Metric metric = Metric::kCosine;
  std::optional<std::size_t> num_lists;  // default_k(N) when empty
  KMeansMode kmeans_mode = KMeansMode::kLloyd;
  std::uint64_t seed = 0;
  std::size_t max_iters = 25;
  std::size_t batch_size = 1024;
  /// Train on at most this many rows (seeded sample); 0 trains on all.
  std::size_t train_sample = 0;
  std::size_t threads = 1;
  std::optional<AttributeCodebook> codebook;  // identity codebook when empty
};

struct BuildTimings {
  double train_seconds = 0.0;
  double assign_seconds = 0.0;
  double write_seconds = 0.0;
};

struct OpenOptions {
  bool writable = false;
  /// Capacity in whole vector blocks of the LRU block cache; 0 disables it.
  std::size_t cache_blocks = 0;
};

class VectorBlockCache;

/// Memory-resident part of one inverted list. Immutable once published.
struct ListView {
  std::uint64_t base_rows = 0;
  std::uint64_t vectors_offset = 0;
  std::uint64_t segment_rows = 0;
  std::vector<RecordId> ids;  // base rows, then segment rows
  ColumnarAttributes attrs;

  std::size_t size() const { return ids.size(); }
};

/// A consistent read view of the index. Searches hold one for their whole
/// duration while a writer may publish newer snapshots.
class IndexSnapshot {
 public:
  const CentroidSet& centroids() const { return *centroids_; }
  const ListView& list(CellId cell) const;
  std::size_t num_lists() const { return lists_.size(); }
  std::size_t dim() const { return dim_; }
  std::size_t num_attrs() const { return num_attrs_; }
  std::uint64_t size() const { return num_records_; }
  Metric metric() const { return centroids_->metric; }

  /// Rows of `cell` whose selector bit is set, in list order. Adds the rows
  /// and bytes actually loaded to `stats`.
  FloatMatrix load_vectors(CellId cell, const Bitmask& selector, LoadStats& stats) const;

 private:
  friend class HybridIndex;

  std::shared_ptr<const CentroidSet> centroids_;
  std::shared_ptr<const RandomAccessFile> lists_file_;
  std::vector<std::shared_ptr<const ListView>> lists_;
  std::vector<std::shared_ptr<const RandomAccessFile>> segment_files_;
  std::shared_ptr<VectorBlockCache> cache_;
  std::uint64_t generation_ = 0;
  std::uint64_t num_records_ = 0;
  std::size_t dim_ = 0;
  std::size_t num_attrs_ = 0;
};

/// Disk-resident hybrid IVF-Flat index. Centroids and attributes are held in
/// memory after open(); vector blocks stay on disk until a search loads the
/// rows it needs.
///
/// One writer (add_vector / flush) and any number of concurrent readers.
class HybridIndex {
 public:
  static IndexManifest build(FloatMatrix vectors, const AttrMatrix& attrs, const BuildParams& params,
                             const std::filesystem::path& dir, BuildTimings* timings = nullptr);

  static std::unique_ptr<HybridIndex> open(const std::filesystem::path& dir, OpenOptions options = {});

  ~HybridIndex();
  HybridIndex(const HybridIndex&) = delete;
  HybridIndex& operator=(const HybridIndex&) = delete;

  std::shared_ptr<const IndexSnapshot> snapshot() const;
  IndexManifest manifest() const;
  const AttributeCodebook& codebook() const { return codebook_; }
  const std::filesystem::path& directory() const { return dir_; }

  Metric metric() const { return metric_; }
  std::size_t dim() const { return dim_; }
  std::size_t num_attrs() const { return num_attrs_; }
  std::size_t num_lists() const;
  std::uint64_t size() const;
  std::vector<std::size_t> list_sizes() const;
  bool writable() const { return options_.writable; }

  FloatMatrix load_list_vectors(CellId cell, const Bitmask& selector);

  /// Assigns the record to the nearest existing centroid and appends it to
  /// that list's segment. Returns (id, cell). The manifest is rewritten, so
  /// the record survives a reopen even without flush().
  std::pair<RecordId, CellId> add_vector(std::span<const float> core,
                                         std::span<const std::int64_t> attrs);

  /// Compacts all append segments into lists.bin.
  void flush();

  /// Cumulative counters since open() or the last reset.
  LoadStats load_stats() const;
  void reset_load_stats();
  void record_load(const LoadStats& delta) const;

 private:
  HybridIndex() = default;
  void publish(std::shared_ptr<const IndexSnapshot> snap);
  void write_manifest(const IndexManifest& m) const;

  std::filesystem::path dir_;
  OpenOptions options_;
  Metric metric_ = Metric::kCosine;
  std::size_t dim_ = 0;
  std::size_t num_attrs_ = 0;
  AttributeCodebook codebook_;

  mutable std::shared_mutex snapshot_mutex_;
  std::shared_ptr<const IndexSnapshot> snapshot_;
  IndexManifest manifest_;  // guarded by writer_mutex_
  mutable std::mutex writer_mutex_;
  std::shared_ptr<VectorBlockCache> cache_;

  mutable std::atomic<std::uint64_t> lists_loaded_{0};
  mutable std::atomic<std::uint64_t> rows_read_{0};
  mutable std::atomic<std::uint64_t> bytes_read_{0};
};

std::filesystem::path segment_path(const std::filesystem::path& dir, CellId cell);

}  // namespace hybridivf
