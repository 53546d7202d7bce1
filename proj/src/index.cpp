#include "hybridivf/index.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cstring>
#include <fstream>
#include <list>
#include <map>
#include <numeric>

namespace hybridivf {

namespace fs = std::filesystem;

namespace {

constexpr const char* kManifestFile = "manifest.json";
constexpr const char* kCentroidsFile = "centroids.bin";
constexpr const char* kListsFile = "lists.bin";
constexpr const char* kSegmentsDir = "segments";

// Reads that skip at most this many bytes of unselected rows are merged
// into one pread.
constexpr std::size_t kCoalesceGapBytes = 16 * 1024;

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

std::size_t segment_row_bytes(std::size_t m, std::size_t d) { return 8 + 8 * m + 4 * d; }

std::vector<char> serialize_centroids(const CentroidSet& cs) {
  ByteWriter w;
  w.magic(kCentroidsMagic);
  w.u32(kFormatVersion);
  w.u32(static_cast<std::uint32_t>(cs.k()));
  w.u32(static_cast<std::uint32_t>(cs.dim()));
  w.f32s(cs.centroids.data());
  return w.bytes();
}

CentroidSet read_centroids(const fs::path& path, const IndexManifest& m) {
  const auto bytes = read_file(path);
  ByteReader r(bytes, path.string());
  r.expect_magic(kCentroidsMagic);
  if (const auto v = r.u32(); v != kFormatVersion) {
    throw IoError(path.string() + ": unsupported version " + std::to_string(v));
  }
  const std::uint32_t k = r.u32();
  const std::uint32_t d = r.u32();
  if (k != m.num_lists || d != m.dim) {
    throw IoError(path.string() + ": header (K=" + std::to_string(k) + ", D=" + std::to_string(d) +
                  ") disagrees with the manifest");
  }
  if (r.remaining() != static_cast<std::size_t>(k) * d * sizeof(float)) {
    throw IoError(path.string() + ": payload size does not match header");
  }
  CentroidSet cs;
  cs.metric = m.metric;
  cs.trained_on = m.build.trained_on;
  cs.centroids = FloatMatrix(k, d);
  r.f32s(cs.centroids.data());
  if (!all_finite(cs.centroids.data())) throw IoError(path.string() + ": non-finite centroid");
  return cs;
}

nlohmann::json parse_json_file(const fs::path& path) {
  const auto bytes = read_file(path);
  try {
    return nlohmann::json::parse(bytes.begin(), bytes.end());
  } catch (const nlohmann::json::exception& e) {
    throw IoError(path.string() + ": invalid JSON: " + e.what());
  }
}

// Streams per-list blocks into a new lists file and records their offsets.
class ListsFileWriter {
 public:
  explicit ListsFileWriter(const fs::path& path) : path_(path), tmp_(path) {
    tmp_ += ".tmp";
    out_.open(tmp_, std::ios::binary | std::ios::trunc);
    if (!out_) throw IoError("cannot create " + tmp_.string());
    ByteWriter w;
    w.magic(kListsMagic);
    w.u32(kFormatVersion);
    put(w);
  }

  ListEntry append(std::span<const RecordId> ids, std::span<const std::int64_t> attrs,
                   std::span<const float> vectors) {
    ListEntry e;
    e.count = ids.size();
    e.ids_offset = offset_;
    e.attrs_offset = e.ids_offset + ids.size_bytes();
    e.vectors_offset = e.attrs_offset + attrs.size_bytes();
    ByteWriter w;
    w.u64s(ids);
    w.i64s(attrs);
    w.f32s(vectors);
    put(w);
    return e;
  }

  // Publishes the file; returns its size.
  std::uint64_t commit() {
    out_.flush();
    if (!out_) throw IoError("write failed for " + tmp_.string());
    out_.close();
    std::error_code ec;
    fs::rename(tmp_, path_, ec);
    if (ec) throw IoError("cannot rename " + tmp_.string() + ": " + ec.message());
    return offset_;
  }

 private:
  void put(const ByteWriter& w) {
    out_.write(w.bytes().data(), static_cast<std::streamsize>(w.size()));
    if (!out_) throw IoError("write failed for " + tmp_.string());
    offset_ += w.size();
  }

  fs::path path_;
  fs::path tmp_;
  std::ofstream out_;
  std::uint64_t offset_ = 0;
};

AttrMatrix rows_of(const ColumnarAttributes& cols) {
  AttrMatrix out(cols.rows(), cols.num_attrs());
  for (std::size_t j = 0; j < cols.num_attrs(); ++j) {
    const auto col = cols.column(j);
    for (std::size_t i = 0; i < cols.rows(); ++i) out.row(i)[j] = col[i];
  }
  return out;
}

/// RAII wrapper for a writable POSIX descriptor.
class WritableFile {
 public:
  explicit WritableFile(const fs::path& path) : path_(path) {
    fd_ = ::open(path.c_str(), O_RDWR | O_CREAT | O_CLOEXEC, 0644);
    if (fd_ < 0) throw IoError("cannot open " + path.string() + " for writing: " + std::strerror(errno));
  }
  ~WritableFile() {
    if (fd_ >= 0) ::close(fd_);
  }
  WritableFile(const WritableFile&) = delete;
  WritableFile& operator=(const WritableFile&) = delete;

  void write_at(std::uint64_t offset, std::span<const char> bytes) {
    std::size_t done = 0;
    while (done < bytes.size()) {
      const ssize_t n = ::pwrite(fd_, bytes.data() + done, bytes.size() - done,
                                 static_cast<off_t>(offset + done));
      if (n < 0) {
        if (errno == EINTR) continue;
        throw IoError("write failed for " + path_.string() + ": " + std::strerror(errno));
      }
      done += static_cast<std::size_t>(n);
    }
  }

  void truncate(std::uint64_t size) {
    if (::ftruncate(fd_, static_cast<off_t>(size)) != 0) {
      throw IoError("cannot truncate " + path_.string() + ": " + std::strerror(errno));
    }
  }

 private:
  fs::path path_;
  int fd_ = -1;
};

}  // namespace

// ---- block cache ----

class VectorBlockCache {
 public:
  using Block = std::shared_ptr<const std::vector<float>>;
  using Key = std::pair<std::uint64_t, CellId>;

  explicit VectorBlockCache(std::size_t capacity) : capacity_(capacity) {}

  Block find(const Key& key) {
    std::lock_guard lock(mutex_);
    const auto it = entries_.find(key);
    if (it == entries_.end()) return nullptr;
    order_.splice(order_.begin(), order_, it->second.second);
    return it->second.first;
  }

  void insert(const Key& key, Block block) {
    std::lock_guard lock(mutex_);
    if (entries_.contains(key)) return;
    order_.push_front(key);
    entries_.emplace(key, std::make_pair(std::move(block), order_.begin()));
    while (entries_.size() > capacity_) {
      entries_.erase(order_.back());
      order_.pop_back();
    }
  }

 private:
  std::size_t capacity_;
  std::mutex mutex_;
  std::list<Key> order_;
  std::map<Key, std::pair<Block, std::list<Key>::iterator>> entries_;
};

// ---- manifest ----

void IndexManifest::validate() const {
  if (format_version != kFormatVersion) {
    throw IoError("manifest: unsupported format version " + std::to_string(format_version));
  }
  if (num_lists == 0) throw IoError("manifest: index has no lists");
  if (dim == 0) throw IoError("manifest: zero dimensionality");
  if (lists.size() != num_lists) throw IoError("manifest: list table size disagrees with num_lists");
  if (lists_file_size < kListsHeaderBytes) throw IoError("manifest: lists file too small");
  std::uint64_t total = 0;
  std::vector<std::pair<std::uint64_t, std::uint64_t>> ranges;
  for (std::size_t c = 0; c < lists.size(); ++c) {
    const ListEntry& e = lists[c];
    total += e.total();
    const std::uint64_t attrs_at = e.ids_offset + e.count * 8;
    const std::uint64_t vectors_at = attrs_at + e.count * num_attrs * 8;
    const std::uint64_t end = vectors_at + e.count * dim * 4;
    if (e.ids_offset < kListsHeaderBytes || e.attrs_offset != attrs_at ||
        e.vectors_offset != vectors_at || end > lists_file_size) {
      throw IoError("manifest: list " + std::to_string(c) + " has inconsistent block offsets");
    }
    if (e.count > 0) ranges.emplace_back(e.ids_offset, end);
  }
  if (total != num_records) {
    throw IoError("manifest: list counts sum to " + std::to_string(total) + " but N is " +
                  std::to_string(num_records));
  }
  if (next_id < num_records) throw IoError("manifest: next_id is below the record count");
  std::sort(ranges.begin(), ranges.end());
  for (std::size_t i = 1; i < ranges.size(); ++i) {
    if (ranges[i].first < ranges[i - 1].second) throw IoError("manifest: overlapping list blocks");
  }
}

double IndexManifest::mean_list_size() const {
  return num_lists == 0 ? 0.0 : static_cast<double>(num_records) / num_lists;
}

nlohmann::json IndexManifest::to_json() const {
  nlohmann::json list_table = nlohmann::json::array();
  for (const auto& e : lists) {
    list_table.push_back({{"count", e.count},
                          {"ids_offset", e.ids_offset},
                          {"attrs_offset", e.attrs_offset},
                          {"vectors_offset", e.vectors_offset},
                          {"segment_count", e.segment_count}});
  }
  return {
      {"format_version", format_version},
      {"metric", metric_name(metric)},
      {"dim", dim},
      {"num_attrs", num_attrs},
      {"num_lists", num_lists},
      {"num_records", num_records},
      {"next_id", next_id},
      {"generation", generation},
      {"lists_file", kListsFile},
      {"lists_file_size", lists_file_size},
      {"centroids_file", kCentroidsFile},
      {"codebook", codebook_file},
      {"mean_list_size", mean_list_size()},
      {"build",
       {{"seed", build.seed},
        {"kmeans_mode", kmeans_mode_name(build.kmeans_mode)},
        {"iterations", build.iterations},
        {"max_iters", build.max_iters},
        {"batch_size", build.batch_size},
        {"trained_on", build.trained_on},
        {"reseeded", build.reseeded}}},
      {"lists", std::move(list_table)},
  };
}

IndexManifest IndexManifest::from_json(const nlohmann::json& j) {
  try {
    IndexManifest m;
    m.format_version = j.at("format_version").get<std::uint32_t>();
    m.metric = parse_metric(j.at("metric").get<std::string>());
    m.dim = j.at("dim").get<std::uint32_t>();
    m.num_attrs = j.at("num_attrs").get<std::uint32_t>();
    m.num_lists = j.at("num_lists").get<std::uint32_t>();
    m.num_records = j.at("num_records").get<std::uint64_t>();
    m.next_id = j.at("next_id").get<std::uint64_t>();
    m.generation = j.at("generation").get<std::uint64_t>();
    m.lists_file_size = j.at("lists_file_size").get<std::uint64_t>();
    m.codebook_file = j.at("codebook").get<std::string>();
    const auto& b = j.at("build");
    m.build.seed = b.at("seed").get<std::uint64_t>();
    m.build.kmeans_mode = parse_kmeans_mode(b.at("kmeans_mode").get<std::string>());
    m.build.iterations = b.at("iterations").get<std::uint64_t>();
    m.build.max_iters = b.at("max_iters").get<std::uint64_t>();
    m.build.batch_size = b.at("batch_size").get<std::uint64_t>();
    m.build.trained_on = b.at("trained_on").get<std::uint64_t>();
    m.build.reseeded = b.at("reseeded").get<std::uint64_t>();
    for (const auto& e : j.at("lists")) {
      m.lists.push_back({e.at("count").get<std::uint64_t>(), e.at("ids_offset").get<std::uint64_t>(),
                         e.at("attrs_offset").get<std::uint64_t>(),
                         e.at("vectors_offset").get<std::uint64_t>(),
                         e.at("segment_count").get<std::uint64_t>()});
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("manifest: ") + e.what());
  } catch (const UsageError& e) {
    throw IoError(std::string("manifest: ") + e.what());
  }
}

// ---- snapshot ----

const ListView& IndexSnapshot::list(CellId cell) const {
  if (cell >= lists_.size()) {
    throw UsageError("cell " + std::to_string(cell) + " out of range (K=" +
                     std::to_string(lists_.size()) + ")");
  }
  return *lists_[cell];
}

FloatMatrix IndexSnapshot::load_vectors(CellId cell, const Bitmask& selector, LoadStats& stats) const {
  const ListView& lv = list(cell);
  if (selector.size() != lv.size()) {
    throw UsageError("selector has " + std::to_string(selector.size()) + " bits but list " +
                     std::to_string(cell) + " has " + std::to_string(lv.size()) + " rows");
  }
  const std::size_t selected = selector.count();
  FloatMatrix out(selected, dim_);
  if (selected == 0) return out;

  const std::size_t row_bytes = dim_ * sizeof(float);
  std::size_t next = 0;
  std::vector<char> buffer;

  // Main block.
  std::shared_ptr<const std::vector<float>> cached;
  if (cache_ && lv.base_rows > 0) {
    const VectorBlockCache::Key key{generation_, cell};
    cached = cache_->find(key);
    if (!cached) {
      auto block = std::make_shared<std::vector<float>>(lv.base_rows * dim_);
      buffer.resize(lv.base_rows * row_bytes);
      lists_file_->read_at(lv.vectors_offset, buffer);
      stats.bytes_read += buffer.size();
      decode_f32(buffer, *block);
      cached = block;
      cache_->insert(key, cached);
    }
  }
  if (cached) {
    for (std::size_t i = 0; i < lv.base_rows; ++i) {
      if (selector.test(i)) {
        std::copy_n(cached->data() + i * dim_, dim_, out.row(next++).begin());
      }
    }
  } else {
    const std::size_t gap_rows = std::max<std::size_t>(1, kCoalesceGapBytes / std::max<std::size_t>(row_bytes, 1));
    std::size_t i = 0;
    while (i < lv.base_rows) {
      if (!selector.test(i)) {
        ++i;
        continue;
      }
      // Extend the run, swallowing short gaps of unselected rows.
      std::size_t end = i + 1;
      std::size_t last_set = i;
      while (end < lv.base_rows && end - last_set <= gap_rows) {
        if (selector.test(end)) last_set = end;
        ++end;
      }
      end = last_set + 1;
      buffer.resize((end - i) * row_bytes);
      lists_file_->read_at(lv.vectors_offset + i * row_bytes, buffer);
      stats.bytes_read += buffer.size();
      for (std::size_t r = i; r < end; ++r) {
        if (selector.test(r)) {
          decode_f32(std::span<const char>(buffer).subspan((r - i) * row_bytes, row_bytes),
                     out.row(next++));
        }
      }
      i = end;
    }
  }

  // Append segment rows.
  if (lv.segment_rows > 0) {
    const auto& seg = segment_files_[cell];
    if (!seg) throw IoError("list " + std::to_string(cell) + " has segment rows but no segment file");
    const std::size_t seg_row = segment_row_bytes(num_attrs_, dim_);
    buffer.resize(row_bytes);
    for (std::size_t s = 0; s < lv.segment_rows; ++s) {
      if (!selector.test(lv.base_rows + s)) continue;
      const std::uint64_t at = kSegmentHeaderBytes + s * seg_row + 8 + 8 * num_attrs_;
      seg->read_at(at, buffer);
      stats.bytes_read += buffer.size();
      decode_f32(buffer, out.row(next++));
    }
  }

  stats.lists_loaded += 1;
  stats.vector_rows_read += selected;
  return out;
}

// ---- build ----

IndexManifest HybridIndex::build(FloatMatrix vectors, const AttrMatrix& attrs,
                                 const BuildParams& params, const fs::path& dir,
                                 BuildTimings* timings) {
  const std::size_t n = vectors.rows();
  const std::size_t d = vectors.cols();
  const std::size_t m = attrs.cols();
  if (n == 0) throw UsageError("build: the dataset is empty");
  if (d == 0) throw UsageError("build: vectors have zero dimensionality");
  if (attrs.rows() != n) {
    throw UsageError("build: " + std::to_string(n) + " vectors but " + std::to_string(attrs.rows()) +
                     " attribute rows");
  }
  const std::size_t k = params.num_lists.value_or(default_k(n));
  if (k == 0) throw UsageError("build: K must be at least 1");
  if (k > n) {
    throw UsageError("build: K=" + std::to_string(k) + " exceeds N=" + std::to_string(n));
  }
  const AttributeCodebook codebook = params.codebook.value_or(AttributeCodebook::identity(m));
  if (codebook.size() != m) {
    throw UsageError("build: codebook describes " + std::to_string(codebook.size()) +
                     " attributes but the dataset has " + std::to_string(m));
  }
  prepare_for_storage(vectors, params.metric);

  BuildTimings local;
  auto start = std::chrono::steady_clock::now();

  KMeansParams kp;
  kp.k = k;
  kp.metric = params.metric;
  kp.mode = params.kmeans_mode;
  kp.seed = params.seed;
  kp.max_iters = params.max_iters;
  kp.batch_size = params.batch_size;
  kp.threads = params.threads;
  KMeansResult trained;
  if (params.train_sample != 0 && params.train_sample < n) {
    if (params.train_sample < k) throw UsageError("build: training sample is smaller than K");
    // Independent stream from the one k-means draws from.
    const auto rows = sample_rows(n, params.train_sample, params.seed ^ 0x9e3779b97f4a7c15ULL);
    FloatMatrix sample(rows.size(), d);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      std::copy_n(vectors.row(rows[i]).begin(), d, sample.row(i).begin());
    }
    trained = train_kmeans(sample, kp);
  } else {
    trained = train_kmeans(vectors, kp);
  }
  local.train_seconds = seconds_since(start);

  start = std::chrono::steady_clock::now();
  const std::vector<CellId> cells = assign(vectors, trained.centroids, params.threads);
  std::vector<std::vector<std::size_t>> members(k);
  for (std::size_t i = 0; i < n; ++i) members[cells[i]].push_back(i);
  local.assign_seconds = seconds_since(start);

  start = std::chrono::steady_clock::now();
  fs::create_directories(dir / kSegmentsDir);
  for (const auto& entry : fs::directory_iterator(dir / kSegmentsDir)) fs::remove(entry.path());

  IndexManifest manifest;
  manifest.metric = params.metric;
  manifest.dim = static_cast<std::uint32_t>(d);
  manifest.num_attrs = static_cast<std::uint32_t>(m);
  manifest.num_lists = static_cast<std::uint32_t>(k);
  manifest.num_records = n;
  manifest.next_id = n;
  manifest.build = {params.seed,        params.kmeans_mode,       trained.iterations,
                    params.max_iters,   params.batch_size,        trained.centroids.trained_on,
                    trained.reseeded};

  ListsFileWriter writer(dir / kListsFile);
  std::vector<RecordId> ids;
  std::vector<std::int64_t> attr_rows;
  std::vector<float> vec_rows;
  for (std::size_t c = 0; c < k; ++c) {
    const auto& rows = members[c];
    ids.assign(rows.begin(), rows.end());
    attr_rows.resize(rows.size() * m);
    vec_rows.resize(rows.size() * d);
    for (std::size_t r = 0; r < rows.size(); ++r) {
      std::copy_n(attrs.row(rows[r]).begin(), m, attr_rows.begin() + static_cast<std::ptrdiff_t>(r * m));
      std::copy_n(vectors.row(rows[r]).begin(), d, vec_rows.begin() + static_cast<std::ptrdiff_t>(r * d));
    }
    manifest.lists.push_back(writer.append(ids, attr_rows, vec_rows));
  }
  manifest.lists_file_size = writer.commit();

  write_file_atomic(dir / kCentroidsFile, serialize_centroids(trained.centroids));
  const std::string cb = codebook.to_json().dump(2);
  write_file_atomic(dir / manifest.codebook_file, std::span<const char>(cb.data(), cb.size()));
  manifest.validate();
  const std::string mj = manifest.to_json().dump(2);
  write_file_atomic(dir / kManifestFile, std::span<const char>(mj.data(), mj.size()));
  local.write_seconds = seconds_since(start);

  if (timings != nullptr) *timings = local;
  return manifest;
}

// ---- open ----

std::unique_ptr<HybridIndex> HybridIndex::open(const fs::path& dir, OpenOptions options) {
  if (!fs::is_directory(dir)) throw IoError("index directory " + dir.string() + " does not exist");
  std::unique_ptr<HybridIndex> h(new HybridIndex());
  h->dir_ = dir;
  h->options_ = options;

  IndexManifest manifest = IndexManifest::from_json(parse_json_file(dir / kManifestFile));
  if (manifest.format_version != kFormatVersion) {
    throw IoError("manifest: unsupported format version " + std::to_string(manifest.format_version));
  }
  h->metric_ = manifest.metric;
  h->dim_ = manifest.dim;
  h->num_attrs_ = manifest.num_attrs;

  auto snap = std::make_shared<IndexSnapshot>();
  snap->centroids_ = std::make_shared<const CentroidSet>(read_centroids(dir / kCentroidsFile, manifest));

  auto lists_file = std::make_shared<const RandomAccessFile>(dir / kListsFile);
  {
    std::array<char, kListsHeaderBytes> header{};
    if (lists_file->size() < header.size()) throw IoError(lists_file->path().string() + ": truncated");
    lists_file->read_at(0, header);
    ByteReader r(header, lists_file->path().string());
    r.expect_magic(kListsMagic);
    if (const auto v = r.u32(); v != kFormatVersion) {
      throw IoError(lists_file->path().string() + ": unsupported version " + std::to_string(v));
    }
  }
  if (lists_file->size() != manifest.lists_file_size) {
    throw IoError(lists_file->path().string() + ": size " + std::to_string(lists_file->size()) +
                  " does not match the manifest (" + std::to_string(manifest.lists_file_size) + ")");
  }
  manifest.validate();

  const std::size_t m = manifest.num_attrs;
  const std::size_t d = manifest.dim;
  snap->lists_file_ = lists_file;
  snap->generation_ = manifest.generation;
  snap->num_records_ = manifest.num_records;
  snap->dim_ = d;
  snap->num_attrs_ = m;
  snap->segment_files_.resize(manifest.num_lists);
  std::vector<char> buffer;
  for (std::size_t c = 0; c < manifest.num_lists; ++c) {
    const ListEntry& e = manifest.lists[c];
    auto lv = std::make_shared<ListView>();
    lv->base_rows = e.count;
    lv->vectors_offset = e.vectors_offset;
    lv->segment_rows = e.segment_count;
    lv->ids.resize(e.count);
    AttrMatrix rows(e.count, m);
    buffer.resize(e.vectors_offset - e.ids_offset);
    lists_file->read_at(e.ids_offset, buffer);
    ByteReader r(buffer, lists_file->path().string());
    r.u64s(lv->ids);
    r.i64s(rows.data());
    lv->attrs = ColumnarAttributes::from_rows(rows);

    if (e.segment_count > 0) {
      auto seg = std::make_shared<const RandomAccessFile>(segment_path(dir, static_cast<CellId>(c)));
      const std::size_t row_bytes = segment_row_bytes(m, d);
      if (seg->size() < kSegmentHeaderBytes + e.segment_count * row_bytes) {
        throw IoError(seg->path().string() + ": shorter than the manifest's segment count");
      }
      buffer.resize(kSegmentHeaderBytes + e.segment_count * row_bytes);
      seg->read_at(0, buffer);
      ByteReader sr(buffer, seg->path().string());
      sr.expect_magic(kSegmentMagic);
      const std::uint32_t version = sr.u32();
      const std::uint32_t cell = sr.u32();
      const std::uint32_t sm = sr.u32();
      const std::uint32_t sd = sr.u32();
      if (version != kFormatVersion || cell != c || sm != m || sd != d) {
        throw IoError(seg->path().string() + ": header disagrees with the manifest");
      }
      std::vector<std::int64_t> attr_row(m);
      std::vector<float> skip(d);
      for (std::size_t s = 0; s < e.segment_count; ++s) {
        lv->ids.push_back(sr.u64());
        sr.i64s(attr_row);
        lv->attrs.append_row(attr_row);
        sr.f32s(skip);
      }
      snap->segment_files_[c] = std::move(seg);
    }
    snap->lists_.push_back(std::move(lv));
  }

  const auto codebook_json = parse_json_file(dir / manifest.codebook_file);
  try {
    h->codebook_ = AttributeCodebook::from_json(codebook_json);
  } catch (const UsageError& e) {
    throw IoError(e.what());
  }
  if (h->codebook_.size() != m) throw IoError("codebook attribute count disagrees with the manifest");

  if (options.cache_blocks > 0) h->cache_ = std::make_shared<VectorBlockCache>(options.cache_blocks);
  snap->cache_ = h->cache_;
  h->manifest_ = std::move(manifest);
  h->snapshot_ = std::move(snap);
  return h;
}

HybridIndex::~HybridIndex() = default;

// ---- accessors ----

std::shared_ptr<const IndexSnapshot> HybridIndex::snapshot() const {
  std::shared_lock lock(snapshot_mutex_);
  return snapshot_;
}

void HybridIndex::publish(std::shared_ptr<const IndexSnapshot> snap) {
  std::unique_lock lock(snapshot_mutex_);
  snapshot_ = std::move(snap);
}

IndexManifest HybridIndex::manifest() const {
  std::lock_guard lock(writer_mutex_);
  return manifest_;
}

std::size_t HybridIndex::num_lists() const { return snapshot()->num_lists(); }
std::uint64_t HybridIndex::size() const { return snapshot()->size(); }

std::vector<std::size_t> HybridIndex::list_sizes() const {
  const auto snap = snapshot();
  std::vector<std::size_t> sizes(snap->num_lists());
  for (std::size_t c = 0; c < sizes.size(); ++c) sizes[c] = snap->list(static_cast<CellId>(c)).size();
  return sizes;
}

FloatMatrix HybridIndex::load_list_vectors(CellId cell, const Bitmask& selector) {
  LoadStats delta;
  FloatMatrix out = snapshot()->load_vectors(cell, selector, delta);
  record_load(delta);
  return out;
}

LoadStats HybridIndex::load_stats() const {
  return {lists_loaded_.load(), rows_read_.load(), bytes_read_.load()};
}

void HybridIndex::reset_load_stats() {
  lists_loaded_ = 0;
  rows_read_ = 0;
  bytes_read_ = 0;
}

void HybridIndex::record_load(const LoadStats& delta) const {
  lists_loaded_ += delta.lists_loaded;
  rows_read_ += delta.vector_rows_read;
  bytes_read_ += delta.bytes_read;
}

void HybridIndex::write_manifest(const IndexManifest& m) const {
  const std::string text = m.to_json().dump(2);
  write_file_atomic(dir_ / kManifestFile, std::span<const char>(text.data(), text.size()));
}

// ---- writer ----

std::pair<RecordId, CellId> HybridIndex::add_vector(std::span<const float> core,
                                                    std::span<const std::int64_t> attrs) {
  if (!options_.writable) throw UsageError("index was opened read-only");
  if (core.size() != dim_) {
    throw UsageError("dimension mismatch: vector has " + std::to_string(core.size()) +
                     " components, index expects " + std::to_string(dim_));
  }
  if (attrs.size() != num_attrs_) {
    throw UsageError("attribute count mismatch: got " + std::to_string(attrs.size()) +
                     ", index expects " + std::to_string(num_attrs_));
  }
  std::vector<float> stored(core.begin(), core.end());
  prepare_for_storage(stored, metric_);

  std::lock_guard writer(writer_mutex_);
  const auto old = snapshot();
  const CellId cell = nearest_cell(stored, old->centroids());
  const RecordId id = manifest_.next_id;

  ByteWriter row;
  row.u64(id);
  row.i64s(attrs);
  row.f32s(stored);

  const fs::path path = segment_path(dir_, cell);
  fs::create_directories(path.parent_path());
  WritableFile seg(path);
  ListEntry& entry = manifest_.lists[cell];
  const std::uint64_t row_at = kSegmentHeaderBytes + entry.segment_count * row.size();
  // Rows beyond the manifest's count are leftovers of an interrupted append.
  seg.truncate(row_at);
  if (entry.segment_count == 0) {
    ByteWriter header;
    header.magic(kSegmentMagic);
    header.u32(kFormatVersion);
    header.u32(cell);
    header.u32(static_cast<std::uint32_t>(num_attrs_));
    header.u32(static_cast<std::uint32_t>(dim_));
    seg.write_at(0, header.bytes());
  }
  IndexManifest next = manifest_;
  try {
    seg.write_at(row_at, row.bytes());
    next.lists[cell].segment_count += 1;
    next.num_records += 1;
    next.next_id += 1;
    write_manifest(next);
  } catch (const IoError&) {
    seg.truncate(row_at);
    throw;
  }
  manifest_ = std::move(next);

  auto list = std::make_shared<ListView>(old->list(cell));
  list->ids.push_back(id);
  list->attrs.append_row(attrs);
  list->segment_rows += 1;
  auto snap = std::make_shared<IndexSnapshot>(*old);
  snap->lists_[cell] = std::move(list);
  snap->segment_files_[cell] = std::make_shared<const RandomAccessFile>(path);
  snap->num_records_ += 1;
  publish(std::move(snap));
  return {id, cell};
}

void HybridIndex::flush() {
  if (!options_.writable) throw UsageError("index was opened read-only");
  std::lock_guard writer(writer_mutex_);
  const auto old = snapshot();
  bool pending = false;
  for (std::size_t c = 0; c < old->num_lists(); ++c) {
    pending = pending || old->list(static_cast<CellId>(c)).segment_rows > 0;
  }
  if (!pending) return;

  IndexManifest next = manifest_;
  next.generation += 1;
  ListsFileWriter lists_writer(dir_ / kListsFile);
  LoadStats ignored;
  for (std::size_t c = 0; c < old->num_lists(); ++c) {
    const ListView& lv = old->list(static_cast<CellId>(c));
    const FloatMatrix vectors = old->load_vectors(static_cast<CellId>(c), Bitmask(lv.size(), true), ignored);
    const AttrMatrix attr_rows = rows_of(lv.attrs);
    next.lists[c] = lists_writer.append(lv.ids, attr_rows.data(), vectors.data());
  }
  next.lists_file_size = lists_writer.commit();
  next.validate();
  write_manifest(next);
  manifest_ = next;

  auto snap = std::make_shared<IndexSnapshot>(*old);
  snap->lists_file_ = std::make_shared<const RandomAccessFile>(dir_ / kListsFile);
  snap->generation_ = next.generation;
  for (std::size_t c = 0; c < snap->lists_.size(); ++c) {
    auto lv = std::make_shared<ListView>(*old->lists_[c]);
    lv->base_rows = next.lists[c].count;
    lv->vectors_offset = next.lists[c].vectors_offset;
    lv->segment_rows = 0;
    snap->lists_[c] = std::move(lv);
    snap->segment_files_[c].reset();
  }
  publish(std::move(snap));

  std::error_code ec;
  for (std::size_t c = 0; c < old->num_lists(); ++c) fs::remove(segment_path(dir_, static_cast<CellId>(c)), ec);
}

fs::path segment_path(const fs::path& dir, CellId cell) {
  return dir / kSegmentsDir / ("list_" + std::to_string(cell) + ".seg");
}

}  // namespace hybridivf
