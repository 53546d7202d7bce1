#include "hybridivf/search.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <queue>
#include <thread>

namespace hybridivf {

namespace {

using Clock = std::chrono::steady_clock;

double elapsed(Clock::time_point from, Clock::time_point to) {
  return std::chrono::duration<double>(to - from).count();
}

struct WorseFirst {
  bool operator()(const Neighbor& a, const Neighbor& b) const { return neighbor_less(a, b); }
};

// Max-heap of the k best neighbors seen so far; the root is the worst kept.
class TopK {
 public:
  explicit TopK(std::size_t k) : k_(k) {}

  void offer(const Neighbor& n) {
    if (heap_.size() < k_) {
      heap_.push(n);
    } else if (neighbor_less(n, heap_.top())) {
      heap_.pop();
      heap_.push(n);
    }
  }

  std::vector<Neighbor> take_sorted() {
    std::vector<Neighbor> out;
    out.reserve(heap_.size());
    while (!heap_.empty()) {
      out.push_back(heap_.top());
      heap_.pop();
    }
    std::reverse(out.begin(), out.end());
    return out;
  }

 private:
  std::size_t k_;
  std::priority_queue<Neighbor, std::vector<Neighbor>, WorseFirst> heap_;
};

std::vector<float> prepared_query(const IndexSnapshot& snap, const Query& q) {
  if (q.k == 0) throw UsageError("k must be at least 1");
  if (q.probes == 0) throw UsageError("probes must be at least 1");
  if (q.vector.size() != snap.dim()) {
    throw UsageError("dimension mismatch: query has " + std::to_string(q.vector.size()) +
                     " components, index expects " + std::to_string(snap.dim()));
  }
  if (q.filter) validate_filter(*q.filter, snap.num_attrs());
  std::vector<float> v = q.vector;
  prepare_for_storage(v, snap.metric());
  return v;
}

}  // namespace

PhaseTimings& PhaseTimings::operator+=(const PhaseTimings& o) {
  centroid_search += o.centroid_search;
  filtering += o.filtering;
  detailed_search += o.detailed_search;
  total += o.total;
  return *this;
}

std::vector<CellId> nearest_centroids(const HybridIndex& index, std::span<const float> core,
                                      std::size_t t) {
  const auto snap = index.snapshot();
  std::vector<float> v(core.begin(), core.end());
  if (v.size() != snap->dim()) {
    throw UsageError("dimension mismatch: query has " + std::to_string(v.size()) +
                     " components, index expects " + std::to_string(snap->dim()));
  }
  prepare_for_storage(v, snap->metric());
  return nearest_cells(v, snap->centroids(), t);
}

SearchResult search(const IndexSnapshot& snap, const Query& q) {
  const auto start = Clock::now();
  const std::vector<float> query = prepared_query(snap, q);

  SearchResult result;
  const auto probe_start = Clock::now();
  const std::vector<CellId> cells = nearest_cells(query, snap.centroids(), q.probes);
  result.timings.centroid_search = elapsed(probe_start, Clock::now());

  TopK best(q.k);
  std::vector<float> dists;
  for (const CellId cell : cells) {
    const ListView& list = snap.list(cell);
    const auto filter_start = Clock::now();
    const Bitmask survivors = eval_filter_block(q.filter, list.attrs);
    const std::size_t kept = survivors.count();
    const auto filter_end = Clock::now();
    result.timings.filtering += elapsed(filter_start, filter_end);
    result.candidates += kept;
    if (kept == 0) continue;

    const FloatMatrix vectors = snap.load_vectors(cell, survivors, result.load);
    dists.resize(vectors.rows());
    batch_distances(query, vectors.data(), vectors.cols(), snap.metric(), dists);
    std::size_t j = 0;
    for (std::size_t r = 0; r < list.size(); ++r) {
      if (survivors.test(r)) best.offer({list.ids[r], dists[j++]});
    }
    result.timings.detailed_search += elapsed(filter_end, Clock::now());
  }
  result.neighbors = best.take_sorted();
  result.partial = result.candidates < q.k;
  result.timings.total = elapsed(start, Clock::now());
  return result;
}

SearchResult search(const HybridIndex& index, const Query& q) {
  const auto snap = index.snapshot();
  SearchResult r = search(*snap, q);
  index.record_load(r.load);
  return r;
}

std::vector<BatchOutcome> search_batch(const HybridIndex& index, std::span<const Query> queries,
                                       std::size_t parallelism) {
  if (parallelism == 0) throw UsageError("parallelism must be at least 1");
  std::vector<BatchOutcome> out(queries.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < queries.size(); i = next++) {
      try {
        out[i].result = search(index, queries[i]);
      } catch (const UsageError& e) {
        out[i].error = e.what();
        out[i].usage_error = true;
      } catch (const std::exception& e) {
        out[i].error = e.what();
      }
    }
  };
  const std::size_t workers = std::min(parallelism, std::max<std::size_t>(queries.size(), 1));
  if (workers == 1) {
    worker();
    return out;
  }
  {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(worker);
  }
  return out;
}

Query query_from_json(const nlohmann::json& j, std::size_t num_attrs) {
  try {
    Query q;
    q.vector = j.at("vector").get<std::vector<float>>();
    if (j.contains("filter") && !j.at("filter").is_null()) {
      const auto text = j.at("filter").get<std::string>();
      if (!text.empty()) q.filter = parse_filter(text, num_attrs);
    }
    if (j.contains("k")) {
      const auto k = j.at("k").get<std::int64_t>();
      if (k < 1) throw UsageError("k must be at least 1");
      q.k = static_cast<std::size_t>(k);
    }
    if (j.contains("probes") && !j.at("probes").is_null()) {
      const auto p = j.at("probes").get<std::int64_t>();
      if (p < 1) throw UsageError("probes must be at least 1");
      q.probes = static_cast<std::size_t>(p);
    }
    return q;
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string("malformed query JSON: ") + e.what());
  }
}

nlohmann::json result_to_json(const SearchResult& r) {
  nlohmann::json neighbors = nlohmann::json::array();
  for (const auto& n : r.neighbors) neighbors.push_back({{"id", n.id}, {"distance", n.distance}});
  return {
      {"neighbors", std::move(neighbors)},
      {"timings",
       {{"centroid_search", r.timings.centroid_search},
        {"filtering", r.timings.filtering},
        {"detailed_search", r.timings.detailed_search},
        {"total", r.timings.total}}},
      {"partial", r.partial},
      {"candidates", r.candidates},
      {"load",
       {{"lists_loaded", r.load.lists_loaded},
        {"vector_rows_read", r.load.vector_rows_read},
        {"bytes_read", r.load.bytes_read}}},
  };
}

}  // namespace hybridivf
