#include "hybridivf/oracle.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <iomanip>
#include <mutex>
#include <numbers>
#include <queue>
#include <sstream>
#include <thread>

namespace hybridivf {

namespace {

constexpr double kAttrSpan = static_cast<double>(kSyntheticAttrMax - kSyntheticAttrMin + 1);

double uniform01(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

std::int64_t uniform_attr(std::mt19937_64& rng) {
  return static_cast<std::int64_t>(rng() % 65536) + kSyntheticAttrMin;
}

// Interval [lo, lo + width - 1] placed uniformly inside the attribute range.
Predicate random_range(std::mt19937_64& rng, std::uint32_t attr, double fraction) {
  const auto width = std::clamp<std::int64_t>(std::llround(fraction * kAttrSpan), 1,
                                              static_cast<std::int64_t>(kAttrSpan));
  const auto slots = static_cast<std::uint64_t>(kAttrSpan) - static_cast<std::uint64_t>(width) + 1;
  const std::int64_t lo = kSyntheticAttrMin + static_cast<std::int64_t>(rng() % slots);
  return {attr, CompareOp::kBetween, {lo, lo + width - 1}};
}

std::uint32_t random_attr(std::mt19937_64& rng, std::size_t m) {
  return static_cast<std::uint32_t>(rng() % m);
}

std::pair<std::uint32_t, std::uint32_t> two_attrs(std::mt19937_64& rng, std::size_t m) {
  const std::uint32_t a = random_attr(rng, m);
  std::uint32_t b = random_attr(rng, m - 1);
  if (b >= a) ++b;
  return {a, b};
}

double quantile(std::vector<double> v, double q) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const auto rank = static_cast<std::size_t>(std::ceil(q * static_cast<double>(v.size())));
  return v[std::clamp<std::size_t>(rank, 1, v.size()) - 1];
}

std::string fixed(double v, int precision) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(precision) << v;
  return os.str();
}

}  // namespace

// ---- ground truth ----

GroundTruthRow exact_filtered_knn(const FloatMatrix& vectors, const AttrMatrix& attrs,
                                  const Query& q, Metric metric) {
  if (q.k == 0) throw UsageError("k must be at least 1");
  if (vectors.rows() != attrs.rows()) throw UsageError("vectors and attributes differ in row count");
  if (q.vector.size() != vectors.cols()) throw UsageError("query dimension mismatch");
  if (q.filter) validate_filter(*q.filter, attrs.cols());
  std::vector<float> query = q.vector;
  prepare_for_storage(query, metric);

  auto worse = [](const Neighbor& a, const Neighbor& b) { return neighbor_less(a, b); };
  std::priority_queue<Neighbor, std::vector<Neighbor>, decltype(worse)> heap(worse);
  GroundTruthRow row;
  for (std::size_t i = 0; i < vectors.rows(); ++i) {
    if (!eval_filter(q.filter, attrs.row(i))) continue;
    ++row.survivors;
    const Neighbor n{i, distance(query, vectors.row(i), metric)};
    if (heap.size() < q.k) {
      heap.push(n);
    } else if (neighbor_less(n, heap.top())) {
      heap.pop();
      heap.push(n);
    }
  }
  while (!heap.empty()) {
    row.neighbors.push_back(heap.top());
    heap.pop();
  }
  std::reverse(row.neighbors.begin(), row.neighbors.end());
  return row;
}

std::vector<GroundTruthRow> exact_filtered_knn_batch(const FloatMatrix& vectors,
                                                     const AttrMatrix& attrs,
                                                     std::span<const Query> queries, Metric metric,
                                                     std::size_t parallelism,
                                                     std::vector<double>* latencies) {
  std::vector<GroundTruthRow> out(queries.size());
  std::vector<double> times(queries.size());
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto worker = [&] {
    for (std::size_t i = next++; i < queries.size(); i = next++) {
      try {
        const auto start = std::chrono::steady_clock::now();
        out[i] = exact_filtered_knn(vectors, attrs, queries[i], metric);
        times[i] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  const std::size_t workers = std::clamp<std::size_t>(parallelism, 1, std::max<std::size_t>(queries.size(), 1));
  {
    std::vector<std::jthread> pool;
    for (std::size_t w = 1; w < workers; ++w) pool.emplace_back(worker);
    worker();
  }
  if (failure) std::rethrow_exception(failure);
  if (latencies) *latencies = std::move(times);
  return out;
}

// ---- synthetic data ----

Distribution parse_distribution(std::string_view name) {
  if (name == "gaussian") return Distribution::kGaussian;
  if (name == "blobs") return Distribution::kBlobs;
  throw UsageError("unknown distribution '" + std::string(name) + "' (expected gaussian or blobs)");
}

double gaussian(std::mt19937_64& rng) {
  const double u1 = (static_cast<double>(rng() >> 11) + 1.0) * 0x1.0p-53;  // (0, 1]
  const double u2 = uniform01(rng);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

SyntheticData gen_synthetic(const SyntheticParams& p) {
  if (p.n == 0 || p.d == 0 || p.m == 0) throw UsageError("gen: n, d and m must all be at least 1");
  if (p.distribution == Distribution::kBlobs && p.blobs == 0) {
    throw UsageError("gen: blobs mode needs at least one blob");
  }
  std::mt19937_64 rng(p.seed);
  SyntheticData data{FloatMatrix(p.n, p.d), AttrMatrix(p.n, p.m)};

  FloatMatrix centers;
  if (p.distribution == Distribution::kBlobs) {
    centers = FloatMatrix(p.blobs, p.d);
    for (std::size_t b = 0; b < p.blobs; ++b) {
      auto c = centers.row(b);
      do {
        for (float& x : c) x = static_cast<float>(gaussian(rng));
      } while (squared_norm(c) == 0.0);
      normalize_inplace(c);
    }
  }
  const double noise = p.blob_spread / std::sqrt(static_cast<double>(p.d));
  for (std::size_t i = 0; i < p.n; ++i) {
    auto v = data.vectors.row(i);
    do {
      if (p.distribution == Distribution::kGaussian) {
        for (float& x : v) x = static_cast<float>(gaussian(rng));
      } else {
        const auto c = centers.row(static_cast<std::size_t>(rng() % p.blobs));
        for (std::size_t j = 0; j < p.d; ++j) {
          v[j] = static_cast<float>(c[j] + noise * gaussian(rng));
        }
      }
    } while (squared_norm(v) == 0.0);
    normalize_inplace(v);
  }
  for (auto& a : data.attrs.data()) a = uniform_attr(rng);
  return data;
}

SyntheticData gen_synthetic_files(const SyntheticParams& params,
                                  const std::filesystem::path& vectors_path,
                                  const std::filesystem::path& attrs_path) {
  SyntheticData data = gen_synthetic(params);
  write_vectors_file(vectors_path, data.vectors);
  write_attributes_file(attrs_path, data.attrs);
  return data;
}

FilterExpr random_filter(std::mt19937_64& rng, std::size_t num_attrs, double selectivity) {
  if (num_attrs == 0) throw UsageError("random_filter: no attributes");
  selectivity = std::clamp(selectivity, 1.0 / kAttrSpan, 1.0);
  const int kind = static_cast<int>(rng() % (num_attrs >= 2 ? 5 : 3));
  switch (kind) {
    case 0:
      return FilterExpr::leaf(random_range(rng, random_attr(rng, num_attrs), selectivity));
    case 1: {
      // One-sided threshold, either tail.
      const auto width = std::max<std::int64_t>(1, std::llround(selectivity * kAttrSpan));
      const std::uint32_t attr = random_attr(rng, num_attrs);
      if (rng() % 2 == 0) {
        return FilterExpr::leaf({attr, CompareOp::kGe, {kSyntheticAttrMax - width + 1}});
      }
      return FilterExpr::leaf({attr, CompareOp::kLt, {kSyntheticAttrMin + width}});
    }
    case 2:
      return FilterExpr::negate(
          FilterExpr::leaf(random_range(rng, random_attr(rng, num_attrs), 1.0 - selectivity)));
    case 3: {
      const auto [a, b] = two_attrs(rng, num_attrs);
      const double each = std::sqrt(selectivity);
      return FilterExpr::all_of({FilterExpr::leaf(random_range(rng, a, each)),
                                 FilterExpr::leaf(random_range(rng, b, each))});
    }
    default: {
      const auto [a, b] = two_attrs(rng, num_attrs);
      const double each = 1.0 - std::sqrt(1.0 - selectivity);
      return FilterExpr::any_of({FilterExpr::leaf(random_range(rng, a, each)),
                                 FilterExpr::leaf(random_range(rng, b, each))});
    }
  }
}

std::vector<Query> make_workload(const SyntheticData& data, std::size_t count, std::size_t k,
                                 double min_selectivity, double max_selectivity,
                                 std::uint64_t seed) {
  if (data.vectors.rows() == 0) throw UsageError("make_workload: empty dataset");
  std::mt19937_64 rng(seed);
  const std::size_t d = data.vectors.cols();
  const double noise = 0.5 / std::sqrt(static_cast<double>(d));
  std::vector<Query> queries(count);
  for (auto& q : queries) {
    const auto base = data.vectors.row(static_cast<std::size_t>(rng() % data.vectors.rows()));
    q.vector.resize(d);
    do {
      for (std::size_t j = 0; j < d; ++j) q.vector[j] = static_cast<float>(base[j] + noise * gaussian(rng));
    } while (squared_norm(q.vector) == 0.0);
    normalize_inplace(q.vector);
    const double s = min_selectivity + (max_selectivity - min_selectivity) * uniform01(rng);
    q.filter = random_filter(rng, data.attrs.cols(), s);
    q.k = k;
  }
  return queries;
}

// ---- recall ----

double recall_at_k(std::span<const Neighbor> returned, const GroundTruthRow& truth, std::size_t k) {
  const std::size_t denom = std::min(k, truth.survivors);
  if (denom == 0) return 1.0;
  std::size_t hits = 0;
  const std::size_t considered = std::min(k, truth.neighbors.size());
  for (const Neighbor& n : returned) {
    const auto end = truth.neighbors.begin() + static_cast<std::ptrdiff_t>(considered);
    if (std::any_of(truth.neighbors.begin(), end, [&](const Neighbor& t) { return t.id == n.id; })) {
      ++hits;
    }
  }
  return static_cast<double>(hits) / static_cast<double>(denom);
}

RecallReport measure_recall(const HybridIndex& index, std::span<const Query> queries,
                            std::span<const GroundTruthRow> truth,
                            std::span<const std::size_t> probes_sweep, std::size_t parallelism) {
  if (queries.size() != truth.size()) {
    throw UsageError("measure_recall: " + std::to_string(queries.size()) + " queries but " +
                     std::to_string(truth.size()) + " ground-truth rows");
  }
  if (queries.empty()) throw UsageError("measure_recall: no queries");
  for (std::size_t p : probes_sweep) {
    if (p == 0) throw UsageError("measure_recall: probes must be at least 1");
  }
  RecallReport report;
  report.k = queries.front().k;
  report.num_records = index.size();
  report.num_lists = index.num_lists();
  report.parallelism = parallelism;
  for (const auto& t : truth) {
    report.selectivity.push_back(static_cast<double>(t.survivors) / static_cast<double>(report.num_records));
  }
  for (double s : report.selectivity) report.mean_selectivity += s;
  report.mean_selectivity /= static_cast<double>(report.selectivity.size());

  for (const std::size_t probes : probes_sweep) {
    std::vector<Query> sweep(queries.begin(), queries.end());
    for (auto& q : sweep) q.probes = probes;
    const auto start = std::chrono::steady_clock::now();
    const auto outcomes = search_batch(index, sweep, parallelism);
    RecallRow row;
    row.probes = probes;
    row.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::vector<double> latencies;
    const std::uint64_t ceiling = std::min<std::uint64_t>(probes, report.num_lists);
    for (std::size_t i = 0; i < outcomes.size(); ++i) {
      const auto& o = outcomes[i];
      if (!o.result) {
        if (o.usage_error) throw UsageError(o.error);
        throw IoError(o.error);
      }
      const SearchResult& r = *o.result;
      row.recall.push_back(recall_at_k(r.neighbors, truth[i], sweep[i].k));
      latencies.push_back(r.timings.total);
      row.mean_timings += r.timings;
      row.max_lists_loaded = std::max(row.max_lists_loaded, r.load.lists_loaded);
      row.lists_within_probes = row.lists_within_probes && r.load.lists_loaded <= ceiling;
      row.partial_results += r.partial ? 1 : 0;
    }
    const double n = static_cast<double>(outcomes.size());
    for (double r : row.recall) row.mean_recall += r;
    row.mean_recall /= n;
    row.mean_timings.centroid_search /= n;
    row.mean_timings.filtering /= n;
    row.mean_timings.detailed_search /= n;
    row.mean_timings.total /= n;
    row.mean_latency = row.mean_timings.total;
    row.latency_p50 = quantile(latencies, 0.50);
    row.latency_p95 = quantile(latencies, 0.95);
    report.rows.push_back(std::move(row));
  }
  return report;
}

nlohmann::json RecallReport::to_json() const {
  nlohmann::json sweep = nlohmann::json::array();
  for (const auto& r : rows) {
    sweep.push_back({
        {"probes", r.probes},
        {"mean_recall", r.mean_recall},
        {"recall", r.recall},
        {"latency_p50", r.latency_p50},
        {"latency_p95", r.latency_p95},
        {"mean_latency", r.mean_latency},
        {"timings",
         {{"centroid_search", r.mean_timings.centroid_search},
          {"filtering", r.mean_timings.filtering},
          {"detailed_search", r.mean_timings.detailed_search},
          {"total", r.mean_timings.total}}},
        {"max_lists_loaded", r.max_lists_loaded},
        {"lists_within_probes", r.lists_within_probes},
        {"partial_results", r.partial_results},
        {"wall_seconds", r.wall_seconds},
    });
  }
  nlohmann::json j{
      {"k", k},
      {"num_records", num_records},
      {"num_lists", num_lists},
      {"parallelism", parallelism},
      {"num_queries", selectivity.size()},
      {"selectivity", selectivity},
      {"mean_selectivity", mean_selectivity},
      {"sweep", std::move(sweep)},
  };
  j["brute_force_mean_latency"] =
      brute_force_mean_latency ? nlohmann::json(*brute_force_mean_latency) : nlohmann::json(nullptr);
  return j;
}

std::string RecallReport::to_text() const {
  std::ostringstream os;
  os << "records " << num_records << "  lists " << num_lists << "  k " << k << "  queries "
     << selectivity.size() << "  parallelism " << parallelism << "\n";
  os << "mean filter selectivity " << fixed(mean_selectivity, 4) << "\n";
  if (brute_force_mean_latency) {
    os << "brute-force mean latency " << fixed(*brute_force_mean_latency, 6) << " s\n";
  }
  os << "\n";
  os << std::setw(8) << "probes" << std::setw(12) << ("recall@" + std::to_string(k)) << std::setw(12)
     << "p50_s" << std::setw(12) << "p95_s" << std::setw(12) << "mean_s" << std::setw(12)
     << "max_lists" << std::setw(10) << "partial" << "\n";
  for (const auto& r : rows) {
    os << std::setw(8) << r.probes << std::setw(12) << fixed(r.mean_recall, 4) << std::setw(12)
       << fixed(r.latency_p50, 6) << std::setw(12) << fixed(r.latency_p95, 6) << std::setw(12)
       << fixed(r.mean_latency, 6) << std::setw(12) << r.max_lists_loaded << std::setw(10)
       << r.partial_results << "\n";
  }

  os << "\n" << std::left << std::setw(30) << "Operation" << std::right;
  for (const auto& r : rows) os << std::setw(14) << ("T=" + std::to_string(r.probes));
  os << "\n";
  for (std::size_t label = 0; label < kTimingLabels.size(); ++label) {
    os << std::left << std::setw(30) << kTimingLabels[label] << std::right;
    for (const auto& r : rows) {
      const PhaseTimings& t = r.mean_timings;
      const double v = label == 0   ? t.centroid_search
                       : label == 1 ? t.filtering
                       : label == 2 ? t.detailed_search
                                    : t.total;
      os << std::setw(14) << fixed(v, 6);
    }
    os << "\n";
  }
  return os.str();
}

}  // namespace hybridivf
