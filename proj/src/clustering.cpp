#include "hybridivf/clustering.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <thread>

namespace hybridivf {

namespace {

double uniform01(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// Objective contribution of one point, consistent with inertia().
double objective(float dist, Metric m) {
  return m == Metric::kEuclidean ? static_cast<double>(dist) * dist : static_cast<double>(dist);
}

void check_training_input(const FloatMatrix& data, const KMeansParams& p) {
  if (data.rows() == 0 || data.cols() == 0) throw UsageError("k-means: empty training data");
  if (p.k == 0) throw UsageError("k-means: k must be at least 1");
  if (p.k > data.rows()) {
    throw UsageError("k-means: k=" + std::to_string(p.k) + " exceeds the " +
                     std::to_string(data.rows()) + " training rows");
  }
  if (!all_finite(data.data())) throw UsageError("k-means: training data has non-finite values");
  if (p.mode == KMeansMode::kMiniBatch && p.batch_size == 0) {
    throw UsageError("k-means: batch_size must be at least 1");
  }
}

// Distinct row indices drawn without replacement (partial Fisher-Yates).
std::vector<std::size_t> sample_rows(std::size_t n, std::size_t count, std::mt19937_64& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  count = std::min(count, n);
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng() % (n - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(count);
  return idx;
}

FloatMatrix gather_rows(const FloatMatrix& data, std::span<const std::size_t> rows) {
  FloatMatrix out(rows.size(), data.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::copy_n(data.row(rows[i]).begin(), data.cols(), out.row(i).begin());
  }
  return out;
}

FloatMatrix kmeans_plus_plus(const FloatMatrix& data, std::size_t k, Metric m,
                             std::mt19937_64& rng) {
  const std::size_t n = data.rows();
  FloatMatrix centers(k, data.cols());
  std::vector<double> weight(n, std::numeric_limits<double>::infinity());
  std::vector<float> dist(n);

  std::size_t chosen = static_cast<std::size_t>(rng() % n);
  for (std::size_t c = 0; c < k; ++c) {
    std::copy_n(data.row(chosen).begin(), data.cols(), centers.row(c).begin());
    if (c + 1 == k) break;
    batch_distances(centers.row(c), data.data(), data.cols(), m, dist);
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      weight[i] = std::min(weight[i], objective(dist[i], m));
      total += weight[i];
    }
    if (total <= 0.0) {
      // Every point coincides with a chosen center; any row will do.
      chosen = static_cast<std::size_t>(rng() % n);
      continue;
    }
    const double target = uniform01(rng) * total;
    double cumulative = 0.0;
    chosen = n - 1;
    for (std::size_t i = 0; i < n; ++i) {
      cumulative += weight[i];
      if (cumulative > target && weight[i] > 0.0) {
        chosen = i;
        break;
      }
    }
  }
  return centers;
}

void finish_centroid(std::span<float> c, std::span<const double> sum, double count, Metric m) {
  std::vector<float> candidate(c.size());
  for (std::size_t j = 0; j < c.size(); ++j) candidate[j] = static_cast<float>(sum[j] / count);
  if (m == Metric::kCosine) {
    // A zero mean has no direction; keep the previous centroid.
    if (squared_norm(candidate) == 0.0) return;
    normalize_inplace(candidate);
  }
  std::copy(candidate.begin(), candidate.end(), c.begin());
}

// Re-seeds every centroid with no members using the points farthest from
// their own centroid. Returns the number of re-seeded centroids.
std::size_t reseed_empty(const FloatMatrix& data, FloatMatrix& centers,
                         std::span<const CellId> assignment, Metric m) {
  std::vector<std::size_t> counts(centers.rows(), 0);
  for (CellId c : assignment) ++counts[c];
  std::vector<std::size_t> empty;
  for (std::size_t c = 0; c < counts.size(); ++c) {
    if (counts[c] == 0) empty.push_back(c);
  }
  if (empty.empty()) return 0;

  std::vector<std::pair<float, std::size_t>> far(data.rows());
  for (std::size_t i = 0; i < data.rows(); ++i) {
    far[i] = {distance(data.row(i), centers.row(assignment[i]), m), i};
  }
  const std::size_t take = std::min(empty.size(), far.size());
  std::partial_sort(far.begin(), far.begin() + static_cast<std::ptrdiff_t>(take), far.end(),
                    [](const auto& a, const auto& b) {
                      return a.first > b.first || (a.first == b.first && a.second < b.second);
                    });
  for (std::size_t e = 0; e < take; ++e) {
    const auto row = data.row(far[e].second);
    std::copy(row.begin(), row.end(), centers.row(empty[e]).begin());
  }
  return take;
}

KMeansResult train_lloyd(const FloatMatrix& data, const KMeansParams& p, std::mt19937_64& rng) {
  KMeansResult result;
  CentroidSet& cs = result.centroids;
  cs.metric = p.metric;
  cs.trained_on = data.rows();
  cs.centroids = kmeans_plus_plus(data, p.k, p.metric, rng);

  const std::size_t d = data.cols();
  std::vector<CellId> previous;
  std::vector<double> sums(p.k * d);
  std::vector<double> counts(p.k);
  const std::size_t iters = std::max<std::size_t>(p.max_iters, 1);
  for (std::size_t it = 0; it < iters; ++it) {
    std::vector<CellId> current = assign(data, cs, p.threads);
    result.inertia_history.push_back(inertia(data, cs, current));
    result.iterations = it + 1;
    if (current == previous) break;

    std::fill(sums.begin(), sums.end(), 0.0);
    std::fill(counts.begin(), counts.end(), 0.0);
    for (std::size_t i = 0; i < data.rows(); ++i) {
      const auto row = data.row(i);
      double* s = sums.data() + static_cast<std::size_t>(current[i]) * d;
      for (std::size_t j = 0; j < d; ++j) s[j] += row[j];
      counts[current[i]] += 1.0;
    }
    for (std::size_t c = 0; c < p.k; ++c) {
      if (counts[c] > 0.0) {
        finish_centroid(cs.centroids.row(c), std::span<const double>(sums).subspan(c * d, d),
                        counts[c], p.metric);
      }
    }
    result.reseeded += reseed_empty(data, cs.centroids, current, p.metric);
    previous = std::move(current);
  }
  return result;
}

KMeansResult train_minibatch(const FloatMatrix& data, const KMeansParams& p,
                             std::mt19937_64& rng) {
  KMeansResult result;
  CentroidSet& cs = result.centroids;
  cs.metric = p.metric;
  cs.trained_on = data.rows();

  const std::size_t n = data.rows();
  const std::size_t d = data.cols();
  const std::size_t init_size = std::min(n, std::max(3 * p.batch_size, 3 * p.k));
  const FloatMatrix init_sample = gather_rows(data, sample_rows(n, init_size, rng));
  cs.centroids = kmeans_plus_plus(init_sample, p.k, p.metric, rng);

  std::vector<double> seen(p.k, 0.0);
  const std::size_t batch = std::min(p.batch_size, n);
  for (std::size_t it = 0; it < p.max_iters; ++it) {
    const auto rows = sample_rows(n, batch, rng);
    std::vector<CellId> cells(rows.size());
    double batch_objective = 0.0;
    for (std::size_t b = 0; b < rows.size(); ++b) {
      cells[b] = nearest_cell(data.row(rows[b]), cs);
      batch_objective +=
          objective(distance(data.row(rows[b]), cs.centroids.row(cells[b]), p.metric), p.metric);
    }
    std::vector<bool> touched(p.k, false);
    for (std::size_t b = 0; b < rows.size(); ++b) {
      const CellId c = cells[b];
      seen[c] += 1.0;
      const double eta = 1.0 / seen[c];
      auto centroid = cs.centroids.row(c);
      const auto x = data.row(rows[b]);
      for (std::size_t j = 0; j < d; ++j) {
        centroid[j] = static_cast<float>((1.0 - eta) * centroid[j] + eta * x[j]);
      }
      touched[c] = true;
    }
    if (p.metric == Metric::kCosine) {
      for (std::size_t c = 0; c < p.k; ++c) {
        if (touched[c] && squared_norm(cs.centroids.row(c)) > 0.0) {
          normalize_inplace(cs.centroids.row(c));
        }
      }
    }
    result.inertia_history.push_back(batch_objective);
    result.iterations = it + 1;
  }

  // Repair against the init sample: centroids that attract none of it are
  // moved onto its worst-served points.
  const auto sample_assignment = assign(init_sample, cs, p.threads);
  result.reseeded += reseed_empty(init_sample, cs.centroids, sample_assignment, p.metric);
  return result;
}

}  // namespace

std::vector<std::size_t> sample_rows(std::size_t n, std::size_t count, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  auto rows = sample_rows(n, count, rng);
  std::sort(rows.begin(), rows.end());
  return rows;
}

std::string_view kmeans_mode_name(KMeansMode mode) {
  return mode == KMeansMode::kLloyd ? "lloyd" : "minibatch";
}

KMeansMode parse_kmeans_mode(std::string_view name) {
  if (name == "lloyd" || name == "LLOYD") return KMeansMode::kLloyd;
  if (name == "minibatch" || name == "MINIBATCH" || name == "mini-batch") {
    return KMeansMode::kMiniBatch;
  }
  throw UsageError("unknown k-means mode '" + std::string(name) +
                   "' (expected lloyd or minibatch)");
}

std::size_t default_k(std::size_t n) {
  if (n == 0) throw UsageError("default_k: n must be at least 1");
  std::size_t k = 0;
  if (n <= 1'000'000) {
    k = static_cast<std::size_t>(std::llround(static_cast<double>(n) / 1000.0));
  } else {
    k = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(n))));
  }
  return std::clamp<std::size_t>(k, 1, n);
}

KMeansResult train_kmeans(const FloatMatrix& data, const KMeansParams& params) {
  check_training_input(data, params);
  std::mt19937_64 rng(params.seed);
  return params.mode == KMeansMode::kLloyd ? train_lloyd(data, params, rng)
                                           : train_minibatch(data, params, rng);
}

CellId nearest_cell(std::span<const float> v, const CentroidSet& cs) {
  if (v.size() != cs.dim()) {
    throw UsageError("dimension mismatch: vector has " + std::to_string(v.size()) +
                     " components, centroids have " + std::to_string(cs.dim()));
  }
  CellId best = 0;
  float best_d = std::numeric_limits<float>::infinity();
  for (std::size_t c = 0; c < cs.k(); ++c) {
    const float dist = distance(v, cs.centroids.row(c), cs.metric);
    if (dist < best_d) {
      best_d = dist;
      best = static_cast<CellId>(c);
    }
  }
  return best;
}

std::vector<CellId> nearest_cells(std::span<const float> v, const CentroidSet& cs, std::size_t t) {
  const std::vector<float> dists = batch_distances(v, cs.centroids, cs.metric);
  std::vector<CellId> order(cs.k());
  std::iota(order.begin(), order.end(), CellId{0});
  t = std::min(t, order.size());
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(t), order.end(),
                    [&](CellId a, CellId b) {
                      return dists[a] < dists[b] || (dists[a] == dists[b] && a < b);
                    });
  order.resize(t);
  return order;
}

std::vector<CellId> assign(const FloatMatrix& data, const CentroidSet& cs, std::size_t threads) {
  if (data.rows() != 0 && data.cols() != cs.dim()) {
    throw UsageError("dimension mismatch: data has " + std::to_string(data.cols()) +
                     " columns, centroids have " + std::to_string(cs.dim()));
  }
  std::vector<CellId> out(data.rows());
  auto work = [&](std::size_t begin, std::size_t end) {
    std::vector<float> dists(cs.k());
    for (std::size_t i = begin; i < end; ++i) {
      batch_distances(data.row(i), cs.centroids.data(), cs.dim(), cs.metric, dists);
      CellId best = 0;
      for (std::size_t c = 1; c < dists.size(); ++c) {
        if (dists[c] < dists[best]) best = static_cast<CellId>(c);
      }
      out[i] = best;
    }
  };
  threads = std::clamp<std::size_t>(threads, 1, std::max<std::size_t>(data.rows() / 256, 1));
  if (threads == 1) {
    work(0, data.rows());
    return out;
  }
  {
    std::vector<std::jthread> pool;
    const std::size_t chunk = (data.rows() + threads - 1) / threads;
    for (std::size_t t = 0; t < threads; ++t) {
      const std::size_t begin = t * chunk;
      const std::size_t end = std::min(data.rows(), begin + chunk);
      if (begin < end) pool.emplace_back(work, begin, end);
    }
  }
  return out;
}

double inertia(const FloatMatrix& data, const CentroidSet& cs, std::span<const CellId> assignment) {
  if (assignment.size() != data.rows()) throw UsageError("assignment size does not match data");
  double total = 0.0;
  for (std::size_t i = 0; i < data.rows(); ++i) {
    const auto c = cs.centroids.row(assignment[i]);
    total += cs.metric == Metric::kEuclidean ? squared_l2(data.row(i), c)
                                             : 1.0 - dot(data.row(i), c);
  }
  return total;
}

}  // namespace hybridivf
