#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "hybridivf/core.hpp"

namespace hybridivf {

enum class KMeansMode : std::uint8_t { kLloyd = 0, kMiniBatch = 1 };

std::string_view kmeans_mode_name(KMeansMode mode);
KMeansMode parse_kmeans_mode(std::string_view name);

struct CentroidSet {
  FloatMatrix centroids;  // K x D
  Metric metric = Metric::kEuclidean;
  std::size_t trained_on = 0;

  std::size_t k() const { return centroids.rows(); }
  std::size_t dim() const { return centroids.cols(); }
};

struct KMeansParams {
  std::size_t k = 1;
  Metric metric = Metric::kEuclidean;
  KMeansMode mode = KMeansMode::kLloyd;
  std::uint64_t seed = 0;
  std::size_t max_iters = 100;
  std::size_t batch_size = 1024;
  std::size_t threads = 1;
};

struct KMeansResult {
  CentroidSet centroids;
  /// Lloyd: objective after each assignment step. Mini-batch: objective on
  /// the current batch, for logging only.
  std::vector<double> inertia_history;
  std::size_t iterations = 0;
  std::size_t reseeded = 0;
};

/// `count` distinct indices from [0, n), drawn with a seeded partial
/// Fisher-Yates shuffle and returned in ascending order.
std::vector<std::size_t> sample_rows(std::size_t n, std::size_t count, std::uint64_t seed);

/// K heuristic: N/1000 up to a million vectors, sqrt(N) beyond.
std::size_t default_k(std::size_t n);

/// k-means++ seeded Lloyd or mini-batch k-means. Deterministic for a fixed
/// seed. Under cosine, `data` must hold unit vectors and centroids are
/// renormalized after every update (spherical k-means).
KMeansResult train_kmeans(const FloatMatrix& data, const KMeansParams& params);

/// Nearest cell by the set's metric; ties go to the lower cell index.
CellId nearest_cell(std::span<const float> v, const CentroidSet& cs);

/// The `t` nearest cells in ascending distance (lower index on ties).
/// t > K yields all K cells.
std::vector<CellId> nearest_cells(std::span<const float> v, const CentroidSet& cs, std::size_t t);

std::vector<CellId> assign(const FloatMatrix& data, const CentroidSet& cs, std::size_t threads = 1);

/// Sum over rows of the metric's clustering objective against the assigned
/// centroid: squared L2 for euclidean, 1 - dot for cosine.
double inertia(const FloatMatrix& data, const CentroidSet& cs, std::span<const CellId> assignment);

}  // namespace hybridivf
