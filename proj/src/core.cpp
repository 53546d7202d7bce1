#include "hybridivf/core.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <string>

namespace hybridivf {

namespace {

// Eight independent double lanes combined in a fixed order. The lane split
// lets the compiler vectorize without -ffast-math while keeping the result
// identical across the scalar and batched entry points.
inline double squared_l2_kernel(const float* a, const float* b, std::size_t d) {
  double acc[8] = {0, 0, 0, 0, 0, 0, 0, 0};
  std::size_t i = 0;
  for (; i + 8 <= d; i += 8) {
    for (std::size_t j = 0; j < 8; ++j) {
      const double t = static_cast<double>(a[i + j]) - static_cast<double>(b[i + j]);
      acc[j] += t * t;
    }
  }
  double tail = 0.0;
  for (; i < d; ++i) {
    const double t = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    tail += t * t;
  }
  return ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail;
}

inline double dot_kernel(const float* a, const float* b, std::size_t d) {
  double acc[8] = {0, 0, 0, 0, 0, 0, 0, 0};
  std::size_t i = 0;
  for (; i + 8 <= d; i += 8) {
    for (std::size_t j = 0; j < 8; ++j) {
      acc[j] += static_cast<double>(a[i + j]) * static_cast<double>(b[i + j]);
    }
  }
  double tail = 0.0;
  for (; i < d; ++i) tail += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  return ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail;
}

inline float distance_kernel(const float* a, const float* b, std::size_t d, Metric m) {
  if (m == Metric::kEuclidean) {
    return static_cast<float>(std::sqrt(squared_l2_kernel(a, b, d)));
  }
  return static_cast<float>(std::max(0.0, 1.0 - dot_kernel(a, b, d)));
}

}  // namespace

std::string_view metric_name(Metric m) {
  return m == Metric::kEuclidean ? "euclidean" : "cosine";
}

Metric parse_metric(std::string_view name) {
  std::string lower(name);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (lower == "euclidean" || lower == "l2") return Metric::kEuclidean;
  if (lower == "cosine") return Metric::kCosine;
  throw UsageError("unknown metric '" + std::string(name) + "' (expected euclidean or cosine)");
}

float distance(std::span<const float> a, std::span<const float> b, Metric m) {
  if (a.size() != b.size()) {
    throw UsageError("dimension mismatch: " + std::to_string(a.size()) + " vs " +
                     std::to_string(b.size()));
  }
  return distance_kernel(a.data(), b.data(), a.size(), m);
}

void batch_distances(std::span<const float> query, std::span<const float> block, std::size_t dim,
                     Metric m, std::span<float> out) {
  if (query.size() != dim) {
    throw UsageError("dimension mismatch: query has " + std::to_string(query.size()) +
                     " components, block rows have " + std::to_string(dim));
  }
  const std::size_t n = dim == 0 ? 0 : block.size() / dim;
  if (dim != 0 && block.size() % dim != 0) throw UsageError("block size is not a multiple of dim");
  if (out.size() != n) throw UsageError("output span does not match block row count");
  const float* q = query.data();
  const float* row = block.data();
  for (std::size_t i = 0; i < n; ++i, row += dim) out[i] = distance_kernel(q, row, dim, m);
}

std::vector<float> batch_distances(std::span<const float> query, const FloatMatrix& block,
                                   Metric m) {
  std::vector<float> out(block.rows());
  if (block.rows() == 0) {
    if (!query.empty() && block.cols() != 0 && query.size() != block.cols()) {
      throw UsageError("dimension mismatch between query and block");
    }
    return out;
  }
  batch_distances(query, block.data(), block.cols(), m, out);
  return out;
}

double squared_norm(std::span<const float> v) { return dot_kernel(v.data(), v.data(), v.size()); }

double squared_l2(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) throw UsageError("dimension mismatch in squared_l2");
  return squared_l2_kernel(a.data(), b.data(), a.size());
}

double dot(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) throw UsageError("dimension mismatch in dot");
  return dot_kernel(a.data(), b.data(), a.size());
}

bool all_finite(std::span<const float> v) {
  return std::all_of(v.begin(), v.end(), [](float x) { return std::isfinite(x); });
}

void normalize_inplace(std::span<float> v) {
  if (!all_finite(v)) throw UsageError("cannot normalize a vector with non-finite components");
  const double norm = std::sqrt(squared_norm(v));
  if (norm == 0.0) throw UsageError("cannot normalize a zero vector");
  for (float& x : v) x = static_cast<float>(static_cast<double>(x) / norm);
}

std::vector<float> normalize(std::span<const float> v) {
  std::vector<float> out(v.begin(), v.end());
  normalize_inplace(out);
  return out;
}

void prepare_for_storage(std::span<float> v, Metric m) {
  if (!all_finite(v)) throw UsageError("vector has NaN or infinite components");
  if (m == Metric::kCosine) normalize_inplace(v);
}

void prepare_for_storage(FloatMatrix& rows, Metric m) {
  for (std::size_t i = 0; i < rows.rows(); ++i) {
    try {
      prepare_for_storage(rows.row(i), m);
    } catch (const UsageError& e) {
      throw UsageError("row " + std::to_string(i) + ": " + e.what());
    }
  }
}

}  // namespace hybridivf
