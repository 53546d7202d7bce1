#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace hybridivf {

using RecordId = std::uint64_t;
using CellId = std::uint32_t;

/// Raised for caller mistakes: bad dimensions, out-of-range parameters,
/// malformed filters. The CLI maps it to exit code 2.
class UsageError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised for filesystem / corrupt-file problems. The CLI maps it to exit code 1.
class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Metric : std::uint8_t { kEuclidean = 0, kCosine = 1 };

std::string_view metric_name(Metric m);
Metric parse_metric(std::string_view name);

/// Dense row-major matrix. Rows are contiguous, which is the layout of both
/// the on-disk blocks and the batched distance kernel.
template <typename T>
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols) : rows_(rows), cols_(cols), data_(rows * cols) {}
  Matrix(std::vector<T> data, std::size_t cols)
      : rows_(cols == 0 ? 0 : data.size() / cols), cols_(cols), data_(std::move(data)) {
    if (cols_ != 0 && data_.size() % cols_ != 0) {
      throw UsageError("matrix data size is not a multiple of the column count");
    }
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool empty() const { return rows_ == 0; }

  std::span<T> row(std::size_t i) { return {data_.data() + i * cols_, cols_}; }
  std::span<const T> row(std::size_t i) const { return {data_.data() + i * cols_, cols_}; }

  std::span<T> data() { return data_; }
  std::span<const T> data() const { return data_; }

  void append_row(std::span<const T> values) {
    if (values.size() != cols_) throw UsageError("row width does not match matrix columns");
    data_.insert(data_.end(), values.begin(), values.end());
    ++rows_;
  }

  void reserve_rows(std::size_t n) { data_.reserve(n * cols_); }

  bool operator==(const Matrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

using FloatMatrix = Matrix<float>;
using AttrMatrix = Matrix<std::int64_t>;

struct Neighbor {
  RecordId id = 0;
  float distance = 0.0f;

  bool operator==(const Neighbor&) const = default;
};

/// Result order: ascending distance, ties broken toward the lower id.
inline bool neighbor_less(const Neighbor& a, const Neighbor& b) {
  return a.distance < b.distance || (a.distance == b.distance && a.id < b.id);
}

// Distance kernels. For kCosine both inputs must already be unit length;
// the distance is 1 - <a, b>, clamped at zero. Accumulation is in double.
float distance(std::span<const float> a, std::span<const float> b, Metric m);

/// Distances from `query` to every row of `block` in one pass.
/// Element i is bit-identical to distance(query, block.row(i), m).
std::vector<float> batch_distances(std::span<const float> query, const FloatMatrix& block, Metric m);
void batch_distances(std::span<const float> query, std::span<const float> block, std::size_t dim,
                     Metric m, std::span<float> out);

double squared_norm(std::span<const float> v);
double squared_l2(std::span<const float> a, std::span<const float> b);
double dot(std::span<const float> a, std::span<const float> b);

/// Unit-L2 copy of v. Throws UsageError for a zero (or non-finite) vector.
std::vector<float> normalize(std::span<const float> v);
void normalize_inplace(std::span<float> v);

bool all_finite(std::span<const float> v);

/// Validate a vector about to be stored: finite components, and for cosine
/// a nonzero norm. Normalizes in place under cosine.
void prepare_for_storage(std::span<float> v, Metric m);
void prepare_for_storage(FloatMatrix& rows, Metric m);

}  // namespace hybridivf
