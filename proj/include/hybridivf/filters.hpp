#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "hybridivf/core.hpp"

namespace hybridivf {

enum class CompareOp : std::uint8_t { kEq, kNe, kLt, kLe, kGt, kGe, kBetween, kIn };

struct Predicate {
  std::uint32_t attr = 0;
  CompareOp op = CompareOp::kEq;
  /// One value for the relational ops, lo/hi for BETWEEN, the set for IN.
  std::vector<std::int64_t> operands;

  bool operator==(const Predicate&) const = default;
};

/// Boolean expression over attribute predicates. AND/OR nodes are n-ary;
/// NOT has exactly one child.
struct FilterExpr {
  enum class Kind : std::uint8_t { kPredicate, kAnd, kOr, kNot };

  Kind kind = Kind::kPredicate;
  Predicate predicate;
  std::vector<FilterExpr> children;

  static FilterExpr leaf(Predicate p);
  static FilterExpr all_of(std::vector<FilterExpr> terms);
  static FilterExpr any_of(std::vector<FilterExpr> terms);
  static FilterExpr negate(FilterExpr term);

  std::size_t depth() const;
  /// Largest referenced attribute index.
  std::uint32_t max_attr() const;

  bool operator==(const FilterExpr&) const = default;
};

inline constexpr std::size_t kMaxFilterDepth = 64;

/// Filter text that does not match the grammar. offset() is the 0-based
/// character position where parsing failed.
class FilterSyntaxError : public UsageError {
 public:
  FilterSyntaxError(const std::string& message, std::size_t offset);
  std::size_t offset() const { return offset_; }

 private:
  std::size_t offset_;
};

/// Parses the filter language:
///
///   expr  := or
///   or    := and ('OR' and)*
///   and   := unary ('AND' unary)*
///   unary := 'NOT' unary | '(' expr ')' | pred
///   pred  := 'a'<digits> ( op int | 'BETWEEN' int 'AND' int | 'IN' '(' int {',' int} ')' )
///   op    := = | != | < | <= | > | >=
///
/// Keywords are case-insensitive. Attribute indices must be < num_attrs.
FilterExpr parse_filter(std::string_view text, std::size_t num_attrs);

/// Canonical text form; parse_filter(to_string(f)) == f.
std::string to_string(const FilterExpr& f);

/// Throws UsageError when the tree references an attribute >= num_attrs,
/// exceeds the depth limit or holds a malformed predicate.
void validate_filter(const FilterExpr& f, std::size_t num_attrs);

bool eval_predicate(const Predicate& p, std::span<const std::int64_t> attrs);
bool eval_filter(const FilterExpr& f, std::span<const std::int64_t> attrs);
/// An absent filter accepts every record.
bool eval_filter(const std::optional<FilterExpr>& f, std::span<const std::int64_t> attrs);

/// Fixed-length bit set packed into 64-bit words.
class Bitmask {
 public:
  Bitmask() = default;
  explicit Bitmask(std::size_t size, bool value = false);

  std::size_t size() const { return size_; }
  bool test(std::size_t i) const { return (words_[i >> 6] >> (i & 63)) & 1U; }
  void set(std::size_t i, bool value = true);
  std::size_t count() const;
  bool none() const { return count() == 0; }

  std::span<std::uint64_t> words() { return words_; }
  std::span<const std::uint64_t> words() const { return words_; }

  Bitmask& operator&=(const Bitmask& other);
  Bitmask& operator|=(const Bitmask& other);
  void flip();

  bool operator==(const Bitmask&) const = default;

 private:
  void clear_tail();

  std::size_t size_ = 0;
  std::vector<std::uint64_t> words_;
};

/// Attributes of a block of records stored column by column, the in-memory
/// layout used for list filtering.
class ColumnarAttributes {
 public:
  ColumnarAttributes() = default;
  explicit ColumnarAttributes(std::size_t num_attrs) : columns_(num_attrs) {}
  static ColumnarAttributes from_rows(const AttrMatrix& rows);

  std::size_t rows() const { return rows_; }
  std::size_t num_attrs() const { return columns_.size(); }
  std::span<const std::int64_t> column(std::size_t j) const { return columns_[j]; }
  std::int64_t at(std::size_t row, std::size_t attr) const { return columns_[attr][row]; }
  std::vector<std::int64_t> row(std::size_t i) const;

  void append_row(std::span<const std::int64_t> values);

 private:
  std::size_t rows_ = 0;
  std::vector<std::vector<std::int64_t>> columns_;
};

/// Bit i is set iff eval_filter(f, row i). Each predicate leaf makes one
/// pass over its column.
Bitmask eval_filter_block(const FilterExpr& f, const AttrMatrix& block);
Bitmask eval_filter_block(const FilterExpr& f, const ColumnarAttributes& block);
Bitmask eval_filter_block(const std::optional<FilterExpr>& f, const ColumnarAttributes& block);

}  // namespace hybridivf
