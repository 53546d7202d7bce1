#include <algorithm>
#include <bit>

#include "hybridivf/filters.hpp"

namespace hybridivf {

bool eval_predicate(const Predicate& p, std::span<const std::int64_t> attrs) {
  const std::int64_t v = attrs[p.attr];
  switch (p.op) {
    case CompareOp::kEq: return v == p.operands[0];
    case CompareOp::kNe: return v != p.operands[0];
    case CompareOp::kLt: return v < p.operands[0];
    case CompareOp::kLe: return v <= p.operands[0];
    case CompareOp::kGt: return v > p.operands[0];
    case CompareOp::kGe: return v >= p.operands[0];
    case CompareOp::kBetween: return p.operands[0] <= v && v <= p.operands[1];
    case CompareOp::kIn:
      return std::find(p.operands.begin(), p.operands.end(), v) != p.operands.end();
  }
  return false;
}

bool eval_filter(const FilterExpr& f, std::span<const std::int64_t> attrs) {
  using Kind = FilterExpr::Kind;
  switch (f.kind) {
    case Kind::kPredicate: return eval_predicate(f.predicate, attrs);
    case Kind::kNot: return !eval_filter(f.children[0], attrs);
    case Kind::kAnd:
      return std::all_of(f.children.begin(), f.children.end(),
                         [&](const FilterExpr& c) { return eval_filter(c, attrs); });
    case Kind::kOr:
      return std::any_of(f.children.begin(), f.children.end(),
                         [&](const FilterExpr& c) { return eval_filter(c, attrs); });
  }
  return false;
}

bool eval_filter(const std::optional<FilterExpr>& f, std::span<const std::int64_t> attrs) {
  return !f || eval_filter(*f, attrs);
}

// ---- Bitmask ----

Bitmask::Bitmask(std::size_t size, bool value)
    : size_(size), words_((size + 63) / 64, value ? ~std::uint64_t{0} : 0) {
  clear_tail();
}

void Bitmask::set(std::size_t i, bool value) {
  const std::uint64_t bit = std::uint64_t{1} << (i & 63);
  if (value) {
    words_[i >> 6] |= bit;
  } else {
    words_[i >> 6] &= ~bit;
  }
}

std::size_t Bitmask::count() const {
  std::size_t n = 0;
  for (std::uint64_t w : words_) n += static_cast<std::size_t>(std::popcount(w));
  return n;
}

Bitmask& Bitmask::operator&=(const Bitmask& other) {
  if (other.size_ != size_) throw UsageError("bitmask size mismatch");
  for (std::size_t w = 0; w < words_.size(); ++w) words_[w] &= other.words_[w];
  return *this;
}

Bitmask& Bitmask::operator|=(const Bitmask& other) {
  if (other.size_ != size_) throw UsageError("bitmask size mismatch");
  for (std::size_t w = 0; w < words_.size(); ++w) words_[w] |= other.words_[w];
  return *this;
}

void Bitmask::flip() {
  for (auto& w : words_) w = ~w;
  clear_tail();
}

void Bitmask::clear_tail() {
  if (size_ % 64 != 0 && !words_.empty()) {
    words_.back() &= (std::uint64_t{1} << (size_ % 64)) - 1;
  }
}

// ---- ColumnarAttributes ----

ColumnarAttributes ColumnarAttributes::from_rows(const AttrMatrix& rows) {
  ColumnarAttributes out(rows.cols());
  out.rows_ = rows.rows();
  for (std::size_t j = 0; j < rows.cols(); ++j) {
    auto& col = out.columns_[j];
    col.resize(rows.rows());
    for (std::size_t i = 0; i < rows.rows(); ++i) col[i] = rows.row(i)[j];
  }
  return out;
}

std::vector<std::int64_t> ColumnarAttributes::row(std::size_t i) const {
  std::vector<std::int64_t> out(columns_.size());
  for (std::size_t j = 0; j < columns_.size(); ++j) out[j] = columns_[j][i];
  return out;
}

void ColumnarAttributes::append_row(std::span<const std::int64_t> values) {
  if (values.size() != columns_.size()) throw UsageError("attribute row has the wrong width");
  for (std::size_t j = 0; j < columns_.size(); ++j) columns_[j].push_back(values[j]);
  ++rows_;
}

// ---- block evaluation ----

namespace {

// A column viewed through a stride: stride 1 for columnar storage, M for a
// row-major n x M block.
struct StridedColumn {
  const std::int64_t* base;
  std::size_t stride;
  std::int64_t operator[](std::size_t i) const { return base[i * stride]; }
};

template <typename Pred>
void fill_mask(Bitmask& mask, StridedColumn col, Pred pred) {
  auto words = mask.words();
  const std::size_t n = mask.size();
  for (std::size_t w = 0; w < words.size(); ++w) {
    const std::size_t begin = w * 64;
    const std::size_t end = std::min(n, begin + 64);
    std::uint64_t bits = 0;
    for (std::size_t i = begin; i < end; ++i) {
      bits |= static_cast<std::uint64_t>(pred(col[i])) << (i - begin);
    }
    words[w] = bits;
  }
}

Bitmask leaf_mask(const Predicate& p, StridedColumn col, std::size_t n) {
  Bitmask mask(n);
  const std::int64_t x = p.operands.empty() ? 0 : p.operands[0];
  switch (p.op) {
    case CompareOp::kEq: fill_mask(mask, col, [x](std::int64_t v) { return v == x; }); break;
    case CompareOp::kNe: fill_mask(mask, col, [x](std::int64_t v) { return v != x; }); break;
    case CompareOp::kLt: fill_mask(mask, col, [x](std::int64_t v) { return v < x; }); break;
    case CompareOp::kLe: fill_mask(mask, col, [x](std::int64_t v) { return v <= x; }); break;
    case CompareOp::kGt: fill_mask(mask, col, [x](std::int64_t v) { return v > x; }); break;
    case CompareOp::kGe: fill_mask(mask, col, [x](std::int64_t v) { return v >= x; }); break;
    case CompareOp::kBetween: {
      const std::int64_t hi = p.operands[1];
      fill_mask(mask, col, [x, hi](std::int64_t v) { return x <= v && v <= hi; });
      break;
    }
    case CompareOp::kIn: {
      std::vector<std::int64_t> set = p.operands;
      std::sort(set.begin(), set.end());
      if (set.size() <= 8) {
        fill_mask(mask, col, [&set](std::int64_t v) {
          return std::find(set.begin(), set.end(), v) != set.end();
        });
      } else {
        fill_mask(mask, col, [&set](std::int64_t v) {
          return std::binary_search(set.begin(), set.end(), v);
        });
      }
      break;
    }
  }
  return mask;
}

template <typename ColumnAt>
Bitmask eval_block(const FilterExpr& f, std::size_t n, const ColumnAt& column_at) {
  using Kind = FilterExpr::Kind;
  switch (f.kind) {
    case Kind::kPredicate: return leaf_mask(f.predicate, column_at(f.predicate.attr), n);
    case Kind::kNot: {
      Bitmask m = eval_block(f.children[0], n, column_at);
      m.flip();
      return m;
    }
    case Kind::kAnd: {
      Bitmask m = eval_block(f.children[0], n, column_at);
      for (std::size_t i = 1; i < f.children.size() && !m.none(); ++i) {
        m &= eval_block(f.children[i], n, column_at);
      }
      return m;
    }
    case Kind::kOr: {
      Bitmask m = eval_block(f.children[0], n, column_at);
      for (std::size_t i = 1; i < f.children.size(); ++i) m |= eval_block(f.children[i], n, column_at);
      return m;
    }
  }
  return Bitmask(n);
}

}  // namespace

Bitmask eval_filter_block(const FilterExpr& f, const AttrMatrix& block) {
  if (block.rows() == 0) return Bitmask(0);
  if (f.max_attr() >= block.cols()) {
    throw UsageError("filter references an attribute beyond the block width");
  }
  const std::int64_t* base = block.data().data();
  const std::size_t stride = block.cols();
  return eval_block(f, block.rows(), [&](std::uint32_t attr) {
    return StridedColumn{base + attr, stride};
  });
}

Bitmask eval_filter_block(const FilterExpr& f, const ColumnarAttributes& block) {
  if (block.rows() == 0) return Bitmask(0);
  if (f.max_attr() >= block.num_attrs()) {
    throw UsageError("filter references an attribute beyond the block width");
  }
  return eval_block(f, block.rows(), [&](std::uint32_t attr) {
    return StridedColumn{block.column(attr).data(), 1};
  });
}

Bitmask eval_filter_block(const std::optional<FilterExpr>& f, const ColumnarAttributes& block) {
  if (!f) return Bitmask(block.rows(), true);
  return eval_filter_block(*f, block);
}

}  // namespace hybridivf
