#include <algorithm>
#include <cctype>
#include <charconv>
#include <limits>
#include <string>

#include "hybridivf/filters.hpp"

namespace hybridivf {

FilterSyntaxError::FilterSyntaxError(const std::string& message, std::size_t offset)
    : UsageError("filter syntax error at offset " + std::to_string(offset) + ": " + message),
      offset_(offset) {}

namespace {

// Recursion guard for the parser itself; the semantic depth limit is
// enforced afterwards by validate_filter.
constexpr std::size_t kMaxNesting = 4 * kMaxFilterDepth;

bool iequals(std::string_view a, std::string_view b) {
  return a.size() == b.size() &&
         std::equal(a.begin(), a.end(), b.begin(), [](char x, char y) {
           return std::tolower(static_cast<unsigned char>(x)) ==
                  std::tolower(static_cast<unsigned char>(y));
         });
}

class Parser {
 public:
  Parser(std::string_view text) : text_(text) {}

  FilterExpr parse() {
    skip_space();
    if (pos_ == text_.size()) fail("empty filter expression");
    FilterExpr e = parse_or();
    skip_space();
    if (pos_ != text_.size()) fail("unexpected trailing input");
    return e;
  }

 private:
  [[noreturn]] void fail(const std::string& msg) const { throw FilterSyntaxError(msg, pos_); }

  void skip_space() {
    while (pos_ < text_.size() && std::isspace(static_cast<unsigned char>(text_[pos_]))) ++pos_;
  }

  // Peeks an alphabetic word without consuming it.
  std::string_view peek_word() {
    skip_space();
    std::size_t end = pos_;
    while (end < text_.size() && std::isalpha(static_cast<unsigned char>(text_[end]))) ++end;
    return text_.substr(pos_, end - pos_);
  }

  bool accept_keyword(std::string_view kw) {
    const std::string_view word = peek_word();
    if (!iequals(word, kw)) return false;
    // Reject prefixes of identifiers such as "ANDx".
    const std::size_t end = pos_ + word.size();
    if (end < text_.size() && std::isalnum(static_cast<unsigned char>(text_[end]))) return false;
    pos_ = end;
    return true;
  }

  void expect_keyword(std::string_view kw) {
    if (!accept_keyword(kw)) fail("expected '" + std::string(kw) + "'");
  }

  bool accept_char(char c) {
    skip_space();
    if (pos_ < text_.size() && text_[pos_] == c) {
      ++pos_;
      return true;
    }
    return false;
  }

  void expect_char(char c) {
    if (!accept_char(c)) fail(std::string("expected '") + c + "'");
  }

  void enter() {
    if (++nesting_ > kMaxNesting) fail("expression nested too deeply");
  }
  void leave() { --nesting_; }

  FilterExpr parse_or() {
    enter();
    std::vector<FilterExpr> terms;
    terms.push_back(parse_and());
    while (accept_keyword("OR")) terms.push_back(parse_and());
    leave();
    return terms.size() == 1 ? std::move(terms.front()) : FilterExpr::any_of(std::move(terms));
  }

  FilterExpr parse_and() {
    std::vector<FilterExpr> terms;
    terms.push_back(parse_unary());
    while (accept_keyword("AND")) terms.push_back(parse_unary());
    return terms.size() == 1 ? std::move(terms.front()) : FilterExpr::all_of(std::move(terms));
  }

  FilterExpr parse_unary() {
    enter();
    FilterExpr result;
    if (accept_keyword("NOT")) {
      result = FilterExpr::negate(parse_unary());
    } else if (accept_char('(')) {
      result = parse_or();
      expect_char(')');
    } else {
      result = FilterExpr::leaf(parse_predicate());
    }
    leave();
    return result;
  }

  std::uint32_t parse_attribute() {
    skip_space();
    if (pos_ >= text_.size() || (text_[pos_] != 'a' && text_[pos_] != 'A')) {
      fail("expected attribute reference such as a0");
    }
    ++pos_;
    const std::size_t start = pos_;
    while (pos_ < text_.size() && std::isdigit(static_cast<unsigned char>(text_[pos_]))) ++pos_;
    if (pos_ == start) fail("expected digits after 'a'");
    if (pos_ < text_.size() && (std::isalpha(static_cast<unsigned char>(text_[pos_])) ||
                                text_[pos_] == '_')) {
      fail("unexpected character in attribute reference");
    }
    std::uint32_t index = 0;
    const auto [ptr, ec] = std::from_chars(text_.data() + start, text_.data() + pos_, index);
    if (ec != std::errc()) {
      pos_ = start;
      fail("attribute index out of range");
    }
    return index;
  }

  std::int64_t parse_int() {
    skip_space();
    const std::size_t start = pos_;
    std::size_t p = pos_;
    if (p < text_.size() && (text_[p] == '-' || text_[p] == '+')) ++p;
    const std::size_t digits = p;
    while (p < text_.size() && std::isdigit(static_cast<unsigned char>(text_[p]))) ++p;
    if (p == digits) fail("expected integer");
    const char* first = text_.data() + start + (text_[start] == '+' ? 1 : 0);
    std::int64_t value = 0;
    const auto [ptr, ec] = std::from_chars(first, text_.data() + p, value);
    if (ec != std::errc()) fail("integer out of 64-bit range");
    pos_ = p;
    return value;
  }

  Predicate parse_predicate() {
    Predicate pred;
    pred.attr = parse_attribute();
    skip_space();
    if (accept_keyword("BETWEEN")) {
      pred.op = CompareOp::kBetween;
      pred.operands.push_back(parse_int());
      expect_keyword("AND");
      pred.operands.push_back(parse_int());
      return pred;
    }
    if (accept_keyword("IN")) {
      pred.op = CompareOp::kIn;
      expect_char('(');
      pred.operands.push_back(parse_int());
      while (accept_char(',')) pred.operands.push_back(parse_int());
      expect_char(')');
      return pred;
    }
    pred.op = parse_operator();
    pred.operands.push_back(parse_int());
    return pred;
  }

  CompareOp parse_operator() {
    skip_space();
    const std::string_view rest = text_.substr(pos_);
    auto take = [&](std::size_t n, CompareOp op) {
      pos_ += n;
      return op;
    };
    if (rest.starts_with("!=")) return take(2, CompareOp::kNe);
    if (rest.starts_with("<=")) return take(2, CompareOp::kLe);
    if (rest.starts_with(">=")) return take(2, CompareOp::kGe);
    if (rest.starts_with("=")) return take(1, CompareOp::kEq);
    if (rest.starts_with("<")) return take(1, CompareOp::kLt);
    if (rest.starts_with(">")) return take(1, CompareOp::kGt);
    fail("expected comparison operator, BETWEEN or IN");
  }

  std::string_view text_;
  std::size_t pos_ = 0;
  std::size_t nesting_ = 0;
};

std::string_view op_text(CompareOp op) {
  switch (op) {
    case CompareOp::kEq: return "=";
    case CompareOp::kNe: return "!=";
    case CompareOp::kLt: return "<";
    case CompareOp::kLe: return "<=";
    case CompareOp::kGt: return ">";
    case CompareOp::kGe: return ">=";
    case CompareOp::kBetween: return "BETWEEN";
    case CompareOp::kIn: return "IN";
  }
  return "?";
}

void print(const FilterExpr& f, std::string& out) {
  using Kind = FilterExpr::Kind;
  switch (f.kind) {
    case Kind::kPredicate: {
      const Predicate& p = f.predicate;
      out += "a" + std::to_string(p.attr) + " " + std::string(op_text(p.op)) + " ";
      if (p.op == CompareOp::kBetween) {
        out += std::to_string(p.operands.at(0)) + " AND " + std::to_string(p.operands.at(1));
      } else if (p.op == CompareOp::kIn) {
        out += "(";
        for (std::size_t i = 0; i < p.operands.size(); ++i) {
          if (i != 0) out += ", ";
          out += std::to_string(p.operands[i]);
        }
        out += ")";
      } else {
        out += std::to_string(p.operands.at(0));
      }
      return;
    }
    case Kind::kNot: {
      out += "NOT ";
      const FilterExpr& child = f.children.at(0);
      const bool wrap = child.kind == Kind::kAnd || child.kind == Kind::kOr;
      if (wrap) out += "(";
      print(child, out);
      if (wrap) out += ")";
      return;
    }
    case Kind::kAnd:
    case Kind::kOr: {
      const bool is_and = f.kind == Kind::kAnd;
      for (std::size_t i = 0; i < f.children.size(); ++i) {
        if (i != 0) out += is_and ? " AND " : " OR ";
        const FilterExpr& child = f.children[i];
        const bool wrap = child.kind == Kind::kOr || (is_and && child.kind == Kind::kAnd);
        if (wrap) out += "(";
        print(child, out);
        if (wrap) out += ")";
      }
      return;
    }
  }
}

}  // namespace

FilterExpr FilterExpr::leaf(Predicate p) {
  FilterExpr e;
  e.kind = Kind::kPredicate;
  e.predicate = std::move(p);
  return e;
}

FilterExpr FilterExpr::all_of(std::vector<FilterExpr> terms) {
  if (terms.empty()) throw UsageError("AND needs at least one operand");
  if (terms.size() == 1) return std::move(terms.front());
  FilterExpr e;
  e.kind = Kind::kAnd;
  e.children = std::move(terms);
  return e;
}

FilterExpr FilterExpr::any_of(std::vector<FilterExpr> terms) {
  if (terms.empty()) throw UsageError("OR needs at least one operand");
  if (terms.size() == 1) return std::move(terms.front());
  FilterExpr e;
  e.kind = Kind::kOr;
  e.children = std::move(terms);
  return e;
}

FilterExpr FilterExpr::negate(FilterExpr term) {
  FilterExpr e;
  e.kind = Kind::kNot;
  e.children.push_back(std::move(term));
  return e;
}

std::size_t FilterExpr::depth() const {
  std::size_t deepest = 0;
  for (const auto& c : children) deepest = std::max(deepest, c.depth());
  return deepest + 1;
}

std::uint32_t FilterExpr::max_attr() const {
  if (kind == Kind::kPredicate) return predicate.attr;
  std::uint32_t m = 0;
  for (const auto& c : children) m = std::max(m, c.max_attr());
  return m;
}

void validate_filter(const FilterExpr& f, std::size_t num_attrs) {
  if (f.depth() > kMaxFilterDepth) {
    throw UsageError("filter nesting depth " + std::to_string(f.depth()) + " exceeds the limit of " +
                     std::to_string(kMaxFilterDepth));
  }
  using Kind = FilterExpr::Kind;
  switch (f.kind) {
    case Kind::kPredicate: {
      const Predicate& p = f.predicate;
      if (p.attr >= num_attrs) {
        throw UsageError("filter references attribute a" + std::to_string(p.attr) +
                         " but the index has " + std::to_string(num_attrs) + " attributes");
      }
      if (p.op == CompareOp::kBetween) {
        if (p.operands.size() != 2) throw UsageError("BETWEEN needs two operands");
        if (p.operands[0] > p.operands[1]) {
          throw UsageError("BETWEEN bounds out of order on a" + std::to_string(p.attr) + ": " +
                           std::to_string(p.operands[0]) + " > " + std::to_string(p.operands[1]));
        }
      } else if (p.op == CompareOp::kIn) {
        if (p.operands.empty()) throw UsageError("IN list must not be empty");
      } else if (p.operands.size() != 1) {
        throw UsageError("comparison needs exactly one operand");
      }
      return;
    }
    case Kind::kNot:
      if (f.children.size() != 1) throw UsageError("NOT needs exactly one operand");
      break;
    case Kind::kAnd:
    case Kind::kOr:
      if (f.children.empty()) throw UsageError("AND/OR need at least one operand");
      break;
  }
  for (const auto& c : f.children) validate_filter(c, num_attrs);
}

FilterExpr parse_filter(std::string_view text, std::size_t num_attrs) {
  FilterExpr f = Parser(text).parse();
  validate_filter(f, num_attrs);
  return f;
}

std::string to_string(const FilterExpr& f) {
  std::string out;
  print(f, out);
  return out;
}

}  // namespace hybridivf
