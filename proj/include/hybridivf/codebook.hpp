#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <nlohmann/json.hpp>

namespace hybridivf {

/// Maps raw metadata onto the integer attributes the engine filters on.
///
/// Categorical attributes use a dense dictionary (first value gets code 0);
/// categories are matched with EQ / IN predicates on the code. Numeric
/// attributes are binned: edges e0 < e1 < ... < eB define B bins
/// [e_i, e_{i+1}); values below e0 fall in bin 0 and values at or above eB
/// fall in bin B-1. Integer attributes pass through unchanged.
struct AttributeSpec {
  enum class Kind : std::uint8_t { kInteger, kCategorical, kNumeric };

  std::string name;
  Kind kind = Kind::kInteger;
  std::vector<std::string> dictionary;
  std::vector<double> edges;

  static AttributeSpec integer(std::string name);
  static AttributeSpec categorical(std::string name, std::vector<std::string> values);
  static AttributeSpec numeric(std::string name, std::vector<double> edges);

  std::size_t num_bins() const { return edges.empty() ? 0 : edges.size() - 1; }
  bool operator==(const AttributeSpec&) const = default;
};

using RawValue = std::variant<std::int64_t, double, std::string>;

class AttributeCodebook {
 public:
  AttributeCodebook() = default;
  explicit AttributeCodebook(std::vector<AttributeSpec> attrs);

  /// a0..a{m-1}, all integer pass-through.
  static AttributeCodebook identity(std::size_t m);

  std::size_t size() const { return attrs_.size(); }
  const AttributeSpec& at(std::size_t i) const { return attrs_.at(i); }
  const std::vector<AttributeSpec>& attributes() const { return attrs_; }

  std::int64_t encode_value(std::size_t attr, const RawValue& raw) const;
  std::vector<std::int64_t> encode(std::span<const RawValue> raw) const;

  nlohmann::json to_json() const;
  static AttributeCodebook from_json(const nlohmann::json& j);

  bool operator==(const AttributeCodebook&) const = default;

 private:
  std::vector<AttributeSpec> attrs_;
  std::vector<std::map<std::string, std::int64_t, std::less<>>> lookup_;
};

/// Bin edges at the sample quantiles 0, 1/B, ..., 1 (duplicates dropped),
/// so each bin holds roughly the same number of samples.
std::vector<double> quantile_edges(std::vector<double> samples, std::size_t bins);

}  // namespace hybridivf
