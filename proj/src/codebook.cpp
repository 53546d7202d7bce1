#include "hybridivf/codebook.hpp"

#include <algorithm>
#include <cmath>

#include "hybridivf/core.hpp"

namespace hybridivf {

namespace {

std::string_view kind_name(AttributeSpec::Kind k) {
  switch (k) {
    case AttributeSpec::Kind::kInteger: return "integer";
    case AttributeSpec::Kind::kCategorical: return "categorical";
    case AttributeSpec::Kind::kNumeric: return "numeric";
  }
  return "integer";
}

AttributeSpec::Kind parse_kind(const std::string& s) {
  if (s == "integer") return AttributeSpec::Kind::kInteger;
  if (s == "categorical") return AttributeSpec::Kind::kCategorical;
  if (s == "numeric") return AttributeSpec::Kind::kNumeric;
  throw UsageError("codebook: unknown attribute kind '" + s + "'");
}

void check_spec(const AttributeSpec& a) {
  switch (a.kind) {
    case AttributeSpec::Kind::kInteger: break;
    case AttributeSpec::Kind::kCategorical: {
      if (a.dictionary.empty()) {
        throw UsageError("codebook: categorical attribute '" + a.name + "' has an empty dictionary");
      }
      std::vector<std::string> sorted = a.dictionary;
      std::sort(sorted.begin(), sorted.end());
      if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
        throw UsageError("codebook: duplicate category in attribute '" + a.name + "'");
      }
      break;
    }
    case AttributeSpec::Kind::kNumeric: {
      if (a.edges.size() < 2) {
        throw UsageError("codebook: numeric attribute '" + a.name + "' needs at least two edges");
      }
      for (std::size_t i = 0; i < a.edges.size(); ++i) {
        if (!std::isfinite(a.edges[i]) || (i > 0 && !(a.edges[i - 1] < a.edges[i]))) {
          throw UsageError("codebook: bin edges of '" + a.name +
                           "' must be finite and strictly increasing");
        }
      }
      break;
    }
  }
}

}  // namespace

AttributeSpec AttributeSpec::integer(std::string name) {
  AttributeSpec s;
  s.name = std::move(name);
  return s;
}

AttributeSpec AttributeSpec::categorical(std::string name, std::vector<std::string> values) {
  AttributeSpec s;
  s.name = std::move(name);
  s.kind = Kind::kCategorical;
  s.dictionary = std::move(values);
  return s;
}

AttributeSpec AttributeSpec::numeric(std::string name, std::vector<double> edges) {
  AttributeSpec s;
  s.name = std::move(name);
  s.kind = Kind::kNumeric;
  s.edges = std::move(edges);
  return s;
}

AttributeCodebook::AttributeCodebook(std::vector<AttributeSpec> attrs) : attrs_(std::move(attrs)) {
  lookup_.resize(attrs_.size());
  for (std::size_t i = 0; i < attrs_.size(); ++i) {
    check_spec(attrs_[i]);
    for (std::size_t c = 0; c < attrs_[i].dictionary.size(); ++c) {
      lookup_[i].emplace(attrs_[i].dictionary[c], static_cast<std::int64_t>(c));
    }
  }
}

AttributeCodebook AttributeCodebook::identity(std::size_t m) {
  std::vector<AttributeSpec> attrs;
  attrs.reserve(m);
  for (std::size_t i = 0; i < m; ++i) attrs.push_back(AttributeSpec::integer("a" + std::to_string(i)));
  return AttributeCodebook(std::move(attrs));
}

std::int64_t AttributeCodebook::encode_value(std::size_t attr, const RawValue& raw) const {
  const AttributeSpec& spec = attrs_.at(attr);
  switch (spec.kind) {
    case AttributeSpec::Kind::kInteger:
      if (const auto* v = std::get_if<std::int64_t>(&raw)) return *v;
      throw UsageError("attribute '" + spec.name + "' expects an integer value");
    case AttributeSpec::Kind::kCategorical: {
      const auto* s = std::get_if<std::string>(&raw);
      if (s == nullptr) throw UsageError("attribute '" + spec.name + "' expects a category string");
      const auto it = lookup_[attr].find(*s);
      if (it == lookup_[attr].end()) {
        throw UsageError("attribute '" + spec.name + "': unknown category '" + *s + "'");
      }
      return it->second;
    }
    case AttributeSpec::Kind::kNumeric: {
      double v = 0.0;
      if (const auto* d = std::get_if<double>(&raw)) {
        v = *d;
      } else if (const auto* i = std::get_if<std::int64_t>(&raw)) {
        v = static_cast<double>(*i);
      } else {
        throw UsageError("attribute '" + spec.name + "' expects a numeric value");
      }
      if (!std::isfinite(v)) throw UsageError("attribute '" + spec.name + "': non-finite value");
      // Index of the last edge <= v, clamped to the bin range.
      const auto it = std::upper_bound(spec.edges.begin(), spec.edges.end(), v);
      const auto pos = static_cast<std::int64_t>(it - spec.edges.begin()) - 1;
      return std::clamp<std::int64_t>(pos, 0, static_cast<std::int64_t>(spec.num_bins()) - 1);
    }
  }
  return 0;
}

std::vector<std::int64_t> AttributeCodebook::encode(std::span<const RawValue> raw) const {
  if (raw.size() != attrs_.size()) {
    throw UsageError("expected " + std::to_string(attrs_.size()) + " raw attribute values, got " +
                     std::to_string(raw.size()));
  }
  std::vector<std::int64_t> out(raw.size());
  for (std::size_t i = 0; i < raw.size(); ++i) out[i] = encode_value(i, raw[i]);
  return out;
}

nlohmann::json AttributeCodebook::to_json() const {
  nlohmann::json attrs = nlohmann::json::array();
  for (const auto& a : attrs_) {
    nlohmann::json j{{"name", a.name}, {"kind", kind_name(a.kind)}};
    if (a.kind == AttributeSpec::Kind::kCategorical) j["dictionary"] = a.dictionary;
    if (a.kind == AttributeSpec::Kind::kNumeric) j["edges"] = a.edges;
    attrs.push_back(std::move(j));
  }
  return nlohmann::json{{"attributes", std::move(attrs)}};
}

AttributeCodebook AttributeCodebook::from_json(const nlohmann::json& j) {
  try {
    std::vector<AttributeSpec> attrs;
    for (const auto& a : j.at("attributes")) {
      AttributeSpec spec;
      spec.name = a.at("name").get<std::string>();
      spec.kind = parse_kind(a.at("kind").get<std::string>());
      if (spec.kind == AttributeSpec::Kind::kCategorical) {
        spec.dictionary = a.at("dictionary").get<std::vector<std::string>>();
      }
      if (spec.kind == AttributeSpec::Kind::kNumeric) spec.edges = a.at("edges").get<std::vector<double>>();
      attrs.push_back(std::move(spec));
    }
    return AttributeCodebook(std::move(attrs));
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string("codebook: malformed JSON: ") + e.what());
  }
}

std::vector<double> quantile_edges(std::vector<double> samples, std::size_t bins) {
  if (bins == 0) throw UsageError("quantile_edges: need at least one bin");
  if (samples.empty()) throw UsageError("quantile_edges: no samples");
  std::sort(samples.begin(), samples.end());
  std::vector<double> edges;
  edges.reserve(bins + 1);
  const std::size_t n = samples.size();
  for (std::size_t b = 0; b <= bins; ++b) {
    const std::size_t idx = std::min(n - 1, b * n / bins);
    const double e = b == bins ? samples.back() : samples[idx];
    if (edges.empty() || e > edges.back()) edges.push_back(e);
  }
  if (edges.size() == 1) edges.push_back(edges.front() + 1.0);
  return edges;
}

}  // namespace hybridivf
