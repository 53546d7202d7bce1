#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "hybridivf/core.hpp"
#include "hybridivf/filters.hpp"
#include "hybridivf/index.hpp"

namespace hybridivf {

inline constexpr std::size_t kDefaultProbes = 7;

struct Query {
  std::vector<float> vector;
  std::optional<FilterExpr> filter;
  std::size_t k = 10;
  std::size_t probes = kDefaultProbes;
};

/// Wall-clock seconds per search phase. The phases are disjoint, so total
/// is at least their sum.
struct PhaseTimings {
  double centroid_search = 0.0;
  double filtering = 0.0;
  double detailed_search = 0.0;
  double total = 0.0;

  PhaseTimings& operator+=(const PhaseTimings& o);
};

struct SearchResult {
  std::vector<Neighbor> neighbors;  // ascending (distance, id)
  PhaseTimings timings;
  LoadStats load;
  /// Filter survivors across the probed lists.
  std::size_t candidates = 0;
  /// Fewer than k survivors were found in the probed lists.
  bool partial = false;
};

/// The `t` cells nearest to `core`, ascending, lower index on ties.
std::vector<CellId> nearest_centroids(const HybridIndex& index, std::span<const float> core,
                                      std::size_t t);

/// Filtered search: probe the nearest lists, filter their in-memory
/// attributes, load only surviving vectors, compute exact distances and
/// keep the global top-k.
SearchResult search(const HybridIndex& index, const Query& q);
/// Same, against an explicit snapshot. Does not touch the handle's
/// cumulative load counters.
SearchResult search(const IndexSnapshot& snap, const Query& q);

struct BatchOutcome {
  std::optional<SearchResult> result;
  std::string error;
  bool usage_error = false;  // validation problem, as opposed to I/O
};

/// Runs queries on `parallelism` worker threads; slot i holds query i's
/// outcome. A failing query does not abort the batch.
std::vector<BatchOutcome> search_batch(const HybridIndex& index, std::span<const Query> queries,
                                       std::size_t parallelism);

/// Query JSON: {"vector": [...], "filter": "...", "k": n, "probes": n}.
Query query_from_json(const nlohmann::json& j, std::size_t num_attrs);
nlohmann::json result_to_json(const SearchResult& r);

}  // namespace hybridivf
