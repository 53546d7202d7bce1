#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "hybridivf/core.hpp"
#include "hybridivf/filters.hpp"
#include "hybridivf/index.hpp"
#include "hybridivf/search.hpp"

namespace hybridivf {

// ---- ground truth ----

struct GroundTruthRow {
  std::vector<Neighbor> neighbors;  // exact filtered top-k, ascending (distance, id)
  std::size_t survivors = 0;        // records passing the filter
};

/// Exact filtered kNN by linear scan. `vectors` must hold stored-form rows
/// (unit length under cosine); row i has record id i. The query vector is
/// normalized here under cosine.
GroundTruthRow exact_filtered_knn(const FloatMatrix& vectors, const AttrMatrix& attrs,
                                  const Query& q, Metric metric);

/// `latencies`, when given, receives each query's scan time in seconds.
std::vector<GroundTruthRow> exact_filtered_knn_batch(const FloatMatrix& vectors,
                                                     const AttrMatrix& attrs,
                                                     std::span<const Query> queries, Metric metric,
                                                     std::size_t parallelism = 1,
                                                     std::vector<double>* latencies = nullptr);

// ---- synthetic data ----

enum class Distribution : std::uint8_t { kGaussian, kBlobs };

Distribution parse_distribution(std::string_view name);

inline constexpr std::int64_t kSyntheticAttrMin = -32768;
inline constexpr std::int64_t kSyntheticAttrMax = 32767;

struct SyntheticParams {
  std::size_t n = 0;
  std::size_t d = 0;
  std::size_t m = 0;
  std::uint64_t seed = 0;
  Distribution distribution = Distribution::kGaussian;
  std::size_t blobs = 64;      // kBlobs: number of cluster centers
  double blob_spread = 0.15;   // kBlobs: per-component noise stddev
};

struct SyntheticData {
  FloatMatrix vectors;  // unit L2 norm rows
  AttrMatrix attrs;     // uniform in [kSyntheticAttrMin, kSyntheticAttrMax]
};

/// Deterministic for a given seed on every platform: only raw 64-bit
/// engine output is consumed, never library distributions.
SyntheticData gen_synthetic(const SyntheticParams& params);

/// Generates and writes the HVEC / HATT pair.
SyntheticData gen_synthetic_files(const SyntheticParams& params,
                                  const std::filesystem::path& vectors_path,
                                  const std::filesystem::path& attrs_path);

/// Standard normal draw from a raw 64-bit engine (Box-Muller).
double gaussian(std::mt19937_64& rng);

/// A random filter over synthetic attributes whose expected selectivity is
/// `selectivity` (attributes uniform over [kSyntheticAttrMin, kSyntheticAttrMax]).
/// Mixes ranges, thresholds, negations and conjunctions.
FilterExpr random_filter(std::mt19937_64& rng, std::size_t num_attrs, double selectivity);

/// Queries drawn like the dataset (perturbed dataset rows) with random
/// filters of selectivity in [min_selectivity, max_selectivity].
std::vector<Query> make_workload(const SyntheticData& data, std::size_t count, std::size_t k,
                                 double min_selectivity, double max_selectivity,
                                 std::uint64_t seed);

// ---- recall ----

/// |returned ∩ truth| / min(k, truth survivors); 1 when nothing survives.
double recall_at_k(std::span<const Neighbor> returned, const GroundTruthRow& truth, std::size_t k);

struct RecallRow {
  std::size_t probes = 0;
  std::vector<double> recall;  // per query
  double mean_recall = 0.0;
  double latency_p50 = 0.0;
  double latency_p95 = 0.0;
  double mean_latency = 0.0;
  PhaseTimings mean_timings;
  std::uint64_t max_lists_loaded = 0;
  bool lists_within_probes = true;
  std::size_t partial_results = 0;
  double wall_seconds = 0.0;
};

struct RecallReport {
  std::size_t k = 0;
  std::size_t num_records = 0;
  std::size_t num_lists = 0;
  std::size_t parallelism = 1;
  std::vector<double> selectivity;  // per query: survivors / N
  double mean_selectivity = 0.0;
  std::vector<RecallRow> rows;
  std::optional<double> brute_force_mean_latency;

  nlohmann::json to_json() const;
  /// Aligned-column text; the timing section has one row per search phase.
  std::string to_text() const;
};

/// Timing row labels of the text report, in order.
inline constexpr std::array<std::string_view, 4> kTimingLabels{
    "Search in centroids", "Filtering", "Detailed search in clusters", "Total"};

RecallReport measure_recall(const HybridIndex& index, std::span<const Query> queries,
                            std::span<const GroundTruthRow> truth,
                            std::span<const std::size_t> probes_sweep, std::size_t parallelism = 1);

}  // namespace hybridivf
