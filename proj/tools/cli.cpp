#include "cli.hpp"

#include <zlib.h>

#include <charconv>
#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <optional>
#include <thread>

#if __has_include(<CLI11.hpp>)
#include <CLI11.hpp>
#else
#include <CLI/CLI.hpp>
#endif
#include <nlohmann/json.hpp>

#include "hybridivf/index.hpp"
#include "hybridivf/io.hpp"
#include "hybridivf/oracle.hpp"
#include "hybridivf/search.hpp"

namespace hybridivf::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Globals {
  std::string index;
  std::uint64_t seed = 0;
  std::optional<std::int64_t> parallelism;
  bool json = false;
};

struct GenArgs {
  std::int64_t n = 20000;
  std::int64_t d = 64;
  std::int64_t m = 4;
  std::string distribution = "gaussian";
  std::int64_t blobs = 64;
  double spread = 0.15;
  std::string out = ".";
  std::string name = "data";
};

struct BuildArgs {
  std::string vectors;
  std::string attrs;
  std::string k = "auto";
  std::string metric = "cosine";
  std::string kmeans = "lloyd";
  std::int64_t iters = 25;
  std::int64_t batch_size = 1024;
  std::int64_t train_sample = 0;
  std::string codebook;
};

struct SearchArgs {
  std::string query;
  std::string vector;
  std::int64_t k = 10;
  std::int64_t probes = static_cast<std::int64_t>(kDefaultProbes);
  std::string filter;
  bool escalate = false;
  std::int64_t cache_blocks = 0;
};

struct AddArgs {
  std::string vector;
  std::string attrs;
  bool compact = false;
};

struct BenchArgs {
  GenArgs gen;
  BuildArgs build;
  std::int64_t queries = 50;
  std::int64_t topk = 10;
  double min_selectivity = 0.10;
  double max_selectivity = 0.60;
  std::string sweep = "1,3,7,15,K";
  std::string out = "bench_out";
};

std::size_t positive(std::int64_t v, const char* what) {
  if (v < 1) throw UsageError(std::string(what) + " must be at least 1");
  return static_cast<std::size_t>(v);
}

std::size_t non_negative(std::int64_t v, const char* what) {
  if (v < 0) throw UsageError(std::string(what) + " must not be negative");
  return static_cast<std::size_t>(v);
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

template <typename T>
std::vector<T> parse_csv(const std::string& text, const char* what) {
  std::vector<T> out;
  std::string_view rest = text;
  while (true) {
    const auto comma = rest.find(',');
    const std::string_view token = trim(rest.substr(0, comma));
    T value{};
    const auto [end, ec] = std::from_chars(token.data(), token.data() + token.size(), value);
    if (token.empty() || ec != std::errc() || end != token.data() + token.size()) {
      throw UsageError(std::string(what) + ": cannot parse '" + std::string(token) + "'");
    }
    out.push_back(value);
    if (comma == std::string_view::npos) break;
    rest.remove_prefix(comma + 1);
  }
  return out;
}

std::optional<std::size_t> parse_lists(const std::string& k) {
  if (k == "auto") return std::nullopt;
  const auto v = parse_csv<std::int64_t>(k, "--k");
  if (v.size() != 1) throw UsageError("--k takes 'auto' or one integer");
  return positive(v.front(), "--k");
}

std::size_t resolve_parallelism(const Globals& g) {
  if (g.parallelism) return positive(*g.parallelism, "--parallelism");
  return default_parallelism();
}

double seconds_since(std::chrono::steady_clock::time_point start) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
}

std::string fixed3(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

fs::path require_index(const Globals& g) {
  if (g.index.empty()) throw UsageError("--index DIR is required");
  return g.index;
}

// ---- gen ----

SyntheticParams gen_params(const GenArgs& a, std::uint64_t seed) {
  SyntheticParams p;
  p.n = positive(a.n, "--n");
  p.d = positive(a.d, "--d");
  p.m = positive(a.m, "--m");
  p.seed = seed;
  p.distribution = parse_distribution(a.distribution);
  p.blobs = positive(a.blobs, "--blobs");
  if (!(a.spread >= 0.0)) throw UsageError("--spread must not be negative");
  p.blob_spread = a.spread;
  return p;
}

int cmd_gen(const Globals& g, const GenArgs& a, std::ostream& out, std::ostream& err) {
  const SyntheticParams p = gen_params(a, g.seed);
  fs::create_directories(a.out);
  const fs::path vpath = fs::path(a.out) / (a.name + ".hvec");
  const fs::path apath = fs::path(a.out) / (a.name + ".hatt");
  gen_synthetic_files(p, vpath, apath);
  err << "gen: " << p.n << " x " << p.d << " vectors, " << p.m << " attributes, seed " << p.seed << "\n";
  const std::string vcrc = file_crc32(vpath.string());
  const std::string acrc = file_crc32(apath.string());
  if (g.json) {
    out << json{{"vectors", {{"path", vpath.string()}, {"crc32", vcrc}}},
                {"attributes", {{"path", apath.string()}, {"crc32", acrc}}}}
               .dump(2)
        << "\n";
  } else {
    out << "vectors " << vpath.string() << " crc32 " << vcrc << "\n";
    out << "attributes " << apath.string() << " crc32 " << acrc << "\n";
  }
  return kExitOk;
}

// ---- build ----

BuildParams build_params(const BuildArgs& a, const Globals& g, std::size_t threads) {
  BuildParams p;
  p.metric = parse_metric(a.metric);
  p.num_lists = parse_lists(a.k);
  p.kmeans_mode = parse_kmeans_mode(a.kmeans);
  p.seed = g.seed;
  p.max_iters = positive(a.iters, "--iters");
  p.batch_size = positive(a.batch_size, "--batch-size");
  p.train_sample = non_negative(a.train_sample, "--train-sample");
  p.threads = threads;
  if (!a.codebook.empty()) {
    const auto bytes = read_file(a.codebook);
    try {
      p.codebook = AttributeCodebook::from_json(json::parse(bytes.begin(), bytes.end()));
    } catch (const json::exception& e) {
      throw UsageError("malformed codebook " + a.codebook + ": " + e.what());
    }
  }
  return p;
}

IndexManifest run_build(FloatMatrix vectors, const AttrMatrix& attrs, const BuildParams& p,
                        const fs::path& dir, std::ostream& err, BuildTimings& t) {
  const std::size_t k = p.num_lists.value_or(default_k(vectors.rows()));
  err << "build: N=" << vectors.rows() << " D=" << vectors.cols() << " M=" << attrs.cols()
      << " K=" << k << (p.num_lists ? "" : " (auto)") << " metric=" << metric_name(p.metric)
      << " kmeans=" << kmeans_mode_name(p.kmeans_mode) << "\n";
  IndexManifest m = HybridIndex::build(std::move(vectors), attrs, p, dir, &t);
  err << "build: train " << fixed3(t.train_seconds) << " s, assign " << fixed3(t.assign_seconds)
      << " s, write " << fixed3(t.write_seconds) << " s, " << m.build.iterations
      << " iterations\n";
  return m;
}

json build_summary(const IndexManifest& m, const fs::path& dir, const BuildTimings& t) {
  return {{"index", dir.string()},
          {"num_lists", m.num_lists},
          {"num_records", m.num_records},
          {"dim", m.dim},
          {"num_attrs", m.num_attrs},
          {"metric", metric_name(m.metric)},
          {"iterations", m.build.iterations},
          {"timings",
           {{"train", t.train_seconds}, {"assign", t.assign_seconds}, {"write", t.write_seconds}}}};
}

int cmd_build(const Globals& g, const BuildArgs& a, std::ostream& out, std::ostream& err) {
  const fs::path dir = require_index(g);
  const BuildParams p = build_params(a, g, resolve_parallelism(g));
  FloatMatrix vectors = read_vectors_file(a.vectors);
  const AttrMatrix attrs = read_attributes_file(a.attrs);
  BuildTimings t;
  const IndexManifest m = run_build(std::move(vectors), attrs, p, dir, err, t);
  if (g.json) {
    out << build_summary(m, dir, t).dump(2) << "\n";
  } else {
    out << "index " << dir.string() << " lists " << m.num_lists << " records " << m.num_records
        << "\n";
  }
  return kExitOk;
}

// ---- search ----

// Doubles probes while the result is partial and unprobed lists remain.
SearchResult search_escalating(const HybridIndex& index, Query& q) {
  SearchResult r = search(index, q);
  while (r.partial && q.probes < index.num_lists()) {
    q.probes = std::min(q.probes * 2, index.num_lists());
    r = search(index, q);
  }
  return r;
}

int cmd_search(const Globals& g, const SearchArgs& a, const CLI::App& sub, std::ostream& out) {
  auto index = HybridIndex::open(require_index(g), {.writable = false,
                                                    .cache_blocks = non_negative(a.cache_blocks, "--cache-blocks")});
  const bool k_flag = sub.count("--k") > 0;
  const bool probes_flag = sub.count("--probes") > 0;
  const bool filter_flag = sub.count("--filter") > 0;

  std::vector<Query> queries;
  bool batch = false;
  if (!a.query.empty()) {
    if (!a.vector.empty()) throw UsageError("--query and --vector are mutually exclusive");
    const auto bytes = read_file(a.query);
    json doc;
    try {
      doc = json::parse(bytes.begin(), bytes.end());
    } catch (const json::exception& e) {
      throw UsageError(std::string("malformed query JSON: ") + e.what());
    }
    batch = doc.is_array();
    if (batch) {
      for (const auto& item : doc) queries.push_back(query_from_json(item, index->num_attrs()));
    } else {
      queries.push_back(query_from_json(doc, index->num_attrs()));
    }
  } else {
    if (a.vector.empty()) throw UsageError("search needs --query FILE or --vector CSV");
    Query q;
    q.vector = parse_csv<float>(a.vector, "--vector");
    queries.push_back(std::move(q));
  }
  for (Query& q : queries) {
    if (k_flag || a.query.empty()) q.k = positive(a.k, "--k");
    if (probes_flag || a.query.empty()) q.probes = positive(a.probes, "--probes");
    if (filter_flag) {
      q.filter.reset();
      if (!trim(a.filter).empty()) q.filter = parse_filter(a.filter, index->num_attrs());
    }
  }

  const auto outcomes = search_batch(*index, queries, resolve_parallelism(g));
  json results = json::array();
  int code = kExitOk;
  for (std::size_t i = 0; i < outcomes.size(); ++i) {
    const auto& o = outcomes[i];
    if (!o.result) {
      if (!batch) {
        if (o.usage_error) throw UsageError(o.error);
        throw IoError(o.error);
      }
      results.push_back({{"error", o.error}});
      code = std::max(code, o.usage_error ? kExitUsage : kExitIo);
      continue;
    }
    SearchResult r = *o.result;
    if (a.escalate && r.partial) r = search_escalating(*index, queries[i]);
    json j = result_to_json(r);
    j["probes"] = queries[i].probes;
    results.push_back(std::move(j));
  }
  out << (batch ? results : results.front()).dump(2) << "\n";
  return code;
}

// ---- add ----

int cmd_add(const Globals& g, const AddArgs& a, std::ostream& out, std::ostream& err) {
  auto index = HybridIndex::open(require_index(g), {.writable = true});
  const auto vec = parse_csv<float>(a.vector, "--vector");
  const auto attrs = parse_csv<std::int64_t>(a.attrs, "--attrs");
  const auto [id, cell] = index->add_vector(vec, attrs);
  if (a.compact) {
    index->flush();
    err << "add: compacted append segments\n";
  }
  if (g.json) {
    out << json{{"id", id}, {"cell", cell}}.dump(2) << "\n";
  } else {
    out << "id " << id << " cell " << cell << "\n";
  }
  return kExitOk;
}

// ---- bench ----

std::vector<std::size_t> parse_sweep(const std::string& text, std::size_t num_lists) {
  std::vector<std::size_t> out;
  std::string_view rest = text;
  while (true) {
    const auto comma = rest.find(',');
    const std::string_view token = trim(rest.substr(0, comma));
    if (token == "K" || token == "k") {
      out.push_back(num_lists);
    } else {
      const auto v = parse_csv<std::int64_t>(std::string(token), "--sweep");
      out.push_back(positive(v.front(), "--sweep values"));
    }
    if (comma == std::string_view::npos) break;
    rest.remove_prefix(comma + 1);
  }
  return out;
}

int cmd_bench(const Globals& g, const BenchArgs& a, std::ostream& out, std::ostream& err) {
  const std::size_t parallelism = resolve_parallelism(g);
  const SyntheticParams sp = gen_params(a.gen, g.seed);
  const BuildParams bp = build_params(a.build, g, parallelism);
  const std::size_t num_queries = positive(a.queries, "--queries");
  const std::size_t topk = positive(a.topk, "--topk");
  if (!(0.0 <= a.min_selectivity && a.min_selectivity <= a.max_selectivity && a.max_selectivity <= 1.0)) {
    throw UsageError("selectivity bounds must satisfy 0 <= min <= max <= 1");
  }
  const fs::path root = a.out;
  const fs::path index_dir = g.index.empty() ? root / "index" : fs::path(g.index);
  fs::create_directories(root);

  auto start = std::chrono::steady_clock::now();
  SyntheticData data = gen_synthetic_files(sp, root / "data.hvec", root / "data.hatt");
  err << "bench: generated " << sp.n << " x " << sp.d << " in " << fixed3(seconds_since(start)) << " s\n";

  BuildTimings bt;
  const IndexManifest m = run_build(data.vectors, data.attrs, bp, index_dir, err, bt);
  // Ground truth runs against the stored (normalized) form, as the index does.
  prepare_for_storage(data.vectors, bp.metric);

  const auto queries =
      make_workload(data, num_queries, topk, a.min_selectivity, a.max_selectivity, g.seed + 1);
  start = std::chrono::steady_clock::now();
  std::vector<double> brute_latency;
  const auto truth =
      exact_filtered_knn_batch(data.vectors, data.attrs, queries, bp.metric, parallelism, &brute_latency);
  err << "bench: ground truth for " << queries.size() << " queries in " << fixed3(seconds_since(start))
      << " s\n";

  auto index = HybridIndex::open(index_dir);
  const auto sweep = parse_sweep(a.sweep, m.num_lists);
  RecallReport report = measure_recall(*index, queries, truth, sweep, parallelism);
  double brute_mean = 0.0;
  for (double t : brute_latency) brute_mean += t;
  report.brute_force_mean_latency = brute_mean / static_cast<double>(brute_latency.size());

  json j = report.to_json();
  j["config"] = {{"n", sp.n},
                 {"d", sp.d},
                 {"m", sp.m},
                 {"seed", g.seed},
                 {"distribution", a.gen.distribution},
                 {"metric", metric_name(bp.metric)},
                 {"kmeans", kmeans_mode_name(bp.kmeans_mode)},
                 {"min_selectivity", a.min_selectivity},
                 {"max_selectivity", a.max_selectivity}};
  j["build"] = build_summary(m, index_dir, bt);
  const std::string text = report.to_text();
  const std::string dumped = j.dump(2) + "\n";
  write_file_atomic(root / "report.json", std::span<const char>(dumped.data(), dumped.size()));
  write_file_atomic(root / "report.txt", std::span<const char>(text.data(), text.size()));
  err << "bench: wrote " << (root / "report.json").string() << " and " << (root / "report.txt").string()
      << "\n";
  out << (g.json ? dumped : text);
  return kExitOk;
}

void add_gen_options(CLI::App* sub, GenArgs& a) {
  sub->add_option("--n", a.n, "Number of records")->capture_default_str();
  sub->add_option("--d", a.d, "Vector dimensionality")->capture_default_str();
  sub->add_option("--m", a.m, "Number of integer attributes")->capture_default_str();
  sub->add_option("--distribution", a.distribution, "gaussian or blobs")->capture_default_str();
  sub->add_option("--blobs", a.blobs, "Cluster centers in blobs mode")->capture_default_str();
  sub->add_option("--spread", a.spread, "Blob noise scale")->capture_default_str();
}

void add_build_options(CLI::App* sub, BuildArgs& a) {
  sub->add_option("--k", a.k, "Number of lists, or 'auto'")->capture_default_str();
  sub->add_option("--metric", a.metric, "cosine or euclidean")->capture_default_str();
  sub->add_option("--kmeans", a.kmeans, "lloyd or minibatch")->capture_default_str();
  sub->add_option("--iters", a.iters, "Maximum k-means iterations")->capture_default_str();
  sub->add_option("--batch-size", a.batch_size, "Mini-batch size")->capture_default_str();
  sub->add_option("--train-sample", a.train_sample, "Train on this many sampled rows (0 = all)")
      ->capture_default_str();
  sub->add_option("--codebook", a.codebook, "Attribute codebook JSON");
}

}  // namespace

std::size_t default_parallelism() {
  if (const char* env = std::getenv("HYBRIDIVF_THREADS"); env != nullptr && *env != '\0') {
    const auto v = parse_csv<std::int64_t>(env, "HYBRIDIVF_THREADS");
    if (v.size() != 1) throw UsageError("HYBRIDIVF_THREADS must be one integer");
    return positive(v.front(), "HYBRIDIVF_THREADS");
  }
  return std::max(1U, std::thread::hardware_concurrency());
}

std::string file_crc32(const std::string& path) {
  const auto bytes = read_file(path);
  uLong crc = crc32(0L, Z_NULL, 0);
  const char* p = bytes.data();
  std::size_t left = bytes.size();
  while (left > 0) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(left, 1U << 30));
    crc = crc32(crc, reinterpret_cast<const Bytef*>(p), chunk);
    p += chunk;
    left -= chunk;
  }
  char buf[9];
  std::snprintf(buf, sizeof buf, "%08lx", static_cast<unsigned long>(crc));
  return buf;
}

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Disk-resident IVF-Flat vector search with attribute filters", "hybridivf"};
  app.fallthrough();
  app.require_subcommand(1);

  Globals g;
  app.add_option("--index", g.index, "Index directory");
  app.add_option("--seed", g.seed, "Random seed")->capture_default_str();
  app.add_option("--parallelism", g.parallelism,
                 "Worker threads (default: HYBRIDIVF_THREADS, else hardware threads)");
  app.add_flag("--json", g.json, "Machine-readable output");

  GenArgs gen;
  auto* gen_cmd = app.add_subcommand("gen", "Generate a synthetic dataset");
  add_gen_options(gen_cmd, gen);
  gen_cmd->add_option("--out", gen.out, "Output directory")->capture_default_str();
  gen_cmd->add_option("--name", gen.name, "File name stem")->capture_default_str();

  BuildArgs build;
  auto* build_cmd = app.add_subcommand("build", "Build an index from dataset files");
  build_cmd->add_option("--vectors", build.vectors, "HVEC vectors file")->required();
  build_cmd->add_option("--attrs", build.attrs, "HATT attributes file")->required();
  add_build_options(build_cmd, build);

  SearchArgs search_args;
  auto* search_cmd = app.add_subcommand("search", "Filtered k-nearest-neighbor search");
  search_cmd->add_option("--query", search_args.query, "Query JSON file (object or array)");
  search_cmd->add_option("--vector", search_args.vector, "Query vector as comma-separated floats");
  search_cmd->add_option("--k", search_args.k, "Neighbors to return")->capture_default_str();
  search_cmd->add_option("--probes", search_args.probes, "Lists to probe")->capture_default_str();
  search_cmd->add_option("--filter", search_args.filter, "Attribute filter expression");
  search_cmd->add_flag("--escalate", search_args.escalate,
                       "Double probes while fewer than k candidates survive");
  search_cmd->add_option("--cache-blocks", search_args.cache_blocks, "Vector block cache capacity")
      ->capture_default_str();

  AddArgs add;
  auto* add_cmd = app.add_subcommand("add", "Insert one record");
  add_cmd->add_option("--vector", add.vector, "Comma-separated floats")->required();
  add_cmd->add_option("--attrs", add.attrs, "Comma-separated integers")->required();
  add_cmd->add_flag("--compact", add.compact, "Compact append segments afterwards");

  BenchArgs bench;
  auto* bench_cmd = app.add_subcommand("bench", "Generate, build, compute ground truth, sweep probes");
  add_gen_options(bench_cmd, bench.gen);
  add_build_options(bench_cmd, bench.build);
  bench_cmd->add_option("--queries", bench.queries, "Number of queries")->capture_default_str();
  bench_cmd->add_option("--topk", bench.topk, "Neighbors per query")->capture_default_str();
  bench_cmd->add_option("--min-selectivity", bench.min_selectivity)->capture_default_str();
  bench_cmd->add_option("--max-selectivity", bench.max_selectivity)->capture_default_str();
  bench_cmd->add_option("--sweep", bench.sweep, "Probe values; K means all lists")->capture_default_str();
  bench_cmd->add_option("--out", bench.out, "Output directory")->capture_default_str();

  try {
    app.parse(std::vector<std::string>(args.rbegin(), args.rend()));
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err) == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (gen_cmd->parsed()) return cmd_gen(g, gen, out, err);
    if (build_cmd->parsed()) return cmd_build(g, build, out, err);
    if (search_cmd->parsed()) return cmd_search(g, search_args, *search_cmd, out);
    if (add_cmd->parsed()) return cmd_add(g, add, out, err);
    return cmd_bench(g, bench, out, err);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitIo;
  }
}

}  // namespace hybridivf::cli
