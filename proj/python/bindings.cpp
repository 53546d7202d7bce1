#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "hybridivf/index.hpp"
#include "hybridivf/oracle.hpp"
#include "hybridivf/search.hpp"

namespace py = pybind11;
using namespace hybridivf;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;
using IntArray = py::array_t<std::int64_t, py::array::c_style | py::array::forcecast>;

FloatMatrix to_matrix(const FloatArray& a) {
  if (a.ndim() != 2) throw UsageError("vectors must be a 2-d array");
  const auto rows = static_cast<std::size_t>(a.shape(0));
  const auto cols = static_cast<std::size_t>(a.shape(1));
  return FloatMatrix(std::vector<float>(a.data(), a.data() + rows * cols), cols);
}

AttrMatrix to_attrs(const IntArray& a) {
  if (a.ndim() != 2) throw UsageError("attributes must be a 2-d array");
  const auto rows = static_cast<std::size_t>(a.shape(0));
  const auto cols = static_cast<std::size_t>(a.shape(1));
  return AttrMatrix(std::vector<std::int64_t>(a.data(), a.data() + rows * cols), cols);
}

std::vector<float> to_vector(const FloatArray& a) {
  if (a.ndim() != 1) throw UsageError("query must be a 1-d array");
  return {a.data(), a.data() + a.size()};
}

template <typename T>
py::array_t<T> to_numpy(const Matrix<T>& m) {
  py::array_t<T> out({m.rows(), m.cols()});
  std::copy(m.data().begin(), m.data().end(), out.mutable_data());
  return out;
}

Query make_query(const HybridIndex& index, const FloatArray& vector, std::size_t k,
                 std::size_t probes, const std::optional<std::string>& filter) {
  Query q;
  q.vector = to_vector(vector);
  q.k = k;
  q.probes = probes;
  if (filter && !filter->empty()) q.filter = parse_filter(*filter, index.num_attrs());
  return q;
}

py::dict result_dict(const SearchResult& r) {
  py::list neighbors;
  for (const auto& n : r.neighbors) neighbors.append(py::make_tuple(n.id, n.distance));
  py::dict timings;
  timings["centroid_search"] = r.timings.centroid_search;
  timings["filtering"] = r.timings.filtering;
  timings["detailed_search"] = r.timings.detailed_search;
  timings["total"] = r.timings.total;
  py::dict out;
  out["neighbors"] = neighbors;
  out["timings"] = timings;
  out["partial"] = r.partial;
  out["candidates"] = r.candidates;
  out["lists_loaded"] = r.load.lists_loaded;
  out["vector_rows_read"] = r.load.vector_rows_read;
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Disk-resident IVF-Flat vector search with attribute filters";

  py::register_exception<UsageError>(m, "UsageError", PyExc_ValueError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);

  m.attr("DEFAULT_PROBES") = kDefaultProbes;

  m.def("default_k", &default_k, py::arg("n"));

  m.def(
      "canonical_filter",
      [](const std::string& text, std::size_t num_attrs) {
        return to_string(parse_filter(text, num_attrs));
      },
      py::arg("text"), py::arg("num_attrs"));

  m.def(
      "gen_synthetic",
      [](std::size_t n, std::size_t d, std::size_t m_attrs, std::uint64_t seed,
         const std::string& distribution) {
        SyntheticParams p;
        p.n = n;
        p.d = d;
        p.m = m_attrs;
        p.seed = seed;
        p.distribution = parse_distribution(distribution);
        const SyntheticData data = gen_synthetic(p);
        return py::make_tuple(to_numpy(data.vectors), to_numpy(data.attrs));
      },
      py::arg("n"), py::arg("d"), py::arg("m"), py::arg("seed") = 0,
      py::arg("distribution") = "gaussian");

  m.def(
      "brute_force",
      [](const FloatArray& vectors, const IntArray& attrs, const FloatArray& query, std::size_t k,
         const std::optional<std::string>& filter, const std::string& metric) {
        const Metric mt = parse_metric(metric);
        FloatMatrix data = to_matrix(vectors);
        const AttrMatrix at = to_attrs(attrs);
        prepare_for_storage(data, mt);
        Query q;
        q.vector = to_vector(query);
        q.k = k;
        if (filter && !filter->empty()) q.filter = parse_filter(*filter, at.cols());
        py::list out;
        for (const auto& n : exact_filtered_knn(data, at, q, mt).neighbors) {
          out.append(py::make_tuple(n.id, n.distance));
        }
        return out;
      },
      py::arg("vectors"), py::arg("attrs"), py::arg("query"), py::arg("k") = 10,
      py::arg("filter") = py::none(), py::arg("metric") = "cosine");

  py::class_<HybridIndex>(m, "Index")
      .def_static(
          "build",
          [](const FloatArray& vectors, const IntArray& attrs, const std::filesystem::path& dir,
             std::optional<std::size_t> num_lists, const std::string& metric, std::uint64_t seed,
             const std::string& kmeans, std::size_t threads) {
            BuildParams p;
            p.metric = parse_metric(metric);
            p.num_lists = num_lists;
            p.seed = seed;
            p.kmeans_mode = parse_kmeans_mode(kmeans);
            p.threads = threads;
            FloatMatrix data = to_matrix(vectors);
            const AttrMatrix at = to_attrs(attrs);
            {
              py::gil_scoped_release release;
              HybridIndex::build(std::move(data), at, p, dir);
            }
            return HybridIndex::open(dir, {.writable = true});
          },
          py::arg("vectors"), py::arg("attrs"), py::arg("path"), py::arg("num_lists") = py::none(),
          py::arg("metric") = "cosine", py::arg("seed") = 0, py::arg("kmeans") = "lloyd",
          py::arg("threads") = 1)
      .def_static(
          "open",
          [](const std::filesystem::path& dir, bool writable, std::size_t cache_blocks) {
            return HybridIndex::open(dir, {.writable = writable, .cache_blocks = cache_blocks});
          },
          py::arg("path"), py::arg("writable") = false, py::arg("cache_blocks") = 0)
      .def_property_readonly("num_lists", &HybridIndex::num_lists)
      .def_property_readonly("dim", &HybridIndex::dim)
      .def_property_readonly("num_attrs", &HybridIndex::num_attrs)
      .def_property_readonly("metric", [](const HybridIndex& i) { return std::string(metric_name(i.metric())); })
      .def("__len__", &HybridIndex::size)
      .def("list_sizes", &HybridIndex::list_sizes)
      .def(
          "search",
          [](const HybridIndex& index, const FloatArray& vector, std::size_t k, std::size_t probes,
             const std::optional<std::string>& filter) {
            const Query q = make_query(index, vector, k, probes, filter);
            SearchResult r;
            {
              py::gil_scoped_release release;
              r = search(index, q);
            }
            return result_dict(r);
          },
          py::arg("vector"), py::arg("k") = 10, py::arg("probes") = kDefaultProbes,
          py::arg("filter") = py::none())
      .def(
          "add",
          [](HybridIndex& index, const FloatArray& vector, const IntArray& attrs) {
            const auto v = to_vector(vector);
            if (attrs.ndim() != 1) throw UsageError("attributes must be a 1-d array");
            const std::vector<std::int64_t> a(attrs.data(), attrs.data() + attrs.size());
            return index.add_vector(v, a);
          },
          py::arg("vector"), py::arg("attrs"))
      .def("flush", &HybridIndex::flush)
      .def("load_stats", [](const HybridIndex& index) {
        const LoadStats s = index.load_stats();
        py::dict d;
        d["lists_loaded"] = s.lists_loaded;
        d["vector_rows_read"] = s.vector_rows_read;
        d["bytes_read"] = s.bytes_read;
        return d;
      });
}
