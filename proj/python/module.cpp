#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <filesystem>

#include "weightcorr/data_io.hpp"
#include "weightcorr/errors.hpp"
#include "weightcorr/linalg.hpp"
#include "weightcorr/measures.hpp"
#include "weightcorr/selftest.hpp"
#include "weightcorr/wc_core.hpp"

namespace py = pybind11;
using namespace weightcorr;

namespace {

using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

Matrix to_matrix(const Array& a) {
  if (a.ndim() != 2) throw UsageError("expected a 2-d array");
  return Matrix(a.shape(0), a.shape(1), std::vector<double>(a.data(), a.data() + a.size()));
}

// numpy layout (out, in, f, f), same as FilterTensor storage
FilterTensor to_filters(const Array& a) {
  if (a.ndim() != 4 || a.shape(2) != a.shape(3)) throw UsageError("expected an (out, in, f, f) array");
  return FilterTensor(a.shape(2), a.shape(1), a.shape(0), std::vector<double>(a.data(), a.data() + a.size()));
}

Array from_matrix(const Matrix& m) {
  Array out({m.rows(), m.cols()});
  std::copy(m.data().begin(), m.data().end(), out.mutable_data());
  return out;
}

Array from_filters(const FilterTensor& t) {
  Array out({t.out_channels(), t.in_channels(), t.kernel(), t.kernel()});
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

Weights to_weights(const Array& a) {
  if (a.ndim() == 4) return to_filters(a);
  return to_matrix(a);
}

LayerParams to_layer(const Array& w, const Array& b) {
  if (b.ndim() != 1) throw UsageError("bias must be 1-d");
  return LayerParams{to_weights(w), std::vector<double>(b.data(), b.data() + b.size())};
}

py::dict report_dict(const MeasureReport& r) {
  py::dict d;
  d["pfn"] = r.pfn;
  d["psn"] = r.psn;
  d["nop"] = r.nop;
  d["sosp"] = r.sosp;
  d["wc"] = r.wc;
  d["pb"] = r.pb;
  d["pbc"] = r.pbc;
  d["ge"] = r.ge ? py::object(py::float_(*r.ge)) : py::object(py::none());
  d["log_pfn"] = r.log_pfn;
  d["log_psn"] = r.log_psn;
  return d;
}

TiePolicy tie_policy(const std::string& name) {
  if (name == "neither") return TiePolicy::kNeither;
  if (name == "concordant") return TiePolicy::kConcordant;
  throw UsageError("ties must be 'neither' or 'concordant'");
}

}  // namespace

PYBIND11_MODULE(_weightcorr, m) {
  m.doc() = "Weight correlation measures and penalties";

  py::register_exception<UsageError>(m, "UsageError", PyExc_ValueError);
  py::register_exception<NumericError>(m, "NumericError", PyExc_ArithmeticError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);

  m.def("wc_fcn", [](const Array& w) { return wc_fcn(to_matrix(w)); }, py::arg("w"),
        "Mean |cos| between columns of an (n_in, n_out) weight matrix.");
  m.def("wc_cnn", [](const Array& w) { return wc_cnn(to_filters(w)); }, py::arg("w"),
        "Channel-averaged mean |cos| between filters of an (out, in, f, f) bank.");
  m.def("g_term",
        [](double rho, std::size_t n_out, std::size_t n_in, double cap) {
          return g_term(LayerCorrelation(rho, n_out, n_in), cap);
        },
        py::arg("rho"), py::arg("n_out"), py::arg("n_in"), py::arg("cap") = kDefaultGCap);
  m.def("g_gradient_bracket",
        [](double rho, std::size_t n_out, std::size_t n_in) {
          return g_gradient_bracket(LayerCorrelation(rho, n_out, n_in));
        },
        py::arg("rho"), py::arg("n_out"), py::arg("n_in"));
  m.def("kl_layer",
        [](const Array& wf, const Array& bf, const Array& w0, const Array& b0, double sigma_sq) {
          const auto k = kl_layer(to_layer(wf, bf), to_layer(w0, b0), sigma_sq);
          py::dict d;
          d["distance_term"] = k.distance_term;
          d["log_det_term"] = k.log_det_term;
          d["total"] = k.total;
          d["g"] = k.g;
          return d;
        },
        py::arg("w_final"), py::arg("b_final"), py::arg("w_init"), py::arg("b_init"),
        py::arg("sigma_sq") = 1.0);
  m.def("rho_gradient",
        [](const Array& w) -> Array {
          if (w.ndim() == 4) return from_filters(rho_gradient_cnn(to_filters(w)));
          return from_matrix(rho_gradient_fcn(to_matrix(w)));
        },
        py::arg("w"));
  m.def("wcd_gradient",
        [](const Array& w, double cap) -> Array {
          const Weights g = wcd_gradient(to_weights(w), cap);
          if (const auto* t = std::get_if<FilterTensor>(&g)) return from_filters(*t);
          return from_matrix(std::get<Matrix>(g));
        },
        py::arg("w"), py::arg("cap") = kDefaultGCap);
  m.def("posterior_covariance",
        [](double rho, std::size_t n_out, std::size_t n_in, double sigma_sq) {
          return from_matrix(posterior_covariance(LayerCorrelation(rho, n_out, n_in), sigma_sq));
        },
        py::arg("rho"), py::arg("n_out"), py::arg("n_in"), py::arg("sigma_sq") = 1.0);

  m.def("spectral_norm", [](const Array& a) { return spectral_norm(to_matrix(a)).value; }, py::arg("m"));
  m.def("gaussian_kl",
        [](const Array& mu_q, const Array& cov_q, const Array& mu_p, const Array& cov_p) {
          return gaussian_kl(std::vector<double>(mu_q.data(), mu_q.data() + mu_q.size()), to_matrix(cov_q),
                             std::vector<double>(mu_p.data(), mu_p.data() + mu_p.size()), to_matrix(cov_p));
        },
        py::arg("mu_q"), py::arg("cov_q"), py::arg("mu_p"), py::arg("cov_p"));

  m.def("kendall_tau",
        [](std::vector<double> x, std::vector<double> y, const std::string& ties) {
          const auto r = kendall_tau(x, y, tie_policy(ties));
          return py::make_tuple(r.tau, r.concordant, r.discordant, r.ties);
        },
        py::arg("x"), py::arg("y"), py::arg("ties") = "neither",
        "Returns (tau, concordant, discordant, ties).");
  m.def("pac_bayes_bound", &pac_bayes_bound, py::arg("kl"), py::arg("m"), py::arg("delta"),
        py::arg("empirical_loss"));
  m.def("generalisation_error", &generalisation_error, py::arg("test_loss"), py::arg("train_loss"));
  m.def("filter_heatmap",
        [](const Array& w) {
          const auto h = filter_heatmap(to_filters(w));
          return py::make_tuple(from_matrix(h.pairwise), h.per_filter);
        },
        py::arg("w"), "Returns (pairwise, per_filter).");

  m.def("measure_checkpoint",
        [](const std::string& path, const std::string& sigma_rule, double sigma_sq) {
          const auto ckpt = load_checkpoint(std::filesystem::path(path));
          MeasureConfig cfg;
          if (sigma_rule == "constant") {
            cfg.sigma_rule = SigmaRule::kConstant;
            cfg.sigma_sq = sigma_sq;
          } else if (sigma_rule != "one_over_l") {
            throw UsageError("sigma_rule must be 'one_over_l' or 'constant'");
          }
          return report_dict(compute_measures(ckpt.spec, ckpt.initial, ckpt.final_params, cfg));
        },
        py::arg("path"), py::arg("sigma_rule") = "one_over_l", py::arg("sigma_sq") = 1.0);

  m.def("selftest",
        [](std::uint64_t seed, std::size_t cases) {
          SelftestOptions opt;
          opt.seed = seed;
          opt.cases_per_suite = cases;
          py::list out;
          for (const auto& s : run_selftest(opt)) {
            py::dict d;
            d["name"] = s.name;
            d["max_error"] = s.max_error;
            d["tolerance"] = s.tolerance;
            d["cases"] = s.cases;
            d["passed"] = s.passed();
            out.append(d);
          }
          return out;
        },
        py::arg("seed") = SelftestOptions{}.seed, py::arg("cases") = SelftestOptions{}.cases_per_suite);
}
