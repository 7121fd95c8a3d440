#include <pybind11/complex.h>
#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "cvarstable/abc.hpp"
#include "cvarstable/error.hpp"
#include "cvarstable/harness.hpp"

namespace py = pybind11;
using namespace cvarstable;

namespace {

SeriesData make_series(const MatrixXd& prices, std::vector<int> tau_idx) {
  SeriesData s;
  s.prices = prices;
  std::sort(tau_idx.begin(), tau_idx.end());
  s.tau_idx = std::move(tau_idx);
  for (int i = 0; i < prices.cols(); ++i) s.meta.assets.push_back("x" + std::to_string(i + 1));
  s.validate();
  return s;
}

py::dict trace_dict(const ChainTrace& t) {
  const auto cols = trace_columns(t);
  MatrixXd draws(static_cast<Eigen::Index>(t.states.size()), static_cast<Eigen::Index>(cols.size()));
  for (std::size_t i = 0; i < t.states.size(); ++i) {
    const auto v = flatten(t.states[i]);
    for (std::size_t j = 0; j < v.size(); ++j) draws(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = v[j];
  }
  py::dict mean, sd;
  for (const auto& s : summarise(t)) {
    mean[py::str(s.name)] = s.mean;
    sd[py::str(s.name)] = s.stdev;
  }
  auto rate = [](const BlockRate& b) { return b.proposed ? py::object(py::float_(b.rate())) : py::object(py::none()); };
  py::dict acc;
  acc["sigma"] = rate(t.acceptance.sigma);
  acc["b_tilde"] = rate(t.acceptance.b_tilde);
  acc["lambda"] = rate(t.acceptance.lambda);
  acc["beta"] = rate(t.acceptance.beta);
  acc["overall"] = rate(t.acceptance.joint);
  py::dict out;
  out["columns"] = cols;
  out["draws"] = draws;
  out["mean"] = mean;
  out["stdev"] = sd;
  out["acceptance"] = acc;
  if (!t.distance.empty()) out["distance"] = t.distance;
  return out;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Cointegrated VAR estimation with stable boundary noise";

  static py::exception<Error> base(m, "CvarStableError");
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      switch (e.kind()) {
        case ErrorKind::Validation: PyErr_SetString(PyExc_ValueError, e.what()); break;
        case ErrorKind::Io: PyErr_SetString(PyExc_OSError, e.what()); break;
        default: PyErr_SetString(PyExc_ArithmeticError, e.what());
      }
    }
  });

  py::class_<StableParams>(m, "StableParams")
      .def(py::init([](double a, double b, double gamma, double delta) {
             StableParams s{a, b, gamma, delta};
             s.validate();
             return s;
           }),
           py::arg("a") = 2.0, py::arg("b") = 0.0, py::arg("gamma") = 1.0, py::arg("delta") = 0.0)
      .def_readwrite("a", &StableParams::a)
      .def_readwrite("b", &StableParams::b)
      .def_readwrite("gamma", &StableParams::gamma)
      .def_readwrite("delta", &StableParams::delta)
      .def("__repr__", [](const StableParams& s) {
        return "StableParams(a=" + std::to_string(s.a) + ", b=" + std::to_string(s.b) +
               ", gamma=" + std::to_string(s.gamma) + ", delta=" + std::to_string(s.delta) + ")";
      });

  m.def("sample_stable", [](const StableParams& s, std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    return sample_stable(s, n, rng);
  }, py::arg("params"), py::arg("n"), py::arg("seed"));
  m.def("stable_cf", &stable_cf, py::arg("params"), py::arg("t"));
  m.def("fit_stable", [](std::vector<double> x, std::size_t min_samples) {
    const StableFit f = fit_mcculloch(x, min_samples);
    py::dict out;
    out["params"] = f.params;
    out["nu_alpha"] = f.stats.nu_alpha;
    out["nu_beta"] = f.stats.nu_beta;
    out["clamped"] = f.clamped;
    out["near_gaussian"] = f.near_gaussian;
    out["notes"] = f.notes;
    return out;
  }, py::arg("samples"), py::arg("min_samples") = 100);

  py::class_<TransformSet>(m, "TransformSet")
      .def_readonly("q_block", &TransformSet::q_block)
      .def_readonly("tilde_t", &TransformSet::tilde_t)
      .def_readonly("total_t", &TransformSet::total_t)
      .def_readonly("tau_idx", &TransformSet::tau_idx)
      .def("applied_block", &TransformSet::applied_block);
  m.def("build_transform", &build_transform, py::arg("sigma"), py::arg("d_lambda"), py::arg("tilde_t"),
        py::arg("total_t"), py::arg("tau_idx"));
  m.def("forward_B", &forward_B, py::arg("b"), py::arg("transform"));
  m.def("recover_B", &recover_B, py::arg("b_tilde"), py::arg("transform"));

  m.def("simulate", [](const MatrixXd& beta, const MatrixXd& alpha_adj, const MatrixXd& sigma,
                       std::optional<VectorXd> mu, std::vector<MatrixXd> psi, std::vector<StableParams> stable,
                       std::vector<int> tau_idx, int T, std::uint64_t seed) {
    CvarParams p;
    p.beta_coint = beta;
    p.alpha_adj = alpha_adj;
    p.sigma = sigma;
    p.mu = mu ? *mu : VectorXd::Zero(sigma.rows());
    p.psi = std::move(psi);
    p.r = static_cast<int>(beta.cols());
    p.p = static_cast<int>(p.psi.size()) + 1;
    p.validate();
    Rng rng(seed);
    const SeriesData s = simulate_cvar(p, stable, tau_idx, T, rng);
    py::dict out;
    out["prices"] = s.prices;
    out["tau_idx"] = s.tau_idx;
    out["warnings"] = s.meta.warnings;
    return out;
  }, py::arg("beta"), py::arg("alpha_adj"), py::arg("sigma"), py::arg("mu") = py::none(),
     py::arg("psi") = std::vector<MatrixXd>{}, py::arg("stable") = std::vector<StableParams>{},
     py::arg("tau_idx") = std::vector<int>{}, py::arg("T") = 500, py::arg("seed") = 0);

  m.def("johansen", [](const MatrixXd& prices, std::vector<int> tau_idx, int p, int r) {
    const JohansenResult j = johansen_estimate(make_series(prices, std::move(tau_idx)), p, r);
    py::dict out;
    out["beta"] = j.params.beta_coint;
    out["alpha"] = j.params.alpha_adj;
    out["mu"] = j.params.mu;
    out["sigma"] = j.params.sigma;
    out["psi"] = j.params.psi;
    out["eigenvalues"] = j.eigenvalues;
    out["degenerate"] = j.degenerate;
    return out;
  }, py::arg("prices"), py::arg("tau_idx") = std::vector<int>{}, py::arg("p") = 1, py::arg("r") = 1);

  m.def("estimate", [](const MatrixXd& prices, std::vector<int> tau_idx, const std::string& method,
                       std::vector<StableParams> stable, int p, int r, int burnin, int draws, std::uint64_t seed,
                       bool blockwise, double calibrate_quantile, std::optional<double> epsilon) {
    const SeriesData s = make_series(prices, std::move(tau_idx));
    const int n = s.n();
    const PriorSpec priors = PriorSpec::vague(n, 1 + n * (p - 1) + r, r);
    ChainConfig cfg;
    cfg.burnin = burnin;
    cfg.draws = draws;
    cfg.validate();
    Rng rng(seed);
    if (method == "gaussian-bayes") return trace_dict(gaussian_bayes_estimate(s, p, r, priors, cfg, rng));
    if (method == "gibbs-exact") return trace_dict(run_gibbs(s, p, r, stable, priors, cfg, rng));
    if (method == "abc") {
      AbcConfig a;
      a.chain = cfg;
      a.blockwise = blockwise;
      a.calibrate_quantile = calibrate_quantile;
      if (epsilon) a.epsilon = *epsilon;
      a.validate();
      AbcRun run = run_hadmcmc_abc(s, p, r, stable, priors, a, rng);
      py::dict out = trace_dict(run.trace);
      out["epsilon"] = run.epsilon;
      return out;
    }
    throw ValidationError("method must be gaussian-bayes, gibbs-exact or abc");
  }, py::arg("prices"), py::arg("tau_idx") = std::vector<int>{}, py::arg("method") = "gaussian-bayes",
     py::arg("stable") = std::vector<StableParams>{}, py::arg("p") = 1, py::arg("r") = 1, py::arg("burnin") = 2000,
     py::arg("draws") = 5000, py::arg("seed") = 0, py::arg("blockwise") = false,
     py::arg("calibrate_quantile") = 10.0, py::arg("epsilon") = py::none());

  m.def("run_command", [](const std::string& command, const std::string& config_text, const std::string& out,
                          int threads, std::vector<std::string> inputs) {
    namespace h = harness;
    h::Config cfg = h::Config::parse(config_text);
    h::RunOptions opt;
    opt.out = out;
    opt.threads = threads;
    for (auto& i : inputs) opt.inputs.emplace_back(i);
    std::filesystem::create_directories(opt.out);
    h::json report;
    if (command == "simulate") report = h::cmd_simulate(cfg, opt);
    else if (command == "fit-stable") report = h::cmd_fit_stable(cfg, opt);
    else if (command == "bias-study") report = h::cmd_bias_study(cfg, opt);
    else if (command == "estimate") report = h::cmd_estimate(cfg, opt);
    else throw ValidationError("unknown command '" + command + "'");
    return report.dump();
  }, py::arg("command"), py::arg("config"), py::arg("out"), py::arg("threads") = 1,
     py::arg("inputs") = std::vector<std::string>{});
}
