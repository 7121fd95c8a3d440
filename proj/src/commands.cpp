#include <algorithm>
#include <cmath>
#include <cstdio>
#include <mutex>
#include <set>

#include "cvarstable/error.hpp"
#include "cvarstable/harness.hpp"

namespace cvarstable::harness {
namespace {

const std::set<std::string> kKnownKeys = {
    "seed", "replicates", "T", "full_protocol", "inputs", "kind", "estimators",
    "model.n", "model.r", "model.p", "model.beta", "model.alpha_adj", "model.mu", "model.sigma", "model.psi",
    "noise.stable.a", "noise.stable.b", "noise.stable.gamma", "noise.stable.delta",
    "tau.kind", "tau.modulus", "tau.explicit",
    "chain.burnin", "chain.draws", "chain.thin", "chain.beta_steps", "chain.am_weight", "chain.am_threshold",
    "chain.am_fixed_scale",
    "abc.epsilon", "abc.calibrate_quantile", "abc.calibrate_draws", "abc.anneal", "abc.anneal_every",
    "abc.blockwise", "abc.quantile_block", "abc.patience", "abc.bootstrap",
    "prior.s_scale", "prior.h", "prior.a_scale", "prior.beta_gaussian", "prior.beta_bar", "prior.beta_q",
    "prior.beta_h",
    "fit.bootstrap", "data.normalize", "data.batch_rows", "histogram.bins"};

const std::set<std::string> kEstimators = {"johansen", "gaussian-bayes", "gibbs-exact", "abc"};

MatrixXd to_matrix(const json& j, const std::string& key) {
  try {
    if (j.is_number()) return MatrixXd::Constant(1, 1, j.get<double>());
    if (!j.is_array() || j.empty()) throw ValidationError("");
    if (j[0].is_number()) {
      MatrixXd m(static_cast<Eigen::Index>(j.size()), 1);
      for (std::size_t i = 0; i < j.size(); ++i) m(static_cast<Eigen::Index>(i), 0) = j[i].get<double>();
      return m;
    }
    const std::size_t cols = j[0].size();
    MatrixXd m(static_cast<Eigen::Index>(j.size()), static_cast<Eigen::Index>(cols));
    for (std::size_t i = 0; i < j.size(); ++i) {
      if (!j[i].is_array() || j[i].size() != cols) throw ValidationError("");
      for (std::size_t c = 0; c < cols; ++c)
        m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = j[i][c].get<double>();
    }
    return m;
  } catch (const std::exception&) {
    throw ValidationError("config key '" + key + "' must be a number, a list, or a list of rows");
  }
}

std::vector<double> per_asset(const Config& cfg, const std::string& key, int n) {
  const json& j = cfg.at(key);
  std::vector<double> out;
  if (j.is_number()) {
    out.assign(static_cast<std::size_t>(n), j.get<double>());
  } else if (j.is_array() && static_cast<int>(j.size()) == n) {
    for (const auto& v : j) {
      if (!v.is_number()) throw ValidationError("config key '" + key + "' must hold numbers");
      out.push_back(v.get<double>());
    }
  } else {
    throw ValidationError("config key '" + key + "' needs one value or one per asset (" + std::to_string(n) + ")");
  }
  return out;
}

json num_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

json stable_json(const StableParams& s) { return {{"a", s.a}, {"b", s.b}, {"gamma", s.gamma}, {"delta", s.delta}}; }

std::string rep_name(const char* prefix, int i, const char* ext) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s_%04d.%s", prefix, i, ext);
  return buf;
}

/// Boundary price differences x_t - x_{t-1} for one asset.
std::vector<double> boundary_differences(const SeriesData& s, int asset) {
  std::vector<double> out;
  for (int t : s.tau_idx)
    if (t >= 1) out.push_back(s.prices(t, asset) - s.prices(t - 1, asset));
  return out;
}

/// Refuses inputs whose content no longer matches a sibling manifest.
void verify_against_manifest(const fs::path& input) {
  const fs::path manifest = input.parent_path() / "manifest.json";
  if (!fs::exists(manifest)) return;
  const json m = json::parse(read_text(manifest), nullptr, false);
  if (m.is_discarded() || !m.contains("replicates")) return;
  const std::string name = input.filename().string();
  for (const auto& rep : m["replicates"]) {
    if (rep.value("file", "") != name) continue;
    const std::string want = rep.value("hash", "");
    const std::string got = file_hash(input);
    if (want != got)
      throw ValidationError("hash mismatch for " + input.string() + " (manifest " + want + ", file " + got +
                            "); refusing to use modified data");
  }
}

struct Source {
  std::string label;
  std::string hash;
  SeriesData series;
};

std::vector<Source> load_sources(const ExperimentConfig& ec, const std::vector<fs::path>& inputs) {
  std::vector<Source> out;
  if (inputs.empty()) {
    if (ec.model.sigma.size() == 0) throw ValidationError("no input files and no model to simulate from");
    if (ec.replicates < 1) throw ValidationError("replicates must be >= 1");
    const auto tau = ec.tau.resolve(ec.T);
    if (!tau.empty() && ec.stable.empty()) throw ValidationError("boundary schedule given without noise.stable.*");
    out.resize(static_cast<std::size_t>(ec.replicates));
    for (int i = 0; i < ec.replicates; ++i) {
      Rng rng(replicate_seed(ec.seed, i, 0));
      out[static_cast<std::size_t>(i)] = {"simulated:" + std::to_string(i), "",
                                          simulate_cvar(ec.model, ec.stable, tau, ec.T, rng)};
    }
  } else {
    for (const auto& p : inputs) {
      verify_against_manifest(p);
      out.push_back({p.filename().string(), file_hash(p), read_series_csv(p)});
    }
  }
  if (ec.batch_rows > 0) {
    std::vector<Source> batched;
    for (const auto& s : out) {
      const auto parts = split_batches(s.series, ec.batch_rows);
      for (std::size_t b = 0; b < parts.size(); ++b)
        batched.push_back({s.label + "#batch" + std::to_string(b), s.hash, parts[b]});
    }
    out = std::move(batched);
  }
  return out;
}

json header(const Config& cfg, const char* command, const ExperimentConfig& ec) {
  json out;
  out["command"] = command;
  out["config"] = cfg.echo();
  out["config_hash"] = cfg.hash();
  out["seed"] = ec.seed;
  return out;
}

json acceptance_json(const AcceptanceStats& a) {
  auto rate = [](const BlockRate& b) { return b.proposed > 0 ? json(b.rate()) : json(nullptr); };
  return {{"sigma", rate(a.sigma)}, {"b_tilde", rate(a.b_tilde)}, {"lambda", rate(a.lambda)},
          {"beta", rate(a.beta)}, {"overall", rate(a.joint)}};
}

/// Johansen estimates laid out with the same names as chain summaries.
std::vector<ParamSummary> johansen_summary(const CvarParams& p) {
  ChainTrace t;
  t.r = p.r;
  ChainState s;
  s.sigma = p.sigma;
  s.beta_free = free_part(p.beta_coint, p.r);
  const int n = p.n();
  s.b.resize(1 + n * (p.p - 1) + p.r, n);
  s.b.row(0) = p.mu.transpose();
  for (int lag = 1; lag < p.p; ++lag) s.b.block(1 + n * (lag - 1), 0, n, n) = p.psi[static_cast<std::size_t>(lag - 1)].transpose();
  s.b.bottomRows(p.r) = p.alpha_adj.transpose();
  t.states.push_back(s);
  auto out = summarise(t);
  for (auto& x : out) x.stdev = std::numeric_limits<double>::quiet_NaN();
  return out;
}

std::vector<StableParams> stable_for(const ExperimentConfig& ec, const SeriesData& s, json& notes) {
  if (!ec.stable.empty()) return ec.stable;
  std::vector<StableParams> out;
  for (int i = 0; i < s.n(); ++i) {
    const auto v = boundary_differences(s, i);
    if (static_cast<int>(v.size()) < kMinQuantilePoints)
      throw ValidationError("no noise.stable.* configured and only " + std::to_string(v.size()) +
                            " boundary points to fit them from");
    const StableFit f = fit_mcculloch(v, kMinQuantilePoints);
    out.push_back(f.params);
    notes.push_back("stable law for asset " + std::to_string(i + 1) + " fitted from the data");
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------- config resolution

ExperimentConfig ExperimentConfig::from(const Config& cfg) {
  const json echo = cfg.echo();
  std::vector<std::string> unknown;
  for (auto it = echo.begin(); it != echo.end(); ++it)
    if (!kKnownKeys.count(it.key())) unknown.push_back(it.key());
  if (!unknown.empty()) {
    std::string msg = "unknown config keys:";
    for (const auto& k : unknown) msg += " " + k;
    throw ValidationError(msg);
  }

  ExperimentConfig ec;
  if (!cfg.has("seed")) throw ValidationError("config must set 'seed' (there is no wall-clock seeding)");
  ec.seed = cfg.get<std::uint64_t>("seed", 0);
  ec.full_protocol = cfg.get<bool>("full_protocol", false);
  ec.replicates = cfg.get<int>("replicates", 10);
  ec.T = cfg.get<int>("T", 500);
  ec.chain.burnin = cfg.get<int>("chain.burnin", 2000);
  ec.chain.draws = cfg.get<int>("chain.draws", 5000);
  if (ec.full_protocol) {
    ec.chain.burnin = 10000;
    ec.chain.draws = 20000;
    ec.replicates = std::max(ec.replicates, 20);
  }
  ec.chain.thin = cfg.get<int>("chain.thin", 1);
  ec.chain.beta_steps = cfg.get<int>("chain.beta_steps", 1);
  ec.chain.am_weight = cfg.get<double>("chain.am_weight", 0.95);
  ec.chain.am_threshold = cfg.get<int>("chain.am_threshold", 100);
  ec.chain.am_fixed_scale = cfg.get<double>("chain.am_fixed_scale", 0.1);
  ec.chain.validate();
  if (ec.T < 3) throw ValidationError("T must be >= 3");

  int n = cfg.get<int>("model.n", 0);
  const int r = cfg.get<int>("model.r", 1);
  const int p = cfg.get<int>("model.p", 1);
  if (cfg.has("model.beta")) {
    const MatrixXd beta = to_matrix(cfg.at("model.beta"), "model.beta");
    if (n == 0) n = static_cast<int>(beta.rows());
    CvarParams& m = ec.model;
    m.r = r;
    m.p = p;
    m.beta_coint = beta;
    if (!cfg.has("model.alpha_adj")) throw ValidationError("model.beta given without model.alpha_adj");
    m.alpha_adj = to_matrix(cfg.at("model.alpha_adj"), "model.alpha_adj");
    m.mu = cfg.has("model.mu") ? VectorXd(to_matrix(cfg.at("model.mu"), "model.mu").col(0)) : VectorXd::Zero(n);
    if (cfg.has("model.sigma")) {
      const MatrixXd s = to_matrix(cfg.at("model.sigma"), "model.sigma");
      m.sigma = s.size() == 1 ? MatrixXd(s(0, 0) * MatrixXd::Identity(n, n)) : s;
    } else {
      m.sigma = MatrixXd::Identity(n, n);
    }
    if (cfg.has("model.psi")) {
      const json& j = cfg.at("model.psi");
      if (!j.is_array()) throw ValidationError("model.psi must be a list of matrices");
      for (const auto& e : j) m.psi.push_back(to_matrix(e, "model.psi"));
    }
    m.validate();
  }
  if (cfg.has("noise.stable.a")) {
    if (n == 0) throw ValidationError("noise.stable.* needs the number of assets (model.n or model.beta)");
    const auto a = per_asset(cfg, "noise.stable.a", n);
    const auto b = cfg.has("noise.stable.b") ? per_asset(cfg, "noise.stable.b", n) : std::vector<double>(n, 0.0);
    const auto g = cfg.has("noise.stable.gamma") ? per_asset(cfg, "noise.stable.gamma", n) : std::vector<double>(n, 1.0);
    const auto d = cfg.has("noise.stable.delta") ? per_asset(cfg, "noise.stable.delta", n) : std::vector<double>(n, 0.0);
    for (int i = 0; i < n; ++i) {
      StableParams s{a[static_cast<std::size_t>(i)], b[static_cast<std::size_t>(i)], g[static_cast<std::size_t>(i)],
                     d[static_cast<std::size_t>(i)]};
      s.validate();
      ec.stable.push_back(s);
    }
  }

  const std::string tk = cfg.get<std::string>("tau.kind", cfg.has("tau.modulus") ? "modulus" : "none");
  if (tk == "modulus") {
    ec.tau = TauSchedule::every(cfg.get<int>("tau.modulus", 0));
    if (ec.tau.modulus < 1) throw ValidationError("tau.modulus must be >= 1");
  } else if (tk == "explicit") {
    ec.tau = TauSchedule::rows(cfg.get<std::vector<int>>("tau.explicit", {}));
  } else if (tk != "none") {
    throw ValidationError("tau.kind must be none, modulus or explicit");
  }

  ec.abc.chain = ec.chain;
  if (cfg.has("abc.epsilon")) ec.abc.epsilon = cfg.get<double>("abc.epsilon", 0.0);
  ec.abc.calibrate_quantile = cfg.get<double>("abc.calibrate_quantile", 10.0);
  ec.abc.calibrate_draws = cfg.get<int>("abc.calibrate_draws", 200);
  ec.abc.anneal = cfg.get<std::vector<double>>("abc.anneal", {});
  ec.abc.anneal_every = cfg.get<int>("abc.anneal_every", 0);
  ec.abc.blockwise = cfg.get<bool>("abc.blockwise", false);
  ec.abc.quantile_block = cfg.get<bool>("abc.quantile_block", true);
  ec.abc.patience = cfg.get<long>("abc.patience", 20000);
  ec.abc.bootstrap = cfg.get<int>("abc.bootstrap", 200);
  ec.abc.validate();

  if (cfg.has("estimators")) {
    const json& j = cfg.at("estimators");
    if (j.is_string()) ec.estimators = {j.get<std::string>()};
    else ec.estimators = cfg.get<std::vector<std::string>>("estimators", {});
  } else {
    ec.estimators = {"gaussian-bayes"};
  }
  for (const auto& e : ec.estimators)
    if (!kEstimators.count(e))
      throw ValidationError("unknown estimator '" + e + "' (johansen, gaussian-bayes, gibbs-exact, abc)");

  ec.fit_bootstrap = cfg.get<int>("fit.bootstrap", 200);
  ec.normalise = cfg.get<bool>("data.normalize", false);
  ec.batch_rows = cfg.get<int>("data.batch_rows", 0);
  ec.histogram_bins = cfg.get<int>("histogram.bins", 30);
  if (ec.fit_bootstrap < 2) throw ValidationError("fit.bootstrap must be >= 2");
  if (ec.histogram_bins < 1) throw ValidationError("histogram.bins must be >= 1");

  if (n > 0) {
    const int k = 1 + n * (p - 1) + r;
    PriorSpec pr = PriorSpec::vague(n, k, r);
    pr.s_mat = cfg.get<double>("prior.s_scale", 0.01) * MatrixXd::Identity(n, n);
    pr.h_dof = cfg.get<double>("prior.h", n + 2.0);
    pr.a_mat = cfg.get<double>("prior.a_scale", 0.01) * MatrixXd::Identity(k, k);
    pr.gaussian_beta_prior = cfg.get<bool>("prior.beta_gaussian", false);
    if (cfg.has("prior.beta_bar")) pr.beta_bar = to_matrix(cfg.at("prior.beta_bar"), "prior.beta_bar");
    pr.q_prior = cfg.get<double>("prior.beta_q", 1.0) * MatrixXd::Identity(r, r);
    pr.h_mat = cfg.get<double>("prior.beta_h", 1.0) * MatrixXd::Identity(n, n);
    pr.validate(n, k, r);
    ec.priors = pr;
  }
  return ec;
}

// ---------------------------------------------------------------- simulate

json cmd_simulate(const Config& cfg, const RunOptions& opt) {
  const ExperimentConfig ec = ExperimentConfig::from(cfg);
  if (ec.model.sigma.size() == 0) throw ValidationError("simulate needs model.beta, model.alpha_adj and friends");
  if (ec.replicates < 1) throw ValidationError("replicates must be >= 1 (nothing to simulate)");
  const auto tau = ec.tau.resolve(ec.T);
  if (!tau.empty() && ec.stable.empty()) throw ValidationError("boundary schedule given without noise.stable.*");

  auto make = [&](int i) {
    Rng rng(replicate_seed(ec.seed, i, 0));
    const SeriesData s = simulate_cvar(ec.model, ec.stable, tau, ec.T, rng);
    const fs::path file = opt.out / rep_name("rep", i, "csv");
    write_series_csv(file, s);
    json row = {{"id", i}, {"seed", replicate_seed(ec.seed, i, 0)}, {"file", file.filename().string()},
                {"hash", file_hash(file)}, {"rows", s.length()}, {"boundary_rows", s.tau_idx.size()}};
    row["warnings"] = s.meta.warnings;
    return row;
  };

  const fs::path manifest_path = opt.out / "manifest.json";
  if (opt.only) {
    const int id = *opt.only;
    if (id < 0 || id >= ec.replicates) throw ValidationError("--only id outside 0..replicates-1");
    const json m = json::parse(read_text(manifest_path), nullptr, false);
    if (m.is_discarded()) throw IoError(manifest_path.string() + ": unreadable manifest");
    if (m.value("config_hash", "") != cfg.hash())
      throw ValidationError("config hash differs from " + manifest_path.string() + "; refusing to regenerate");
    json row = make(id);
    const std::string want = m["replicates"].at(static_cast<std::size_t>(id)).value("hash", "");
    if (row["hash"] != want) throw NumericError("regenerated replicate does not match its manifest hash");
    return row;
  }

  std::vector<json> rows(static_cast<std::size_t>(ec.replicates));
  parallel_for(ec.replicates, opt.threads, [&](int i) { rows[static_cast<std::size_t>(i)] = make(i); });
  json out = header(cfg, "simulate", ec);
  json taus = json::array();
  for (int t : tau) taus.push_back(t + 1);
  out["boundary_rows_one_based"] = taus;
  out["replicates"] = rows;
  write_text(manifest_path, out.dump(2) + "\n");
  return out;
}

// ---------------------------------------------------------------- fit-stable

json cmd_fit_stable(const Config& cfg, const RunOptions& opt) {
  const ExperimentConfig ec = ExperimentConfig::from(cfg);
  std::vector<fs::path> inputs = opt.inputs;
  for (const auto& s : cfg.get<std::vector<std::string>>("inputs", {})) inputs.emplace_back(s);
  if (inputs.empty()) throw ValidationError("fit-stable needs at least one series CSV");

  std::vector<json> files(inputs.size());
  parallel_for(static_cast<int>(inputs.size()), opt.threads, [&](int fi) {
    const fs::path& p = inputs[static_cast<std::size_t>(fi)];
    verify_against_manifest(p);
    const SeriesData s = read_series_csv(p);
    json assets = json::array();
    for (int i = 0; i < s.n(); ++i) {
      const auto v = boundary_differences(s, i);
      if (static_cast<int>(v.size()) < kMinQuantilePoints)
        throw ValidationError(p.string() + ": asset " + s.meta.assets[static_cast<std::size_t>(i)] + " has only " +
                              std::to_string(v.size()) + " boundary points (need " +
                              std::to_string(kMinQuantilePoints) + ")");
      const StableFit fit = fit_mcculloch(v, kMinQuantilePoints);
      Rng rng(replicate_seed(ec.seed, fi, 10 + i));
      std::uniform_int_distribution<std::size_t> pick(0, v.size() - 1);
      std::vector<double> ba, bb, bg, bd, res(v.size());
      for (int b = 0; b < ec.fit_bootstrap; ++b) {
        for (auto& x : res) x = v[pick(rng)];
        try {
          const StableFit f = fit_mcculloch(res, kMinQuantilePoints);
          ba.push_back(f.params.a);
          bb.push_back(f.params.b);
          bg.push_back(f.params.gamma);
          bd.push_back(f.params.delta);
        } catch (const NumericError&) {
          // Degenerate resample (zero IQR); skipped.
        }
      }
      auto ci = [](std::vector<double> x) {
        if (x.size() < 2) return json(nullptr);
        std::sort(x.begin(), x.end());
        return json::array({sample_quantile(x, 0.025), sample_quantile(x, 0.975)});
      };
      json a = {{"asset", s.meta.assets[static_cast<std::size_t>(i)]}, {"n_points", v.size()}};
      a["params"] = stable_json(fit.params);
      a["ci95"] = {{"a", ci(ba)}, {"b", ci(bb)}, {"gamma", ci(bg)}, {"delta", ci(bd)}};
      a["bootstrap_resamples"] = ba.size();
      a["clamped"] = fit.clamped;
      a["near_gaussian"] = fit.near_gaussian;
      a["small_sample"] = v.size() < 100;
      a["notes"] = fit.notes;
      assets.push_back(a);
    }
    files[static_cast<std::size_t>(fi)] = {{"file", p.filename().string()}, {"hash", file_hash(p)}, {"assets", assets}};
  });
  json out = header(cfg, "fit-stable", ec);
  out["files"] = files;
  write_text(opt.out / "fit_stable.json", out.dump(2) + "\n");
  return out;
}

// ---------------------------------------------------------------- bias-study

json cmd_bias_study(const Config& cfg, const RunOptions& opt) {
  const ExperimentConfig ec = ExperimentConfig::from(cfg);
  if (ec.model.sigma.size() == 0) throw ValidationError("bias-study needs a model to simulate from");
  if (ec.replicates < 1) throw ValidationError("replicates must be >= 1");
  const auto tau = ec.tau.resolve(ec.T);
  if (tau.empty() || ec.stable.empty()) throw ValidationError("bias-study needs a boundary schedule and noise.stable.*");
  std::vector<std::string> est;
  for (const auto& e : cfg.has("estimators") ? ec.estimators : std::vector<std::string>{"johansen", "gaussian-bayes"}) {
    if (e == "johansen" || e == "gaussian-bayes") est.push_back(e);
  }
  if (est.empty()) throw ValidationError("bias-study compares johansen and/or gaussian-bayes; neither is selected");
  const int r = ec.model.r, p = ec.model.p;
  const std::vector<std::string> groups = {"clean", "contaminated"};
  // values[estimator][group][replicate]
  std::vector<std::vector<std::vector<double>>> values(
      est.size(), std::vector<std::vector<double>>(2, std::vector<double>(static_cast<std::size_t>(ec.replicates), NAN)));
  std::vector<std::string> failures;
  std::mutex fail_mu;

  parallel_for(ec.replicates, opt.threads, [&](int i) {
    for (int g = 0; g < 2; ++g) {
      Rng data_rng(replicate_seed(ec.seed, i, 0));
      const SeriesData s = simulate_cvar(ec.model, ec.stable, g == 0 ? std::vector<int>{} : tau, ec.T, data_rng);
      for (std::size_t e = 0; e < est.size(); ++e) {
        try {
          double v = NAN;
          if (est[e] == "johansen") {
            v = johansen_estimate(s, p, r).params.beta_coint(r, 0);
          } else {
            Rng rng(replicate_seed(ec.seed, i, 2 + g));
            const ChainTrace t = gaussian_bayes_estimate(s, p, r, ec.priors, ec.chain, rng);
            v = summarise(t).front().mean;
          }
          values[e][static_cast<std::size_t>(g)][static_cast<std::size_t>(i)] = v;
        } catch (const NumericError& err) {
          std::lock_guard<std::mutex> lock(fail_mu);
          failures.push_back(est[e] + "/" + groups[static_cast<std::size_t>(g)] + "/" + std::to_string(i) + ": " + err.what());
        }
      }
    }
  });
  std::sort(failures.begin(), failures.end());

  json out = header(cfg, "bias-study", ec);
  out["parameter"] = "beta[" + std::to_string(r + 1) + ",1]";
  out["truth"] = ec.model.beta_coint(r, 0);
  out["replicates"] = ec.replicates;
  json results = json::object();
  std::string csv = "replicate";
  for (const auto& e : est)
    for (const auto& g : groups) csv += "," + e + "_" + g;
  csv += "\n";
  for (std::size_t e = 0; e < est.size(); ++e) {
    json er = json::object();
    std::vector<double> pooled;
    Dispersion d[2];
    for (int g = 0; g < 2; ++g) {
      d[g] = dispersion(values[e][static_cast<std::size_t>(g)]);
      for (double v : values[e][static_cast<std::size_t>(g)])
        if (std::isfinite(v)) pooled.push_back(v);
    }
    std::vector<double> sorted = pooled;
    std::sort(sorted.begin(), sorted.end());
    double lo = 0, hi = 0;
    if (!sorted.empty()) {
      const double q1 = sample_quantile(sorted, 0.25), q3 = sample_quantile(sorted, 0.75);
      lo = std::max(sorted.front(), q1 - 5 * (q3 - q1));
      hi = std::min(sorted.back(), q3 + 5 * (q3 - q1));
    }
    for (int g = 0; g < 2; ++g) {
      const auto& vals = values[e][static_cast<std::size_t>(g)];
      const Histogram h = histogram(vals, lo, hi, ec.histogram_bins);
      json gj;
      gj["count"] = d[g].count;
      gj["mean"] = d[g].mean;
      gj["stdev"] = d[g].sd;
      gj["trimmed_count"] = d[g].trimmed_count;
      gj["trimmed_mean"] = d[g].trimmed_mean;
      gj["trimmed_stdev"] = d[g].trimmed_sd;
      gj["histogram"] = {{"lo", h.lo}, {"hi", h.hi}, {"counts", h.counts}};
      er[groups[static_cast<std::size_t>(g)]] = gj;
    }
    er["dispersion_ratio"] = num_or_null(d[0].sd > 0 ? d[1].sd / d[0].sd : NAN);
    er["trimmed_dispersion_ratio"] = num_or_null(d[0].trimmed_sd > 0 ? d[1].trimmed_sd / d[0].trimmed_sd : NAN);
    results[est[e]] = er;
  }
  for (int i = 0; i < ec.replicates; ++i) {
    csv += std::to_string(i);
    for (std::size_t e = 0; e < est.size(); ++e)
      for (int g = 0; g < 2; ++g) {
        char buf[40];
        std::snprintf(buf, sizeof buf, ",%.17g", values[e][static_cast<std::size_t>(g)][static_cast<std::size_t>(i)]);
        csv += buf;
      }
    csv += "\n";
  }
  out["results"] = results;
  out["failures"] = failures;
  out["se_note"] = ec.replicates > 1 ? json("stdev / sqrt(replicates)") : json("undefined for one replicate");
  write_text(opt.out / "bias_study.json", out.dump(2) + "\n");
  write_text(opt.out / "bias_study.csv", csv);
  return out;
}

// ---------------------------------------------------------------- estimate

json cmd_estimate(const Config& cfg, const RunOptions& opt) {
  const ExperimentConfig ec = ExperimentConfig::from(cfg);
  std::vector<fs::path> inputs = opt.inputs;
  for (const auto& s : cfg.get<std::vector<std::string>>("inputs", {})) inputs.emplace_back(s);
  std::vector<Source> sources = load_sources(ec, inputs);
  const int R = static_cast<int>(sources.size());
  const int r = cfg.get<int>("model.r", 1), p = cfg.get<int>("model.p", 1);

  for (const auto& e : ec.estimators)
    if (e == "gibbs-exact")
      for (const auto& s : ec.stable)
        if (!s.is_symmetric())
          throw ValidationError("gibbs-exact requires symmetric stable noise (b = 0); use the abc estimator for skewed noise");

  struct Cell {
    std::vector<ParamSummary> summ;
    json row;
  };
  std::vector<std::vector<Cell>> cells(ec.estimators.size(), std::vector<Cell>(static_cast<std::size_t>(R)));
  const fs::path trace_dir = opt.out / "traces";

  parallel_for(R, opt.threads, [&](int i) {
    Source src = sources[static_cast<std::size_t>(i)];
    json notes = json::array();
    if (ec.normalise) {
      const Normalisation nm = normalise_series(src.series);
      notes.push_back({{"median", nm.median}, {"sd", nm.sd}});
    }
    const int n = src.series.n();
    PriorSpec priors = ec.priors;
    const int k = 1 + n * (p - 1) + r;
    if (priors.s_mat.rows() != n || priors.a_mat.rows() != k) priors = PriorSpec::vague(n, k, r);
    for (std::size_t e = 0; e < ec.estimators.size(); ++e) {
      const std::string& name = ec.estimators[e];
      Cell& c = cells[e][static_cast<std::size_t>(i)];
      c.row = {{"id", i}, {"source", src.label}};
      if (!src.hash.empty()) c.row["source_hash"] = src.hash;
      c.row["notes"] = notes;
      if (name == "johansen") {
        c.summ = johansen_summary(johansen_estimate(src.series, p, r).params);
      } else {
        const int stream = name == "gaussian-bayes" ? 2 : name == "gibbs-exact" ? 3 : 4;
        const std::uint64_t seed = replicate_seed(ec.seed, i, stream);
        Rng rng(seed);
        ChainTrace trace;
        if (name == "gaussian-bayes") {
          trace = gaussian_bayes_estimate(src.series, p, r, priors, ec.chain, rng);
        } else {
          std::vector<StableParams> stable = stable_for(ec, src.series, c.row["notes"]);
          if (name == "gibbs-exact") {
            for (auto& s : stable) {
              if (!s.is_symmetric() && std::abs(s.b) > 0.1)
                throw ValidationError("fitted skew " + std::to_string(s.b) + " is too large for gibbs-exact; use abc");
              s.b = 0.0;
            }
            trace = run_gibbs(src.series, p, r, stable, priors, ec.chain, rng);
          } else {
            AbcRun run = run_hadmcmc_abc(src.series, p, r, stable, priors, ec.abc, rng);
            c.row["epsilon"] = num_or_null(run.epsilon);
            trace = std::move(run.trace);
          }
          json sj = json::array();
          for (const auto& s : stable) sj.push_back(stable_json(s));
          c.row["stable"] = sj;
        }
        trace.seed = seed;
        c.summ = summarise(trace);
        c.row["seed"] = seed;
        c.row["acceptance"] = acceptance_json(trace.acceptance);
        const fs::path tf = trace_dir / ("trace_" + name + "_" + rep_name("rep", i, "csv"));
        write_trace_csv(tf, trace);
        c.row["trace"] = (fs::path("traces") / tf.filename()).string();
        c.row["trace_hash"] = file_hash(tf);
      }
      json mm = json::object(), sd = json::object();
      for (const auto& s : c.summ) {
        mm[s.name] = s.mean;
        sd[s.name] = num_or_null(s.stdev);
      }
      c.row["mmse"] = mm;
      c.row["stdev"] = sd;
    }
  });

  json out = header(cfg, "estimate", ec);
  out["replicates"] = R;
  json est = json::object();
  for (std::size_t e = 0; e < ec.estimators.size(); ++e) {
    const auto& col = cells[e];
    json params = json::array();
    const auto& names = col.front().summ;
    for (std::size_t j = 0; j < names.size(); ++j) {
      double sm = 0, ss = 0, sq = 0;
      bool has_sd = true;
      for (const auto& c : col) {
        sm += c.summ[j].mean;
        if (std::isfinite(c.summ[j].stdev)) ss += c.summ[j].stdev;
        else has_sd = false;
      }
      const double mean = sm / R;
      for (const auto& c : col) sq += (c.summ[j].mean - mean) * (c.summ[j].mean - mean);
      json pj = {{"name", names[j].name}, {"ave_mmse", mean}};
      pj["ave_stdev"] = has_sd ? json(ss / R) : json(nullptr);
      pj["se"] = R > 1 ? json(std::sqrt(sq / (R - 1)) / std::sqrt(static_cast<double>(R))) : json(nullptr);
      params.push_back(pj);
    }
    json ej;
    ej["parameters"] = params;
    if (ec.estimators[e] != "johansen") {
      json acc = json::object();
      for (const char* key : {"sigma", "b_tilde", "lambda", "beta", "overall"}) {
        double s = 0;
        int cnt = 0;
        for (const auto& c : col) {
          const json& v = c.row["acceptance"][key];
          if (v.is_number()) {
            s += v.get<double>();
            ++cnt;
          }
        }
        acc[key] = cnt ? json(s / cnt) : json(nullptr);
      }
      ej["ave_acceptance"] = acc;
    }
    json rows = json::array();
    for (const auto& c : col) rows.push_back(c.row);
    ej["replicates"] = rows;
    est[ec.estimators[e]] = ej;
  }
  out["estimators"] = est;
  write_text(opt.out / "estimate.json", out.dump(2) + "\n");
  return out;
}

}  // namespace cvarstable::harness
