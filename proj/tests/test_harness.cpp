#include <doctest.h>

#include <atomic>
#include <cmath>
#include <fstream>

#include "cvarstable/error.hpp"
#include "cvarstable/harness.hpp"
#include "support.hpp"

using namespace cvarstable;
using namespace cvarstable::harness;

namespace {

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    path = fs::temp_directory_path() / ("cvarstable_" + tag + "_" + std::to_string(::getpid()) + "_" +
                                        std::to_string(counter++));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

const char* kSmall = R"(# two assets, one relation
seed = 7
replicates = 3
T = 300
model.beta = [[1], [0.5]]
model.alpha_adj = [[0.1], [-0.3]]
model.sigma = 1
noise.stable.a = 1.5
tau.modulus = 10
chain.burnin = 50
chain.draws = 100
estimators = ["johansen", "gaussian-bayes", "gibbs-exact"]
)";

}  // namespace

TEST_CASE("config parsing") {
  const Config c = Config::parse(kSmall);
  CHECK(c.get<int>("T", 0) == 300);
  CHECK(c.at("model.beta").is_array());
  CHECK(c.get<double>("noise.stable.a", 0) == 1.5);
  CHECK(Config::parse("name = hello world").get<std::string>("name", "") == "hello world");
  CHECK(Config::parse(kSmall).hash() == c.hash());
  CHECK(Config::parse(std::string(kSmall) + "\n# trailing comment\n").hash() == c.hash());
  CHECK(Config::from_json(json{{"config", c.echo()}}).hash() == c.hash());

  CHECK_THROWS_AS(Config::parse("novalue"), ValidationError);
  CHECK_THROWS_AS(Config::parse("a = 1\na = 2"), ValidationError);
  CHECK_THROWS_AS(c.get<int>("model.beta", 0), ValidationError);
  CHECK_THROWS_AS(c.at("missing"), ValidationError);

  SUBCASE("resolved settings") {
    const ExperimentConfig ec = ExperimentConfig::from(c);
    CHECK(ec.seed == 7);
    CHECK(ec.model.sigma.isApprox(MatrixXd::Identity(2, 2)));
    REQUIRE(ec.stable.size() == 2);
    CHECK(ec.stable[1].a == 1.5);
    CHECK(ec.tau.kind == TauSchedule::Kind::Modulus);
    CHECK(ec.estimators.size() == 3);
    CHECK(ec.priors.a_mat.rows() == 2);
  }
  SUBCASE("full protocol") {
    Config f = c;
    f.set("full_protocol", true);
    const ExperimentConfig ec = ExperimentConfig::from(f);
    CHECK(ec.chain.burnin == 10000);
    CHECK(ec.chain.draws == 20000);
    CHECK(ec.replicates == 20);
  }
  SUBCASE("rejections") {
    Config u = c;
    u.set("chain.burn", 5);
    CHECK_THROWS_WITH_AS(ExperimentConfig::from(u), doctest::Contains("chain.burn"), ValidationError);
    CHECK_THROWS_AS(ExperimentConfig::from(Config::parse("T = 100")), ValidationError);
    Config e = c;
    e.set("estimators", "mle");
    CHECK_THROWS_AS(ExperimentConfig::from(e), ValidationError);
    Config k = c;
    k.set("tau.kind", "weekly");
    CHECK_THROWS_AS(ExperimentConfig::from(k), ValidationError);
  }
}

TEST_CASE("series CSV round trip") {
  TempDir dir("csv");
  Rng rng(3);
  const SeriesData s = simulate_cvar(testsupport::pair_params(), std::vector<StableParams>(2, {1.5, 0.3, 1, 0}),
                                     TauSchedule::every(7), 50, rng);
  write_series_csv(dir.path / "a.csv", s);
  const SeriesData back = read_series_csv(dir.path / "a.csv");
  CHECK(back.prices == s.prices);
  CHECK(back.tau_idx == s.tau_idx);
  write_series_csv(dir.path / "b.csv", back);
  CHECK(file_hash(dir.path / "a.csv") == file_hash(dir.path / "b.csv"));

  write_text(dir.path / "bad.csv", "timestamp,x1,x2,is_boundary\n1,0.5,abc,0\n");
  CHECK_THROWS_AS(read_series_csv(dir.path / "bad.csv"), ValidationError);
  write_text(dir.path / "bad2.csv", "timestamp,x1,is_boundary\n1,0.5,2\n");
  CHECK_THROWS_AS(read_series_csv(dir.path / "bad2.csv"), ValidationError);
  CHECK_THROWS_AS(read_series_csv(dir.path / "missing.csv"), IoError);
}

TEST_CASE("report statistics") {
  std::vector<double> v(100);
  for (int i = 0; i < 100; ++i) v[static_cast<std::size_t>(i)] = i % 10;
  v.push_back(1e6);
  v.push_back(NAN);
  const Dispersion d = dispersion(v);
  CHECK(d.count == 101);
  CHECK(d.trimmed_count == 100);
  CHECK(d.trimmed_mean == doctest::Approx(4.5));
  const Histogram h = histogram({0.0, 0.5, 1.0, 5.0}, 0.0, 1.0, 2);
  CHECK(h.counts == std::vector<int>{1, 2});

  SeriesData s;
  s.prices = MatrixXd(5, 1);
  s.prices << 1, 2, 3, 4, 100;
  const Normalisation nm = normalise_series(s);
  CHECK(nm.median[0] == 3.0);
  CHECK(s.prices(2, 0) == 0.0);
  SeriesData long_s;
  long_s.prices = MatrixXd::Zero(25, 1);
  long_s.tau_idx = {3, 12, 20};
  const auto parts = split_batches(long_s, 10);
  REQUIRE(parts.size() == 2);
  CHECK(parts[1].tau_idx == std::vector<int>{2});
}

TEST_CASE("parallel_for reports the failing replicate") {
  std::vector<int> hit(8, 0);
  parallel_for(8, 3, [&](int i) { hit[static_cast<std::size_t>(i)] = 1; });
  CHECK(std::count(hit.begin(), hit.end(), 1) == 8);
  CHECK_THROWS_WITH_AS(parallel_for(4, 2,
                                    [](int i) {
                                      if (i == 2) throw ValidationError("boom");
                                    }),
                       "replicate 2: boom", ValidationError);
}

TEST_CASE("seeds are stream separated") {
  CHECK(replicate_seed(1, 0, 0) != replicate_seed(1, 0, 2));
  CHECK(replicate_seed(1, 0, 0) != replicate_seed(1, 1, 0));
  CHECK(replicate_seed(1, 5, 3) == replicate_seed(1, 5, 3));
}

TEST_CASE("simulate command") {
  TempDir dir("sim");
  const Config cfg = Config::parse(kSmall);
  RunOptions opt;
  opt.out = dir.path;
  const json m = cmd_simulate(cfg, opt);
  REQUIRE(m["replicates"].size() == 3);
  CHECK(m["config_hash"] == cfg.hash());
  CHECK(m["boundary_rows_one_based"].front() == 10);
  const std::string h0 = m["replicates"][0]["hash"];
  CHECK(file_hash(dir.path / "rep_0000.csv") == h0);

  SUBCASE("reruns are byte identical, also with threads") {
    TempDir again("sim2");
    RunOptions o2;
    o2.out = again.path;
    o2.threads = 3;
    cmd_simulate(cfg, o2);
    CHECK(read_text(dir.path / "manifest.json") == read_text(again.path / "manifest.json"));
    CHECK(read_text(dir.path / "rep_0002.csv") == read_text(again.path / "rep_0002.csv"));
  }
  SUBCASE("one replicate regenerates from the manifest") {
    fs::remove(dir.path / "rep_0001.csv");
    RunOptions o2 = opt;
    o2.only = 1;
    const json row = cmd_simulate(cfg, o2);
    CHECK(row["hash"] == m["replicates"][1]["hash"]);
    Config other = cfg;
    other.set("T", 301);
    CHECK_THROWS_AS(cmd_simulate(other, o2), ValidationError);
    o2.only = 3;
    CHECK_THROWS_AS(cmd_simulate(cfg, o2), ValidationError);
  }
  SUBCASE("modified data is refused") {
    std::ofstream(dir.path / "rep_0000.csv", std::ios::app) << "\n";
    RunOptions o2;
    o2.out = dir.path;
    o2.inputs = {dir.path / "rep_0000.csv"};
    Config c2 = cfg;
    c2.set("estimators", "johansen");
    CHECK_THROWS_WITH_AS(cmd_estimate(c2, o2), doctest::Contains("hash mismatch"), ValidationError);
  }
  SUBCASE("zero replicates") {
    Config z = cfg;
    z.set("replicates", 0);
    CHECK_THROWS_AS(cmd_simulate(z, opt), ValidationError);
  }
}

TEST_CASE("estimate command") {
  TempDir dir("est");
  const Config cfg = Config::parse(kSmall);
  RunOptions opt;
  opt.out = dir.path;
  const json out = cmd_estimate(cfg, opt);
  CHECK(out["replicates"] == 3);
  const json& est = out["estimators"];

  SUBCASE("johansen has point estimates only") {
    const json& j = est["johansen"];
    CHECK_FALSE(j.contains("ave_acceptance"));
    CHECK(j["parameters"][0]["name"] == "beta[2,1]");
    CHECK(j["parameters"][0]["ave_stdev"].is_null());
    CHECK_FALSE(j["replicates"][0].contains("trace"));
  }

  SUBCASE("averages agree with the trace files") {
    for (const char* name : {"gaussian-bayes", "gibbs-exact"}) {
      const json& e = est[name];
      std::map<std::string, double> sum;
      for (const auto& row : e["replicates"]) {
        const fs::path tf = dir.path / row["trace"].get<std::string>();
        CHECK(file_hash(tf) == row["trace_hash"]);
        for (const auto& [k, v] : trace_csv_means(tf)) sum[k] += v / 3.0;
      }
      for (const auto& p : e["parameters"]) {
        const std::string nm = p["name"];
        CHECK(p["ave_mmse"].get<double>() == doctest::Approx(sum.at(nm)).epsilon(1e-12));
      }
      CHECK(e["ave_acceptance"]["sigma"] == 1.0);
    }
    CHECK(est["gibbs-exact"]["parameters"].size() == est["gaussian-bayes"]["parameters"].size() + 2);
  }

  SUBCASE("reruns are byte identical") {
    TempDir again("est2");
    RunOptions o2;
    o2.out = again.path;
    o2.threads = 2;
    cmd_estimate(cfg, o2);
    CHECK(read_text(dir.path / "estimate.json") == read_text(again.path / "estimate.json"));
    CHECK(read_text(dir.path / "traces/trace_gibbs-exact_rep_0001.csv") ==
          read_text(again.path / "traces/trace_gibbs-exact_rep_0001.csv"));
  }

  SUBCASE("skewed laws are refused by the exact sampler") {
    Config s = cfg;
    s.set("noise.stable.b", 0.5);
    CHECK_THROWS_AS(cmd_estimate(s, opt), ValidationError);
  }
}

TEST_CASE("fit-stable command") {
  TempDir dir("fit");
  Config cfg = Config::parse(kSmall);
  cfg.set("replicates", 1);
  cfg.set("T", 3000);
  cfg.set("fit.bootstrap", 40);
  RunOptions opt;
  opt.out = dir.path;
  cmd_simulate(cfg, opt);
  opt.inputs = {dir.path / "rep_0000.csv"};
  const json out = cmd_fit_stable(cfg, opt);
  const json& a = out["files"][0]["assets"][0];
  CHECK(a["n_points"] == 300);
  CHECK(a["params"]["a"].get<double>() == doctest::Approx(1.5).epsilon(0.2));
  CHECK(a["ci95"]["a"][0].get<double>() < a["ci95"]["a"][1].get<double>());
  CHECK(fs::exists(dir.path / "fit_stable.json"));

  Config sparse = cfg;
  sparse.set("T", 50);
  TempDir d2("fit2");
  RunOptions o2;
  o2.out = d2.path;
  cmd_simulate(sparse, o2);
  o2.inputs = {d2.path / "rep_0000.csv"};
  CHECK_THROWS_AS(cmd_fit_stable(sparse, o2), ValidationError);
}

TEST_CASE("bias-study command") {
  TempDir dir("bias");
  Config cfg = Config::parse(kSmall);
  cfg.set("replicates", 4);
  RunOptions opt;
  opt.out = dir.path;
  const json out = cmd_bias_study(cfg, opt);
  CHECK(out["truth"] == 0.5);
  const json& j = out["results"]["johansen"];
  CHECK(j["clean"]["count"] == 4);
  CHECK(j["contaminated"]["count"] == 4);
  CHECK(j["dispersion_ratio"].is_number());
  CHECK(out["results"].contains("gaussian-bayes"));
  CHECK(fs::exists(dir.path / "bias_study.csv"));

  Config none = cfg;
  none.set("estimators", "abc");
  CHECK_THROWS_AS(cmd_bias_study(none, opt), ValidationError);
}
