#include <cstdio>
#include <iostream>

#include <CLI11.hpp>

#include "cvarstable/error.hpp"
#include "cvarstable/harness.hpp"

namespace h = cvarstable::harness;

int main(int argc, char** argv) {
  CLI::App app{"Cointegrated VAR estimation under stable boundary noise"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  bool full = false;
  h::RunOptions opt;
  std::string out_dir = ".";
  int only = -1;
  std::vector<std::string> inputs;

  app.add_option("--config", config_path, "key = value config file (or a manifest/report JSON)")->required();
  app.add_option("--seed", seed, "override the config seed");
  app.add_option("--out", out_dir, "output directory");
  app.add_flag("--full-protocol", full, "long chains and 20 replicates");
  app.add_option("--threads", opt.threads, "worker threads")->check(CLI::PositiveNumber);

  auto* sim = app.add_subcommand("simulate", "simulate replicate series and a manifest");
  sim->add_option("--only", only, "regenerate one replicate id after checking the manifest");
  auto* fit = app.add_subcommand("fit-stable", "fit stable laws to boundary differences");
  fit->add_option("inputs", inputs, "series CSV files");
  app.add_subcommand("bias-study", "clean versus contaminated estimator dispersion");
  auto* est = app.add_subcommand("estimate", "run estimators on files or simulated replicates");
  est->add_option("inputs", inputs, "series CSV files");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    h::Config cfg = h::Config::load(config_path);
    if (seed) cfg.set("seed", *seed);
    if (full) cfg.set("full_protocol", true);
    if (!inputs.empty()) {
      h::json arr = h::json::array();
      for (const auto& s : inputs) arr.push_back(s);
      cfg.set("inputs", arr);
    }
    opt.out = out_dir;
    std::filesystem::create_directories(opt.out);
    if (only >= 0) opt.only = only;

    h::json report;
    if (*sim) report = h::cmd_simulate(cfg, opt);
    else if (*fit) report = h::cmd_fit_stable(cfg, opt);
    else if (app.got_subcommand("bias-study")) report = h::cmd_bias_study(cfg, opt);
    else report = h::cmd_estimate(cfg, opt);
    std::cout << "wrote " << opt.out.string() << " (config " << report.value("config_hash", "") << ")\n";
    return 0;
  } catch (const cvarstable::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return static_cast<int>(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}
