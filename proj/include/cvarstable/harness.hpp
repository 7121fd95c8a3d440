#pragma once

// Experiment harness: flat key/value configs, series CSV files, manifests with
// content hashes, replicate orchestration and JSON reports.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cvarstable/abc.hpp"
#include "cvarstable/cvar.hpp"
#include "cvarstable/gibbs.hpp"

namespace cvarstable::harness {

using json = nlohmann::ordered_json;
namespace fs = std::filesystem;

/// `key = value` lines; values are JSON when they parse as JSON, strings
/// otherwise. '#' starts a comment. A manifest or report JSON carrying a
/// "config" object is accepted too, so studies can be replayed from it.
class Config {
 public:
  static Config parse(const std::string& text);
  static Config load(const fs::path& path);
  static Config from_json(const json& obj);

  void set(const std::string& key, json value) { values_[key] = std::move(value); }
  bool has(const std::string& key) const { return values_.count(key) > 0; }
  const json& at(const std::string& key) const;

  template <class T>
  T get(const std::string& key, T fallback) const {
    auto it = values_.find(key);
    if (it == values_.end()) return fallback;
    try {
      return it->second.get<T>();
    } catch (const std::exception& e) {
      throw_bad(key, e.what());
    }
  }

  /// Sorted keys, so the echo and its hash are canonical.
  json echo() const;
  std::string hash() const;

 private:
  [[noreturn]] static void throw_bad(const std::string& key, const std::string& why);
  std::map<std::string, json> values_;
};

/// Fully resolved study settings.
struct ExperimentConfig {
  std::uint64_t seed = 0;
  int replicates = 10;
  int T = 500;
  CvarParams model;
  std::vector<StableParams> stable;
  TauSchedule tau;
  ChainConfig chain;
  AbcConfig abc;
  PriorSpec priors;  // sized for the model
  std::vector<std::string> estimators;
  bool full_protocol = false;
  int fit_bootstrap = 200;
  bool normalise = false;
  int batch_rows = 0;
  int histogram_bins = 30;

  static ExperimentConfig from(const Config& cfg);
};

struct RunOptions {
  fs::path out = ".";
  int threads = 1;
  std::optional<int> only;          // simulate: regenerate one replicate
  std::vector<fs::path> inputs;     // series CSVs
};

// ---- hashing and files
std::uint64_t fnv1a(std::string_view bytes);
std::string hex64(std::uint64_t v);
std::string file_hash(const fs::path& p);
void write_text(const fs::path& p, const std::string& text);
std::string read_text(const fs::path& p);

void write_series_csv(const fs::path& p, const SeriesData& s);
SeriesData read_series_csv(const fs::path& p);
/// Rows of a chain, "%.17g", with distance/epsilon columns for ABC traces.
void write_trace_csv(const fs::path& p, const ChainTrace& t);
/// Column means of a trace CSV, by header name.
std::map<std::string, double> trace_csv_means(const fs::path& p);

/// Per-asset translation by the median and scaling by the standard deviation.
struct Normalisation {
  std::vector<double> median, sd;
};
Normalisation normalise_series(SeriesData& s);
/// Consecutive batches of `rows` rows (a trailing short batch is dropped).
std::vector<SeriesData> split_batches(const SeriesData& s, int rows);

// ---- small statistics used in reports
struct Dispersion {
  int count = 0;
  double mean = 0, sd = 0;
  int trimmed_count = 0;
  double trimmed_mean = 0, trimmed_sd = 0;
};
/// Raw moments and moments after dropping values beyond `k` IQRs from the quartiles.
Dispersion dispersion(const std::vector<double>& v, double k = 5.0);
struct Histogram {
  double lo = 0, hi = 0;
  std::vector<int> counts;
};
Histogram histogram(const std::vector<double>& v, double lo, double hi, int bins);

/// Runs fn(i) for i in [0, n) on `threads` workers; the first failure is
/// rethrown after all workers join, prefixed with its replicate id.
void parallel_for(int n, int threads, const std::function<void(int)>& fn);

// ---- commands; each returns the JSON it wrote.
json cmd_simulate(const Config& cfg, const RunOptions& opt);
json cmd_fit_stable(const Config& cfg, const RunOptions& opt);
json cmd_bias_study(const Config& cfg, const RunOptions& opt);
json cmd_estimate(const Config& cfg, const RunOptions& opt);

/// Seeds: replicate data use stream 0, estimators their own stream.
std::uint64_t replicate_seed(std::uint64_t master, int replicate, int stream = 0);

}  // namespace cvarstable::harness
