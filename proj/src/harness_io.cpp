#include <algorithm>
#include <atomic>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <exception>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "cvarstable/error.hpp"
#include "cvarstable/harness.hpp"

namespace cvarstable::harness {
namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::string strip_comment(const std::string& line) {
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"' && (i == 0 || line[i - 1] != '\\')) quoted = !quoted;
    if (line[i] == '#' && !quoted) return line.substr(0, i);
  }
  return line;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  bool quoted = false;
  for (char c : line) {
    if (c == '"') {
      quoted = !quoted;
    } else if (c == ',' && !quoted) {
      out.push_back(trim(cell));
      cell.clear();
    } else {
      cell += c;
    }
  }
  out.push_back(trim(cell));
  return out;
}

std::string fmt17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double parse_double(const std::string& s, const fs::path& p, std::size_t line) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ValidationError(p.string() + ":" + std::to_string(line) + ": not a number: '" + s + "'");
  }
}

}  // namespace

// ---------------------------------------------------------------- Config

Config Config::parse(const std::string& text) {
  Config cfg;
  std::istringstream in(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(strip_comment(line));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ValidationError("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string raw = trim(line.substr(eq + 1));
    if (key.empty()) throw ValidationError("config line " + std::to_string(lineno) + ": empty key");
    if (cfg.has(key)) throw ValidationError("config key '" + key + "' given twice");
    json value = json::parse(raw, nullptr, false);
    if (value.is_discarded()) value = raw;
    cfg.set(key, std::move(value));
  }
  return cfg;
}

Config Config::from_json(const json& obj) {
  if (!obj.is_object()) throw ValidationError("config JSON must be an object");
  const json& src = obj.contains("config") && obj["config"].is_object() ? obj["config"] : obj;
  Config cfg;
  for (auto it = src.begin(); it != src.end(); ++it) cfg.set(it.key(), it.value());
  return cfg;
}

Config Config::load(const fs::path& path) {
  const std::string text = read_text(path);
  const auto first = text.find_first_not_of(" \t\r\n");
  if (first != std::string::npos && text[first] == '{') {
    const json obj = json::parse(text, nullptr, false);
    if (obj.is_discarded()) throw ValidationError(path.string() + ": invalid JSON");
    return from_json(obj);
  }
  return parse(text);
}

const json& Config::at(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ValidationError("config key '" + key + "' is required");
  return it->second;
}

json Config::echo() const {
  json out = json::object();
  for (const auto& [k, v] : values_) out[k] = v;
  return out;
}

std::string Config::hash() const { return hex64(fnv1a(echo().dump())); }

void Config::throw_bad(const std::string& key, const std::string& why) {
  throw ValidationError("config key '" + key + "' has the wrong type: " + why);
}

// ---------------------------------------------------------------- hashing, files

std::uint64_t fnv1a(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016" PRIx64, v);
  return buf;
}

std::string read_text(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw IoError("cannot read " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& p, const std::string& text) {
  std::error_code ec;
  if (p.has_parent_path()) fs::create_directories(p.parent_path(), ec);
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + p.string());
  out << text;
  if (!out) throw IoError("failed writing " + p.string());
}

std::string file_hash(const fs::path& p) { return hex64(fnv1a(read_text(p))); }

void write_series_csv(const fs::path& p, const SeriesData& s) {
  std::ostringstream out;
  out << "timestamp";
  for (int i = 0; i < s.n(); ++i)
    out << ',' << (i < static_cast<int>(s.meta.assets.size()) ? s.meta.assets[static_cast<std::size_t>(i)] : "x" + std::to_string(i + 1));
  out << ",is_boundary\n";
  const auto mask = s.boundary_mask();
  for (int t = 0; t < s.length(); ++t) {
    out << (t < static_cast<int>(s.meta.timestamps.size()) ? s.meta.timestamps[static_cast<std::size_t>(t)] : std::to_string(t + 1));
    for (int i = 0; i < s.n(); ++i) out << ',' << fmt17(s.prices(t, i));
    out << ',' << (mask[static_cast<std::size_t>(t)] ? 1 : 0) << '\n';
  }
  write_text(p, out.str());
}

SeriesData read_series_csv(const fs::path& p) {
  std::istringstream in(read_text(p));
  std::string line;
  if (!std::getline(in, line)) throw ValidationError(p.string() + ": empty file");
  const auto head = split_csv_line(trim(line));
  if (head.size() < 3 || head.front() != "timestamp" || head.back() != "is_boundary")
    throw ValidationError(p.string() + ": header must be timestamp,<assets...>,is_boundary");
  const std::size_t n = head.size() - 2;
  SeriesData s;
  s.meta.assets.assign(head.begin() + 1, head.end() - 1);
  s.meta.interval = "file";
  std::vector<std::vector<double>> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty()) continue;
    const auto cells = split_csv_line(line);
    if (cells.size() != n + 2)
      throw ValidationError(p.string() + ":" + std::to_string(lineno) + ": expected " + std::to_string(n + 2) + " fields");
    s.meta.timestamps.push_back(cells[0]);
    std::vector<double> v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = parse_double(cells[i + 1], p, lineno);
    rows.push_back(std::move(v));
    const std::string& b = cells.back();
    if (b == "1") {
      s.tau_idx.push_back(static_cast<int>(rows.size()) - 1);
    } else if (b != "0") {
      throw ValidationError(p.string() + ":" + std::to_string(lineno) + ": is_boundary must be 0 or 1");
    }
  }
  if (rows.empty()) throw ValidationError(p.string() + ": no data rows");
  s.prices.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(n));
  for (std::size_t t = 0; t < rows.size(); ++t)
    for (std::size_t i = 0; i < n; ++i) s.prices(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(i)) = rows[t][i];
  s.validate();
  return s;
}

void write_trace_csv(const fs::path& p, const ChainTrace& t) {
  std::ostringstream out;
  const auto cols = trace_columns(t);
  const bool abc = !t.distance.empty();
  out << "draw";
  // Parameter names such as B[1,2] carry commas.
  for (const auto& c : cols) out << ",\"" << c << '"';
  if (abc) out << ",distance,epsilon";
  out << '\n';
  for (std::size_t i = 0; i < t.states.size(); ++i) {
    out << i;
    for (double v : flatten(t.states[i])) out << ',' << fmt17(v);
    if (abc) out << ',' << fmt17(t.distance[i]) << ',' << fmt17(t.epsilon[i]);
    out << '\n';
  }
  write_text(p, out.str());
}

std::map<std::string, double> trace_csv_means(const fs::path& p) {
  std::istringstream in(read_text(p));
  std::string line;
  if (!std::getline(in, line)) throw ValidationError(p.string() + ": empty trace");
  const auto head = split_csv_line(trim(line));
  std::vector<double> sum(head.size(), 0.0);
  std::size_t rows = 0, lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    const auto cells = split_csv_line(trim(line));
    if (cells.size() != head.size()) throw ValidationError(p.string() + ": ragged trace row");
    for (std::size_t i = 0; i < cells.size(); ++i) sum[i] += parse_double(cells[i], p, lineno);
    ++rows;
  }
  std::map<std::string, double> out;
  for (std::size_t i = 0; i < head.size(); ++i) out[head[i]] = rows ? sum[i] / static_cast<double>(rows) : 0.0;
  return out;
}

Normalisation normalise_series(SeriesData& s) {
  Normalisation nm;
  for (int i = 0; i < s.n(); ++i) {
    std::vector<double> col(s.prices.col(i).data(), s.prices.col(i).data() + s.length());
    std::sort(col.begin(), col.end());
    const double med = sample_quantile(col, 0.5);
    const double mean = s.prices.col(i).mean();
    const double var = s.length() > 1 ? (s.prices.col(i).array() - mean).square().sum() / (s.length() - 1) : 0.0;
    const double sd = std::sqrt(var);
    if (!(sd > 0)) throw NumericError("cannot normalise a constant series (asset " + std::to_string(i + 1) + ")");
    s.prices.col(i) = (s.prices.col(i).array() - med) / sd;
    nm.median.push_back(med);
    nm.sd.push_back(sd);
  }
  return nm;
}

std::vector<SeriesData> split_batches(const SeriesData& s, int rows) {
  if (rows < 3) throw ValidationError("batch_rows must be >= 3");
  std::vector<SeriesData> out;
  for (int start = 0; start + rows <= s.length(); start += rows) {
    SeriesData b;
    b.prices = s.prices.middleRows(start, rows);
    for (int t : s.tau_idx)
      if (t >= start && t < start + rows) b.tau_idx.push_back(t - start);
    b.meta = s.meta;
    b.meta.timestamps.clear();
    for (int t = start; t < start + rows && t < static_cast<int>(s.meta.timestamps.size()); ++t)
      b.meta.timestamps.push_back(s.meta.timestamps[static_cast<std::size_t>(t)]);
    out.push_back(std::move(b));
  }
  if (out.empty()) throw ValidationError("series shorter than one batch");
  return out;
}

// ---------------------------------------------------------------- statistics

Dispersion dispersion(const std::vector<double>& v, double k) {
  std::vector<double> x;
  for (double d : v)
    if (std::isfinite(d)) x.push_back(d);
  Dispersion out;
  auto moments = [](const std::vector<double>& a, double& mean, double& sd) {
    mean = sd = 0.0;
    if (a.empty()) return;
    for (double d : a) mean += d;
    mean /= static_cast<double>(a.size());
    if (a.size() < 2) return;
    double ss = 0.0;
    for (double d : a) ss += (d - mean) * (d - mean);
    sd = std::sqrt(ss / static_cast<double>(a.size() - 1));
  };
  out.count = static_cast<int>(x.size());
  moments(x, out.mean, out.sd);
  if (x.empty()) return out;
  std::vector<double> s = x;
  std::sort(s.begin(), s.end());
  const double q1 = sample_quantile(s, 0.25), q3 = sample_quantile(s, 0.75);
  const double iqr = q3 - q1;
  std::vector<double> kept;
  for (double d : x)
    if (d >= q1 - k * iqr && d <= q3 + k * iqr) kept.push_back(d);
  out.trimmed_count = static_cast<int>(kept.size());
  moments(kept, out.trimmed_mean, out.trimmed_sd);
  return out;
}

Histogram histogram(const std::vector<double>& v, double lo, double hi, int bins) {
  if (bins < 1) throw ValidationError("histogram needs at least one bin");
  Histogram h{lo, hi, std::vector<int>(static_cast<std::size_t>(bins), 0)};
  const double width = hi > lo ? (hi - lo) / bins : 1.0;
  for (double d : v) {
    if (!std::isfinite(d) || d < lo || d > hi) continue;
    auto b = static_cast<int>((d - lo) / width);
    b = std::clamp(b, 0, bins - 1);
    ++h.counts[static_cast<std::size_t>(b)];
  }
  return h;
}

// ---------------------------------------------------------------- workers

void parallel_for(int n, int threads, const std::function<void(int)>& fn) {
  if (n <= 0) return;
  const int workers = std::clamp(threads, 1, n);
  std::vector<std::exception_ptr> errors(static_cast<std::size_t>(n));
  std::atomic<int> next{0};
  auto work = [&] {
    for (int i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        errors[static_cast<std::size_t>(i)] = std::current_exception();
      }
    }
  };
  if (workers == 1) {
    work();
  } else {
    std::vector<std::thread> pool;
    for (int w = 0; w < workers; ++w) pool.emplace_back(work);
    for (auto& t : pool) t.join();
  }
  for (int i = 0; i < n; ++i) {
    if (!errors[static_cast<std::size_t>(i)]) continue;
    const std::string prefix = "replicate " + std::to_string(i) + ": ";
    try {
      std::rethrow_exception(errors[static_cast<std::size_t>(i)]);
    } catch (const DomainError& e) {
      throw DomainError(prefix + e.what());
    } catch (const ShapeError& e) {
      throw ShapeError(prefix + e.what());
    } catch (const ValidationError& e) {
      throw ValidationError(prefix + e.what());
    } catch (const IoError& e) {
      throw IoError(prefix + e.what());
    } catch (const Error& e) {
      throw NumericError(prefix + e.what());
    } catch (const std::exception& e) {
      throw NumericError(prefix + e.what());
    }
  }
}

std::uint64_t replicate_seed(std::uint64_t master, int replicate, int stream) {
  return derive_seed(master, static_cast<std::uint64_t>(replicate), static_cast<std::uint64_t>(stream));
}

}  // namespace cvarstable::harness
