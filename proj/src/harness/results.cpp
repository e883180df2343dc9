#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>
#include <tuple>

#include "kdbd/error.hpp"
#include "kdbd/harness.hpp"

namespace kdbd::harness {
namespace {

bool same_double(double a, double b) { return (std::isnan(a) && std::isnan(b)) || a == b; }

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream ss(line);
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

double parse_double(const std::string& s, std::size_t line) {
  try {
    std::size_t used = 0;
    const double v = std::stod(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw IoError("results csv line " + std::to_string(line) + ": bad number '" + s + "'");
  }
}

std::uint64_t parse_u64(const std::string& s, std::size_t line) {
  try {
    std::size_t used = 0;
    const auto v = std::stoull(s, &used);
    if (used != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw IoError("results csv line " + std::to_string(line) + ": bad integer '" + s + "'");
  }
}

struct Agg {
  std::vector<double> acc, trig, manip;
  std::size_t failed = 0;
};

std::pair<double, double> mean_std(const std::vector<double>& v) {
  if (v.empty()) return {std::nan(""), std::nan("")};
  double m = 0.0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  double var = 0.0;
  for (double x : v) var += (x - m) * (x - m);
  return {m, std::sqrt(var / static_cast<double>(v.size()))};
}

std::string cell(const std::vector<double>& v) {
  const auto [m, s] = mean_std(v);
  if (std::isnan(m)) return "-";
  std::ostringstream os;
  os << std::fixed << std::setprecision(3) << m << " +- " << s;
  return os.str();
}

}  // namespace

bool ResultRow::failed() const { return run_id.rfind("FAILED:", 0) == 0; }

bool ResultRow::same_as(const ResultRow& o, bool ignore_wall) const {
  return run_id == o.run_id && axis == o.axis && same_double(value, o.value) && mode == o.mode && seed == o.seed &&
         same_double(acc_mean, o.acc_mean) && same_double(acc_std, o.acc_std) &&
         same_double(asr_trigger_mean, o.asr_trigger_mean) && same_double(asr_trigger_std, o.asr_trigger_std) &&
         same_double(asr_manip_mean, o.asr_manip_mean) && same_double(asr_manip_std, o.asr_manip_std) &&
         n_epochs == o.n_epochs && (ignore_wall || same_double(wall_s, o.wall_s));
}

void write_results_csv(std::span<const ResultRow> rows, const std::filesystem::path& path) {
  if (rows.empty()) throw ConfigError("write_results_csv: no rows");
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write results csv: " + path.string());
  out << kResultsHeader << '\n';
  out.precision(17);
  for (const auto& r : rows) {
    out << r.run_id << ',' << r.axis << ',' << r.value << ',' << r.mode << ',' << r.seed << ',' << r.acc_mean << ','
        << r.acc_std << ',' << r.asr_trigger_mean << ',' << r.asr_trigger_std << ',' << r.asr_manip_mean << ','
        << r.asr_manip_std << ',' << r.n_epochs << ',' << r.wall_s << '\n';
  }
  if (!out) throw IoError("failed writing results csv: " + path.string());
}

std::vector<ResultRow> parse_results_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kResultsHeader) throw IoError("results csv: header mismatch");
  std::vector<ResultRow> rows;
  std::size_t n = 1;
  while (std::getline(in, line)) {
    ++n;
    if (line.empty()) continue;
    const auto f = split_csv(line);
    if (f.size() != 13) throw IoError("results csv line " + std::to_string(n) + ": expected 13 fields");
    ResultRow r;
    r.run_id = f[0];
    r.axis = f[1];
    r.value = parse_double(f[2], n);
    r.mode = f[3];
    r.seed = parse_u64(f[4], n);
    r.acc_mean = parse_double(f[5], n);
    r.acc_std = parse_double(f[6], n);
    r.asr_trigger_mean = parse_double(f[7], n);
    r.asr_trigger_std = parse_double(f[8], n);
    r.asr_manip_mean = parse_double(f[9], n);
    r.asr_manip_std = parse_double(f[10], n);
    r.n_epochs = parse_u64(f[11], n);
    r.wall_s = parse_double(f[12], n);
    rows.push_back(std::move(r));
  }
  return rows;
}

std::vector<ResultRow> read_results_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open results csv: " + path.string());
  return parse_results_csv(in);
}

std::string emit_summary(std::span<const ResultRow> rows) {
  std::map<std::tuple<std::string, double, std::string>, Agg> groups;
  for (const auto& r : rows) {
    auto& g = groups[{r.axis, r.value, r.mode}];
    if (r.failed()) {
      ++g.failed;
      continue;
    }
    g.acc.push_back(r.acc_mean);
    if (!std::isnan(r.asr_trigger_mean)) g.trig.push_back(r.asr_trigger_mean);
    if (!std::isnan(r.asr_manip_mean)) g.manip.push_back(r.asr_manip_mean);
  }
  std::ostringstream os;
  std::string axis;
  for (const auto& [key, g] : groups) {
    const auto& [ax, value, mode] = key;
    if (ax != axis) {
      axis = ax;
      os << "\n== " << axis << " ==\n"
         << std::left << std::setw(8) << "value" << std::setw(15) << "mode" << std::setw(6) << "runs"
         << std::setw(18) << "acc" << std::setw(18) << "asr_trigger" << std::setw(18) << "asr_manip"
         << "failed\n";
    }
    os << std::left << std::setw(8) << value << std::setw(15) << mode << std::setw(6) << g.acc.size()
       << std::setw(18) << cell(g.acc) << std::setw(18) << cell(g.trig) << std::setw(18) << cell(g.manip)
       << g.failed << '\n';
  }
  return os.str();
}

}  // namespace kdbd::harness
