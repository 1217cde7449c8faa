#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "data_io.hpp"

namespace vfb {

inline double quantile(std::vector<double> v, double p) {
  if (v.empty()) throw std::invalid_argument("quantile: empty sample");
  std::sort(v.begin(), v.end());
  const double h = (v.size() - 1) * p;
  const std::size_t lo = static_cast<std::size_t>(h);
  if (lo + 1 >= v.size()) return v.back();
  return v[lo] + (h - lo) * (v[lo + 1] - v[lo]);
}

struct SummaryRow {
  std::string parameter;
  double mean = 0.0, sd = 0.0, median = 0.0, ci_lo = 0.0, ci_hi = 0.0;
};

inline SummaryRow summarize_draws(const std::string& name, const std::vector<double>& draws) {
  SummaryRow r;
  r.parameter = name;
  const double n = static_cast<double>(draws.size());
  r.mean = std::accumulate(draws.begin(), draws.end(), 0.0) / n;
  double ss = 0.0;
  for (double x : draws) ss += (x - r.mean) * (x - r.mean);
  r.sd = n > 1 ? std::sqrt(ss / (n - 1)) : 0.0;
  r.median = quantile(draws, 0.5);
  r.ci_lo = quantile(draws, 0.025);
  r.ci_hi = quantile(draws, 0.975);
  return r;
}

/// Split-Rhat: each chain is halved and the standard between/within
/// variance ratio is computed across the resulting 2m sequences.
inline double split_rhat(const std::vector<std::vector<double>>& chains) {
  std::vector<std::vector<double>> halves;
  for (const auto& c : chains) {
    const std::size_t h = c.size() / 2;
    if (h < 2) throw std::invalid_argument("split_rhat: chains too short");
    halves.emplace_back(c.begin(), c.begin() + h);
    halves.emplace_back(c.begin() + h, c.begin() + 2 * h);
  }
  const std::size_t m = halves.size(), n = halves.front().size();
  std::vector<double> means(m);
  double grand = 0.0, W = 0.0;
  for (std::size_t j = 0; j < m; ++j) {
    means[j] = std::accumulate(halves[j].begin(), halves[j].end(), 0.0) / n;
    grand += means[j] / m;
    double ss = 0.0;
    for (double x : halves[j]) ss += (x - means[j]) * (x - means[j]);
    W += ss / (n - 1) / m;
  }
  double B = 0.0;
  for (double mj : means) B += (mj - grand) * (mj - grand) * n / (m - 1);
  if (W <= 0.0) return 1.0;  // constant chains
  const double var_plus = (n - 1.0) / n * W + B / n;
  return std::sqrt(var_plus / W);
}

inline void write_chain_csv(const std::string& path, const std::vector<std::string>& columns,
                            const std::vector<std::vector<double>>& rows) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  for (std::size_t i = 0; i < columns.size(); ++i) out << (i ? "," : "") << columns[i];
  out << "\n";
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < row.size(); ++i) out << (i ? "," : "") << format_double(row[i]);
    out << "\n";
  }
  if (!out) throw IoError("write failed: " + path);
}

inline std::pair<std::vector<std::string>, std::vector<std::vector<double>>> read_chain_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path);
  std::string line;
  if (!std::getline(in, line)) throw IoError(path + ": empty chain file");
  const auto cols = detail::split_csv(line);
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto f = detail::split_csv(line);
    std::vector<double> v(f.size());
    for (std::size_t i = 0; i < f.size(); ++i) v[i] = std::stod(f[i]);
    rows.push_back(std::move(v));
  }
  return {cols, rows};
}

inline void write_summary_csv(const std::string& path, const std::vector<SummaryRow>& rows) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << "parameter,mean,sd,median,ci2.5,ci97.5\n";
  for (const auto& r : rows)
    out << r.parameter << ',' << format_double(r.mean) << ',' << format_double(r.sd) << ',' << format_double(r.median)
        << ',' << format_double(r.ci_lo) << ',' << format_double(r.ci_hi) << "\n";
  if (!out) throw IoError("write failed: " + path);
}

}  // namespace vfb
