#ifndef LDL_METRICS_HPP
#define LDL_METRICS_HPP

#include <array>
#include <cmath>
#include <cstddef>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "ldl/errors.hpp"
#include "ldl/format.hpp"
#include "ldl/tensor.hpp"

namespace ldl {

inline void check_pair(std::span<const double> p, std::span<const double> q,
                       const char* name) {
  if (p.size() != q.size())
    throw dim_error(std::string(name) + ": length mismatch " +
                    std::to_string(p.size()) + " vs " +
                    std::to_string(q.size()));
}

/// max_j |p_j - q_j|
inline double chebyshev(std::span<const double> p, std::span<const double> q) {
  check_pair(p, q, "chebyshev");
  double m = 0.0;
  for (std::size_t j = 0; j < p.size(); ++j)
    m = std::max(m, std::abs(p[j] - q[j]));
  return m;
}

/// sqrt(sum_j (p_j - q_j)^2 / (p_j + q_j)^2), 0/0 terms count as 0
inline double clark(std::span<const double> p, std::span<const double> q) {
  check_pair(p, q, "clark");
  double acc = 0.0;
  for (std::size_t j = 0; j < p.size(); ++j) {
    const double s = p[j] + q[j];
    if (s == 0.0) continue;
    const double r = (p[j] - q[j]) / s;
    acc += r * r;
  }
  return std::sqrt(acc);
}

/// sum_j |p_j - q_j| / (p_j + q_j), 0/0 terms count as 0
inline double canberra(std::span<const double> p, std::span<const double> q) {
  check_pair(p, q, "canberra");
  double acc = 0.0;
  for (std::size_t j = 0; j < p.size(); ++j) {
    const double s = p[j] + q[j];
    if (s == 0.0) continue;
    acc += std::abs(p[j] - q[j]) / s;
  }
  return acc;
}

/// sum_j p_j ln(p_j / q_j), natural log, 0 ln(0/q) := 0
inline double kl_divergence(std::span<const double> p,
                            std::span<const double> q) {
  check_pair(p, q, "kl_divergence");
  double acc = 0.0;
  for (std::size_t j = 0; j < p.size(); ++j) {
    if (p[j] == 0.0) continue;
    if (!(q[j] > 0.0))
      throw contract_error("kl_divergence: q must be positive where p > 0");
    acc += p[j] * std::log(p[j] / q[j]);
  }
  return acc;
}

/// sum p_j q_j / (||p|| ||q||)
inline double cosine(std::span<const double> p, std::span<const double> q) {
  check_pair(p, q, "cosine");
  double dot = 0.0, np = 0.0, nq = 0.0;
  for (std::size_t j = 0; j < p.size(); ++j) {
    dot += p[j] * q[j];
    np += p[j] * p[j];
    nq += q[j] * q[j];
  }
  return dot / (std::sqrt(np) * std::sqrt(nq));
}

/// sum_j min(p_j, q_j)
inline double intersection(std::span<const double> p,
                           std::span<const double> q) {
  check_pair(p, q, "intersection");
  double acc = 0.0;
  for (std::size_t j = 0; j < p.size(); ++j) acc += std::min(p[j], q[j]);
  return acc;
}

inline constexpr std::size_t kMetricCount = 6;

inline const std::array<const char*, kMetricCount>& metric_names() {
  static const std::array<const char*, kMetricCount> names = {
      "chebyshev", "clark", "canberra", "kl", "cosine", "intersection"};
  return names;
}

/// true when larger is better.
inline const std::array<bool, kMetricCount>& metric_ascending() {
  static const std::array<bool, kMetricCount> up = {false, false, false,
                                                    false, true,  true};
  return up;
}

using MetricValues = std::array<double, kMetricCount>;

inline MetricValues all_metrics(std::span<const double> pred,
                                std::span<const double> target) {
  return {chebyshev(target, pred), clark(target, pred),
          canberra(target, pred), kl_divergence(target, pred),
          cosine(target, pred),   intersection(target, pred)};
}

/// Per-metric aggregate over repeated evaluation runs (one entry per
/// fold x repeat), reported as mean with population std.
struct MetricsReport {
  std::vector<MetricValues> runs;

  void add(const MetricValues& v) { runs.push_back(v); }

  MetricValues mean() const {
    MetricValues m{};
    for (const auto& r : runs)
      for (std::size_t i = 0; i < kMetricCount; ++i) m[i] += r[i];
    for (double& v : m) v /= static_cast<double>(runs.size());
    return m;
  }

  MetricValues stddev() const {
    MetricValues m = mean(), s{};
    for (const auto& r : runs)
      for (std::size_t i = 0; i < kMetricCount; ++i) {
        const double d = r[i] - m[i];
        s[i] += d * d;
      }
    for (double& v : s) v = std::sqrt(v / static_cast<double>(runs.size()));
    return s;
  }

  /// CSV: metric,direction,mean,std
  void write_csv(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw error("cannot write " + path);
    out << "metric,direction,mean,std\n";
    const MetricValues m = mean(), s = stddev();
    for (std::size_t i = 0; i < kMetricCount; ++i)
      out << metric_names()[i] << ','
          << (metric_ascending()[i] ? "up" : "down") << ',' << fmt_g(m[i])
          << ',' << fmt_g(s[i]) << '\n';
  }
};

inline void validate_distribution_row(std::span<const double> row,
                                      std::size_t index, const char* what,
                                      double sum_tol = 1e-4) {
  double sum = 0.0;
  for (double v : row) {
    if (!std::isfinite(v) || v < 0.0)
      throw contract_error(std::string(what) + " row " +
                           std::to_string(index) + " is not a distribution");
    sum += v;
  }
  if (std::abs(sum - 1.0) > sum_tol)
    throw contract_error(std::string(what) + " row " + std::to_string(index) +
                         " sums to " + fmt_g(sum));
}

/// Six metrics averaged over m prediction/target row pairs, in fixed
/// index order so results are bit-reproducible.
inline MetricValues score_predictions(const Tensor& pred,
                                      const Tensor& target) {
  check_same_shape(pred, target, "score_predictions");
  if (pred.ndim() != 2) throw dim_error("score_predictions: want [m x c]");
  const std::size_t m = pred.extent(0), c = pred.extent(1);
  MetricValues acc{};
  for (std::size_t i = 0; i < m; ++i) {
    std::span<const double> p(pred.data() + i * c, c);
    std::span<const double> t(target.data() + i * c, c);
    validate_distribution_row(p, i, "pred");
    validate_distribution_row(t, i, "target");
    const MetricValues v = all_metrics(p, t);
    for (std::size_t k = 0; k < kMetricCount; ++k) acc[k] += v[k];
  }
  for (double& v : acc) v /= static_cast<double>(m);
  return acc;
}

}  // namespace ldl

#endif  // LDL_METRICS_HPP
