#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "repdecode/error.hpp"
#include "repdecode/rng.hpp"

namespace repdecode::stats {

namespace detail {

// Modified Lentz evaluation of the incomplete-beta continued fraction.
inline double beta_continued_fraction(double a, double b, double x) {
  constexpr int max_iter = 10000;
  constexpr double eps = 1e-16;
  constexpr double tiny = 1e-300;
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::fabs(d) < tiny) d = tiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= max_iter; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < tiny) d = tiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < tiny) c = tiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < tiny) d = tiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < eps) return h;
  }
  throw NumericalError("incomplete beta: continued fraction did not converge");
}

}  // namespace detail

// Regularized incomplete beta I_x(a, b).
inline double incomplete_beta(double a, double b, double x) {
  if (!(a > 0.0) || !(b > 0.0)) throw NumericalError("incomplete_beta: a and b must be positive");
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double log_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
  if (x < (a + 1.0) / (a + b + 2.0)) return std::exp(log_front) * detail::beta_continued_fraction(a, b, x) / a;
  return 1.0 - std::exp(log_front) * detail::beta_continued_fraction(b, a, 1.0 - x) / b;
}

inline double student_t_cdf(double t, double df) {
  if (!(df > 0.0)) throw NumericalError("student_t_cdf: df must be positive");
  if (std::isinf(t)) return t > 0 ? 1.0 : 0.0;
  const double tail = 0.5 * incomplete_beta(0.5 * df, 0.5, df / (df + t * t));
  return t > 0 ? 1.0 - tail : tail;
}

// P(|T| >= |t|).
inline double student_t_two_sided_p(double t, double df) {
  if (!(df > 0.0)) throw NumericalError("student_t: df must be positive");
  if (std::isinf(t)) return 0.0;
  return incomplete_beta(0.5 * df, 0.5, df / (df + t * t));
}

inline double mean(const std::vector<double>& v) {
  if (v.empty()) throw DataError("mean of empty sample");
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

inline double sample_variance(const std::vector<double>& v) {
  if (v.size() < 2) throw DataError("variance needs at least 2 values");
  const double m = mean(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return ss / static_cast<double>(v.size() - 1);
}

struct PairedSample {
  std::vector<double> baseline;
  std::vector<double> treatment;
};

struct TTestResult {
  double t = 0.0;
  std::size_t df = 0;
  double p = 1.0;
  double mean_difference = 0.0;
  std::size_t n = 0;

  bool significant(double alpha) const { return p < alpha; }
};

// Differences are treatment - baseline.
inline TTestResult paired_t(const PairedSample& s) {
  if (s.baseline.size() != s.treatment.size())
    throw DataError("paired_t: samples differ in length (" + std::to_string(s.baseline.size()) + " vs " +
                    std::to_string(s.treatment.size()) + ")");
  if (s.baseline.size() < 2) throw DataError("paired_t: need at least 2 pairs");
  std::vector<double> diff(s.baseline.size());
  for (std::size_t i = 0; i < diff.size(); ++i) diff[i] = s.treatment[i] - s.baseline[i];

  TTestResult r;
  r.n = diff.size();
  r.df = r.n - 1;
  r.mean_difference = mean(diff);
  const double sd = std::sqrt(sample_variance(diff));
  const double scale = std::max({std::fabs(r.mean_difference), std::numeric_limits<double>::min()});
  if (!(sd > 1e-13 * scale)) throw NumericalError("paired_t: differences have zero variance");
  r.t = r.mean_difference / (sd / std::sqrt(static_cast<double>(r.n)));
  r.p = student_t_two_sided_p(r.t, static_cast<double>(r.df));
  return r;
}

// Linear interpolation between order statistics (sorted input).
inline double quantile_sorted(const std::vector<double>& sorted, double q) {
  if (sorted.empty()) throw DataError("quantile of empty sample");
  const double pos = q * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
};

inline constexpr std::uint64_t kBootstrapStream = 0xB007;

// Percentile bootstrap of the mean. Resample r draws from its own generator
// seeded by (seed, r), so resamples are independent of evaluation order.
inline Interval bootstrap_ci(const std::vector<double>& values, double level, std::size_t resamples,
                             std::uint64_t seed) {
  if (values.empty()) throw DataError("bootstrap_ci: empty sample");
  if (!(level > 0.0 && level < 1.0)) throw UsageError("bootstrap_ci: level must be in (0, 1)");
  if (resamples < 1) throw UsageError("bootstrap_ci: need at least one resample");
  const std::size_t n = values.size();
  std::vector<double> means(resamples);
  for (std::size_t r = 0; r < resamples; ++r) {
    Rng rng(derive_seed(seed, kBootstrapStream, r));
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) sum += values[static_cast<std::size_t>(rng.uniform_below(n))];
    means[r] = sum / static_cast<double>(n);
  }
  std::sort(means.begin(), means.end());
  const double tail = (1.0 - level) / 2.0;
  return {quantile_sorted(means, tail), quantile_sorted(means, 1.0 - tail)};
}

}  // namespace repdecode::stats
