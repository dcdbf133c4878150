#pragma once

#include <cmath>
#include <optional>
#include <span>
#include <vector>

#include "prutf/linop.hpp"
#include "prutf/stats.hpp"

namespace prutf {

struct StoppingConfig {
  double alpha = 0.05;
  std::optional<double> sigma;  // noise scale; estimated by MAD when absent
  double series_tol = 1e-14;
  int max_terms = 200;
  bool per_block = false;      // opt-in per-segment thresholds (see README caveats)
  std::size_t max_events = 0;  // 0 = no explicit bound beyond the 5n safety cap
};

// P(sup |G_0| >= x) = 2 sum_{i>=1} (-1)^{i+1} exp(-2 i^2 x^2 / s2).
// Truncated when a term drops below tol; if the cap is hit first, half of the next
// signed term is added: the alternating partial sums bracket the limit, so the
// midpoint stays accurate even in the slow-decay regime x -> 0.
inline double excursion_prob(double x, double s2, double tol = 1e-14, int max_terms = 200) {
  if (!(x >= 0.0)) throw InvalidInput("excursion_prob: x must be nonnegative");
  if (!(s2 > 0.0)) throw InvalidInput("excursion_prob: variance scale must be positive");
  if (x == 0.0) return 1.0;
  const double c = 2.0 * x * x / s2;
  double sum = 0.0;
  double sign = 1.0;
  int i = 1;
  for (; i <= max_terms; ++i) {
    const double term = std::exp(-c * static_cast<double>(i) * static_cast<double>(i));
    sum += sign * term;
    if (term < tol) return std::clamp(2.0 * sum, 0.0, 1.0);
    sign = -sign;
  }
  sum += 0.5 * sign * std::exp(-c * static_cast<double>(i) * static_cast<double>(i));
  return std::clamp(2.0 * sum, 0.0, 1.0);
}

// x_alpha solving sum (-1)^{i+1} exp(-2 i^2 x^2 / s2) = alpha/2, by bisection on
// [0, 10 sqrt(s2)] to 1e-10.
inline double threshold_x_alpha(double alpha, double s2, double tol = 1e-14, int max_terms = 200) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw InvalidInput("threshold_x_alpha: alpha not in (0,1)");
  if (!(s2 > 0.0)) throw InvalidInput("threshold_x_alpha: variance scale must be positive");
  double lo = 0.0;
  double hi = 10.0 * std::sqrt(s2);
  if (excursion_prob(hi, s2, tol, max_terms) > alpha)
    throw InvalidInput("threshold_x_alpha: bracket failure, alpha too small");
  while (hi - lo > 1e-10) {
    const double mid = 0.5 * (lo + hi);
    if (excursion_prob(mid, s2, tol, max_terms) > alpha)
      lo = mid;
    else
      hi = mid;
  }
  return 0.5 * (lo + hi);
}

// MAD noise-scale estimate from (r+1)-th differences. The stencil's squared norm is
// the central binomial C(2r+2, r+1), giving the sqrt(2) and sqrt(6) constants for
// r = 0, 1.
inline double estimate_sigma_mad(std::span<const double> y, int r) {
  if (y.size() < static_cast<std::size_t>(r) + 3)
    throw InvalidInput("estimate_sigma_mad: need n >= r + 3");
  const DifferenceOperator D(y.size(), r);
  const double med = median_abs(D.apply(y));
  if (med == 0.0)
    throw DegenerateScale(
        "MAD of differences is zero; supply sigma explicitly (--sigma) for this input");
  const double norm = std::sqrt(static_cast<double>(binomial(2 * r + 2, r + 1)));
  return med / (norm * normal_quantile(0.75));
}

// Threshold for one bridge of k interior coordinates with variance scale s2.
inline double stop_threshold(double sigma, double alpha, double s2, std::size_t k, int r,
                             double tol = 1e-14, int max_terms = 200) {
  const double xa = threshold_x_alpha(alpha, s2, tol, max_terms);
  return sigma * xa * std::pow(static_cast<double>(k) - static_cast<double>(r),
                               (2.0 * r + 1.0) / 2.0);
}

// Stopping decision on the interior stochastic process u_st = M y (zeros on A).
// Per-block form: every block's sup must clear its own threshold, matching the
// per-segment normalization of the Gaussian-bridge law. The global form tests the
// overall sup against a single threshold built from k = m - |A|.
inline bool should_stop_process(std::span<const double> u_st, const BlockedGram& G, int r,
                                double sigma, const StoppingConfig& cfg) {
  if (G.interior_count() <= static_cast<std::size_t>(r)) return true;
  if (cfg.per_block) {
    for (const auto& b : G.blocks()) {
      if (b.size <= static_cast<std::size_t>(r)) continue;
      double mx = 0.0;
      for (std::size_t i = b.start; i < b.start + b.size; ++i)
        mx = std::max(mx, std::abs(u_st[i]));
      const double thr = stop_threshold(sigma, cfg.alpha, G.block_corner_inverse(b), b.size, r,
                                        cfg.series_tol, cfg.max_terms);
      if (mx > thr) return false;
    }
    return true;
  }
  double mx = 0.0;
  for (const auto& b : G.blocks())
    for (std::size_t i = b.start; i < b.start + b.size; ++i) mx = std::max(mx, std::abs(u_st[i]));
  const double thr = stop_threshold(sigma, cfg.alpha, G.last_corner_inverse(),
                                    G.interior_count(), r, cfg.series_tol, cfg.max_terms);
  return mx <= thr;
}

}  // namespace prutf
