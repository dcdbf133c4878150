#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "prutf/path.hpp"
#include "prutf/stopping.hpp"

namespace prutf {

struct DetectionEvent {
  enum class Kind { Join, Leave, Zero };
  double lambda;
  Kind kind;
  std::size_t coord;  // dual coordinate: join/zero use the run end, leave the run lead
  int sign;
};

inline const char* to_string(DetectionEvent::Kind k) {
  switch (k) {
    case DetectionEvent::Kind::Join: return "join";
    case DetectionEvent::Kind::Leave: return "leave";
    case DetectionEvent::Kind::Zero: return "zero";
  }
  return "?";
}

struct DetectionResult {
  std::vector<std::size_t> changePoints;  // primal locations, 1-based
  std::vector<int> signs;                 // sign of D f_hat at each change point
  double lambdaStop = 0.0;
  double sigmaUsed = 0.0;
  std::vector<double> fitted;   // segment-wise polynomial refit
  std::vector<double> pathFit;  // y - D^T u(lambda_stop), the shrunken path fit
  std::vector<DetectionEvent> eventLog;
  std::vector<std::size_t> zeroedSigns;  // dual run ends zeroed by the modified rule
  std::string terminated;                // stop | lambda-zero | ... | max-events
};

// Dual change coordinates (0-based) to primal locations (1-based): shift by r_a.
inline std::vector<std::size_t> to_primal_changepoints(std::span<const std::size_t> tau_dual,
                                                       int r) {
  const std::size_t ra = static_cast<std::size_t>((r + 1) / 2);
  std::vector<std::size_t> out(tau_dual.begin(), tau_dual.end());
  for (auto& t : out) t += 1 + ra;
  std::sort(out.begin(), out.end());
  return out;
}

// Degree-r least squares per segment on inputs i/n; changePoints are 1-based primal
// locations splitting [1, n] into [1, t1], (t1, t2], ..., (tJ, n].
inline std::vector<double> segment_polynomial_fit(std::span<const double> y,
                                                  std::span<const std::size_t> changePoints,
                                                  int r) {
  const std::size_t n = y.size();
  std::vector<std::size_t> bounds{0};
  bounds.insert(bounds.end(), changePoints.begin(), changePoints.end());
  bounds.push_back(n);
  for (std::size_t i = 1; i < bounds.size(); ++i)
    if (bounds[i] <= bounds[i - 1] || bounds[i] > n)
      throw InvalidInput("segment_polynomial_fit: invalid segmentation");
  const int p = r + 1;
  std::vector<double> fit(n, 0.0);
  std::vector<double> xtx(static_cast<std::size_t>(p) * p);
  std::vector<double> xty(p);
  std::vector<double> pw(p);
  for (std::size_t s = 0; s + 1 < bounds.size(); ++s) {
    const std::size_t lo = bounds[s], hi = bounds[s + 1];
    if (hi - lo < static_cast<std::size_t>(p))
      throw InvalidInput("segment_polynomial_fit: underdetermined segment of length " +
                         std::to_string(hi - lo) + " for order " + std::to_string(r));
    std::fill(xtx.begin(), xtx.end(), 0.0);
    std::fill(xty.begin(), xty.end(), 0.0);
    for (std::size_t i = lo; i < hi; ++i) {
      const double x = static_cast<double>(i + 1) / static_cast<double>(n);
      pw[0] = 1.0;
      for (int j = 1; j < p; ++j) pw[j] = pw[j - 1] * x;
      for (int a = 0; a < p; ++a) {
        xty[a] += pw[a] * y[i];
        for (int b = 0; b <= a; ++b) xtx[static_cast<std::size_t>(a) * p + b] += pw[a] * pw[b];
      }
    }
    // small SPD solve by Cholesky
    for (int a = 0; a < p; ++a)
      for (int b = a + 1; b < p; ++b)
        xtx[static_cast<std::size_t>(a) * p + b] = xtx[static_cast<std::size_t>(b) * p + a];
    std::vector<double>& L = xtx;
    for (int a = 0; a < p; ++a) {
      for (int b = 0; b <= a; ++b) {
        double acc = L[static_cast<std::size_t>(a) * p + b];
        for (int c = 0; c < b; ++c)
          acc -= L[static_cast<std::size_t>(a) * p + c] * L[static_cast<std::size_t>(b) * p + c];
        if (a == b) {
          if (acc <= 0.0) throw InternalError("segment fit normal equations not positive definite");
          L[static_cast<std::size_t>(a) * p + a] = std::sqrt(acc);
        } else {
          L[static_cast<std::size_t>(a) * p + b] = acc / L[static_cast<std::size_t>(b) * p + b];
        }
      }
    }
    for (int a = 0; a < p; ++a) {
      double acc = xty[a];
      for (int b = 0; b < a; ++b) acc -= L[static_cast<std::size_t>(a) * p + b] * xty[b];
      xty[a] = acc / L[static_cast<std::size_t>(a) * p + a];
    }
    for (int a = p; a-- > 0;) {
      double acc = xty[a];
      for (int b = a + 1; b < p; ++b) acc -= L[static_cast<std::size_t>(b) * p + a] * xty[b];
      xty[a] = acc / L[static_cast<std::size_t>(a) * p + a];
    }
    for (std::size_t i = lo; i < hi; ++i) {
      const double x = static_cast<double>(i + 1) / static_cast<double>(n);
      double v = xty[p - 1];
      for (int j = p - 2; j >= 0; --j) v = v * x + xty[j];
      fit[i] = v;
    }
  }
  return fit;
}

// Staircase test on a sign sequence: block j is a staircase when the signs at its two
// ends agree and neither is zero.
inline bool is_staircase(std::span<const int> signs, std::size_t j) {
  if (j + 1 >= signs.size()) throw InvalidInput("is_staircase: block index out of range");
  return signs[j] != 0 && signs[j] == signs[j + 1];
}

namespace detail {

// Nearest non-zeroed change points strictly before/after tau.
inline std::optional<std::size_t> conflicting_neighbor(const AugmentedBoundary& bounds,
                                                       std::size_t tau, int sign) {
  const BoundaryRun* before = nullptr;
  const BoundaryRun* after = nullptr;
  for (const auto& run : bounds.runs()) {
    if (run.sign == 0) continue;
    if (run.tau < tau && (!before || run.tau > before->tau)) before = &run;
    if (run.tau > tau && (!after || run.tau < after->tau)) after = &run;
  }
  if (before && before->sign == sign) return before->tau;
  if (after && after->sign == sign) return after->tau;
  return std::nullopt;
}

struct DriverState {
  std::vector<DetectionEvent> log;
  std::vector<std::size_t> zeroed;
  std::size_t events_applied = 0;
};

// Staircase-safe modification for the pending join: when the nearest non-zeroed
// change point on either side carries the same sign, that neighbor's sign is zeroed
// and the join recomputed, once; the recomputed pair is accepted as is.
inline void zero_conflicts(PathEngine& engine, DriverState& st) {
  const auto join = engine.next_join();
  if (!join) return;
  const auto conflict = conflicting_neighbor(engine.boundary(), join->coord, join->sign);
  if (!conflict) return;
  engine.zero_sign(*conflict);
  st.log.push_back({engine.lambda(), DetectionEvent::Kind::Zero, *conflict, 0});
  st.zeroed.push_back(*conflict);
}

inline void copy_new_events(const PathEngine& engine, DriverState& st) {
  const auto& ev = engine.events();
  for (; st.events_applied < ev.size(); ++st.events_applied) {
    const auto& e = ev[st.events_applied];
    st.log.push_back({e.lambda,
                      e.kind == PathEvent::Kind::Join ? DetectionEvent::Kind::Join
                                                      : DetectionEvent::Kind::Leave,
                      e.coord, e.sign});
  }
}

inline DetectionResult run_detection(std::span<const double> y, int r, StoppingConfig cfg,
                                     bool modified) {
  const DifferenceOperator D(y.size(), r);
  const double sigma = cfg.sigma ? *cfg.sigma : estimate_sigma_mad(y, r);
  PathEngine engine(y, D);
  DriverState st;
  std::string terminated;
  const std::size_t max_events = cfg.max_events == 0 ? static_cast<std::size_t>(-1)
                                                     : cfg.max_events;
  while (true) {
    // settle forced same-lambda events before judging the state
    if (engine.pending_forced() && !engine.complete()) {
      if (modified) zero_conflicts(engine, st);
      if (!engine.complete()) engine.advance();
      copy_new_events(engine, st);
      if (st.events_applied >= max_events && !engine.complete()) {
        terminated = "max-events";
        break;
      }
      continue;
    }
    if (should_stop_process(engine.interior_stochastic(), engine.gram(), r, sigma, cfg)) {
      terminated = "stop";
      break;
    }
    if (engine.complete()) {
      terminated = to_string(engine.end_reason());
      break;
    }
    if (st.events_applied >= max_events) {
      terminated = "max-events";
      break;
    }
    if (modified) zero_conflicts(engine, st);
    if (!engine.complete()) engine.advance();
    copy_new_events(engine, st);
  }
  copy_new_events(engine, st);

  DetectionResult out;
  out.sigmaUsed = sigma;
  out.terminated = terminated;
  const auto tau = engine.tau_dual();
  out.changePoints = to_primal_changepoints(tau, r);
  double lam_stop = engine.lambda();
  if (!std::isfinite(lam_stop)) {
    // stopped before the first event: the dual is constant above the first critical
    // value, which is the largest unconstrained coordinate
    lam_stop = 0.0;
    for (const double v : engine.interior_stochastic()) lam_stop = std::max(lam_stop, std::abs(v));
  }
  out.lambdaStop = lam_stop;
  out.pathFit = engine.primal_at(lam_stop);
  out.fitted = segment_polynomial_fit(y, out.changePoints, r);
  // user-facing signs describe the fitted signal: sign of D f_hat at each dual coord
  out.signs.reserve(tau.size());
  for (const std::size_t t : tau) {
    const double v = D.row_dot(t, out.fitted);
    out.signs.push_back(v > 0.0 ? 1 : (v < 0.0 ? -1 : 0));
  }
  out.eventLog = std::move(st.log);
  out.zeroedSigns = std::move(st.zeroed);
  return out;
}

}  // namespace detail

// Unmodified path with the excursion stopping rule (kept for experiments showing the
// staircase failure mode).
inline DetectionResult detect_prutf(std::span<const double> y, int r,
                                    const StoppingConfig& cfg = {}) {
  return detail::run_detection(y, r, cfg, false);
}

// Staircase-safe detection: same-signed neighbor signs are zeroed before a join is
// accepted.
inline DetectionResult detect_mprutf(std::span<const double> y, int r,
                                     const StoppingConfig& cfg = {}) {
  return detail::run_detection(y, r, cfg, true);
}

// Per-block envelope report at a recorded path state: are the interior dual values
// consistent with exact pattern recovery, and are staircase blocks one-sided?
struct BlockReport {
  std::size_t first = 0;  // dual coordinate range of the block
  std::size_t last = 0;
  enum class Kind { Edge, Interior, Staircase } kind = Kind::Edge;
  bool ok = true;
  double margin = 0.0;  // positive = slack, negative = violation size
};

inline std::vector<BlockReport> pattern_diagnostics(const AugmentedBoundary& bounds,
                                                    const BlockedGram& gram,
                                                    std::span<const double> u_st,
                                                    std::span<const double> slope,
                                                    double lambda) {
  const auto& runs = bounds.runs();
  std::vector<BlockReport> out;
  for (const auto& blk : gram.blocks()) {
    BlockReport rep;
    rep.first = blk.start;
    rep.last = blk.start + blk.size - 1;
    // neighbor runs: the block is a staircase segment when both enclosing signs match
    const BoundaryRun* left = nullptr;
    const BoundaryRun* right = nullptr;
    for (const auto& run : runs) {
      if (run.tau < blk.start && (!left || run.tau > left->tau)) left = &run;
      if (run.tau > rep.last && (!right || run.tau < right->tau)) right = &run;
    }
    const bool staircase =
        left && right && left->sign != 0 && left->sign == right->sign;
    if (staircase) {
      rep.kind = BlockReport::Kind::Staircase;
      double lo = 0.0, hi = 0.0;
      for (std::size_t t = blk.start; t <= rep.last; ++t) {
        lo = std::min(lo, u_st[t]);
        hi = std::max(hi, u_st[t]);
      }
      // one-sidedness: the stochastic term may not cross zero
      rep.margin = std::max(-lo, -hi);  // >= 0 iff one-sided
      rep.ok = (lo >= -1e-9 * std::max(1.0, lambda)) || (hi <= 1e-9 * std::max(1.0, lambda));
      if (rep.ok) rep.margin = std::min(std::abs(lo), std::abs(hi));
    } else {
      rep.kind = (left && right) ? BlockReport::Kind::Interior : BlockReport::Kind::Edge;
      double worst = -1e300;
      for (std::size_t t = blk.start; t <= rep.last; ++t)
        worst = std::max(worst, std::abs(u_st[t] - lambda * slope[t]) - lambda);
      rep.margin = -worst;
      rep.ok = worst <= 1e-9 * std::max(1.0, lambda);
    }
    out.push_back(rep);
  }
  return out;
}

inline std::vector<BlockReport> pattern_diagnostics(const PathEngine& engine, double lambda) {
  return pattern_diagnostics(engine.boundary(), engine.gram(), engine.interior_stochastic(),
                             engine.interior_drift_slope(), lambda);
}

}  // namespace prutf
