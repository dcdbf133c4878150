#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "prutf/linop.hpp"

namespace prutf {

struct PathEvent {
  enum class Kind { Join, Leave };
  double lambda;
  Kind kind;
  std::size_t coord;  // join: run end tau; leave: leading boundary coordinate of the run
  int sign;
  bool forced = false;  // crossing collapsed onto the current lambda
};

// One linear piece of the dual path: u(lambda) = a - lambda*b on the interior and
// lambda*s on the augmented runs, valid for lambda in [lo, hi].
struct PathSegment {
  double hi;
  double lo;
  std::vector<BoundaryRun> runs;
  std::vector<double> a;  // indexed by dual coordinate, zero on A
  std::vector<double> b;
};

enum class PathEnd {
  Running,
  LambdaZero,        // no candidate events remain
  ExcludedCrossing,  // an ineligible coordinate exits the box below the next event
  StuckOvershoot,    // an ineligible coordinate is already outside the box
  StateCycle,        // an (A, s_A) pair was about to repeat
};

inline const char* to_string(PathEnd e) {
  switch (e) {
    case PathEnd::Running: return "running";
    case PathEnd::LambdaZero: return "lambda-zero";
    case PathEnd::ExcludedCrossing: return "excluded-crossing";
    case PathEnd::StuckOvershoot: return "stuck-overshoot";
    case PathEnd::StateCycle: return "state-cycle";
  }
  return "?";
}

// Dual solution path stepper: the join/leave homotopy over augmented boundary runs.
// Every accepted event re-solves the blocked gram system, which is the per-iteration
// cost the banded structure is designed around.
//
// Run bookkeeping makes the representation discontinuous at events for r >= 1, so a
// state change can leave an interior coordinate outside the dual box. Such a
// coordinate becomes a forced join at the current lambda (its crossing lies inside
// the collapsed interval). The path ends where its own representation stops being
// box-feasible: when the stranded coordinate is ineligible for a run, when an
// ineligible coordinate's crossing exceeds every remaining event, or when a boundary
// state would repeat. For r = 0 none of these occur and the path reaches lambda = 0.
class PathEngine {
 public:
  static constexpr double kTieRel = 1e-12;

  PathEngine(std::span<const double> y, const DifferenceOperator& D)
      : D_(D), y_(y.begin(), y.end()), bounds_(D.rows(), D.order()) {
    if (y.size() != D.n()) throw InvalidInput("path: y length does not match operator");
    for (double v : y_)
      if (!std::isfinite(v)) throw InvalidInput("path: input contains non-finite values");
    factor_ = std::make_shared<BandCholesky>(D.order(), D.rows());
    recompute();
    segments_.push_back(make_segment(std::numeric_limits<double>::infinity()));
    remember_state();
  }

  const DifferenceOperator& op() const { return D_; }
  const AugmentedBoundary& boundary() const { return bounds_; }
  const BlockedGram& gram() const { return *gram_; }
  const std::vector<PathEvent>& events() const { return events_; }
  const std::vector<PathSegment>& segments() const { return segments_; }
  std::span<const double> interior_stochastic() const { return a_; }
  std::span<const double> interior_drift_slope() const { return b_; }
  double lambda() const { return lam_prev_; }
  bool complete() const { return end_ != PathEnd::Running; }
  PathEnd end_reason() const { return end_; }
  double end_lambda() const { return end_lam_; }
  std::vector<std::size_t> tau_dual() const { return bounds_.tau_dual(); }

  // A coordinate pushed outside the box by the last state change, if any.
  std::optional<PathEvent> pending_forced() const {
    if (!std::isfinite(lam_prev_)) return std::nullopt;
    const double tol = 1e-9 * std::max(1.0, lam_prev_);
    double worst = tol;
    std::optional<PathEvent> out;
    for (const auto& blk : gram_->blocks()) {
      for (std::size_t t = blk.start; t < blk.start + blk.size; ++t) {
        const double u = a_[t] - lam_prev_ * b_[t];
        const double exc = std::abs(u) - lam_prev_;
        if (exc > worst) {
          worst = exc;
          out = PathEvent{lam_prev_, PathEvent::Kind::Join, t, u > 0.0 ? 1 : -1, true};
        }
      }
    }
    return out;
  }

  // Largest joining candidate among eligible coordinates (forced ones first).
  std::optional<PathEvent> next_join() const {
    if (auto f = pending_forced()) {
      if (eligible(f->coord)) return f;
      return std::nullopt;
    }
    const JoinScan js = scan_joins();
    if (!js.best.valid()) return std::nullopt;
    return PathEvent{js.best.value, PathEvent::Kind::Join, js.best.coord, js.best.sign, false};
  }

  // Largest leaving candidate per the c/d rule, or nothing when all leave times are 0.
  std::optional<PathEvent> next_leave() const {
    const Candidate c = scan_leaves();
    if (!c.valid()) return std::nullopt;
    return PathEvent{c.value, PathEvent::Kind::Leave,
                     c.coord - static_cast<std::size_t>(bounds_.rb()), c.sign, c.value >= lam_prev_};
  }

  // Apply the next event. Returns false once the path is complete; throws CapExceeded
  // past 5n events.
  bool advance() {
    if (complete()) return false;
    if (auto forced = pending_forced()) {
      if (!eligible(forced->coord)) {
        finish(PathEnd::StuckOvershoot, lam_prev_);
        return false;
      }
      apply_join(*forced);
      return !complete();
    }
    const JoinScan js = scan_joins();
    const Candidate lv = scan_leaves();
    Candidate ev = js.best;
    bool is_join = true;
    if (lv.valid() &&
        (!ev.valid() || lv.value > ev.value + kTieRel * std::max(1.0, ev.value))) {
      ev = lv;
      is_join = false;
    }
    if (!ev.valid() || ev.value <= 0.0) {
      // remaining eligible crossings sit at lambda = 0, but an ineligible coordinate
      // crossing at positive lambda still bounds the valid range
      if (js.excluded_max > 0.0)
        finish(PathEnd::ExcludedCrossing, js.excluded_max);
      else
        finish(PathEnd::LambdaZero, 0.0);
      return false;
    }
    if (js.excluded_max > ev.value * (1.0 + kTieRel) + 1e-300) {
      finish(PathEnd::ExcludedCrossing, js.excluded_max);
      return false;
    }
    if (is_join) {
      apply_join(PathEvent{ev.value, PathEvent::Kind::Join, ev.coord, ev.sign, false});
    } else {
      apply_leave(ev);
    }
    return !complete();
  }

  // Zero the sign of the run at tau (modified algorithm). The dual changes
  // discontinuously; coordinates it pushes outside the box surface as forced joins.
  void zero_sign(std::size_t tau) {
    close_segment(lam_prev_);
    bounds_.set_sign(tau, 0);
    recompute();
    open_segment(lam_prev_);
  }

  // u(lambda) assembled from the recorded piece containing lambda.
  std::vector<double> dual_at(double lambda) const {
    const PathSegment& seg = segment_at(lambda);
    std::vector<double> u(D_.rows());
    for (std::size_t i = 0; i < u.size(); ++i) u[i] = seg.a[i] - lambda * seg.b[i];
    const auto ra = static_cast<std::size_t>(bounds_.ra());
    const auto rb = static_cast<std::size_t>(bounds_.rb());
    for (const auto& run : seg.runs)
      for (std::size_t i = run.tau - rb; i <= run.tau + ra; ++i) u[i] = lambda * run.sign;
    return u;
  }

  // f(lambda) = y - D^T u(lambda).
  std::vector<double> primal_at(double lambda) const {
    const std::vector<double> u = dual_at(lambda);
    std::vector<double> f(y_);
    for (std::size_t i = 0; i < u.size(); ++i)
      if (u[i] != 0.0) D_.add_scaled_row(i, -u[i], f);
    return f;
  }

  void run_to_end() {
    while (advance()) {
    }
  }

 private:
  struct Candidate {
    double value = -1.0;
    std::size_t coord = 0;
    int sign = 0;
    bool valid() const { return value >= 0.0; }
  };
  struct JoinScan {
    Candidate best;
    double excluded_max = 0.0;
  };

  bool eligible(std::size_t t) const { return bounds_.run_fits(t) && !bounds_.run_overlaps(t); }

  void check_cap() {
    if (events_.size() >= 5 * D_.n())
      throw CapExceeded("path exceeded the safety cap of 5n events (n = " +
                        std::to_string(D_.n()) + ")");
  }

  void recompute() {
    gram_ = std::make_unique<BlockedGram>(D_, bounds_, factor_);
    a_ = weighted_apply(D_, *gram_, y_);
    load_ = boundary_load(D_, bounds_);
    b_ = weighted_apply(D_, *gram_, load_);
  }

  PathSegment make_segment(double hi) const { return PathSegment{hi, 0.0, bounds_.runs(), a_, b_}; }

  void apply_join(const PathEvent& ev) {
    check_cap();
    const double lam = std::min(ev.lambda, lam_prev_);
    bounds_.add(ev.coord, ev.sign);
    events_.push_back({lam, PathEvent::Kind::Join, ev.coord, ev.sign, ev.forced});
    commit(lam);
  }

  void apply_leave(const Candidate& ev) {
    check_cap();
    const double lam = std::min(ev.value, lam_prev_);
    const std::size_t lead = ev.coord - static_cast<std::size_t>(bounds_.rb());
    bounds_.remove(ev.coord);
    events_.push_back({lam, PathEvent::Kind::Leave, lead, ev.sign, ev.value >= lam_prev_});
    commit(lam);
  }

  void commit(double lam) {
    close_segment(lam);
    lam_prev_ = lam;
    recompute();
    open_segment(lam);
    // transient states (with a forced join still pending) are not rest states
    if (open_ && !remember_state()) finish(PathEnd::StateCycle, lam);
  }

  void close_segment(double lam) {
    if (open_) {
      segments_.back().lo = lam;
      open_ = false;
    }
  }

  // Record the new state as a path piece unless it is still outside the box (a forced
  // join at the same lambda will follow; only the settled state is a valid piece).
  void open_segment(double hi) {
    if (!pending_forced()) {
      segments_.push_back(make_segment(hi));
      open_ = true;
    }
  }

  JoinScan scan_joins() const {
    JoinScan out;
    const double bound = lam_prev_;
    for (const auto& blk : gram_->blocks()) {
      for (std::size_t t = blk.start; t < blk.start + blk.size; ++t) {
        const bool ok = eligible(t);
        for (int s = 1; s >= -1; s -= 2) {
          const double den = static_cast<double>(s) + b_[t];
          if (std::abs(den) < 1e-12) continue;
          double v = a_[t] / den;
          if (v < 0.0) continue;
          if (std::isfinite(bound)) {
            if (v > bound * (1.0 + kTieRel)) continue;
            v = std::min(v, bound);
          }
          if (ok) {
            if (v > out.best.value) out.best = {v, t, s};
          } else if (v > out.excluded_max) {
            out.excluded_max = v;
          }
        }
      }
    }
    return out;
  }

  Candidate scan_leaves() const {
    Candidate best;
    std::vector<double> v1(y_);
    std::vector<double> v2(load_);
    for (const auto& blk : gram_->blocks()) {
      for (std::size_t i = blk.start; i < blk.start + blk.size; ++i) {
        if (a_[i] != 0.0) D_.add_scaled_row(i, -a_[i], v1);
        if (b_[i] != 0.0) D_.add_scaled_row(i, -b_[i], v2);
      }
    }
    for (const auto& [coord, sign] : bounds_.boundary()) {
      if (sign == 0) continue;
      const double c = sign * D_.row_dot(coord, v1);
      const double d = sign * D_.row_dot(coord, v2);
      if (c < 0.0 && d < 0.0) {
        // a crossing past the current lambda means the sign condition broke inside
        // the collapsed interval; the run then leaves immediately
        const double v = std::min(c / d, lam_prev_);
        if (v > 0.0 && v > best.value) best = {v, run_end_of(coord), sign};
      }
    }
    return best;
  }

  std::size_t run_end_of(std::size_t bcoord) const {
    for (const auto& run : bounds_.runs())
      if (bcoord >= run.tau - static_cast<std::size_t>(bounds_.rb()) && bcoord <= run.tau)
        return run.tau;
    throw InternalError("boundary coordinate not inside any run");
  }

  bool remember_state() {
    std::uint64_t h = 0xcbf29ce484222325ull;
    auto mix = [&h](std::uint64_t v) { h ^= v + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2); };
    for (const auto& run : bounds_.runs()) {
      mix(run.tau);
      mix(static_cast<std::uint64_t>(run.sign + 2));
    }
    return seen_states_.insert(h).second;
  }

  void finish(PathEnd reason, double at) {
    end_ = reason;
    end_lam_ = std::max(0.0, open_ ? at : lam_prev_);
    if (open_) segments_.back().lo = end_lam_;
  }

  const PathSegment& segment_at(double lambda) const {
    if (!(lambda >= 0.0) || !std::isfinite(lambda))
      throw InvalidInput("dual_at: lambda must be finite and nonnegative");
    // later segments take precedence at shared endpoints (the state after the event);
    // while the path is running the open segment is validated only at its upper end
    for (std::size_t k = segments_.size(); k-- > 0;) {
      const PathSegment& seg = segments_[k];
      double lo = seg.lo;
      if (open_ && k + 1 == segments_.size()) {
        if (complete()) {
          lo = end_lam_;
        } else if (k == 0) {
          // before the first event the unconstrained dual is valid down to its own
          // sup norm (the first critical value)
          lo = 0.0;
          for (double v : seg.a) lo = std::max(lo, std::abs(v));
        } else {
          lo = seg.hi;
        }
      }
      if (lambda >= lo && lambda <= seg.hi) return seg;
    }
    throw InvalidInput("dual_at: lambda outside the recorded validity range");
  }

  const DifferenceOperator& D_;
  std::vector<double> y_;
  AugmentedBoundary bounds_;
  std::shared_ptr<const BandCholesky> factor_;
  std::unique_ptr<BlockedGram> gram_;
  std::vector<double> a_;
  std::vector<double> b_;
  std::vector<double> load_;
  double lam_prev_ = std::numeric_limits<double>::infinity();
  std::vector<PathEvent> events_;
  std::vector<PathSegment> segments_;
  std::unordered_set<std::uint64_t> seen_states_;
  PathEnd end_ = PathEnd::Running;
  double end_lam_ = 0.0;
  bool open_ = true;
};

}  // namespace prutf
