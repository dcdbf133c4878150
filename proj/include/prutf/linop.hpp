#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "prutf/errors.hpp"

namespace prutf {

// Exact binomial coefficient in 64-bit integer arithmetic.
inline std::int64_t binomial(int n, int k) {
  if (k < 0 || k > n) return 0;
  k = std::min(k, n - k);
  std::int64_t v = 1;
  for (int i = 1; i <= k; ++i) v = v * (n - k + i) / i;
  return v;
}

// (i,j) entry of D D^T: (-1)^{i-j} C(2r+2, r+1+i-j), zero outside the band |i-j| <= r+1.
inline double gram_entry(int r, std::int64_t i, std::int64_t j) {
  const std::int64_t off = i >= j ? i - j : j - i;
  if (off > r + 1) return 0.0;
  const std::int64_t v = binomial(2 * r + 2, static_cast<int>(r + 1 + off));
  return (off % 2 == 0) ? static_cast<double>(v) : -static_cast<double>(v);
}

// The (r+1)-th order difference operator D^(r+1), held implicitly by its stencil.
// Row i places the coefficients of (x-1)^{r+1} at columns i..i+r+1, so applying it
// to a vector equals differencing it r+1 times.
class DifferenceOperator {
 public:
  DifferenceOperator(std::size_t n, int order) : n_(n), r_(order) {
    if (order < 0) throw InvalidInput("difference order must be >= 0");
    if (n < static_cast<std::size_t>(order) + 2)
      throw InvalidInput("signal too short: need n >= r + 2, got n = " + std::to_string(n) +
                         ", r = " + std::to_string(order));
    m_ = n - static_cast<std::size_t>(order) - 1;
    stencil_.resize(static_cast<std::size_t>(order) + 2);
    for (int k = 0; k <= order + 1; ++k) {
      const std::int64_t c = binomial(order + 1, k);
      stencil_[static_cast<std::size_t>(k)] = ((order + 1 - k) % 2 == 0) ? static_cast<double>(c)
                                                                         : -static_cast<double>(c);
    }
  }

  std::size_t n() const { return n_; }
  std::size_t rows() const { return m_; }
  int order() const { return r_; }
  int width() const { return r_ + 2; }
  const std::vector<double>& stencil() const { return stencil_; }

  // [D v]_i
  double row_dot(std::size_t i, std::span<const double> v) const {
    double acc = 0.0;
    for (std::size_t k = 0; k < stencil_.size(); ++k) acc += stencil_[k] * v[i + k];
    return acc;
  }

  // out += w * D_i (row i of D scaled by w)
  void add_scaled_row(std::size_t i, double w, std::span<double> out) const {
    for (std::size_t k = 0; k < stencil_.size(); ++k) out[i + k] += w * stencil_[k];
  }

  // D v
  std::vector<double> apply(std::span<const double> v) const {
    if (v.size() != n_) throw InvalidInput("apply: vector length does not match operator");
    std::vector<double> out(m_);
    for (std::size_t i = 0; i < m_; ++i) out[i] = row_dot(i, v);
    return out;
  }

  // D^T u
  std::vector<double> apply_transpose(std::span<const double> u) const {
    if (u.size() != m_) throw InvalidInput("apply_transpose: vector length does not match");
    std::vector<double> out(n_, 0.0);
    for (std::size_t i = 0; i < m_; ++i)
      if (u[i] != 0.0) add_scaled_row(i, u[i], out);
    return out;
  }

 private:
  std::size_t n_;
  int r_;
  std::size_t m_;
  std::vector<double> stencil_;
};

// Banded Cholesky factor of the leading SxS principal submatrix of D D^T.
//
// D D^T is Toeplitz, and row-by-row Cholesky never looks ahead, so the factor of any
// leading principal submatrix is a prefix of the factor of the full matrix. One factor
// of size m therefore serves every diagonal block of D_{-A} D_{-A}^T, whatever the
// boundary set: each block is the leading principal submatrix of its own size.
class BandCholesky {
 public:
  BandCholesky(int r, std::size_t size) : r_(r), bw_(static_cast<std::size_t>(r) + 1), size_(size) {
    band_.assign(size_ * (bw_ + 1), 0.0);
    for (std::size_t i = 0; i < size_; ++i) {
      const std::size_t jlo = i > bw_ ? i - bw_ : 0;
      for (std::size_t j = jlo; j <= i; ++j) {
        double acc = gram_entry(r_, static_cast<std::int64_t>(i), static_cast<std::int64_t>(j));
        const std::size_t klo = std::max(jlo, j > bw_ ? j - bw_ : 0);
        for (std::size_t k = klo; k < j; ++k) acc -= at(i, k) * at(j, k);
        if (j == i) {
          if (acc <= 0.0)
            throw InternalError("gram block lost positive definiteness at row " + std::to_string(i));
          at(i, i) = std::sqrt(acc);
        } else {
          at(i, j) = acc / at(j, j);
        }
      }
    }
  }

  std::size_t size() const { return size_; }

  // Solve (G_s) x = b in place, where G_s is the leading s x s submatrix of D D^T.
  void solve_prefix(std::size_t s, std::span<double> x) const {
    for (std::size_t i = 0; i < s; ++i) {
      double acc = x[i];
      const std::size_t jlo = i > bw_ ? i - bw_ : 0;
      for (std::size_t j = jlo; j < i; ++j) acc -= at(i, j) * x[j];
      x[i] = acc / at(i, i);
    }
    for (std::size_t ii = s; ii-- > 0;) {
      double acc = x[ii];
      const std::size_t jhi = std::min(s - 1, ii + bw_);
      for (std::size_t j = ii + 1; j <= jhi; ++j) acc -= at(j, ii) * x[j];
      x[ii] = acc / at(ii, ii);
    }
  }

  // [(G_s)^{-1}]_{s-1,s-1}. Column s-1 of L^{-1} has a single entry 1/L_{s-1,s-1}.
  double corner_inverse(std::size_t s) const {
    const double d = at(s - 1, s - 1);
    return 1.0 / (d * d);
  }

 private:
  double& at(std::size_t i, std::size_t j) { return band_[i * (bw_ + 1) + (i - j)]; }
  double at(std::size_t i, std::size_t j) const { return band_[i * (bw_ + 1) + (i - j)]; }

  int r_;
  std::size_t bw_;
  std::size_t size_;
  std::vector<double> band_;
};

// One detected change point's slice of the boundary bookkeeping. tau is the dual
// coordinate (0-based); the boundary run is [tau-rb, tau] and the augmented run
// [tau-rb, tau+ra]. sign is -1/+1, or 0 once zeroed by the modified algorithm.
struct BoundaryRun {
  std::size_t tau;
  int sign;
};

// Augmented boundary set A (boundary set B plus the ra trailing coordinates of each
// run), maintained as disjoint runs of r+1 consecutive dual coordinates.
class AugmentedBoundary {
 public:
  AugmentedBoundary(std::size_t m, int r)
      : m_(m), r_(r), ra_((r + 1) / 2), rb_((r + 2) / 2 - 1), in_aug_(m, 0) {}

  int order() const { return r_; }
  int ra() const { return ra_; }
  int rb() const { return rb_; }
  std::size_t m() const { return m_; }
  const std::vector<BoundaryRun>& runs() const { return runs_; }
  bool empty() const { return runs_.empty(); }
  std::size_t interior_count() const { return m_ - runs_.size() * (static_cast<std::size_t>(r_) + 1); }

  bool contains_aug(std::size_t coord) const { return in_aug_[coord] != 0; }

  // Whether a run centered on tau stays inside [0, m); coordinates whose run would
  // exit the index range are not valid join candidates.
  bool run_fits(std::size_t tau) const {
    return tau >= static_cast<std::size_t>(rb_) && tau + static_cast<std::size_t>(ra_) < m_;
  }

  // Whether the run at tau would overlap an existing augmented run.
  bool run_overlaps(std::size_t tau) const {
    const std::size_t lo = tau >= static_cast<std::size_t>(rb_) ? tau - static_cast<std::size_t>(rb_) : 0;
    const std::size_t hi = std::min(tau + static_cast<std::size_t>(ra_), m_ - 1);
    for (std::size_t u = lo; u <= hi; ++u)
      if (in_aug_[u]) return true;
    return false;
  }

  void add(std::size_t tau, int sign) {
    if (!run_fits(tau)) throw InternalError("boundary run does not fit index range");
    if (run_overlaps(tau)) throw InternalError("boundary runs must be disjoint");
    runs_.push_back({tau, sign});
    std::sort(runs_.begin(), runs_.end(),
              [](const BoundaryRun& a, const BoundaryRun& b) { return a.tau < b.tau; });
    mark(tau, 1);
  }

  void remove(std::size_t tau) {
    auto it = std::find_if(runs_.begin(), runs_.end(),
                           [tau](const BoundaryRun& x) { return x.tau == tau; });
    if (it == runs_.end()) throw InternalError("no boundary run at coordinate");
    mark(tau, 0);
    runs_.erase(it);
  }

  void set_sign(std::size_t tau, int sign) {
    for (auto& x : runs_)
      if (x.tau == tau) {
        x.sign = sign;
        return;
      }
    throw InternalError("no boundary run at coordinate");
  }

  int sign_at(std::size_t tau) const {
    for (const auto& x : runs_)
      if (x.tau == tau) return x.sign;
    throw InternalError("no boundary run at coordinate");
  }

  // Ordered boundary coordinates (set B) with their signs.
  std::vector<std::pair<std::size_t, int>> boundary() const {
    std::vector<std::pair<std::size_t, int>> out;
    out.reserve(runs_.size() * (static_cast<std::size_t>(rb_) + 1));
    for (const auto& run : runs_)
      for (std::size_t u = run.tau - static_cast<std::size_t>(rb_); u <= run.tau; ++u)
        out.emplace_back(u, run.sign);
    return out;
  }

  // Ordered augmented coordinates (set A) with their signs.
  std::vector<std::pair<std::size_t, int>> augmented() const {
    std::vector<std::pair<std::size_t, int>> out;
    out.reserve(runs_.size() * (static_cast<std::size_t>(r_) + 1));
    for (const auto& run : runs_)
      for (std::size_t u = run.tau - static_cast<std::size_t>(rb_);
           u <= run.tau + static_cast<std::size_t>(ra_); ++u)
        out.emplace_back(u, run.sign);
    return out;
  }

  // Ordered interior (non-augmented) coordinates.
  std::vector<std::size_t> interior() const {
    std::vector<std::size_t> out;
    out.reserve(interior_count());
    for (std::size_t u = 0; u < m_; ++u)
      if (!in_aug_[u]) out.push_back(u);
    return out;
  }

  std::vector<std::size_t> tau_dual() const {
    std::vector<std::size_t> out;
    out.reserve(runs_.size());
    for (const auto& run : runs_) out.push_back(run.tau);
    return out;
  }

 private:
  void mark(std::size_t tau, std::uint8_t v) {
    for (std::size_t u = tau - static_cast<std::size_t>(rb_);
         u <= tau + static_cast<std::size_t>(ra_); ++u)
      in_aug_[u] = v;
  }

  std::size_t m_;
  int r_;
  int ra_;
  int rb_;
  std::vector<BoundaryRun> runs_;
  std::vector<std::uint8_t> in_aug_;
};

// Block-diagonal view of D_{-A} D_{-A}^T. Blocks are the maximal runs of consecutive
// interior coordinates; by Toeplitz structure each equals a leading principal
// submatrix of D D^T, so all share one prefix-stable Cholesky factor.
class BlockedGram {
 public:
  struct Block {
    std::size_t start;  // first dual coordinate of the block
    std::size_t size;
  };

  BlockedGram(const DifferenceOperator& D, const AugmentedBoundary& A,
              std::shared_ptr<const BandCholesky> factor)
      : factor_(std::move(factor)) {
    if (!factor_ || factor_->size() < D.rows())
      throw InvalidInput("shared factor smaller than operator row count");
    const std::size_t m = D.rows();
    std::size_t i = 0;
    while (i < m) {
      if (A.contains_aug(i)) {
        ++i;
        continue;
      }
      std::size_t j = i;
      while (j < m && !A.contains_aug(j)) ++j;
      blocks_.push_back({i, j - i});  // zero-size gaps never materialize here
      i = j;
    }
    total_ = 0;
    for (const auto& b : blocks_) total_ += b.size;
  }

  const std::vector<Block>& blocks() const { return blocks_; }
  std::size_t interior_count() const { return total_; }

  // Solve (D_{-A} D_{-A}^T) x = v in place. v is indexed by dual coordinate
  // (length m) and must be zero outside the interior; only interior entries are read
  // and written.
  void solve_inplace(std::span<double> v) const {
    for (const auto& b : blocks_)
      factor_->solve_prefix(b.size, v.subspan(b.start, b.size));
  }

  // S_r^2(k): the k-th (last) diagonal entry of the block-diagonal inverse, i.e. the
  // corner of the final block's inverse.
  double last_corner_inverse() const {
    if (blocks_.empty()) throw InternalError("no interior coordinates left");
    return factor_->corner_inverse(blocks_.back().size);
  }

  double block_corner_inverse(const Block& b) const { return factor_->corner_inverse(b.size); }

 private:
  std::shared_ptr<const BandCholesky> factor_;
  std::vector<Block> blocks_;
  std::size_t total_ = 0;
};

// D_A^T s_A: the boundary load vector, assembled run by run.
inline std::vector<double> boundary_load(const DifferenceOperator& D, const AugmentedBoundary& A) {
  std::vector<double> out(D.n(), 0.0);
  for (const auto& [coord, sign] : A.augmented())
    if (sign != 0) D.add_scaled_row(coord, static_cast<double>(sign), out);
  return out;
}

// M v with M = (D_{-A} D_{-A}^T)^{-1} D_{-A}: the weighted-contrast operator behind
// both the path coefficients and the stopping statistic. Result is indexed by dual
// coordinate with zeros on A.
inline std::vector<double> weighted_apply(const DifferenceOperator& D, const BlockedGram& G,
                                          std::span<const double> v) {
  std::vector<double> rhs(D.rows(), 0.0);
  for (const auto& b : G.blocks())
    for (std::size_t i = b.start; i < b.start + b.size; ++i) rhs[i] = D.row_dot(i, v);
  G.solve_inplace(rhs);
  return rhs;
}

// y - D_{-A}^T w for interior-indexed w (zeros on A).
inline std::vector<double> residual_from_interior(const DifferenceOperator& D,
                                                  const BlockedGram& G,
                                                  std::span<const double> y,
                                                  std::span<const double> w) {
  std::vector<double> out(y.begin(), y.end());
  for (const auto& b : G.blocks())
    for (std::size_t i = b.start; i < b.start + b.size; ++i)
      if (w[i] != 0.0) D.add_scaled_row(i, -w[i], out);
  return out;
}

}  // namespace prutf
