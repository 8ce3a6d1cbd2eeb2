#pragma once

// The operator L^(omega) = omega^2 d_tt + 1 - a Delta on the range harmonics
// l != 1, and the range equation w = (L^(omega))^{-1} Pi_W N(v e_1 + w).

#include <Eigen/QR>
#include <Eigen/SparseLU>

#include <algorithm>
#include <cmath>
#include <deque>
#include <memory>
#include <string>
#include <vector>

#include "json.hpp"
#include "kgbreather/errors.hpp"
#include "kgbreather/lattice.hpp"
#include "kgbreather/time_spectral.hpp"

namespace kgbreather {

inline constexpr double kSymbolFloor = 1e-8;
inline constexpr double kContractionGuard = 0.9;

/// (1 - omega^2 l^2) I - a Delta for each range harmonic, solved on the
/// reflection fundamental domain: sparse LU in 1D, weighted CG in 2D.
class RangeOperator {
 public:
  RangeOperator(double omega, double a, LatticeBox box, int L)
      : omega_(omega), a_(a), L_(L), fold_(std::make_shared<SymmetryFold>(std::move(box))) {
    if (!(a > 0.0 && a < 0.5)) throw GuardViolation("range operator requires 0 < a < 1/2");
    if (!(std::abs(omega * omega - 1.0) < 0.5)) throw GuardViolation("range operator requires |omega^2 - 1| < 1/2");
    if (L < 2) throw InvalidArgument("range operator requires L_max >= 2");
    const double smax = 4.0 * dim();
    for (int l = 0; l <= L; ++l) {
      if (l == 1) continue;
      const double s0 = shift(l), s1 = shift(l) + a * smax;
      const double gap = s0 * s1 <= 0.0 ? 0.0 : std::min(std::abs(s0), std::abs(s1));
      if (gap < kSymbolFloor) {
        throw GuardViolation("resonance: symbol of harmonic l = " + std::to_string(l) +
                             " vanishes on the spectrum of -Delta (|symbol| >= " + std::to_string(gap) + ")");
      }
    }
    if (dim() == 1) {
      const auto lap = fold_->laplacian_matrix();
      Eigen::SparseMatrix<double> I(lap.rows(), lap.cols());
      I.setIdentity();
      lu_.resize(static_cast<std::size_t>(L + 1));
      for (int l = 0; l <= L; ++l) {
        if (l == 1) continue;
        Eigen::SparseMatrix<double> A = shift(l) * I - a * lap;
        A.makeCompressed();
        auto solver = std::make_shared<Eigen::SparseLU<Eigen::SparseMatrix<double>>>();
        solver->compute(A);
        if (solver->info() != Eigen::Success) {
          throw GuardViolation("range operator: factorization failed for harmonic l = " + std::to_string(l));
        }
        lu_[static_cast<std::size_t>(l)] = std::move(solver);
      }
    }
  }

  double omega() const noexcept { return omega_; }
  double a() const noexcept { return a_; }
  int L() const noexcept { return L_; }
  int dim() const noexcept { return fold_->box().dim(); }
  const LatticeBox& box() const noexcept { return fold_->box(); }
  const SymmetryFold& fold() const noexcept { return *fold_; }

  /// 1 - omega^2 l^2.
  double shift(int l) const noexcept { return 1.0 - omega_ * omega_ * l * l; }

  /// 1 - a * ||Delta|| * max_l ||L_omega^{-1}||, with ||Delta||_{l2} = 4n and
  /// the per-harmonic bound 1/|1 - omega^2 l^2|. Positive means the Neumann
  /// series of the existence proof converges.
  double neumann_margin(double laplacian_norm = -1.0) const noexcept {
    const double dn = laplacian_norm > 0.0 ? laplacian_norm : 4.0 * dim();
    double worst = 0.0;
    for (int l = 0; l <= L_; ++l) {
      if (l != 1) worst = std::max(worst, 1.0 / std::abs(shift(l)));
    }
    return 1.0 - a_ * dn * worst;
  }

  /// y = ((1 - omega^2 l^2) - a Delta) x on reduced vectors.
  void apply(int l, const Eigen::VectorXd& x, Eigen::VectorXd& y) const {
    fold_->apply_laplacian(x, y);
    y = shift(l) * x - a_ * y;
  }

  /// Solves harmonic l on the reduced domain; x holds the initial guess on entry.
  void solve(int l, const Eigen::VectorXd& b, Eigen::VectorXd& x) const {
    if (l == 1) throw InvalidArgument("range operator: harmonic 1 lies in the kernel");
    const double bn = fold_->norm(b);
    if (bn == 0.0) {
      x.setZero(b.size());
      return;
    }
    if (dim() == 1) {
      x = lu_[static_cast<std::size_t>(l)]->solve(b);
    } else {
      cg(l, b, x);
    }
    Eigen::VectorXd r;
    apply(l, x, r);
    const double rel = fold_->norm(r - b) / bn;
    if (!(rel < 1e-12)) {
      throw NonConvergence("range operator: linear solve for harmonic l = " + std::to_string(l) +
                               " missed the 1e-12 relative residual",
                           rel);
    }
  }

  /// Per-harmonic inverse on reduced coefficient matrices (harmonic 1 -> 0).
  Eigen::MatrixXd invert_reduced(const Eigen::MatrixXd& g, const Eigen::MatrixXd* guess = nullptr) const {
    if (g.cols() != L_ + 1 || g.rows() != fold_->size()) throw InvalidArgument("range operator: shape mismatch");
    Eigen::MatrixXd h = Eigen::MatrixXd::Zero(g.rows(), g.cols());
    for (int l = 0; l <= L_; ++l) {
      if (l == 1) continue;
      Eigen::VectorXd x = guess ? Eigen::VectorXd(guess->col(l)) : Eigen::VectorXd::Zero(g.rows());
      solve(l, g.col(l), x);
      h.col(l) = x;
    }
    return h;
  }

 private:
  // Conjugate gradients in the weighted inner product, in which the folded
  // operator is self-adjoint; range harmonics l >= 2 are negative definite.
  void cg(int l, const Eigen::VectorXd& b, Eigen::VectorXd& x) const {
    const double sign = shift(l) < 0.0 ? -1.0 : 1.0;
    const Eigen::VectorXd rhs = sign * b;
    if (x.size() != b.size()) x.setZero(b.size());
    Eigen::VectorXd r(b.size()), q(b.size());
    apply(l, x, q);
    r = rhs - sign * q;
    Eigen::VectorXd d = r;
    double rr = fold_->dot(r, r);
    const double stop = 1e-13 * fold_->norm(rhs);
    for (int it = 0; it < 10000 && std::sqrt(rr) > stop; ++it) {
      apply(l, d, q);
      q *= sign;
      const double alpha = rr / fold_->dot(d, q);
      x += alpha * d;
      r -= alpha * q;
      const double rr_new = fold_->dot(r, r);
      d = r + (rr_new / rr) * d;
      rr = rr_new;
    }
  }

  double omega_;
  double a_;
  int L_;
  std::shared_ptr<const SymmetryFold> fold_;
  std::vector<std::shared_ptr<Eigen::SparseLU<Eigen::SparseMatrix<double>>>> lu_;
};

/// X2 and X0 norms of reduced coefficient matrices (full-lattice values).
inline double reduced_norm_X2(const SymmetryFold& fold, const Eigen::MatrixXd& c) {
  double s = 0.0;
  for (Eigen::Index l = 0; l < c.cols(); ++l) {
    const double ll = static_cast<double>(l * l);
    s += (1.0 + ll + ll * ll) * harmonic_weight(static_cast<int>(l)) * fold.dot(c.col(l), c.col(l));
  }
  return std::sqrt(s);
}

inline double reduced_norm_X0(const SymmetryFold& fold, const Eigen::MatrixXd& c) {
  double s = 0.0;
  for (Eigen::Index l = 0; l < c.cols(); ++l) s += harmonic_weight(static_cast<int>(l)) * fold.dot(c.col(l), c.col(l));
  return std::sqrt(s);
}

inline void check_range_input(const RangeOperator& op, const LatticeBox& box, int L) {
  if (!(box == op.box())) throw InvalidArgument("range solver: grid or symmetry mismatch");
  if (L != op.L()) throw InvalidArgument("range solver: L_max mismatch");
}

/// h = (L^(omega))^{-1} g for g in W (zero harmonic 1).
inline TimeFourierField invert_L(const RangeOperator& op, const TimeFourierField& g) {
  check_range_input(op, g.box(), g.L());
  if (g.coeffs().col(1).cwiseAbs().maxCoeff() != 0.0) {
    throw InvalidArgument("invert_L: input has a nonzero harmonic-1 component");
  }
  return TimeFourierField::from_reduced(op.fold(), op.invert_reduced(g.reduced(op.fold())));
}

/// Forward application of L^(omega) harmonic by harmonic (harmonic 1 included).
inline TimeFourierField apply_L(const RangeOperator& op, const TimeFourierField& h) {
  check_range_input(op, h.box(), h.L());
  const auto hr = h.reduced(op.fold());
  Eigen::MatrixXd out(hr.rows(), hr.cols());
  Eigen::VectorXd y;
  for (int l = 0; l <= op.L(); ++l) {
    op.apply(l, hr.col(l), y);
    out.col(l) = y;
  }
  return TimeFourierField::from_reduced(op.fold(), out);
}

/// w0(v) = (L^(omega))^{-1} Pi_W N(v e_1).
inline TimeFourierField w0(const KernelField& v, const RangeOperator& op, const Nonlinearity& nl) {
  check_range_input(op, v.box(), op.L());
  const CosineTransform tr(op.L());
  Eigen::MatrixXd u = Eigen::MatrixXd::Zero(op.fold().size(), op.L() + 1);
  u.col(1) = op.fold().restrict(v);
  Eigen::MatrixXd g = apply_N_coeffs(u, nl.p, nl.beta, tr);
  g.col(1).setZero();
  return TimeFourierField::from_reduced(op.fold(), op.invert_reduced(g));
}

struct RangeOptions {
  double tol = 1e-12;
  int max_iter = 200;
  bool anderson = false;
  int anderson_depth = 5;
  int collocation_half_nodes = 0;  // 0: 4 (L+1)
};

struct RangeReport {
  int iterations = 0;
  std::vector<double> residual_history;
  double contraction = 0.0;
  double norm_w_X2 = 0.0;
  double norm_N_X0 = 0.0;
  double ratio_w_over_N = 0.0;
  double neumann_margin = 0.0;
  double neumann_margin_unit_laplacian_bound = 0.0;

  nlohmann::json to_json() const {
    return {{"iterations", iterations},
            {"residual_history", residual_history},
            {"contraction_estimate", contraction},
            {"norm_w_X2", norm_w_X2},
            {"norm_N_v_X0", norm_N_X0},
            {"ratio_w_X2_over_N_X0", ratio_w_over_N},
            {"neumann_margin", neumann_margin},
            {"neumann_margin_with_norm_2", neumann_margin_unit_laplacian_bound}};
  }
};

struct ReducedRangeSolution {
  Eigen::MatrixXd w;  // reduced coefficients, harmonic 1 zero
  RangeReport report;
};

/// Picard iteration w <- F(v + w) on the reduced domain. A warm start is
/// used when given. Throws GuardViolation when the empirical contraction
/// rate exceeds 0.9 and NonConvergence when it reaches 1 or max_iter runs out.
inline ReducedRangeSolution solve_range_reduced(const Eigen::VectorXd& v, const RangeOperator& op, const Nonlinearity& nl,
                                                const RangeOptions& opt = {}, const Eigen::MatrixXd* warm = nullptr) {
  const SymmetryFold& fold = op.fold();
  const int L = op.L();
  const CosineTransform tr(L, opt.collocation_half_nodes);
  auto F = [&](const Eigen::MatrixXd& w) {
    Eigen::MatrixXd u = w;
    u.col(1) = v;
    Eigen::MatrixXd g = apply_N_coeffs(u, nl.p, nl.beta, tr);
    g.col(1).setZero();
    return op.invert_reduced(g, &w);
  };

  ReducedRangeSolution out;
  RangeReport& rep = out.report;
  {
    Eigen::MatrixXd u = Eigen::MatrixXd::Zero(fold.size(), L + 1);
    u.col(1) = v;
    rep.norm_N_X0 = reduced_norm_X0(fold, apply_N_coeffs(u, nl.p, nl.beta, tr));
  }
  rep.neumann_margin = op.neumann_margin();
  rep.neumann_margin_unit_laplacian_bound = op.neumann_margin(2.0);

  Eigen::MatrixXd w = warm ? *warm : Eigen::MatrixXd::Zero(fold.size(), L + 1);
  if (w.rows() != fold.size() || w.cols() != L + 1) throw InvalidArgument("range solver: warm start shape mismatch");
  w.col(1).setZero();

  // Anderson history of iterates and residuals, flattened.
  std::deque<Eigen::VectorXd> dX, dG;
  Eigen::VectorXd x_prev, g_prev;

  double prev_res = -1.0;
  bool converged = false;
  for (int it = 1; it <= opt.max_iter; ++it) {
    Eigen::MatrixXd Fw = F(w);
    const double res = reduced_norm_X2(fold, Fw - w);
    rep.residual_history.push_back(res);
    rep.iterations = it;
    if (!std::isfinite(res)) throw NonConvergence("range iteration produced non-finite values", res);
    if (prev_res > 0.0 && it >= 3) {
      const double rate = res / prev_res;
      rep.contraction = std::max(rep.contraction, rate);
      if (res > opt.tol && rate >= 1.0) {
        throw NonConvergence("range iteration diverges (contraction estimate " + std::to_string(rate) + ")", res);
      }
      if (res > opt.tol && rate > kContractionGuard) {
        throw GuardViolation("range iteration contraction estimate " + std::to_string(rate) +
                             " exceeds 0.9: amplitude outside the smallness regime");
      }
    } else if (prev_res > 0.0) {
      rep.contraction = std::max(rep.contraction, res / prev_res);
    }
    prev_res = res;
    if (res < opt.tol) {
      w = std::move(Fw);
      converged = true;
      break;
    }
    if (!opt.anderson) {
      w = std::move(Fw);
      continue;
    }
    const Eigen::Map<const Eigen::VectorXd> x(w.data(), w.size());
    const Eigen::VectorXd g = Eigen::Map<const Eigen::VectorXd>(Fw.data(), Fw.size()) - x;
    if (x_prev.size()) {
      dX.push_back(x - x_prev);
      dG.push_back(g - g_prev);
      if (static_cast<int>(dX.size()) > opt.anderson_depth) {
        dX.pop_front();
        dG.pop_front();
      }
    }
    x_prev = x;
    g_prev = g;
    Eigen::VectorXd next = x + g;
    if (!dG.empty()) {
      Eigen::MatrixXd Gm(g.size(), static_cast<Eigen::Index>(dG.size())), Xm(g.size(), static_cast<Eigen::Index>(dX.size()));
      for (std::size_t i = 0; i < dG.size(); ++i) {
        Gm.col(static_cast<Eigen::Index>(i)) = dG[i];
        Xm.col(static_cast<Eigen::Index>(i)) = dX[i];
      }
      const Eigen::VectorXd gamma = Gm.colPivHouseholderQr().solve(g);
      next -= (Xm + Gm) * gamma;
    }
    w = Eigen::Map<const Eigen::MatrixXd>(next.data(), w.rows(), w.cols());
    w.col(1).setZero();
  }
  if (!converged) {
    throw NonConvergence("range iteration did not reach tol = " + std::to_string(opt.tol) + " in " +
                             std::to_string(opt.max_iter) + " iterations",
                         rep.residual_history.empty() ? 0.0 : rep.residual_history.back());
  }
  rep.norm_w_X2 = reduced_norm_X2(fold, w);
  rep.ratio_w_over_N = rep.norm_N_X0 > 0.0 ? rep.norm_w_X2 / rep.norm_N_X0 : 0.0;
  out.w = std::move(w);
  return out;
}

struct RangeSolution {
  TimeFourierField w;
  RangeReport report;
};

inline RangeSolution solve_range(const KernelField& v, const RangeOperator& op, const Nonlinearity& nl,
                                 const RangeOptions& opt = {}) {
  check_range_input(op, v.box(), op.L());
  auto r = solve_range_reduced(op.fold().restrict(v), op, nl, opt);
  return {TimeFourierField::from_reduced(op.fold(), r.w), std::move(r.report)};
}

}  // namespace kgbreather
