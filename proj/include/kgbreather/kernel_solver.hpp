#pragma once

// Kernel equation G(phi) = G0(phi) + R_V(phi) = 0 with
//   G0(phi) = -(a/mu^2) Delta phi + m phi - |phi|^{2p} phi
// (the dNLS standing wave) and R_V the feedback of the range correction.

#include <Eigen/Eigenvalues>
#include <Eigen/Householder>
#include <Eigen/SparseCholesky>
#include <Eigen/SparseLU>

#include <algorithm>
#include <cmath>
#include <memory>
#include <numbers>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "kgbreather/continuum_nls.hpp"
#include "kgbreather/errors.hpp"
#include "kgbreather/lattice.hpp"
#include "kgbreather/lattice_io.hpp"
#include "kgbreather/power.hpp"
#include "kgbreather/range_solver.hpp"
#include "kgbreather/time_spectral.hpp"

namespace kgbreather {

inline constexpr double kDnlsTol = 1e-12;
inline constexpr double kKernelTol = 1e-11;
inline constexpr double kCoreRadius = 5.0;

struct DnlsProblem {
  GridSpec grid;
  double a;
  double p;
  double m;
  ModeSpec mode;

  DnlsProblem(GridSpec grid_, double a_, double p_, double m_, ModeSpec mode_)
      : grid(grid_), a(a_), p(p_), m(m_), mode(mode_) {
    check_exponent(grid.dim(), p);
    if (mode.dim() != grid.dim()) throw InvalidArgument("DnlsProblem: mode dimension differs from the grid");
    if (!(a > 0.0 && a < 0.5)) throw InvalidArgument("DnlsProblem: coupling a must lie in (0, 1/2)");
    if (!(m > 0.0) || !std::isfinite(m)) throw InvalidArgument("DnlsProblem: m must be positive");
    if (!(m * grid.mu() * grid.mu() < 0.5)) throw GuardViolation("DnlsProblem: m mu^2 must be below 1/2");
  }

  int dim() const noexcept { return grid.dim(); }
  double mu() const noexcept { return grid.mu(); }
  LatticeBox box() const { return LatticeBox(grid, mode.offsets()); }
  double omega() const { return frequency(m, mu()); }
};

/// H0(phi) = mu^n [ (a/2) sum_{|j-k|=1} |phi_j - phi_k|^2 / mu^2 - 1/(p+1) sum |phi_j|^{2p+2} ],
/// the pair sum running over ordered neighbour pairs (each bond twice), so
/// that grad (H0 + m N) = 2 mu^n G0. a = 1 is the uncoupled normalization.
inline double H0(const SymmetricSequence& phi, double mu, double p, double a = 1.0) {
  detail::require_positive_mu(mu);
  double pot = 0.0;
  for (double v : phi.values()) pot += abs_pow(v, 2.0 * p + 2.0);
  return std::pow(mu, phi.grid().dim()) * (a * dirichlet_form(phi) / (mu * mu) - pot / (p + 1.0));
}

/// N(phi) = mu^n sum |phi_j|^2.
inline double discrete_mass(const SymmetricSequence& phi, double mu) {
  detail::require_positive_mu(mu);
  return std::pow(mu, phi.grid().dim()) * phi.values().squaredNorm();
}

inline SymmetricSequence G0(const DnlsProblem& prob, const SymmetricSequence& phi) {
  if (!(phi.box() == prob.box())) throw InvalidArgument("G0: sequence does not match the problem grid and mode");
  const double c = prob.a / (prob.mu() * prob.mu());
  const auto lap = laplacian(phi);
  Eigen::VectorXd g(phi.values().size());
  for (Eigen::Index i = 0; i < g.size(); ++i) {
    const double v = phi.values()[i];
    g[i] = -c * lap.values()[i] + prob.m * v - focusing_power(v, prob.p);
  }
  return SymmetricSequence::projected(phi.box(), g);
}

/// True when phi > 0 at every site with |mu (j + offset)| <= radius.
inline bool positive_on_core(const SymmetricSequence& phi, double radius = kCoreRadius) {
  const LatticeBox& box = phi.box();
  for (std::size_t i = 0; i < box.size(); ++i) {
    const auto x = box.position(i);
    if (std::hypot(x[0], x[1]) <= radius && !(phi.values()[static_cast<Eigen::Index>(i)] > 0.0)) return false;
  }
  return true;
}

namespace detail {

// G0 and its Jacobian on the fundamental domain.
class FoldedDnls {
 public:
  explicit FoldedDnls(const DnlsProblem& prob)
      : fold_(std::make_shared<SymmetryFold>(prob.box())),
        lap_(fold_->laplacian_matrix()),
        c_(prob.a / (prob.mu() * prob.mu())),
        m_(prob.m),
        p_(prob.p),
        scale_(std::sqrt(std::pow(prob.mu(), prob.dim()))) {}

  const SymmetryFold& fold() const noexcept { return *fold_; }
  std::shared_ptr<const SymmetryFold> fold_ptr() const noexcept { return fold_; }

  Eigen::VectorXd G0(const Eigen::VectorXd& x) const {
    Eigen::VectorXd y = -c_ * (lap_ * x) + m_ * x;
    for (Eigen::Index i = 0; i < x.size(); ++i) y[i] -= focusing_power(x[i], p_);
    return y;
  }

  Eigen::SparseMatrix<double> jacobian(const Eigen::VectorXd& x) const {
    Eigen::SparseMatrix<double> J = -c_ * lap_;
    for (Eigen::Index i = 0; i < x.size(); ++i) J.coeffRef(i, i) += m_ - focusing_power_derivative(x[i], p_);
    J.makeCompressed();
    return J;
  }

  void apply_jacobian(const Eigen::VectorXd& x, const Eigen::VectorXd& h, Eigen::VectorXd& y) const {
    y = -c_ * (lap_ * h);
    for (Eigen::Index i = 0; i < x.size(); ++i) y[i] += (m_ - focusing_power_derivative(x[i], p_)) * h[i];
  }

  /// l^2_mu norm of the full field with restriction x.
  double norm_l2mu(const Eigen::VectorXd& x) const { return scale_ * fold_->norm(x); }

 private:
  std::shared_ptr<SymmetryFold> fold_;
  Eigen::SparseMatrix<double> lap_;
  double c_, m_, p_, scale_;
};

// Solves J x = b for a folded operator J that is self-adjoint in the weighted
// inner product: (W J) is symmetric and handled by sparse LDL^T, with sparse
// LU as the fallback when a pivot breaks down.
class FoldedSolver {
 public:
  FoldedSolver(const Eigen::SparseMatrix<double>& J, const Eigen::VectorXd& w) : w_(w) {
    Eigen::SparseMatrix<double> WJ = w.asDiagonal() * J;
    WJ.makeCompressed();
    ldlt_.compute(WJ);
    if (ldlt_.info() == Eigen::Success && ldlt_.vectorD().cwiseAbs().minCoeff() > 1e-300) return;
    lu_ = std::make_unique<Eigen::SparseLU<Eigen::SparseMatrix<double>>>();
    lu_->compute(J);
    if (lu_->info() != Eigen::Success) throw GuardViolation("folded Jacobian is singular (factorization failed)");
  }

  Eigen::VectorXd solve(const Eigen::VectorXd& b) const {
    if (lu_) return lu_->solve(b);
    return ldlt_.solve(w_.cwiseProduct(b));
  }

 private:
  Eigen::VectorXd w_;
  Eigen::SimplicialLDLT<Eigen::SparseMatrix<double>> ldlt_;
  std::unique_ptr<Eigen::SparseLU<Eigen::SparseMatrix<double>>> lu_;
};

struct LanczosResult {
  std::vector<double> ritz;      // ascending
  std::vector<double> residual;  // |beta_k s_k| per Ritz value
  int steps = 0;
};

// Lanczos with full reorthogonalization in the weighted inner product.
// Runs until the two extreme Ritz values have residual below tol * |theta|.
template <class Op>
LanczosResult lanczos(Op&& op, const SymmetryFold& fold, Eigen::VectorXd start, int max_steps, double tol,
                      const Eigen::VectorXd* deflate = nullptr) {
  const Eigen::Index N = start.size();
  auto project = [&](Eigen::VectorXd& x) {
    if (deflate) x -= (fold.dot(x, *deflate) / fold.dot(*deflate, *deflate)) * *deflate;
  };
  max_steps = static_cast<int>(std::min<Eigen::Index>(max_steps, N - (deflate ? 1 : 0)));
  project(start);
  std::vector<Eigen::VectorXd> Q;
  std::vector<double> alpha, beta;
  Q.push_back(start / fold.norm(start));
  LanczosResult out;
  Eigen::VectorXd z;
  for (int k = 0; k < max_steps; ++k) {
    z = op(Q.back());
    project(z);
    const double a = fold.dot(z, Q.back());
    alpha.push_back(a);
    for (int pass = 0; pass < 2; ++pass) {
      for (const auto& q : Q) z -= fold.dot(z, q) * q;
      project(z);
    }
    const double b = fold.norm(z);
    const int m = static_cast<int>(alpha.size());
    Eigen::VectorXd d = Eigen::Map<Eigen::VectorXd>(alpha.data(), m);
    Eigen::VectorXd e(std::max(m - 1, 0));
    for (int i = 0; i + 1 < m; ++i) e[i] = beta[static_cast<std::size_t>(i)];
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es;
    es.computeFromTridiagonal(d, e, Eigen::ComputeEigenvectors);
    out.ritz.assign(es.eigenvalues().data(), es.eigenvalues().data() + m);
    out.residual.resize(static_cast<std::size_t>(m));
    for (int i = 0; i < m; ++i) out.residual[static_cast<std::size_t>(i)] = std::abs(b * es.eigenvectors()(m - 1, i));
    out.steps = m;
    const bool lo_ok = out.residual.front() <= tol * std::abs(out.ritz.front());
    const bool hi_ok = out.residual.back() <= tol * std::abs(out.ritz.back());
    if ((m >= 2 && lo_ok && hi_ok) || b < 1e-300 * std::abs(a) || k + 1 == max_steps) break;
    beta.push_back(b);
    Q.push_back(z / b);
  }
  return out;
}

// A deterministic, generic starting vector.
inline Eigen::VectorXd lanczos_start(Eigen::Index n) {
  Eigen::VectorXd s(n);
  for (Eigen::Index i = 0; i < n; ++i) s[i] = 1.0 + 0.5 * std::sin(1.7 * static_cast<double>(i) + 0.3);
  return s;
}

}  // namespace detail

struct NewtonReport {
  int iterations = 0;
  std::vector<double> residual_history;  // l^2_mu norms, starting with the initial guess
  int damped_steps = 0;

  nlohmann::json to_json() const {
    return {{"iterations", iterations}, {"residual_history", residual_history}, {"damped_steps", damped_steps}};
  }
};

struct DnlsGroundState {
  SymmetricSequence Phi;
  double residual = 0.0;
  bool positive_core = false;
  NewtonReport newton;
};

namespace detail {

inline std::string trace_string(const std::vector<double>& h) {
  std::string s;
  for (std::size_t i = 0; i < h.size(); ++i) s += (i ? ", " : "") + io::format_double(h[i]);
  return s;
}

}  // namespace detail

/// Newton on G0 = 0 from `init` (typically the sampled continuum ground state).
/// Steps that increase the residual are halved up to 30 times.
inline DnlsGroundState solve_dnls_ground_state(const DnlsProblem& prob, const SymmetricSequence& init,
                                               double tol = kDnlsTol, int max_iter = 60) {
  if (!(tol > 0.0)) throw InvalidArgument("solve_dnls_ground_state: tol must be positive");
  if (!(init.box() == prob.box())) throw InvalidArgument("solve_dnls_ground_state: initial guess has the wrong box");
  const detail::FoldedDnls F(prob);
  Eigen::VectorXd x = F.fold().restrict(init);
  Eigen::VectorXd g = F.G0(x);
  double res = F.norm_l2mu(g);
  NewtonReport rep;
  rep.residual_history.push_back(res);
  for (int it = 0; it < max_iter && res >= tol; ++it) {
    const detail::FoldedSolver J(F.jacobian(x), F.fold().weights());
    const Eigen::VectorXd dx = J.solve(-g);
    double t = 1.0;
    Eigen::VectorXd xn, gn;
    double rn = 0.0;
    for (int half = 0; half <= 30; ++half, t *= 0.5) {
      xn = x + t * dx;
      gn = F.G0(xn);
      rn = F.norm_l2mu(gn);
      if (std::isfinite(rn) && rn < res) break;
      ++rep.damped_steps;
    }
    if (!std::isfinite(rn) || rn >= res) {
      rep.residual_history.push_back(rn);
      throw NonConvergence("dNLS Newton stalled; residual trace: " + detail::trace_string(rep.residual_history), res);
    }
    x = std::move(xn);
    g = std::move(gn);
    res = rn;
    rep.residual_history.push_back(res);
    rep.iterations = it + 1;
  }
  if (!(res < tol)) {
    throw NonConvergence("dNLS Newton did not reach tol; residual trace: " + detail::trace_string(rep.residual_history),
                         res);
  }
  DnlsGroundState out{F.fold().expand(x), res, false, std::move(rep)};
  out.positive_core = positive_on_core(out.Phi);
  return out;
}

/// R_V(phi) = -mu^{-2-1/p} ( Pi_V N(v + w(v)) - |v|^{2p} v ),  v = mu^{1/p} phi.
/// Pi_V N(v) = |v|^{2p} v holds exactly in continuous time; subtracting the
/// exact value keeps G = G0 + R_V identical to the collocated harmonic-1 KG
/// balance. The last range solution warm-starts the next call.
class KernelRemainder {
 public:
  KernelRemainder(const DnlsProblem& prob, int L = kDefaultLmax, int collocation_half_nodes = 0)
      : mu_(prob.mu()),
        p_(prob.p),
        op_(std::make_shared<RangeOperator>(prob.omega(), prob.a, prob.box(), L)),
        nl_(Nonlinearity::normalized(prob.p)),
        tr_(std::make_shared<CosineTransform>(L, collocation_half_nodes)),
        Mh_(collocation_half_nodes) {}

  const RangeOperator& range_operator() const noexcept { return *op_; }
  const Nonlinearity& nonlinearity() const noexcept { return nl_; }
  int L() const noexcept { return op_->L(); }
  double amplitude_scale() const noexcept { return std::pow(mu_, 1.0 / p_); }

  /// R_V on the restriction of phi. With keep = false the warm start and the
  /// stored range solution are left untouched (used for probes).
  Eigen::VectorXd reduced(const Eigen::VectorXd& phi, bool keep = true) {
    const SymmetryFold& fold = op_->fold();
    const double s = amplitude_scale();
    const Eigen::VectorXd v = s * phi;
    Eigen::VectorXd Nv(v.size());
    for (Eigen::Index i = 0; i < v.size(); ++i) Nv[i] = focusing_power(v[i], p_);
    RangeOptions opt;
    opt.collocation_half_nodes = Mh_;
    opt.tol = std::max(1e-12 * std::sqrt(std::numbers::pi) * fold.norm(Nv), 1e-300);
    auto sol = solve_range_reduced(v, *op_, nl_, opt, last_w_ ? &*last_w_ : nullptr);
    Eigen::MatrixXd u = sol.w;
    u.col(1) = v;
    const Eigen::MatrixXd Nu = apply_N_coeffs(u, nl_.p, nl_.beta, *tr_);
    const double scale = -1.0 / (mu_ * mu_ * s);
    Eigen::VectorXd r = scale * (Nu.col(1) - Nv);
    if (keep) {
      last_w_ = std::move(sol.w);
      last_report_ = std::move(sol.report);
    }
    return r;
  }

  SymmetricSequence operator()(const SymmetricSequence& phi) {
    return op_->fold().expand(reduced(op_->fold().restrict(phi)));
  }

  /// Reduced range correction w(v) of the last kept evaluation.
  const std::optional<Eigen::MatrixXd>& last_range_solution() const noexcept { return last_w_; }
  const RangeReport& last_report() const noexcept { return last_report_; }

 private:
  double mu_, p_;
  std::shared_ptr<RangeOperator> op_;
  Nonlinearity nl_;
  std::shared_ptr<CosineTransform> tr_;
  int Mh_;
  std::optional<Eigen::MatrixXd> last_w_;
  RangeReport last_report_;
};

/// One-shot R_V evaluation.
inline SymmetricSequence R_V(const SymmetricSequence& phi, const DnlsProblem& prob, int L = kDefaultLmax) {
  if (!(phi.box() == prob.box())) throw InvalidArgument("R_V: sequence does not match the problem grid and mode");
  KernelRemainder rv(prob, L);
  return rv(phi);
}

struct KernelOptions {
  double tol = kKernelTol;
  int max_iter = 30;
  int L = kDefaultLmax;
  int collocation_half_nodes = 0;
  double fd_scale = 1e-6;
  double gmres_tol = 1e-10;
  int gmres_max = 60;
  bool include_remainder = true;  // false: R_V switched off (G = G0)
};

struct KernelSolution {
  SymmetricSequence phi;
  SymmetricSequence Phi;
  double residual = 0.0;          // ||G(phi)||_{l2_mu}
  double residual_G0_Phi = 0.0;   // ||G0(Phi)||_{l2_mu}
  double dist_phi_Phi = 0.0;      // ||phi - Phi||_{Q_mu}
  double dist_Phi_psi = 0.0;      // ||Phi - psi||_{Q_mu}, psi the sampled continuum state
  double norm_R_V_Phi = 0.0;      // ||R_V(Phi)||_{l2_mu}
  NewtonReport newton;
  std::vector<int> gmres_iterations;
  Eigen::MatrixXd w_reduced;      // range correction at phi, reduced coefficients
  RangeReport range;

  nlohmann::json to_json() const {
    return {{"residual_G", residual},
            {"residual_G0_Phi", residual_G0_Phi},
            {"dist_phi_Phi_Qmu", dist_phi_Phi},
            {"dist_Phi_psi_Qmu", dist_Phi_psi},
            {"norm_R_V_Phi_l2mu", norm_R_V_Phi},
            {"newton", newton.to_json()},
            {"gmres_iterations", gmres_iterations},
            {"range", range.to_json()}};
  }
};

namespace detail {

// Right-preconditioned restarted-free GMRES for A x = b, x0 = 0.
template <class Op, class Prec>
Eigen::VectorXd gmres(Op&& A, Prec&& M, const Eigen::VectorXd& b, double rtol, int max_it, int& iters) {
  const double bn = b.norm();
  iters = 0;
  if (bn == 0.0) return Eigen::VectorXd::Zero(b.size());
  std::vector<Eigen::VectorXd> V{b / bn}, Z;
  Eigen::MatrixXd H = Eigen::MatrixXd::Zero(max_it + 1, max_it);
  Eigen::VectorXd y;
  for (int k = 0; k < max_it; ++k) {
    Z.push_back(M(V[static_cast<std::size_t>(k)]));
    Eigen::VectorXd w = A(Z.back());
    for (int pass = 0; pass < 2; ++pass) {
      for (int i = 0; i <= k; ++i) {
        const double h = V[static_cast<std::size_t>(i)].dot(w);
        H(i, k) += h;
        w -= h * V[static_cast<std::size_t>(i)];
      }
    }
    H(k + 1, k) = w.norm();
    iters = k + 1;
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(k + 2);
    rhs[0] = bn;
    const Eigen::MatrixXd Hk = H.topLeftCorner(k + 2, k + 1);
    y = Hk.colPivHouseholderQr().solve(rhs);
    const double res = (rhs - Hk * y).norm();
    if (res <= rtol * bn || H(k + 1, k) <= 1e-300) break;
    V.push_back(w / H(k + 1, k));
  }
  Eigen::VectorXd x = Eigen::VectorXd::Zero(b.size());
  for (int i = 0; i < iters; ++i) x += y[i] * Z[static_cast<std::size_t>(i)];
  return x;
}

}  // namespace detail

struct HessianReport {
  double d = 0.0;                    // <G0'(Phi) Phi, Phi>
  double identity_error = 0.0;       // |d + 2p sum Phi^{2p+2}|
  double identity_relative = 0.0;
  double tangent_min_eigenvalue = 0.0;
  double min_singular_value = 0.0;
  bool consistent = true;
  std::string method;  // "dense" or "lanczos"

  nlohmann::json to_json() const {
    return {{"d", d},
            {"identity_error", identity_error},
            {"identity_relative", identity_relative},
            {"tangent_min_eigenvalue", tangent_min_eigenvalue},
            {"min_singular_value", min_singular_value},
            {"consistent", consistent},
            {"method", method}};
  }
};

inline constexpr Eigen::Index kDenseEigenLimit = 4000;

/// Non-degeneracy diagnostics of G0'(Phi) within the symmetry class, in the
/// l^2 inner product of the full lattice. Dense eigensolvers on small folded
/// problems, Lanczos (on the constrained inverse) otherwise.
inline HessianReport hessian_diagnostics(const DnlsProblem& prob, const SymmetricSequence& Phi, bool force_lanczos = false) {
  if (!(Phi.box() == prob.box())) throw InvalidArgument("hessian_diagnostics: sequence has the wrong box");
  const detail::FoldedDnls F(prob);
  const SymmetryFold& fold = F.fold();
  const Eigen::VectorXd x = fold.restrict(Phi);
  const Eigen::SparseMatrix<double> J = F.jacobian(x);
  HessianReport rep;

  const Eigen::VectorXd Jx = J * x;
  rep.d = fold.dot(Jx, x);
  double s = 0.0;
  for (Eigen::Index i = 0; i < x.size(); ++i) s += fold.weights()[i] * abs_pow(x[i], 2.0 * prob.p + 2.0);
  rep.identity_error = std::abs(rep.d + 2.0 * prob.p * s);
  rep.identity_relative = rep.d != 0.0 ? rep.identity_error / std::abs(rep.d) : 0.0;
  rep.consistent = rep.identity_error <= 1e-8 * std::abs(rep.d);

  const Eigen::Index N = x.size();
  if (N <= kDenseEigenLimit && !force_lanczos) {
    rep.method = "dense";
    // S = W^{1/2} J W^{-1/2} is symmetric with the spectrum of J.
    const Eigen::VectorXd sw = fold.weights().cwiseSqrt();
    Eigen::MatrixXd S = sw.asDiagonal() * Eigen::MatrixXd(J) * sw.cwiseInverse().asDiagonal();
    S = 0.5 * (S + S.transpose()).eval();
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> full(S, Eigen::EigenvaluesOnly);
    rep.min_singular_value = full.eigenvalues().cwiseAbs().minCoeff();
    // Orthonormal basis of the complement of u = W^{1/2} x via one Householder reflection.
    Eigen::VectorXd u = sw.cwiseProduct(x);
    Eigen::VectorXd ess(N - 1);
    double tau = 0.0, beta = 0.0;
    u.makeHouseholder(ess, tau, beta);
    Eigen::MatrixXd Hm = Eigen::MatrixXd::Identity(N, N);
    Eigen::VectorXd work(N);
    Hm.applyHouseholderOnTheLeft(ess, tau, work.data());
    const Eigen::MatrixXd B = (Hm.transpose() * S * Hm).bottomRightCorner(N - 1, N - 1);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> tan(0.5 * (B + B.transpose()), Eigen::EigenvaluesOnly);
    rep.tangent_min_eigenvalue = tan.eigenvalues()[0];
    return rep;
  }

  rep.method = "lanczos";
  const detail::FoldedSolver solver(J, fold.weights());
  const Eigen::VectorXd Jinv_x = solver.solve(x);
  const double c = fold.dot(Jinv_x, x);
  // On {h : <h, Phi> = 0}, (P J P)^{-1} b = J^{-1} b - (<J^{-1} b, Phi> / <J^{-1} Phi, Phi>) J^{-1} Phi.
  auto constrained_inverse = [&](const Eigen::VectorXd& b) {
    Eigen::VectorXd y = solver.solve(b);
    return Eigen::VectorXd(y - (fold.dot(y, x) / c) * Jinv_x);
  };
  auto inverse = [&](const Eigen::VectorXd& b) { return solver.solve(b); };
  const Eigen::VectorXd start = detail::lanczos_start(N);
  const auto tan = detail::lanczos(constrained_inverse, fold, start, 200, 1e-10, &x);
  const auto full = detail::lanczos(inverse, fold, start, 200, 1e-10);
  // Largest |theta| of an inverse is 1 / (eigenvalue closest to zero).
  auto extreme = [](const detail::LanczosResult& r) {
    return std::abs(r.ritz.front()) > std::abs(r.ritz.back()) ? r.ritz.front() : r.ritz.back();
  };
  rep.min_singular_value = 1.0 / std::abs(extreme(full));
  // Coercive: all constrained eigenvalues positive, so all theta > 0 and the
  // smallest eigenvalue is 1 / theta_max. A negative theta signals a negative
  // constrained eigenvalue; report the one closest to zero.
  rep.tangent_min_eigenvalue = tan.ritz.front() < 0.0 ? 1.0 / tan.ritz.front() : 1.0 / tan.ritz.back();
  return rep;
}

/// Newton-Krylov on G = G0 + R_V from Phi, holding m fixed. Each Jacobian
/// action is G0'(phi) h plus a forward difference of R_V along h; the exact
/// G0'(phi) (sparse factorization) is the right preconditioner.
/// `start` (default Phi) seeds the iteration, e.g. a solution at another L.
inline KernelSolution solve_kernel(const DnlsProblem& prob, const SymmetricSequence& Phi, const KernelOptions& opt = {},
                                   const SymmetricSequence* psi = nullptr, const SymmetricSequence* start = nullptr) {
  if (!(Phi.box() == prob.box())) throw InvalidArgument("solve_kernel: Phi has the wrong box");
  if (start && !(start->box() == prob.box())) throw InvalidArgument("solve_kernel: start has the wrong box");
  if (!(opt.tol > 0.0)) throw InvalidArgument("solve_kernel: tol must be positive");
  const detail::FoldedDnls F(prob);
  const SymmetryFold& fold = F.fold();
  KernelRemainder rv(prob, opt.L, opt.collocation_half_nodes);

  const Eigen::VectorXd X = fold.restrict(Phi);
  auto G = [&](const Eigen::VectorXd& x, bool keep) {
    Eigen::VectorXd g = F.G0(x);
    if (opt.include_remainder) g += rv.reduced(x, keep);
    return g;
  };

  KernelSolution out{Phi, Phi};
  out.residual_G0_Phi = F.norm_l2mu(F.G0(X));
  if (opt.include_remainder) out.norm_R_V_Phi = F.norm_l2mu(rv.reduced(X, start == nullptr));
  Eigen::VectorXd x = start ? fold.restrict(*start) : X;
  Eigen::VectorXd g = G(x, true);
  double res = F.norm_l2mu(g);
  NewtonReport& rep = out.newton;
  rep.residual_history.push_back(res);

  for (int it = 0; it < opt.max_iter && res >= opt.tol; ++it) {
    const auto Jg0 = F.jacobian(x);
    std::optional<detail::FoldedSolver> pre;
    try {
      pre.emplace(Jg0, fold.weights());
    } catch (const GuardViolation&) {
      const auto h = hessian_diagnostics(prob, fold.expand(x));
      throw GuardViolation("kernel Jacobian is singular; smallest singular value of G0' = " +
                           io::format_double(h.min_singular_value));
    }
    Eigen::VectorXd dx;
    if (opt.include_remainder) {
      const Eigen::VectorXd rv0 = g - F.G0(x);
      const double h = opt.fd_scale * (1.0 + fold.norm(x));
      auto Jop = [&](const Eigen::VectorXd& d) {
        Eigen::VectorXd y;
        F.apply_jacobian(x, d, y);
        const double dn = fold.norm(d);
        if (dn == 0.0) return y;
        const Eigen::VectorXd probe = rv.reduced(x + (h / dn) * d, false);
        y += (dn / h) * (probe - rv0);
        return y;
      };
      auto M = [&](const Eigen::VectorXd& v) { return pre->solve(v); };
      int gi = 0;
      dx = detail::gmres(Jop, M, -g, opt.gmres_tol, opt.gmres_max, gi);
      out.gmres_iterations.push_back(gi);
    } else {
      dx = pre->solve(-g);
    }
    double t = 1.0;
    Eigen::VectorXd xn, gn;
    double rn = 0.0;
    for (int half = 0; half <= 20; ++half, t *= 0.5) {
      xn = x + t * dx;
      gn = G(xn, true);
      rn = F.norm_l2mu(gn);
      if (std::isfinite(rn) && rn < res) break;
      ++rep.damped_steps;
    }
    if (!std::isfinite(rn) || rn >= res) {
      rep.residual_history.push_back(rn);
      throw NonConvergence("kernel Newton stalled; residual trace: " + detail::trace_string(rep.residual_history), res);
    }
    x = std::move(xn);
    g = std::move(gn);
    res = rn;
    rep.residual_history.push_back(res);
    rep.iterations = it + 1;
  }
  if (!(res < opt.tol)) {
    throw NonConvergence("kernel Newton did not reach tol; residual trace: " + detail::trace_string(rep.residual_history),
                         res);
  }
  if (opt.include_remainder) {
    // Make the stored range correction belong to the accepted iterate.
    g = G(x, true);
    out.w_reduced = *rv.last_range_solution();
    out.range = rv.last_report();
  } else {
    out.w_reduced = Eigen::MatrixXd::Zero(fold.size(), opt.L + 1);
  }
  out.phi = fold.expand(x);
  out.residual = res;
  out.dist_phi_Phi = norm_Q_mu(out.phi - Phi, prob.mu());
  if (psi) out.dist_Phi_psi = norm_Q_mu(Phi - *psi, prob.mu());
  return out;
}

inline void save_kernel_solution(const KernelSolution& s, const std::string& csv_path, const std::string& json_path) {
  save_csv(s.phi, csv_path);
  auto os = io::open_out(json_path);
  os << s.to_json().dump(2) << '\n';
  if (!os) throw IoError("failed writing " + json_path);
}

}  // namespace kgbreather
