#pragma once

// Full breather q(t) = v(omega t) + w(v)(omega t): assembly from the
// continuum, kernel and range stages, KG residual certificate, comparison
// with the reference solution, mu sweeps and a leapfrog periodicity check.

#include <boost/math/distributions/students_t.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "kgbreather/continuum_nls.hpp"
#include "kgbreather/errors.hpp"
#include "kgbreather/io_util.hpp"
#include "kgbreather/kernel_solver.hpp"
#include "kgbreather/lattice.hpp"
#include "kgbreather/lattice_io.hpp"
#include "kgbreather/range_solver.hpp"
#include "kgbreather/time_spectral.hpp"

namespace kgbreather {

struct BreatherConfig {
  int n = 1;
  double p = 1.0;
  double a = 0.25;
  double mu = 0.1;
  std::string mode = "st";
  int K = 0;                     // 0: derived from decay_budget / mu
  double decay_budget = 0.0;     // 0: 80 in 1D, 50 in 2D
  int L = kDefaultLmax;          // first number of harmonics tried
  int max_L = 255;               // adaptive ceiling (L -> 2L + 1)
  double kernel_tol = kKernelTol;
  double residual_target = 0.0;  // 0: 1e-10 in 1D, 1e-9 in 2D
  double tail_tol = 1e-8;        // edge value of phi relative to its peak
  double harmonic_tail_tol = 1e-10;  // last harmonic relative to harmonic 1

  double budget() const noexcept { return decay_budget > 0.0 ? decay_budget : (n == 1 ? 80.0 : 50.0); }
  double target() const noexcept { return residual_target > 0.0 ? residual_target : (n == 1 ? 1e-10 : 1e-9); }

  void validate() const {
    if (n != 1 && n != 2) throw InvalidArgument("breather: n must be 1 or 2");
    check_exponent(n, p);
    if (!(a > 0.0 && a < 0.5)) throw InvalidArgument("breather: a must lie in (0, 1/2)");
    if (!(mu > 0.0) || !std::isfinite(mu)) throw InvalidArgument("breather: mu must be positive");
    if (K < 0) throw InvalidArgument("breather: K must be >= 0");
    if (L < 2 || max_L < L) throw InvalidArgument("breather: need 2 <= L <= max_L");
    if (!(tail_tol > 0.0) || !(harmonic_tail_tol > 0.0)) throw InvalidArgument("breather: tail tolerances must be positive");
    if (!(kernel_tol > 0.0)) throw InvalidArgument("breather: kernel tolerance must be positive");
    ModeSpec::parse(n, mode);
  }

  GridSpec grid() const { return K > 0 ? GridSpec(n, K, mu, 0.0) : GridSpec::covering(n, mu, budget()); }

  nlohmann::json to_json() const {
    return {{"n", n},
            {"p", p},
            {"a", a},
            {"mu", mu},
            {"mode", mode},
            {"K", K},
            {"decay_budget", budget()},
            {"L", L},
            {"max_L", max_L},
            {"kernel_tol", kernel_tol},
            {"residual_target", target()},
            {"tail_tol", tail_tol},
            {"harmonic_tail_tol", harmonic_tail_tol}};
  }
};

struct Breather {
  BreatherConfig config;
  double m = 0.0;
  double omega = 0.0;
  double beta = 0.0;
  std::shared_ptr<const SymmetryFold> fold;
  Eigen::MatrixXd u;  // reduced cosine coefficients in t' = omega t, harmonic 1 = mu^{1/p} phi
  double residual = 0.0;  // max_j,t |KG residual|
  std::vector<std::pair<int, double>> L_history;  // (L, residual) per attempt

  // Stage outputs (absent for breathers loaded from disk).
  std::optional<SymmetricSequence> psi, Phi;
  nlohmann::json stages;

  int L() const noexcept { return static_cast<int>(u.cols()) - 1; }
  const LatticeBox& box() const noexcept { return fold->box(); }
  ModeSpec mode() const { return ModeSpec::parse(config.n, config.mode); }
  double amplitude_scale() const { return std::pow(config.mu, 1.0 / config.p); }

  SymmetricSequence harmonic(int l) const { return fold->expand(u.col(l)); }
  SymmetricSequence phi() const { return fold->expand(u.col(1) / amplitude_scale()); }
  TimeFourierField field() const { return TimeFourierField::from_reduced(*fold, u); }

  /// l^2 norm of each harmonic on the full lattice.
  std::vector<double> harmonic_norms() const {
    std::vector<double> h;
    for (int l = 0; l <= L(); ++l) h.push_back(fold->norm(u.col(l)));
    return h;
  }

  bool harmonic_one_dominates() const {
    const auto h = harmonic_norms();
    for (int l = 0; l <= L(); ++l) {
      if (l != 1 && !(h[1] > h[static_cast<std::size_t>(l)])) return false;
    }
    return true;
  }

  /// Largest reflection asymmetry over all harmonics of the full field.
  double symmetry_error() const {
    double e = 0.0;
    for (int l = 0; l <= L(); ++l) e = std::max(e, harmonic(l).asymmetry());
    return e;
  }

  double norm_w_X2() const {
    Eigen::MatrixXd w = u;
    w.col(1).setZero();
    return reduced_norm_X2(*fold, w);
  }

  /// ||u_L|| / ||u_1||; the even top harmonic vanishes by parity, so the
  /// last odd one is used.
  double harmonic_tail() const {
    const auto h = harmonic_norms();
    const int top = L() % 2 == 1 ? L() : L() - 1;
    return h[1] > 0.0 ? h[static_cast<std::size_t>(top)] / h[1] : 0.0;
  }

  bool harmonics_resolved() const { return harmonic_tail() < config.harmonic_tail_tol; }

  /// Share of the X0 norm carried by the harmonics l != 1.
  double tail_fraction() const {
    Eigen::MatrixXd w = u;
    w.col(1).setZero();
    const double all = reduced_norm_X0(*fold, u);
    return all > 0.0 ? reduced_norm_X0(*fold, w) / all : 0.0;
  }

  nlohmann::json report() const {
    nlohmann::json hist = nlohmann::json::array();
    for (const auto& [l, r] : L_history) hist.push_back({{"L", l}, {"kg_residual", r}});
    return {{"config", config.to_json()},
            {"K", box().grid().radius()},
            {"m", m},
            {"omega", omega},
            {"beta", beta},
            {"L", L()},
            {"kg_residual", residual},
            {"L_history", hist},
            {"harmonic_one_dominates", harmonic_one_dominates()},
            {"norm_w_X2", norm_w_X2()},
            {"tail_fraction", tail_fraction()},
            {"harmonic_tail", harmonic_tail()},
            {"harmonics_resolved", harmonics_resolved()},
            {"stages", stages}};
  }
};

namespace detail {

// Rethrows library errors with a stage tag, keeping their type.
template <class F>
auto staged(const std::string& stage, F&& f) -> decltype(f()) {
  try {
    return f();
  } catch (const GuardViolation& e) {
    throw GuardViolation(stage + ": " + e.what());
  } catch (const NonConvergence& e) {
    throw NonConvergence(stage + ": " + e.what(), e.last_residual());
  } catch (const InvalidArgument& e) {
    throw InvalidArgument(stage + ": " + e.what());
  } catch (const IoError& e) {
    throw IoError(stage + ": " + e.what());
  }
}

// Max over sites and nodes of |f(samples)| for reduced coefficient rows,
// processed in row blocks to bound memory.
template <class F>
double max_over_samples(const Eigen::MatrixXd& lin, const Eigen::MatrixXd& c, const CosineTransform& tr, F&& f) {
  double mx = 0.0;
  const Eigen::Index block = 2048;
  for (Eigen::Index r0 = 0; r0 < c.rows(); r0 += block) {
    const Eigen::Index nb = std::min(block, c.rows() - r0);
    const Eigen::MatrixXd s = tr.synthesize(c.middleRows(r0, nb));
    const Eigen::MatrixXd sl = lin.size() ? tr.synthesize(lin.middleRows(r0, nb)) : Eigen::MatrixXd();
    for (Eigen::Index i = 0; i < s.size(); ++i) mx = std::max(mx, std::abs(f(sl.size() ? sl.data()[i] : 0.0, s.data()[i])));
  }
  return mx;
}

inline double edge_ratio(const SymmetricSequence& phi) {
  const LatticeBox& box = phi.box();
  double edge = 0.0;
  for (std::size_t i = 0; i < box.size(); ++i) {
    const auto s = box.site(i);
    bool on_edge = false;
    for (int m = 0; m < box.dim(); ++m) on_edge = on_edge || s[m] == box.upper(m) || s[m] == box.lower(m);
    if (on_edge) edge = std::max(edge, std::abs(phi.values()[static_cast<Eigen::Index>(i)]));
  }
  const double peak = sup_norm(phi);
  return peak > 0.0 ? edge / peak : 0.0;
}

}  // namespace detail

/// max over sites and M_t + 1 half-period nodes of
/// |omega^2 u'' + u - a Delta u - beta |u|^{2p} u|, u'' from the cosine series.
inline double kg_residual(const Breather& b, int M_t = 0) {
  const int L = b.L();
  if (M_t == 0) M_t = 8 * (L + 1);
  if (M_t < 4 * (L + 1)) throw InvalidArgument("kg_residual: need at least 4 (L + 1) time samples");
  const CosineTransform tr(L, M_t);
  Eigen::MatrixXd lin(b.u.rows(), b.u.cols());
  Eigen::VectorXd lap;
  for (int l = 0; l <= L; ++l) {
    b.fold->apply_laplacian(b.u.col(l), lap);
    lin.col(l) = (1.0 - b.omega * b.omega * l * l) * b.u.col(l) - b.config.a * lap;
  }
  const double p = b.config.p, beta = b.beta;
  return detail::max_over_samples(lin, b.u, tr, [p, beta](double linear, double s) { return linear - beta * focusing_power(s, p); });
}

/// Runs continuum -> dNLS -> kernel (with range) and packages the breather.
/// The number of harmonics doubles (L -> 2L + 1) until the KG residual meets
/// the target and the last harmonic is negligible, or max_L is reached; the last attempt is returned either way.
inline Breather assemble(const BreatherConfig& cfg, const GroundStateProfile* profile = nullptr) {
  detail::staged("config", [&] { cfg.validate(); });
  std::optional<GroundStateProfile> own;
  if (!profile) {
    own.emplace(detail::staged("continuum", [&] { return solve_ground_state(cfg.n, cfg.p); }));
    profile = &*own;
  }
  if (profile->dim() != cfg.n || profile->p() != cfg.p) throw InvalidArgument("assemble: profile does not match n and p");

  const ModeSpec mode = ModeSpec::parse(cfg.n, cfg.mode);
  const GridSpec grid = detail::staged("config", [&] { return cfg.grid(); });
  const DnlsProblem prob = detail::staged("config", [&] { return DnlsProblem(grid, cfg.a, cfg.p, profile->m(), mode); });
  const SymmetricSequence psi = sample_reference(*profile, grid, mode, cfg.a);

  const auto dnls = detail::staged("dnls", [&] { return solve_dnls_ground_state(prob, psi); });
  if (!dnls.positive_core) throw GuardViolation("dnls: ground state is not positive on its core");
  const double edge = detail::edge_ratio(dnls.Phi);
  if (edge > cfg.tail_tol) {
    throw GuardViolation("dnls: ground state has not decayed at the box edge (ratio " + io::format_double(edge) +
                         "); increase K or the decay budget");
  }

  Breather b;
  b.config = cfg;
  b.m = profile->m();
  b.omega = prob.omega();
  b.beta = beta(cfg.p);
  b.psi = psi;
  b.Phi = dnls.Phi;

  std::optional<SymmetricSequence> start;
  std::optional<KernelSolution> ks;
  for (int L = cfg.L;; L = 2 * L + 1) {
    KernelOptions kopt;
    kopt.tol = cfg.kernel_tol;
    kopt.L = L;
    ks.emplace(detail::staged("kernel", [&] { return solve_kernel(prob, dnls.Phi, kopt, &psi, start ? &*start : nullptr); }));
    const SymmetryFold& fold = [&]() -> const SymmetryFold& {
      if (!b.fold) b.fold = std::make_shared<SymmetryFold>(prob.box());
      return *b.fold;
    }();
    b.u = ks->w_reduced;
    b.u.col(1) = b.amplitude_scale() * fold.restrict(ks->phi);
    b.residual = kg_residual(b);
    b.L_history.emplace_back(L, b.residual);
    if ((b.residual < cfg.target() && b.harmonics_resolved()) || 2 * L + 1 > cfg.max_L) break;
    start = ks->phi;
  }
  b.stages = {{"dnls", {{"residual", dnls.residual}, {"newton", dnls.newton.to_json()}, {"edge_ratio", edge}}},
              {"kernel", ks->to_json()}};
  return b;
}

struct ReferenceError {
  double e_H2 = 0.0;
  double e_sup = 0.0;
  double sobolev_bound = 0.0;  // 2 sqrt(mu) sum_l ||(q - Psi)_l||_Q
  bool sobolev_holds = true;
};

/// Distance to Psi(t) = mu^{1/p} cos(omega t) psi over one period T = 2 pi / omega:
/// e_H2^2 = sum_l (1 + (omega l)^2 + (omega l)^4) (w_l / omega) ||q_l - Psi_l||^2.
inline ReferenceError error_vs_reference(const Breather& b, const SymmetricSequence& psi) {
  if (!(psi.box() == b.box())) throw InvalidArgument("error_vs_reference: reference lives on a different grid or mode");
  const SymmetryFold& fold = *b.fold;
  Eigen::MatrixXd d = b.u;
  d.col(1) -= b.amplitude_scale() * fold.restrict(psi);
  ReferenceError e;
  const double mu = b.config.mu, om = b.omega;
  double h2 = 0.0;
  Eigen::VectorXd lap;
  for (int l = 0; l <= b.L(); ++l) {
    const double k = om * l, k2 = k * k;
    const double nn = fold.dot(d.col(l), d.col(l));
    h2 += (1.0 + k2 + k2 * k2) * harmonic_weight(l) / om * nn;
    fold.apply_laplacian(d.col(l), lap);
    const double q2 = nn - fold.dot(d.col(l), lap) / (mu * mu);
    e.sobolev_bound += std::sqrt(std::max(q2, 0.0));
  }
  e.e_H2 = std::sqrt(h2);
  e.sobolev_bound *= 2.0 * std::sqrt(mu);
  const CosineTransform tr(b.L(), 4 * (b.L() + 1));
  e.e_sup = detail::max_over_samples(Eigen::MatrixXd(), d, tr, [](double, double s) { return s; });
  e.sobolev_holds = e.e_sup <= e.sobolev_bound * (1.0 + 1e-12);
  return e;
}

struct DynamicsReport {
  double return_error = 0.0;
  double energy_drift = 0.0;  // max relative deviation from the initial energy
  long steps = 0;
  double dt = 0.0;

  nlohmann::json to_json() const {
    return {{"return_error", return_error}, {"energy_drift", energy_drift}, {"steps", steps}, {"dt", dt}};
  }
};

/// Velocity Verlet for q'' = a Delta q - q + beta |q|^{2p} q from (q0, 0) over
/// `periods` periods 2 pi / omega. Returns
/// ||q(T) - q0|| / ||q0|| + ||q'(T)|| / (omega ||q0||) (0 for q0 = 0).
/// Throws NonConvergence when the relative energy drift exceeds max_drift.
inline DynamicsReport integrate_from(const Breather& b, const Eigen::VectorXd& q0, long steps_per_period, int periods = 1,
                                     double max_drift = 1e-8) {
  if (steps_per_period < 1 || periods < 1) throw InvalidArgument("integrate: steps and periods must be positive");
  const SymmetryFold& fold = *b.fold;
  if (q0.size() != fold.size()) throw InvalidArgument("integrate: initial data has the wrong size");
  const double a = b.config.a, p = b.config.p, beta = b.beta;
  const double T = 2.0 * std::numbers::pi / b.omega;
  DynamicsReport rep;
  rep.steps = steps_per_period * periods;
  rep.dt = T / static_cast<double>(steps_per_period);
  const double q0n = fold.norm(q0);
  if (q0n == 0.0) return rep;

  Eigen::VectorXd q = q0, v = Eigen::VectorXd::Zero(q0.size()), f(q0.size()), lap;
  auto force = [&](const Eigen::VectorXd& x, Eigen::VectorXd& out) {
    fold.apply_laplacian(x, lap);
    out = a * lap - x;
    for (Eigen::Index i = 0; i < x.size(); ++i) out[i] += beta * focusing_power(x[i], p);
  };
  auto energy = [&](const Eigen::VectorXd& x, const Eigen::VectorXd& y) {
    fold.apply_laplacian(x, lap);
    double e = 0.5 * fold.dot(y, y) + 0.5 * fold.dot(x, x) - 0.5 * a * fold.dot(x, lap);
    double pot = 0.0;
    for (Eigen::Index i = 0; i < x.size(); ++i) pot += fold.weights()[i] * abs_pow(x[i], 2.0 * p + 2.0);
    return e - beta / (2.0 * p + 2.0) * pot;
  };
  const double E0 = energy(q, v);
  const double h = rep.dt;
  force(q, f);
  const long stride = std::max(1L, steps_per_period / 1000);
  for (long s = 1; s <= rep.steps; ++s) {
    v += 0.5 * h * f;
    q += h * v;
    force(q, f);
    v += 0.5 * h * f;
    if (s % stride == 0 || s == rep.steps) {
      const double E = energy(q, v);
      rep.energy_drift = std::max(rep.energy_drift, E0 != 0.0 ? std::abs(E - E0) / std::abs(E0) : std::abs(E));
    }
  }
  if (rep.energy_drift > max_drift) {
    throw NonConvergence("integrator: relative energy drift " + io::format_double(rep.energy_drift) +
                             " exceeds the bound; increase the steps per period",
                         rep.energy_drift);
  }
  rep.return_error = fold.norm(q - q0) / q0n + fold.norm(v) / (b.omega * q0n);
  return rep;
}

/// Leapfrog run from the breather's own initial data q(0) = sum_l u_l.
inline DynamicsReport integrate_period(const Breather& b, long steps_per_period = 100000, int periods = 1,
                                       double max_drift = 1e-8) {
  return integrate_from(b, b.u.rowwise().sum(), steps_per_period, periods, max_drift);
}

/// The same run seeded with the reference Psi(0) = mu^{1/p} psi.
inline DynamicsReport integrate_reference(const Breather& b, const SymmetricSequence& psi, long steps_per_period = 100000,
                                          int periods = 1, double max_drift = 1e-8) {
  if (!(psi.box() == b.box())) throw InvalidArgument("integrate_reference: reference lives on a different grid or mode");
  return integrate_from(b, b.amplitude_scale() * b.fold->restrict(psi), steps_per_period, periods, max_drift);
}

// ---------------------------------------------------------------------------
// mu sweeps

struct SlopeFit {
  double slope = 0.0;
  double stderr_ = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  double target = 0.0;
  int count = 0;

  nlohmann::json to_json() const {
    return {{"slope", slope}, {"stderr", stderr_}, {"ci95", {ci_low, ci_high}}, {"target", target}, {"points", count}};
  }
};

/// Least-squares slope of log y against log x with a 95% Student-t interval.
inline SlopeFit fit_loglog(const std::vector<double>& x, const std::vector<double>& y, double target = 0.0) {
  if (x.size() != y.size() || x.size() < 2) throw InvalidArgument("fit_loglog: need at least two points");
  const double k = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (!(x[i] > 0.0) || !(y[i] > 0.0)) throw InvalidArgument("fit_loglog: values must be positive");
    mx += std::log(x[i]);
    my += std::log(y[i]);
  }
  mx /= k;
  my /= k;
  double sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = std::log(x[i]) - mx;
    sxx += dx * dx;
    sxy += dx * (std::log(y[i]) - my);
  }
  SlopeFit f;
  f.count = static_cast<int>(x.size());
  f.target = target;
  f.slope = sxy / sxx;
  if (x.size() > 2) {
    double sse = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double r = std::log(y[i]) - my - f.slope * (std::log(x[i]) - mx);
      sse += r * r;
    }
    f.stderr_ = std::sqrt(sse / (k - 2.0) / sxx);
    const boost::math::students_t dist(k - 2.0);
    const double t = boost::math::quantile(boost::math::complement(dist, 0.025));
    f.ci_low = f.slope - t * f.stderr_;
    f.ci_high = f.slope + t * f.stderr_;
  } else {
    f.ci_low = f.ci_high = f.slope;
  }
  return f;
}

struct ScalingRow {
  double mu = 0.0;
  bool ok = false;
  std::string error;
  int K = 0;
  int L = 0;
  double kg_residual = 0.0;
  double e_H2 = 0.0;
  double e_sup = 0.0;
  double norm_w_X2 = 0.0;
  double tail_fraction = 0.0;
  double dist_phi_Phi = 0.0;
  double dist_Phi_psi = 0.0;
  double norm_R_V = 0.0;
  bool sobolev_holds = true;
  bool harmonic_one_dominates = true;
};

struct ScalingTable {
  BreatherConfig base;
  std::vector<ScalingRow> rows;
  std::map<std::string, SlopeFit> fits;

  static const std::vector<std::string>& columns() {
    static const std::vector<std::string> c{"e_H2", "e_sup", "norm_w_X2", "tail_fraction", "dist_phi_Phi", "dist_Phi_psi",
                                            "norm_R_V"};
    return c;
  }

  static double value(const ScalingRow& r, const std::string& c) {
    if (c == "e_H2") return r.e_H2;
    if (c == "e_sup") return r.e_sup;
    if (c == "norm_w_X2") return r.norm_w_X2;
    if (c == "tail_fraction") return r.tail_fraction;
    if (c == "dist_phi_Phi") return r.dist_phi_Phi;
    if (c == "dist_Phi_psi") return r.dist_Phi_psi;
    if (c == "norm_R_V") return r.norm_R_V;
    throw InvalidArgument("ScalingTable: unknown column " + c);
  }

  nlohmann::json to_json() const {
    nlohmann::json rs = nlohmann::json::array();
    for (const auto& r : rows) {
      nlohmann::json j = {{"mu", r.mu}, {"ok", r.ok}};
      if (!r.ok) {
        j["error"] = r.error;
      } else {
        j.update({{"K", r.K},
                  {"L", r.L},
                  {"kg_residual", r.kg_residual},
                  {"sobolev_holds", r.sobolev_holds},
                  {"harmonic_one_dominates", r.harmonic_one_dominates}});
        for (const auto& c : columns()) j[c] = value(r, c);
      }
      rs.push_back(j);
    }
    nlohmann::json fs = nlohmann::json::object();
    for (const auto& [k, f] : fits) fs[k] = f.to_json();
    return {{"config", base.to_json()}, {"rows", rs}, {"fits", fs}};
  }

  void write_csv(std::ostream& os) const {
    os << "mu,ok,K,L,kg_residual";
    for (const auto& c : columns()) os << ',' << c;
    os << '\n';
    for (const auto& r : rows) {
      os << io::format_double(r.mu) << ',' << (r.ok ? 1 : 0) << ',' << r.K << ',' << r.L << ','
         << io::format_double(r.kg_residual);
      for (const auto& c : columns()) os << ',' << io::format_double(value(r, c));
      os << '\n';
    }
  }
};

/// Predicted exponents for the fitted columns.
inline std::map<std::string, double> scaling_targets(int n, double p) {
  const double r = 1.0 / p - n / 2.0 + 1.0;
  return {{"e_H2", r},
          {"e_sup", r + 0.5},
          {"norm_w_X2", r + 1.0},
          {"tail_fraction", 2.0},
          {"dist_phi_Phi", 2.0 - n / 2.0},
          {"dist_Phi_psi", 1.0},
          {"norm_R_V", 2.0 - n / 2.0}};
}

inline ScalingRow scaling_row(const BreatherConfig& cfg, const GroundStateProfile& gs) {
  ScalingRow row;
  row.mu = cfg.mu;
  const Breather b = assemble(cfg, &gs);
  const auto err = error_vs_reference(b, *b.psi);
  const auto& ks = b.stages["kernel"];
  row.ok = true;
  row.K = b.box().grid().radius();
  row.L = b.L();
  row.kg_residual = b.residual;
  row.e_H2 = err.e_H2;
  row.e_sup = err.e_sup;
  row.norm_w_X2 = b.norm_w_X2();
  row.tail_fraction = b.tail_fraction();
  row.dist_phi_Phi = ks["dist_phi_Phi_Qmu"].get<double>();
  row.dist_Phi_psi = ks["dist_Phi_psi_Qmu"].get<double>();
  row.norm_R_V = ks["norm_R_V_Phi_l2mu"].get<double>();
  row.sobolev_holds = err.sobolev_holds;
  row.harmonic_one_dominates = b.harmonic_one_dominates();
  return row;
}

/// One breather per mu (independent jobs on `jobs` threads), then log-log
/// fits over the rows that succeeded, provided at least four did.
inline ScalingTable scaling_study(const BreatherConfig& base, const std::vector<double>& mus, unsigned jobs = 1,
                                  const GroundStateProfile* profile = nullptr) {
  if (mus.size() < 4) throw InvalidArgument("scaling_study: need at least four mu values");
  for (std::size_t i = 1; i < mus.size(); ++i) {
    if (!(mus[i] < mus[i - 1])) throw InvalidArgument("scaling_study: mu values must be strictly decreasing");
  }
  base.validate();
  std::optional<GroundStateProfile> own;
  if (!profile) {
    own.emplace(solve_ground_state(base.n, base.p));
    profile = &*own;
  }
  ScalingTable table;
  table.base = base;
  table.rows.resize(mus.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < mus.size(); i = next++) {
      BreatherConfig cfg = base;
      cfg.mu = mus[i];
      try {
        table.rows[i] = scaling_row(cfg, *profile);
      } catch (const Error& e) {
        table.rows[i].mu = mus[i];
        table.rows[i].ok = false;
        table.rows[i].error = e.what();
      }
    }
  };
  jobs = std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(mus.size())));
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < jobs; ++t) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  const auto targets = scaling_targets(base.n, base.p);
  for (const auto& c : ScalingTable::columns()) {
    std::vector<double> x, y;
    for (const auto& r : table.rows) {
      if (r.ok && ScalingTable::value(r, c) > 0.0) {
        x.push_back(r.mu);
        y.push_back(ScalingTable::value(r, c));
      }
    }
    if (x.size() >= 4) table.fits[c] = fit_loglog(x, y, targets.at(c));
  }
  return table;
}

// ---------------------------------------------------------------------------
// Breather files: "KGBR", version, JSON metadata, box header, reduced coefficients.

inline constexpr char kBreatherMagic[] = "KGBR";

inline void write_breather(const Breather& b, std::ostream& os) {
  os.write(kBreatherMagic, 4);
  io::write_pod<std::uint32_t>(os, 1);
  nlohmann::json meta = {{"config", b.config.to_json()}, {"m", b.m}, {"omega", b.omega}, {"beta", b.beta},
                         {"kg_residual", b.residual}};
  const std::string ms = meta.dump();
  io::write_pod<std::uint64_t>(os, ms.size());
  os.write(ms.data(), static_cast<std::streamsize>(ms.size()));
  detail::write_box_header(os, b.box());
  io::write_pod<std::int32_t>(os, b.L());
  io::write_pod<std::uint64_t>(os, static_cast<std::uint64_t>(b.u.rows()));
  os.write(reinterpret_cast<const char*>(b.u.data()), static_cast<std::streamsize>(b.u.size() * sizeof(double)));
  if (!os) throw IoError("breather file: write failed");
}

inline Breather read_breather(std::istream& is) {
  io::expect_magic(is, "KGBR");
  if (io::read_pod<std::uint32_t>(is) != 1) throw IoError("breather file: unsupported version");
  const auto len = io::read_pod<std::uint64_t>(is);
  if (len > (1u << 24)) throw IoError("breather file: metadata too large");
  std::string ms(len, '\0');
  is.read(ms.data(), static_cast<std::streamsize>(len));
  if (!is) throw IoError("breather file: truncated metadata");
  Breather b;
  try {
    const auto meta = nlohmann::json::parse(ms);
    const auto& c = meta.at("config");
    b.config.n = c.at("n");
    b.config.p = c.at("p");
    b.config.a = c.at("a");
    b.config.mu = c.at("mu");
    b.config.mode = c.at("mode");
    b.config.K = c.at("K");
    b.config.decay_budget = c.at("decay_budget");
    b.config.L = c.at("L");
    b.config.max_L = c.at("max_L");
    b.config.kernel_tol = c.at("kernel_tol");
    b.config.residual_target = c.at("residual_target");
    b.config.tail_tol = c.at("tail_tol");
    b.config.harmonic_tail_tol = c.at("harmonic_tail_tol");
    b.m = meta.at("m");
    b.omega = meta.at("omega");
    b.beta = meta.at("beta");
    b.residual = meta.at("kg_residual");
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("breather file: bad metadata: ") + e.what());
  }
  const LatticeBox box = detail::read_box_header(is);
  if (box.dim() != b.config.n || box.grid().mu() != b.config.mu) throw IoError("breather file: header disagrees with metadata");
  const auto L = io::read_pod<std::int32_t>(is);
  const auto rows = io::read_pod<std::uint64_t>(is);
  b.fold = std::make_shared<SymmetryFold>(box);
  if (L < 1 || rows != static_cast<std::uint64_t>(b.fold->size())) throw IoError("breather file: bad coefficient shape");
  b.u.resize(static_cast<Eigen::Index>(rows), L + 1);
  is.read(reinterpret_cast<char*>(b.u.data()), static_cast<std::streamsize>(b.u.size() * sizeof(double)));
  if (!is) throw IoError("breather file: truncated coefficients");
  if (!b.u.allFinite()) throw IoError("breather file: non-finite coefficients");
  return b;
}

inline void save_breather(const Breather& b, const std::string& path) {
  auto os = io::open_out(path, true);
  write_breather(b, os);
}

inline Breather load_breather(const std::string& path) {
  auto is = io::open_in(path, true);
  return read_breather(is);
}

}  // namespace kgbreather
