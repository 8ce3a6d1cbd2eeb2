#pragma once

// Continuum NLS ground state -Delta psi + m psi = psi^{2p+1}, ||psi||_{L2} = 1,
// its lattice restrictions (ST, P and H modes) and the reference solution.

// pchip.hpp calls isnan unqualified; the C header puts it in the global namespace.
#include <math.h>

#include <boost/math/interpolators/pchip.hpp>
#include <boost/math/special_functions/gamma.hpp>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "kgbreather/errors.hpp"
#include "kgbreather/io_util.hpp"
#include "kgbreather/lattice.hpp"
#include "kgbreather/power.hpp"

namespace kgbreather {

inline constexpr double kRadialStep = 0.01;
inline constexpr double kRadialExtent = 200.0;
inline constexpr double kProfileTailTol = 1e-10;

inline void check_exponent(int n, double p) {
  if (n != 1 && n != 2) throw InvalidArgument("dimension must be 1 or 2");
  if (!(p >= 0.5) || !(p < 2.0 / n)) {
    throw InvalidArgument("nonlinearity exponent p must satisfy 1/2 <= p < 2/n, got p = " + std::to_string(p));
  }
}

/// One-dimensional ground state A sech^{1/p}(eta x).
struct SechFamily {
  double amplitude;
  double eta;
  double k;  // 1/p

  double operator()(double x) const noexcept {
    // sech(y)^k = (2 e^{-y} / (1 + e^{-2y}))^k, written to avoid overflow.
    const double y = eta * std::abs(x);
    const double e = std::exp(-y);
    return amplitude * std::exp(k * (std::log(2.0) - y - std::log1p(e * e)));
  }

  /// psi'' from S'' relations: (S^k)'' = k^2 eta^2 S^k - k(k+1) eta^2 S^{k+2}.
  double second_derivative(double x) const noexcept {
    const double s = (*this)(x) / amplitude;
    const double s2 = std::pow(s, 2.0 / k);  // S^2
    return amplitude * eta * eta * (k * k * s - k * (k + 1.0) * s * s2);
  }
};

/// Radial ground state psi_c(r) with multiplier m.
class GroundStateProfile {
 public:
  GroundStateProfile(int n, double p, double m, std::vector<double> radii, std::vector<double> values,
                     double residual, double normalization, std::optional<SechFamily> closed_form = std::nullopt)
      : n_(n), p_(p), m_(m), radii_(std::move(radii)), values_(std::move(values)), residual_(residual),
        normalization_(normalization), closed_form_(closed_form) {
    check_exponent(n, p);
    if (!(m > 0.0)) throw InvalidArgument("GroundStateProfile: multiplier m must be positive");
    if (radii_.size() < 4 || radii_.size() != values_.size()) {
      throw InvalidArgument("GroundStateProfile: radial grid and values must have equal length >= 4");
    }
    for (std::size_t i = 1; i < radii_.size(); ++i) {
      if (!(radii_[i] > radii_[i - 1])) throw InvalidArgument("GroundStateProfile: radii must increase");
    }
    auto r = radii_;
    auto v = values_;
    interp_ = std::make_shared<Pchip>(std::move(r), std::move(v), 0.0);
  }

  int dim() const noexcept { return n_; }
  double p() const noexcept { return p_; }
  double m() const noexcept { return m_; }
  const std::vector<double>& radii() const noexcept { return radii_; }
  const std::vector<double>& values() const noexcept { return values_; }
  double residual() const noexcept { return residual_; }
  double normalization() const noexcept { return normalization_; }
  double max_radius() const noexcept { return radii_.back(); }
  double tail() const noexcept { return std::abs(values_.back()); }
  const std::optional<SechFamily>& closed_form() const noexcept { return closed_form_; }

  /// psi_c(|r|). The sech family is evaluated exactly; tabulated profiles use
  /// monotone cubic interpolation. Beyond the grid the value is 0 if the
  /// stored tail is negligible.
  double operator()(double r) const {
    r = std::abs(r);
    if (closed_form_) return (*closed_form_)(r);
    if (r > radii_.back()) {
      if (tail() < kProfileTailTol) return 0.0;
      throw GuardViolation("ground state sampled at r = " + std::to_string(r) +
                           " beyond the radial grid, and the profile tail is not negligible");
    }
    return (*interp_)(r);
  }

 private:
  using Pchip = boost::math::interpolators::pchip<std::vector<double>>;

  int n_;
  double p_;
  double m_;
  std::vector<double> radii_;
  std::vector<double> values_;
  double residual_;
  double normalization_;
  std::optional<SechFamily> closed_form_;
  std::shared_ptr<Pchip> interp_;
};

namespace detail {

/// Tridiagonal finite-difference radial operator -Delta + m in dimension n on
/// nodes r_i = i h, with psi'(0) = 0 and psi = 0 beyond the last node.
/// Row i >= 1 of -Delta: -(r_{i+1/2}^{n-1}(psi_{i+1}-psi_i) - r_{i-1/2}^{n-1}(psi_i-psi_{i-1})) / (r_i^{n-1} h^2);
/// row 0: -2n(psi_1 - psi_0)/h^2.
struct RadialOperator {
  int n;
  double h;
  std::size_t N;
  std::vector<double> lower, diag0, upper;  // diag0 excludes m

  RadialOperator(int n_, double h_, std::size_t N_) : n(n_), h(h_), N(N_), lower(N_), diag0(N_), upper(N_) {
    const double h2 = h * h;
    diag0[0] = 2.0 * n / h2;
    upper[0] = -2.0 * n / h2;
    lower[0] = 0.0;
    for (std::size_t i = 1; i < N; ++i) {
      const double ri = static_cast<double>(i);
      const double wp = std::pow((ri + 0.5) / ri, n - 1), wm = std::pow((ri - 0.5) / ri, n - 1);
      lower[i] = -wm / h2;
      upper[i] = -wp / h2;
      diag0[i] = (wp + wm) / h2;
    }
    upper[N - 1] = 0.0;
  }

  /// Control-volume weights: integral of f over R^n ~ sum_i weight_i f_i.
  std::vector<double> weights() const {
    std::vector<double> w(N);
    const double sphere = n == 1 ? 2.0 : 2.0 * std::numbers::pi;  // surface of the unit sphere
    w[0] = n == 1 ? h : 2.0 * std::numbers::pi * h * h / 8.0;
    for (std::size_t i = 1; i < N; ++i) w[i] = sphere * std::pow(i * h, n - 1) * h;
    return w;
  }

  void apply(const std::vector<double>& x, double m, std::vector<double>& y) const {
    y.resize(N);
    for (std::size_t i = 0; i < N; ++i) {
      double acc = (diag0[i] + m) * x[i];
      if (i > 0) acc += lower[i] * x[i - 1];
      if (i + 1 < N) acc += upper[i] * x[i + 1];
      y[i] = acc;
    }
  }

  /// Thomas algorithm; the matrix is strictly diagonally dominant for m > 0.
  void solve(const std::vector<double>& b, double m, std::vector<double>& x) const {
    std::vector<double> c(N), d(N);
    double beta = diag0[0] + m;
    c[0] = upper[0] / beta;
    d[0] = b[0] / beta;
    for (std::size_t i = 1; i < N; ++i) {
      beta = diag0[i] + m - lower[i] * c[i - 1];
      c[i] = upper[i] / beta;
      d[i] = (b[i] - lower[i] * d[i - 1]) / beta;
    }
    x.resize(N);
    x[N - 1] = d[N - 1];
    for (std::size_t i = N - 1; i-- > 0;) x[i] = d[i] - c[i] * x[i + 1];
  }
};

inline double weighted_dot(const std::vector<double>& w, const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) s += w[i] * a[i] * b[i];
  return s;
}

inline double el_residual(const RadialOperator& op, const std::vector<double>& psi, double m, double p) {
  std::vector<double> y;
  op.apply(psi, m, y);
  double worst = 0.0;
  for (std::size_t i = 0; i < psi.size(); ++i) worst = std::max(worst, std::abs(y[i] - focusing_power(psi[i], p)));
  return worst;
}

struct PetviashviliResult {
  std::vector<double> psi;
  double residual;
  int iterations;
};

/// Petviashvili iteration for -Delta psi + m psi = psi^{2p+1} at fixed m.
inline PetviashviliResult petviashvili(const RadialOperator& op, const std::vector<double>& w, double m, double p,
                                       std::vector<double> psi, double tol, int max_iter) {
  const double gamma = (2.0 * p + 1.0) / (2.0 * p);
  std::vector<double> f(op.N), Apsi(op.N), next;
  double res = el_residual(op, psi, m, p);
  int it = 0;
  for (; it < max_iter && res >= tol; ++it) {
    for (std::size_t i = 0; i < op.N; ++i) f[i] = focusing_power(psi[i], p);
    op.apply(psi, m, Apsi);
    const double num = weighted_dot(w, psi, Apsi), den = weighted_dot(w, psi, f);
    if (!(den > 0.0)) throw NonConvergence("ground state iteration collapsed to zero", res);
    const double stab = std::pow(num / den, gamma);
    op.solve(f, m, next);
    for (std::size_t i = 0; i < op.N; ++i) psi[i] = stab * next[i];
    res = el_residual(op, psi, m, p);
    if (!std::isfinite(res)) throw NonConvergence("ground state iteration diverged", res);
  }
  if (res >= tol) throw NonConvergence("ground state iteration did not reach the tolerance", res);
  return {std::move(psi), res, it};
}

/// Linear interpolation of a node-grid profile at radius r (0 beyond).
inline double lerp_profile(const std::vector<double>& v, double h, double r) {
  const double s = r / h;
  const auto i = static_cast<std::size_t>(s);
  if (i + 1 >= v.size()) return 0.0;
  const double t = s - static_cast<double>(i);
  return (1.0 - t) * v[i] + t * v[i + 1];
}

inline GroundStateProfile sech_ground_state(double p) {
  const double k = 1.0 / p;
  using boost::math::tgamma;
  const double rhs = p * tgamma(k + 0.5) / (std::pow(1.0 + p, k) * std::sqrt(std::numbers::pi) * tgamma(k));
  const double m = std::pow(rhs, 1.0 / (k - 0.5));
  const SechFamily f{std::pow((1.0 + p) * m, 0.5 * k), p * std::sqrt(m), k};

  // The tabulation must reach the 1e-10 tail; near p = 2 the decay length
  // 1/(k eta) grows without bound, so the step grows with it.
  const double tail_radius = std::log(2.0 * f.amplitude * std::pow(2.0, k) / kProfileTailTol) / (k * f.eta);
  const double extent = std::max(kRadialExtent, tail_radius);
  const auto N = static_cast<std::size_t>(std::llround(kRadialExtent / kRadialStep)) + 1;
  const double h = extent / static_cast<double>(N - 1);
  std::vector<double> r(N), v(N);
  double residual = 0.0;
  for (std::size_t i = 0; i < N; ++i) {
    r[i] = static_cast<double>(i) * h;
    v[i] = f(r[i]);
    residual = std::max(residual, std::abs(-f.second_derivative(r[i]) + m * v[i] - focusing_power(v[i], p)));
  }
  // 2 * int_0^inf psi^2 by the trapezoid rule; spectrally accurate for this analytic, decaying integrand.
  double mass = 0.0;
  for (std::size_t i = 0; i < N; ++i) mass += (i == 0 ? 0.5 : 1.0) * v[i] * v[i];
  mass *= 2.0 * h;
  return GroundStateProfile(1, p, m, std::move(r), std::move(v), residual, mass, f);
}

}  // namespace detail

/// Unit-mass ground state. n = 1 uses the exact sech family; n = 2 runs a
/// Petviashvili iteration at fixed m inside an outer update of m by the
/// scaling law mass(m) ~ m^{1/p - n/2}.
inline GroundStateProfile solve_ground_state(int n, double p, double tol = 1e-10, int max_iter = 5000) {
  check_exponent(n, p);
  if (!(tol > 0.0)) throw InvalidArgument("solve_ground_state: tolerance must be positive");
  if (n == 1) return detail::sech_ground_state(p);

  const double h = kRadialStep;
  const auto N = static_cast<std::size_t>(std::llround(kRadialExtent / h)) + 1;
  detail::RadialOperator op(n, h, N);
  const auto w = op.weights();
  const double scale_exp = 1.0 / p - 0.5 * n;

  double m = 1.0;
  std::vector<double> psi(N);
  const double k = 1.0 / p;
  for (std::size_t i = 0; i < N; ++i) {
    psi[i] = std::pow(1.0 + p, 0.5 * k) * std::pow(1.0 / std::cosh(std::min(p * i * h, 300.0)), k);
  }

  double residual = 0.0, mass = 0.0;
  for (int outer = 0; outer < 60; ++outer) {
    auto res = detail::petviashvili(op, w, m, p, std::move(psi), tol, max_iter);
    psi = std::move(res.psi);
    residual = res.residual;
    mass = detail::weighted_dot(w, psi, psi);
    if (std::abs(mass - 1.0) < 1e-13) break;
    const double m_new = m * std::pow(mass, -1.0 / scale_exp);
    // Warm start from the exact continuum rescaling of the current iterate.
    const double ratio = m_new / m, amp = std::pow(ratio, 0.5 * k), sr = std::sqrt(ratio);
    std::vector<double> next(N);
    for (std::size_t i = 0; i < N; ++i) next[i] = amp * detail::lerp_profile(psi, h, sr * i * h);
    psi = std::move(next);
    m = m_new;
  }
  if (std::abs(mass - 1.0) > 1e-10) throw NonConvergence("ground state normalization did not converge", residual);
  for (std::size_t i = 1; i < N; ++i) {
    if (psi[i] > psi[i - 1] || psi[i] < 0.0) {
      throw NonConvergence("ground state iterate is not positive and radially nonincreasing", residual);
    }
  }
  if (psi.back() >= kProfileTailTol) {
    throw NonConvergence("ground state tail at r = " + std::to_string(kRadialExtent) + " is not negligible", residual);
  }
  std::vector<double> r(N);
  for (std::size_t i = 0; i < N; ++i) r[i] = static_cast<double>(i) * h;
  return GroundStateProfile(n, p, m, std::move(r), std::move(psi), residual, mass);
}

/// Reference mode: per-axis sampling offsets. 1D: 1 = ST (0), 2 = P (1/2).
/// 2D: 1 = (0,0), 2 = (0,1/2), 3 = (1/2,0), 4 = (1/2,1/2).
class ModeSpec {
 public:
  ModeSpec(int n, int index) : n_(n), index_(index) {
    if (n != 1 && n != 2) throw InvalidArgument("ModeSpec: dimension must be 1 or 2");
    if (index < 1 || index > (1 << n)) throw InvalidArgument("ModeSpec: index must be in 1..2^n");
    const int bits = index - 1;
    if (n == 1) {
      offsets_ = {bits ? Centering::bond : Centering::site, Centering::site};
    } else {
      offsets_ = {(bits & 2) ? Centering::bond : Centering::site, (bits & 1) ? Centering::bond : Centering::site};
    }
  }

  /// Parses st, p, h1, h2 (and the numeric index).
  static ModeSpec parse(int n, const std::string& name) {
    if (name == "st" || name == "1") return ModeSpec(n, 1);
    if (n == 1 && (name == "p" || name == "2")) return ModeSpec(1, 2);
    if (n == 2) {
      if (name == "h1" || name == "2") return ModeSpec(2, 2);
      if (name == "h2" || name == "3") return ModeSpec(2, 3);
      if (name == "p" || name == "4") return ModeSpec(2, 4);
    }
    throw InvalidArgument("unknown mode '" + name + "' for n = " + std::to_string(n));
  }

  int dim() const noexcept { return n_; }
  int index() const noexcept { return index_; }
  const Offsets& offsets() const noexcept { return offsets_; }

  std::string name() const {
    if (index_ == 1) return "st";
    if (n_ == 1 || index_ == 4) return "p";
    return index_ == 2 ? "h1" : "h2";
  }

  bool operator==(const ModeSpec&) const = default;

 private:
  int n_;
  int index_;
  Offsets offsets_{};
};

/// psi^i_j = psi_c(|mu (j + offset)| / sqrt(a)). The coupling rescaling makes the
/// samples approximate the dNLS equation with coupling a; a = 1 is the plain
/// restriction.
inline SymmetricSequence sample_reference(const GroundStateProfile& gs, const GridSpec& grid, const ModeSpec& mode,
                                          double coupling = 1.0) {
  if (gs.dim() != grid.dim() || mode.dim() != grid.dim()) {
    throw InvalidArgument("sample_reference: dimension mismatch between profile, grid and mode");
  }
  if (!(coupling > 0.0)) throw InvalidArgument("sample_reference: coupling must be positive");
  const double inv_len = 1.0 / std::sqrt(coupling);
  LatticeBox box(grid, mode.offsets());
  return SymmetricSequence::sample(box, [&](const std::array<double, 2>& x) {
    return gs(std::hypot(x[0], x[1]) * inv_len);
  });
}

inline double frequency(double m, double mu) {
  if (!(mu > 0.0)) throw InvalidArgument("frequency: mu must be positive");
  if (!(m * mu * mu < 1.0)) throw InvalidArgument("frequency: requires m mu^2 < 1");
  return std::sqrt(1.0 - m * mu * mu);
}

/// Psi^i(t) = mu^{1/p} cos(omega t) psi^i.
inline SymmetricSequence reference_solution(const SymmetricSequence& psi, double mu, double p, double m, double t) {
  const double omega = frequency(m, mu);
  return (std::pow(mu, 1.0 / p) * std::cos(omega * t)) * psi;
}

inline void save_profile(const GroundStateProfile& gs, const std::string& csv_path, const std::string& json_path) {
  {
    auto os = io::open_out(csv_path);
    os << "radius,value\n";
    for (std::size_t i = 0; i < gs.radii().size(); ++i) {
      os << io::format_double(gs.radii()[i]) << ',' << io::format_double(gs.values()[i]) << '\n';
    }
    if (!os) throw IoError("cannot write " + csv_path);
  }
  nlohmann::json j;
  j["n"] = gs.dim();
  j["p"] = gs.p();
  j["m"] = gs.m();
  j["residual"] = gs.residual();
  j["normalization"] = gs.normalization();
  j["closed_form"] = gs.closed_form().has_value();
  if (gs.closed_form()) {
    j["amplitude"] = gs.closed_form()->amplitude;
    j["eta"] = gs.closed_form()->eta;
  }
  auto os = io::open_out(json_path);
  os << j.dump(2) << '\n';
  if (!os) throw IoError("cannot write " + json_path);
}

inline GroundStateProfile load_profile(const std::string& csv_path, const std::string& json_path) {
  nlohmann::json j;
  try {
    auto is = io::open_in(json_path);
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("profile sidecar '" + json_path + "': " + e.what());
  }
  std::vector<double> r, v;
  auto is = io::open_in(csv_path);
  std::string line;
  std::getline(is, line);
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw IoError("profile CSV: malformed line");
    r.push_back(io::parse_double(std::string_view(line).substr(0, comma)));
    v.push_back(io::parse_double(std::string_view(line).substr(comma + 1)));
  }
  try {
    std::optional<SechFamily> cf;
    if (j.value("closed_form", false)) {
      cf = SechFamily{j.at("amplitude").get<double>(), j.at("eta").get<double>(), 1.0 / j.at("p").get<double>()};
    }
    return GroundStateProfile(j.at("n").get<int>(), j.at("p").get<double>(), j.at("m").get<double>(), std::move(r),
                              std::move(v), j.at("residual").get<double>(), j.at("normalization").get<double>(), cf);
  } catch (const nlohmann::json::exception& e) {
    throw IoError("profile sidecar '" + json_path + "': " + e.what());
  } catch (const InvalidArgument& e) {
    throw IoError(std::string("profile: ") + e.what());
  }
}

}  // namespace kgbreather
