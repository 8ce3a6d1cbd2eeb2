#pragma once

// Piecewise-linear interpolation of lattice sequences: hat functions in 1D,
// and in 2D the P1 elements of the squares split along the anti-diagonal
// (each node carries a hexagonal pyramid).
//   T+ (h,k): nodes (h,k), (h+1,k), (h,k+1)
//   T- (h,k): nodes (h+1,k+1), (h,k+1), (h+1,k)

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <array>
#include <cmath>
#include <ostream>
#include <string>

#include "kgbreather/errors.hpp"
#include "kgbreather/io_util.hpp"
#include "kgbreather/lattice.hpp"
#include "kgbreather/power.hpp"

namespace kgbreather {

class FemInterpolant {
 public:
  explicit FemInterpolant(SymmetricSequence psi) : psi_(std::move(psi)) {}

  const SymmetricSequence& coefficients() const noexcept { return psi_; }
  const LatticeBox& box() const noexcept { return psi_.box(); }
  int dim() const noexcept { return psi_.grid().dim(); }
  double mu() const noexcept { return psi_.grid().mu(); }

  /// Node value, zero outside the box.
  double node(int j0, int j1 = 0) const noexcept { return psi_(j0, j1); }

  double operator()(double x0, double x1 = 0.0) const noexcept {
    const double t0 = x0 / mu() - offset_value(box().offsets()[0]);
    const double h0 = std::floor(t0), s = t0 - h0;
    const int h = static_cast<int>(h0);
    if (dim() == 1) return node(h) + s * (node(h + 1) - node(h));
    const double t1 = x1 / mu() - offset_value(box().offsets()[1]);
    const double k0 = std::floor(t1), t = t1 - k0;
    const int k = static_cast<int>(k0);
    if (s + t <= 1.0) return node(h, k) + s * (node(h + 1, k) - node(h, k)) + t * (node(h, k + 1) - node(h, k));
    return node(h + 1, k + 1) + (1.0 - s) * (node(h, k + 1) - node(h + 1, k + 1)) +
           (1.0 - t) * (node(h + 1, k) - node(h + 1, k + 1));
  }

  /// Calls f(corner values, element measure) for every element whose closure
  /// meets the support: 1D cells [h, h+1], 2D triangles T+ then T-.
  template <class F>
  void for_each_element(F&& f) const {
    const double mu_ = mu();
    if (dim() == 1) {
      for (int h = box().lower(0) - 1; h <= box().upper(0); ++h) f(std::array<double, 3>{node(h), node(h + 1), 0.0}, mu_);
      return;
    }
    const double area = 0.5 * mu_ * mu_;
    for (int k = box().lower(1) - 1; k <= box().upper(1); ++k) {
      for (int h = box().lower(0) - 1; h <= box().upper(0); ++h) {
        f(std::array<double, 3>{node(h, k), node(h + 1, k), node(h, k + 1)}, area);
        f(std::array<double, 3>{node(h + 1, k + 1), node(h, k + 1), node(h + 1, k)}, area);
      }
    }
  }

 private:
  SymmetricSequence psi_;
};

/// int |grad Upsilon|^2, exact element by element (constant gradients). Equals
/// mu^{n-2} <psi, -Delta psi> for every sequence.
inline double grad_energy(const FemInterpolant& u) {
  const double mu = u.mu();
  double acc = 0.0;
  u.for_each_element([&](const std::array<double, 3>& c, double measure) {
    // In both orientations the two legs leave the first corner along the axes.
    const double g0 = (c[1] - c[0]) / mu;
    const double g1 = u.dim() == 2 ? (c[2] - c[0]) / mu : 0.0;
    acc += (g0 * g0 + g1 * g1) * measure;
  });
  return acc;
}

namespace detail {

// Degree-5 seven-point rule on the reference triangle (weights sum to 1).
struct TriangleRule {
  std::array<double, 7> w;
  std::array<std::array<double, 3>, 7> bary;

  static const TriangleRule& get() {
    static const TriangleRule r = [] {
      const double s = std::sqrt(15.0);
      const double w1 = (155.0 + s) / 1200.0, w2 = (155.0 - s) / 1200.0;
      const double b1 = (6.0 + s) / 21.0, a1 = 1.0 - 2.0 * b1;
      const double b2 = (6.0 - s) / 21.0, a2 = 1.0 - 2.0 * b2;
      TriangleRule t{};
      t.w = {9.0 / 40.0, w1, w1, w1, w2, w2, w2};
      t.bary = {{{1.0 / 3, 1.0 / 3, 1.0 / 3}, {a1, b1, b1}, {b1, a1, b1}, {b1, b1, a1}, {a2, b2, b2}, {b2, a2, b2}, {b2, b2, a2}}};
      return t;
    }();
    return r;
  }
};

// Mean of g over the triangle with corner values c (g applied to the linear
// interpolant), with adaptive 4-way refinement until successive levels agree.
template <class G>
double triangle_mean(const std::array<double, 3>& c, G&& g, double rtol, int depth) {
  const TriangleRule& tr = TriangleRule::get();
  auto rule = [&](const std::array<double, 3>& v) {
    double s = 0.0;
    for (std::size_t q = 0; q < 7; ++q) {
      const auto& b = tr.bary[q];
      s += tr.w[q] * g(b[0] * v[0] + b[1] * v[1] + b[2] * v[2]);
    }
    return s;
  };
  auto children = [](const std::array<double, 3>& v) {
    const double m01 = 0.5 * (v[0] + v[1]), m12 = 0.5 * (v[1] + v[2]), m02 = 0.5 * (v[0] + v[2]);
    return std::array<std::array<double, 3>, 4>{{{v[0], m01, m02}, {m01, v[1], m12}, {m02, m12, v[2]}, {m12, m02, m01}}};
  };
  const double coarse = rule(c);
  double fine = 0.0;
  const auto ch = children(c);
  for (const auto& t : ch) fine += 0.25 * rule(t);
  if (depth <= 0 || std::abs(fine - coarse) <= rtol * std::abs(fine)) return fine;
  double acc = 0.0;
  for (const auto& t : ch) acc += 0.25 * triangle_mean(t, g, rtol, depth - 1);
  return acc;
}

}  // namespace detail

struct FunctionalRemainder {
  double G_c = 0.0;  // int |Upsilon|^{q+2}
  double G_d = 0.0;  // mu^n sum |psi_j|^{q+2}
  double R_G = 0.0;  // G_c - G_d
};

/// Continuum and lattice potential functionals of the interpolant. Element
/// integrals by Gauss-Kronrod (1D) or the adaptive seven-point triangle rule
/// (2D), relative tolerance 1e-10 per element.
inline FunctionalRemainder functional_remainder(const FemInterpolant& u, double q) {
  if (!(q >= 1.0)) throw InvalidArgument("functional_remainder: q must be >= 1");
  const double r = q + 2.0;
  auto g = [r](double y) { return abs_pow(y, r); };
  FunctionalRemainder out;
  u.for_each_element([&](const std::array<double, 3>& c, double measure) {
    if (c[0] == 0.0 && c[1] == 0.0 && c[2] == 0.0) return;
    double mean;
    if (u.dim() == 1) {
      auto f = [&](double s) { return g(c[0] + s * (c[1] - c[0])); };
      mean = boost::math::quadrature::gauss_kronrod<double, 15>::integrate(f, 0.0, 1.0, 8, 1e-10);
    } else {
      mean = detail::triangle_mean(c, g, 1e-10, 8);
    }
    out.G_c += measure * mean;
  });
  for (double v : u.coefficients().values()) out.G_d += abs_pow(v, r);
  out.G_d *= std::pow(u.mu(), u.dim());
  out.R_G = out.G_c - out.G_d;
  return out;
}

/// Samples the interpolant on a uniform grid covering the support with
/// `per_cell` points per lattice spacing: "x,value" or "x,y,value" rows.
inline void write_sampled_csv(const FemInterpolant& u, std::ostream& os, int per_cell = 4) {
  if (per_cell < 1) throw InvalidArgument("write_sampled_csv: per_cell must be >= 1");
  const double mu = u.mu(), dx = mu / per_cell;
  auto range = [&](int axis) {
    const double off = offset_value(u.box().offsets()[axis]);
    return std::array<double, 2>{mu * (u.box().lower(axis) - 1 + off), mu * (u.box().upper(axis) + 1 + off)};
  };
  const auto r0 = range(0);
  const int n0 = static_cast<int>(std::lround((r0[1] - r0[0]) / dx));
  if (u.dim() == 1) {
    os << "x,value\n";
    for (int i = 0; i <= n0; ++i) {
      const double x = r0[0] + i * dx;
      os << io::format_double(x) << ',' << io::format_double(u(x)) << '\n';
    }
  } else {
    const auto r1 = range(1);
    const int n1 = static_cast<int>(std::lround((r1[1] - r1[0]) / dx));
    os << "x,y,value\n";
    for (int k = 0; k <= n1; ++k) {
      for (int i = 0; i <= n0; ++i) {
        const double x = r0[0] + i * dx, y = r1[0] + k * dx;
        os << io::format_double(x) << ',' << io::format_double(y) << ',' << io::format_double(u(x, y)) << '\n';
      }
    }
  }
  if (!os) throw IoError("write_sampled_csv: stream failure");
}

inline void save_sampled_csv(const FemInterpolant& u, const std::string& path, int per_cell = 4) {
  auto os = io::open_out(path);
  write_sampled_csv(u, os, per_cell);
}

}  // namespace kgbreather
