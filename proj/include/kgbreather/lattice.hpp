#pragma once

// Truncated, reflection-symmetric lattice fields on Z^n (n = 1, 2), the
// discrete Laplacian with Dirichlet truncation, and the sequence norms.

#include <Eigen/Core>
#include <Eigen/SparseCore>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "kgbreather/errors.hpp"

namespace kgbreather {

/// Default decay budget R_min, in continuum length units x = mu * j.
inline constexpr double kDefaultDecayBudget = 80.0;

/// Dimension, truncation radius and scaling parameter of a lattice.
class GridSpec {
 public:
  GridSpec(int n, int K, double mu, double decay_budget = kDefaultDecayBudget)
      : n_(n), K_(K), mu_(mu) {
    if (n != 1 && n != 2) throw InvalidArgument("GridSpec: dimension must be 1 or 2");
    if (K < 2) throw InvalidArgument("GridSpec: truncation radius K must be >= 2");
    if (!(mu > 0.0) || !std::isfinite(mu)) throw InvalidArgument("GridSpec: mu must be positive");
    if (decay_budget < 0.0) throw InvalidArgument("GridSpec: negative decay budget");
    // Tolerate the last-bit rounding of K = ceil(R / mu).
    if (K * mu < decay_budget * (1.0 - 1e-12)) {
      throw InvalidArgument("GridSpec: K*mu = " + std::to_string(K * mu) +
                            " is below the decay budget " + std::to_string(decay_budget));
    }
  }

  /// Smallest grid whose box covers the decay budget.
  static GridSpec covering(int n, double mu, double decay_budget = kDefaultDecayBudget) {
    if (!(mu > 0.0)) throw InvalidArgument("GridSpec: mu must be positive");
    const int K = std::max(2, static_cast<int>(std::ceil(decay_budget / mu - 1e-9)));
    return GridSpec(n, K, mu, decay_budget);
  }

  int dim() const noexcept { return n_; }
  int radius() const noexcept { return K_; }
  double mu() const noexcept { return mu_; }

  bool operator==(const GridSpec&) const = default;

 private:
  int n_;
  int K_;
  double mu_;
};

/// Per-axis reflection centre: at a lattice site (offset 0) or at a bond
/// midpoint (offset 1/2).
enum class Centering : std::uint8_t { site = 0, bond = 1 };

using Offsets = std::array<Centering, 2>;

inline double offset_value(Centering c) noexcept { return c == Centering::bond ? 0.5 : 0.0; }

inline std::string to_string(Centering c) { return c == Centering::bond ? "bond" : "site"; }

/// Index box of a truncated lattice. Site-centred axes cover [-K, K]; bond
/// centred axes cover [-K-1, K] so that j -> -1-j maps the box onto itself.
/// Axis 0 runs fastest in the linear index.
class LatticeBox {
 public:
  LatticeBox(const GridSpec& grid, Offsets offsets) : grid_(grid), offsets_(offsets) {
    if (grid.dim() == 1) offsets_[1] = Centering::site;
    for (int m = 0; m < 2; ++m) {
      if (m < grid.dim()) {
        lo_[m] = offsets_[m] == Centering::bond ? -grid.radius() - 1 : -grid.radius();
        hi_[m] = grid.radius();
      } else {
        lo_[m] = hi_[m] = 0;
      }
    }
  }

  const GridSpec& grid() const noexcept { return grid_; }
  const Offsets& offsets() const noexcept { return offsets_; }
  int dim() const noexcept { return grid_.dim(); }
  int lower(int axis) const noexcept { return lo_[axis]; }
  int upper(int axis) const noexcept { return hi_[axis]; }
  int extent(int axis) const noexcept { return hi_[axis] - lo_[axis] + 1; }
  std::size_t size() const noexcept {
    return static_cast<std::size_t>(extent(0)) * static_cast<std::size_t>(extent(1));
  }

  bool contains(int j0, int j1 = 0) const noexcept {
    return j0 >= lo_[0] && j0 <= hi_[0] && j1 >= lo_[1] && j1 <= hi_[1];
  }

  std::size_t index(int j0, int j1 = 0) const noexcept {
    return static_cast<std::size_t>(j0 - lo_[0]) +
           static_cast<std::size_t>(extent(0)) * static_cast<std::size_t>(j1 - lo_[1]);
  }

  std::array<int, 2> site(std::size_t idx) const noexcept {
    const auto e0 = static_cast<std::size_t>(extent(0));
    return {static_cast<int>(idx % e0) + lo_[0], static_cast<int>(idx / e0) + lo_[1]};
  }

  int reflect(int axis, int j) const noexcept {
    return offsets_[axis] == Centering::bond ? -1 - j : -j;
  }

  /// Continuum position mu * (j + offset) of a site, per axis.
  std::array<double, 2> position(std::size_t idx) const noexcept {
    const auto s = site(idx);
    std::array<double, 2> x{0.0, 0.0};
    for (int m = 0; m < dim(); ++m) x[m] = grid_.mu() * (s[m] + offset_value(offsets_[m]));
    return x;
  }

  bool operator==(const LatticeBox& o) const noexcept {
    return grid_ == o.grid_ && offsets_ == o.offsets_;
  }

 private:
  GridSpec grid_;
  Offsets offsets_;
  std::array<int, 2> lo_{};
  std::array<int, 2> hi_{};
};

/// A real lattice field on a truncated box with exact reflection symmetry
/// about the box centre along every active axis. Immutable.
class SymmetricSequence {
 public:
  SymmetricSequence(const GridSpec& grid, Offsets offsets)
      : box_(grid, offsets), values_(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(box_.size()))) {}

  /// Takes ownership of `values`; throws if they are not exactly symmetric or
  /// not finite.
  SymmetricSequence(LatticeBox box, Eigen::VectorXd values) : box_(std::move(box)), values_(std::move(values)) {
    if (static_cast<std::size_t>(values_.size()) != box_.size()) {
      throw InvalidArgument("SymmetricSequence: value count does not match the box");
    }
    if (!values_.allFinite()) throw InvalidArgument("SymmetricSequence: non-finite value");
    if (asymmetry() != 0.0) throw InvalidArgument("SymmetricSequence: values are not reflection symmetric");
  }

  /// Orbit average over the reflection group; the result is exactly symmetric.
  static SymmetricSequence projected(LatticeBox box, const Eigen::VectorXd& values) {
    if (static_cast<std::size_t>(values.size()) != box.size()) {
      throw InvalidArgument("SymmetricSequence: value count does not match the box");
    }
    Eigen::VectorXd out(values.size());
    for (std::size_t i = 0; i < box.size(); ++i) {
      const auto s = box.site(i);
      const int r0 = box.reflect(0, s[0]);
      if (box.dim() == 1) {
        out[i] = 0.5 * (values[i] + values[box.index(r0)]);
      } else {
        const int r1 = box.reflect(1, s[1]);
        // Sum in a fixed orbit order so that every orbit member gets the same bits.
        const double a = values[box.index(std::min(s[0], r0), std::min(s[1], r1))];
        const double b = values[box.index(std::max(s[0], r0), std::min(s[1], r1))];
        const double c = values[box.index(std::min(s[0], r0), std::max(s[1], r1))];
        const double d = values[box.index(std::max(s[0], r0), std::max(s[1], r1))];
        out[i] = 0.25 * ((a + b) + (c + d));
      }
    }
    if (!out.allFinite()) throw InvalidArgument("SymmetricSequence: non-finite value");
    return SymmetricSequence(std::move(box), std::move(out), Unchecked{});
  }

  /// Samples f(position) at every site, position = mu * (j + offset).
  template <class F>
  static SymmetricSequence sample(const LatticeBox& box, F&& f) {
    Eigen::VectorXd v(static_cast<Eigen::Index>(box.size()));
    for (std::size_t i = 0; i < box.size(); ++i) v[static_cast<Eigen::Index>(i)] = f(box.position(i));
    return projected(box, v);
  }

  const LatticeBox& box() const noexcept { return box_; }
  const GridSpec& grid() const noexcept { return box_.grid(); }
  const Offsets& offsets() const noexcept { return box_.offsets(); }
  const Eigen::VectorXd& values() const noexcept { return values_; }
  std::size_t size() const noexcept { return box_.size(); }

  /// Value at lattice index j; zero outside the truncation box.
  double operator()(int j0, int j1 = 0) const noexcept {
    return box_.contains(j0, j1) ? values_[static_cast<Eigen::Index>(box_.index(j0, j1))] : 0.0;
  }

  /// max_j |x_j - x_{rho j}| over all axis reflections rho.
  double asymmetry() const noexcept {
    double worst = 0.0;
    for (std::size_t i = 0; i < box_.size(); ++i) {
      const auto s = box_.site(i);
      for (int m = 0; m < box_.dim(); ++m) {
        auto r = s;
        r[m] = box_.reflect(m, s[m]);
        worst = std::max(worst, std::abs(values_[static_cast<Eigen::Index>(i)] -
                                         values_[static_cast<Eigen::Index>(box_.index(r[0], r[1]))]));
      }
    }
    return worst;
  }

  friend SymmetricSequence operator+(const SymmetricSequence& a, const SymmetricSequence& b) {
    a.require_same_box(b);
    return SymmetricSequence(a.box_, a.values_ + b.values_, Unchecked{});
  }
  friend SymmetricSequence operator-(const SymmetricSequence& a, const SymmetricSequence& b) {
    a.require_same_box(b);
    return SymmetricSequence(a.box_, a.values_ - b.values_, Unchecked{});
  }
  friend SymmetricSequence operator*(double s, const SymmetricSequence& a) {
    return SymmetricSequence(a.box_, s * a.values_, Unchecked{});
  }

  /// Applies f pointwise; pointwise maps preserve exact symmetry.
  template <class F>
  SymmetricSequence map(F&& f) const {
    Eigen::VectorXd out = values_.unaryExpr(std::forward<F>(f));
    if (!out.allFinite()) throw InvalidArgument("SymmetricSequence: non-finite value");
    return SymmetricSequence(box_, std::move(out), Unchecked{});
  }

  void require_same_box(const SymmetricSequence& o) const {
    if (!(box_ == o.box_)) throw InvalidArgument("SymmetricSequence: grid or symmetry mismatch");
  }

 private:
  struct Unchecked {};
  SymmetricSequence(LatticeBox box, Eigen::VectorXd values, Unchecked)
      : box_(std::move(box)), values_(std::move(values)) {}

  friend class SymmetryFold;

  LatticeBox box_;
  Eigen::VectorXd values_;
};

/// (Delta x)_j = sum over the 2n nearest neighbours of (x_k - x_j), with
/// x_k = 0 outside the box.
inline SymmetricSequence laplacian(const SymmetricSequence& x) {
  const LatticeBox& box = x.box();
  const Eigen::VectorXd& v = x.values();
  Eigen::VectorXd out(v.size());
  for (std::size_t i = 0; i < box.size(); ++i) {
    const auto s = box.site(i);
    double acc = -2.0 * box.dim() * v[static_cast<Eigen::Index>(i)];
    acc += x(s[0] - 1, s[1]) + x(s[0] + 1, s[1]);
    if (box.dim() == 2) acc += x(s[0], s[1] - 1) + x(s[0], s[1] + 1);
    out[static_cast<Eigen::Index>(i)] = acc;
  }
  return SymmetricSequence::projected(box, out);
}

inline double inner(const SymmetricSequence& x, const SymmetricSequence& y) {
  x.require_same_box(y);
  return x.values().dot(y.values());
}

/// <x, -Delta x> as a sum of squared bond differences, including the bonds
/// to the zero exterior. Nonnegative by construction.
inline double dirichlet_form(const SymmetricSequence& x) {
  const LatticeBox& box = x.box();
  double acc = 0.0;
  for (std::size_t i = 0; i < box.size(); ++i) {
    const auto s = box.site(i);
    const double xi = x.values()[static_cast<Eigen::Index>(i)];
    for (int m = 0; m < box.dim(); ++m) {
      auto up = s;
      up[m] += 1;
      const double d = x(up[0], up[1]) - xi;
      acc += d * d;
      if (s[m] == box.lower(m)) acc += xi * xi;  // bond to the exterior below
    }
  }
  return acc;
}

namespace detail {
inline void require_positive_mu(double mu) {
  if (!(mu > 0.0) || !std::isfinite(mu)) throw InvalidArgument("norm: mu must be positive");
}
}  // namespace detail

inline double norm_l2(const SymmetricSequence& x) { return x.values().norm(); }

/// ||x||_Q^2 = ||x||^2 + mu^-2 <x, -Delta x>.
inline double norm_Q(const SymmetricSequence& x, double mu) {
  detail::require_positive_mu(mu);
  return std::sqrt(x.values().squaredNorm() + dirichlet_form(x) / (mu * mu));
}

inline double norm_l2_mu(const SymmetricSequence& x, double mu) {
  detail::require_positive_mu(mu);
  return std::sqrt(std::pow(mu, x.grid().dim())) * norm_l2(x);
}

inline double norm_Q_mu(const SymmetricSequence& x, double mu) {
  detail::require_positive_mu(mu);
  return std::sqrt(std::pow(mu, x.grid().dim())) * norm_Q(x, mu);
}

inline double sup_norm(const SymmetricSequence& x) {
  return x.size() == 0 ? 0.0 : x.values().cwiseAbs().maxCoeff();
}

/// (sum_j |x_j|^q)^(1/q), evaluated with scaling to avoid underflow.
inline double norm_lq(const SymmetricSequence& x, double q) {
  if (!(q >= 1.0)) throw InvalidArgument("norm_lq: q must be >= 1");
  const double s = sup_norm(x);
  if (s == 0.0) return 0.0;
  double acc = 0.0;
  for (double v : x.values()) acc += std::pow(std::abs(v) / s, q);
  return s * std::pow(acc, 1.0 / q);
}

/// Checks the sequence embeddings l^2 in l^q (q >= 2) and l^2 in l^inf, whose
/// constants are exactly one. A relative slack of a few ulps absorbs rounding.
inline bool sample_embedding_checks(const SymmetricSequence& x, double q) {
  if (!(q >= 2.0)) throw InvalidArgument("sample_embedding_checks: q must be >= 2");
  const double l2 = norm_l2(x);
  const double slack = 1.0 + 8.0 * std::numeric_limits<double>::epsilon();
  return norm_lq(x, q) <= l2 * slack && sup_norm(x) <= l2 * slack;
}

/// Restriction of symmetric fields to the reflection fundamental domain
/// (j_m >= 0 on every active axis) and the folded operators acting there.
/// Sums over the full box become weighted sums with the orbit sizes.
class SymmetryFold {
 public:
  explicit SymmetryFold(LatticeBox box) : box_(std::move(box)) {
    const int K = box_.grid().radius();
    ext_[0] = K + 1;
    ext_[1] = box_.dim() == 2 ? K + 1 : 1;
    const std::size_t nred = static_cast<std::size_t>(ext_[0]) * static_cast<std::size_t>(ext_[1]);
    to_full_.resize(nred);
    weights_.resize(static_cast<Eigen::Index>(nred));
    for (int j1 = 0; j1 < ext_[1]; ++j1) {
      for (int j0 = 0; j0 < ext_[0]; ++j0) {
        const std::size_t r = reduced_index(j0, j1);
        to_full_[r] = box_.index(j0, j1);
        double w = 1.0;
        const std::array<int, 2> j{j0, j1};
        for (int m = 0; m < box_.dim(); ++m) {
          if (box_.offsets()[m] == Centering::bond || j[m] != 0) w *= 2.0;
        }
        weights_[static_cast<Eigen::Index>(r)] = w;
      }
    }
    to_reduced_.resize(box_.size());
    for (std::size_t i = 0; i < box_.size(); ++i) {
      auto s = box_.site(i);
      for (int m = 0; m < box_.dim(); ++m) {
        if (s[m] < 0) s[m] = box_.reflect(m, s[m]);
      }
      to_reduced_[i] = reduced_index(s[0], s[1]);
    }
  }

  const LatticeBox& box() const noexcept { return box_; }
  Eigen::Index size() const noexcept { return weights_.size(); }
  int extent(int axis) const noexcept { return ext_[axis]; }
  const Eigen::VectorXd& weights() const noexcept { return weights_; }

  std::size_t reduced_index(int j0, int j1 = 0) const noexcept {
    return static_cast<std::size_t>(j0) + static_cast<std::size_t>(ext_[0]) * static_cast<std::size_t>(j1);
  }

  Eigen::VectorXd restrict(const Eigen::VectorXd& full) const {
    Eigen::VectorXd out(size());
    for (Eigen::Index r = 0; r < size(); ++r) out[r] = full[static_cast<Eigen::Index>(to_full_[static_cast<std::size_t>(r)])];
    return out;
  }

  Eigen::VectorXd restrict(const SymmetricSequence& x) const {
    if (!(x.box() == box_)) throw InvalidArgument("SymmetryFold: sequence lives on a different box");
    return restrict(x.values());
  }

  Eigen::VectorXd expand_values(const Eigen::VectorXd& reduced) const {
    Eigen::VectorXd out(static_cast<Eigen::Index>(box_.size()));
    for (std::size_t i = 0; i < box_.size(); ++i) {
      out[static_cast<Eigen::Index>(i)] = reduced[static_cast<Eigen::Index>(to_reduced_[i])];
    }
    return out;
  }

  SymmetricSequence expand(const Eigen::VectorXd& reduced) const {
    if (reduced.size() != size()) throw InvalidArgument("SymmetryFold: reduced vector has wrong length");
    if (!reduced.allFinite()) throw InvalidArgument("SymmetryFold: non-finite value");
    return SymmetricSequence(box_, expand_values(reduced), SymmetricSequence::Unchecked{});
  }

  /// Full-box inner product of two symmetric fields given by their restrictions.
  double dot(const Eigen::VectorXd& a, const Eigen::VectorXd& b) const {
    return (weights_.array() * a.array() * b.array()).sum();
  }
  double norm(const Eigen::VectorXd& a) const { return std::sqrt(dot(a, a)); }

  /// Folded Laplacian: out = restrict(laplacian(expand(in))).
  void apply_laplacian(const Eigen::VectorXd& in, Eigen::VectorXd& out) const {
    out.resize(size());
    const int K = box_.grid().radius();
    for (int j1 = 0; j1 < ext_[1]; ++j1) {
      for (int j0 = 0; j0 < ext_[0]; ++j0) {
        const auto r = static_cast<Eigen::Index>(reduced_index(j0, j1));
        double acc = -2.0 * box_.dim() * in[r];
        acc += neighbour(in, 0, j0, j1, -1, K) + neighbour(in, 0, j0, j1, +1, K);
        if (box_.dim() == 2) acc += neighbour(in, 1, j0, j1, -1, K) + neighbour(in, 1, j0, j1, +1, K);
        out[r] = acc;
      }
    }
  }

  /// Sparse matrix of the folded Laplacian (not symmetric; W * Delta is).
  Eigen::SparseMatrix<double> laplacian_matrix() const {
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(static_cast<std::size_t>(size()) * (2 * box_.dim() + 1));
    const int K = box_.grid().radius();
    for (int j1 = 0; j1 < ext_[1]; ++j1) {
      for (int j0 = 0; j0 < ext_[0]; ++j0) {
        const auto r = static_cast<int>(reduced_index(j0, j1));
        trip.emplace_back(r, r, -2.0 * box_.dim());
        const std::array<int, 2> j{j0, j1};
        for (int m = 0; m < box_.dim(); ++m) {
          for (int step : {-1, +1}) {
            auto k = j;
            k[m] += step;
            if (k[m] > K) continue;
            if (k[m] < 0) k[m] = box_.reflect(m, k[m]);
            trip.emplace_back(r, static_cast<int>(reduced_index(k[0], k[1])), 1.0);
          }
        }
      }
    }
    Eigen::SparseMatrix<double> L(size(), size());
    L.setFromTriplets(trip.begin(), trip.end());
    return L;
  }

 private:
  double neighbour(const Eigen::VectorXd& in, int axis, int j0, int j1, int step, int K) const noexcept {
    std::array<int, 2> k{j0, j1};
    k[axis] += step;
    if (k[axis] > K) return 0.0;
    if (k[axis] < 0) k[axis] = box_.reflect(axis, k[axis]);
    return in[static_cast<Eigen::Index>(reduced_index(k[0], k[1]))];
  }

  LatticeBox box_;
  std::array<int, 2> ext_{};
  std::vector<std::size_t> to_full_;
  std::vector<std::size_t> to_reduced_;
  Eigen::VectorXd weights_;
};

}  // namespace kgbreather
