#pragma once

#include <random>

#include "kgbreather/lattice.hpp"

namespace kgbreather::testing {

/// Grid without the decay-budget requirement, for small hand-made lattices.
inline GridSpec small_grid(int n, int K, double mu = 1.0) { return GridSpec(n, K, mu, 0.0); }

inline SymmetricSequence random_sequence(const LatticeBox& box, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> dist(0.0, scale);
  Eigen::VectorXd v(static_cast<Eigen::Index>(box.size()));
  for (auto& x : v) x = dist(rng);
  return SymmetricSequence::projected(box, v);
}

/// Random smooth bump: a Gaussian of random width and height centred at the
/// symmetry centre, plus small noise. Exercises the regime where the
/// Dirichlet form is small compared with the l2 norm.
inline SymmetricSequence random_bump(const LatticeBox& box, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> width(0.5, 20.0), height(-3.0, 3.0);
  std::normal_distribution<double> noise(0.0, 1e-3);
  const double w = width(rng), h = height(rng);
  Eigen::VectorXd v(static_cast<Eigen::Index>(box.size()));
  for (std::size_t i = 0; i < box.size(); ++i) {
    const auto x = box.position(i);
    v[static_cast<Eigen::Index>(i)] = h * std::exp(-(x[0] * x[0] + x[1] * x[1]) / (w * w)) + noise(rng);
  }
  return SymmetricSequence::projected(box, v);
}

inline double rel_diff(double a, double b) {
  const double s = std::max(std::abs(a), std::abs(b));
  return s == 0.0 ? 0.0 : std::abs(a - b) / s;
}

}  // namespace kgbreather::testing
