#include <gtest/gtest.h>

#include <boost/math/quadrature/exp_sinh.hpp>

#include <cstdio>
#include <filesystem>
#include <numbers>

#include "kgbreather/continuum_nls.hpp"
#include "test_util.hpp"

using namespace kgbreather;

namespace {

// EL residual -psi'' + m psi - psi^{2p+1} with a 5-point second difference.
double fd_el_residual(const GroundStateProfile& gs, double x) {
  const double h = 1e-3;
  const double d2 = (-gs(x + 2 * h) + 16 * gs(x + h) - 30 * gs(x) + 16 * gs(x - h) - gs(x - 2 * h)) / (12 * h * h);
  return -d2 + gs.m() * gs(x) - std::pow(gs(x), 2 * gs.p() + 1);
}

struct ShootingResult {
  double q0;
  double mass;
};

// Radial shooting for Q'' + Q'/r - Q + Q^{2p+1} = 0 in 2D: bisection on Q(0)
// between solutions that cross zero (too large) and ones that turn upward
// (too small). The mass 2 pi int Q^2 r dr is accumulated along the last
// undershooting trajectory up to its turning point.
ShootingResult shoot_2d(double p) {
  auto rhs = [p](double r, double q, double dq) { return -dq / r + q - std::pow(std::max(q, 0.0), 2 * p + 1); };
  struct Outcome {
    int verdict;
    double mass;
  };
  auto run = [&](double q0) {
    const double dr = 1e-3, r0 = 1e-6, c = q0 - std::pow(q0, 2 * p + 1);
    double r = r0, q = q0 + c * r0 * r0 / 4, dq = c * r0 / 2, acc = 0.0;
    while (r < 14.0) {
      const double k1q = dq, k1d = rhs(r, q, dq);
      const double k2q = dq + 0.5 * dr * k1d, k2d = rhs(r + 0.5 * dr, q + 0.5 * dr * k1q, dq + 0.5 * dr * k1d);
      const double k3q = dq + 0.5 * dr * k2d, k3d = rhs(r + 0.5 * dr, q + 0.5 * dr * k2q, dq + 0.5 * dr * k2d);
      const double k4q = dq + dr * k3d, k4d = rhs(r + dr, q + dr * k3q, dq + dr * k3d);
      const double qn = q + dr / 6 * (k1q + 2 * k2q + 2 * k3q + k4q);
      acc += 0.5 * dr * (q * q * r + qn * qn * (r + dr));
      dq += dr / 6 * (k1d + 2 * k2d + 2 * k3d + k4d);
      q = qn;
      r += dr;
      if (q < 0) return Outcome{1, 0.0};
      if (dq > 0) break;
    }
    return Outcome{-1, 2 * std::numbers::pi * acc};
  };
  double lo = 0.5, hi = 6.0;
  for (int i = 0; i < 60; ++i) {
    const double mid = 0.5 * (lo + hi);
    (run(mid).verdict > 0 ? hi : lo) = mid;
  }
  return {lo, run(lo).mass};
}

}  // namespace

TEST(GroundState, CubicOneDimensionalClosedForm) {
  const auto gs = solve_ground_state(1, 1.0);
  // -psi'' + m psi = psi^3 with A sech(eta x): eta^2 = m, 2 eta^2 = A^2, int psi^2 = 2A^2/eta = 1.
  EXPECT_NEAR(gs.m(), 1.0 / 16.0, 1e-15);
  EXPECT_NEAR(gs(0.0), std::sqrt(2.0) / 4.0, 1e-15);
  EXPECT_NEAR(gs(0.0), 0.353553, 1e-6);
  for (double x : {0.0, 0.7, 3.0, 11.0, 40.0}) {
    EXPECT_NEAR(gs(x), std::sqrt(2.0) / 4.0 / std::cosh(x / 4.0), 1e-15);
  }
  EXPECT_LT(gs.residual(), 1e-8);
  EXPECT_NEAR(gs.normalization(), 1.0, 1e-8);
}

TEST(GroundState, OneDimensionalFamilyAgainstIndependentChecks) {
  boost::math::quadrature::exp_sinh<double> integrator;
  for (double p : {0.5, 0.75, 1.0, 1.5, 1.9}) {
    const auto gs = solve_ground_state(1, p);
    const double mass = 2.0 * integrator.integrate([&](double x) { return gs(x) * gs(x); });
    EXPECT_NEAR(mass, 1.0, 1e-10) << "p=" << p;
    for (double x : {0.0, 0.3, 2.0, 7.5}) EXPECT_LT(std::abs(fd_el_residual(gs, x)), 1e-7) << "p=" << p << " x=" << x;
    EXPECT_LT(gs.residual(), 1e-10);
    EXPECT_LT(gs.tail(), kProfileTailTol);
  }
}

TEST(GroundState, TwoDimensionalAgainstShooting) {
  const double p = 0.5;
  const auto gs = solve_ground_state(2, p);
  EXPECT_LT(gs.residual(), 1e-8);
  EXPECT_NEAR(gs.normalization(), 1.0, 1e-8);
  for (std::size_t i = 1; i < gs.values().size(); ++i) {
    ASSERT_LE(gs.values()[i], gs.values()[i - 1]);
    ASSERT_GE(gs.values()[i], 0.0);
  }
  EXPECT_LT(gs.tail(), kProfileTailTol);

  // psi(r) = m^{1/(2p)} Q(sqrt(m) r) and mass = m^{1/p - 1} int Q^2.
  const auto shot = shoot_2d(p);
  EXPECT_NEAR(gs(0.0) / std::pow(gs.m(), 1.0 / (2 * p)), shot.q0, 2e-4 * shot.q0);
  EXPECT_NEAR(gs.m(), std::pow(1.0 / shot.mass, 1.0 / (1.0 / p - 1.0)), 1e-3 * gs.m());
  // Decay rate sqrt(m).
  const double r1 = 30.0, r2 = 40.0;
  const double rate = -std::log(gs(r2) * std::sqrt(r2) / (gs(r1) * std::sqrt(r1))) / (r2 - r1);
  EXPECT_NEAR(rate, std::sqrt(gs.m()), 2e-3);
}

TEST(GroundState, RejectsExponentOutOfRange) {
  EXPECT_THROW(solve_ground_state(1, 0.4), InvalidArgument);
  EXPECT_THROW(solve_ground_state(1, 2.0), InvalidArgument);
  EXPECT_THROW(solve_ground_state(2, 1.0), InvalidArgument);
  EXPECT_THROW(solve_ground_state(3, 0.5), InvalidArgument);
}

TEST(GroundState, ProfileRoundTrip) {
  const auto dir = std::filesystem::temp_directory_path();
  const auto csv = (dir / "kgb_profile_test.csv").string(), js = (dir / "kgb_profile_test.json").string();
  const auto gs = solve_ground_state(1, 0.75);
  save_profile(gs, csv, js);
  const auto back = load_profile(csv, js);
  EXPECT_EQ(back.m(), gs.m());
  EXPECT_EQ(back.values(), gs.values());
  EXPECT_EQ(back(1.2345), gs(1.2345));
  std::remove(csv.c_str());
  std::remove(js.c_str());
}

TEST(ModeSpec, OffsetsFollowModeOrdering) {
  EXPECT_EQ(ModeSpec(1, 1).offsets()[0], Centering::site);
  EXPECT_EQ(ModeSpec(1, 2).offsets()[0], Centering::bond);
  EXPECT_EQ(ModeSpec(2, 2).offsets(), (Offsets{Centering::site, Centering::bond}));
  EXPECT_EQ(ModeSpec(2, 3).offsets(), (Offsets{Centering::bond, Centering::site}));
  EXPECT_EQ(ModeSpec(2, 4).offsets(), (Offsets{Centering::bond, Centering::bond}));
  EXPECT_EQ(ModeSpec::parse(2, "h1"), ModeSpec(2, 2));
  EXPECT_EQ(ModeSpec::parse(1, "p"), ModeSpec(1, 2));
  EXPECT_THROW(ModeSpec(1, 3), InvalidArgument);
  EXPECT_THROW(ModeSpec::parse(1, "h1"), InvalidArgument);
}

TEST(SampleReference, OneDimensionalModes) {
  const auto gs = solve_ground_state(1, 1.0);
  const auto grid = GridSpec::covering(1, 0.1);
  const auto st = sample_reference(gs, grid, ModeSpec(1, 1));
  EXPECT_NEAR(st(0), std::sqrt(2.0) / 4.0, 1e-15);
  const auto pm = sample_reference(gs, grid, ModeSpec(1, 2));
  for (int j = 0; j <= grid.radius(); ++j) EXPECT_EQ(pm(j), pm(-1 - j));
  EXPECT_NEAR(pm(0), gs(0.05), 1e-16);
  for (const auto* s : {&st, &pm}) {
    for (std::size_t i = 0; i < s->size(); ++i) {
      if (std::abs(s->box().position(i)[0]) >= kDefaultDecayBudget) EXPECT_LT(s->values()[static_cast<Eigen::Index>(i)], 1e-8);
    }
  }
}

TEST(SampleReference, TwoDimensionalModesAreDistinct) {
  const auto gs = solve_ground_state(2, 0.5);
  for (double mu : {0.5, 0.3}) {
    const GridSpec grid(2, static_cast<int>(std::ceil(40.0 / mu)), mu, 40.0);
    std::vector<SymmetricSequence> modes;
    for (int i = 1; i <= 4; ++i) modes.push_back(sample_reference(gs, grid, ModeSpec(2, i)));
    for (int a = 0; a < 4; ++a) {
      for (int b = a + 1; b < 4; ++b) {
        double diff = 0.0;
        for (int j0 = -5; j0 <= 5; ++j0) {
          for (int j1 = -5; j1 <= 5; ++j1) diff = std::max(diff, std::abs(modes[a](j0, j1) - modes[b](j0, j1)));
        }
        EXPECT_GT(diff, 0.0) << a + 1 << " vs " << b + 1;
      }
      EXPECT_EQ(modes[a].asymmetry(), 0.0);
    }
  }
}

TEST(SampleReference, CouplingRescalesLength) {
  const auto gs = solve_ground_state(1, 1.0);
  const auto grid = GridSpec::covering(1, 0.1);
  const auto s = sample_reference(gs, grid, ModeSpec(1, 1), 0.25);
  EXPECT_NEAR(s(10), gs(2.0), 1e-16);
}

TEST(SampleReference, DiscreteMassApproachesOne) {
  // Riemann sums of smooth decaying profiles converge at least like mu.
  const auto gs = solve_ground_state(1, 1.0);
  for (int mode : {1, 2}) {
    for (double mu : {0.2, 0.1, 0.05}) {
      const auto s = sample_reference(gs, GridSpec::covering(1, mu), ModeSpec(1, mode));
      EXPECT_LE(std::abs(mu * s.values().squaredNorm() - 1.0), mu) << "mode " << mode << " mu " << mu;
    }
  }
}

TEST(ReferenceSolution, TimeDependence) {
  const double m = 1.0 / 16.0, mu = 0.1;
  EXPECT_NEAR(frequency(m, mu), std::sqrt(1.0 - 0.01 / 16.0), 1e-16);
  EXPECT_NEAR(frequency(m, mu), 0.99968745, 5e-9);
  const auto gs = solve_ground_state(1, 1.0);
  const auto psi = sample_reference(gs, GridSpec::covering(1, mu), ModeSpec(1, 1));
  const auto at0 = reference_solution(psi, mu, 1.0, m, 0.0);
  EXPECT_EQ((at0.values() - 0.1 * psi.values()).cwiseAbs().maxCoeff(), 0.0);
  const auto quarter = reference_solution(psi, mu, 1.0, m, std::numbers::pi / (2 * frequency(m, mu)));
  EXPECT_LT(sup_norm(quarter), 1e-16);
  EXPECT_THROW(frequency(1.0, 1.0), InvalidArgument);
  EXPECT_THROW(reference_solution(psi, 5.0, 1.0, 1.0 / 16.0, 0.0), InvalidArgument);
}
