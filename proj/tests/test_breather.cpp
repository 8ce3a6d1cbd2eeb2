#include <gtest/gtest.h>

#include <cmath>
#include <map>
#include <numbers>
#include <sstream>

#include "kgbreather/breather.hpp"
#include "test_util.hpp"

using namespace kgbreather;

namespace {

const GroundStateProfile& profile(int n, double p) {
  static std::map<std::pair<int, double>, GroundStateProfile> cache;
  auto it = cache.find({n, p});
  if (it == cache.end()) it = cache.emplace(std::make_pair(n, p), solve_ground_state(n, p)).first;
  return it->second;
}

BreatherConfig config_1d(double mu = 0.1, const std::string& mode = "st") {
  BreatherConfig c;
  c.mu = mu;
  c.mode = mode;
  c.decay_budget = 40.0;
  return c;
}

const Breather& cached_1d() {
  static const Breather b = assemble(config_1d(), &profile(1, 1.0));
  return b;
}

// Full-lattice value of the cosine series at time t (rescaled), with optional
// second time derivative.
SymmetricSequence eval_at(const Breather& b, const Eigen::MatrixXd& c, double t, int deriv = 0) {
  Eigen::VectorXd r = Eigen::VectorXd::Zero(c.rows());
  for (Eigen::Index l = 0; l < c.cols(); ++l) {
    const double l2 = static_cast<double>(l * l);
    r += (deriv == 0 ? 1.0 : (deriv == 1 ? 0.0 : -l2)) * std::cos(l * t) * c.col(l);
    if (deriv == 1) r += -static_cast<double>(l) * std::sin(l * t) * c.col(l);
  }
  return b.fold->expand(r);
}

}  // namespace

TEST(BreatherConfig, RejectsBadParameters) {
  auto bad = [](auto edit) {
    BreatherConfig c = config_1d();
    edit(c);
    return c;
  };
  EXPECT_THROW(bad([](auto& c) { c.n = 3; }).validate(), InvalidArgument);
  EXPECT_THROW(bad([](auto& c) { c.a = 0.5; }).validate(), InvalidArgument);
  EXPECT_THROW(bad([](auto& c) { c.mu = -0.1; }).validate(), InvalidArgument);
  EXPECT_THROW(bad([](auto& c) { c.mode = "h1"; }).validate(), InvalidArgument);
  EXPECT_THROW(bad([](auto& c) { c.max_L = 3; }).validate(), InvalidArgument);
  EXPECT_THROW(bad([](auto& c) { c.p = 3.0; c.n = 2; }).validate(), InvalidArgument);
  EXPECT_NO_THROW(config_1d().validate());
}

TEST(Breather, OneDimensionalResidualAndShape) {
  const Breather& b = cached_1d();
  EXPECT_LT(b.residual, 1e-10);
  EXPECT_TRUE(b.harmonic_one_dominates());
  EXPECT_EQ(b.symmetry_error(), 0.0);
  EXPECT_NEAR(b.omega, std::sqrt(1.0 - b.m * 0.01), 1e-15);
  // Only odd harmonics appear for an odd nonlinearity.
  const auto h = b.harmonic_norms();
  for (int l = 0; l <= b.L(); l += 2) EXPECT_LT(h[static_cast<std::size_t>(l)], 1e-14 * h[1]) << "l=" << l;
  EXPECT_GT(h[3], 0.0);
  EXPECT_LT(b.tail_fraction(), 0.05);
  EXPECT_TRUE(b.harmonics_resolved());
  EXPECT_EQ(b.report()["L"], b.L());
}

TEST(Breather, ResidualMatchesDirectEvaluation) {
  const Breather& b = cached_1d();
  const int M = 8 * (b.L() + 1);
  double mx = 0.0;
  for (int k = 0; k <= M; ++k) {
    const double t = std::numbers::pi * k / M;
    const auto u = eval_at(b, b.u, t), utt = eval_at(b, b.u, t, 2);
    const auto lap = laplacian(u);
    for (Eigen::Index i = 0; i < u.values().size(); ++i) {
      const double x = u.values()[i];
      const double r = b.omega * b.omega * utt.values()[i] - b.config.a * lap.values()[i] + x -
                       b.beta * std::pow(std::abs(x), 2.0) * x;
      mx = std::max(mx, std::abs(r));
    }
  }
  EXPECT_NEAR(kg_residual(b, M), mx, 1e-13);
  EXPECT_THROW(kg_residual(b, b.L()), InvalidArgument);

  Breather off = b;
  off.u(0, 3) += 1e-6;
  EXPECT_GT(kg_residual(off), 1e-7);
}

TEST(Breather, ErrorAgainstReferenceMatchesQuadrature) {
  const Breather& b = cached_1d();
  const auto e = error_vs_reference(b, *b.psi);
  Eigen::MatrixXd d = b.u;
  d.col(1) -= b.amplitude_scale() * b.fold->restrict(*b.psi);
  // Trapezoid on one period in physical time; exact for trigonometric
  // polynomials of degree below the node count.
  const int M = 4 * (b.L() + 1);
  const double T = 2 * std::numbers::pi / b.omega, om = b.omega;
  double h2 = 0.0, sup = 0.0;
  for (int k = 0; k < 2 * M; ++k) {
    const double t = std::numbers::pi * k / M;
    const auto x = eval_at(b, d, t), xt = eval_at(b, d, t, 1), xtt = eval_at(b, d, t, 2);
    h2 += (x.values().squaredNorm() + om * om * xt.values().squaredNorm() +
           std::pow(om, 4) * xtt.values().squaredNorm()) *
          T / (2 * M);
    sup = std::max(sup, sup_norm(x));
  }
  EXPECT_NEAR(e.e_H2, std::sqrt(h2), 1e-10 * std::sqrt(h2));
  EXPECT_NEAR(e.e_sup, sup, 1e-14);
  EXPECT_TRUE(e.sobolev_holds);
  EXPECT_LE(e.e_sup, e.sobolev_bound);
}

TEST(Breather, ReturnsAfterOnePeriod) {
  const Breather& b = cached_1d();
  const auto rep = integrate_period(b, 100000);
  EXPECT_LT(rep.energy_drift, 1e-6);
  EXPECT_LT(rep.return_error, 1e-6);
  // The leading-order profile alone drifts off much further.
  const auto ref = integrate_reference(b, *b.psi, 100000);
  EXPECT_GT(ref.return_error, 10 * rep.return_error);
  EXPECT_THROW(integrate_period(b, 0), InvalidArgument);
  EXPECT_THROW(integrate_period(b, 3), NonConvergence);
}

TEST(Breather, ZeroInitialDataReturnsZero) {
  const Breather& b = cached_1d();
  EXPECT_EQ(integrate_from(b, Eigen::VectorXd::Zero(b.fold->size()), 100).return_error, 0.0);
}

TEST(Breather, AdaptiveHarmonicsReduceResidual) {
  BreatherConfig c = config_1d(0.2);
  c.L = 3;
  c.max_L = 15;
  c.residual_target = 1e-300;
  const Breather b = assemble(c, &profile(1, 1.0));
  ASSERT_EQ(b.L_history.size(), 3u);
  EXPECT_EQ(b.L_history[0].first, 3);
  EXPECT_EQ(b.L_history[2].first, 15);
  EXPECT_LT(b.L_history[1].second, b.L_history[0].second);
  EXPECT_EQ(b.L(), 15);
}

TEST(Breather, TwoSiteModeAndTailGuard) {
  const Breather b = assemble(config_1d(0.15, "p"), &profile(1, 1.0));
  EXPECT_LT(b.residual, 1e-10);
  EXPECT_EQ(b.box().offsets()[0], Centering::bond);

  BreatherConfig c = config_1d(0.2);
  c.decay_budget = 3.0;
  EXPECT_THROW(assemble(c, &profile(1, 1.0)), GuardViolation);
}

TEST(Breather, TwoDimensionalSmoke) {
  BreatherConfig c;
  c.n = 2;
  c.p = 0.5;
  c.mu = 0.4;
  c.mode = "st";
  c.max_L = 15;
  const Breather b = assemble(c, &profile(2, 0.5));
  EXPECT_TRUE(b.harmonic_one_dominates());
  EXPECT_EQ(b.symmetry_error(), 0.0);
  EXPECT_LT(b.residual, 1e-4);
}

TEST(BreatherFile, RoundTrip) {
  const Breather& b = cached_1d();
  std::stringstream ss;
  write_breather(b, ss);
  const Breather r = read_breather(ss);
  EXPECT_EQ(r.u, b.u);
  EXPECT_TRUE(r.box() == b.box());
  EXPECT_EQ(r.omega, b.omega);
  EXPECT_EQ(r.config.to_json(), b.config.to_json());
  EXPECT_DOUBLE_EQ(kg_residual(r), b.residual);

  std::string s = ss.str();
  std::stringstream bad(s.substr(0, s.size() - 8));
  EXPECT_THROW(read_breather(bad), IoError);
  s[0] = 'X';
  std::stringstream bad2(s);
  EXPECT_THROW(read_breather(bad2), IoError);
}

TEST(Scaling, LogLogFitRecoversPowerLaw) {
  std::vector<double> x{0.4, 0.2, 0.1, 0.05}, y;
  for (double v : x) y.push_back(3.0 * std::pow(v, 2.5));
  const auto f = fit_loglog(x, y, 2.5);
  EXPECT_NEAR(f.slope, 2.5, 1e-12);
  EXPECT_NEAR(f.stderr_, 0.0, 1e-10);
  y[1] *= 1.1;
  const auto g = fit_loglog(x, y);
  EXPECT_LE(g.ci_low, g.slope);
  EXPECT_GE(g.ci_high, g.slope);
  EXPECT_GT(g.stderr_, 0.0);
  EXPECT_THROW(fit_loglog({1.0}, {1.0}), InvalidArgument);
  EXPECT_THROW(fit_loglog({1.0, -1.0}, {1.0, 2.0}), InvalidArgument);
}

TEST(Scaling, TargetsFollowDimensionAndExponent) {
  const auto t1 = scaling_targets(1, 1.0);
  EXPECT_DOUBLE_EQ(t1.at("e_H2"), 1.5);
  EXPECT_DOUBLE_EQ(t1.at("e_sup"), 2.0);
  const auto t2 = scaling_targets(2, 0.5);
  EXPECT_DOUBLE_EQ(t2.at("e_H2"), 2.0);
  EXPECT_DOUBLE_EQ(t2.at("dist_phi_Phi"), 1.0);
}

TEST(Scaling, RejectsBadMuLists) {
  EXPECT_THROW(scaling_study(config_1d(), {0.2, 0.1, 0.05}), InvalidArgument);
  EXPECT_THROW(scaling_study(config_1d(), {0.2, 0.1, 0.1, 0.05}), InvalidArgument);
}

TEST(Scaling, SweepRecordsFailuresAndFits) {
  BreatherConfig c = config_1d();
  c.K = 600;  // fixed box: the largest mu passes, the smallest cannot fit its tail
  const auto t = scaling_study(c, {0.2, 0.15, 0.1, 0.075, 0.01}, 2, &profile(1, 1.0));
  ASSERT_EQ(t.rows.size(), 5u);
  EXPECT_TRUE(t.rows[0].ok);
  EXPECT_FALSE(t.rows[4].ok);
  EXPECT_NE(t.rows[4].error.find("dnls"), std::string::npos);
  ASSERT_EQ(t.fits.count("dist_Phi_psi"), 1u);
  EXPECT_EQ(t.fits.at("dist_Phi_psi").count, 4);
  std::ostringstream os;
  t.write_csv(os);
  EXPECT_EQ(os.str().substr(0, 7), "mu,ok,K");
  EXPECT_EQ(t.to_json()["rows"].size(), 5u);
}

TEST(Breather, AssemblyIsDeterministic) {
  const Breather b = assemble(config_1d(0.15), &profile(1, 1.0));
  const Breather c = assemble(config_1d(0.15), &profile(1, 1.0));
  EXPECT_EQ(b.u, c.u);
  EXPECT_EQ(b.residual, c.residual);
}

TEST(Breather, ResidualOfReferenceAndZeroField) {
  const Breather& b = cached_1d();
  Breather ref = b;
  ref.u.setZero();
  EXPECT_EQ(kg_residual(ref), 0.0);
  ref.u.col(1) = b.amplitude_scale() * b.fold->restrict(*b.psi);
  const double r = kg_residual(ref);
  EXPECT_GT(r, 1e6 * b.residual);
  // O(mu^{1/p + 2}) with an O(1) constant
  EXPECT_LT(r, 10 * std::pow(b.config.mu, 3.0));
  EXPECT_GT(r, 1e-3 * std::pow(b.config.mu, 3.0));
}
