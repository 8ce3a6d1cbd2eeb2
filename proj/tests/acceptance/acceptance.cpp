// Acceptance suite: one [PASS]/[FAIL] line per criterion.
//   acceptance          run all criteria
//   acceptance 3 5      run a subset
// Exit status is nonzero when any selected criterion fails.

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <numbers>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "../test_util.hpp"
#include "kgbreather/kgbreather.hpp"

using namespace kgbreather;
using kgbreather::testing::random_bump;
using kgbreather::testing::random_sequence;
using kgbreather::testing::small_grid;

namespace {

const Offsets kSite{Centering::site, Centering::site};
const Offsets kMixed{Centering::site, Centering::bond};

struct Outcome {
  bool pass = true;
  std::ostringstream detail;

  void check(bool ok, const std::string& what) {
    pass = pass && ok;
    detail << (detail.tellp() > 0 ? "; " : "") << what << (ok ? "" : " [x]");
  }
};

std::string fmt(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", x);
  return buf;
}

bool in_window(double x, double lo, double hi) { return x >= lo && x <= hi; }

const GroundStateProfile& profile(int n, double p) {
  static std::map<std::pair<int, double>, GroundStateProfile> cache;
  auto it = cache.find({n, p});
  if (it == cache.end()) it = cache.emplace(std::make_pair(n, p), solve_ground_state(n, p)).first;
  return it->second;
}

// Phi for (n=1, p=1, a=0.25) at mu, with the dNLS problem it solves.
std::pair<DnlsProblem, SymmetricSequence> dnls_1d(double mu) {
  const auto& gs = profile(1, 1.0);
  const auto grid = GridSpec::covering(1, mu);
  const ModeSpec mode(1, 1);
  DnlsProblem prob(grid, 0.25, 1.0, gs.m(), mode);
  auto Phi = solve_dnls_ground_state(prob, sample_reference(gs, grid, mode, 0.25)).Phi;
  return {prob, Phi};
}

// 1. Exact identities.
void criterion_1(Outcome& o) {
  std::mt19937_64 rng(2024);
  double grad = 0.0;
  for (int n : {1, 2}) {
    for (int trial = 0; trial < (n == 1 ? 100 : 20); ++trial) {
      const double mu = 0.05 + 0.05 * (trial % 4);
      LatticeBox box(small_grid(n, n == 1 ? 50 : 15, mu), n == 1 ? kSite : kMixed);
      const auto psi = trial % 2 ? random_sequence(box, rng) : random_bump(box, rng);
      const double lhs = grad_energy(FemInterpolant(psi)), rhs = std::pow(mu, n - 2) * dirichlet_form(psi);
      grad = std::max(grad, std::abs(lhs - rhs) / rhs);
    }
  }
  o.check(grad < 1e-12, "FEM gradient identity rel " + fmt(grad));

  const auto [prob, Phi] = dnls_1d(0.1);
  const double g0 = norm_l2(G0(prob, Phi));
  const auto h = hessian_diagnostics(prob, Phi);
  o.check(g0 < 1e-12 && h.identity_relative < 1e-8,
          "Hessian identity rel " + fmt(h.identity_relative) + " at |G0| " + fmt(g0));

  LatticeBox box(small_grid(1, 8, 0.2), kSite);
  Eigen::MatrixXd c(static_cast<Eigen::Index>(box.size()), 8);
  for (int l = 0; l < 8; ++l) c.col(l) = random_sequence(box, rng).values();
  const TimeFourierField u(box, c);
  Eigen::MatrixXd sum = project_W(u).coeffs();
  sum.col(1) += project_V(u).values();
  const double proj = (sum - c).cwiseAbs().maxCoeff();
  o.check(proj == 0.0, "Pi_V + Pi_W - id " + fmt(proj));

  const CosineTransform tr(7);
  Eigen::MatrixXd v = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(box.size()), 8);
  v.col(1) = random_sequence(box, rng).values();
  const Eigen::MatrixXd Nv = apply_N_coeffs(v, 1.0, 1.0, tr);
  const Eigen::ArrayXd v3 = v.col(1).array().cube();
  double cos3 = 0.0;
  for (int l = 0; l < 8; ++l) {
    const Eigen::ArrayXd expect = l == 1 ? (0.75 * v3).eval() : (l == 3 ? (0.25 * v3).eval() : Eigen::ArrayXd::Zero(v3.size()).eval());
    cos3 = std::max(cos3, (Nv.col(l).array() - expect).abs().maxCoeff());
  }
  o.check(cos3 < 1e-13, "cos^3 split " + fmt(cos3));

  const double quad = boost::math::quadrature::gauss_kronrod<double, 61>::integrate(
      [](double t) { return std::pow(std::cos(t), 4); }, 0.0, 2 * std::numbers::pi, 10, 1e-15);
  const double c1e = std::max(std::abs(c1(1.0) - 0.75 * std::numbers::pi), std::abs(c1(1.0) - quad));
  o.check(c1e < 1e-12, "c1(1) vs 3pi/4 and quadrature " + fmt(c1e));
}

// 2. Inequality suites.
void criterion_2(Outcome& o) {
  std::mt19937_64 rng(7);
  long sob_bad = 0, emb_bad = 0, draws = 0;
  for (int n : {1, 2}) {
    for (double mu : {0.05, 0.1, 0.2}) {
      LatticeBox box(small_grid(n, n == 1 ? 60 : 12, mu), n == 1 ? kSite : kMixed);
      for (int trial = 0; trial < 1000; ++trial, ++draws) {
        const auto x = trial % 2 ? random_sequence(box, rng) : random_bump(box, rng);
        if (!(sup_norm(x) <= 2.0 * std::sqrt(mu) * norm_Q(x, mu))) ++sob_bad;
        // q in {4, 2p+2, 4p+2} for p in {1/2, 1}
        for (double q : {3.0, 4.0, 6.0}) {
          if (!sample_embedding_checks(x, q)) ++emb_bad;
        }
      }
    }
  }
  o.check(sob_bad == 0, "Sobolev violations " + std::to_string(sob_bad) + "/" + std::to_string(draws));
  o.check(emb_bad == 0, "embedding violations " + std::to_string(emb_bad));
  for (double mu : {0.1, 0.2}) {
    const auto [prob, Phi] = dnls_1d(mu);
    const auto h = hessian_diagnostics(prob, Phi);
    o.check(h.d < 0.0 && h.tangent_min_eigenvalue > 0.0,
            "mu " + fmt(mu) + ": d " + fmt(h.d) + ", tangent min eig " + fmt(h.tangent_min_eigenvalue));
  }
}

// Full-lattice KG residual from harmonic sums, independent of the folded path.
double direct_residual(const Breather& b) {
  const TimeFourierField u = b.field();
  const int M = 8 * (b.L() + 1);
  double mx = 0.0;
  for (int k = 0; k <= M; ++k) {
    const double t = std::numbers::pi * k / M;
    Eigen::VectorXd x = Eigen::VectorXd::Zero(u.coeffs().rows()), xtt = x;
    for (int l = 0; l <= u.L(); ++l) {
      x += std::cos(l * t) * u.coeffs().col(l);
      xtt -= static_cast<double>(l * l) * std::cos(l * t) * u.coeffs().col(l);
    }
    const auto lap = laplacian(SymmetricSequence(u.box(), x));
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      const double r = b.omega * b.omega * xtt[i] - b.config.a * lap.values()[i] + x[i] -
                       b.beta * std::pow(std::abs(x[i]), 2.0 * b.config.p) * x[i];
      mx = std::max(mx, std::abs(r));
    }
  }
  return mx;
}

// 3. Breather construction, 1D ST and P.
void criterion_3(Outcome& o) {
  for (const char* mode : {"st", "p"}) {
    BreatherConfig c;
    c.mode = mode;
    const Breather b = assemble(c, &profile(1, 1.0));
    const double direct = direct_residual(b);
    const double asym = b.symmetry_error();
    o.check(b.residual < 1e-10 && direct < 1e-10 && b.harmonic_one_dominates() && asym < 1e-13,
            std::string(mode) + ": residual " + fmt(b.residual) + " (direct " + fmt(direct) + "), dominance " +
                (b.harmonic_one_dominates() ? "yes" : "no") + ", asymmetry " + fmt(asym));
  }
}

void check_slope(Outcome& o, const ScalingTable& t, const std::string& col, double lo, double hi) {
  if (!t.fits.count(col)) {
    o.check(false, col + ": no fit");
    return;
  }
  const auto& f = t.fits.at(col);
  std::string win = hi < 1e300 ? "[" + fmt(lo) + ", " + fmt(hi) + "]" : ">= " + fmt(lo);
  o.check(in_window(f.slope, lo, hi), col + " slope " + fmt(f.slope) + " in " + win);
}

// 4. Exponents in 1D.
void criterion_4(Outcome& o) {
  BreatherConfig c;
  const auto t = scaling_study(c, {0.20, 0.15, 0.10, 0.075, 0.05}, 1, &profile(1, 1.0));
  int ok = 0;
  for (const auto& r : t.rows) ok += r.ok && r.sobolev_holds && r.harmonic_one_dominates;
  o.check(ok == 5, std::to_string(ok) + "/5 breathers");
  check_slope(o, t, "e_H2", 1.25, 1.75);
  check_slope(o, t, "e_sup", 1.7, 2.3);
  check_slope(o, t, "norm_w_X2", 2.2, 2.8);
  check_slope(o, t, "dist_Phi_psi", 0.75, 1e308);
  check_slope(o, t, "dist_phi_Phi", 1.15, 1.85);
}

// 5. 2D, p = 1/2, H1 mode.
void criterion_5(Outcome& o) {
  BreatherConfig c;
  c.n = 2;
  c.p = 0.5;
  c.mode = "h1";
  const auto t = scaling_study(c, {0.30, 0.25, 0.20, 0.15}, 1, &profile(2, 0.5));
  double worst = 0.0;
  int ok = 0;
  for (const auto& r : t.rows) {
    ok += r.ok;
    if (r.ok) worst = std::max(worst, r.kg_residual);
  }
  o.check(ok == 4 && worst < 1e-9, std::to_string(ok) + "/4 breathers, max residual " + fmt(worst));
  check_slope(o, t, "e_H2", 1.6, 2.4);
}

// 6. One leapfrog period.
void criterion_6(Outcome& o) {
  BreatherConfig c;
  const Breather b = assemble(c, &profile(1, 1.0));
  const auto q = integrate_period(b, 100000, 1, 1.0);
  const auto ref = integrate_reference(b, *b.psi, 100000, 1, 1.0);
  o.check(q.return_error < 1e-6, "return error " + fmt(q.return_error));
  o.check(q.energy_drift < 1e-8, "energy drift " + fmt(q.energy_drift));
  o.check(ref.return_error > q.return_error, "seeded with Psi " + fmt(ref.return_error));
}

// 7. Potential remainder of the interpolated ground state.
void criterion_7(Outcome& o) {
  struct Case {
    int n;
    double p;
    std::vector<double> mus;
  };
  for (const Case& cs : {Case{1, 1.0, {0.2, 0.15, 0.1, 0.075, 0.05}}, Case{2, 0.5, {0.4, 0.3, 0.25, 0.2}}}) {
    std::vector<double> rg;
    for (double mu : cs.mus) {
      const auto psi = sample_reference(profile(cs.n, cs.p), GridSpec::covering(cs.n, mu, cs.n == 1 ? 80.0 : 50.0),
                                        ModeSpec(cs.n, 1));
      rg.push_back(std::abs(functional_remainder(FemInterpolant(psi), 2.0 * cs.p).R_G));
    }
    const double s = fit_loglog(cs.mus, rg).slope;
    o.check(s >= 0.75, "n=" + std::to_string(cs.n) + " |R_G| slope " + fmt(s));
  }
}

const std::vector<std::pair<std::string, std::function<void(Outcome&)>>>& criteria() {
  static const std::vector<std::pair<std::string, std::function<void(Outcome&)>>> c{
      {"exact identities", criterion_1},
      {"inequality suites", criterion_2},
      {"1D breather construction", criterion_3},
      {"1D exponent reproduction", criterion_4},
      {"2D residual and slope", criterion_5},
      {"dynamical validation", criterion_6},
      {"FEM remainder sweep", criterion_7}};
  return c;
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> pick;
  for (int i = 1; i < argc; ++i) pick.insert(std::atoi(argv[i]));
  bool all = true;
  for (std::size_t k = 0; k < criteria().size(); ++k) {
    const int id = static_cast<int>(k) + 1;
    if (!pick.empty() && !pick.count(id)) continue;
    Outcome o;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      criteria()[k].second(o);
    } catch (const std::exception& e) {
      o.check(false, std::string("exception: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::printf("[%s] %d %s (%.1f s): %s\n", o.pass ? "PASS" : "FAIL", id, criteria()[k].first.c_str(), secs,
                o.detail.str().c_str());
    std::fflush(stdout);
    all = all && o.pass;
  }
  return all ? 0 : 1;
}
