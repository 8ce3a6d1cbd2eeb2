// kgbreather: ground states, breathers, mu sweeps and checks from the shell.
//
// Options may also come from a key=value file given with --config; keys are
// the long option names, grouped under [groundstate], [breather], ... for
// subcommand options. Command-line flags win over the file, the file over
// the built-in defaults.

#include <CLI11.hpp>

#include <iostream>
#include <string>
#include <vector>

#include "kgbreather/kgbreather.hpp"

using namespace kgbreather;

namespace {

struct Common {
  int n = 1;
  double p = 1.0;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("--n", c.n, "lattice dimension (1 or 2)")->capture_default_str();
  sub->add_option("--p", c.p, "nonlinearity exponent")->capture_default_str();
}

void add_breather_options(CLI::App* sub, BreatherConfig& c) {
  sub->add_option("--n", c.n, "lattice dimension (1 or 2)")->capture_default_str();
  sub->add_option("--p", c.p, "nonlinearity exponent, 1/2 <= p < 2/n")->capture_default_str();
  sub->add_option("--a", c.a, "coupling, 0 < a < 1/2")->capture_default_str();
  sub->add_option("--mode", c.mode, "st | p | h1 | h2")->capture_default_str();
  sub->add_option("--K", c.K, "truncation radius (0: from the decay budget)")->capture_default_str();
  sub->add_option("--budget", c.decay_budget, "decay budget K*mu (0: 80 in 1D, 50 in 2D)")->capture_default_str();
  sub->add_option("--Lmax", c.L, "number of time harmonics on the first attempt")->capture_default_str();
  sub->add_option("--max-L", c.max_L, "ceiling for the adaptive harmonic count")->capture_default_str();
  sub->add_option("--tol", c.kernel_tol, "kernel Newton tolerance")->capture_default_str();
  sub->add_option("--residual-target", c.residual_target, "KG residual target (0: 1e-10 in 1D, 1e-9 in 2D)")
      ->capture_default_str();
}

void write_json(const nlohmann::json& j, const std::string& path) {
  auto os = io::open_out(path);
  os << j.dump(2) << '\n';
  if (!os) throw IoError("cannot write " + path);
}

double slope_of(const std::vector<double>& x, const std::vector<double>& y) {
  return x.size() >= 2 ? fit_loglog(x, y).slope : 0.0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Small-amplitude breathers of Klein-Gordon lattices"};
  app.set_config("--config", "", "key=value configuration file");
  app.require_subcommand(1);

  // groundstate
  Common gsc;
  double gs_tol = 1e-10;
  std::string gs_out = "groundstate";
  auto* gs = app.add_subcommand("groundstate", "continuum ground state profile -> CSV + JSON");
  add_common(gs, gsc);
  gs->add_option("--tol", gs_tol, "profile tolerance")->capture_default_str();
  gs->add_option("--out", gs_out, "output prefix")->capture_default_str();

  // breather
  BreatherConfig bc;
  std::string b_out = "breather";
  auto* br = app.add_subcommand("breather", "assemble one breather -> .kgbr + phi CSV + report JSON");
  add_breather_options(br, bc);
  br->add_option("--mu", bc.mu, "scaling parameter")->capture_default_str();
  br->add_option("--out", b_out, "output prefix")->capture_default_str();

  // scaling
  BreatherConfig sc;
  std::vector<double> s_mus;
  unsigned s_jobs = 1;
  std::string s_out = "scaling";
  auto* scl = app.add_subcommand("scaling", "mu sweep with log-log slope fits -> CSV + JSON");
  add_breather_options(scl, sc);
  scl->add_option("--mu-list", s_mus, "strictly decreasing mu values (at least 4)")->required()->expected(4, -1);
  scl->add_option("--jobs", s_jobs, "worker threads")->capture_default_str();
  scl->add_option("--out", s_out, "output prefix")->capture_default_str();

  // validate
  std::string v_in, v_out;
  bool v_integrate = false;
  long v_steps = 100000;
  int v_periods = 1;
  double v_drift = 1e-8;
  auto* val = app.add_subcommand("validate", "residual, symmetry and periodicity checks of a breather file");
  val->add_option("--input", v_in, "breather file (.kgbr)")->required();
  val->add_flag("--integrate", v_integrate, "also run the leapfrog period check");
  val->add_option("--steps", v_steps, "leapfrog steps per period")->capture_default_str();
  val->add_option("--periods", v_periods, "number of periods")->capture_default_str();
  val->add_option("--max-drift", v_drift, "allowed relative energy drift")->capture_default_str();
  val->add_option("--out", v_out, "also write the JSON here");

  // fem-check
  Common fc;
  std::vector<double> f_mus;
  double f_budget = 0.0;
  std::string f_mode = "st", f_out;
  auto* fem = app.add_subcommand("fem-check", "gradient identity and potential remainder along a mu sweep");
  add_common(fem, fc);
  fem->add_option("--mu-list", f_mus, "mu values")->required()->expected(2, -1);
  fem->add_option("--mode", f_mode, "st | p | h1 | h2")->capture_default_str();
  fem->add_option("--budget", f_budget, "decay budget (0: 80 in 1D, 50 in 2D)")->capture_default_str();
  fem->add_option("--out", f_out, "also write the JSON here");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return static_cast<int>(ExitCode::guard_violation);
  }

  try {
    if (*gs) {
      const auto profile = solve_ground_state(gsc.n, gsc.p, gs_tol);
      save_profile(profile, gs_out + ".csv", gs_out + ".json");
      std::cout << nlohmann::json{{"n", profile.dim()}, {"p", profile.p()}, {"m", profile.m()},
                                  {"residual", profile.residual()}}
                       .dump(2)
                << '\n';
    } else if (*br) {
      const Breather b = assemble(bc);
      save_breather(b, b_out + ".kgbr");
      save_csv(b.phi(), b_out + "_phi.csv");
      auto rep = b.report();
      rep["reference_error"] = [&] {
        const auto e = error_vs_reference(b, *b.psi);
        return nlohmann::json{{"e_H2", e.e_H2}, {"e_sup", e.e_sup}, {"sobolev_bound", e.sobolev_bound}};
      }();
      write_json(rep, b_out + ".json");
      std::cout << nlohmann::json{{"kg_residual", b.residual}, {"L", b.L()}, {"omega", b.omega},
                                  {"harmonic_one_dominates", b.harmonic_one_dominates()}}
                       .dump(2)
                << '\n';
      if (b.residual >= bc.target()) {
        std::cerr << "kg residual " << b.residual << " above target " << bc.target() << " at max-L\n";
        return static_cast<int>(ExitCode::nonconvergence);
      }
    } else if (*scl) {
      const auto t = scaling_study(sc, s_mus, s_jobs);
      {
        auto os = io::open_out(s_out + ".csv");
        t.write_csv(os);
        if (!os) throw IoError("cannot write " + s_out + ".csv");
      }
      write_json(t.to_json(), s_out + ".json");
      nlohmann::json fits = nlohmann::json::object();
      for (const auto& [k, f] : t.fits) fits[k] = f.to_json();
      std::cout << fits.dump(2) << '\n';
    } else if (*val) {
      const Breather b = load_breather(v_in);
      nlohmann::json j{{"input", v_in},
                       {"kg_residual", kg_residual(b)},
                       {"symmetry_error", b.symmetry_error()},
                       {"harmonic_one_dominates", b.harmonic_one_dominates()},
                       {"harmonic_tail", b.harmonic_tail()}};
      if (v_integrate) j["dynamics"] = integrate_period(b, v_steps, v_periods, v_drift).to_json();
      if (!v_out.empty()) write_json(j, v_out);
      std::cout << j.dump(2) << '\n';
    } else if (*fem) {
      const auto profile = solve_ground_state(fc.n, fc.p);
      const ModeSpec mode = ModeSpec::parse(fc.n, f_mode);
      const double budget = f_budget > 0.0 ? f_budget : (fc.n == 1 ? 80.0 : 50.0);
      nlohmann::json rows = nlohmann::json::array();
      std::vector<double> x, rg;
      for (double mu : f_mus) {
        const auto psi = sample_reference(profile, GridSpec::covering(fc.n, mu, budget), mode);
        const FemInterpolant u(psi);
        const double lhs = grad_energy(u), rhs = std::pow(mu, fc.n - 2) * dirichlet_form(psi);
        const auto r = functional_remainder(u, 2.0 * fc.p);
        rows.push_back({{"mu", mu},
                        {"grad_identity_rel_error", std::abs(lhs - rhs) / rhs},
                        {"G_c", r.G_c},
                        {"G_d", r.G_d},
                        {"R_G", r.R_G}});
        x.push_back(mu);
        rg.push_back(std::abs(r.R_G));
      }
      nlohmann::json j{{"n", fc.n}, {"p", fc.p}, {"q", 2.0 * fc.p}, {"rows", rows}, {"slope_R_G", slope_of(x, rg)}};
      if (!f_out.empty()) write_json(j, f_out);
      std::cout << j.dump(2) << '\n';
    }
  } catch (const GuardViolation& e) {
    std::cerr << "guard violation: " << e.what() << '\n';
    return static_cast<int>(ExitCode::guard_violation);
  } catch (const InvalidArgument& e) {
    std::cerr << "invalid argument: " << e.what() << '\n';
    return static_cast<int>(ExitCode::guard_violation);
  } catch (const NonConvergence& e) {
    std::cerr << "no convergence: " << e.what() << '\n';
    return static_cast<int>(ExitCode::nonconvergence);
  } catch (const IoError& e) {
    std::cerr << "i/o error: " << e.what() << '\n';
    return static_cast<int>(ExitCode::io);
  }
  return 0;
}
