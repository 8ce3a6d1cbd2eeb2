// One 1D on-site breather: residual, harmonic content, distance to the
// leading-order profile and a one-period leapfrog run.

#include <cstdio>

#include "kgbreather/kgbreather.hpp"

int main() {
  using namespace kgbreather;
  BreatherConfig cfg;  // n=1, p=1, a=0.25, mu=0.1, on-site
  const Breather b = assemble(cfg);

  std::printf("omega = %.12f  K = %d  L = %d\n", b.omega, b.box().grid().radius(), b.L());
  std::printf("max KG residual = %.3e\n", b.residual);
  const auto h = b.harmonic_norms();
  for (int l = 1; l <= 7; l += 2) std::printf("  |u_%d| = %.3e\n", l, h[static_cast<std::size_t>(l)]);

  const auto e = error_vs_reference(b, *b.psi);
  std::printf("|q - Psi|_H2 = %.3e  sup = %.3e\n", e.e_H2, e.e_sup);

  const auto dyn = integrate_period(b, 100000);
  const auto ref = integrate_reference(b, *b.psi, 100000);
  std::printf("return error: breather %.2e, leading-order profile %.2e\n", dyn.return_error, ref.return_error);
  return 0;
}
