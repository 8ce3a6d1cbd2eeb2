#pragma once

#include "kgbreather/errors.hpp"
#include "kgbreather/lattice.hpp"
#include "kgbreather/lattice_io.hpp"
#include "kgbreather/continuum_nls.hpp"
#include "kgbreather/time_spectral.hpp"
#include "kgbreather/range_solver.hpp"
#include "kgbreather/kernel_solver.hpp"
#include "kgbreather/fem_interp.hpp"
#include "kgbreather/breather.hpp"
