#pragma once

// Even 2pi-periodic lattice fields u_j(t) = sum_l u_{j,l} cos(l t), the
// kernel/range projectors and the collocated nonlinearity beta |u|^{2p} u.

#include <fftw3.h>

#include <boost/math/quadrature/tanh_sinh.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <mutex>
#include <numbers>
#include <string>
#include <utility>

#include "kgbreather/errors.hpp"
#include "kgbreather/io_util.hpp"
#include "kgbreather/lattice.hpp"
#include "kgbreather/lattice_io.hpp"
#include "kgbreather/power.hpp"

namespace kgbreather {

inline constexpr int kDefaultLmax = 15;

/// Kernel component: the harmonic-1 coefficient sequence v.
using KernelField = SymmetricSequence;

/// Quadrature weight of cos(l t)^2 over one period.
inline double harmonic_weight(int l) noexcept { return l == 0 ? 2.0 * std::numbers::pi : std::numbers::pi; }

class TimeFourierField {
 public:
  TimeFourierField(LatticeBox box, int L) : box_(std::move(box)), coeffs_(Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(box_.size()), L + 1)) {
    if (L < 1) throw InvalidArgument("TimeFourierField: L_max must be >= 1");
  }

  /// Validates that every harmonic is finite and exactly reflection symmetric.
  TimeFourierField(LatticeBox box, Eigen::MatrixXd coeffs) : box_(std::move(box)), coeffs_(std::move(coeffs)) {
    if (coeffs_.cols() < 2) throw InvalidArgument("TimeFourierField: L_max must be >= 1");
    if (static_cast<std::size_t>(coeffs_.rows()) != box_.size()) {
      throw InvalidArgument("TimeFourierField: row count does not match the box");
    }
    for (int l = 0; l <= L(); ++l) SymmetricSequence(box_, coeffs_.col(l));  // throws on asymmetry
  }

  /// Builds a field from coefficients on the reflection fundamental domain.
  static TimeFourierField from_reduced(const SymmetryFold& fold, const Eigen::MatrixXd& reduced) {
    if (reduced.rows() != fold.size()) throw InvalidArgument("TimeFourierField: reduced rows mismatch");
    if (!reduced.allFinite()) throw InvalidArgument("TimeFourierField: non-finite coefficient");
    TimeFourierField u(fold.box(), static_cast<int>(reduced.cols()) - 1);
    for (Eigen::Index l = 0; l < reduced.cols(); ++l) u.coeffs_.col(l) = fold.expand_values(reduced.col(l));
    return u;
  }

  /// v e_1.
  static TimeFourierField from_kernel(const KernelField& v, int L) {
    TimeFourierField u(v.box(), L);
    u.coeffs_.col(1) = v.values();
    return u;
  }

  const LatticeBox& box() const noexcept { return box_; }
  const GridSpec& grid() const noexcept { return box_.grid(); }
  int L() const noexcept { return static_cast<int>(coeffs_.cols()) - 1; }
  const Eigen::MatrixXd& coeffs() const noexcept { return coeffs_; }

  SymmetricSequence harmonic(int l) const {
    if (l < 0 || l > L()) throw InvalidArgument("TimeFourierField: harmonic index out of range");
    return SymmetricSequence::projected(box_, coeffs_.col(l));
  }

  Eigen::MatrixXd reduced(const SymmetryFold& fold) const {
    if (!(fold.box() == box_)) throw InvalidArgument("TimeFourierField: fold lives on a different box");
    Eigen::MatrixXd r(fold.size(), coeffs_.cols());
    for (Eigen::Index l = 0; l < coeffs_.cols(); ++l) r.col(l) = fold.restrict(Eigen::VectorXd(coeffs_.col(l)));
    return r;
  }

  /// Zero-padded or truncated copy with harmonics 0..L_new.
  TimeFourierField resized(int L_new) const {
    TimeFourierField u(box_, L_new);
    const int keep = std::min(L(), L_new) + 1;
    u.coeffs_.leftCols(keep) = coeffs_.leftCols(keep);
    return u;
  }

  /// u_j(t) at one time.
  SymmetricSequence at_time(double t) const {
    Eigen::VectorXd v = Eigen::VectorXd::Zero(coeffs_.rows());
    for (int l = 0; l <= L(); ++l) v += std::cos(l * t) * coeffs_.col(l);
    return SymmetricSequence::projected(box_, v);
  }

  friend TimeFourierField operator+(const TimeFourierField& a, const TimeFourierField& b) {
    a.require_compatible(b);
    return TimeFourierField(a.box_, a.coeffs_ + b.coeffs_, Unchecked{});
  }
  friend TimeFourierField operator-(const TimeFourierField& a, const TimeFourierField& b) {
    a.require_compatible(b);
    return TimeFourierField(a.box_, a.coeffs_ - b.coeffs_, Unchecked{});
  }
  friend TimeFourierField operator*(double s, const TimeFourierField& a) {
    return TimeFourierField(a.box_, s * a.coeffs_, Unchecked{});
  }

  void require_compatible(const TimeFourierField& o) const {
    if (!(box_ == o.box_) || L() != o.L()) throw InvalidArgument("TimeFourierField: grid, symmetry or L_max mismatch");
  }

 private:
  struct Unchecked {};
  TimeFourierField(LatticeBox box, Eigen::MatrixXd coeffs, Unchecked) : box_(std::move(box)), coeffs_(std::move(coeffs)) {}

  friend TimeFourierField project_W(const TimeFourierField&);

  LatticeBox box_;
  Eigen::MatrixXd coeffs_;
};

inline KernelField project_V(const TimeFourierField& u) { return u.harmonic(1); }

inline TimeFourierField project_W(const TimeFourierField& u) {
  Eigen::MatrixXd c = u.coeffs();
  c.col(1).setZero();
  return TimeFourierField(u.box(), std::move(c), TimeFourierField::Unchecked{});
}

/// c1(p) = int_0^{2pi} |cos t|^{2p} cos^2 t dt, by tanh-sinh quadrature on a quarter period.
inline double c1(double p) {
  if (!(p >= 0.0)) throw InvalidArgument("c1: p must be nonnegative");
  boost::math::quadrature::tanh_sinh<double> integrator;
  const double quarter = integrator.integrate(
      [p](double t) {
        return std::pow(std::abs(std::cos(t)), 2.0 * p + 2.0);
      },
      0.0, std::numbers::pi / 2, 1e-15);
  return 4.0 * quarter;
}

/// Normalization of the nonlinearity: with beta = pi / c1 the harmonic-1
/// coefficient of N(v cos t) is exactly |v|^{2p} v.
inline double beta(double p) { return std::numbers::pi / c1(p); }

/// The focusing nonlinearity beta |s|^{2p} s.
struct Nonlinearity {
  double p;
  double beta;

  /// beta = pi / c1(p).
  static Nonlinearity normalized(double p_) { return {p_, kgbreather::beta(p_)}; }

  double operator()(double s) const noexcept { return beta * focusing_power(s, p); }
};

namespace detail {
// FFTW planning is not thread safe; execution on distinct plans is.
inline std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}
}  // namespace detail

/// Batched DCT-I between cosine coefficients 0..L and samples at the
/// half-period nodes t_k = pi k / Mh, k = 0..Mh (FFTW REDFT00).
class CosineTransform {
 public:
  explicit CosineTransform(int L, int Mh = 0, int block = 64) : L_(L), Mh_(Mh > 0 ? Mh : 4 * (L + 1)), block_(block) {
    if (L < 1) throw InvalidArgument("CosineTransform: L must be >= 1");
    if (Mh_ <= L_) throw InvalidArgument("CosineTransform: need more nodes than harmonics");
    const int n = Mh_ + 1;
    std::lock_guard<std::mutex> lock(detail::fftw_planner_mutex());
    a_ = fftw_alloc_real(static_cast<std::size_t>(n) * block_);
    b_ = fftw_alloc_real(static_cast<std::size_t>(n) * block_);
    const fftw_r2r_kind kind = FFTW_REDFT00;
    fwd_ = fftw_plan_many_r2r(1, &n, block_, a_, nullptr, 1, n, b_, nullptr, 1, n, &kind, FFTW_ESTIMATE);
    bwd_ = fftw_plan_many_r2r(1, &n, block_, b_, nullptr, 1, n, a_, nullptr, 1, n, &kind, FFTW_ESTIMATE);
    if (!fwd_ || !bwd_) throw Error("CosineTransform: FFTW planning failed");
  }
  CosineTransform(const CosineTransform&) = delete;
  CosineTransform& operator=(const CosineTransform&) = delete;
  ~CosineTransform() {
    std::lock_guard<std::mutex> lock(detail::fftw_planner_mutex());
    fftw_destroy_plan(fwd_);
    fftw_destroy_plan(bwd_);
    fftw_free(a_);
    fftw_free(b_);
  }

  int L() const noexcept { return L_; }
  int half_nodes() const noexcept { return Mh_; }
  double node(int k) const noexcept { return std::numbers::pi * k / Mh_; }

  /// Samples (rows x (Mh+1)) of the cosine series with coefficients (rows x (L+1)).
  Eigen::MatrixXd synthesize(const Eigen::MatrixXd& c) const {
    Eigen::MatrixXd out(c.rows(), Mh_ + 1);
    run(c, out, [](double s) { return s; }, false);
    return out;
  }

  /// Applies f pointwise in time and returns the cosine coefficients 0..L of the result.
  template <class F>
  Eigen::MatrixXd map(const Eigen::MatrixXd& c, F&& f) const {
    Eigen::MatrixXd out(c.rows(), L_ + 1);
    run(c, out, std::forward<F>(f), true);
    return out;
  }

  /// Cosine coefficients 0..L of samples (rows x (Mh+1)).
  Eigen::MatrixXd analyze(const Eigen::MatrixXd& samples) const {
    if (samples.cols() != Mh_ + 1) throw InvalidArgument("CosineTransform: wrong sample count");
    const int n = Mh_ + 1;
    Eigen::MatrixXd out(samples.rows(), L_ + 1);
    for (Eigen::Index r0 = 0; r0 < samples.rows(); r0 += block_) {
      const Eigen::Index nb = std::min<Eigen::Index>(block_, samples.rows() - r0);
      std::fill(b_, b_ + static_cast<std::size_t>(n) * block_, 0.0);
      for (Eigen::Index s = 0; s < nb; ++s) {
        for (int k = 0; k < n; ++k) b_[s * n + k] = samples(r0 + s, k);
      }
      fftw_execute(bwd_);
      for (Eigen::Index s = 0; s < nb; ++s) {
        out(r0 + s, 0) = a_[s * n] / (2.0 * Mh_);
        for (int l = 1; l <= L_; ++l) out(r0 + s, l) = a_[s * n + l] / Mh_;
      }
    }
    return out;
  }

 private:
  template <class F>
  void run(const Eigen::MatrixXd& c, Eigen::MatrixXd& out, F&& f, bool back) const {
    const int n = Mh_ + 1;
    const int Lc = static_cast<int>(c.cols()) - 1;
    if (Lc > L_) throw InvalidArgument("CosineTransform: too many harmonics for this transform");
    for (Eigen::Index r0 = 0; r0 < c.rows(); r0 += block_) {
      const Eigen::Index nb = std::min<Eigen::Index>(block_, c.rows() - r0);
      std::fill(a_, a_ + static_cast<std::size_t>(n) * block_, 0.0);
      for (Eigen::Index s = 0; s < nb; ++s) {
        a_[s * n] = c(r0 + s, 0);
        for (int l = 1; l <= Lc; ++l) a_[s * n + l] = 0.5 * c(r0 + s, l);
      }
      fftw_execute(fwd_);
      if (!back) {
        for (Eigen::Index s = 0; s < nb; ++s) {
          for (int k = 0; k < n; ++k) out(r0 + s, k) = b_[s * n + k];
        }
        continue;
      }
      for (Eigen::Index s = 0; s < nb; ++s) {
        for (int k = 0; k < n; ++k) b_[s * n + k] = f(b_[s * n + k]);
      }
      fftw_execute(bwd_);
      for (Eigen::Index s = 0; s < nb; ++s) {
        out(r0 + s, 0) = a_[s * n] / (2.0 * Mh_);
        for (int l = 1; l <= L_; ++l) out(r0 + s, l) = a_[s * n + l] / Mh_;
      }
    }
  }

  int L_;
  int Mh_;
  int block_;
  double* a_ = nullptr;
  double* b_ = nullptr;
  fftw_plan fwd_ = nullptr;
  fftw_plan bwd_ = nullptr;
};

/// Coefficients of beta |u|^{2p} u for coefficient rows c (any site set).
inline Eigen::MatrixXd apply_N_coeffs(const Eigen::MatrixXd& c, double p, double beta_value, const CosineTransform& tr) {
  return tr.map(c, [p, beta_value](double s) { return beta_value * focusing_power(s, p); });
}

/// N(u) by collocation at M = 8(L+1) nodes per period (Mh = M/2 half-period nodes).
inline TimeFourierField apply_N(const TimeFourierField& u, double p, double beta_value) {
  const CosineTransform tr(u.L());
  const SymmetryFold fold(u.box());
  return TimeFourierField::from_reduced(fold, apply_N_coeffs(u.reduced(fold), p, beta_value, tr));
}

/// ||u||_{X2}^2 = sum_{j,l} (1 + l^2 + l^4) w_l u_{j,l}^2.
inline double norm_X2(const TimeFourierField& u) {
  double s = 0.0;
  for (int l = 0; l <= u.L(); ++l) {
    const double ll = static_cast<double>(l) * l;
    s += (1.0 + ll + ll * ll) * harmonic_weight(l) * u.coeffs().col(l).squaredNorm();
  }
  return std::sqrt(s);
}

/// ||u||_{X0}^2 = sum_{j,l} w_l u_{j,l}^2 (the space-time L2 norm over one period).
inline double norm_X0(const TimeFourierField& u) {
  double s = 0.0;
  for (int l = 0; l <= u.L(); ++l) s += harmonic_weight(l) * u.coeffs().col(l).squaredNorm();
  return std::sqrt(s);
}

inline void write_binary(const TimeFourierField& u, std::ostream& os) {
  os.write("KGTF", 4);
  io::write_pod<std::uint32_t>(os, 1);
  detail::write_box_header(os, u.box());
  io::write_pod<std::int32_t>(os, u.L());
  io::write_pod<std::uint64_t>(os, static_cast<std::uint64_t>(u.coeffs().rows()));
  os.write(reinterpret_cast<const char*>(u.coeffs().data()),
           static_cast<std::streamsize>(u.coeffs().size() * sizeof(double)));
  if (!os) throw IoError("time field binary: write failed");
}

inline TimeFourierField read_time_field(std::istream& is) {
  io::expect_magic(is, "KGTF");
  if (io::read_pod<std::uint32_t>(is) != 1) throw IoError("time field binary: unsupported version");
  LatticeBox box = detail::read_box_header(is);
  const auto L = io::read_pod<std::int32_t>(is);
  const auto rows = io::read_pod<std::uint64_t>(is);
  if (rows != box.size() || L < 1 || L > 1 << 20) throw IoError("time field binary: inconsistent header");
  Eigen::MatrixXd c(static_cast<Eigen::Index>(rows), L + 1);
  is.read(reinterpret_cast<char*>(c.data()), static_cast<std::streamsize>(c.size() * sizeof(double)));
  if (!is) throw IoError("time field binary: truncated coefficients");
  try {
    return TimeFourierField(box, std::move(c));
  } catch (const InvalidArgument& e) {
    throw IoError(std::string("time field binary: ") + e.what());
  }
}

/// One CSV per harmonic: <prefix>_l<l>.csv.
inline void save_harmonic_csv(const TimeFourierField& u, const std::string& prefix) {
  for (int l = 0; l <= u.L(); ++l) save_csv(u.harmonic(l), prefix + "_l" + std::to_string(l) + ".csv");
}

}  // namespace kgbreather
