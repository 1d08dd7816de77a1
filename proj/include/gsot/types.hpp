#pragma once

#include <cmath>
#include <complex>
#include <cstddef>
#include <numbers>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace gsot {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;
using CVec = Eigen::VectorXcd;
using CMat = Eigen::MatrixXcd;
using Complex = std::complex<double>;

/// Thrown for malformed inputs: dimension mismatches, invalid parameters,
/// unparseable files.
class InvalidInput : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Thrown when a computation leaves the representable range (e.g. kernel
/// underflow) or a factorization fails.
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline double deg2rad(double deg) { return deg * std::numbers::pi / 180.0; }
inline double rad2deg(double rad) { return rad * 180.0 / std::numbers::pi; }

namespace detail {

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw InvalidInput(msg);
}

inline bool strictly_increasing(const std::vector<double>& xs) {
  for (std::size_t i = 1; i < xs.size(); ++i)
    if (!(xs[i] > xs[i - 1])) return false;
  return true;
}

}  // namespace detail

/// Ordered discretization of the look-angle axis, in radians.
class AngularGrid {
 public:
  explicit AngularGrid(std::vector<double> points) : points_(std::move(points)) {
    detail::require(!points_.empty(), "AngularGrid: need at least one point");
    detail::require(detail::strictly_increasing(points_),
                    "AngularGrid: points must be strictly increasing");
    const double half_pi = std::numbers::pi / 2.0;
    for (double p : points_)
      detail::require(std::isfinite(p) && p >= -half_pi - 1e-12 && p <= half_pi + 1e-12,
                      "AngularGrid: points must lie in [-pi/2, pi/2]");
  }

  /// n points evenly spaced on [lo, hi] (radians). n == 1 gives the midpoint.
  static AngularGrid uniform(double lo, double hi, std::size_t n) {
    detail::require(n >= 1, "AngularGrid: need at least one point");
    std::vector<double> pts(n);
    if (n == 1) {
      pts[0] = 0.5 * (lo + hi);
    } else {
      for (std::size_t i = 0; i < n; ++i)
        pts[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
    }
    return AngularGrid(std::move(pts));
  }

  static AngularGrid uniform_degrees(double lo_deg, double hi_deg, std::size_t n) {
    return uniform(deg2rad(lo_deg), deg2rad(hi_deg), n);
  }

  std::size_t size() const { return points_.size(); }
  double operator[](std::size_t i) const { return points_[i]; }
  const std::vector<double>& points() const { return points_; }
  double span() const { return points_.back() - points_.front(); }

  /// Index of the grid point closest to theta (ties go to the lower index).
  std::size_t nearest(double theta) const {
    std::size_t best = 0;
    double best_d = std::abs(points_[0] - theta);
    for (std::size_t i = 1; i < points_.size(); ++i) {
      const double d = std::abs(points_[i] - theta);
      if (d < best_d) {
        best_d = d;
        best = i;
      }
    }
    return best;
  }

  /// Mean spacing; zero for a single-point grid.
  double spacing() const {
    return points_.size() < 2 ? 0.0 : span() / static_cast<double>(points_.size() - 1);
  }

 private:
  std::vector<double> points_;
};

/// Center frequencies of the narrow-band decomposition. The unit (rad/sample
/// or rad/s) is whatever the array geometry's propagation speed is paired with.
class FrequencyBank {
 public:
  explicit FrequencyBank(std::vector<double> omegas) : omegas_(std::move(omegas)) {
    detail::require(!omegas_.empty(), "FrequencyBank: need at least one frequency");
    detail::require(detail::strictly_increasing(omegas_),
                    "FrequencyBank: frequencies must be strictly increasing");
    for (double w : omegas_)
      detail::require(std::isfinite(w) && w > 0.0, "FrequencyBank: frequencies must be positive");
  }

  static FrequencyBank uniform(double lo, double hi, std::size_t n) {
    detail::require(n >= 1, "FrequencyBank: need at least one frequency");
    std::vector<double> w(n);
    if (n == 1) {
      w[0] = 0.5 * (lo + hi);
    } else {
      for (std::size_t i = 0; i < n; ++i)
        w[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(n - 1);
    }
    return FrequencyBank(std::move(w));
  }

  std::size_t size() const { return omegas_.size(); }
  double operator[](std::size_t f) const { return omegas_[f]; }
  const std::vector<double>& omegas() const { return omegas_; }

 private:
  std::vector<double> omegas_;
};

struct NewtonParams {
  int max_iter = 50;
  /// Step-halving factor applied when a trial step is rejected.
  double damping = 0.5;
  /// Absolute l2 tolerance on the stationarity residual.
  double tol = 1e-9;
};

struct SolverParams {
  /// Entropic regularization weight. Non-positive means "use the default",
  /// 0.01 * (grid span)^2, resolved by resolve_epsilon().
  double epsilon = 0.0;
  /// Defaults for gamma and eta are tuned for covariances with per-sensor
  /// power of order one.
  double gamma = 0.03;
  double eta = 3.0;
  int max_sweeps = 2000;
  double tol = 1e-6;
  NewtonParams newton{};
  /// Skip the group-sparsity block entirely (psi stays 0). With eta == 0 this
  /// is the plain multi-marginal OT tracker.
  bool disable_sparsity = false;
  /// Abort with NumericalError if an inner Newton solve fails to converge;
  /// otherwise it is counted in the report and the sweep continues.
  bool fail_on_newton = false;
  /// Record the dual objective after every block update (costs O(FN) each).
  bool track_block_objective = false;
  /// Worker threads for per-frequency work; results do not depend on this.
  int threads = 1;

  double resolve_epsilon(const AngularGrid& grid) const {
    if (epsilon > 0.0) return epsilon;
    const double span = grid.size() > 1 ? grid.span() : 1.0;
    return 0.01 * span * span;
  }

  void validate() const {
    detail::require(std::isfinite(epsilon), "SolverParams: epsilon must be finite");
    detail::require(gamma > 0.0 && std::isfinite(gamma), "SolverParams: gamma must be > 0");
    detail::require(eta >= 0.0 && std::isfinite(eta), "SolverParams: eta must be >= 0");
    detail::require(tol > 0.0, "SolverParams: tol must be > 0");
    detail::require(max_sweeps >= 1, "SolverParams: max_sweeps must be >= 1");
    detail::require(newton.max_iter >= 1, "SolverParams: newton.max_iter must be >= 1");
    detail::require(newton.damping > 0.0 && newton.damping < 1.0,
                    "SolverParams: newton.damping must be in (0, 1)");
    detail::require(newton.tol > 0.0, "SolverParams: newton.tol must be > 0");
    detail::require(threads >= 1, "SolverParams: threads must be >= 1");
  }
};

/// Hermitian spatial covariance matrices R_f^(t), stored frequency-major.
class CovarianceSequence {
 public:
  /// Relative Frobenius tolerance on R - R^H accepted before symmetrizing.
  static constexpr double kHermitianTol = 1e-8;

  CovarianceSequence(std::size_t num_freqs, std::size_t num_times, std::vector<CMat> mats)
      : F_(num_freqs), T_(num_times), R_(std::move(mats)) {
    detail::require(F_ >= 1 && T_ >= 1, "CovarianceSequence: F and T must be >= 1");
    detail::require(R_.size() == F_ * T_, "CovarianceSequence: expected F*T matrices");
    Q_ = static_cast<std::size_t>(R_.front().rows());
    detail::require(Q_ >= 1, "CovarianceSequence: empty matrix");
    for (auto& R : R_) {
      detail::require(static_cast<std::size_t>(R.rows()) == Q_ &&
                          static_cast<std::size_t>(R.cols()) == Q_,
                      "CovarianceSequence: inconsistent matrix dimensions");
      detail::require(R.allFinite(), "CovarianceSequence: non-finite entry");
      const double skew = (R - R.adjoint()).norm();
      detail::require(skew <= kHermitianTol * R.norm(),
                      "CovarianceSequence: matrix is not Hermitian within tolerance");
      const CMat sym = 0.5 * (R + R.adjoint());
      R = sym;
    }
  }

  std::size_t num_sensors() const { return Q_; }
  std::size_t num_freqs() const { return F_; }
  std::size_t num_times() const { return T_; }

  const CMat& operator()(std::size_t f, std::size_t t) const { return R_[f * T_ + t]; }
  const std::vector<CMat>& matrices() const { return R_; }

 private:
  std::size_t F_;
  std::size_t T_;
  std::size_t Q_ = 0;
  std::vector<CMat> R_;
};

/// Non-negative spectra Phi_f^(t) on an N-point grid, stored frequency-major.
class SpatioTemporalSpectrum {
 public:
  SpatioTemporalSpectrum(std::size_t num_freqs, std::size_t num_times, std::vector<Vec> phi)
      : F_(num_freqs), T_(num_times), phi_(std::move(phi)) {
    detail::require(F_ >= 1 && T_ >= 1, "SpatioTemporalSpectrum: F and T must be >= 1");
    detail::require(phi_.size() == F_ * T_, "SpatioTemporalSpectrum: expected F*T vectors");
    N_ = static_cast<std::size_t>(phi_.front().size());
    detail::require(N_ >= 1, "SpatioTemporalSpectrum: empty spectrum");
    for (const auto& p : phi_) {
      detail::require(static_cast<std::size_t>(p.size()) == N_,
                      "SpatioTemporalSpectrum: inconsistent grid size");
      detail::require(p.allFinite(), "SpatioTemporalSpectrum: non-finite entry");
      detail::require((p.array() >= 0.0).all(), "SpatioTemporalSpectrum: negative entry");
    }
  }

  std::size_t num_points() const { return N_; }
  std::size_t num_freqs() const { return F_; }
  std::size_t num_times() const { return T_; }

  const Vec& operator()(std::size_t f, std::size_t t) const { return phi_[f * T_ + t]; }
  const std::vector<Vec>& values() const { return phi_; }

 private:
  std::size_t F_;
  std::size_t T_;
  std::size_t N_ = 0;
  std::vector<Vec> phi_;
};

/// Frequency-averaged spatial spectrum, one N-vector per time index.
inline std::vector<Vec> spatial_average(const SpatioTemporalSpectrum& spec) {
  const std::size_t F = spec.num_freqs();
  std::vector<Vec> out(spec.num_times(), Vec::Zero(static_cast<Eigen::Index>(spec.num_points())));
  for (std::size_t t = 0; t < spec.num_times(); ++t) {
    for (std::size_t f = 0; f < F; ++f) out[t] += spec(f, t);
    out[t] /= static_cast<double>(F);
  }
  return out;
}

}  // namespace gsot
