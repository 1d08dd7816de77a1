#pragma once

#include <cstddef>
#include <vector>

#include "gsot/forward_model.hpp"
#include "gsot/parallel.hpp"
#include "gsot/types.hpp"

namespace gsot {

struct MvdrParams {
  /// Diagonal loading, relative to trace(R)/Q.
  double diagonal_loading = 1e-3;

  void validate() const {
    detail::require(diagonal_loading >= 0.0 && std::isfinite(diagonal_loading),
                    "MvdrParams: diagonal loading must be >= 0");
  }
};

/// Capon spectrum 1 / (a_i^H (R + delta tr(R)/Q I)^{-1} a_i) for every column
/// a_i of the steering matrix.
inline Vec mvdr_spectrum(const CMat& R, const CMat& steering, const MvdrParams& params = {}) {
  params.validate();
  detail::require(R.rows() == R.cols(), "mvdr_spectrum: covariance must be square");
  detail::require(steering.rows() == R.rows(), "mvdr_spectrum: steering rows must equal Q");
  const auto Q = R.rows();
  CMat loaded = 0.5 * (R + R.adjoint());
  const double load = params.diagonal_loading * loaded.trace().real() / static_cast<double>(Q);
  loaded.diagonal().array() += load;

  Eigen::LLT<CMat> llt(loaded);
  if (llt.info() != Eigen::Success)
    throw NumericalError("mvdr_spectrum: loaded covariance is singular or indefinite");
  const CMat X = llt.solve(steering);
  Vec phi(steering.cols());
  for (Eigen::Index i = 0; i < steering.cols(); ++i) {
    const double denom = steering.col(i).dot(X.col(i)).real();
    if (!(denom > 0.0) || !std::isfinite(denom))
      throw NumericalError("mvdr_spectrum: loaded covariance is singular or indefinite");
    phi(i) = 1.0 / denom;
  }
  return phi;
}

/// Independent Capon estimate for every (f, t).
inline SpatioTemporalSpectrum mvdr_sequence(const CovarianceSequence& data,
                                            const MeasurementModel& model,
                                            const MvdrParams& params = {}, int threads = 1) {
  detail::require(data.num_freqs() == model.num_freqs(),
                  "mvdr_sequence: covariance and model frequency counts differ");
  detail::require(data.num_sensors() == model.num_sensors(),
                  "mvdr_sequence: covariance and model sensor counts differ");
  const std::size_t F = data.num_freqs();
  const std::size_t T = data.num_times();
  std::vector<Vec> phi(F * T);
  detail::parallel_for(F * T, threads, [&](std::size_t k) {
    phi[k] = mvdr_spectrum(data(k / T, k % T), model.steering(k / T), params);
  });
  return SpatioTemporalSpectrum(F, T, std::move(phi));
}

}  // namespace gsot
