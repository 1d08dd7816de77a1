#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "gsot/types.hpp"

namespace gsot {

/// Linear array: sensor coordinates along the array axis and the propagation
/// speed, in one consistent unit system.
class ArrayGeometry {
 public:
  ArrayGeometry(std::vector<double> positions, double propagation_speed)
      : positions_(std::move(positions)), speed_(propagation_speed) {
    detail::require(!positions_.empty(), "ArrayGeometry: need at least one sensor");
    detail::require(speed_ > 0.0 && std::isfinite(speed_),
                    "ArrayGeometry: propagation speed must be positive");
    for (std::size_t i = 0; i < positions_.size(); ++i) {
      detail::require(std::isfinite(positions_[i]), "ArrayGeometry: non-finite position");
      for (std::size_t j = 0; j < i; ++j)
        detail::require(positions_[i] != positions_[j], "ArrayGeometry: positions must be distinct");
    }
  }

  /// Q sensors at 0, d, 2d, ...
  static ArrayGeometry uniform_linear(std::size_t q, double spacing = 1.0, double speed = 1.0) {
    std::vector<double> p(q);
    for (std::size_t i = 0; i < q; ++i) p[i] = spacing * static_cast<double>(i);
    return ArrayGeometry(std::move(p), speed);
  }

  std::size_t size() const { return positions_.size(); }
  const std::vector<double>& positions() const { return positions_; }
  double propagation_speed() const { return speed_; }

 private:
  std::vector<double> positions_;
  double speed_;
};

/// Far-field response a_q = exp(i * omega * p_q * sin(theta) / c).
inline CVec steering_vector(const ArrayGeometry& geom, double omega, double theta) {
  const auto Q = static_cast<Eigen::Index>(geom.size());
  CVec a(Q);
  const double k = omega * std::sin(theta) / geom.propagation_speed();
  for (Eigen::Index q = 0; q < Q; ++q) a(q) = std::polar(1.0, k * geom.positions()[q]);
  return a;
}

/// r = [vec(Re R); vec(Im R)] with column-major vec.
inline Vec vectorize_covariance(const CMat& R) {
  detail::require(R.rows() == R.cols(), "vectorize_covariance: matrix must be square");
  const Eigen::Index QQ = R.size();
  Vec r(2 * QQ);
  for (Eigen::Index k = 0; k < QQ; ++k) {
    r(k) = R.data()[k].real();
    r(QQ + k) = R.data()[k].imag();
  }
  return r;
}

inline CMat devectorize_covariance(const Vec& r) {
  const auto QQ = r.size() / 2;
  const auto Q = static_cast<Eigen::Index>(std::llround(std::sqrt(static_cast<double>(QQ))));
  detail::require(r.size() % 2 == 0 && Q * Q == QQ && Q >= 1,
                  "devectorize_covariance: length must be 2*Q^2");
  CMat R(Q, Q);
  for (Eigen::Index k = 0; k < QQ; ++k) R.data()[k] = Complex(r(k), r(QQ + k));
  return R;
}

/// Per-frequency real measurement matrices G_f (2Q^2 x N) and steering
/// matrices A_f (Q x N). Also caches G_f^T G_f, which the Newton solver uses.
class MeasurementModel {
 public:
  MeasurementModel(const ArrayGeometry& geom, const AngularGrid& grid, const FrequencyBank& bank)
      : Q_(geom.size()), N_(grid.size()) {
    const auto N = static_cast<Eigen::Index>(N_);
    const auto Q = static_cast<Eigen::Index>(Q_);
    for (std::size_t f = 0; f < bank.size(); ++f) {
      CMat A(Q, N);
      Mat G(2 * Q * Q, N);
      for (Eigen::Index i = 0; i < N; ++i) {
        const CVec a = steering_vector(geom, bank[f], grid[static_cast<std::size_t>(i)]);
        A.col(i) = a;
        G.col(i) = vectorize_covariance(a * a.adjoint());
      }
      gram_.push_back(G.transpose() * G);
      G_.push_back(std::move(G));
      A_.push_back(std::move(A));
    }
  }

  std::size_t num_sensors() const { return Q_; }
  std::size_t num_points() const { return N_; }
  std::size_t num_freqs() const { return G_.size(); }
  /// Length of the real covariance vector r, 2Q^2.
  std::size_t data_dim() const { return 2 * Q_ * Q_; }

  const Mat& G(std::size_t f) const { return G_.at(f); }
  const Mat& gram(std::size_t f) const { return gram_.at(f); }
  const CMat& steering(std::size_t f) const { return A_.at(f); }

 private:
  std::size_t Q_;
  std::size_t N_;
  std::vector<Mat> G_;
  std::vector<Mat> gram_;
  std::vector<CMat> A_;
};

inline MeasurementModel build_measurement_model(const ArrayGeometry& geom, const AngularGrid& grid,
                                                const FrequencyBank& bank) {
  return MeasurementModel(geom, grid, bank);
}

inline Vec apply_forward(const MeasurementModel& model, std::size_t f, const Vec& phi) {
  detail::require(f < model.num_freqs(), "apply_forward: frequency index out of range");
  detail::require(static_cast<std::size_t>(phi.size()) == model.num_points(),
                  "apply_forward: spectrum length must equal grid size");
  return model.G(f) * phi;
}

inline Vec apply_adjoint(const MeasurementModel& model, std::size_t f, const Vec& y) {
  detail::require(f < model.num_freqs(), "apply_adjoint: frequency index out of range");
  detail::require(static_cast<std::size_t>(y.size()) == model.data_dim(),
                  "apply_adjoint: vector length must equal 2*Q^2");
  return model.G(f).transpose() * y;
}

}  // namespace gsot
