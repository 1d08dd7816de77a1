#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "gsot/forward_model.hpp"
#include "gsot/mvdr.hpp"
#include "gsot/parallel.hpp"
#include "gsot/solver.hpp"
#include "gsot/types.hpp"

namespace gsot {

/// A far-field point source: one angle per time index (radians) and one power
/// per frequency of the bank.
struct SourceTrajectory {
  std::vector<double> angles;
  std::vector<double> spectrum;
};

struct ScenarioConfig {
  ArrayGeometry geometry;
  AngularGrid grid;
  FrequencyBank bank;
  std::size_t num_times = 5;
  std::size_t snapshots = 200;
  double snr_db = 10.0;
  /// Overrides the SNR-derived noise power when set. Without sources and
  /// without an override the noise power is 1.
  std::optional<double> noise_power;
  std::uint64_t seed = 0;
  std::vector<SourceTrajectory> sources;

  void validate() const {
    detail::require(num_times >= 1, "ScenarioConfig: need at least one time index");
    detail::require(snapshots >= 1, "ScenarioConfig: need at least one snapshot");
    detail::require(!noise_power || *noise_power >= 0.0, "ScenarioConfig: noise power must be >= 0");
    for (const auto& s : sources) {
      detail::require(s.angles.size() == num_times,
                      "ScenarioConfig: each source needs one angle per time index");
      detail::require(s.spectrum.size() == bank.size(),
                      "ScenarioConfig: each source needs one power per frequency");
      for (double p : s.spectrum)
        detail::require(p >= 0.0 && std::isfinite(p), "ScenarioConfig: source powers must be >= 0");
      for (double a : s.angles)
        detail::require(std::abs(a) <= std::numbers::pi / 2.0, "ScenarioConfig: angle outside [-90, 90] deg");
    }
  }

  /// Noise variance per sensor and frequency: total source power summed over
  /// the band divided by F * 10^(snr/10).
  double resolved_noise_power() const {
    if (noise_power) return *noise_power;
    double total = 0.0;
    for (const auto& s : sources) total = std::accumulate(s.spectrum.begin(), s.spectrum.end(), total);
    if (sources.empty() || total <= 0.0) return 1.0;
    return total / (static_cast<double>(bank.size()) * std::pow(10.0, snr_db / 10.0));
  }
};

/// Raised-cosine hump of unit height on [lo, hi], zero outside.
inline double raised_cosine(double x, double lo, double hi) {
  if (x <= lo || x >= hi) return 0.0;
  const double s = std::sin(std::numbers::pi * (x - lo) / (hi - lo));
  return s * s;
}

/// Two broad-band sources with overlapping temporal spectra that approach
/// each other in angle and then separate again. ULA of 11 unit-spaced
/// sensors (c = 1), 63 frequencies on [0.5, 2.5] rad/sample, 5 time indices,
/// 200 snapshots, 10 dB SNR, 101-point grid on [-90, 90] degrees.
///
///   source A: -26, -16, -8, -9, -16 deg; power hump on [0.3, 1.9]
///   source B:  20,  10,  4,  5,  12 deg; power hump on [1.1, 2.7]
inline ScenarioConfig two_target_scenario() {
  ScenarioConfig cfg{ArrayGeometry::uniform_linear(11, 1.0, 1.0),
                     AngularGrid::uniform_degrees(-90.0, 90.0, 101),
                     FrequencyBank::uniform(0.5, 2.5, 63),
                     5,
                     200,
                     10.0,
                     std::nullopt,
                     1,
                     {}};
  const std::vector<double> a_deg{-26.0, -16.0, -8.0, -9.0, -16.0};
  const std::vector<double> b_deg{20.0, 10.0, 4.0, 5.0, 12.0};
  SourceTrajectory a, b;
  for (std::size_t t = 0; t < 5; ++t) {
    a.angles.push_back(deg2rad(a_deg[t]));
    b.angles.push_back(deg2rad(b_deg[t]));
  }
  for (double w : cfg.bank.omegas()) {
    a.spectrum.push_back(raised_cosine(w, 0.3, 1.9));
    b.spectrum.push_back(raised_cosine(w, 1.1, 2.7));
  }
  cfg.sources = {a, b};
  return cfg;
}

struct Simulation {
  CovarianceSequence covariances;
  SpatioTemporalSpectrum truth;
  double noise_power = 0.0;
};

namespace detail {

inline SpatioTemporalSpectrum ground_truth(const ScenarioConfig& cfg) {
  const std::size_t F = cfg.bank.size();
  const std::size_t T = cfg.num_times;
  std::vector<Vec> phi(F * T, Vec::Zero(static_cast<Eigen::Index>(cfg.grid.size())));
  for (const auto& src : cfg.sources)
    for (std::size_t f = 0; f < F; ++f)
      for (std::size_t t = 0; t < T; ++t)
        phi[f * T + t](static_cast<Eigen::Index>(cfg.grid.nearest(src.angles[t]))) += src.spectrum[f];
  return SpatioTemporalSpectrum(F, T, std::move(phi));
}

}  // namespace detail

/// Sample covariances from `snapshots` circular complex Gaussian array
/// snapshots per (f, t), drawn independently across frequencies.
inline Simulation simulate_covariances(const ScenarioConfig& cfg) {
  cfg.validate();
  const std::size_t F = cfg.bank.size();
  const std::size_t T = cfg.num_times;
  const auto Q = static_cast<Eigen::Index>(cfg.geometry.size());
  const std::size_t S = cfg.snapshots;
  const double sigma2 = cfg.resolved_noise_power();
  const double sigma = std::sqrt(sigma2);

  std::mt19937_64 rng(cfg.seed);
  std::normal_distribution<double> normal(0.0, std::sqrt(0.5));
  auto cgauss = [&] {
    const double re = normal(rng);
    const double im = normal(rng);
    return Complex(re, im);
  };

  std::vector<CMat> mats;
  mats.reserve(F * T);
  CMat Y(Q, static_cast<Eigen::Index>(S));
  for (std::size_t f = 0; f < F; ++f) {
    for (std::size_t t = 0; t < T; ++t) {
      Y.setZero();
      for (const auto& src : cfg.sources) {
        const double amp = std::sqrt(src.spectrum[f]);
        const CVec a = steering_vector(cfg.geometry, cfg.bank[f], src.angles[t]);
        for (std::size_t n = 0; n < S; ++n) Y.col(static_cast<Eigen::Index>(n)) += amp * cgauss() * a;
      }
      for (std::size_t n = 0; n < S; ++n)
        for (Eigen::Index q = 0; q < Q; ++q) Y(q, static_cast<Eigen::Index>(n)) += sigma * cgauss();
      CMat R = (Y * Y.adjoint()) / static_cast<double>(S);
      mats.push_back(0.5 * (R + R.adjoint()));
    }
  }
  return Simulation{CovarianceSequence(F, T, std::move(mats)), detail::ground_truth(cfg), sigma2};
}

/// Exact covariances E[R] = sum_k s_k a a^H + sigma^2 I (infinite snapshots).
inline Simulation expected_covariances(const ScenarioConfig& cfg) {
  cfg.validate();
  const std::size_t F = cfg.bank.size();
  const std::size_t T = cfg.num_times;
  const auto Q = static_cast<Eigen::Index>(cfg.geometry.size());
  const double sigma2 = cfg.resolved_noise_power();
  std::vector<CMat> mats;
  for (std::size_t f = 0; f < F; ++f)
    for (std::size_t t = 0; t < T; ++t) {
      CMat R = sigma2 * CMat::Identity(Q, Q);
      for (const auto& src : cfg.sources) {
        const CVec a = steering_vector(cfg.geometry, cfg.bank[f], src.angles[t]);
        R += src.spectrum[f] * a * a.adjoint();
      }
      mats.push_back(std::move(R));
    }
  return Simulation{CovarianceSequence(F, T, std::move(mats)), detail::ground_truth(cfg), sigma2};
}

// ---------------------------------------------------------------------------
// peak picking
// ---------------------------------------------------------------------------

/// Indices of local maxima: runs of equal values that are strictly higher
/// than both neighbours (grid ends count as lower). A plateau reports its
/// leftmost index.
inline std::vector<std::size_t> local_maxima(const Vec& x) {
  std::vector<std::size_t> out;
  const auto n = static_cast<std::size_t>(x.size());
  std::size_t a = 0;
  while (a < n) {
    std::size_t b = a;
    while (b + 1 < n && x(static_cast<Eigen::Index>(b + 1)) == x(static_cast<Eigen::Index>(a))) ++b;
    const double val = x(static_cast<Eigen::Index>(a));
    const bool left = a == 0 || x(static_cast<Eigen::Index>(a - 1)) < val;
    const bool right = b + 1 == n || x(static_cast<Eigen::Index>(b + 1)) < val;
    if (left && right) out.push_back(a);
    a = b + 1;
  }
  return out;
}

/// Grid indices of the k largest local maxima, ordered by decreasing height
/// (ties by index). Missing peaks are padded with the largest remaining
/// entries.
inline std::vector<std::size_t> pick_peak_indices(const Vec& spatial, std::size_t k) {
  detail::require(k >= 1, "pick_peaks: k must be >= 1");
  auto by_height = [&](std::size_t i, std::size_t j) {
    const double a = spatial(static_cast<Eigen::Index>(i));
    const double b = spatial(static_cast<Eigen::Index>(j));
    return a > b || (a == b && i < j);
  };
  std::vector<std::size_t> peaks = local_maxima(spatial);
  std::sort(peaks.begin(), peaks.end(), by_height);
  if (peaks.size() > k) peaks.resize(k);
  if (peaks.size() < k) {
    std::vector<std::size_t> rest;
    for (std::size_t i = 0; i < static_cast<std::size_t>(spatial.size()); ++i)
      if (std::find(peaks.begin(), peaks.end(), i) == peaks.end()) rest.push_back(i);
    std::sort(rest.begin(), rest.end(), by_height);
    for (std::size_t i = 0; i < rest.size() && peaks.size() < k; ++i) peaks.push_back(rest[i]);
  }
  return peaks;
}

inline std::vector<double> pick_peaks(const Vec& spatial, const AngularGrid& grid, std::size_t k) {
  detail::require(static_cast<std::size_t>(spatial.size()) == grid.size(),
                  "pick_peaks: spectrum length must equal grid size");
  std::vector<double> angles;
  for (std::size_t i : pick_peak_indices(spatial, k)) angles.push_back(grid[i]);
  return angles;
}

/// Local maxima whose height is at least `rel_height` times the global max.
inline std::vector<std::size_t> significant_peaks(const Vec& spatial, double rel_height) {
  const double top = spatial.maxCoeff();
  std::vector<std::size_t> out;
  for (std::size_t i : local_maxima(spatial))
    if (spatial(static_cast<Eigen::Index>(i)) >= rel_height * top) out.push_back(i);
  return out;
}

/// Minimum total squared error over all assignments of estimates to truths.
/// Returns the per-truth squared errors of the best assignment.
inline std::vector<double> match_squared_errors(const std::vector<double>& truth,
                                                const std::vector<double>& estimates) {
  detail::require(truth.size() == estimates.size(), "match: sizes differ");
  std::vector<std::size_t> perm(truth.size());
  std::iota(perm.begin(), perm.end(), 0);
  std::vector<double> best;
  double best_total = std::numeric_limits<double>::infinity();
  do {
    double total = 0.0;
    std::vector<double> errs(truth.size());
    for (std::size_t k = 0; k < truth.size(); ++k) {
      const double d = estimates[perm[k]] - truth[k];
      errs[k] = d * d;
      total += errs[k];
    }
    if (total < best_total) {
      best_total = total;
      best = std::move(errs);
    }
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

// ---------------------------------------------------------------------------
// Monte Carlo localization study
// ---------------------------------------------------------------------------

enum class Method {
  Gsot,  ///< group-sparse OT tracker
  Ot,    ///< OT tracker without the sparsity block
  Mvdr,
};

inline std::string method_name(Method m) {
  switch (m) {
    case Method::Gsot: return "gsot";
    case Method::Ot: return "ot";
    case Method::Mvdr: return "mvdr";
  }
  return "?";
}

inline Method parse_method(const std::string& s) {
  if (s == "gsot") return Method::Gsot;
  if (s == "ot") return Method::Ot;
  if (s == "mvdr") return Method::Mvdr;
  throw InvalidInput("unknown method '" + s + "' (expected gsot, ot or mvdr)");
}

/// Spectrum estimate of one method on one data set.
inline SpatioTemporalSpectrum run_method(Method m, const CovarianceSequence& data,
                                         const MeasurementModel& model, const AngularGrid& grid,
                                         const SolverParams& solver, const MvdrParams& mvdr) {
  switch (m) {
    case Method::Mvdr: return mvdr_sequence(data, model, mvdr);
    case Method::Ot: {
      SolverParams p = solver;
      p.eta = 0.0;
      p.disable_sparsity = true;
      return solve(data, model, grid, p).spectrum;
    }
    case Method::Gsot:
    default: return solve(data, model, grid, solver).spectrum;
  }
}

struct RmseStudyConfig {
  ScenarioConfig scenario = two_target_scenario();
  std::vector<double> snr_db{0.0, 10.0, 20.0};
  std::size_t trials = 10;
  std::vector<Method> methods{Method::Gsot, Method::Mvdr};
  /// Zero-based time index at which angles are evaluated.
  std::size_t eval_time = 3;
  SolverParams solver;
  MvdrParams mvdr;
  int threads = 1;
};

struct RmseRow {
  double snr_db = 0.0;
  Method method = Method::Gsot;
  double rmse = 0.0;  ///< radians
  std::size_t trials = 0;
};

/// Seed for one trial, derived from (seed, snr index, trial index) only, so
/// serial and parallel runs see identical data.
inline std::uint64_t trial_seed(std::uint64_t seed, std::size_t snr_index, std::size_t trial) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(snr_index), static_cast<std::uint32_t>(trial)};
  std::uint32_t out[2];
  seq.generate(out, out + 2);
  return (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
}

inline std::vector<RmseRow> rmse_study(const RmseStudyConfig& cfg) {
  detail::require(cfg.trials >= 1, "rmse_study: need at least one trial");
  detail::require(cfg.eval_time < cfg.scenario.num_times, "rmse_study: evaluation time out of range");
  detail::require(!cfg.scenario.sources.empty(), "rmse_study: scenario has no sources");
  const MeasurementModel model(cfg.scenario.geometry, cfg.scenario.grid, cfg.scenario.bank);
  const double half_cell = 0.5 * cfg.scenario.grid.spacing();
  const std::size_t M = cfg.methods.size();
  const std::size_t K = cfg.scenario.sources.size();

  std::vector<RmseRow> rows;
  for (std::size_t si = 0; si < cfg.snr_db.size(); ++si) {
    // sq[trial][method] = summed squared error over targets
    std::vector<std::vector<double>> sq(cfg.trials, std::vector<double>(M, 0.0));
    detail::parallel_for(cfg.trials, cfg.threads, [&](std::size_t trial) {
      ScenarioConfig sc = cfg.scenario;
      sc.snr_db = cfg.snr_db[si];
      sc.seed = trial_seed(cfg.scenario.seed, si, trial);
      std::mt19937_64 jitter_rng(sc.seed ^ 0x9e3779b97f4a7c15ULL);
      std::uniform_real_distribution<double> jitter(-half_cell, half_cell);
      for (auto& src : sc.sources) {
        const double off = jitter(jitter_rng);
        for (double& a : src.angles)
          a = std::clamp(a + off, -std::numbers::pi / 2.0, std::numbers::pi / 2.0);
      }
      const Simulation sim = simulate_covariances(sc);
      std::vector<double> truth;
      for (const auto& src : sc.sources) truth.push_back(src.angles[cfg.eval_time]);
      for (std::size_t mi = 0; mi < M; ++mi) {
        const auto est = run_method(cfg.methods[mi], sim.covariances, model, sc.grid, cfg.solver, cfg.mvdr);
        const Vec spatial = spatial_average(est)[cfg.eval_time];
        const auto errs = match_squared_errors(truth, pick_peaks(spatial, sc.grid, K));
        sq[trial][mi] = std::accumulate(errs.begin(), errs.end(), 0.0);
      }
    });
    for (std::size_t mi = 0; mi < M; ++mi) {
      double total = 0.0;
      for (std::size_t trial = 0; trial < cfg.trials; ++trial) total += sq[trial][mi];
      rows.push_back(RmseRow{cfg.snr_db[si], cfg.methods[mi],
                             std::sqrt(total / static_cast<double>(cfg.trials * K)), cfg.trials});
    }
  }
  return rows;
}

}  // namespace gsot
