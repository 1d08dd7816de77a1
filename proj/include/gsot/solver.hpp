#pragma once

// Group-sparse multi-marginal entropic OT, solved by block coordinate descent
// on the dual. The transport tensors M_f = U_f .* K .* V_f are never formed:
// each M_f is represented by its per-time scaling vectors u, v and the
// forward/backward messages that contract the chain-structured kernel.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <limits>
#include <vector>

#include "gsot/forward_model.hpp"
#include "gsot/parallel.hpp"
#include "gsot/types.hpp"
#include "gsot/water_filling.hpp"

namespace gsot {

/// Squared-distance transport cost on the angular grid and its Gibbs kernel
/// K = exp(-C / epsilon).
class CostModel {
 public:
  /// Smallest kernel entry accepted before reporting underflow.
  static constexpr double kMinKernel = 1e-300;

  CostModel(const AngularGrid& grid, double epsilon, double scale = 1.0)
      : epsilon_(epsilon), scale_(scale) {
    detail::require(epsilon > 0.0 && std::isfinite(epsilon), "CostModel: epsilon must be > 0");
    detail::require(scale >= 0.0 && std::isfinite(scale), "CostModel: scale must be >= 0");
    const auto N = static_cast<Eigen::Index>(grid.size());
    C_.resize(N, N);
    for (Eigen::Index i = 0; i < N; ++i)
      for (Eigen::Index j = 0; j < N; ++j) {
        const double d = grid[static_cast<std::size_t>(i)] - grid[static_cast<std::size_t>(j)];
        C_(i, j) = scale * d * d;
      }
    K_ = (-C_.array() / epsilon).exp().matrix();
    if (K_.minCoeff() < kMinKernel)
      throw NumericalError(
          "CostModel: kernel underflows (min exp(-C/epsilon) < 1e-300); increase epsilon or "
          "rescale the cost");
  }

  double epsilon() const { return epsilon_; }
  double scale() const { return scale_; }
  const Mat& cost() const { return C_; }
  const Mat& kernel() const { return K_; }

 private:
  double epsilon_;
  double scale_;
  Mat C_;
  Mat K_;
};

enum class SweepDirection { Forward, Backward };

/// Dual variables and messages for every (f, t), stored frequency-major.
/// Invariants maintained by the update functions: u = exp(G^T lambda / eps),
/// v = exp(psi / eps), psi <= 0.
struct SolverState {
  std::size_t F = 0;
  std::size_t T = 0;
  std::size_t N = 0;
  std::size_t D = 0;  // 2Q^2

  std::vector<Vec> u, v, lambda, psi;
  std::vector<Vec> w_fwd;  // \hat w: contraction of times 1..t-1
  std::vector<Vec> w_bwd;  // w: contraction of times t+1..T
  std::vector<Vec> xi;     // w_fwd .* w_bwd

  SweepDirection direction = SweepDirection::Forward;
  int sweeps = 0;

  SolverState() = default;
  SolverState(std::size_t num_freqs, std::size_t num_times, std::size_t num_points,
              std::size_t data_dim)
      : F(num_freqs), T(num_times), N(num_points), D(data_dim) {
    const auto n = static_cast<Eigen::Index>(N);
    const std::size_t FT = F * T;
    u.assign(FT, Vec::Ones(n));
    v.assign(FT, Vec::Ones(n));
    lambda.assign(FT, Vec::Zero(static_cast<Eigen::Index>(D)));
    psi.assign(FT, Vec::Zero(n));
    w_fwd.assign(FT, Vec::Ones(n));
    w_bwd.assign(FT, Vec::Ones(n));
    xi.assign(FT, Vec::Ones(n));
  }

  std::size_t idx(std::size_t f, std::size_t t) const { return f * T + t; }
};

/// Refreshes one message for (f, t): the forward message \hat w in a forward
/// sweep, the backward message w otherwise, and then xi = w .* \hat w.
inline void update_messages(SolverState& s, const Mat& K, std::size_t f, std::size_t t,
                            SweepDirection dir) {
  const std::size_t k = s.idx(f, t);
  if (dir == SweepDirection::Forward) {
    if (t == 0) {
      s.w_fwd[k].setOnes();
    } else {
      const std::size_t p = s.idx(f, t - 1);
      s.w_fwd[k].noalias() =
          K.transpose() * (s.u[p].array() * s.v[p].array() * s.w_fwd[p].array()).matrix();
    }
  } else {
    if (t + 1 == s.T) {
      s.w_bwd[k].setOnes();
    } else {
      const std::size_t n = s.idx(f, t + 1);
      s.w_bwd[k].noalias() = K * (s.u[n].array() * s.v[n].array() * s.w_bwd[n].array()).matrix();
    }
  }
  s.xi[k] = s.w_fwd[k].cwiseProduct(s.w_bwd[k]);
}

/// Recomputes every message from the current scaling vectors.
inline void refresh_messages(SolverState& s, const Mat& K) {
  for (std::size_t f = 0; f < s.F; ++f) {
    for (std::size_t t = 0; t < s.T; ++t) update_messages(s, K, f, t, SweepDirection::Forward);
    for (std::size_t t = s.T; t-- > 0;) update_messages(s, K, f, t, SweepDirection::Backward);
  }
}

/// Projection P^(t)(M_f) = u .* v .* xi. Requires xi_f^(t) to be current.
inline Vec marginal(const SolverState& s, std::size_t f, std::size_t t) {
  const std::size_t k = s.idx(f, t);
  return (s.u[k].array() * s.v[k].array() * s.xi[k].array()).matrix();
}

// ---------------------------------------------------------------------------
// lambda block: minimize  eps <exp(G^T l / eps), b> + |l|^2 / (2 gamma) - <l, r>
// ---------------------------------------------------------------------------

enum class NewtonLinearSolve {
  Auto,     ///< low-rank route when N < 2Q^2, dense otherwise
  Dense,    ///< Cholesky of the 2Q^2 x 2Q^2 Jacobian
  LowRank,  ///< Woodbury identity through an N x N system
};

struct NewtonResult {
  Vec lambda;
  Vec u;  ///< exp(G^T lambda / eps)
  double residual = 0.0;
  int iterations = 0;
  bool converged = false;
};

struct LambdaProblem {
  const Mat& G;
  const Mat& gram;  ///< G^T G
  const Vec& b;     ///< v .* xi
  const Vec& r;
  double epsilon;
  double gamma;
};

inline Vec lambda_scaling(const LambdaProblem& p, const Vec& lambda) {
  return ((p.G.transpose() * lambda) / p.epsilon).array().exp().matrix();
}

/// Stationarity residual G (exp(G^T l/eps) .* b) + l/gamma - r.
inline Vec lambda_residual(const LambdaProblem& p, const Vec& lambda) {
  const Vec m = lambda_scaling(p, lambda).cwiseProduct(p.b);
  return p.G * m + lambda / p.gamma - p.r;
}

/// Jacobian (1/eps) G diag(exp(G^T l/eps) .* b) G^T + I/gamma.
inline Mat lambda_jacobian(const LambdaProblem& p, const Vec& lambda) {
  const Vec m = lambda_scaling(p, lambda).cwiseProduct(p.b);
  Mat J = p.G * (m / p.epsilon).asDiagonal() * p.G.transpose();
  J.diagonal().array() += 1.0 / p.gamma;
  return J;
}

inline double lambda_objective(const LambdaProblem& p, const Vec& lambda) {
  const Vec m = lambda_scaling(p, lambda).cwiseProduct(p.b);
  return p.epsilon * m.sum() + lambda.squaredNorm() / (2.0 * p.gamma) - lambda.dot(p.r);
}

namespace detail {

// Solves J d = rhs for J = I/gamma + B B^T with B = G diag(sqrt(m/eps)).
inline Vec newton_direction(const LambdaProblem& p, const Vec& m, const Vec& rhs,
                            NewtonLinearSolve how) {
  const auto D = p.G.rows();
  const auto N = p.G.cols();
  if (how == NewtonLinearSolve::Auto)
    how = N < D ? NewtonLinearSolve::LowRank : NewtonLinearSolve::Dense;

  if (how == NewtonLinearSolve::Dense) {
    Mat J = p.G * (m / p.epsilon).asDiagonal() * p.G.transpose();
    J.diagonal().array() += 1.0 / p.gamma;
    Eigen::LLT<Mat> llt(J);
    if (llt.info() != Eigen::Success) throw NumericalError("Newton: Jacobian factorization failed");
    return llt.solve(rhs);
  }

  // (I/g + B B^T)^{-1} y = g y - g^2 B (I + g B^T B)^{-1} B^T y
  const Vec sq = (m / p.epsilon).cwiseSqrt();
  Mat S = sq.asDiagonal() * p.gram * sq.asDiagonal();
  S *= p.gamma;
  S.diagonal().array() += 1.0;
  Eigen::LLT<Mat> llt(S);
  if (llt.info() != Eigen::Success) throw NumericalError("Newton: reduced system factorization failed");
  const Vec bty = sq.cwiseProduct(p.G.transpose() * rhs);
  const Vec z = llt.solve(bty);
  return p.gamma * rhs - p.gamma * p.gamma * (p.G * sq.cwiseProduct(z));
}

}  // namespace detail

/// Damped Newton on the lambda block, warm-started at lambda0. A trial step
/// is accepted when it gives Armijo decrease of the (convex) block objective,
/// or, once the objective is flat to rounding, when it reduces the residual.
inline NewtonResult solve_lambda(const LambdaProblem& p, const Vec& lambda0,
                                 const NewtonParams& np,
                                 NewtonLinearSolve how = NewtonLinearSolve::Auto) {
  NewtonResult res;
  res.lambda = lambda0;

  auto evaluate = [&](const Vec& lam, Vec& u, Vec& m, Vec& F, double& obj) {
    u = lambda_scaling(p, lam);
    m = u.cwiseProduct(p.b);
    F = p.G * m + lam / p.gamma - p.r;
    obj = p.epsilon * m.sum() + lam.squaredNorm() / (2.0 * p.gamma) - lam.dot(p.r);
    return u.allFinite() && F.allFinite() && std::isfinite(obj);
  };

  Vec u, m, F;
  double obj = 0.0;
  if (!evaluate(res.lambda, u, m, F, obj))
    throw NumericalError("Newton: non-finite residual at the starting point");
  double fnorm = F.norm();

  Vec lam_t, u_t, m_t, F_t;
  while (fnorm > np.tol && res.iterations < np.max_iter) {
    ++res.iterations;
    const Vec d = detail::newton_direction(p, m, -F, how);
    const double slope = F.dot(d);  // directional derivative of the objective
    double step = 1.0;
    bool accepted = false;
    for (int halvings = 0; halvings < 60; ++halvings, step *= np.damping) {
      lam_t = res.lambda + step * d;
      double obj_t = 0.0;
      if (!evaluate(lam_t, u_t, m_t, F_t, obj_t)) continue;
      const double fnorm_t = F_t.norm();
      const bool armijo = obj_t <= obj + 1e-4 * step * slope;
      const bool flat = obj_t - obj <= 1e-13 * (std::abs(obj) + 1.0) && fnorm_t < fnorm;
      if (armijo || flat) {
        res.lambda.swap(lam_t);
        u.swap(u_t);
        m.swap(m_t);
        F.swap(F_t);
        obj = obj_t;
        fnorm = fnorm_t;
        accepted = true;
        break;
      }
    }
    if (!accepted) break;
  }
  res.u = std::move(u);
  res.residual = fnorm;
  res.converged = fnorm <= np.tol;
  return res;
}

/// Exact minimization over lambda_f^(t); sets lambda and u in the state.
inline NewtonResult update_lambda(SolverState& s, const MeasurementModel& model, const Vec& r,
                                  double epsilon, double gamma, const NewtonParams& np,
                                  std::size_t f, std::size_t t,
                                  NewtonLinearSolve how = NewtonLinearSolve::Auto) {
  const std::size_t k = s.idx(f, t);
  const Vec b = s.v[k].cwiseProduct(s.xi[k]);
  const LambdaProblem prob{model.G(f), model.gram(f), b, r, epsilon, gamma};
  NewtonResult res = solve_lambda(prob, s.lambda[k], np, how);
  s.lambda[k] = res.lambda;
  s.u[k] = res.u;
  return res;
}

// ---------------------------------------------------------------------------
// psi block: per grid index, water-filling over frequencies
// ---------------------------------------------------------------------------

/// Exact minimization over psi_1^(t) .. psi_F^(t) subject to the l1,inf
/// budget eta. Returns max_i sum_f |psi_{f,i}| after the update.
inline double update_psi(SolverState& s, double epsilon, double eta, std::size_t t,
                         WaterFiller& filler) {
  const std::size_t F = s.F;
  std::vector<double> z(F), x(F);
  double worst = 0.0;
  for (std::size_t i = 0; i < s.N; ++i) {
    const auto ii = static_cast<Eigen::Index>(i);
    for (std::size_t f = 0; f < F; ++f) {
      const std::size_t k = s.idx(f, t);
      z[f] = s.u[k](ii) * s.xi[k](ii);
    }
    filler.allocate(z, eta / epsilon, x);
    double l1 = 0.0;
    for (std::size_t f = 0; f < F; ++f) {
      const std::size_t k = s.idx(f, t);
      s.psi[k](ii) = -epsilon * x[f];
      s.v[k](ii) = std::exp(-x[f]);
      l1 += epsilon * x[f];
    }
    worst = std::max(worst, l1);
  }
  return worst;
}

/// Largest l1 norm over frequencies of psi^(t), maximized over grid indices.
inline double psi_l1inf(const SolverState& s, std::size_t t) {
  double worst = 0.0;
  for (std::size_t i = 0; i < s.N; ++i) {
    double l1 = 0.0;
    for (std::size_t f = 0; f < s.F; ++f) l1 += std::abs(s.psi[s.idx(f, t)](static_cast<Eigen::Index>(i)));
    worst = std::max(worst, l1);
  }
  return worst;
}

// ---------------------------------------------------------------------------
// dual objective
// ---------------------------------------------------------------------------

/// sum_{t,f} |lambda|^2/(2 gamma) - <lambda, r>
inline double dual_quadratic_part(const SolverState& s, const std::vector<Vec>& r, double gamma) {
  double q = 0.0;
  for (std::size_t k = 0; k < s.F * s.T; ++k)
    q += s.lambda[k].squaredNorm() / (2.0 * gamma) - s.lambda[k].dot(r[k]);
  return q;
}

/// Dual objective, with the tensor inner product <U_f, V_f .* K> evaluated as
/// |u .* v .* xi|_1 at time t_ref. Requires xi^(t_ref) to be current.
inline double dual_objective(const SolverState& s, const std::vector<Vec>& r, double epsilon,
                             double gamma, std::size_t t_ref = 0) {
  double mass = 0.0;
  for (std::size_t f = 0; f < s.F; ++f) mass += marginal(s, f, t_ref).sum();
  return epsilon * mass + dual_quadratic_part(s, r, gamma);
}

/// r_f^(t) for every (f, t), frequency-major.
inline std::vector<Vec> vectorize_sequence(const CovarianceSequence& data) {
  std::vector<Vec> r;
  r.reserve(data.matrices().size());
  for (const auto& R : data.matrices()) r.push_back(vectorize_covariance(R));
  return r;
}

// ---------------------------------------------------------------------------
// full solve
// ---------------------------------------------------------------------------

struct SolveReport {
  int sweeps = 0;
  bool converged = false;
  double epsilon = 0.0;
  double final_rel_change = std::numeric_limits<double>::infinity();
  /// Dual objective after each full sweep (index 0: initial point).
  std::vector<double> objective_trace;
  std::vector<double> sweep_seconds;

  long newton_iterations = 0;
  int newton_max_iterations = 0;
  int newton_failures = 0;
  double max_newton_residual = 0.0;
  /// Largest max_i sum_f |psi_{f,i}| seen after any psi update.
  double max_psi_l1inf = 0.0;
  /// Largest relative increase of the dual objective between consecutive
  /// block updates (or sweeps, when block tracking is off). <= 0 means monotone.
  double max_objective_increase = -std::numeric_limits<double>::infinity();
  long block_updates = 0;
};

struct SolveResult {
  SpatioTemporalSpectrum spectrum;
  SolveReport report;
  SolverState state;
};

inline std::vector<Vec> all_marginals(const SolverState& s) {
  std::vector<Vec> out(s.F * s.T);
  for (std::size_t f = 0; f < s.F; ++f)
    for (std::size_t t = 0; t < s.T; ++t) out[s.idx(f, t)] = marginal(s, f, t);
  return out;
}

namespace detail {

// max over (f,t,i) of |new - old| / max_i |old|, scaled per (f,t).
inline double relative_change(const std::vector<Vec>& prev, const std::vector<Vec>& cur) {
  double worst = 0.0;
  for (std::size_t k = 0; k < cur.size(); ++k) {
    const double scale = std::max(prev[k].cwiseAbs().maxCoeff(), 1e-300);
    worst = std::max(worst, (cur[k] - prev[k]).cwiseAbs().maxCoeff() / scale);
  }
  return worst;
}

inline double relative_increase(double before, double after) {
  return (after - before) / std::max(std::abs(before), 1e-300);
}

}  // namespace detail

/// Block coordinate descent with alternating forward/backward sweeps over
/// time. At each time index: refresh the stale message, minimize over every
/// lambda_f, then over the psi block. Stops when the largest relative change
/// of any marginal between consecutive sweeps is <= params.tol.
inline SolveResult solve(const CovarianceSequence& data, const MeasurementModel& model,
                         const AngularGrid& grid, const SolverParams& params,
                         NewtonLinearSolve how = NewtonLinearSolve::Auto) {
  params.validate();
  detail::require(data.num_sensors() == model.num_sensors(),
                  "solve: covariance and model sensor counts differ");
  detail::require(data.num_freqs() == model.num_freqs(),
                  "solve: covariance and model frequency counts differ");
  detail::require(grid.size() == model.num_points(), "solve: grid and model sizes differ");

  const double eps = params.resolve_epsilon(grid);
  const CostModel cost(grid, eps);
  const Mat& K = cost.kernel();
  const std::size_t F = data.num_freqs();
  const std::size_t T = data.num_times();
  const std::vector<Vec> r = vectorize_sequence(data);

  SolverState s(F, T, grid.size(), model.data_dim());
  refresh_messages(s, K);

  SolveReport rep;
  rep.epsilon = eps;
  const bool sparsity = !params.disable_sparsity;
  double obj = dual_objective(s, r, eps, params.gamma);
  rep.objective_trace.push_back(obj);
  std::vector<Vec> prev = all_marginals(s);

  std::vector<NewtonResult> newton(F);
  WaterFiller filler;

  auto note_block = [&](std::size_t t) {
    if (!params.track_block_objective) return;
    const double next = dual_objective(s, r, eps, params.gamma, t);
    rep.max_objective_increase =
        std::max(rep.max_objective_increase, detail::relative_increase(obj, next));
    obj = next;
    ++rep.block_updates;
  };

  for (int sweep = 0; sweep < params.max_sweeps; ++sweep) {
    const auto t0 = std::chrono::steady_clock::now();
    const SweepDirection dir = s.direction;
    for (std::size_t step = 0; step < T; ++step) {
      const std::size_t t = dir == SweepDirection::Forward ? step : T - 1 - step;

      detail::parallel_for(F, params.threads, [&](std::size_t f) {
        update_messages(s, K, f, t, dir);
        newton[f] = update_lambda(s, model, r[s.idx(f, t)], eps, params.gamma, params.newton, f, t, how);
      });
      for (std::size_t f = 0; f < F; ++f) {
        const NewtonResult& nr = newton[f];
        rep.newton_iterations += nr.iterations;
        rep.newton_max_iterations = std::max(rep.newton_max_iterations, nr.iterations);
        rep.max_newton_residual = std::max(rep.max_newton_residual, nr.residual);
        if (!nr.converged) {
          ++rep.newton_failures;
          if (params.fail_on_newton)
            throw NumericalError("solve: Newton did not converge (residual " +
                                 std::to_string(nr.residual) + ")");
        }
      }
      note_block(t);

      if (sparsity) {
        rep.max_psi_l1inf = std::max(rep.max_psi_l1inf, update_psi(s, eps, params.eta, t, filler));
        note_block(t);
      }
    }
    s.direction = dir == SweepDirection::Forward ? SweepDirection::Backward : SweepDirection::Forward;
    ++s.sweeps;

    refresh_messages(s, K);
    std::vector<Vec> cur = all_marginals(s);
    rep.final_rel_change = detail::relative_change(prev, cur);
    prev.swap(cur);

    const double sweep_obj = dual_objective(s, r, eps, params.gamma);
    if (!params.track_block_objective)
      rep.max_objective_increase = std::max(
          rep.max_objective_increase, detail::relative_increase(rep.objective_trace.back(), sweep_obj));
    obj = sweep_obj;
    rep.objective_trace.push_back(sweep_obj);
    rep.sweep_seconds.push_back(
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    rep.sweeps = s.sweeps;

    if (rep.final_rel_change <= params.tol) {
      rep.converged = true;
      break;
    }
  }

  SpatioTemporalSpectrum spectrum(F, T, std::move(prev));
  return SolveResult{std::move(spectrum), std::move(rep), std::move(s)};
}

}  // namespace gsot
