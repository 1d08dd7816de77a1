#include <random>

#include <gtest/gtest.h>

#include "gsot/scenario.hpp"
#include "gsot/solver.hpp"
#include "oracles/dense.hpp"

using namespace gsot;

namespace {

std::mt19937_64& rng() {
  static std::mt19937_64 r(424242);
  return r;
}

double unif(double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng()); }

Vec random_positive(Eigen::Index n, double lo = 0.2, double hi = 2.0) {
  Vec v(n);
  for (auto& x : v) x = unif(lo, hi);
  return v;
}

SolverState random_state(std::size_t F, std::size_t T, std::size_t N) {
  SolverState s(F, T, N, 2);
  for (std::size_t k = 0; k < F * T; ++k) {
    s.u[k] = random_positive(static_cast<Eigen::Index>(N));
    s.v[k] = random_positive(static_cast<Eigen::Index>(N));
  }
  return s;
}

Mat random_kernel(Eigen::Index N) {
  Mat K(N, N);
  for (auto& x : K.reshaped()) x = unif(0.05, 1.0);
  return K;
}

// Random covariances generated by the model itself plus white noise.
CovarianceSequence consistent_data(const MeasurementModel& model, std::size_t F, std::size_t T,
                                   double noise = 0.2) {
  std::vector<CMat> mats;
  const auto Q = static_cast<Eigen::Index>(model.num_sensors());
  for (std::size_t f = 0; f < F; ++f)
    for (std::size_t t = 0; t < T; ++t) {
      const Vec phi = random_positive(static_cast<Eigen::Index>(model.num_points()), 0.0, 1.0);
      CMat R = noise * CMat::Identity(Q, Q);
      const CMat& A = model.steering(f);
      R += A * phi.asDiagonal() * A.adjoint();
      mats.push_back(R);
    }
  return CovarianceSequence(F, T, std::move(mats));
}

double rel_l1(const std::vector<Vec>& a, const std::vector<Vec>& b) {
  double num = 0.0, den = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    num += (a[k] - b[k]).lpNorm<1>();
    den += b[k].lpNorm<1>();
  }
  return num / den;
}

}  // namespace

// ---------------------------------------------------------------------------
// cost model
// ---------------------------------------------------------------------------

TEST(CostModel, KernelIsSymmetricWithUnitDiagonal) {
  const auto grid = AngularGrid::uniform_degrees(-90, 90, 21);
  const CostModel cm(grid, 0.1);
  const Mat& K = cm.kernel();
  EXPECT_EQ(K, K.transpose());
  for (Eigen::Index i = 0; i < K.rows(); ++i) EXPECT_EQ(K(i, i), 1.0);
  EXPECT_GT(K.minCoeff(), 0.0);
  EXPECT_LE(K.maxCoeff(), 1.0);
  const double d = grid[3] - grid[7];
  EXPECT_DOUBLE_EQ(cm.cost()(3, 7), d * d);
}

TEST(CostModel, UnderflowIsReported) {
  const auto grid = AngularGrid::uniform_degrees(-90, 90, 21);
  EXPECT_THROW(CostModel(grid, 1e-4), NumericalError);
  // rescaling the cost brings it back into range
  EXPECT_NO_THROW(CostModel(grid, 1e-4, 1e-3));
  EXPECT_THROW(CostModel(grid, 0.0), InvalidInput);
}

// ---------------------------------------------------------------------------
// messages and marginals
// ---------------------------------------------------------------------------

TEST(Messages, UniformKernelTwoTimes) {
  const std::size_t N = 4;
  SolverState s(1, 2, N, 2);
  const Mat K = Mat::Ones(N, N);
  refresh_messages(s, K);
  const Vec expect = Vec::Constant(N, static_cast<double>(N));
  EXPECT_EQ(s.w_fwd[s.idx(0, 1)], expect);
  EXPECT_EQ(s.w_bwd[s.idx(0, 0)], expect);
  EXPECT_EQ(s.xi[s.idx(0, 0)], expect);
  EXPECT_EQ(s.xi[s.idx(0, 1)], expect);
  EXPECT_EQ(marginal(s, 0, 0), expect);
  EXPECT_DOUBLE_EQ(marginal(s, 0, 1).sum(), static_cast<double>(N * N));
}

TEST(Messages, SingleTimeHasUnitXi) {
  SolverState s = random_state(2, 1, 5);
  refresh_messages(s, random_kernel(5));
  for (std::size_t f = 0; f < 2; ++f) EXPECT_EQ(s.xi[s.idx(f, 0)], Vec::Ones(5));
  SolverState one(1, 1, 3, 2);
  refresh_messages(one, random_kernel(3));
  EXPECT_EQ(marginal(one, 0, 0), Vec::Ones(3));
}

TEST(Messages, MassMatchesDenseTensorAtEveryTime) {
  const std::size_t N = 3, T = 3;
  SolverState s = random_state(1, T, N);
  const Mat K = random_kernel(N);
  refresh_messages(s, K);

  const oracle::TensorIndex ix(N, T);
  std::vector<Vec> u(T), v(T);
  for (std::size_t t = 0; t < T; ++t) {
    u[t] = s.u[t];
    v[t] = s.v[t];
  }
  const Vec M = oracle::scaled_tensor(ix, (-K.array().log()).matrix(), 1.0, u, v);
  for (std::size_t t = 0; t < T; ++t) {
    EXPECT_NEAR(marginal(s, 0, t).sum(), M.sum(), 1e-12 * M.sum());
    const Vec ref = oracle::projection(ix, t) * M;
    EXPECT_LT((marginal(s, 0, t) - ref).norm(), 1e-12 * ref.norm());
  }
}

TEST(Messages, BimarginalMatchesDensePlan) {
  const std::size_t N = 3;
  SolverState s = random_state(1, 2, N);
  const Mat K = random_kernel(N);
  refresh_messages(s, K);
  const Vec a = s.u[0].cwiseProduct(s.v[0]);
  const Vec b = s.u[1].cwiseProduct(s.v[1]);
  const Mat plan = a.asDiagonal() * K * b.asDiagonal();
  EXPECT_LT((marginal(s, 0, 0) - plan.rowwise().sum()).norm(), 1e-13);
  EXPECT_LT((marginal(s, 0, 1) - plan.colwise().sum().transpose()).norm(), 1e-13);
}

TEST(Messages, DirectionalUpdatesAgreeWithFullRefresh) {
  const std::size_t N = 4, T = 4;
  SolverState s = random_state(2, T, N);
  const Mat K = random_kernel(N);
  SolverState ref = s;
  refresh_messages(ref, K);
  // forward sweep from a stale state reproduces the forward messages
  s.w_fwd.assign(s.w_fwd.size(), Vec::Zero(N));
  s.w_bwd = ref.w_bwd;
  for (std::size_t f = 0; f < 2; ++f)
    for (std::size_t t = 0; t < T; ++t) update_messages(s, K, f, t, SweepDirection::Forward);
  for (std::size_t k = 0; k < 2 * T; ++k) {
    EXPECT_LT((s.w_fwd[k] - ref.w_fwd[k]).norm(), 1e-13);
    EXPECT_LT((s.xi[k] - ref.xi[k]).norm(), 1e-13);
  }
}

// ---------------------------------------------------------------------------
// lambda block
// ---------------------------------------------------------------------------

TEST(Lambda, ConsistentDataIsStationaryAtZero) {
  const MeasurementModel m(ArrayGeometry::uniform_linear(2), AngularGrid::uniform_degrees(-60, 60, 5),
                           FrequencyBank({1.3}));
  const Vec b = random_positive(5);
  const Vec r = m.G(0) * b;
  const LambdaProblem p{m.G(0), m.gram(0), b, r, 0.3, 0.7};
  EXPECT_LT(lambda_residual(p, Vec::Zero(8)).norm(), 1e-14);
  const auto res = solve_lambda(p, Vec::Zero(8), NewtonParams{});
  EXPECT_EQ(res.iterations, 0);
  EXPECT_TRUE(res.converged);
  EXPECT_TRUE(res.lambda.isZero(0.0));
}

TEST(Lambda, ScalarRootMatchesBisection) {
  const ArrayGeometry geom({0.0}, 1.0);
  const MeasurementModel m(geom, AngularGrid({0.0}), FrequencyBank({1.0}));
  const Vec b = Vec::Ones(1);
  for (double rho : {-3.0, 0.2, 1.0, 5.0, 40.0})
    for (double eps : {0.05, 0.5})
      for (double gamma : {0.1, 2.0}) {
        Vec r(2);
        r << rho, 0.0;
        const LambdaProblem p{m.G(0), m.gram(0), b, r, eps, gamma};
        const auto res = solve_lambda(p, Vec::Zero(2), NewtonParams{100, 0.5, 1e-12});
        ASSERT_TRUE(res.converged);
        auto h = [&](double l) { return std::exp(l / eps) + l / gamma - rho; };
        double lo = -1e3, hi = 1e3;
        while (h(hi) > 0 && hi > 1e-12) hi *= 0.5;  // keep exp finite
        if (h(hi) < 0) hi = rho * gamma + 1.0;
        for (int it = 0; it < 400; ++it) {
          const double mid = 0.5 * (lo + hi);
          (h(mid) > 0 ? hi : lo) = mid;
        }
        EXPECT_NEAR(res.lambda(0), 0.5 * (lo + hi), 1e-9 * std::max(1.0, std::abs(lo)));
        EXPECT_EQ(res.lambda(1), 0.0);
      }
}

TEST(Lambda, JacobianMatchesFiniteDifferences) {
  const MeasurementModel m(ArrayGeometry::uniform_linear(3, 0.5), AngularGrid::uniform_degrees(-80, 80, 7),
                           FrequencyBank({2.0}));
  const Vec b = random_positive(7);
  const Vec r = random_positive(18, -1.0, 1.0);
  const LambdaProblem p{m.G(0), m.gram(0), b, r, 0.8, 0.5};
  const Vec lam = random_positive(18, -0.2, 0.2);
  const Mat J = lambda_jacobian(p, lam);
  Mat Jfd(18, 18);
  const double h = 1e-6;
  for (Eigen::Index j = 0; j < 18; ++j) {
    Vec lp = lam, lm = lam;
    lp(j) += h;
    lm(j) -= h;
    Jfd.col(j) = (lambda_residual(p, lp) - lambda_residual(p, lm)) / (2 * h);
  }
  EXPECT_LE((J - Jfd).norm() / J.norm(), 1e-5);
  // and the residual is the gradient of the block objective
  Vec gfd(18);
  for (Eigen::Index j = 0; j < 18; ++j) {
    Vec lp = lam, lm = lam;
    lp(j) += h;
    lm(j) -= h;
    gfd(j) = (lambda_objective(p, lp) - lambda_objective(p, lm)) / (2 * h);
  }
  const Vec g = lambda_residual(p, lam);
  EXPECT_LE((g - gfd).norm() / g.norm(), 1e-5);
}

TEST(Lambda, DenseAndLowRankStepsAgree) {
  for (std::size_t N : {3u, 5u, 31u}) {
    const MeasurementModel m(ArrayGeometry::uniform_linear(3), AngularGrid::uniform_degrees(-90, 90, N),
                             FrequencyBank({1.1}));
    const Vec b = random_positive(static_cast<Eigen::Index>(N));
    const Vec r = random_positive(18, -2.0, 2.0);
    const LambdaProblem p{m.G(0), m.gram(0), b, r, 0.2, 0.05};
    const Vec mm = random_positive(static_cast<Eigen::Index>(N));
    const Vec rhs = random_positive(18, -1.0, 1.0);
    const Vec d1 = detail::newton_direction(p, mm, rhs, NewtonLinearSolve::Dense);
    const Vec d2 = detail::newton_direction(p, mm, rhs, NewtonLinearSolve::LowRank);
    EXPECT_LE((d1 - d2).norm(), 1e-10 * d1.norm()) << "N=" << N;

    const auto a = solve_lambda(p, Vec::Zero(18), NewtonParams{}, NewtonLinearSolve::Dense);
    const auto c = solve_lambda(p, Vec::Zero(18), NewtonParams{}, NewtonLinearSolve::LowRank);
    ASSERT_TRUE(a.converged && c.converged);
    EXPECT_LE((a.lambda - c.lambda).norm(), 1e-8 * std::max(1.0, a.lambda.norm()));
  }
}

TEST(Lambda, SolutionMinimizesBlockObjective) {
  const MeasurementModel m(ArrayGeometry::uniform_linear(2), AngularGrid::uniform_degrees(-90, 90, 9),
                           FrequencyBank({1.5}));
  const Vec b = random_positive(9);
  const Vec r = random_positive(8, -3.0, 3.0);
  const LambdaProblem p{m.G(0), m.gram(0), b, r, 0.1, 0.3};
  const auto res = solve_lambda(p, Vec::Zero(8), NewtonParams{});
  ASSERT_TRUE(res.converged);
  EXPECT_LE(res.residual, 1e-9);
  EXPECT_LT((res.u - lambda_scaling(p, res.lambda)).norm(), 1e-300 + 1e-15 * res.u.norm());
  const double best = lambda_objective(p, res.lambda);
  for (int k = 0; k < 100; ++k) {
    const Vec d = random_positive(8, -1e-3, 1e-3);
    EXPECT_LE(best, lambda_objective(p, res.lambda + d) + 1e-12);
  }
}

// ---------------------------------------------------------------------------
// psi block
// ---------------------------------------------------------------------------

TEST(Psi, ZeroBudgetKeepsPsiAtZero) {
  SolverState s = random_state(3, 2, 6);
  refresh_messages(s, random_kernel(6));
  WaterFiller wf;
  EXPECT_EQ(update_psi(s, 0.1, 0.0, 1, wf), 0.0);
  for (std::size_t f = 0; f < 3; ++f) {
    EXPECT_TRUE(s.psi[s.idx(f, 1)].isZero(0.0));
    EXPECT_EQ(s.v[s.idx(f, 1)], Vec::Ones(6));
  }
}

TEST(Psi, UpdateIsFeasibleAndUsesWaterFilling) {
  const double eps = 0.2, eta = 0.7;
  SolverState s = random_state(4, 3, 8);
  refresh_messages(s, random_kernel(8));
  WaterFiller wf;
  const std::size_t t = 1;
  const double worst = update_psi(s, eps, eta, t, wf);
  EXPECT_LE(worst, eta + 1e-12);
  EXPECT_LE(psi_l1inf(s, t), eta + 1e-12);
  for (std::size_t i = 0; i < 8; ++i) {
    const auto ii = static_cast<Eigen::Index>(i);
    std::vector<double> z(4);
    for (std::size_t f = 0; f < 4; ++f) z[f] = s.u[s.idx(f, t)](ii) * s.xi[s.idx(f, t)](ii);
    const auto x = WaterFiller{}.allocate(z, eta / eps);
    double l1 = 0.0;
    for (std::size_t f = 0; f < 4; ++f) {
      const double psi = s.psi[s.idx(f, t)](ii);
      EXPECT_LE(psi, 0.0);
      EXPECT_NEAR(psi, -eps * x[f], 1e-15);
      EXPECT_NEAR(s.v[s.idx(f, t)](ii), std::exp(psi / eps), 1e-15);
      l1 -= psi;
    }
    EXPECT_NEAR(l1, eta, 1e-12);  // budget is spent whenever z > 0
  }
}

TEST(Psi, UpdateDoesNotIncreaseObjective) {
  const double eps = 0.3;
  SolverState s = random_state(3, 3, 5);
  const Mat K = random_kernel(5);
  refresh_messages(s, K);
  const std::vector<Vec> r(9, Vec::Zero(2));
  WaterFiller wf;
  for (std::size_t t = 0; t < 3; ++t) {
    const double before = dual_objective(s, r, eps, 1.0, t);
    update_psi(s, eps, 0.9, t, wf);
    const double after = dual_objective(s, r, eps, 1.0, t);
    EXPECT_LE(after, before * (1 + 1e-12));
  }
}

// ---------------------------------------------------------------------------
// dual objective
// ---------------------------------------------------------------------------

TEST(DualObjective, UniformStartValue) {
  const std::size_t F = 2, N = 3;
  SolverState s(F, 2, N, 8);
  refresh_messages(s, Mat::Ones(N, N));
  const std::vector<Vec> r(F * 2, random_positive(8));
  EXPECT_DOUBLE_EQ(dual_objective(s, r, 0.4, 1.0), 0.4 * F * N * N);
}

TEST(DualObjective, IndependentOfReferenceTime) {
  SolverState s = random_state(2, 4, 5);
  for (auto& l : s.lambda) l = random_positive(2, -1.0, 1.0);
  refresh_messages(s, random_kernel(5));
  const std::vector<Vec> r(8, random_positive(2));
  const double v0 = dual_objective(s, r, 0.25, 0.7, 0);
  for (std::size_t t = 1; t < 4; ++t) EXPECT_NEAR(dual_objective(s, r, 0.25, 0.7, t), v0, 1e-10 * std::abs(v0));
}

TEST(DualObjective, MatchesDenseEnumeration) {
  const std::size_t N = 3, T = 2, F = 2;
  const double eps = 0.35, gamma = 0.8;
  const auto grid = AngularGrid::uniform_degrees(-50, 70, N);
  const CostModel cm(grid, eps);
  SolverState s = random_state(F, T, N);
  s.D = 8;
  for (auto& l : s.lambda) l = random_positive(8, -1.0, 1.0);
  refresh_messages(s, cm.kernel());
  std::vector<Vec> r(F * T);
  for (auto& x : r) x = random_positive(8, -1.0, 1.0);

  const oracle::TensorIndex ix(N, T);
  double ref = 0.0;
  for (std::size_t f = 0; f < F; ++f) {
    std::vector<Vec> u(T), v(T);
    for (std::size_t t = 0; t < T; ++t) {
      u[t] = s.u[s.idx(f, t)];
      v[t] = s.v[s.idx(f, t)];
    }
    ref += eps * oracle::scaled_tensor(ix, cm.cost(), eps, u, v).sum();
    for (std::size_t t = 0; t < T; ++t) {
      const Vec& l = s.lambda[s.idx(f, t)];
      ref += l.squaredNorm() / (2 * gamma) - l.dot(r[s.idx(f, t)]);
    }
  }
  EXPECT_NEAR(dual_objective(s, r, eps, gamma), ref, 1e-12 * std::abs(ref));
}

// ---------------------------------------------------------------------------
// full solve
// ---------------------------------------------------------------------------

TEST(Solve, MatchesDensePrimalOracle) {
  const std::size_t N = 3, T = 2, F = 2;
  const auto grid = AngularGrid::uniform_degrees(-60, 60, N);
  const MeasurementModel model(ArrayGeometry::uniform_linear(2), grid, FrequencyBank({1.0, 2.0}));
  const auto data = consistent_data(model, F, T);
  SolverParams sp;
  sp.epsilon = 0.5;
  sp.gamma = 1.0;
  sp.eta = 0.5;
  sp.tol = 1e-13;
  sp.max_sweeps = 100000;
  sp.newton.tol = 1e-12;
  const auto res = solve(data, model, grid, sp);
  ASSERT_TRUE(res.report.converged);

  oracle::PrimalProblem pb;
  pb.N = N;
  pb.T = T;
  pb.F = F;
  pb.cost = CostModel(grid, sp.epsilon).cost();
  for (std::size_t f = 0; f < F; ++f) pb.G.push_back(model.G(f));
  pb.r = vectorize_sequence(data);
  pb.epsilon = sp.epsilon;
  pb.gamma = sp.gamma;
  pb.eta = sp.eta;
  const auto ps = oracle::solve_primal(pb);
  EXPECT_LE(rel_l1(res.spectrum.values(), ps.marginals), 1e-4);
}

TEST(Solve, WithoutSparsityMatchesPlainTrackerExactly) {
  const auto grid = AngularGrid::uniform_degrees(-90, 90, 15);
  const MeasurementModel model(ArrayGeometry::uniform_linear(4), grid, FrequencyBank({1.4}));
  const auto data = consistent_data(model, 1, 4);
  SolverParams a;
  a.eta = 0.0;
  a.max_sweeps = 50;
  SolverParams b = a;
  b.disable_sparsity = true;
  const auto ra = solve(data, model, grid, a);
  const auto rb = solve(data, model, grid, b);
  for (std::size_t t = 0; t < 4; ++t) EXPECT_EQ(ra.spectrum(0, t), rb.spectrum(0, t));
}

TEST(Solve, NoiselessStaticSourcePeaksOnItsGridPoint) {
  ScenarioConfig sc{ArrayGeometry::uniform_linear(6), AngularGrid::uniform_degrees(-90, 90, 31),
                    FrequencyBank::uniform(0.8, 2.4, 4), 2, 100, 10.0, 0.0, 0, {}};
  const std::size_t istar = 19;
  sc.sources.push_back({{sc.grid[istar], sc.grid[istar]}, {1.0, 1.0, 1.0, 1.0}});
  const Simulation sim = expected_covariances(sc);
  const MeasurementModel model(sc.geometry, sc.grid, sc.bank);
  SolverParams sp;
  sp.max_sweeps = 200;
  const auto res = solve(sim.covariances, model, sc.grid, sp);
  const auto avg = spatial_average(res.spectrum);
  for (std::size_t t = 0; t < 2; ++t) {
    Eigen::Index arg;
    avg[t].maxCoeff(&arg);
    EXPECT_EQ(static_cast<std::size_t>(arg), istar) << "t=" << t;
  }
}

TEST(Solve, InvariantsHoldThroughoutASolve) {
  const auto grid = AngularGrid::uniform_degrees(-90, 90, 21);
  const MeasurementModel model(ArrayGeometry::uniform_linear(4), grid, FrequencyBank::uniform(0.6, 2.2, 4));
  const auto data = consistent_data(model, 4, 3);
  SolverParams sp;
  sp.eta = 0.8;
  sp.max_sweeps = 60;
  sp.track_block_objective = true;
  const auto res = solve(data, model, grid, sp);
  const auto& rep = res.report;
  const double eps = rep.epsilon;

  EXPECT_EQ(rep.newton_failures, 0);
  EXPECT_LE(rep.max_newton_residual, sp.newton.tol);
  EXPECT_LE(rep.max_psi_l1inf, sp.eta + 1e-12);
  EXPECT_LE(rep.max_objective_increase, 1e-9);
  EXPECT_EQ(rep.block_updates, 60 * 3 * 2);
  for (std::size_t k = 1; k < rep.objective_trace.size(); ++k)
    EXPECT_LE(rep.objective_trace[k], rep.objective_trace[k - 1] * (1 + 1e-9) + 1e-12);

  const SolverState& s = res.state;
  for (std::size_t f = 0; f < 4; ++f) {
    const double m0 = res.spectrum(f, 0).sum();
    for (std::size_t t = 0; t < 3; ++t) {
      const std::size_t k = s.idx(f, t);
      EXPECT_NEAR(res.spectrum(f, t).sum(), m0, 1e-8 * m0);
      EXPECT_GT(res.spectrum(f, t).minCoeff(), 0.0);
      EXPECT_LE(s.psi[k].maxCoeff(), 0.0);
      const Vec u = ((model.G(f).transpose() * s.lambda[k]) / eps).array().exp().matrix();
      EXPECT_LT((s.u[k] - u).norm(), 1e-12 * u.norm());
      const Vec v = (s.psi[k] / eps).array().exp().matrix();
      EXPECT_LT((s.v[k] - v).norm(), 1e-14 * v.norm());
    }
  }
}

TEST(Solve, ResultDoesNotDependOnThreadCount) {
  const auto grid = AngularGrid::uniform_degrees(-90, 90, 17);
  const MeasurementModel model(ArrayGeometry::uniform_linear(3), grid, FrequencyBank::uniform(0.6, 2.2, 5));
  const auto data = consistent_data(model, 5, 3);
  SolverParams sp;
  sp.max_sweeps = 20;
  const auto a = solve(data, model, grid, sp);
  sp.threads = 3;
  const auto b = solve(data, model, grid, sp);
  for (std::size_t k = 0; k < 15; ++k) EXPECT_EQ(a.spectrum.values()[k], b.spectrum.values()[k]);
  EXPECT_EQ(a.report.objective_trace, b.report.objective_trace);
}

TEST(Solve, ReportsNonConvergence) {
  const auto grid = AngularGrid::uniform_degrees(-90, 90, 11);
  const MeasurementModel model(ArrayGeometry::uniform_linear(3), grid, FrequencyBank({1.0, 2.0}));
  const auto data = consistent_data(model, 2, 2);
  SolverParams sp;
  sp.max_sweeps = 1;
  const auto res = solve(data, model, grid, sp);
  EXPECT_FALSE(res.report.converged);
  EXPECT_EQ(res.report.sweeps, 1);
  EXPECT_EQ(res.report.objective_trace.size(), 2u);
  EXPECT_EQ(res.report.sweep_seconds.size(), 1u);
}

TEST(Solve, NewtonFailureCanAbort) {
  const auto grid = AngularGrid::uniform_degrees(-90, 90, 11);
  const MeasurementModel model(ArrayGeometry::uniform_linear(3), grid, FrequencyBank({1.0}));
  const auto data = consistent_data(model, 1, 2);
  SolverParams sp;
  sp.max_sweeps = 2;
  sp.newton.max_iter = 1;
  sp.newton.tol = 1e-15;
  const auto res = solve(data, model, grid, sp);
  EXPECT_GT(res.report.newton_failures, 0);
  sp.fail_on_newton = true;
  EXPECT_THROW(solve(data, model, grid, sp), NumericalError);
}

TEST(Solve, RejectsInconsistentInputs) {
  const auto grid = AngularGrid::uniform_degrees(-90, 90, 11);
  const MeasurementModel model(ArrayGeometry::uniform_linear(3), grid, FrequencyBank({1.0}));
  const auto data = consistent_data(model, 1, 2);
  const MeasurementModel other(ArrayGeometry::uniform_linear(4), grid, FrequencyBank({1.0}));
  EXPECT_THROW(solve(data, other, grid, SolverParams{}), InvalidInput);
  EXPECT_THROW(solve(data, model, AngularGrid::uniform_degrees(-90, 90, 12), SolverParams{}), InvalidInput);
  SolverParams tiny;
  tiny.epsilon = 1e-5;
  EXPECT_THROW(solve(data, model, grid, tiny), NumericalError);
}
