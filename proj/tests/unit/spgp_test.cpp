#include "hpbm/error.hpp"
#include "hpbm/optimize.hpp"
#include "hpbm/spgp.hpp"
#include "oracles.hpp"

#include <gtest/gtest.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <random>

using hpbm::gp::Dataset;
using hpbm::gp::KernelHyperparams;
using hpbm::spgp::InducingSet;

namespace {

Eigen::MatrixXd random_rows(std::mt19937_64& rng, Eigen::Index m, Eigen::Index d) {
  std::uniform_real_distribution<double> u(-2.0, 2.0);
  Eigen::MatrixXd z(m, d);
  for (Eigen::Index i = 0; i < m; ++i) {
    for (Eigen::Index j = 0; j < d; ++j) z(i, j) = u(rng);
  }
  return z;
}

KernelHyperparams optimize_exact(const Dataset& data, const KernelHyperparams& start) {
  const auto objective = [&](const Eigen::VectorXd& p, Eigen::VectorXd& grad) {
    const auto r = hpbm::gp::log_marginal_likelihood(data, KernelHyperparams::from_log(p));
    grad = -r.gradient;
    return -r.value;
  };
  hpbm::optim::QuasiNewtonOptions options;
  options.max_iterations = 300;
  return KernelHyperparams::from_log(hpbm::optim::minimize_bfgs(objective, start.to_log(), options).x);
}

}  // namespace

TEST(FitcLml, DegenerateIdentity) {
  std::mt19937_64 rng(21);
  for (int trial = 0; trial < 5; ++trial) {
    const auto p = oracle::random_problem(rng, 30 + 10 * trial, 3);
    const auto fitc = hpbm::spgp::fitc_log_marginal_likelihood({p.x, p.y}, p.hyper, InducingSet{p.x});
    const auto exact = hpbm::gp::log_marginal_likelihood({p.x, p.y}, p.hyper);
    EXPECT_NEAR(fitc.value, exact.value, 1e-6);
  }
}

TEST(FitcLml, MatchesDenseCovariance) {
  std::mt19937_64 rng(22);
  for (int trial = 0; trial < 10; ++trial) {
    const Eigen::Index n = 20 + 8 * trial;
    const auto p = oracle::random_problem(rng, n, 1 + trial % 4);
    const Eigen::MatrixXd z = random_rows(rng, 3 + trial, p.x.cols());
    const auto fitc = hpbm::spgp::fitc_log_marginal_likelihood({p.x, p.y}, p.hyper, InducingSet{z});
    const double dense = oracle::fitc_lml(p.x, p.y, z, p.hyper);
    EXPECT_NEAR(fitc.value, dense, 1e-8 * std::max(1.0, std::abs(dense))) << "trial " << trial;
  }
}

TEST(FitcLml, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(23);
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::Index d = 1 + trial % 4;
    const auto p = oracle::random_problem(rng, 40 + 2 * trial, d);
    const Eigen::Index m = 3 + trial % 6;
    const Eigen::MatrixXd z = random_rows(rng, m, d);
    const Dataset data{p.x, p.y};
    const auto r = hpbm::spgp::fitc_log_marginal_likelihood(data, p.hyper, InducingSet{z});

    const auto by_hyper = [&](const Eigen::VectorXd& packed) {
      return hpbm::spgp::fitc_log_marginal_likelihood(data, KernelHyperparams::from_log(packed), InducingSet{z}).value;
    };
    const Eigen::VectorXd fd_hyper = oracle::five_point_difference(by_hyper, p.hyper.to_log(), 1e-3);
    EXPECT_LE(oracle::max_relative_error(r.hyper_gradient, fd_hyper, 1e-3), 1e-4) << "trial " << trial;

    const Eigen::VectorXd flat = Eigen::Map<const Eigen::VectorXd>(z.data(), z.size());
    const auto by_location = [&](const Eigen::VectorXd& v) {
      const Eigen::MatrixXd moved = Eigen::Map<const Eigen::MatrixXd>(v.data(), m, d);
      return hpbm::spgp::fitc_log_marginal_likelihood(data, p.hyper, InducingSet{moved}).value;
    };
    const Eigen::VectorXd fd_z = oracle::five_point_difference(by_location, flat, 1e-3);
    const Eigen::VectorXd analytic_z = Eigen::Map<const Eigen::VectorXd>(r.pseudo_input_gradient.data(), z.size());
    EXPECT_LE(oracle::max_relative_error(analytic_z, fd_z, 1e-3), 1e-4) << "trial " << trial;
  }
}

TEST(FitcLml, RejectsBadShapes) {
  std::mt19937_64 rng(24);
  const auto p = oracle::random_problem(rng, 10, 2);
  EXPECT_THROW(hpbm::spgp::fitc_log_marginal_likelihood({p.x, p.y}, p.hyper, InducingSet{random_rows(rng, 11, 2)}),
               hpbm::InvalidInput);
  EXPECT_THROW(hpbm::spgp::fitc_log_marginal_likelihood({p.x, p.y}, p.hyper, InducingSet{random_rows(rng, 3, 3)}),
               hpbm::InvalidInput);
}

TEST(PredictSpgp, DegenerateMatchesExact) {
  std::mt19937_64 rng(25);
  const auto p = oracle::random_problem(rng, 60, 3);
  const auto sparse = hpbm::spgp::assemble_spgp({p.x, p.y}, p.hyper, InducingSet{p.x});
  const auto exact = hpbm::gp::fit_exact({p.x, p.y}, p.hyper);
  const auto probe = oracle::random_problem(rng, 10, 3);
  for (Eigen::Index i = 0; i < probe.x.rows(); ++i) {
    const Eigen::VectorXd xs = probe.x.row(i).transpose();
    const auto a = hpbm::spgp::predict_spgp(sparse, xs);
    const auto b = hpbm::gp::predict(exact, xs);
    EXPECT_NEAR(a.mean, b.mean, 1e-6);
    EXPECT_NEAR(a.variance, b.variance, 1e-6);
  }
  EXPECT_LE(sparse.fitc_diag().maxCoeff(), 1e-8);
}

TEST(PredictSpgp, MatchesDenseFitcOracle) {
  std::mt19937_64 rng(26);
  for (int trial = 0; trial < 8; ++trial) {
    const auto p = oracle::random_problem(rng, 30 + 10 * trial, 2 + trial % 3);
    const Eigen::MatrixXd z = random_rows(rng, 6, p.x.cols());
    const auto model = hpbm::spgp::assemble_spgp({p.x, p.y}, p.hyper, InducingSet{z});
    const auto probe = oracle::random_problem(rng, 5, p.x.cols());
    for (Eigen::Index i = 0; i < probe.x.rows(); ++i) {
      const Eigen::VectorXd xs = probe.x.row(i).transpose();
      const auto got = hpbm::spgp::predict_spgp(model, xs);
      const auto want = oracle::fitc_predict(p.x, p.y, z, p.hyper, xs);
      EXPECT_NEAR(got.mean, want.mean, 1e-8 * std::max(1.0, std::abs(want.mean)));
      EXPECT_NEAR(got.variance, want.variance, 1e-8 * p.hyper.signal_variance);
    }
    EXPECT_GE(model.fitc_diag().minCoeff(), 0.0);
  }
}

TEST(PredictSpgp, RevertsToZeroFarFromPseudoInputs) {
  std::mt19937_64 rng(27);
  const auto p = oracle::random_problem(rng, 200, 3);
  const auto model = hpbm::spgp::fit_spgp({p.x, p.y}, 12, {.seed = 3, .max_iterations = 60, .standardize = false});
  const auto& h = model.hyperparams();
  const Eigen::MatrixXd& z = model.inducing().pseudo_inputs;
  Eigen::VectorXd far = Eigen::VectorXd::Constant(3, z.cwiseAbs().maxCoeff() + 20.0 * h.lengthscales.maxCoeff() + 1.0);
  const auto pred = hpbm::spgp::predict_spgp(model, far);
  EXPECT_LE(std::abs(pred.mean), 1e-80 * h.signal_variance * model.weights().cwiseAbs().sum());
  EXPECT_NEAR(pred.variance, h.signal_variance, 1e-6 * h.signal_variance);
}

TEST(FitSpgp, DegenerateFitMatchesExactGp) {
  std::mt19937_64 rng(28);
  const auto p = oracle::random_problem(rng, 25, 2);
  const Dataset data{p.x, p.y};
  const KernelHyperparams best = optimize_exact(data, p.hyper);
  const auto exact = hpbm::gp::fit_exact(data, best);
  hpbm::spgp::SpgpFitOptions options;
  options.seed = 5;
  options.standardize = false;
  options.initial_hyper = best;
  const auto sparse = hpbm::spgp::fit_spgp(data, 25, options);
  const auto probe = oracle::random_problem(rng, 10, 2);
  for (Eigen::Index i = 0; i < probe.x.rows(); ++i) {
    const Eigen::VectorXd xs = probe.x.row(i).transpose();
    EXPECT_NEAR(sparse.mean(xs), hpbm::gp::predict(exact, xs).mean, 1e-4);
  }
}

TEST(FitSpgp, DeterministicForFixedSeed) {
  std::mt19937_64 rng(29);
  const auto p = oracle::random_problem(rng, 150, 3);
  const hpbm::spgp::SpgpFitOptions options{.seed = 9, .max_iterations = 50};
  const auto a = hpbm::spgp::fit_spgp({p.x, p.y}, 8, options);
  const auto b = hpbm::spgp::fit_spgp({p.x, p.y}, 8, options);
  EXPECT_EQ(a.inducing().pseudo_inputs, b.inducing().pseudo_inputs);
  EXPECT_EQ(a.weights(), b.weights());
  EXPECT_EQ(a.hyperparams().lengthscales, b.hyperparams().lengthscales);
  EXPECT_EQ(a.diagnostics().trace, b.diagnostics().trace);
}

TEST(FitSpgp, LikelihoodImprovesFromStart) {
  std::mt19937_64 rng(30);
  const auto p = oracle::random_problem(rng, 120, 2);
  const auto model = hpbm::spgp::fit_spgp({p.x, p.y}, 10, {.seed = 1, .max_iterations = 80});
  const auto& trace = model.diagnostics().trace;
  ASSERT_GE(trace.size(), 2u);
  for (std::size_t i = 1; i < trace.size(); ++i) EXPECT_LE(trace[i], trace[i - 1]);
  EXPECT_NEAR(-trace.back(), model.diagnostics().log_marginal_likelihood, 1e-9 * std::abs(trace.back()));
}

TEST(FitSpgp, RejectsBadCounts) {
  std::mt19937_64 rng(31);
  const auto p = oracle::random_problem(rng, 10, 2);
  EXPECT_THROW(hpbm::spgp::fit_spgp({p.x, p.y}, 0), hpbm::InvalidInput);
  EXPECT_THROW(hpbm::spgp::fit_spgp({p.x, p.y}, 11), hpbm::InvalidInput);
}

TEST(FitSpgp, HeldOutAccuracyNearExactGp) {
  std::mt19937_64 rng(32);
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  std::normal_distribution<double> noise(0.0, 0.05);
  const auto truth = [](double a, double b) { return std::sin(a) * std::cos(0.5 * b) + 0.2 * a; };
  const auto sample = [&](Eigen::Index n) {
    Dataset d{Eigen::MatrixXd(n, 2), Eigen::VectorXd(n)};
    for (Eigen::Index i = 0; i < n; ++i) {
      d.inputs(i, 0) = u(rng);
      d.inputs(i, 1) = u(rng);
      d.targets[i] = truth(d.inputs(i, 0), d.inputs(i, 1)) + noise(rng);
    }
    return d;
  };
  const Dataset train = sample(500);
  const Dataset test = sample(200);

  KernelHyperparams start;
  start.signal_variance = 0.5;
  start.noise_variance = 0.01;
  start.lengthscales = Eigen::VectorXd::Ones(2);
  const auto exact = hpbm::gp::fit_exact(train, optimize_exact(train, start));
  const auto sparse = hpbm::spgp::fit_spgp(train, 32, {.seed = 4, .standardize = false});

  double se_exact = 0.0, se_sparse = 0.0;
  for (Eigen::Index i = 0; i < test.size(); ++i) {
    const Eigen::VectorXd xs = test.inputs.row(i).transpose();
    se_exact += std::pow(hpbm::gp::predict(exact, xs).mean - test.targets[i], 2);
    se_sparse += std::pow(sparse.mean(xs) - test.targets[i], 2);
  }
  EXPECT_LE(std::sqrt(se_sparse), 1.5 * std::sqrt(se_exact));
}

TEST(FitSpgp, NoiseVarianceRespectsFloor) {
  // Mostly-zero targets with rare spikes, the shape of one-step residuals.
  std::mt19937_64 rng(34);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Dataset d{Eigen::MatrixXd(400, 2), Eigen::VectorXd::Zero(400)};
  for (Eigen::Index i = 0; i < d.size(); ++i) {
    d.inputs(i, 0) = u(rng);
    d.inputs(i, 1) = u(rng);
    if (i % 37 == 0) d.targets[i] = 0.05 * (1.0 + u(rng));
  }
  const double mean_square = d.targets.squaredNorm() / static_cast<double>(d.size());
  for (const double floor : {1e-3, 1e-2}) {
    const auto m = hpbm::spgp::fit_spgp(d, 16, {.seed = 2, .max_iterations = 150, .noise_floor = floor});
    EXPECT_GE(m.hyperparams().noise_variance, floor * mean_square * (1.0 - 1e-12));
    for (Eigen::Index i = 0; i < d.size(); ++i) {
      ASSERT_LE(std::abs(m.mean(d.inputs.row(i).transpose())), 2.0 * d.targets.maxCoeff());
    }
  }
  // Unconstrained, this seed drives the noise to ~1e-15 of the target power.
  const auto free = hpbm::spgp::fit_spgp(d, 16, {.seed = 2, .max_iterations = 150, .noise_floor = 0.0});
  EXPECT_LT(free.hyperparams().noise_variance, 1e-6 * mean_square);
  const auto floored = hpbm::spgp::fit_spgp(d, 16, {.seed = 2, .max_iterations = 150, .noise_floor = 1e-3});
  EXPECT_NEAR(floored.hyperparams().noise_variance / mean_square, 1e-3, 1e-5);
  EXPECT_THROW(hpbm::spgp::fit_spgp(d, 4, {.noise_floor = -1.0}), hpbm::InvalidInput);
}

TEST(FitcLml, CostScalesLinearlyInN) {
  std::mt19937_64 rng(33);
  const auto small = oracle::random_problem(rng, 4000, 6);
  const auto large = oracle::random_problem(rng, 8000, 6);
  const Eigen::MatrixXd z = random_rows(rng, 16, 6);
  const auto best_time = [&](const oracle::Problem& p) {
    double best = 1e300;
    for (int rep = 0; rep < 7; ++rep) {
      const auto t0 = std::chrono::steady_clock::now();
      const auto r = hpbm::spgp::fitc_log_marginal_likelihood({p.x, p.y}, small.hyper, InducingSet{z});
      const auto t1 = std::chrono::steady_clock::now();
      EXPECT_TRUE(std::isfinite(r.value));
      best = std::min(best, std::chrono::duration<double>(t1 - t0).count());
    }
    return best;
  };
  const double ratio = best_time(large) / best_time(small);
  EXPECT_GE(ratio, 1.5);
  EXPECT_LE(ratio, 3.0);
}
