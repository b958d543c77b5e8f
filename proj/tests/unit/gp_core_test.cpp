#include "hpbm/error.hpp"
#include "hpbm/gp_core.hpp"
#include "oracles.hpp"

#include <Eigen/Eigenvalues>
#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

using hpbm::gp::Dataset;
using hpbm::gp::KernelHyperparams;

namespace {

KernelHyperparams hyper1d(double sf2, double l2, double sn2) {
  KernelHyperparams h;
  h.signal_variance = sf2;
  h.lengthscales = Eigen::VectorXd::Constant(1, std::sqrt(l2));
  h.noise_variance = sn2;
  return h;
}

Eigen::VectorXd vec(std::initializer_list<double> v) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

}  // namespace

TEST(SeKernel, ZeroDistanceGivesSignalVariance) {
  KernelHyperparams h = hyper1d(2.0, 1.0, 0.1);
  h.lengthscales = vec({0.3, 4.0});
  EXPECT_EQ(hpbm::gp::se_kernel(vec({1.5, -2.0}), vec({1.5, -2.0}), h), 2.0);
}

TEST(SeKernel, UnitDistanceScalar) {
  const KernelHyperparams h = hyper1d(1.0, 1.0, 0.1);
  const double expected = std::exp(-0.5);
  EXPECT_NEAR(hpbm::gp::se_kernel(vec({0.0}), vec({1.0}), h), expected, 1e-15);
  EXPECT_NEAR(expected, 0.60653, 5e-6);
}

TEST(SeKernel, DecaysWithDistance) {
  const KernelHyperparams h = hyper1d(1.0, 1.0, 0.1);
  EXPECT_LT(hpbm::gp::se_kernel(vec({0.0}), vec({40.0}), h), 1e-300);
  EXPECT_GT(hpbm::gp::se_kernel(vec({0.0}), vec({1.0}), h), hpbm::gp::se_kernel(vec({0.0}), vec({2.0}), h));
}

TEST(SeKernel, RejectsDimensionMismatch) {
  const KernelHyperparams h = hyper1d(1.0, 1.0, 0.1);
  EXPECT_THROW(hpbm::gp::se_kernel(vec({0.0, 1.0}), vec({1.0, 2.0}), h), hpbm::InvalidInput);
  EXPECT_THROW(hpbm::gp::se_kernel(vec({0.0}), vec({1.0, 2.0}), h), hpbm::InvalidInput);
}

TEST(SeKernel, SymmetricAndBounded) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    const auto p = oracle::random_problem(rng, 2, 4);
    const Eigen::VectorXd a = p.x.row(0).transpose();
    const Eigen::VectorXd b = p.x.row(1).transpose();
    const double ab = hpbm::gp::se_kernel(a, b, p.hyper);
    EXPECT_EQ(ab, hpbm::gp::se_kernel(b, a, p.hyper));
    EXPECT_GT(ab, 0.0);
    EXPECT_LT(ab, p.hyper.signal_variance);
  }
}

TEST(KernelMatrix, SingleRow) {
  const KernelHyperparams h = hyper1d(3.0, 1.0, 0.1);
  const Eigen::MatrixXd a = Eigen::MatrixXd::Constant(1, 1, 0.7);
  const Eigen::MatrixXd k = hpbm::gp::kernel_matrix(a, a, h);
  ASSERT_EQ(k.rows(), 1);
  EXPECT_EQ(k(0, 0), 3.0);
}

TEST(KernelMatrix, TwoPointsScalarOracle) {
  const KernelHyperparams h = hyper1d(1.0, 1.0, 0.1);
  Eigen::MatrixXd a(2, 1);
  a << 0.0, 1.0;
  const Eigen::MatrixXd k = hpbm::gp::kernel_matrix(a, a, h);
  EXPECT_EQ(k(0, 0), 1.0);
  EXPECT_EQ(k(1, 1), 1.0);
  EXPECT_NEAR(k(0, 1), std::exp(-0.5), 1e-15);
  EXPECT_EQ(k(0, 1), k(1, 0));
}

TEST(KernelMatrix, MatchesScalarLoopAndIsPsd) {
  std::mt19937_64 rng(12);
  for (int trial = 0; trial < 10; ++trial) {
    const auto p = oracle::random_problem(rng, 50, 3);
    const Eigen::MatrixXd k = hpbm::gp::kernel_matrix(p.x, p.x, p.hyper);
    EXPECT_LE((k - oracle::gram(p.x, p.x, p.hyper)).cwiseAbs().maxCoeff(), 1e-14);
    EXPECT_EQ((k - k.transpose()).cwiseAbs().maxCoeff(), 0.0);
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(k, Eigen::EigenvaluesOnly);
    EXPECT_GE(eig.eigenvalues().minCoeff(), -1e-10 * p.hyper.signal_variance * 50);
  }
}

TEST(KernelMatrix, RejectsDimensionMismatch) {
  const KernelHyperparams h = hyper1d(1.0, 1.0, 0.1);
  EXPECT_THROW(hpbm::gp::kernel_matrix(Eigen::MatrixXd::Zero(2, 1), Eigen::MatrixXd::Zero(2, 2), h), hpbm::InvalidInput);
}

TEST(FitExact, SinglePointWeight) {
  const KernelHyperparams h = hyper1d(2.0, 1.0, 0.5);
  const Dataset d{Eigen::MatrixXd::Constant(1, 1, 0.3), vec({1.25})};
  const auto model = hpbm::gp::fit_exact(d, h);
  ASSERT_EQ(model.weights().size(), 1);
  EXPECT_NEAR(model.weights()[0], 1.25 / 2.5, 1e-15);
  const auto pred = hpbm::gp::predict(model, vec({0.3}));
  EXPECT_NEAR(pred.mean, 2.0 * 1.25 / 2.5, 1e-15);
}

TEST(FitExact, SolvesLinearSystemAndFactorReproducesMatrix) {
  std::mt19937_64 rng(13);
  for (int trial = 0; trial < 5; ++trial) {
    const auto p = oracle::random_problem(rng, 80, 4);
    const auto model = hpbm::gp::fit_exact({p.x, p.y}, p.hyper);
    Eigen::MatrixXd c = oracle::gram(p.x, p.x, p.hyper);
    c.diagonal().array() += p.hyper.noise_variance;
    EXPECT_LE((c * model.weights() - p.y).norm() / p.y.norm(), 1e-8);
    const Eigen::MatrixXd l = model.factor();
    EXPECT_TRUE((l.diagonal().array() > 0.0).all());
    EXPECT_LE((l * l.transpose() - c).norm() / c.norm(), 1e-10);
    // K alpha equals the targets less the noise share.
    const Eigen::VectorXd smoothed = oracle::gram(p.x, p.x, p.hyper) * model.weights();
    EXPECT_LE((smoothed - (p.y - p.hyper.noise_variance * model.weights())).norm(), 1e-8 * p.y.norm());
  }
}

TEST(FitExact, DuplicateRowsWithNoise) {
  const KernelHyperparams h = hyper1d(1.0, 1.0, 0.01);
  Eigen::MatrixXd x(3, 1);
  x << 0.5, 0.5, 0.5;
  const auto model = hpbm::gp::fit_exact({x, vec({1.0, -1.0, 0.5})}, h);
  EXPECT_TRUE(model.weights().allFinite());
  EXPECT_EQ(model.jitter(), 0.0);
}

TEST(FitExact, RejectsInvalidData) {
  const KernelHyperparams h = hyper1d(1.0, 1.0, 0.01);
  EXPECT_THROW(hpbm::gp::fit_exact({Eigen::MatrixXd::Zero(2, 1), vec({1.0})}, h), hpbm::InvalidInput);
  EXPECT_THROW(hpbm::gp::fit_exact({Eigen::MatrixXd::Constant(1, 1, NAN), vec({1.0})}, h), hpbm::InvalidInput);
  KernelHyperparams bad = h;
  bad.noise_variance = -1.0;
  EXPECT_THROW(hpbm::gp::fit_exact({Eigen::MatrixXd::Zero(1, 1), vec({1.0})}, bad), hpbm::InvalidInput);
}

TEST(Jitter, LadderIsReportedOnFailure) {
  const Eigen::MatrixXd negative = -Eigen::MatrixXd::Identity(3, 3);
  try {
    hpbm::gp::factorize_with_jitter(negative, 1.0);
    FAIL() << "expected FitError";
  } catch (const hpbm::FitError& e) {
    const auto& tried = e.attempted_jitter();
    ASSERT_FALSE(tried.empty());
    EXPECT_NEAR(tried.back(), 1e-4, 1e-18);
    for (std::size_t i = 1; i < tried.size(); ++i) EXPECT_GT(tried[i], tried[i - 1]);
  }
}

TEST(Jitter, RescuesSingularMatrix) {
  Eigen::MatrixXd ones = Eigen::MatrixXd::Ones(4, 4);
  const auto f = hpbm::gp::factorize_with_jitter(ones, 1.0);
  EXPECT_GT(f.jitter, 0.0);
  EXPECT_LE(f.jitter, 1e-4);
}

TEST(Predict, MatchesDenseInverse) {
  std::mt19937_64 rng(14);
  for (int trial = 0; trial < 20; ++trial) {
    const Eigen::Index n = 20 + 9 * trial;
    const Eigen::Index d = 1 + trial % 8;
    const auto p = oracle::random_problem(rng, n, d);
    const auto model = hpbm::gp::fit_exact({p.x, p.y}, p.hyper);
    const auto probe = oracle::random_problem(rng, 5, d);
    for (Eigen::Index i = 0; i < probe.x.rows(); ++i) {
      const Eigen::VectorXd xs = probe.x.row(i).transpose();
      const auto got = hpbm::gp::predict(model, xs);
      const auto want = oracle::exact_predict(p.x, p.y, p.hyper, xs);
      EXPECT_NEAR(got.mean, want.mean, 1e-8 * std::max(1.0, std::abs(want.mean)));
      EXPECT_NEAR(got.variance, want.variance, 1e-8 * p.hyper.signal_variance);
      EXPECT_GE(got.variance, 0.0);
      EXPECT_LE(got.variance, p.hyper.signal_variance + 1e-10);
    }
  }
}

TEST(Predict, RevertsToZeroFarFromData) {
  std::mt19937_64 rng(15);
  const auto p = oracle::random_problem(rng, 60, 3);
  const auto model = hpbm::gp::fit_exact({p.x, p.y}, p.hyper);
  const double reach = 20.0 * p.hyper.lengthscales.maxCoeff();
  Eigen::VectorXd far = Eigen::VectorXd::Constant(3, 2.0 + reach);
  const auto pred = hpbm::gp::predict(model, far);
  const double bound = p.hyper.signal_variance * std::exp(-200.0) * model.weights().cwiseAbs().sum();
  EXPECT_LE(std::abs(pred.mean), bound);
  EXPECT_LE(std::abs(pred.mean), 1e-80 * p.hyper.signal_variance * model.weights().cwiseAbs().sum());
  EXPECT_NEAR(pred.variance, p.hyper.signal_variance, 1e-12);
}

TEST(Predict, ScalingIsAppliedInsideModel) {
  std::mt19937_64 rng(16);
  auto p = oracle::random_problem(rng, 30, 2);
  p.x.col(1) *= 1000.0;
  const auto scaling = hpbm::gp::InputScaling::standardize(p.x);
  const auto model = hpbm::gp::fit_exact({p.x, p.y}, p.hyper, scaling);
  const Eigen::MatrixXd scaled = scaling.apply_rows(p.x);
  const Eigen::VectorXd raw = p.x.row(3).transpose();
  const auto want = oracle::exact_predict(scaled, p.y, p.hyper, scaled.row(3).transpose());
  EXPECT_NEAR(hpbm::gp::predict(model, raw).mean, want.mean, 1e-9);
}

TEST(Predict, RejectsDimensionMismatch) {
  const KernelHyperparams h = hyper1d(1.0, 1.0, 0.1);
  const auto model = hpbm::gp::fit_exact({Eigen::MatrixXd::Zero(1, 1), vec({1.0})}, h);
  EXPECT_THROW(hpbm::gp::predict(model, vec({1.0, 2.0})), hpbm::InvalidInput);
}

TEST(ClampVariance, RoundOffVersusBug) {
  EXPECT_EQ(hpbm::gp::clamp_variance(-5e-11), 0.0);
  EXPECT_EQ(hpbm::gp::clamp_variance(0.25), 0.25);
  EXPECT_THROW(hpbm::gp::clamp_variance(-1e-9), std::domain_error);
}

TEST(LogMarginalLikelihood, SinglePointZeroTarget) {
  const KernelHyperparams h = hyper1d(1.5, 1.0, 0.5);
  const auto r = hpbm::gp::log_marginal_likelihood({Eigen::MatrixXd::Zero(1, 1), vec({0.0})}, h);
  EXPECT_NEAR(r.value, -0.5 * std::log(2.0) - 0.5 * std::log(2.0 * std::numbers::pi), 1e-14);
  ASSERT_EQ(r.gradient.size(), 3);
  EXPECT_NEAR(r.gradient[2], -0.5 / (2.0 * 2.0), 1e-14);
  EXPECT_NEAR(r.gradient[0], -1.5 / (2.0 * 2.0), 1e-14);
  EXPECT_NEAR(r.gradient[1], 0.0, 1e-14);
}

TEST(LogMarginalLikelihood, MatchesDenseDensity) {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 5; ++trial) {
    const auto p = oracle::random_problem(rng, 40, 3);
    const auto r = hpbm::gp::log_marginal_likelihood({p.x, p.y}, p.hyper);
    EXPECT_NEAR(r.value, oracle::exact_lml(p.x, p.y, p.hyper), 1e-8 * std::abs(r.value));
  }
}

TEST(LogMarginalLikelihood, GradientMatchesFiniteDifferences) {
  std::mt19937_64 rng(18);
  for (int trial = 0; trial < 20; ++trial) {
    const auto p = oracle::random_problem(rng, 15 + 3 * trial, 1 + trial % 5);
    const Dataset data{p.x, p.y};
    const auto r = hpbm::gp::log_marginal_likelihood(data, p.hyper);
    const auto f = [&](const Eigen::VectorXd& packed) {
      return hpbm::gp::log_marginal_likelihood(data, KernelHyperparams::from_log(packed)).value;
    };
    const Eigen::VectorXd fd = oracle::central_difference(f, p.hyper.to_log(), 1e-5);
    EXPECT_LE(oracle::max_relative_error(r.gradient, fd, 1e-3), 1e-4) << "trial " << trial;
  }
}

TEST(LogMarginalLikelihood, ZeroTargetsRemoveDataFit) {
  std::mt19937_64 rng(19);
  const auto p = oracle::random_problem(rng, 25, 2);
  const Eigen::VectorXd zeros = Eigen::VectorXd::Zero(25);
  const auto r = hpbm::gp::log_marginal_likelihood({p.x, zeros}, p.hyper);
  Eigen::MatrixXd c = oracle::gram(p.x, p.x, p.hyper);
  c.diagonal().array() += p.hyper.noise_variance;
  EXPECT_NEAR(r.value, -0.5 * oracle::log_det(c) - 12.5 * std::log(2.0 * std::numbers::pi), 1e-9);
}

TEST(Hyperparams, LogRoundTrip) {
  KernelHyperparams h = hyper1d(0.7, 2.0, 0.03);
  h.lengthscales = vec({0.5, 3.0});
  const auto back = KernelHyperparams::from_log(h.to_log());
  EXPECT_NEAR(back.signal_variance, 0.7, 1e-15);
  EXPECT_NEAR(back.noise_variance, 0.03, 1e-16);
  EXPECT_NEAR(back.lengthscales[1], 3.0, 1e-14);
}
