#pragma once

// Sparse pseudo-input GP using the FITC approximation: the prior covariance
// of the training targets is replaced by
//
//   Q_nn + diag(K_nn - Q_nn) + sn2 I,   Q_nn = K_nm K_mm^-1 K_mn,
//
// so likelihood, gradient and fitting cost O(n m^2) and prediction O(m^2).
// Hyperparameters and pseudo-input locations are optimized jointly.

#include "hpbm/gp_core.hpp"

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include <cstdint>
#include <optional>
#include <vector>

namespace hpbm::spgp {

struct InducingSet {
  Eigen::MatrixXd pseudo_inputs;  // m x d

  Eigen::Index size() const { return pseudo_inputs.rows(); }
  Eigen::Index dim() const { return pseudo_inputs.cols(); }
};

struct FitcLmlResult {
  double value = 0.0;
  Eigen::VectorXd hyper_gradient;         // packed log-space layout of gp_core
  Eigen::MatrixXd pseudo_input_gradient;  // m x d, d value / d pseudo-input coordinate
};

/// FITC log marginal likelihood with gradients. Inputs and pseudo-inputs are
/// used as given (no scaling).
FitcLmlResult fitc_log_marginal_likelihood(const gp::Dataset& data, const gp::KernelHyperparams& hyper,
                                           const InducingSet& inducing);

struct SpgpFitOptions {
  std::uint64_t seed = 0;
  std::size_t max_iterations = 500;
  double relative_tolerance = 1e-9;
  bool standardize = true;
  bool optimize_pseudo_inputs = true;
  /// Starting hyperparameters in scaled units. When unset they come from the
  /// target variance, with log-lengthscales drawn uniformly in
  /// +-`lengthscale_spread` around 0 from the seed.
  std::optional<gp::KernelHyperparams> initial_hyper;
  double lengthscale_spread = 0.5;
  /// Lower bound on the noise variance as a fraction of the mean squared
  /// target. Without it the FITC likelihood grows without bound as a
  /// pseudo-input lands on a training point and the noise goes to zero.
  double noise_floor = 1e-3;
};

struct SpgpDiagnostics {
  std::size_t iterations = 0;
  std::size_t evaluations = 0;
  bool converged = false;
  double log_marginal_likelihood = 0.0;
  /// Pseudo-input pairs closer than 1e-12 after fitting.
  std::size_t near_duplicate_pairs = 0;
  std::vector<double> trace;  // negative LML at accepted iterates
};

class SpgpModel {
 public:
  const gp::KernelHyperparams& hyperparams() const { return hyper_; }
  /// Pseudo-inputs in scaled units.
  const InducingSet& inducing() const { return inducing_; }
  const gp::InputScaling& scaling() const { return scaling_; }
  /// Per-training-point K_nn - Q_nn, clamped at 0, before noise is added.
  const Eigen::VectorXd& fitc_diag() const { return fitc_diag_; }
  /// Vector w with posterior mean = k_m(x)^T w.
  const Eigen::VectorXd& weights() const { return weights_; }
  double jitter() const { return jitter_; }
  const SpgpDiagnostics& diagnostics() const { return diagnostics_; }
  Eigen::Index dim() const { return inducing_.dim(); }

  double mean(const Eigen::Ref<const Eigen::VectorXd>& x) const;
  gp::Prediction predict(const Eigen::Ref<const Eigen::VectorXd>& x) const;

 private:
  friend SpgpModel assemble_spgp(const gp::Dataset&, const gp::KernelHyperparams&, const InducingSet&,
                                 const gp::InputScaling&);
  friend SpgpModel fit_spgp(const gp::Dataset&, Eigen::Index, const SpgpFitOptions&);

  Eigen::VectorXd cross_covariance(const Eigen::Ref<const Eigen::VectorXd>& x) const;

  gp::KernelHyperparams hyper_;
  InducingSet inducing_;
  gp::InputScaling scaling_;
  Eigen::LLT<Eigen::MatrixXd> kmm_llt_;
  Eigen::LLT<Eigen::MatrixXd> system_llt_;  // I + V Lambda^-1 V^T, V = L_mm^-1 K_mn
  Eigen::VectorXd weights_;
  Eigen::VectorXd fitc_diag_;
  double jitter_ = 0.0;
  SpgpDiagnostics diagnostics_;
};

/// Predictive caches for fixed hyperparameters and pseudo-inputs. `inducing`
/// is in scaled units; raw data inputs are scaled with `scaling` (identity
/// when empty).
SpgpModel assemble_spgp(const gp::Dataset& data, const gp::KernelHyperparams& hyper,
                        const InducingSet& inducing, const gp::InputScaling& scaling = {});

/// Seeded random-subset initialization followed by BFGS ascent of the FITC
/// likelihood. Throws InvalidInput unless 1 <= m <= n and OptimizerError if
/// the objective is not finite at the start.
SpgpModel fit_spgp(const gp::Dataset& data, Eigen::Index m, const SpgpFitOptions& options = {});

gp::Prediction predict_spgp(const SpgpModel& model, const Eigen::Ref<const Eigen::VectorXd>& x_star);

}  // namespace hpbm::spgp
