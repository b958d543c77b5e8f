#pragma once

// Exact Gaussian-process regression with a zero prior mean and the
// squared-exponential ARD kernel
//
//   k(x, x') = sf2 * exp(-1/2 * sum_j (x_j - x'_j)^2 / l_j^2)
//
// plus an additive observation-noise variance on the training diagonal.
// Hyperparameters are optimized in log space; the packed layout used by
// every gradient in this library is
//
//   [ log sf2, log l_1, ..., log l_d, log sn2 ].

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include <vector>

namespace hpbm::gp {

struct KernelHyperparams {
  double signal_variance = 1.0;
  Eigen::VectorXd lengthscales;
  double noise_variance = 1e-2;

  Eigen::Index dim() const { return lengthscales.size(); }

  /// Throws InvalidInput unless every entry is finite and strictly positive
  /// and there is one lengthscale per input dimension.
  void validate(Eigen::Index input_dim) const;

  Eigen::VectorXd to_log() const;
  static KernelHyperparams from_log(const Eigen::Ref<const Eigen::VectorXd>& packed);
};

struct Dataset {
  Eigen::MatrixXd inputs;   // n x d, one state per row
  Eigen::VectorXd targets;  // n

  Eigen::Index size() const { return inputs.rows(); }
  Eigen::Index dim() const { return inputs.cols(); }
  void validate() const;
};

/// Per-dimension affine map x -> (x - offset) / scale, fitted on training
/// inputs and stored with a model so callers always predict in raw units.
class InputScaling {
 public:
  InputScaling() = default;
  InputScaling(Eigen::VectorXd offset, Eigen::VectorXd scale);

  static InputScaling identity(Eigen::Index dim);
  /// Column mean and standard deviation; constant columns get scale 1.
  static InputScaling standardize(const Eigen::MatrixXd& inputs);

  Eigen::Index dim() const { return offset_.size(); }
  const Eigen::VectorXd& offset() const { return offset_; }
  const Eigen::VectorXd& scale() const { return scale_; }

  Eigen::VectorXd apply(const Eigen::Ref<const Eigen::VectorXd>& x) const;
  Eigen::MatrixXd apply_rows(const Eigen::MatrixXd& inputs) const;

 private:
  Eigen::VectorXd offset_;
  Eigen::VectorXd scale_;
};

struct Prediction {
  double mean = 0.0;
  double variance = 0.0;
};

double se_kernel(const Eigen::Ref<const Eigen::VectorXd>& x,
                 const Eigen::Ref<const Eigen::VectorXd>& x_prime, const KernelHyperparams& hyper);

/// Entry (i, j) is se_kernel(row i of a, row j of b).
Eigen::MatrixXd kernel_matrix(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                              const KernelHyperparams& hyper);

/// Cholesky factor of `matrix + jitter * I`. The first attempt uses no
/// jitter; on failure jitter climbs 1e-10, 1e-9, ..., 1e-4 times
/// `signal_variance`. Throws FitError listing every level tried.
struct JitteredCholesky {
  Eigen::LLT<Eigen::MatrixXd> llt;
  double jitter = 0.0;
};
JitteredCholesky factorize_with_jitter(const Eigen::MatrixXd& matrix, double signal_variance);

class ExactGpModel {
 public:
  const KernelHyperparams& hyperparams() const { return hyper_; }
  const InputScaling& scaling() const { return scaling_; }
  /// Training inputs after scaling.
  const Eigen::MatrixXd& training_inputs() const { return inputs_; }
  /// Lower-triangular L with L L^T = K + (noise + jitter) I.
  Eigen::MatrixXd factor() const { return llt_.matrixL(); }
  const Eigen::VectorXd& weights() const { return weights_; }
  double jitter() const { return jitter_; }
  Eigen::Index dim() const { return inputs_.cols(); }

  /// Posterior mean of the latent function at a raw-unit input.
  double mean(const Eigen::Ref<const Eigen::VectorXd>& x) const;
  Prediction predict(const Eigen::Ref<const Eigen::VectorXd>& x) const;

 private:
  friend ExactGpModel fit_exact(const Dataset&, const KernelHyperparams&, const InputScaling&);

  Eigen::VectorXd cross_covariance(const Eigen::Ref<const Eigen::VectorXd>& x) const;

  KernelHyperparams hyper_;
  InputScaling scaling_;
  Eigen::MatrixXd inputs_;
  Eigen::LLT<Eigen::MatrixXd> llt_;
  Eigen::VectorXd weights_;
  double jitter_ = 0.0;
};

/// Factorizes K + noise I on the scaled inputs and solves for the weights.
/// `scaling` defaults to the identity when left empty.
ExactGpModel fit_exact(const Dataset& data, const KernelHyperparams& hyper,
                       const InputScaling& scaling = {});

Prediction predict(const ExactGpModel& model, const Eigen::Ref<const Eigen::VectorXd>& x_star);

struct LmlResult {
  double value = 0.0;
  Eigen::VectorXd gradient;  // packed log-space layout
};

/// Exact log marginal likelihood and its analytic log-space gradient.
/// Inputs are used as given (no scaling).
LmlResult log_marginal_likelihood(const Dataset& data, const KernelHyperparams& hyper);

/// Clamp rule shared by every predictive variance: values in [-1e-10, 0)
/// become 0, anything lower throws std::domain_error.
double clamp_variance(double variance);

}  // namespace hpbm::gp
