#include "hpbm/gp_core.hpp"

#include "hpbm/error.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace hpbm::gp {

namespace {

using RowMajorMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

bool all_finite(const Eigen::Ref<const Eigen::MatrixXd>& m) { return m.allFinite(); }

}  // namespace

void KernelHyperparams::validate(Eigen::Index input_dim) const {
  if (!(std::isfinite(signal_variance) && signal_variance > 0.0)) {
    throw InvalidInput("signal variance must be finite and positive");
  }
  if (!(std::isfinite(noise_variance) && noise_variance > 0.0)) {
    throw InvalidInput("noise variance must be finite and positive");
  }
  if (lengthscales.size() != input_dim) {
    throw InvalidInput("expected " + std::to_string(input_dim) + " lengthscales, got " +
                       std::to_string(lengthscales.size()));
  }
  for (Eigen::Index j = 0; j < lengthscales.size(); ++j) {
    if (!(std::isfinite(lengthscales[j]) && lengthscales[j] > 0.0)) {
      throw InvalidInput("lengthscale " + std::to_string(j) + " must be finite and positive");
    }
  }
}

Eigen::VectorXd KernelHyperparams::to_log() const {
  const Eigen::Index d = dim();
  Eigen::VectorXd packed(d + 2);
  packed[0] = std::log(signal_variance);
  packed.segment(1, d) = lengthscales.array().log().matrix();
  packed[d + 1] = std::log(noise_variance);
  return packed;
}

KernelHyperparams KernelHyperparams::from_log(const Eigen::Ref<const Eigen::VectorXd>& packed) {
  if (packed.size() < 3) throw InvalidInput("packed hyperparameters need at least 3 entries");
  const Eigen::Index d = packed.size() - 2;
  KernelHyperparams h;
  h.signal_variance = std::exp(packed[0]);
  h.lengthscales = packed.segment(1, d).array().exp().matrix();
  h.noise_variance = std::exp(packed[d + 1]);
  return h;
}

void Dataset::validate() const {
  if (inputs.rows() < 1 || inputs.cols() < 1) throw InvalidInput("dataset needs n >= 1 and d >= 1");
  if (inputs.rows() != targets.size()) {
    throw InvalidInput("input rows (" + std::to_string(inputs.rows()) + ") != targets (" +
                       std::to_string(targets.size()) + ")");
  }
  if (!all_finite(inputs) || !targets.allFinite()) throw InvalidInput("dataset has non-finite entries");
}

InputScaling::InputScaling(Eigen::VectorXd offset, Eigen::VectorXd scale)
    : offset_(std::move(offset)), scale_(std::move(scale)) {
  if (offset_.size() != scale_.size()) throw InvalidInput("scaling offset/scale size mismatch");
  if (!(scale_.array() > 0.0).all() || !scale_.allFinite() || !offset_.allFinite()) {
    throw InvalidInput("scaling must be finite with positive scale");
  }
}

InputScaling InputScaling::identity(Eigen::Index dim) {
  return InputScaling(Eigen::VectorXd::Zero(dim), Eigen::VectorXd::Ones(dim));
}

InputScaling InputScaling::standardize(const Eigen::MatrixXd& inputs) {
  const Eigen::Index n = inputs.rows();
  const Eigen::Index d = inputs.cols();
  if (n < 1) throw InvalidInput("cannot standardize an empty input matrix");
  Eigen::VectorXd mean = inputs.colwise().mean().transpose();
  Eigen::VectorXd scale(d);
  for (Eigen::Index j = 0; j < d; ++j) {
    const double var = (inputs.col(j).array() - mean[j]).square().sum() / static_cast<double>(n);
    const double sd = std::sqrt(var);
    scale[j] = (sd > 1e-12 * std::max(1.0, std::abs(mean[j]))) ? sd : 1.0;
  }
  return InputScaling(std::move(mean), std::move(scale));
}

Eigen::VectorXd InputScaling::apply(const Eigen::Ref<const Eigen::VectorXd>& x) const {
  if (x.size() != dim()) throw InvalidInput("scaling dimension mismatch");
  return ((x - offset_).array() / scale_.array()).matrix();
}

Eigen::MatrixXd InputScaling::apply_rows(const Eigen::MatrixXd& inputs) const {
  if (inputs.cols() != dim()) throw InvalidInput("scaling dimension mismatch");
  return ((inputs.rowwise() - offset_.transpose()).array().rowwise() / scale_.transpose().array())
      .matrix();
}

double se_kernel(const Eigen::Ref<const Eigen::VectorXd>& x,
                 const Eigen::Ref<const Eigen::VectorXd>& x_prime, const KernelHyperparams& hyper) {
  if (x.size() != hyper.dim() || x_prime.size() != hyper.dim()) {
    throw InvalidInput("se_kernel: input dimension does not match lengthscales");
  }
  double r2 = 0.0;
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    const double diff = x[j] - x_prime[j];
    r2 += diff * diff / (hyper.lengthscales[j] * hyper.lengthscales[j]);
  }
  return hyper.signal_variance * std::exp(-0.5 * r2);
}

Eigen::MatrixXd kernel_matrix(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b,
                              const KernelHyperparams& hyper) {
  const Eigen::Index d = hyper.dim();
  if (a.cols() != d || b.cols() != d) throw InvalidInput("kernel_matrix: dimension mismatch");
  const RowMajorMatrix ar = a;
  const RowMajorMatrix br = b;
  Eigen::VectorXd l2(d);
  for (Eigen::Index j = 0; j < d; ++j) l2[j] = hyper.lengthscales[j] * hyper.lengthscales[j];

  Eigen::MatrixXd k(a.rows(), b.rows());
  for (Eigen::Index c = 0; c < b.rows(); ++c) {
    const double* bc = br.row(c).data();
    for (Eigen::Index r = 0; r < a.rows(); ++r) {
      const double* arow = ar.row(r).data();
      double r2 = 0.0;
      for (Eigen::Index j = 0; j < d; ++j) {
        const double diff = arow[j] - bc[j];
        r2 += diff * diff / l2[j];
      }
      k(r, c) = hyper.signal_variance * std::exp(-0.5 * r2);
    }
  }
  return k;
}

JitteredCholesky factorize_with_jitter(const Eigen::MatrixXd& matrix, double signal_variance) {
  JitteredCholesky out;
  std::vector<double> tried;
  const Eigen::Index n = matrix.rows();
  for (int level = 0;; ++level) {
    // level 0: no jitter; level k >= 1: 10^(k-11) * sf2, i.e. 1e-10 .. 1e-4.
    const double jitter = level == 0 ? 0.0 : std::pow(10.0, level - 11) * signal_variance;
    if (level > 7) {
      throw FitError("kernel matrix is not positive definite after jitter up to 1e-4 * sf2",
                     std::move(tried));
    }
    tried.push_back(jitter);
    if (jitter == 0.0) {
      out.llt.compute(matrix);
    } else {
      out.llt.compute(matrix + jitter * Eigen::MatrixXd::Identity(n, n));
    }
    if (out.llt.info() == Eigen::Success) {
      const Eigen::MatrixXd& lm = out.llt.matrixLLT();
      const auto diag = lm.diagonal();
      if (diag.allFinite() && (diag.array() > 0.0).all()) {
        out.jitter = jitter;
        return out;
      }
    }
  }
}

double clamp_variance(double variance) {
  if (variance >= 0.0) return variance;
  if (variance >= -1e-10) return 0.0;
  throw std::domain_error("predictive variance " + std::to_string(variance) +
                          " is negative beyond round-off");
}

ExactGpModel fit_exact(const Dataset& data, const KernelHyperparams& hyper,
                       const InputScaling& scaling) {
  data.validate();
  hyper.validate(data.dim());
  ExactGpModel model;
  model.hyper_ = hyper;
  model.scaling_ = scaling.dim() == 0 ? InputScaling::identity(data.dim()) : scaling;
  if (model.scaling_.dim() != data.dim()) throw InvalidInput("scaling dimension mismatch");
  model.inputs_ = model.scaling_.apply_rows(data.inputs);

  Eigen::MatrixXd k = kernel_matrix(model.inputs_, model.inputs_, hyper);
  k.diagonal().array() += hyper.noise_variance;
  auto chol = factorize_with_jitter(k, hyper.signal_variance);
  model.llt_ = std::move(chol.llt);
  model.jitter_ = chol.jitter;
  model.weights_ = model.llt_.solve(data.targets);
  return model;
}

Eigen::VectorXd ExactGpModel::cross_covariance(const Eigen::Ref<const Eigen::VectorXd>& x) const {
  if (x.size() != dim()) throw InvalidInput("predict: input dimension does not match model");
  const Eigen::VectorXd xs = scaling_.apply(x);
  Eigen::VectorXd ks(inputs_.rows());
  for (Eigen::Index i = 0; i < inputs_.rows(); ++i) {
    double r2 = 0.0;
    for (Eigen::Index j = 0; j < xs.size(); ++j) {
      const double diff = inputs_(i, j) - xs[j];
      r2 += diff * diff / (hyper_.lengthscales[j] * hyper_.lengthscales[j]);
    }
    ks[i] = hyper_.signal_variance * std::exp(-0.5 * r2);
  }
  return ks;
}

double ExactGpModel::mean(const Eigen::Ref<const Eigen::VectorXd>& x) const {
  return cross_covariance(x).dot(weights_);
}

Prediction ExactGpModel::predict(const Eigen::Ref<const Eigen::VectorXd>& x) const {
  const Eigen::VectorXd ks = cross_covariance(x);
  const Eigen::VectorXd v = llt_.matrixL().solve(ks);
  return {ks.dot(weights_), clamp_variance(hyper_.signal_variance - v.squaredNorm())};
}

Prediction predict(const ExactGpModel& model, const Eigen::Ref<const Eigen::VectorXd>& x_star) {
  return model.predict(x_star);
}

LmlResult log_marginal_likelihood(const Dataset& data, const KernelHyperparams& hyper) {
  data.validate();
  hyper.validate(data.dim());
  const Eigen::Index n = data.size();
  const Eigen::Index d = data.dim();

  const Eigen::MatrixXd kf = kernel_matrix(data.inputs, data.inputs, hyper);
  Eigen::MatrixXd k = kf;
  k.diagonal().array() += hyper.noise_variance;
  const auto chol = factorize_with_jitter(k, hyper.signal_variance);
  const Eigen::VectorXd alpha = chol.llt.solve(data.targets);
  const Eigen::MatrixXd& lm = chol.llt.matrixLLT();

  LmlResult out;
  out.value = -0.5 * data.targets.dot(alpha) - lm.diagonal().array().log().sum() -
              0.5 * static_cast<double>(n) * std::log(2.0 * std::numbers::pi);

  // dL/dp = 1/2 tr((alpha alpha^T - K^-1) dK/dp)
  Eigen::MatrixXd w = chol.llt.solve(Eigen::MatrixXd::Identity(n, n));
  w = alpha * alpha.transpose() - w;

  out.gradient.resize(d + 2);
  out.gradient[0] = 0.5 * (w.array() * kf.array()).sum();
  for (Eigen::Index j = 0; j < d; ++j) {
    const double l2 = hyper.lengthscales[j] * hyper.lengthscales[j];
    double acc = 0.0;
    for (Eigen::Index c = 0; c < n; ++c) {
      for (Eigen::Index r = 0; r < n; ++r) {
        const double diff = data.inputs(r, j) - data.inputs(c, j);
        acc += w(r, c) * kf(r, c) * diff * diff / l2;
      }
    }
    out.gradient[1 + j] = 0.5 * acc;
  }
  out.gradient[d + 1] = 0.5 * hyper.noise_variance * w.trace();
  return out;
}

}  // namespace hpbm::gp
