#include "hpbm/spgp.hpp"

#include "hpbm/error.hpp"
#include "hpbm/optimize.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>
#include <string>

namespace hpbm::spgp {

namespace {

// Factorizations shared by the likelihood, its gradient and the predictor.
struct FitcSystem {
  Eigen::MatrixXd kmm;  // with jitter on the diagonal
  Eigen::LLT<Eigen::MatrixXd> kmm_llt;
  double jitter = 0.0;
  Eigen::MatrixXd kmn;        // m x n
  Eigen::MatrixXd v;          // L_mm^-1 K_mn
  Eigen::VectorXd fitc_diag;  // max(sf2 - q_i, 0)
  Eigen::VectorXd lambda;     // fitc_diag + sn2
  Eigen::MatrixXd p;          // V Lambda^-1
  Eigen::LLT<Eigen::MatrixXd> system_llt;
  Eigen::VectorXd c;     // Abar^-1 V Lambda^-1 y
  Eigen::VectorXd beta;  // C^-1 y
};

void check_shapes(const gp::Dataset& data, const gp::KernelHyperparams& hyper, const InducingSet& inducing) {
  data.validate();
  hyper.validate(data.dim());
  if (inducing.dim() != data.dim()) throw InvalidInput("pseudo-input dimension does not match data");
  if (inducing.size() < 1 || inducing.size() > data.size()) {
    throw InvalidInput("need 1 <= m <= n pseudo-inputs, got m = " + std::to_string(inducing.size()) +
                       ", n = " + std::to_string(data.size()));
  }
  if (!inducing.pseudo_inputs.allFinite()) throw InvalidInput("pseudo-inputs must be finite");
}

FitcSystem build_system(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const gp::KernelHyperparams& hyper,
                        const Eigen::MatrixXd& z) {
  const Eigen::Index m = z.rows();
  FitcSystem s;
  s.kmm = gp::kernel_matrix(z, z, hyper);
  auto chol = gp::factorize_with_jitter(s.kmm, hyper.signal_variance);
  s.kmm_llt = std::move(chol.llt);
  s.jitter = chol.jitter;
  s.kmm.diagonal().array() += s.jitter;

  s.kmn = gp::kernel_matrix(z, x, hyper);
  s.v = s.kmm_llt.matrixL().solve(s.kmn);
  const Eigen::VectorXd q = s.v.colwise().squaredNorm().transpose();
  s.fitc_diag = (hyper.signal_variance - q.array()).max(0.0).matrix();
  s.lambda = (s.fitc_diag.array() + hyper.noise_variance).matrix();

  s.p = s.v * s.lambda.cwiseInverse().asDiagonal();
  Eigen::MatrixXd abar = Eigen::MatrixXd::Identity(m, m);
  abar.noalias() += s.p * s.v.transpose();
  s.system_llt.compute(abar);
  if (s.system_llt.info() != Eigen::Success) {
    throw FitError("FITC inner system is not positive definite");
  }
  s.c = s.system_llt.solve(s.p * y);
  s.beta = ((y - s.v.transpose() * s.c).array() / s.lambda.array()).matrix();
  return s;
}

double log_det_half(const Eigen::LLT<Eigen::MatrixXd>& llt) {
  const Eigen::MatrixXd& lm = llt.matrixLLT();
  return lm.diagonal().array().log().sum();
}

FitcLmlResult evaluate(const Eigen::MatrixXd& x, const Eigen::VectorXd& y, const gp::KernelHyperparams& hyper,
                       const Eigen::MatrixXd& z, bool with_gradient) {
  const Eigen::Index n = x.rows();
  const Eigen::Index d = x.cols();
  const FitcSystem s = build_system(x, y, hyper, z);

  FitcLmlResult out;
  out.value = -0.5 * y.dot(s.beta) - log_det_half(s.system_llt) - 0.5 * s.lambda.array().log().sum() -
              0.5 * static_cast<double>(n) * std::log(2.0 * std::numbers::pi);
  if (!with_gradient) return out;

  // dL = 1/2 [ 2 tr(M1 dK_nm) - tr(M2 dK_mm) + sum_i w_i (dK_ii + dsn2) ]
  // with W = beta beta^T - C^-1, w = diag(W), B = K_mm^-1 K_mn,
  // M1 = B (W - diag w), M2 = M1 B^T.
  const Eigen::MatrixXd u = s.system_llt.matrixL().solve(s.v);
  const Eigen::VectorXd diag_cinv =
      (s.lambda.cwiseInverse().array() -
       u.colwise().squaredNorm().transpose().array() / s.lambda.array().square())
          .matrix();
  const Eigen::VectorXd w = (s.beta.array().square() - diag_cinv.array()).matrix();

  const Eigen::MatrixXd b = s.kmm_llt.matrixU().solve(s.v);
  const Eigen::MatrixXd b_cinv = s.kmm_llt.matrixU().solve(s.system_llt.solve(s.p));
  const Eigen::VectorXd b_beta = b * s.beta;

  Eigen::MatrixXd m1 = b_beta * s.beta.transpose();
  m1 -= b_cinv;
  m1 -= b * w.asDiagonal();
  Eigen::MatrixXd m2 = m1 * b.transpose();
  m2 = 0.5 * (m2 + m2.transpose()).eval();

  const Eigen::MatrixXd e = (m1.array() * s.kmn.array()).matrix();  // m x n
  const Eigen::MatrixXd f = (m2.array() * s.kmm.array()).matrix();  // m x m
  const Eigen::VectorXd e_rows = e.rowwise().sum();
  const Eigen::VectorXd f_rows = f.rowwise().sum();
  const Eigen::VectorXd e_cols = e.colwise().sum().transpose();
  const double w_sum = w.sum();

  out.hyper_gradient.resize(d + 2);
  out.hyper_gradient[0] = 0.5 * (2.0 * e.sum() - f.sum() + hyper.signal_variance * w_sum);

  const Eigen::MatrixXd ex = e * x;  // m x d
  const Eigen::MatrixXd fz = f * z;  // m x d
  out.pseudo_input_gradient.resize(z.rows(), d);
  for (Eigen::Index j = 0; j < d; ++j) {
    const double l2 = hyper.lengthscales[j] * hyper.lengthscales[j];
    const auto zj = z.col(j).array();
    const auto xj = x.col(j).array();
    // sum_{k,i} E_ki (z_kj - x_ij)^2
    const double e_term = (e_rows.array() * zj.square()).sum() - 2.0 * (zj * ex.col(j).array()).sum() +
                          (e_cols.array() * xj.square()).sum();
    // sum_{k,l} F_kl (z_kj - z_lj)^2
    const double f_term = 2.0 * (f_rows.array() * zj.square()).sum() - 2.0 * (zj * fz.col(j).array()).sum();
    out.hyper_gradient[1 + j] = 0.5 * (2.0 * e_term - f_term) / l2;

    out.pseudo_input_gradient.col(j) =
        ((ex.col(j).array() - zj * e_rows.array()) - (fz.col(j).array() - zj * f_rows.array())).matrix() / l2;
  }
  out.hyper_gradient[d + 1] = 0.5 * hyper.noise_variance * w_sum;
  return out;
}

std::size_t count_near_duplicates(const Eigen::MatrixXd& z) {
  std::size_t count = 0;
  for (Eigen::Index a = 0; a < z.rows(); ++a) {
    for (Eigen::Index b = a + 1; b < z.rows(); ++b) {
      if ((z.row(a) - z.row(b)).norm() < 1e-12) ++count;
    }
  }
  return count;
}

Eigen::VectorXd pack(const gp::KernelHyperparams& hyper, const Eigen::MatrixXd& z) {
  const Eigen::VectorXd h = hyper.to_log();
  Eigen::VectorXd out(h.size() + z.size());
  out.head(h.size()) = h;
  Eigen::Index k = h.size();
  for (Eigen::Index r = 0; r < z.rows(); ++r) {
    for (Eigen::Index c = 0; c < z.cols(); ++c) out[k++] = z(r, c);
  }
  return out;
}

void unpack(const Eigen::VectorXd& packed, Eigen::Index d, gp::KernelHyperparams& hyper, Eigen::MatrixXd& z) {
  hyper = gp::KernelHyperparams::from_log(packed.head(d + 2));
  Eigen::Index k = d + 2;
  for (Eigen::Index r = 0; r < z.rows(); ++r) {
    for (Eigen::Index c = 0; c < z.cols(); ++c) z(r, c) = packed[k++];
  }
}

}  // namespace

FitcLmlResult fitc_log_marginal_likelihood(const gp::Dataset& data, const gp::KernelHyperparams& hyper,
                                           const InducingSet& inducing) {
  check_shapes(data, hyper, inducing);
  return evaluate(data.inputs, data.targets, hyper, inducing.pseudo_inputs, true);
}

SpgpModel assemble_spgp(const gp::Dataset& data, const gp::KernelHyperparams& hyper,
                        const InducingSet& inducing, const gp::InputScaling& scaling) {
  check_shapes(data, hyper, inducing);
  SpgpModel model;
  model.hyper_ = hyper;
  model.inducing_ = inducing;
  model.scaling_ = scaling.dim() == 0 ? gp::InputScaling::identity(data.dim()) : scaling;
  if (model.scaling_.dim() != data.dim()) throw InvalidInput("scaling dimension mismatch");

  const Eigen::MatrixXd x = model.scaling_.apply_rows(data.inputs);
  FitcSystem s = build_system(x, data.targets, hyper, inducing.pseudo_inputs);
  model.weights_ = s.kmm_llt.matrixU().solve(s.c);
  model.kmm_llt_ = std::move(s.kmm_llt);
  model.system_llt_ = std::move(s.system_llt);
  model.fitc_diag_ = std::move(s.fitc_diag);
  model.jitter_ = s.jitter;
  model.diagnostics_.near_duplicate_pairs = count_near_duplicates(inducing.pseudo_inputs);
  return model;
}

SpgpModel fit_spgp(const gp::Dataset& data, Eigen::Index m, const SpgpFitOptions& options) {
  data.validate();
  const Eigen::Index n = data.size();
  const Eigen::Index d = data.dim();
  if (m < 1 || m > n) {
    throw InvalidInput("need 1 <= m <= n pseudo-inputs, got m = " + std::to_string(m) +
                       ", n = " + std::to_string(n));
  }

  const gp::InputScaling scaling =
      options.standardize ? gp::InputScaling::standardize(data.inputs) : gp::InputScaling::identity(d);
  const Eigen::MatrixXd x = scaling.apply_rows(data.inputs);
  const Eigen::VectorXd& y = data.targets;

  std::mt19937_64 rng(options.seed);
  std::vector<Eigen::Index> rows(static_cast<std::size_t>(n));
  std::iota(rows.begin(), rows.end(), Eigen::Index{0});
  std::shuffle(rows.begin(), rows.end(), rng);
  Eigen::MatrixXd z(m, d);
  for (Eigen::Index k = 0; k < m; ++k) z.row(k) = x.row(rows[static_cast<std::size_t>(k)]);

  gp::KernelHyperparams hyper;
  if (options.initial_hyper) {
    hyper = *options.initial_hyper;
  } else {
    const double mean = y.mean();
    const double var = std::max((y.array() - mean).square().mean(), 1e-12);
    hyper.signal_variance = 0.5 * var;
    hyper.noise_variance = 0.5 * var;
    std::uniform_real_distribution<double> spread(-options.lengthscale_spread, options.lengthscale_spread);
    hyper.lengthscales.resize(d);
    for (Eigen::Index j = 0; j < d; ++j) hyper.lengthscales[j] = std::exp(spread(rng));
  }
  if (!(options.noise_floor >= 0.0)) throw InvalidInput("noise_floor must be nonnegative");
  const double floor = options.noise_floor * std::max(y.squaredNorm() / static_cast<double>(n), 1e-300);
  hyper.noise_variance = std::max(hyper.noise_variance, 2.0 * floor);
  hyper.validate(d);

  // The noise slot of the search vector holds log(sn2 - floor).
  const Eigen::Index n_hyper = d + 2;
  const auto to_search = [&](Eigen::VectorXd v) {
    v[d + 1] = std::log(std::exp(v[d + 1]) - floor);
    return v;
  };
  const auto from_search = [&](Eigen::VectorXd v) {
    v[d + 1] = std::log(std::exp(v[d + 1]) + floor);
    return v;
  };
  const auto noise_chain = [&](const Eigen::VectorXd& searched, double sn2) { return std::exp(searched[d + 1]) / sn2; };
  optim::Objective objective;
  Eigen::VectorXd x0;
  if (options.optimize_pseudo_inputs) {
    x0 = to_search(pack(hyper, z));
    objective = [&](const Eigen::VectorXd& p, Eigen::VectorXd& grad) {
      gp::KernelHyperparams h;
      Eigen::MatrixXd zz(m, d);
      unpack(from_search(p), d, h, zz);
      const FitcLmlResult r = evaluate(x, y, h, zz, true);
      grad.resize(p.size());
      grad.head(n_hyper) = -r.hyper_gradient;
      grad[d + 1] *= noise_chain(p, h.noise_variance);
      Eigen::Index k = n_hyper;
      for (Eigen::Index row = 0; row < m; ++row) {
        for (Eigen::Index col = 0; col < d; ++col) grad[k++] = -r.pseudo_input_gradient(row, col);
      }
      return -r.value;
    };
  } else {
    x0 = to_search(hyper.to_log());
    objective = [&](const Eigen::VectorXd& p, Eigen::VectorXd& grad) {
      const gp::KernelHyperparams h = gp::KernelHyperparams::from_log(from_search(p));
      const FitcLmlResult r = evaluate(x, y, h, z, true);
      grad = -r.hyper_gradient;
      grad[d + 1] *= noise_chain(p, h.noise_variance);
      return -r.value;
    };
  }

  optim::QuasiNewtonOptions qn;
  qn.max_iterations = options.max_iterations;
  qn.relative_tolerance = options.relative_tolerance;
  const optim::QuasiNewtonResult result = optim::minimize_bfgs(objective, x0, qn);

  if (options.optimize_pseudo_inputs) {
    unpack(from_search(result.x), d, hyper, z);
  } else {
    hyper = gp::KernelHyperparams::from_log(from_search(result.x));
  }

  gp::Dataset scaled{x, y};
  SpgpModel model = assemble_spgp(scaled, hyper, InducingSet{z});
  model.scaling_ = scaling;
  model.diagnostics_.iterations = result.iterations;
  model.diagnostics_.evaluations = result.evaluations;
  model.diagnostics_.converged = result.converged;
  model.diagnostics_.log_marginal_likelihood = -result.value;
  model.diagnostics_.trace = result.trace;
  return model;
}

Eigen::VectorXd SpgpModel::cross_covariance(const Eigen::Ref<const Eigen::VectorXd>& x) const {
  if (x.size() != dim()) throw InvalidInput("predict_spgp: input dimension does not match model");
  const Eigen::VectorXd xs = scaling_.apply(x);
  const Eigen::MatrixXd& z = inducing_.pseudo_inputs;
  Eigen::VectorXd k(z.rows());
  for (Eigen::Index r = 0; r < z.rows(); ++r) {
    double r2 = 0.0;
    for (Eigen::Index j = 0; j < xs.size(); ++j) {
      const double diff = z(r, j) - xs[j];
      r2 += diff * diff / (hyper_.lengthscales[j] * hyper_.lengthscales[j]);
    }
    k[r] = hyper_.signal_variance * std::exp(-0.5 * r2);
  }
  return k;
}

double SpgpModel::mean(const Eigen::Ref<const Eigen::VectorXd>& x) const {
  return cross_covariance(x).dot(weights_);
}

gp::Prediction SpgpModel::predict(const Eigen::Ref<const Eigen::VectorXd>& x) const {
  const Eigen::VectorXd k = cross_covariance(x);
  const Eigen::VectorXd a = kmm_llt_.matrixL().solve(k);
  const Eigen::VectorXd b = system_llt_.matrixL().solve(a);
  const double var = hyper_.signal_variance - a.squaredNorm() + b.squaredNorm();
  return {k.dot(weights_), gp::clamp_variance(var)};
}

gp::Prediction predict_spgp(const SpgpModel& model, const Eigen::Ref<const Eigen::VectorXd>& x_star) {
  return model.predict(x_star);
}

}  // namespace hpbm::spgp
