#include "hpbm/optimize.hpp"

#include "hpbm/error.hpp"

#include <cmath>
#include <limits>

namespace hpbm::optim {

namespace {

double safe_eval(const Objective& objective, const Eigen::VectorXd& x, Eigen::VectorXd& grad) {
  try {
    const double f = objective(x, grad);
    if (!std::isfinite(f) || !grad.allFinite()) return std::numeric_limits<double>::infinity();
    return f;
  } catch (const FitError&) {
    return std::numeric_limits<double>::infinity();
  }
}

}  // namespace

QuasiNewtonResult minimize_bfgs(const Objective& objective, Eigen::VectorXd x0,
                                const QuasiNewtonOptions& options) {
  const Eigen::Index p = x0.size();
  QuasiNewtonResult out;
  out.x = std::move(x0);

  Eigen::VectorXd grad(p);
  double f = safe_eval(objective, out.x, grad);
  ++out.evaluations;
  if (!std::isfinite(f)) {
    throw OptimizerError("objective is not finite at the starting point", {f});
  }
  out.trace.push_back(f);

  Eigen::MatrixXd h_inv = Eigen::MatrixXd::Identity(p, p);
  Eigen::VectorXd trial(p);
  Eigen::VectorXd trial_grad(p);

  for (std::size_t iter = 0; iter < options.max_iterations; ++iter) {
    if (grad.lpNorm<Eigen::Infinity>() <= options.gradient_tolerance) {
      out.converged = true;
      break;
    }
    Eigen::VectorXd direction = -h_inv * grad;
    double slope = grad.dot(direction);
    if (!(slope < 0.0)) {
      // Curvature estimate went bad; fall back to steepest descent.
      h_inv.setIdentity();
      direction = -grad;
      slope = -grad.squaredNorm();
    }
    double step = 1.0;
    const double dir_norm = direction.norm();
    if (dir_norm * step > options.max_step) step = options.max_step / dir_norm;

    bool accepted = false;
    double f_trial = 0.0;
    for (std::size_t bt = 0; bt <= options.max_backtracks; ++bt) {
      trial = out.x + step * direction;
      f_trial = safe_eval(objective, trial, trial_grad);
      ++out.evaluations;
      if (std::isfinite(f_trial) && f_trial <= f + options.armijo * step * slope) {
        accepted = true;
        break;
      }
      step *= options.backtrack;
    }
    if (!accepted) {
      // No descent along this direction; restart curvature once, else stop.
      if (!h_inv.isIdentity()) {
        h_inv.setIdentity();
        continue;
      }
      out.converged = true;
      break;
    }

    const Eigen::VectorXd s = trial - out.x;
    const Eigen::VectorXd y = trial_grad - grad;
    const double improvement = f - f_trial;
    out.x = trial;
    grad = trial_grad;
    const double f_prev = f;
    f = f_trial;
    out.trace.push_back(f);
    out.iterations = iter + 1;

    const double sy = s.dot(y);
    if (sy > 1e-12 * s.norm() * y.norm()) {
      if (iter == 0) {
        // Scale the initial inverse Hessian to the observed curvature.
        h_inv *= sy / y.squaredNorm();
      }
      const double rho = 1.0 / sy;
      const Eigen::VectorXd hy = h_inv * y;
      h_inv += ((sy + y.dot(hy)) * rho * rho) * (s * s.transpose()) -
               rho * (hy * s.transpose() + s * hy.transpose());
    }

    if (improvement <= options.relative_tolerance * std::max(1.0, std::abs(f_prev))) {
      out.converged = true;
      break;
    }
  }
  out.value = f;
  return out;
}

}  // namespace hpbm::optim
