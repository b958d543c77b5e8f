#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <functional>
#include <vector>

namespace hpbm::optim {

/// Objective returning f(x) and writing df/dx into `grad`. Returning a
/// non-finite value (or throwing hpbm::FitError) marks x as infeasible.
using Objective = std::function<double(const Eigen::VectorXd& x, Eigen::VectorXd& grad)>;

struct QuasiNewtonOptions {
  std::size_t max_iterations = 500;
  /// Stop when |f_k - f_{k+1}| <= relative_tolerance * max(1, |f_k|).
  double relative_tolerance = 1e-9;
  double gradient_tolerance = 1e-10;
  /// Armijo sufficient-decrease constant.
  double armijo = 1e-4;
  double backtrack = 0.5;
  std::size_t max_backtracks = 40;
  /// Largest step length (2-norm) tried along a search direction.
  double max_step = 2.0;
};

struct QuasiNewtonResult {
  Eigen::VectorXd x;
  double value = 0.0;
  std::size_t iterations = 0;
  std::size_t evaluations = 0;
  bool converged = false;
  std::vector<double> trace;  // f at accepted iterates, starting with f(x0)
};

/// BFGS minimization with a backtracking Armijo line search. Throws
/// hpbm::OptimizerError when f(x0) is not finite.
QuasiNewtonResult minimize_bfgs(const Objective& objective, Eigen::VectorXd x0,
                                const QuasiNewtonOptions& options = {});

}  // namespace hpbm::optim
