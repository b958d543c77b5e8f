#pragma once

// Shuffled Complex Evolution (SCE-UA) global minimization and its use for
// calibrating PBM parameters against observed top-layer soil moisture.

#include "hpbm/pbm.hpp"

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace hpbm::calib {

struct SceConfig {
  int n_complexes = 4;
  int points_per_complex = 0;  // 0: 2 * dim + 1
  int simplex_size = 0;        // 0: dim + 1
  int cce_steps = 0;           // 0: 2 * dim + 1, evolution steps per complex per shuffle
  std::size_t max_evals = 10000;
  std::uint64_t seed = 0;
  /// Stop when the best value improved by less than this fraction over the
  /// last `convergence_window` shuffles.
  double convergence_threshold = 1e-6;
  int convergence_window = 5;

  /// Copy with the dimension-dependent defaults filled in; throws
  /// InvalidInput when the population would be smaller than dim + 2.
  SceConfig resolved(std::size_t dim) const;
};

struct BoundedProblem {
  std::function<double(std::span<const double>)> objective;
  std::vector<double> lower;
  std::vector<double> upper;
  /// Optional point placed in the initial population (empty: none).
  std::vector<double> start;

  std::size_t dim() const { return lower.size(); }
  void validate() const;
};

struct SceTraceEntry {
  int shuffle = 0;
  double best_value = 0.0;
  std::size_t eval_count = 0;
};

struct SceResult {
  std::vector<double> best_params;
  double best_value = 0.0;
  std::size_t eval_count = 0;
  bool converged = false;
  std::vector<SceTraceEntry> trace;  // one entry per shuffle, starting with the initial population
};

/// Minimizes `problem.objective` inside the box. Non-finite objective values
/// rank last; more than half of the initial population being non-finite is
/// an InvalidInput. Deterministic for a fixed seed.
SceResult sce_minimize(const BoundedProblem& problem, const SceConfig& config);

/// Names accepted in parameter bounds: every numeric PbmParams field.
double get_param(const pbm::PbmParams& params, const std::string& name);
void set_param(pbm::PbmParams& params, const std::string& name, double value);

struct ParamBound {
  std::string name;
  double lower = 0.0;
  double upper = 0.0;
};

/// infiltration_rate_max, percolation_coeff, et_partition, melt_threshold.
std::vector<ParamBound> default_calibration_bounds();

struct CalibrationResult {
  pbm::PbmParams params;
  double objective = 0.0;          // RMSE of the calibrated run
  double default_objective = 0.0;  // RMSE with the starting params
  SceResult sce;
};

/// Closed-loop RMSE of theta_top against every finite observation. The run
/// starts from spin_up() over the whole forcing record.
double pbm_rmse_objective(std::span<const pbm::Forcing> forcing, std::span<const double> observations,
                          const pbm::PbmParams& params);

/// Calibrates the named subset of `base` by SCE. Observations outside the
/// designated training years must already be NaN; an all-NaN series is
/// rejected. `base` (clamped into the bounds) seeds the initial population,
/// so the result never scores worse than it.
CalibrationResult calibrate_pbm(std::span<const pbm::Forcing> forcing, std::span<const double> observations,
                                const pbm::PbmParams& base, const std::vector<ParamBound>& bounds,
                                const SceConfig& config);

}  // namespace hpbm::calib
