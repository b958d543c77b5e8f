#pragma once

// Model averaging over a pool of residual correctors. Weights follow a
// Gaussian kernel on each candidate's RMSE excess over the best one.

#include "hpbm/hybrid.hpp"

#include <span>
#include <vector>

namespace hpbm::avg {

struct ModelWeights {
  std::vector<double> weights;  // nonnegative, sums to 1
  std::vector<double> rmses;    // the scores the weights were derived from
  double temperature = 0.0;
};

/// w_i proportional to exp(-(rmse_i - min rmse)^2 / (2 tau^2)). Non-finite
/// RMSEs get weight 0; ties at the minimum share the mass. Throws
/// InvalidInput when no RMSE is finite or tau is not positive.
ModelWeights compute_weights(std::span<const double> rmses, double temperature);

/// Standard deviation of the finite RMSEs, floored at 1e-6.
double default_temperature(std::span<const double> rmses);

/// Weighted sum of candidate means.
double bma_mean(std::span<const double> means, const ModelWeights& weights);

enum class BmaMode {
  shared_state,        // one trajectory, weighted mean correction at each step
  trajectory_average,  // weighted mean of independent candidate rollouts
};

/// Closed-loop rollout of the averaged model. Candidates with zero weight
/// are never evaluated, so one-hot weights reproduce that candidate's
/// rollout exactly.
hybrid::RolloutResult bma_rollout(std::span<const hybrid::Corrector> pool, const ModelWeights& weights,
                                  const pbm::PbmState& initial, std::span<const pbm::Forcing> forcing,
                                  const pbm::PbmParams& params, BmaMode mode = BmaMode::shared_state);

}  // namespace hpbm::avg
