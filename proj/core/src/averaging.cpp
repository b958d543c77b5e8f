#include "hpbm/averaging.hpp"

#include "hpbm/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace hpbm::avg {

ModelWeights compute_weights(std::span<const double> rmses, double temperature) {
  if (!(temperature > 0.0)) throw InvalidInput("BMA temperature must be positive");
  double best = std::numeric_limits<double>::infinity();
  for (double r : rmses) {
    if (std::isfinite(r)) {
      if (r < 0.0) throw InvalidInput("RMSE values must be nonnegative");
      best = std::min(best, r);
    }
  }
  if (!std::isfinite(best)) throw InvalidInput("no finite RMSE to weight");

  ModelWeights out;
  out.rmses.assign(rmses.begin(), rmses.end());
  out.temperature = temperature;
  out.weights.resize(rmses.size(), 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < rmses.size(); ++i) {
    if (!std::isfinite(rmses[i])) continue;
    const double z = (rmses[i] - best) / temperature;
    out.weights[i] = std::exp(-0.5 * z * z);
    total += out.weights[i];
  }
  for (double& w : out.weights) w /= total;
  return out;
}

double default_temperature(std::span<const double> rmses) {
  double sum = 0.0;
  std::size_t n = 0;
  for (double r : rmses) {
    if (std::isfinite(r)) {
      sum += r;
      ++n;
    }
  }
  if (n < 2) return 1e-6;
  const double mean = sum / static_cast<double>(n);
  double ss = 0.0;
  for (double r : rmses) {
    if (std::isfinite(r)) ss += (r - mean) * (r - mean);
  }
  return std::max(std::sqrt(ss / static_cast<double>(n)), 1e-6);
}

double bma_mean(std::span<const double> means, const ModelWeights& weights) {
  if (means.size() != weights.weights.size()) throw InvalidInput("means and weights differ in length");
  double acc = 0.0;
  for (std::size_t i = 0; i < means.size(); ++i) {
    if (weights.weights[i] != 0.0) acc += weights.weights[i] * means[i];
  }
  return acc;
}

hybrid::RolloutResult bma_rollout(std::span<const hybrid::Corrector> pool, const ModelWeights& weights,
                                  const pbm::PbmState& initial, std::span<const pbm::Forcing> forcing,
                                  const pbm::PbmParams& params, BmaMode mode) {
  if (pool.empty()) throw InvalidInput("BMA needs a nonempty pool");
  if (pool.size() != weights.weights.size()) throw InvalidInput("pool and weights differ in length");
  double total = 0.0;
  for (double w : weights.weights) {
    if (!(w >= 0.0)) throw InvalidInput("BMA weights must be nonnegative");
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-9) throw InvalidInput("BMA weights must sum to 1");

  std::vector<std::size_t> active;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    if (weights.weights[i] > 0.0) active.push_back(i);
  }

  if (mode == BmaMode::shared_state) {
    return hybrid::rollout_with(initial, forcing, params, [&](const Eigen::VectorXd& v) {
      double acc = 0.0;
      for (std::size_t i : active) {
        if (!pool[i].is_zero()) acc += weights.weights[i] * pool[i].mean(v);
      }
      return acc;
    });
  }

  hybrid::RolloutResult out;
  out.theta_top.assign(forcing.size() + 1, 0.0);
  for (std::size_t i : active) {
    const hybrid::RolloutResult r = hybrid::rollout(initial, forcing, hybrid::HybridModel{params, pool[i]});
    for (std::size_t t = 0; t < r.theta_top.size(); ++t) out.theta_top[t] += weights.weights[i] * r.theta_top[t];
    out.clip_events += r.clip_events;
  }
  return out;
}

}  // namespace hpbm::avg
