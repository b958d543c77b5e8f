#include "hpbm/hybrid.hpp"

#include "hpbm/error.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace hpbm::hybrid {

Eigen::VectorXd feature_vector(const HybridState& s) {
  Eigen::VectorXd v(kFeatureDim);
  v << s.unobserved.theta_lower, s.unobserved.swe, s.forcing.precip, s.forcing.air_temp, s.forcing.pet, s.theta_top;
  return v;
}

Corrector::Corrector(gp::ExactGpModel model)
    : model_(std::make_shared<const gp::ExactGpModel>(std::move(model))) {}

Corrector::Corrector(spgp::SpgpModel model)
    : model_(std::make_shared<const spgp::SpgpModel>(std::move(model))) {}

Eigen::Index Corrector::dim() const {
  if (auto e = exact()) return e->dim();
  if (auto s = sparse()) return s->dim();
  return 0;
}

double Corrector::mean(const Eigen::Ref<const Eigen::VectorXd>& v) const {
  if (auto e = exact()) return e->mean(v);
  if (auto s = sparse()) return s->mean(v);
  return 0.0;
}

gp::Prediction Corrector::predict(const Eigen::Ref<const Eigen::VectorXd>& v) const {
  if (auto e = exact()) return e->predict(v);
  if (auto s = sparse()) return s->predict(v);
  return {};
}

const gp::ExactGpModel* Corrector::exact() const {
  const auto* p = std::get_if<std::shared_ptr<const gp::ExactGpModel>>(&model_);
  return p ? p->get() : nullptr;
}

const spgp::SpgpModel* Corrector::sparse() const {
  const auto* p = std::get_if<std::shared_ptr<const spgp::SpgpModel>>(&model_);
  return p ? p->get() : nullptr;
}

void HybridModel::validate() const {
  pbm_params.validate();
  if (!corrector.is_zero() && corrector.dim() != kFeatureDim) {
    throw InvalidInput("corrector input dimension " + std::to_string(corrector.dim()) + " != " +
                       std::to_string(kFeatureDim));
  }
}

namespace {

void check_series(std::span<const double> observations, std::span<const pbm::Forcing> forcing) {
  if (observations.size() != forcing.size()) {
    throw InvalidInput("observations (" + std::to_string(observations.size()) + ") and forcing (" +
                       std::to_string(forcing.size()) + ") are misaligned");
  }
  if (observations.size() < 2) throw InvalidInput("need at least 2 timesteps");
}

double clamp_theta(double theta, const pbm::PbmParams& p) {
  return std::clamp(theta, p.theta_residual, p.theta_saturation);
}

// One teacher-forced sweep. Returns the substate at the start of every step
// plus the one after the last step (size T + 1).
std::vector<Unobserved> teacher_forced_sweep(std::span<const double> obs, std::span<const pbm::Forcing> forcing,
                                             const pbm::PbmParams& p, Unobserved start) {
  std::vector<Unobserved> out;
  out.reserve(obs.size() + 1);
  out.push_back(start);
  double free_theta = p.theta_field_capacity;
  for (double y : obs) {
    if (std::isfinite(y)) {
      free_theta = y;
      break;
    }
  }
  for (std::size_t t = 0; t < obs.size(); ++t) {
    const double theta = std::isfinite(obs[t]) ? clamp_theta(obs[t], p) : free_theta;
    const Unobserved& s = out.back();
    const pbm::StepResult r = pbm::pbm_step({theta, s.theta_lower, s.swe}, forcing[t], p);
    free_theta = r.next.theta_top;
    out.push_back({r.next.theta_lower, r.next.swe});
  }
  return out;
}

double max_change(const std::vector<Unobserved>& a, const std::vector<Unobserved>& b, double top_depth) {
  double worst = 0.0;
  for (std::size_t t = 1; t < a.size(); ++t) {
    worst = std::max(worst, std::abs(a[t].theta_lower - b[t].theta_lower));
    worst = std::max(worst, std::abs(a[t].swe - b[t].swe) / top_depth);
  }
  return worst;
}

}  // namespace

EquilibrationResult equilibrate_unobserved(std::span<const double> observations,
                                           std::span<const pbm::Forcing> forcing, const pbm::PbmParams& params,
                                           const EquilibrationConfig& config) {
  check_series(observations, forcing);
  params.validate();
  if (config.max_passes < 1) throw InvalidInput("max_passes must be at least 1");
  if (!(config.tol > 0.0)) throw InvalidInput("equilibration tolerance must be positive");

  Unobserved start = config.initial.value_or(Unobserved{params.theta_field_capacity, 0.0});
  EquilibrationResult result;
  std::vector<Unobserved> previous;
  std::vector<Unobserved> current;
  for (int pass = 1; pass <= config.max_passes; ++pass) {
    current = teacher_forced_sweep(observations, forcing, params, start);
    result.passes = pass;
    if (std::isinf(config.tol)) {
      result.converged = true;
      break;
    }
    if (pass >= 2) {
      result.last_change = max_change(current, previous, params.top_depth);
      if (result.last_change < config.tol) {
        result.converged = true;
        break;
      }
    }
    start = current.back();
    previous = std::move(current);
    current.clear();
  }
  if (current.empty()) current = std::move(previous);  // pass cap reached
  result.final_substate = current.back();
  current.pop_back();
  result.substate = std::move(current);
  return result;
}

ResidualTrainingSet build_training_set(std::span<const double> observations, std::span<const pbm::Forcing> forcing,
                                       const pbm::PbmParams& params, const EquilibrationConfig& config,
                                       std::string site) {
  check_series(observations, forcing);
  const EquilibrationResult eq = equilibrate_unobserved(observations, forcing, params, config);

  ResidualTrainingSet out;
  out.site = std::move(site);
  out.equilibration_passes = eq.passes;
  out.equilibration_converged = eq.converged;

  std::vector<Eigen::VectorXd> rows;
  std::vector<double> targets;
  bool in_segment = false;
  for (std::size_t t = 0; t + 1 < observations.size(); ++t) {
    const double y = observations[t];
    const double y_next = observations[t + 1];
    if (!std::isfinite(y) || !std::isfinite(y_next)) {
      in_segment = false;
      continue;
    }
    if (!in_segment) {
      ++out.segments;
      in_segment = true;
    }
    HybridState v{eq.substate[t], forcing[t], clamp_theta(y, params)};
    const pbm::StepResult r = pbm::pbm_step(v.pbm_state(), forcing[t], params);
    rows.push_back(feature_vector(v));
    targets.push_back(y_next - r.next.theta_top);
    out.steps.push_back(t);
  }

  out.data.inputs.resize(static_cast<Eigen::Index>(rows.size()), kFeatureDim);
  out.data.targets.resize(static_cast<Eigen::Index>(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) {
    out.data.inputs.row(static_cast<Eigen::Index>(i)) = rows[i].transpose();
    out.data.targets[static_cast<Eigen::Index>(i)] = targets[i];
  }
  return out;
}

StepOutcome hybrid_step(const HybridState& state, const pbm::Forcing& forcing_next, const HybridModel& model) {
  const pbm::PbmParams& p = model.pbm_params;
  const pbm::StepResult r = pbm::pbm_step(state.pbm_state(), state.forcing, p);
  StepOutcome out;
  out.correction = model.corrector.is_zero() ? 0.0 : model.corrector.mean(feature_vector(state));
  const double corrected = r.next.theta_top + out.correction;
  const double clipped = clamp_theta(corrected, p);
  out.clipped = clipped != corrected;
  out.next = HybridState{{r.next.theta_lower, r.next.swe}, forcing_next, clipped};
  return out;
}

RolloutResult rollout_with(const pbm::PbmState& initial, std::span<const pbm::Forcing> forcing,
                           const pbm::PbmParams& params, const CorrectionFn& correction) {
  if (forcing.empty()) throw InvalidInput("rollout needs a nonempty forcing series");
  params.validate();
  RolloutResult out;
  out.theta_top.reserve(forcing.size() + 1);
  out.theta_top.push_back(initial.theta_top);
  HybridState state{{initial.theta_lower, initial.swe}, forcing[0], initial.theta_top};
  for (std::size_t t = 0; t < forcing.size(); ++t) {
    state.forcing = forcing[t];
    const pbm::StepResult r = pbm::pbm_step(state.pbm_state(), state.forcing, params);
    double theta = r.next.theta_top;
    if (correction) {
      const double corrected = theta + correction(feature_vector(state));
      theta = clamp_theta(corrected, params);
      if (theta != corrected) ++out.clip_events;
    }
    state.unobserved = {r.next.theta_lower, r.next.swe};
    state.theta_top = theta;
    out.theta_top.push_back(theta);
  }
  return out;
}

RolloutResult rollout(const pbm::PbmState& initial, std::span<const pbm::Forcing> forcing, const HybridModel& model) {
  model.validate();
  if (model.corrector.is_zero()) return rollout_with(initial, forcing, model.pbm_params, {});
  const Corrector& c = model.corrector;
  return rollout_with(initial, forcing, model.pbm_params, [&c](const Eigen::VectorXd& v) { return c.mean(v); });
}

}  // namespace hpbm::hybrid
