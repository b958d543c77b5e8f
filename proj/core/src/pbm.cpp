#include "hpbm/pbm.hpp"

#include "hpbm/error.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace hpbm::pbm {

std::string_view to_string(MeltMode mode) {
  switch (mode) {
    case MeltMode::flawed_threshold:
      return "flawed_threshold";
    case MeltMode::degree_day:
      return "degree_day";
  }
  return "unknown";
}

MeltMode melt_mode_from_string(std::string_view name) {
  if (name == "flawed_threshold") return MeltMode::flawed_threshold;
  if (name == "degree_day") return MeltMode::degree_day;
  throw InvalidInput("unknown melt mode '" + std::string(name) + "'");
}

void PbmParams::validate() const {
  const double values[] = {theta_saturation,  theta_residual,    theta_field_capacity, top_depth,
                           lower_depth,       infiltration_rate_max, percolation_coeff, et_partition,
                           melt_threshold,    degree_day_factor};
  for (double v : values) {
    if (!std::isfinite(v)) throw InvalidInput("PBM parameters must be finite");
  }
  if (!(theta_residual >= 0.0 && theta_residual < theta_field_capacity &&
        theta_field_capacity < theta_saturation && theta_saturation <= 1.0)) {
    throw InvalidInput("need 0 <= theta_residual < theta_field_capacity < theta_saturation <= 1");
  }
  if (!(top_depth > 0.0 && lower_depth > 0.0)) throw InvalidInput("layer depths must be positive");
  if (!(percolation_coeff >= 0.0 && percolation_coeff <= 1.0)) {
    throw InvalidInput("percolation_coeff must lie in [0, 1]");
  }
  if (!(et_partition >= 0.0 && et_partition <= 1.0)) throw InvalidInput("et_partition must lie in [0, 1]");
  if (!(infiltration_rate_max >= 0.0 && degree_day_factor >= 0.0)) {
    throw InvalidInput("rates must be nonnegative");
  }
}

void validate_state(const PbmState& s, const PbmParams& p) {
  if (!std::isfinite(s.theta_top) || !std::isfinite(s.theta_lower) || !std::isfinite(s.swe)) {
    throw InvalidInput("PBM state must be finite");
  }
  if (s.theta_top < p.theta_residual || s.theta_top > p.theta_saturation || s.theta_lower < p.theta_residual ||
      s.theta_lower > p.theta_saturation) {
    throw InvalidInput("soil moisture outside [theta_residual, theta_saturation]");
  }
  if (s.swe < 0.0) throw InvalidInput("swe must be nonnegative");
}

void validate_forcing(const Forcing& f) {
  if (!std::isfinite(f.precip) || !std::isfinite(f.air_temp) || !std::isfinite(f.pet)) {
    throw InvalidInput("forcing must be finite");
  }
  if (f.precip < 0.0 || f.pet < 0.0) throw InvalidInput("precip and pet must be nonnegative");
}

double storage(const PbmState& s, const PbmParams& p) {
  return s.theta_top * p.top_depth + s.theta_lower * p.lower_depth + s.swe;
}

namespace {

// Water (mm) available above the residual content, and the linear ET
// throttle that reaches 1 at field capacity.
double available(double theta, double depth, const PbmParams& p) {
  return std::max(0.0, (theta - p.theta_residual) * depth);
}

double et_throttle(double theta, const PbmParams& p) {
  return std::clamp((theta - p.theta_residual) / (p.theta_field_capacity - p.theta_residual), 0.0, 1.0);
}

}  // namespace

StepResult pbm_step(const PbmState& state, const Forcing& forcing, const PbmParams& p) {
  validate_state(state, p);
  validate_forcing(forcing);

  // Stores are tracked in mm so every transfer is an exact subtract/add pair.
  double top = state.theta_top * p.top_depth;
  double lower = state.theta_lower * p.lower_depth;
  double swe = state.swe;
  const double top_max = p.theta_saturation * p.top_depth;
  const double lower_max = p.theta_saturation * p.lower_depth;
  Fluxes fx;

  double rain = forcing.precip;
  if (forcing.air_temp < 0.0) {
    swe += forcing.precip;
    rain = 0.0;
  }

  if (swe > 0.0) {
    double melt = 0.0;
    if (p.melt_mode == MeltMode::flawed_threshold) {
      if (forcing.air_temp > p.melt_threshold) melt = swe;
    } else {
      melt = std::min(swe, p.degree_day_factor * std::max(0.0, forcing.air_temp - p.melt_threshold));
    }
    swe -= melt;
    fx.melt = melt;
  }

  const double water_in = rain + fx.melt;
  const double infiltration = std::min({water_in, p.infiltration_rate_max, std::max(0.0, top_max - top)});
  top += infiltration;
  fx.runoff = water_in - infiltration;

  const double theta_top = top / p.top_depth;
  const double theta_lower = lower / p.lower_depth;
  const double et_top = std::min(p.et_partition * forcing.pet * et_throttle(theta_top, p),
                                 available(theta_top, p.top_depth, p));
  const double et_lower = std::min((1.0 - p.et_partition) * forcing.pet * et_throttle(theta_lower, p),
                                   available(theta_lower, p.lower_depth, p));
  top -= et_top;
  lower -= et_lower;
  fx.et_actual = et_top + et_lower;

  const double fc_top = p.theta_field_capacity * p.top_depth;
  const double percolation =
      std::min(p.percolation_coeff * std::max(0.0, top - fc_top), std::max(0.0, lower_max - lower));
  top -= percolation;
  lower += percolation;
  fx.percolation = percolation;

  const double fc_lower = p.theta_field_capacity * p.lower_depth;
  const double drainage = p.percolation_coeff * std::max(0.0, lower - fc_lower);
  lower -= drainage;
  fx.drainage = drainage;

  StepResult out;
  out.next.theta_top = std::clamp(top / p.top_depth, p.theta_residual, p.theta_saturation);
  out.next.theta_lower = std::clamp(lower / p.lower_depth, p.theta_residual, p.theta_saturation);
  out.next.swe = swe;
  out.fluxes = fx;
  return out;
}

RunWithFluxes pbm_run_with_fluxes(const PbmState& initial, std::span<const Forcing> forcing,
                                  const PbmParams& params) {
  if (forcing.empty()) throw InvalidInput("pbm_run needs a nonempty forcing series");
  params.validate();
  RunWithFluxes out;
  out.states.reserve(forcing.size() + 1);
  out.fluxes.reserve(forcing.size());
  out.states.push_back(initial);
  for (const Forcing& f : forcing) {
    StepResult r = pbm_step(out.states.back(), f, params);
    out.states.push_back(r.next);
    out.fluxes.push_back(r.fluxes);
  }
  return out;
}

std::vector<PbmState> pbm_run(const PbmState& initial, std::span<const Forcing> forcing,
                              const PbmParams& params) {
  if (forcing.empty()) throw InvalidInput("pbm_run needs a nonempty forcing series");
  params.validate();
  std::vector<PbmState> states;
  states.reserve(forcing.size() + 1);
  states.push_back(initial);
  for (const Forcing& f : forcing) states.push_back(pbm_step(states.back(), f, params).next);
  return states;
}

}  // namespace hpbm::pbm
