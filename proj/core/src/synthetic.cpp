#include "hpbm/synthetic.hpp"

#include "hpbm/error.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

namespace hpbm::pbm {

void ClimateConfig::validate() const {
  const double values[] = {temp_mean,         temp_annual_amplitude, temp_diurnal_amplitude, temp_anomaly_sd,
                           temp_anomaly_ar,   wet_day_probability,   wet_seasonality,        wet_persistence,
                           event_depth_mean,  pet_coefficient};
  for (double v : values) {
    if (!std::isfinite(v)) throw InvalidInput("climate settings must be finite");
  }
  if (temp_annual_amplitude < 0 || temp_diurnal_amplitude < 0 || temp_anomaly_sd < 0) {
    throw InvalidInput("temperature amplitudes must be nonnegative");
  }
  if (!(temp_anomaly_ar >= 0.0 && temp_anomaly_ar < 1.0)) throw InvalidInput("temp_anomaly_ar must lie in [0, 1)");
  if (!(wet_day_probability >= 0.0 && wet_day_probability <= 1.0)) {
    throw InvalidInput("wet_day_probability must lie in [0, 1]");
  }
  if (event_depth_mean < 0.0 || pet_coefficient < 0.0) throw InvalidInput("depths and PET must be nonnegative");
  if (storm_steps < 1 || storm_steps > kStepsPerDay) throw InvalidInput("storm_steps must lie in [1, 48]");
}

std::vector<Forcing> generate_forcing(std::uint64_t seed, int years, const ClimateConfig& c) {
  c.validate();
  if (years < 1) throw InvalidInput("need at least one year of forcing");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> uniform(0.0, 1.0);
  std::exponential_distribution<double> depth(c.event_depth_mean > 0 ? 1.0 / c.event_depth_mean : 1.0);

  const double two_pi = 2.0 * std::numbers::pi;
  const int days = years * kDaysPerYear;
  std::vector<Forcing> out(static_cast<std::size_t>(days) * kStepsPerDay);

  double anomaly = 0.0;
  bool wet_yesterday = false;
  const double innovation_sd = c.temp_anomaly_sd * std::sqrt(1.0 - c.temp_anomaly_ar * c.temp_anomaly_ar);
  for (int day = 0; day < days; ++day) {
    const int doy = day % kDaysPerYear;
    const double season = std::cos(two_pi * (doy - c.coldest_day) / kDaysPerYear);  // +1 mid-winter
    const double daily_mean = c.temp_mean - c.temp_annual_amplitude * season;
    anomaly = c.temp_anomaly_ar * anomaly + innovation_sd * normal(rng);

    double p_wet = c.wet_day_probability * (1.0 + c.wet_seasonality * season);
    if (wet_yesterday) p_wet += c.wet_persistence;
    p_wet = std::clamp(p_wet, 0.0, 1.0);
    const bool wet = uniform(rng) < p_wet;
    double total = 0.0;
    int storm_start = 0;
    if (wet) {
      total = depth(rng);
      storm_start = static_cast<int>(uniform(rng) * (kStepsPerDay - c.storm_steps + 1));
      storm_start = std::min(storm_start, kStepsPerDay - c.storm_steps);
    }
    wet_yesterday = wet;

    for (int s = 0; s < kStepsPerDay; ++s) {
      Forcing& f = out[static_cast<std::size_t>(day) * kStepsPerDay + static_cast<std::size_t>(s)];
      const double hour = s / 2.0;
      // Diurnal minimum near 03:00, maximum near 15:00.
      f.air_temp = daily_mean + anomaly - c.temp_diurnal_amplitude * std::cos(two_pi * (hour - 3.0) / 24.0);
      if (wet && s >= storm_start && s < storm_start + c.storm_steps) f.precip = total / c.storm_steps;
      const double sun = std::max(0.0, std::sin(two_pi * (hour - 6.0) / 24.0));
      f.pet = c.pet_coefficient * std::max(0.0, f.air_temp) * sun;
    }
  }
  return out;
}

PbmState spin_up(std::span<const Forcing> forcing, const PbmParams& params) {
  params.validate();
  const PbmState start{params.theta_field_capacity, params.theta_field_capacity, 0.0};
  const std::size_t n = std::min<std::size_t>(forcing.size(), kStepsPerYear);
  if (n == 0) return start;
  return pbm_run(start, forcing.first(n), params).back();
}

SyntheticSite generate_synthetic_site(std::uint64_t seed, int years, const PbmParams& truth_params,
                                      double obs_noise_sd, const ClimateConfig& climate) {
  if (years < 2) throw InvalidInput("a synthetic site needs at least 2 years");
  if (!(std::isfinite(obs_noise_sd) && obs_noise_sd >= 0.0)) {
    throw InvalidInput("observation noise sd must be finite and nonnegative");
  }
  truth_params.validate();

  SyntheticSite site;
  site.forcing = generate_forcing(seed, years, climate);
  site.truth = pbm_run(spin_up(site.forcing, truth_params), site.forcing, truth_params);

  std::seed_seq noise_seed{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                          std::uint32_t{0x6e6f6973}};
  std::mt19937_64 noise_rng(noise_seed);
  std::normal_distribution<double> noise(0.0, 1.0);
  site.observations.resize(site.forcing.size());
  for (std::size_t t = 0; t < site.forcing.size(); ++t) {
    const double theta = site.truth[t].theta_top;
    if (obs_noise_sd == 0.0) {
      site.observations[t] = theta;
    } else {
      site.observations[t] = std::clamp(theta + obs_noise_sd * noise(noise_rng), truth_params.theta_residual,
                                        truth_params.theta_saturation);
    }
  }
  return site;
}

}  // namespace hpbm::pbm
