#pragma once

#include "hpbm/pbm.hpp"

#include <cstdint>
#include <vector>

namespace hpbm::pbm {

/// Seasonal weather generator settings. Temperatures in deg C, depths in mm.
struct ClimateConfig {
  double temp_mean = 5.0;
  double temp_annual_amplitude = 11.0;
  int coldest_day = 20;  // day of year of the annual minimum
  double temp_diurnal_amplitude = 5.0;
  double temp_anomaly_sd = 2.5;  // daily AR(1) anomaly
  double temp_anomaly_ar = 0.8;

  double wet_day_probability = 0.28;
  double wet_seasonality = 0.5;  // relative increase of wet-day odds in winter
  double wet_persistence = 0.25;  // added to the wet probability after a wet day
  double event_depth_mean = 9.0;  // mm per wet day, exponential
  int storm_steps = 16;           // a wet day's rain falls over this many consecutive steps

  double pet_coefficient = 0.016;  // mm per step per deg C at solar noon

  void validate() const;
  bool operator==(const ClimateConfig&) const = default;
};

struct SyntheticSite {
  std::vector<Forcing> forcing;      // years * kStepsPerYear
  std::vector<double> observations;  // theta_top at the start of each step, with noise
  std::vector<PbmState> truth;       // noise-free truth states, forcing.size() + 1
};

/// Seeded forcing (annual + diurnal temperature cycle, Markov wet days with
/// storm bursts, temperature-driven PET) pushed through the truth model.
/// Observations are truth theta_top plus N(0, obs_noise_sd^2) noise clipped
/// to [theta_residual, theta_saturation]. Needs years >= 2.
SyntheticSite generate_synthetic_site(std::uint64_t seed, int years, const PbmParams& truth_params,
                                      double obs_noise_sd, const ClimateConfig& climate = {});

/// Forcing only; identical to the forcing of generate_synthetic_site.
std::vector<Forcing> generate_forcing(std::uint64_t seed, int years, const ClimateConfig& climate);

/// State reached by running the first year of `forcing` once from field
/// capacity with no snow. Used to start truth and model runs off a
/// climatologically plausible state.
PbmState spin_up(std::span<const Forcing> forcing, const PbmParams& params);

}  // namespace hpbm::pbm
