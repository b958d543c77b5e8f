#pragma once

// Two-layer bucket land-surface model with a snowpack, advanced on a
// half-hourly step. Within one step water moves in a fixed order:
//
//   snow partition -> melt -> infiltration (excess is runoff) -> ET
//   -> percolation top->lower -> drainage out of the lower layer
//
// which makes the water balance exact by construction:
//
//   d(theta_top) * top_depth + d(theta_lower) * lower_depth + d(swe)
//     = precip - runoff - drainage - et_actual.

#include <span>
#include <string_view>
#include <vector>

namespace hpbm::pbm {

inline constexpr int kStepsPerDay = 48;
inline constexpr int kDaysPerYear = 365;
inline constexpr int kStepsPerYear = kStepsPerDay * kDaysPerYear;

struct Forcing {
  double precip = 0.0;    // mm per step
  double air_temp = 0.0;  // deg C
  double pet = 0.0;       // mm per step
};

struct PbmState {
  double theta_top = 0.0;    // m3/m3
  double theta_lower = 0.0;  // m3/m3
  double swe = 0.0;          // mm
};

enum class MeltMode {
  /// Releases the whole snowpack in the first step warmer than the threshold.
  flawed_threshold,
  /// Releases degree_day_factor * (T - threshold) mm per step.
  degree_day,
};

std::string_view to_string(MeltMode mode);
MeltMode melt_mode_from_string(std::string_view name);

struct PbmParams {
  double theta_saturation = 0.45;
  double theta_residual = 0.05;
  double theta_field_capacity = 0.25;
  double top_depth = 50.0;     // mm
  double lower_depth = 400.0;  // mm
  double infiltration_rate_max = 6.0;  // mm per step
  double percolation_coeff = 0.02;     // fraction of the above-capacity store per step
  double et_partition = 0.5;           // share of PET drawn from the top layer
  MeltMode melt_mode = MeltMode::degree_day;
  double melt_threshold = 0.0;     // deg C
  double degree_day_factor = 0.08;  // mm / (deg C step)

  /// Throws InvalidInput on any violated physical constraint.
  void validate() const;

  bool operator==(const PbmParams&) const = default;
};

struct Fluxes {
  double runoff = 0.0;
  double drainage = 0.0;
  double et_actual = 0.0;
  double melt = 0.0;
  double percolation = 0.0;
};

struct StepResult {
  PbmState next;
  Fluxes fluxes;
};

void validate_state(const PbmState& state, const PbmParams& params);
void validate_forcing(const Forcing& forcing);

/// Total water stored in the column, mm.
double storage(const PbmState& state, const PbmParams& params);

/// One half-hour transition. Validates state and forcing; params are
/// assumed valid (pbm_run and the public entry points check them).
StepResult pbm_step(const PbmState& state, const Forcing& forcing, const PbmParams& params);

/// Iterates pbm_step; the result has forcing.size() + 1 states, the first
/// being `initial`. Throws InvalidInput on an empty series.
std::vector<PbmState> pbm_run(const PbmState& initial, std::span<const Forcing> forcing,
                              const PbmParams& params);

/// Like pbm_run but also returns the per-step fluxes.
struct RunWithFluxes {
  std::vector<PbmState> states;
  std::vector<Fluxes> fluxes;
};
RunWithFluxes pbm_run_with_fluxes(const PbmState& initial, std::span<const Forcing> forcing,
                                  const PbmParams& params);

}  // namespace hpbm::pbm
