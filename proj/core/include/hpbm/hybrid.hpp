#pragma once

// Hybrid model: the bucket PBM plus a zero-prior-mean GP corrector that is
// added to the top-layer moisture only,
//
//   theta_{t+1} = f(v_t).theta_top + GP(v_t),   v_t = (s_t, u_t, theta_t).
//
// The unobserved substate s_t = (theta_lower, swe) is evolved by the PBM
// alone. Far from the corrector's training data the GP mean decays to zero
// and the hybrid reverts to the PBM.

#include "hpbm/gp_core.hpp"
#include "hpbm/pbm.hpp"
#include "hpbm/spgp.hpp"

#include <Eigen/Core>

#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace hpbm::hybrid {

/// GP input layout: theta_lower, swe, precip, air_temp, pet, theta_top.
inline constexpr Eigen::Index kFeatureDim = 6;
inline constexpr const char* kFeatureNames[kFeatureDim] = {"theta_lower", "swe",  "precip",
                                                           "air_temp",    "pet", "theta_top"};

struct Unobserved {
  double theta_lower = 0.0;
  double swe = 0.0;
};

struct HybridState {
  Unobserved unobserved;
  pbm::Forcing forcing;  // u_t, the forcing applied over the coming step
  double theta_top = 0.0;

  pbm::PbmState pbm_state() const { return {theta_top, unobserved.theta_lower, unobserved.swe}; }
};

Eigen::VectorXd feature_vector(const HybridState& state);

/// Immutable residual model: none (identically zero), exact GP or FITC.
/// Copies share the underlying fitted model.
class Corrector {
 public:
  Corrector() = default;
  explicit Corrector(gp::ExactGpModel model);
  explicit Corrector(spgp::SpgpModel model);

  bool is_zero() const { return std::holds_alternative<std::monostate>(model_); }
  /// Input dimension; 0 for the zero corrector.
  Eigen::Index dim() const;

  double mean(const Eigen::Ref<const Eigen::VectorXd>& v) const;
  gp::Prediction predict(const Eigen::Ref<const Eigen::VectorXd>& v) const;

  const gp::ExactGpModel* exact() const;
  const spgp::SpgpModel* sparse() const;

 private:
  std::variant<std::monostate, std::shared_ptr<const gp::ExactGpModel>, std::shared_ptr<const spgp::SpgpModel>>
      model_;
};

struct HybridModel {
  pbm::PbmParams pbm_params;
  Corrector corrector;

  /// Throws InvalidInput if the corrector is not zero and its input
  /// dimension differs from kFeatureDim.
  void validate() const;
};

struct EquilibrationConfig {
  int max_passes = 10;
  /// Max change between consecutive passes, theta in m3/m3 and swe divided
  /// by top_depth. An infinite tolerance means a single sweep.
  double tol = 1e-6;
  /// Substate the first sweep starts from; defaults to field capacity and
  /// no snow when unset.
  std::optional<Unobserved> initial;
};

struct EquilibrationResult {
  /// Substate at the start of every step of the final sweep (size T).
  std::vector<Unobserved> substate;
  /// Substate after the last step of the final sweep.
  Unobserved final_substate;
  int passes = 0;
  bool converged = false;
  double last_change = std::numeric_limits<double>::infinity();
};

/// Teacher-forced sweeps with periodic boundary conditions: pass k + 1
/// starts from the substate pass k ended with. Missing observations (NaN)
/// are bridged by the PBM's own theta_top.
EquilibrationResult equilibrate_unobserved(std::span<const double> observations,
                                           std::span<const pbm::Forcing> forcing, const pbm::PbmParams& params,
                                           const EquilibrationConfig& config = {});

struct ResidualTrainingSet {
  gp::Dataset data;                // inputs v_t, targets y_{t+1} - f(v_t).theta_top
  std::vector<std::size_t> steps;  // t for each row
  std::string site;
  std::size_t segments = 0;  // contiguous observed runs that contributed pairs
  int equilibration_passes = 0;
  bool equilibration_converged = false;

  std::size_t size() const { return steps.size(); }
};

/// One-step-ahead residual pairs under teacher forcing. Pairs never span a
/// missing observation. Throws InvalidInput on misaligned or too-short
/// series.
ResidualTrainingSet build_training_set(std::span<const double> observations, std::span<const pbm::Forcing> forcing,
                                       const pbm::PbmParams& params, const EquilibrationConfig& config = {},
                                       std::string site = {});

struct StepOutcome {
  HybridState next;
  double correction = 0.0;
  bool clipped = false;
};

/// PBM step plus the corrector mean at `state`, applied to theta_top and
/// clipped to the physical range.
StepOutcome hybrid_step(const HybridState& state, const pbm::Forcing& forcing_next, const HybridModel& model);

struct RolloutResult {
  std::vector<double> theta_top;  // forcing.size() + 1 values, starting at the initial state
  std::size_t clip_events = 0;
};

/// Closed-loop simulation over `forcing` from `initial`; no observations
/// are consulted.
RolloutResult rollout(const pbm::PbmState& initial, std::span<const pbm::Forcing> forcing, const HybridModel& model);

/// Closed-loop simulation with an arbitrary correction function of the
/// feature vector; rollout() and model averaging are built on it.
using CorrectionFn = std::function<double(const Eigen::VectorXd& features)>;
RolloutResult rollout_with(const pbm::PbmState& initial, std::span<const pbm::Forcing> forcing,
                           const pbm::PbmParams& params, const CorrectionFn& correction);

}  // namespace hpbm::hybrid
