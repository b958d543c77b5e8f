#pragma once

// Experiment harness: candidate sweeps over pseudo-input counts and
// restarts, selection by closed-loop (dynamical) RMSE, and leave-one-year-out
// cross-validation.

#include "hpbm/averaging.hpp"
#include "hpbm/calibration.hpp"
#include "hpbm/hybrid.hpp"
#include "hpbm/site_io.hpp"

#include <cstdint>
#include <limits>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace hpbm::train {

inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

/// Root mean squared difference over pairs whose observation is finite.
/// Throws InvalidInput on length mismatch or when no pair is scored.
double rmse(std::span<const double> predicted, std::span<const double> observed);

/// round(100 (pbm - hpbm) / pbm), halves to even. Throws InvalidInput
/// unless pbm > 0.
int percent_improvement(double pbm_rmse, double hpbm_rmse);

/// Deterministic seed for a work unit, mixed from the run seed and tags.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0, std::uint64_t c = 0);

struct Candidate {
  hybrid::Corrector corrector;
  int pseudo_inputs = 0;
  int restart = 0;
  std::uint64_t seed = 0;
  double regression_rmse = kNaN;  // one-step residual fit over the full training set
  spgp::SpgpDiagnostics diagnostics;
  double selection_rmse = kNaN;  // closed loop over the selection series
};

struct FailedFit {
  int pseudo_inputs = 0;
  int restart = 0;
  std::uint64_t seed = 0;
  std::string message;
};

struct CandidatePool {
  std::vector<Candidate> candidates;  // ordered by count, then restart
  std::vector<FailedFit> failures;

  std::vector<hybrid::Corrector> correctors() const;
};

struct TrainOptions {
  std::vector<int> counts{8, 16, 32, 64};
  int restarts = 10;
  std::uint64_t seed = 0;
  std::size_t max_iterations = 200;
  /// Residual pairs beyond this are thinned by a fixed stride before
  /// fitting; 0 disables thinning.
  std::size_t max_training_points = 6000;
  bool optimize_pseudo_inputs = true;
  /// See SpgpFitOptions::noise_floor.
  double noise_floor = 1e-3;
};

/// One fit_spgp per (count, restart). Failed fits are recorded and skipped;
/// throws FitError only when every fit fails.
CandidatePool train_candidates(const hybrid::ResidualTrainingSet& training_set, const TrainOptions& options);

/// A stretch of forcing and observations plus the state to start from.
struct Series {
  std::span<const pbm::Forcing> forcing;
  std::span<const double> observations;
  pbm::PbmState initial;
};

/// Closed-loop RMSE of the hybrid model over the series.
double dynamical_rmse(const hybrid::Corrector& corrector, const Series& series, const pbm::PbmParams& params);

struct Selection {
  std::size_t index = 0;
  hybrid::HybridModel model;
  double rmse = kNaN;
};

/// Rolls every candidate out over `series`, stores each selection_rmse and
/// returns the argmin. Ties go to fewer pseudo-inputs, then the lower seed.
Selection select_by_dynamical_rmse(CandidatePool& pool, const Series& series, const pbm::PbmParams& params);

/// Index of the minimum score with the same tie rule; non-finite scores lose.
std::size_t argmin_with_ties(const CandidatePool& pool, std::span<const double> scores);

/// Records which years of a site's observations each stage reads.
class ObservationGuard {
 public:
  struct Access {
    int fold = 0;
    std::string stage;
    int year = 0;
  };

  explicit ObservationGuard(std::span<const double> observations);

  /// Full-length copy with every year outside `years` masked as NaN.
  std::vector<double> visible(std::span<const int> years, const std::string& stage, int fold) const;
  /// One year's observations.
  std::span<const double> year(int y, const std::string& stage, int fold) const;

  std::vector<Access> log() const;
  int years() const { return years_; }

 private:
  void record(int fold, const std::string& stage, int year) const;

  std::span<const double> observations_;
  int years_ = 0;
  mutable std::mutex mutex_;
  mutable std::vector<Access> log_;
};

enum class SelectionPolicy { in_sample, oracle, both };
std::string to_string(SelectionPolicy policy);
SelectionPolicy selection_policy_from_string(const std::string& text);

struct LooConfig {
  std::uint64_t seed = 0;
  pbm::PbmParams base_params;
  bool calibrate = true;
  std::vector<calib::ParamBound> bounds = calib::default_calibration_bounds();
  calib::SceConfig sce;
  hybrid::EquilibrationConfig equilibration;
  TrainOptions training;
  SelectionPolicy selection = SelectionPolicy::in_sample;
  bool ablate_corrector = false;
  bool bma = false;
  std::optional<double> bma_temperature;  // default_temperature() when unset
  avg::BmaMode bma_mode = avg::BmaMode::shared_state;
};

struct CandidateScore {
  int pseudo_inputs = 0;
  int restart = 0;
  std::uint64_t seed = 0;
  double regression_rmse = kNaN;
  double selection_rmse = kNaN;
  double held_out_rmse = kNaN;
};

struct FoldResult {
  int held_out_year = 0;
  int selection_year = 0;
  pbm::PbmParams params;  // calibrated
  double calibration_objective = kNaN;
  double default_objective = kNaN;
  std::vector<calib::SceTraceEntry> calibration_trace;
  std::size_t training_pairs = 0;
  int equilibration_passes = 0;
  bool equilibration_converged = false;
  std::vector<CandidateScore> candidates;
  std::vector<FailedFit> failures;
  std::optional<std::size_t> selected;         // in-sample choice
  std::optional<std::size_t> oracle_selected;  // held-out choice
  double pbm_rmse = kNaN;
  double hpbm_rmse = kNaN;  // headline column: in-sample choice unless the policy is oracle
  double in_sample_rmse = kNaN;
  double oracle_rmse = kNaN;
  double bma_rmse = kNaN;
  std::vector<double> bma_weights;
  double bma_temperature = kNaN;

  // Held-out year, one value per step.
  std::size_t first_step = 0;
  std::vector<double> theta_obs;
  std::vector<double> theta_pbm;
  std::vector<double> theta_hpbm;
  std::vector<double> precip;
};

struct ExperimentReport {
  std::string site;
  int years = 0;
  SelectionPolicy selection = SelectionPolicy::in_sample;
  std::vector<FoldResult> folds;
  double pbm_mean = kNaN;
  double hpbm_mean = kNaN;
  int percent = 0;
  std::optional<double> oracle_mean;
  std::optional<int> oracle_percent;
  std::optional<double> bma_mean;
  std::optional<int> bma_percent;
};

/// Fills the means and percentages from the fold results.
void summarize(ExperimentReport& report);

/// Leave-one-year-out over a site with at least 2 whole years. Each fold
/// calibrates, builds the residual set and trains on the other years,
/// selects per the policy, then scores PBM and HPBM on the held-out year.
/// Every fold starts its rollouts from a free PBM run over the record with
/// that fold's calibrated params. Stage failures raise StageError.
ExperimentReport loo_cross_validate(const io::SiteData& site, const LooConfig& config,
                                    ObservationGuard* guard = nullptr);

}  // namespace hpbm::train
