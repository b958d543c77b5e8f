#include "hpbm/training.hpp"

#include "hpbm/error.hpp"
#include "hpbm/synthetic.hpp"

#include <algorithm>
#include <cfenv>
#include <cmath>

namespace hpbm::train {

double rmse(std::span<const double> predicted, std::span<const double> observed) {
  if (predicted.size() != observed.size()) throw InvalidInput("rmse: series differ in length");
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < observed.size(); ++i) {
    if (!std::isfinite(observed[i])) continue;
    const double e = predicted[i] - observed[i];
    sum += e * e;
    ++n;
  }
  if (n == 0) throw InvalidInput("rmse: no observed pairs");
  return std::sqrt(sum / static_cast<double>(n));
}

int percent_improvement(double pbm_rmse, double hpbm_rmse) {
  if (!(pbm_rmse > 0.0) || !std::isfinite(hpbm_rmse)) throw InvalidInput("percent improvement needs pbm RMSE > 0");
  const double raw = 100.0 * (pbm_rmse - hpbm_rmse) / pbm_rmse;
  // Snap away representation noise so exact halves stay halves.
  const double snapped = std::round(raw * 1e9) / 1e9;
  const int saved = std::fegetround();
  std::fesetround(FE_TONEAREST);
  const double rounded = std::nearbyint(snapped);
  std::fesetround(saved);
  return static_cast<int>(rounded);
}

namespace {

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  std::uint64_t h = splitmix(seed);
  h = splitmix(h ^ a);
  h = splitmix(h ^ b);
  return splitmix(h ^ c);
}

std::vector<hybrid::Corrector> CandidatePool::correctors() const {
  std::vector<hybrid::Corrector> out;
  out.reserve(candidates.size());
  for (const Candidate& c : candidates) out.push_back(c.corrector);
  return out;
}

CandidatePool train_candidates(const hybrid::ResidualTrainingSet& training_set, const TrainOptions& options) {
  const gp::Dataset& full = training_set.data;
  full.validate();
  if (full.inputs.rows() == 0) throw InvalidInput("training set is empty");
  if (options.counts.empty() || options.restarts < 1) throw InvalidInput("need at least one count and one restart");

  gp::Dataset fit_data;
  const Eigen::Index n = full.inputs.rows();
  const auto cap = static_cast<Eigen::Index>(options.max_training_points);
  if (cap > 0 && n > cap) {
    const Eigen::Index stride = (n + cap - 1) / cap;
    const Eigen::Index kept = (n + stride - 1) / stride;
    fit_data.inputs.resize(kept, full.inputs.cols());
    fit_data.targets.resize(kept);
    for (Eigen::Index i = 0; i < kept; ++i) {
      fit_data.inputs.row(i) = full.inputs.row(i * stride);
      fit_data.targets[i] = full.targets[i * stride];
    }
  } else {
    fit_data = full;
  }

  CandidatePool pool;
  std::vector<double> predicted(static_cast<std::size_t>(n));
  std::vector<double> targets(full.targets.data(), full.targets.data() + n);
  for (int m : options.counts) {
    for (int r = 0; r < options.restarts; ++r) {
      const std::uint64_t seed = derive_seed(options.seed, static_cast<std::uint64_t>(m), static_cast<std::uint64_t>(r));
      try {
        if (m < 1 || m > fit_data.inputs.rows()) {
          throw InvalidInput("pseudo-input count " + std::to_string(m) + " outside [1, " +
                             std::to_string(fit_data.inputs.rows()) + "]");
        }
        spgp::SpgpFitOptions fit;
        fit.seed = seed;
        fit.max_iterations = options.max_iterations;
        fit.optimize_pseudo_inputs = options.optimize_pseudo_inputs;
        fit.noise_floor = options.noise_floor;
        spgp::SpgpModel model = spgp::fit_spgp(fit_data, m, fit);
        for (Eigen::Index i = 0; i < n; ++i) predicted[static_cast<std::size_t>(i)] = model.mean(full.inputs.row(i).transpose());
        Candidate c;
        c.pseudo_inputs = m;
        c.restart = r;
        c.seed = seed;
        c.regression_rmse = rmse(predicted, targets);
        c.diagnostics = model.diagnostics();
        c.corrector = hybrid::Corrector(std::move(model));
        pool.candidates.push_back(std::move(c));
      } catch (const std::exception& e) {
        pool.failures.push_back({m, r, seed, e.what()});
      }
    }
  }
  if (pool.candidates.empty()) {
    throw FitError("all " + std::to_string(pool.failures.size()) + " candidate fits failed; first: " +
                   pool.failures.front().message);
  }
  return pool;
}

double dynamical_rmse(const hybrid::Corrector& corrector, const Series& series, const pbm::PbmParams& params) {
  const hybrid::RolloutResult r = hybrid::rollout(series.initial, series.forcing, {params, corrector});
  return rmse(std::span<const double>(r.theta_top).first(series.observations.size()), series.observations);
}

std::size_t argmin_with_ties(const CandidatePool& pool, std::span<const double> scores) {
  if (pool.candidates.empty() || scores.size() != pool.candidates.size()) {
    throw InvalidInput("scores must match a nonempty pool");
  }
  std::size_t best = 0;
  auto key_less = [&](std::size_t a, std::size_t b) {
    const double sa = std::isfinite(scores[a]) ? scores[a] : std::numeric_limits<double>::infinity();
    const double sb = std::isfinite(scores[b]) ? scores[b] : std::numeric_limits<double>::infinity();
    if (sa != sb) return sa < sb;
    const Candidate& ca = pool.candidates[a];
    const Candidate& cb = pool.candidates[b];
    if (ca.pseudo_inputs != cb.pseudo_inputs) return ca.pseudo_inputs < cb.pseudo_inputs;
    return ca.seed < cb.seed;
  };
  for (std::size_t i = 1; i < scores.size(); ++i) {
    if (key_less(i, best)) best = i;
  }
  return best;
}

Selection select_by_dynamical_rmse(CandidatePool& pool, const Series& series, const pbm::PbmParams& params) {
  if (pool.candidates.empty()) throw InvalidInput("cannot select from an empty pool");
  std::vector<double> scores;
  scores.reserve(pool.candidates.size());
  for (Candidate& c : pool.candidates) {
    c.selection_rmse = dynamical_rmse(c.corrector, series, params);
    scores.push_back(c.selection_rmse);
  }
  Selection s;
  s.index = argmin_with_ties(pool, scores);
  s.model = {params, pool.candidates[s.index].corrector};
  s.rmse = scores[s.index];
  return s;
}

ObservationGuard::ObservationGuard(std::span<const double> observations)
    : observations_(observations), years_(static_cast<int>(observations.size() / pbm::kStepsPerYear)) {}

void ObservationGuard::record(int fold, const std::string& stage, int year) const {
  if (year < 0 || year >= years_) throw InvalidInput("year " + std::to_string(year) + " out of range");
  std::lock_guard lock(mutex_);
  log_.push_back({fold, stage, year});
}

std::vector<double> ObservationGuard::visible(std::span<const int> years, const std::string& stage, int fold) const {
  std::vector<double> out(observations_.size(), kNaN);
  for (int y : years) {
    record(fold, stage, y);
    const std::size_t begin = static_cast<std::size_t>(y) * pbm::kStepsPerYear;
    std::copy_n(observations_.begin() + static_cast<std::ptrdiff_t>(begin), pbm::kStepsPerYear,
                out.begin() + static_cast<std::ptrdiff_t>(begin));
  }
  return out;
}

std::span<const double> ObservationGuard::year(int y, const std::string& stage, int fold) const {
  record(fold, stage, y);
  return observations_.subspan(static_cast<std::size_t>(y) * pbm::kStepsPerYear, pbm::kStepsPerYear);
}

std::vector<ObservationGuard::Access> ObservationGuard::log() const {
  std::lock_guard lock(mutex_);
  return log_;
}

std::string to_string(SelectionPolicy policy) {
  switch (policy) {
    case SelectionPolicy::in_sample: return "in_sample";
    case SelectionPolicy::oracle: return "oracle";
    case SelectionPolicy::both: return "both";
  }
  return "in_sample";
}

SelectionPolicy selection_policy_from_string(const std::string& text) {
  if (text == "in_sample") return SelectionPolicy::in_sample;
  if (text == "oracle") return SelectionPolicy::oracle;
  if (text == "both") return SelectionPolicy::both;
  throw InvalidInput("selection policy must be in_sample, oracle or both, got '" + text + "'");
}

void summarize(ExperimentReport& report) {
  if (report.folds.empty()) throw InvalidInput("report has no folds");
  auto mean_of = [&](double FoldResult::*field) {
    double sum = 0.0;
    for (const FoldResult& f : report.folds) sum += f.*field;
    return sum / static_cast<double>(report.folds.size());
  };
  report.pbm_mean = mean_of(&FoldResult::pbm_rmse);
  report.hpbm_mean = mean_of(&FoldResult::hpbm_rmse);
  report.percent = percent_improvement(report.pbm_mean, report.hpbm_mean);
  report.oracle_mean.reset();
  report.oracle_percent.reset();
  report.bma_mean.reset();
  report.bma_percent.reset();
  const bool has_oracle = std::all_of(report.folds.begin(), report.folds.end(),
                                      [](const FoldResult& f) { return std::isfinite(f.oracle_rmse); });
  if (has_oracle && report.selection != SelectionPolicy::in_sample) {
    report.oracle_mean = mean_of(&FoldResult::oracle_rmse);
    report.oracle_percent = percent_improvement(report.pbm_mean, *report.oracle_mean);
  }
  const bool has_bma = std::all_of(report.folds.begin(), report.folds.end(),
                                   [](const FoldResult& f) { return std::isfinite(f.bma_rmse); });
  if (has_bma) {
    report.bma_mean = mean_of(&FoldResult::bma_rmse);
    report.bma_percent = percent_improvement(report.pbm_mean, *report.bma_mean);
  }
}

namespace {

template <class F>
auto stage(const char* name, int fold, F&& body) -> decltype(body()) {
  try {
    return body();
  } catch (const StageError&) {
    throw;
  } catch (const std::exception& e) {
    throw StageError(name, fold, e.what());
  }
}

FoldResult run_fold(const io::SiteData& site, const LooConfig& config, const ObservationGuard& guard, int held_out) {
  const int years = guard.years();
  const std::size_t K = pbm::kStepsPerYear;
  std::vector<int> training_years;
  for (int y = 0; y < years; ++y) {
    if (y != held_out) training_years.push_back(y);
  }

  FoldResult fold;
  fold.held_out_year = held_out;
  fold.selection_year = training_years.back();
  fold.first_step = static_cast<std::size_t>(held_out) * K;
  const std::span<const pbm::Forcing> forcing(site.forcing);
  auto year_forcing = [&](int y) { return forcing.subspan(static_cast<std::size_t>(y) * K, K); };

  stage("calibrate", held_out, [&] {
    const std::vector<double> obs = guard.visible(training_years, "calibrate", held_out);
    if (config.calibrate) {
      calib::SceConfig sce = config.sce;
      sce.seed = derive_seed(config.seed, static_cast<std::uint64_t>(held_out), 1);
      const calib::CalibrationResult c = calib::calibrate_pbm(forcing, obs, config.base_params, config.bounds, sce);
      fold.params = c.params;
      fold.calibration_objective = c.objective;
      fold.default_objective = c.default_objective;
      fold.calibration_trace = c.sce.trace;
    } else {
      fold.params = config.base_params;
      fold.calibration_objective = calib::pbm_rmse_objective(forcing, obs, config.base_params);
      fold.default_objective = fold.calibration_objective;
    }
  });

  // Free PBM run over the whole record; the state at each year boundary is
  // where that year's rollouts start. It reads no observations.
  const std::vector<pbm::PbmState> free_run = pbm::pbm_run(pbm::spin_up(forcing, fold.params), forcing, fold.params);
  auto start_of = [&](int y) { return free_run[static_cast<std::size_t>(y) * K]; };

  CandidatePool pool;
  if (!config.ablate_corrector) {
    const hybrid::ResidualTrainingSet training_set = stage("build", held_out, [&] {
      const std::vector<double> obs = guard.visible(training_years, "build", held_out);
      return hybrid::build_training_set(obs, forcing, fold.params, config.equilibration, site.name);
    });
    fold.training_pairs = training_set.size();
    fold.equilibration_passes = training_set.equilibration_passes;
    fold.equilibration_converged = training_set.equilibration_converged;

    pool = stage("train", held_out, [&] {
      TrainOptions options = config.training;
      options.seed = derive_seed(config.seed, static_cast<std::uint64_t>(held_out), 2);
      return train_candidates(training_set, options);
    });
    fold.failures = pool.failures;

    stage("select", held_out, [&] {
      const Series series{year_forcing(fold.selection_year), guard.year(fold.selection_year, "select", held_out),
                          start_of(fold.selection_year)};
      fold.selected = select_by_dynamical_rmse(pool, series, fold.params).index;
    });
  }

  stage("evaluate", held_out, [&] {
    const std::span<const double> obs = guard.year(held_out, "evaluate", held_out);
    const std::span<const pbm::Forcing> f = year_forcing(held_out);
    const pbm::PbmState initial = start_of(held_out);
    const Series series{f, obs, initial};

    const hybrid::RolloutResult pbm_only = hybrid::rollout(initial, f, {fold.params, {}});
    fold.pbm_rmse = rmse(std::span<const double>(pbm_only.theta_top).first(K), obs);
    fold.theta_obs.assign(obs.begin(), obs.end());
    fold.theta_pbm.assign(pbm_only.theta_top.begin(), pbm_only.theta_top.begin() + static_cast<std::ptrdiff_t>(K));
    fold.precip.resize(K);
    for (std::size_t t = 0; t < K; ++t) fold.precip[t] = f[t].precip;

    if (config.ablate_corrector) {
      fold.hpbm_rmse = fold.in_sample_rmse = fold.pbm_rmse;
      fold.theta_hpbm = fold.theta_pbm;
      return;
    }

    std::vector<double> held_out_scores;
    for (const Candidate& c : pool.candidates) {
      held_out_scores.push_back(dynamical_rmse(c.corrector, series, fold.params));
      fold.candidates.push_back(
          {c.pseudo_inputs, c.restart, c.seed, c.regression_rmse, c.selection_rmse, held_out_scores.back()});
    }
    fold.in_sample_rmse = held_out_scores[*fold.selected];
    if (config.selection != SelectionPolicy::in_sample) {
      fold.oracle_selected = argmin_with_ties(pool, held_out_scores);
      fold.oracle_rmse = held_out_scores[*fold.oracle_selected];
    }
    const std::size_t headline = config.selection == SelectionPolicy::oracle ? *fold.oracle_selected : *fold.selected;
    fold.hpbm_rmse = held_out_scores[headline];
    const hybrid::RolloutResult hpbm = hybrid::rollout(initial, f, {fold.params, pool.candidates[headline].corrector});
    fold.theta_hpbm.assign(hpbm.theta_top.begin(), hpbm.theta_top.begin() + static_cast<std::ptrdiff_t>(K));

    if (config.bma) {
      std::vector<double> selection_scores;
      for (const Candidate& c : pool.candidates) selection_scores.push_back(c.selection_rmse);
      fold.bma_temperature = config.bma_temperature.value_or(avg::default_temperature(selection_scores));
      const avg::ModelWeights w = avg::compute_weights(selection_scores, fold.bma_temperature);
      fold.bma_weights = w.weights;
      const hybrid::RolloutResult r =
          avg::bma_rollout(pool.correctors(), w, initial, f, fold.params, config.bma_mode);
      fold.bma_rmse = rmse(std::span<const double>(r.theta_top).first(K), obs);
    }
  });
  return fold;
}

}  // namespace

ExperimentReport loo_cross_validate(const io::SiteData& site, const LooConfig& config, ObservationGuard* guard) {
  if (site.observations.size() != site.forcing.size()) throw InvalidInput("site series are misaligned");
  if (site.size() % pbm::kStepsPerYear != 0) {
    throw InvalidInput("site '" + site.name + "' does not hold whole years (" + std::to_string(site.size()) +
                       " steps)");
  }
  if (site.years() < 2) throw InvalidInput("leave-one-out needs at least 2 years, site '" + site.name + "' has " +
                                           std::to_string(site.years()));
  config.base_params.validate();

  ObservationGuard local(site.observations);
  const ObservationGuard& g = guard ? *guard : local;

  ExperimentReport report;
  report.site = site.name;
  report.years = site.years();
  report.selection = config.selection;
  for (int y = 0; y < report.years; ++y) report.folds.push_back(run_fold(site, config, g, y));
  summarize(report);
  return report;
}

}  // namespace hpbm::train
