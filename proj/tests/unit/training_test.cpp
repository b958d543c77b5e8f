#include "hpbm/error.hpp"
#include "hpbm/synthetic.hpp"
#include "hpbm/training.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <set>
#include <vector>

using namespace hpbm;
using train::percent_improvement;

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

struct Row {
  int site;
  double noah;
  double hpbm;
  int percent;
};

// Table 1 of the source study: site, Noah RMSE, HPBM RMSE, % improvement.
const Row kTable1[] = {{1, 0.053, 0.041, 23}, {2, 0.061, 0.02, 67},   {5, 0.033, 0.02, 39},
                       {7, 0.084, 0.08, 5},   {11, 0.027, 0.017, 37}, {13, 0.043, 0.037, 14},
                       {14, 0.032, 0.012, 62}, {17, 0.04, 0.036, 10}, {18, 0.04, 0.013, 68}};

io::SiteData small_site(double noise = 0.005, int years = 2) {
  pbm::PbmParams truth;
  const auto syn = pbm::generate_synthetic_site(21, years, truth, noise);
  io::SiteData site;
  site.name = "tiny";
  site.forcing = syn.forcing;
  site.observations = syn.observations;
  return site;
}

train::LooConfig small_config() {
  train::LooConfig c;
  c.seed = 17;
  c.base_params.melt_mode = pbm::MeltMode::flawed_threshold;
  c.sce.max_evals = 80;
  c.training.counts = {4, 6};
  c.training.restarts = 2;
  c.training.max_iterations = 15;
  c.training.max_training_points = 400;
  c.selection = train::SelectionPolicy::both;
  c.bma = true;
  return c;
}

hybrid::ResidualTrainingSet tiny_training_set(std::size_t n) {
  const auto site = small_site();
  pbm::PbmParams p;
  p.melt_mode = pbm::MeltMode::flawed_threshold;
  auto ts = hybrid::build_training_set(std::span(site.observations).first(n), std::span(site.forcing).first(n), p);
  return ts;
}

}  // namespace

TEST(Rmse, Examples) {
  const std::vector<double> a{0.1, 0.2, 0.3};
  EXPECT_EQ(train::rmse(a, a), 0.0);
  const std::vector<double> shifted{0.15, 0.25, 0.35};
  EXPECT_NEAR(train::rmse(shifted, a), 0.05, 1e-15);
  EXPECT_NEAR(train::rmse(std::vector<double>{0.0, 0.0}, std::vector<double>{3.0, 4.0}), std::sqrt(12.5), 1e-15);
  EXPECT_NEAR(std::sqrt(12.5), 3.5355, 1e-4);
}

TEST(Rmse, SkipsMissingObservations) {
  EXPECT_EQ(train::rmse(std::vector<double>{1.0, 5.0}, std::vector<double>{1.0, kNaN}), 0.0);
  EXPECT_THROW(train::rmse(std::vector<double>{1.0}, std::vector<double>{kNaN}), InvalidInput);
  EXPECT_THROW(train::rmse(std::vector<double>{1.0}, std::vector<double>{1.0, 2.0}), InvalidInput);
}

TEST(PercentImprovement, ReproducesTable1) {
  for (const Row& r : kTable1) {
    EXPECT_EQ(percent_improvement(r.noah, r.hpbm), r.percent) << "site " << r.site;
  }
}

TEST(PercentImprovement, ZeroAndErrors) {
  EXPECT_EQ(percent_improvement(0.05, 0.05), 0);
  EXPECT_LT(percent_improvement(0.05, 0.06), 0);
  EXPECT_THROW(percent_improvement(0.0, 0.01), InvalidInput);
}

TEST(DeriveSeed, DeterministicAndDistinct) {
  EXPECT_EQ(train::derive_seed(1, 2, 3), train::derive_seed(1, 2, 3));
  std::set<std::uint64_t> seen;
  for (std::uint64_t a = 0; a < 20; ++a) {
    for (std::uint64_t b = 0; b < 20; ++b) seen.insert(train::derive_seed(5, a, b));
  }
  EXPECT_EQ(seen.size(), 400u);
}

TEST(TrainCandidates, DegenerateSingleCandidate) {
  const auto ts = tiny_training_set(41);
  const int n = static_cast<int>(ts.size());
  train::TrainOptions o;
  o.counts = {n};
  o.restarts = 1;
  o.seed = 3;
  o.max_iterations = 20;
  const auto pool = train::train_candidates(ts, o);
  ASSERT_EQ(pool.candidates.size(), 1u);
  const auto direct = spgp::fit_spgp(ts.data, n, {.seed = pool.candidates[0].seed, .max_iterations = 20});
  EXPECT_EQ(pool.candidates[0].corrector.sparse()->weights(), direct.weights());
}

TEST(TrainCandidates, DeterministicPool) {
  const auto ts = tiny_training_set(600);
  train::TrainOptions o;
  o.counts = {4, 8};
  o.restarts = 2;
  o.seed = 9;
  o.max_iterations = 20;
  const auto a = train::train_candidates(ts, o);
  const auto b = train::train_candidates(ts, o);
  ASSERT_EQ(a.candidates.size(), 4u);
  for (std::size_t i = 0; i < a.candidates.size(); ++i) {
    EXPECT_EQ(a.candidates[i].seed, b.candidates[i].seed);
    EXPECT_EQ(a.candidates[i].regression_rmse, b.candidates[i].regression_rmse);
    EXPECT_EQ(a.candidates[i].corrector.sparse()->weights(), b.candidates[i].corrector.sparse()->weights());
  }
}

TEST(TrainCandidates, FailuresAreRecordedNotFatal) {
  const auto ts = tiny_training_set(30);
  train::TrainOptions o;
  o.counts = {3, 1000};
  o.restarts = 1;
  o.max_iterations = 5;
  const auto pool = train::train_candidates(ts, o);
  EXPECT_EQ(pool.candidates.size(), 1u);
  ASSERT_EQ(pool.failures.size(), 1u);
  EXPECT_EQ(pool.failures[0].pseudo_inputs, 1000);
  o.counts = {1000};
  EXPECT_THROW(train::train_candidates(ts, o), FitError);
}

TEST(TrainCandidates, ThinningKeepsRegressionScoreOnFullSet) {
  const auto ts = tiny_training_set(2000);
  train::TrainOptions o;
  o.counts = {4};
  o.restarts = 1;
  o.max_iterations = 10;
  o.max_training_points = 100;
  const auto pool = train::train_candidates(ts, o);
  std::vector<double> predicted, targets;
  for (Eigen::Index i = 0; i < ts.data.size(); ++i) {
    predicted.push_back(pool.candidates[0].corrector.mean(ts.data.inputs.row(i).transpose()));
    targets.push_back(ts.data.targets[i]);
  }
  EXPECT_EQ(pool.candidates[0].regression_rmse, train::rmse(predicted, targets));
}

TEST(Selection, TieGoesToFewerPseudoInputsThenLowerSeed) {
  train::CandidatePool pool;
  pool.candidates.resize(3);
  pool.candidates[0].pseudo_inputs = 16;
  pool.candidates[0].seed = 1;
  pool.candidates[1].pseudo_inputs = 8;
  pool.candidates[1].seed = 7;
  pool.candidates[2].pseudo_inputs = 8;
  pool.candidates[2].seed = 3;
  EXPECT_EQ(train::argmin_with_ties(pool, std::vector<double>{0.1, 0.1, 0.1}), 2u);
  EXPECT_EQ(train::argmin_with_ties(pool, std::vector<double>{0.05, 0.1, 0.1}), 0u);
  EXPECT_EQ(train::argmin_with_ties(pool, std::vector<double>{kNaN, 0.2, kNaN}), 1u);
}

TEST(Selection, SingleCandidatePool) {
  const auto site = small_site();
  train::CandidatePool pool;
  pool.candidates.resize(1);
  const pbm::PbmParams p;
  const std::size_t K = pbm::kStepsPerYear;
  const train::Series s{std::span(site.forcing).first(K), std::span(site.observations).first(K), {0.3, 0.25, 0.0}};
  const auto sel = train::select_by_dynamical_rmse(pool, s, p);
  EXPECT_EQ(sel.index, 0u);
  EXPECT_TRUE(std::isfinite(pool.candidates[0].selection_rmse));
  EXPECT_EQ(sel.rmse, pool.candidates[0].selection_rmse);
}

TEST(Selection, TrainedCorrectorBeatsZeroOnItsYear) {
  // Truth with degree-day melt, model with threshold melt, noise-free data.
  pbm::PbmParams truth;
  pbm::PbmParams model = truth;
  model.melt_mode = pbm::MeltMode::flawed_threshold;
  const auto syn = pbm::generate_synthetic_site(31, 2, truth, 0.0);
  const std::size_t K = pbm::kStepsPerYear;
  const std::span<const pbm::Forcing> f = std::span(syn.forcing).subspan(K, K);
  const std::span<const double> y = std::span(syn.observations).subspan(K, K);
  const auto ts = hybrid::build_training_set(y, f, model);
  train::TrainOptions o;
  o.counts = {16};
  o.restarts = 1;
  o.seed = 4;
  o.max_iterations = 100;
  auto pool = train::train_candidates(ts, o);
  pool.candidates.insert(pool.candidates.begin(), train::Candidate{});
  pool.candidates[0].pseudo_inputs = 0;
  const train::Series s{f, y, syn.truth[K]};
  const auto sel = train::select_by_dynamical_rmse(pool, s, model);
  EXPECT_EQ(sel.index, 1u) << "zero " << pool.candidates[0].selection_rmse << " trained "
                           << pool.candidates[1].selection_rmse;
  for (const auto& c : pool.candidates) EXPECT_LE(sel.rmse, c.selection_rmse);
}

TEST(ObservationGuard, MasksAndLogs) {
  std::vector<double> obs(3 * pbm::kStepsPerYear, 0.2);
  train::ObservationGuard g(obs);
  EXPECT_EQ(g.years(), 3);
  const std::vector<int> years{0, 2};
  const auto v = g.visible(years, "calibrate", 1);
  EXPECT_EQ(v[0], 0.2);
  EXPECT_TRUE(std::isnan(v[pbm::kStepsPerYear]));
  EXPECT_EQ(v[2 * pbm::kStepsPerYear], 0.2);
  EXPECT_EQ(g.year(1, "evaluate", 1).size(), static_cast<std::size_t>(pbm::kStepsPerYear));
  const auto log = g.log();
  ASSERT_EQ(log.size(), 3u);
  EXPECT_EQ(log[2].stage, "evaluate");
  EXPECT_EQ(log[2].year, 1);
  EXPECT_THROW(g.year(3, "evaluate", 0), InvalidInput);
}

TEST(SelectionPolicy, RoundTrip) {
  for (auto p : {train::SelectionPolicy::in_sample, train::SelectionPolicy::oracle, train::SelectionPolicy::both}) {
    EXPECT_EQ(train::selection_policy_from_string(train::to_string(p)), p);
  }
  EXPECT_THROW(train::selection_policy_from_string("best"), InvalidInput);
}

class LooTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    site_ = new io::SiteData(small_site());
    guard_ = new train::ObservationGuard(site_->observations);
    report_ = new train::ExperimentReport(train::loo_cross_validate(*site_, small_config(), guard_));
  }
  static void TearDownTestSuite() {
    delete report_;
    delete guard_;
    delete site_;
  }
  static io::SiteData* site_;
  static train::ObservationGuard* guard_;
  static train::ExperimentReport* report_;
};

io::SiteData* LooTest::site_ = nullptr;
train::ObservationGuard* LooTest::guard_ = nullptr;
train::ExperimentReport* LooTest::report_ = nullptr;

TEST_F(LooTest, NoLeakageOfHeldOutYear) {
  const auto log = guard_->log();
  ASSERT_FALSE(log.empty());
  std::set<std::string> stages;
  for (const auto& a : log) {
    stages.insert(a.stage);
    if (a.year == a.fold) EXPECT_EQ(a.stage, "evaluate");
    else EXPECT_NE(a.stage, "evaluate");
  }
  EXPECT_EQ(stages, (std::set<std::string>{"calibrate", "build", "select", "evaluate"}));
}

TEST_F(LooTest, ReportConsistency) {
  const auto& r = *report_;
  ASSERT_EQ(r.folds.size(), 2u);
  double pbm = 0.0, hpbm = 0.0;
  for (const auto& f : r.folds) {
    pbm += f.pbm_rmse;
    hpbm += f.hpbm_rmse;
    EXPECT_EQ(f.selection_year, f.held_out_year == 1 ? 0 : 1);
    EXPECT_EQ(f.theta_hpbm.size(), static_cast<std::size_t>(pbm::kStepsPerYear));
    EXPECT_LE(f.calibration_objective, f.default_objective);
  }
  EXPECT_EQ(r.pbm_mean, pbm / 2.0);
  EXPECT_EQ(r.hpbm_mean, hpbm / 2.0);
  EXPECT_EQ(r.percent, percent_improvement(r.pbm_mean, r.hpbm_mean));
  ASSERT_TRUE(r.oracle_mean.has_value());
  ASSERT_TRUE(r.bma_mean.has_value());
}

TEST_F(LooTest, SelectionDominance) {
  for (const auto& f : report_->folds) {
    ASSERT_TRUE(f.selected.has_value());
    const double chosen = f.candidates[*f.selected].selection_rmse;
    for (const auto& c : f.candidates) EXPECT_LE(chosen, c.selection_rmse);
    const double oracle = f.candidates[*f.oracle_selected].held_out_rmse;
    for (const auto& c : f.candidates) EXPECT_LE(oracle, c.held_out_rmse);
    EXPECT_EQ(f.hpbm_rmse, f.in_sample_rmse);
  }
}

TEST_F(LooTest, BitIdenticalRerun) {
  const auto again = train::loo_cross_validate(*site_, small_config());
  ASSERT_EQ(again.folds.size(), report_->folds.size());
  for (std::size_t i = 0; i < again.folds.size(); ++i) {
    EXPECT_EQ(again.folds[i].hpbm_rmse, report_->folds[i].hpbm_rmse);
    EXPECT_EQ(again.folds[i].theta_hpbm, report_->folds[i].theta_hpbm);
    EXPECT_EQ(again.folds[i].bma_rmse, report_->folds[i].bma_rmse);
  }
}

TEST(Loo, AblationGivesZeroImprovement) {
  auto c = small_config();
  c.ablate_corrector = true;
  const auto r = train::loo_cross_validate(small_site(), c);
  EXPECT_EQ(r.percent, 0);
  EXPECT_EQ(r.pbm_mean, r.hpbm_mean);
  for (const auto& f : r.folds) EXPECT_EQ(f.theta_hpbm, f.theta_pbm);
}

TEST(Loo, RejectsShortOrPartialRecords) {
  const auto c = small_config();
  io::SiteData one = small_site();
  one.forcing.resize(pbm::kStepsPerYear);
  one.observations.resize(pbm::kStepsPerYear);
  EXPECT_THROW(train::loo_cross_validate(one, c), InvalidInput);
  io::SiteData partial = small_site();
  partial.forcing.pop_back();
  partial.observations.pop_back();
  EXPECT_THROW(train::loo_cross_validate(partial, c), InvalidInput);
}

TEST(Loo, StageFailuresNameStageAndFold) {
  auto c = small_config();
  c.training.counts = {100000};
  c.training.max_training_points = 0;
  c.calibrate = false;
  try {
    train::loo_cross_validate(small_site(), c);
    FAIL() << "expected StageError";
  } catch (const StageError& e) {
    EXPECT_EQ(e.stage(), "train");
    EXPECT_EQ(e.fold(), 0);
  }
}
