#pragma once

// The command implementations behind the hpbm executable.
//
// A run directory holds:
//   config.json                      resolved configuration
//   run.json                         every fold result at full precision
//   report.csv                       one row per site
//   fold_<site>_<year>.csv           held-out series (timestamp, obs, PBM, HPBM, precip)
//   calibration_<site>_<year>.csv    SCE trace per fold

#include "hpbm/config.hpp"
#include "hpbm/training.hpp"

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace hpbm::cli {

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::filesystem::path> out;
  bool ablate_corrector = false;
  std::optional<train::SelectionPolicy> selection;
};

void apply_overrides(cfg::ExperimentConfig& config, const Overrides& overrides);

/// Writes one CSV per synthetic site plus truth.json into `config.synth.output_dir`
/// (falling back to `config.output_dir`). Returns the CSV paths.
std::vector<std::filesystem::path> cmd_synth(const cfg::ExperimentConfig& config, std::ostream& log);

/// Calibrates the PBM on every year of each site; writes
/// calibration_<site>.json and calibration_<site>.csv into a fresh output directory.
void cmd_calibrate(const cfg::ExperimentConfig& config, std::ostream& log);

/// Loads every site before any compute, runs leave-one-out per site and
/// writes the run directory. The directory is assembled under a temporary
/// name and renamed on success, so a failed run leaves no report behind.
std::vector<train::ExperimentReport> cmd_run(const cfg::ExperimentConfig& config, std::ostream& log);

/// Prints the site table and writes series_<site>_<year>.csv into the run
/// directory. Throws InvalidInput on a directory without run.json.
void cmd_report(const std::filesystem::path& run_dir, std::ostream& out);

/// One row per site: Site | #Years | PBM<RMSE> | HPBM<RMSE> | %Improvement,
/// followed by oracle and averaged columns when present.
std::string render_table(const std::vector<train::ExperimentReport>& reports);

/// run.json round trip. Series and traces are not part of it.
std::string reports_to_json(const std::vector<train::ExperimentReport>& reports);
std::vector<train::ExperimentReport> reports_from_json(const std::string& text);

}  // namespace hpbm::cli
