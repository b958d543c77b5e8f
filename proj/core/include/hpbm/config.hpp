#pragma once

// Experiment configuration, read from JSON. Every object rejects unknown
// keys; omitted keys keep the defaults below. Relative paths resolve
// against the directory holding the config file.
//
//   {
//     "seed": 7,
//     "output_dir": "runs/demo",
//     "sites": [{"name": "s1", "path": "data/s1.csv"}],
//     "synth": {"output_dir": "data", "noise_sd": 0.005,
//               "sites": [{"name": "s1", "years": 4}],
//               "truth": {...PbmParams...}, "climate": {...}},
//     "pbm": {...PbmParams...},
//     "calibration": {"enabled": true, "bounds": [{"name": ..., "lower": ..., "upper": ...}],
//                     "sce": {"n_complexes": 4, "max_evals": 3000, ...}},
//     "equilibration": {"max_passes": 10, "tol": 1e-6},
//     "training": {"counts": [8, 16, 32, 64], "restarts": 10, "max_iterations": 200,
//                  "max_training_points": 6000, "optimize_pseudo_inputs": true,
//                  "noise_floor": 1e-3},
//     "selection": "in_sample",
//     "bma": {"enabled": false, "temperature": null, "mode": "shared_state"},
//     "ablate_corrector": false
//   }

#include "hpbm/synthetic.hpp"
#include "hpbm/training.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace hpbm::cfg {

struct SiteEntry {
  std::string name;
  std::filesystem::path path;
};

struct SynthSite {
  std::string name;
  int years = 4;
};

struct SynthConfig {
  std::filesystem::path output_dir;
  double noise_sd = 0.005;
  std::vector<SynthSite> sites;
  pbm::PbmParams truth;  // degree-day melt
  pbm::ClimateConfig climate;
};

struct ExperimentConfig {
  std::uint64_t seed = 0;
  std::filesystem::path output_dir;
  std::vector<SiteEntry> sites;
  SynthConfig synth;
  /// Its seed mirrors `seed`; base_params default to threshold melt.
  train::LooConfig loo;
};

/// Defaults with the PBM on threshold melt and a small synthetic site list.
ExperimentConfig default_config();

/// Throws InvalidInput naming the offending key path.
ExperimentConfig parse_config(std::string_view json_text, const std::filesystem::path& base_dir = {});
ExperimentConfig load_config(const std::filesystem::path& path);

/// Canonical JSON text for the config (paths as given, sorted keys).
std::string dump_config(const ExperimentConfig& config);

/// JSON object text for a parameter set.
std::string params_json(const pbm::PbmParams& params);

/// Seed for synthetic site `index` of a config.
std::uint64_t synth_site_seed(std::uint64_t seed, std::size_t index);

}  // namespace hpbm::cfg
