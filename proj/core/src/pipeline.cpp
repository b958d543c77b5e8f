#include "hpbm/pipeline.hpp"

#include "hpbm/error.hpp"
#include "hpbm/site_io.hpp"
#include "hpbm/synthetic.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <ostream>
#include <sstream>

namespace hpbm::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

double number_from(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return train::kNaN;
  if (!j.at(key).is_number()) throw InvalidInput(std::string("run.json: '") + key + "' is not a number");
  return j.at(key).get<double>();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InvalidInput("cannot write " + path.string());
  out << text;
  if (!out) throw InvalidInput("write failed for " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidInput("cannot open " + path.string());
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

std::string fixed3(double v) {
  if (!std::isfinite(v)) return "nan";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

fs::path fresh_staging_dir(const fs::path& out) {
  if (out.empty()) throw InvalidInput("no output directory: set output_dir or pass --out");
  if (fs::exists(out) && !(fs::is_directory(out) && fs::is_empty(out))) {
    throw InvalidInput("output directory " + out.string() + " already exists and is not empty");
  }
  fs::path staging = out;
  staging += ".partial";
  if (fs::exists(staging)) throw InvalidInput("stale staging directory " + staging.string() + "; remove it first");
  fs::create_directories(staging);
  return staging;
}

void publish(const fs::path& staging, const fs::path& out) {
  if (fs::exists(out)) fs::remove(out);  // empty by the check above
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  fs::rename(staging, out);
}

template <class F>
void staged(const fs::path& out, F&& body) {
  const fs::path staging = fresh_staging_dir(out);
  try {
    body(staging);
  } catch (...) {
    std::error_code ignored;
    fs::remove_all(staging, ignored);
    throw;
  }
  publish(staging, out);
}

std::vector<io::SiteData> load_sites(const cfg::ExperimentConfig& config) {
  if (config.sites.empty()) throw StageError("load", -1, "config lists no sites");
  std::vector<io::SiteData> sites;
  for (const cfg::SiteEntry& entry : config.sites) {
    try {
      sites.push_back(io::read_site_csv(entry.path, entry.name));
    } catch (const std::exception& e) {
      throw StageError("load", -1, entry.path.string() + ": " + e.what());
    }
  }
  return sites;
}

std::string series_csv(const io::SiteData& site, const train::FoldResult& f) {
  std::string s = "timestamp,theta_obs,theta_pbm,theta_hpbm,precip_mm\n";
  for (std::size_t t = 0; t < f.theta_pbm.size(); ++t) {
    s += io::format_rfc3339(site.time_at(f.first_step + t));
    s += ',';
    if (std::isfinite(f.theta_obs[t])) s += io::format_double(f.theta_obs[t]);
    s += ',' + io::format_double(f.theta_pbm[t]) + ',' + io::format_double(f.theta_hpbm[t]) + ',' +
         io::format_double(f.precip[t]) + '\n';
  }
  return s;
}

std::string trace_csv(const std::vector<calib::SceTraceEntry>& trace) {
  std::string s = "shuffle,best_value,eval_count\n";
  for (const calib::SceTraceEntry& e : trace) {
    s += std::to_string(e.shuffle) + ',' + io::format_double(e.best_value) + ',' + std::to_string(e.eval_count) + '\n';
  }
  return s;
}

std::string report_csv(const std::vector<train::ExperimentReport>& reports) {
  std::string s = "site,years,pbm_rmse,hpbm_rmse,percent_improvement,oracle_hpbm_rmse,oracle_percent,bma_rmse,bma_percent\n";
  for (const train::ExperimentReport& r : reports) {
    s += r.site + ',' + std::to_string(r.years) + ',' + io::format_double(r.pbm_mean) + ',' +
         io::format_double(r.hpbm_mean) + ',' + std::to_string(r.percent) + ',';
    if (r.oracle_mean) s += io::format_double(*r.oracle_mean);
    s += ',';
    if (r.oracle_percent) s += std::to_string(*r.oracle_percent);
    s += ',';
    if (r.bma_mean) s += io::format_double(*r.bma_mean);
    s += ',';
    if (r.bma_percent) s += std::to_string(*r.bma_percent);
    s += '\n';
  }
  return s;
}

json params_to(const pbm::PbmParams& p) { return json::parse(cfg::params_json(p)); }

pbm::PbmParams params_from(const json& j) {
  pbm::PbmParams p;
  p.theta_saturation = j.at("theta_saturation").get<double>();
  p.theta_residual = j.at("theta_residual").get<double>();
  p.theta_field_capacity = j.at("theta_field_capacity").get<double>();
  p.top_depth = j.at("top_depth").get<double>();
  p.lower_depth = j.at("lower_depth").get<double>();
  p.infiltration_rate_max = j.at("infiltration_rate_max").get<double>();
  p.percolation_coeff = j.at("percolation_coeff").get<double>();
  p.et_partition = j.at("et_partition").get<double>();
  p.melt_mode = pbm::melt_mode_from_string(j.at("melt_mode").get<std::string>());
  p.melt_threshold = j.at("melt_threshold").get<double>();
  p.degree_day_factor = j.at("degree_day_factor").get<double>();
  return p;
}

}  // namespace

void apply_overrides(cfg::ExperimentConfig& config, const Overrides& o) {
  if (o.seed) {
    config.seed = *o.seed;
    config.loo.seed = *o.seed;
  }
  if (o.out) config.output_dir = *o.out;
  if (o.ablate_corrector) config.loo.ablate_corrector = true;
  if (o.selection) config.loo.selection = *o.selection;
}

std::vector<fs::path> cmd_synth(const cfg::ExperimentConfig& config, std::ostream& log) {
  const fs::path dir = !config.synth.output_dir.empty() ? config.synth.output_dir : config.output_dir;
  if (dir.empty()) throw InvalidInput("no synth output directory: set synth.output_dir or pass --out");
  if (config.synth.sites.empty()) throw InvalidInput("config.synth.sites is empty");
  fs::create_directories(dir);

  std::vector<fs::path> written;
  json sidecar{{"seed", config.seed},
               {"noise_sd", config.synth.noise_sd},
               {"truth", params_to(config.synth.truth)},
               {"sites", json::array()}};
  for (std::size_t i = 0; i < config.synth.sites.size(); ++i) {
    const cfg::SynthSite& s = config.synth.sites[i];
    const std::uint64_t seed = cfg::synth_site_seed(config.seed, i);
    const pbm::SyntheticSite synthetic =
        pbm::generate_synthetic_site(seed, s.years, config.synth.truth, config.synth.noise_sd, config.synth.climate);
    io::SiteData site;
    site.name = s.name;
    site.start_time = io::parse_rfc3339("2001-01-01T00:00:00Z");
    site.forcing = synthetic.forcing;
    site.observations = synthetic.observations;
    const fs::path path = dir / (s.name + ".csv");
    io::write_site_csv(path, site);
    written.push_back(path);
    sidecar["sites"].push_back({{"name", s.name}, {"years", s.years}, {"seed", seed}, {"file", s.name + ".csv"}});
    log << "synth: wrote " << path.string() << " (" << site.size() << " rows)\n";
  }
  write_text(dir / "truth.json", sidecar.dump(2) + "\n");
  return written;
}

void cmd_calibrate(const cfg::ExperimentConfig& config, std::ostream& log) {
  const std::vector<io::SiteData> sites = load_sites(config);
  staged(config.output_dir, [&](const fs::path& staging) {
    for (const io::SiteData& site : sites) {
      calib::SceConfig sce = config.loo.sce;
      sce.seed = train::derive_seed(config.seed, 0x63616c6962ULL);
      calib::CalibrationResult c;
      try {
        c = calib::calibrate_pbm(site.forcing, site.observations, config.loo.base_params, config.loo.bounds, sce);
      } catch (const std::exception& e) {
        throw StageError("calibrate", -1, site.name + ": " + e.what());
      }
      const json out{{"site", site.name},
                     {"params", params_to(c.params)},
                     {"objective", c.objective},
                     {"default_objective", c.default_objective},
                     {"eval_count", c.sce.eval_count},
                     {"converged", c.sce.converged}};
      write_text(staging / ("calibration_" + site.name + ".json"), out.dump(2) + "\n");
      write_text(staging / ("calibration_" + site.name + ".csv"), trace_csv(c.sce.trace));
      log << "calibrate: " << site.name << " rmse " << io::format_double(c.default_objective) << " -> "
          << io::format_double(c.objective) << " in " << c.sce.eval_count << " evaluations\n";
    }
  });
}

std::vector<train::ExperimentReport> cmd_run(const cfg::ExperimentConfig& config, std::ostream& log) {
  const std::vector<io::SiteData> sites = load_sites(config);
  for (const io::SiteData& site : sites) {
    if (site.size() % pbm::kStepsPerYear != 0 || site.years() < 2) {
      throw StageError("load", -1, "site '" + site.name + "' must hold at least 2 whole years of 17520 steps");
    }
  }
  if (config.output_dir.empty()) throw StageError("load", -1, "no output directory: set output_dir or pass --out");

  std::vector<train::ExperimentReport> reports;
  staged(config.output_dir, [&](const fs::path& staging) {
    for (const io::SiteData& site : sites) {
      log << "run: " << site.name << ", " << site.years() << " folds\n";
      reports.push_back(train::loo_cross_validate(site, config.loo));
      const train::ExperimentReport& r = reports.back();
      for (const train::FoldResult& f : r.folds) {
        const std::string tag = site.name + "_" + std::to_string(f.held_out_year);
        write_text(staging / ("fold_" + tag + ".csv"), series_csv(site, f));
        if (!f.calibration_trace.empty()) {
          write_text(staging / ("calibration_" + tag + ".csv"), trace_csv(f.calibration_trace));
        }
        log << "  fold " << f.held_out_year << ": pbm " << fixed3(f.pbm_rmse) << " hpbm " << fixed3(f.hpbm_rmse)
            << "\n";
      }
    }
    write_text(staging / "config.json", cfg::dump_config(config) + "\n");
    write_text(staging / "run.json", reports_to_json(reports) + "\n");
    write_text(staging / "report.csv", report_csv(reports));
  });
  return reports;
}

std::string render_table(const std::vector<train::ExperimentReport>& reports) {
  bool oracle = false;
  bool bma = false;
  for (const auto& r : reports) {
    oracle = oracle || r.oracle_mean.has_value();
    bma = bma || r.bma_mean.has_value();
  }
  std::vector<std::vector<std::string>> rows;
  std::vector<std::string> header{"Site", "#Years", "PBM<RMSE>", "HPBM<RMSE>", "%Improvement"};
  if (oracle) {
    header.push_back("Oracle HPBM<RMSE>");
    header.push_back("Oracle %Improvement");
  }
  if (bma) {
    header.push_back("BMA<RMSE>");
    header.push_back("BMA %Improvement");
  }
  rows.push_back(header);
  for (const auto& r : reports) {
    std::vector<std::string> row{r.site, std::to_string(r.years), fixed3(r.pbm_mean), fixed3(r.hpbm_mean),
                                 std::to_string(r.percent)};
    if (oracle) {
      row.push_back(r.oracle_mean ? fixed3(*r.oracle_mean) : "-");
      row.push_back(r.oracle_percent ? std::to_string(*r.oracle_percent) : "-");
    }
    if (bma) {
      row.push_back(r.bma_mean ? fixed3(*r.bma_mean) : "-");
      row.push_back(r.bma_percent ? std::to_string(*r.bma_percent) : "-");
    }
    rows.push_back(std::move(row));
  }
  std::vector<std::size_t> width(header.size(), 0);
  for (const auto& row : rows) {
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
  }
  std::string out;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t c = 0; c < rows[i].size(); ++c) {
      if (c > 0) out += " | ";
      const std::string& cell = rows[i][c];
      if (c == 0) {
        out += cell + std::string(width[c] - cell.size(), ' ');
      } else {
        out += std::string(width[c] - cell.size(), ' ') + cell;
      }
    }
    while (!out.empty() && out.back() == ' ') out.pop_back();
    out += '\n';
    if (i == 0) {
      for (std::size_t c = 0; c < width.size(); ++c) {
        if (c > 0) out += "-|-";
        out += std::string(width[c], '-');
      }
      out += '\n';
    }
  }
  return out;
}

std::string reports_to_json(const std::vector<train::ExperimentReport>& reports) {
  json sites = json::array();
  for (const train::ExperimentReport& r : reports) {
    json folds = json::array();
    for (const train::FoldResult& f : r.folds) {
      json candidates = json::array();
      for (const train::CandidateScore& c : f.candidates) {
        candidates.push_back({{"pseudo_inputs", c.pseudo_inputs},
                              {"restart", c.restart},
                              {"seed", c.seed},
                              {"regression_rmse", number_or_null(c.regression_rmse)},
                              {"selection_rmse", number_or_null(c.selection_rmse)},
                              {"held_out_rmse", number_or_null(c.held_out_rmse)}});
      }
      json failures = json::array();
      for (const train::FailedFit& e : f.failures) {
        failures.push_back(
            {{"pseudo_inputs", e.pseudo_inputs}, {"restart", e.restart}, {"seed", e.seed}, {"message", e.message}});
      }
      json weights = json::array();
      for (double w : f.bma_weights) weights.push_back(w);
      folds.push_back({
          {"held_out_year", f.held_out_year},
          {"selection_year", f.selection_year},
          {"params", params_to(f.params)},
          {"calibration_objective", number_or_null(f.calibration_objective)},
          {"default_objective", number_or_null(f.default_objective)},
          {"training_pairs", f.training_pairs},
          {"equilibration_passes", f.equilibration_passes},
          {"equilibration_converged", f.equilibration_converged},
          {"candidates", candidates},
          {"failures", failures},
          {"selected", f.selected ? json(*f.selected) : json(nullptr)},
          {"oracle_selected", f.oracle_selected ? json(*f.oracle_selected) : json(nullptr)},
          {"pbm_rmse", number_or_null(f.pbm_rmse)},
          {"hpbm_rmse", number_or_null(f.hpbm_rmse)},
          {"in_sample_rmse", number_or_null(f.in_sample_rmse)},
          {"oracle_rmse", number_or_null(f.oracle_rmse)},
          {"bma_rmse", number_or_null(f.bma_rmse)},
          {"bma_temperature", number_or_null(f.bma_temperature)},
          {"bma_weights", weights},
      });
    }
    sites.push_back({
        {"site", r.site},
        {"years", r.years},
        {"selection", train::to_string(r.selection)},
        {"pbm_mean", number_or_null(r.pbm_mean)},
        {"hpbm_mean", number_or_null(r.hpbm_mean)},
        {"percent", r.percent},
        {"oracle_mean", r.oracle_mean ? json(*r.oracle_mean) : json(nullptr)},
        {"oracle_percent", r.oracle_percent ? json(*r.oracle_percent) : json(nullptr)},
        {"bma_mean", r.bma_mean ? json(*r.bma_mean) : json(nullptr)},
        {"bma_percent", r.bma_percent ? json(*r.bma_percent) : json(nullptr)},
        {"folds", folds},
    });
  }
  return json{{"sites", sites}}.dump(2);
}

std::vector<train::ExperimentReport> reports_from_json(const std::string& text) {
  std::vector<train::ExperimentReport> out;
  try {
    const json j = json::parse(text);
    for (const json& s : j.at("sites")) {
      train::ExperimentReport r;
      r.site = s.at("site").get<std::string>();
      r.years = s.at("years").get<int>();
      r.selection = train::selection_policy_from_string(s.at("selection").get<std::string>());
      r.pbm_mean = number_from(s, "pbm_mean");
      r.hpbm_mean = number_from(s, "hpbm_mean");
      r.percent = s.at("percent").get<int>();
      if (!s.at("oracle_mean").is_null()) r.oracle_mean = s["oracle_mean"].get<double>();
      if (!s.at("oracle_percent").is_null()) r.oracle_percent = s["oracle_percent"].get<int>();
      if (!s.at("bma_mean").is_null()) r.bma_mean = s["bma_mean"].get<double>();
      if (!s.at("bma_percent").is_null()) r.bma_percent = s["bma_percent"].get<int>();
      for (const json& fj : s.at("folds")) {
        train::FoldResult f;
        f.held_out_year = fj.at("held_out_year").get<int>();
        f.selection_year = fj.at("selection_year").get<int>();
        f.params = params_from(fj.at("params"));
        f.calibration_objective = number_from(fj, "calibration_objective");
        f.default_objective = number_from(fj, "default_objective");
        f.training_pairs = fj.at("training_pairs").get<std::size_t>();
        f.equilibration_passes = fj.at("equilibration_passes").get<int>();
        f.equilibration_converged = fj.at("equilibration_converged").get<bool>();
        for (const json& c : fj.at("candidates")) {
          f.candidates.push_back({c.at("pseudo_inputs").get<int>(), c.at("restart").get<int>(),
                                  c.at("seed").get<std::uint64_t>(), number_from(c, "regression_rmse"),
                                  number_from(c, "selection_rmse"), number_from(c, "held_out_rmse")});
        }
        for (const json& e : fj.at("failures")) {
          f.failures.push_back({e.at("pseudo_inputs").get<int>(), e.at("restart").get<int>(),
                                e.at("seed").get<std::uint64_t>(), e.at("message").get<std::string>()});
        }
        if (!fj.at("selected").is_null()) f.selected = fj["selected"].get<std::size_t>();
        if (!fj.at("oracle_selected").is_null()) f.oracle_selected = fj["oracle_selected"].get<std::size_t>();
        f.pbm_rmse = number_from(fj, "pbm_rmse");
        f.hpbm_rmse = number_from(fj, "hpbm_rmse");
        f.in_sample_rmse = number_from(fj, "in_sample_rmse");
        f.oracle_rmse = number_from(fj, "oracle_rmse");
        f.bma_rmse = number_from(fj, "bma_rmse");
        f.bma_temperature = number_from(fj, "bma_temperature");
        for (const json& w : fj.at("bma_weights")) f.bma_weights.push_back(w.get<double>());
        r.folds.push_back(std::move(f));
      }
      out.push_back(std::move(r));
    }
  } catch (const json::exception& e) {
    throw InvalidInput(std::string("malformed run.json: ") + e.what());
  }
  return out;
}

void cmd_report(const fs::path& run_dir, std::ostream& out) {
  const fs::path run_json = run_dir / "run.json";
  if (!fs::is_regular_file(run_json)) {
    throw InvalidInput(run_dir.string() + " is not a completed run directory (no run.json)");
  }
  const std::vector<train::ExperimentReport> reports = reports_from_json(read_text(run_json));
  if (reports.empty()) throw InvalidInput("run.json holds no sites");

  // Series exports come from the fold files the run wrote.
  for (const train::ExperimentReport& r : reports) {
    for (const train::FoldResult& f : r.folds) {
      const std::string tag = r.site + "_" + std::to_string(f.held_out_year);
      const fs::path fold_file = run_dir / ("fold_" + tag + ".csv");
      if (fs::is_regular_file(fold_file)) write_text(run_dir / ("series_" + tag + ".csv"), read_text(fold_file));
    }
  }
  out << render_table(reports);
}

}  // namespace hpbm::cli
