#include "hpbm/config.hpp"

#include "hpbm/error.hpp"

#include <nlohmann/json.hpp>

#include <fstream>
#include <set>
#include <sstream>

namespace hpbm::cfg {

using nlohmann::json;

namespace {

void check_keys(const json& j, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw InvalidInput(where + ": expected an object");
  const std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& item : j.items()) {
    if (!ok.count(item.key())) throw InvalidInput(where + ": unknown key '" + item.key() + "'");
  }
}

void read_number(const json& j, const char* key, double& out, const std::string& where) {
  if (!j.contains(key)) return;
  if (!j.at(key).is_number()) throw InvalidInput(where + "." + key + ": expected a number");
  out = j.at(key).get<double>();
}

void read_count(const json& j, const char* key, int& out, const std::string& where) {
  if (!j.contains(key)) return;
  if (!j.at(key).is_number_integer()) throw InvalidInput(where + "." + key + ": expected an integer");
  out = j.at(key).get<int>();
}

void read_size(const json& j, const char* key, std::size_t& out, const std::string& where) {
  if (!j.contains(key)) return;
  if (!j.at(key).is_number_unsigned()) throw InvalidInput(where + "." + key + ": expected a nonnegative integer");
  out = j.at(key).get<std::size_t>();
}

void read_bool(const json& j, const char* key, bool& out, const std::string& where) {
  if (!j.contains(key)) return;
  if (!j.at(key).is_boolean()) throw InvalidInput(where + "." + key + ": expected true or false");
  out = j.at(key).get<bool>();
}

void read_string(const json& j, const char* key, std::string& out, const std::string& where) {
  if (!j.contains(key)) return;
  if (!j.at(key).is_string()) throw InvalidInput(where + "." + key + ": expected a string");
  out = j.at(key).get<std::string>();
}

std::filesystem::path resolve(const std::string& text, const std::filesystem::path& base) {
  std::filesystem::path p(text);
  if (p.is_relative() && !base.empty()) p = base / p;
  return p.lexically_normal();
}

pbm::PbmParams parse_params(const json& j, pbm::PbmParams p, const std::string& where) {
  check_keys(j, where,
             {"theta_saturation", "theta_residual", "theta_field_capacity", "top_depth", "lower_depth",
              "infiltration_rate_max", "percolation_coeff", "et_partition", "melt_mode", "melt_threshold",
              "degree_day_factor"});
  read_number(j, "theta_saturation", p.theta_saturation, where);
  read_number(j, "theta_residual", p.theta_residual, where);
  read_number(j, "theta_field_capacity", p.theta_field_capacity, where);
  read_number(j, "top_depth", p.top_depth, where);
  read_number(j, "lower_depth", p.lower_depth, where);
  read_number(j, "infiltration_rate_max", p.infiltration_rate_max, where);
  read_number(j, "percolation_coeff", p.percolation_coeff, where);
  read_number(j, "et_partition", p.et_partition, where);
  read_number(j, "melt_threshold", p.melt_threshold, where);
  read_number(j, "degree_day_factor", p.degree_day_factor, where);
  if (j.contains("melt_mode")) {
    std::string mode;
    read_string(j, "melt_mode", mode, where);
    p.melt_mode = pbm::melt_mode_from_string(mode);
  }
  try {
    p.validate();
  } catch (const InvalidInput& e) {
    throw InvalidInput(where + ": " + e.what());
  }
  return p;
}

json params_to_json(const pbm::PbmParams& p) {
  return json{{"theta_saturation", p.theta_saturation},
              {"theta_residual", p.theta_residual},
              {"theta_field_capacity", p.theta_field_capacity},
              {"top_depth", p.top_depth},
              {"lower_depth", p.lower_depth},
              {"infiltration_rate_max", p.infiltration_rate_max},
              {"percolation_coeff", p.percolation_coeff},
              {"et_partition", p.et_partition},
              {"melt_mode", std::string(pbm::to_string(p.melt_mode))},
              {"melt_threshold", p.melt_threshold},
              {"degree_day_factor", p.degree_day_factor}};
}

pbm::ClimateConfig parse_climate(const json& j, pbm::ClimateConfig c, const std::string& where) {
  check_keys(j, where,
             {"temp_mean", "temp_annual_amplitude", "coldest_day", "temp_diurnal_amplitude", "temp_anomaly_sd",
              "temp_anomaly_ar", "wet_day_probability", "wet_seasonality", "wet_persistence", "event_depth_mean",
              "storm_steps", "pet_coefficient"});
  read_number(j, "temp_mean", c.temp_mean, where);
  read_number(j, "temp_annual_amplitude", c.temp_annual_amplitude, where);
  read_count(j, "coldest_day", c.coldest_day, where);
  read_number(j, "temp_diurnal_amplitude", c.temp_diurnal_amplitude, where);
  read_number(j, "temp_anomaly_sd", c.temp_anomaly_sd, where);
  read_number(j, "temp_anomaly_ar", c.temp_anomaly_ar, where);
  read_number(j, "wet_day_probability", c.wet_day_probability, where);
  read_number(j, "wet_seasonality", c.wet_seasonality, where);
  read_number(j, "wet_persistence", c.wet_persistence, where);
  read_number(j, "event_depth_mean", c.event_depth_mean, where);
  read_count(j, "storm_steps", c.storm_steps, where);
  read_number(j, "pet_coefficient", c.pet_coefficient, where);
  try {
    c.validate();
  } catch (const InvalidInput& e) {
    throw InvalidInput(where + ": " + e.what());
  }
  return c;
}

json climate_to_json(const pbm::ClimateConfig& c) {
  return json{{"temp_mean", c.temp_mean},
              {"temp_annual_amplitude", c.temp_annual_amplitude},
              {"coldest_day", c.coldest_day},
              {"temp_diurnal_amplitude", c.temp_diurnal_amplitude},
              {"temp_anomaly_sd", c.temp_anomaly_sd},
              {"temp_anomaly_ar", c.temp_anomaly_ar},
              {"wet_day_probability", c.wet_day_probability},
              {"wet_seasonality", c.wet_seasonality},
              {"wet_persistence", c.wet_persistence},
              {"event_depth_mean", c.event_depth_mean},
              {"storm_steps", c.storm_steps},
              {"pet_coefficient", c.pet_coefficient}};
}

void parse_sce(const json& j, calib::SceConfig& s, const std::string& where) {
  check_keys(j, where,
             {"n_complexes", "points_per_complex", "simplex_size", "cce_steps", "max_evals", "convergence_threshold",
              "convergence_window"});
  read_count(j, "n_complexes", s.n_complexes, where);
  read_count(j, "points_per_complex", s.points_per_complex, where);
  read_count(j, "simplex_size", s.simplex_size, where);
  read_count(j, "cce_steps", s.cce_steps, where);
  read_size(j, "max_evals", s.max_evals, where);
  read_number(j, "convergence_threshold", s.convergence_threshold, where);
  read_count(j, "convergence_window", s.convergence_window, where);
}

}  // namespace

ExperimentConfig default_config() {
  ExperimentConfig c;
  c.loo.base_params.melt_mode = pbm::MeltMode::flawed_threshold;
  c.loo.sce.max_evals = 3000;
  c.synth.sites = {{"synthetic", 4}};
  return c;
}

ExperimentConfig parse_config(std::string_view text, const std::filesystem::path& base_dir) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw InvalidInput(std::string("config is not valid JSON: ") + e.what());
  }
  check_keys(j, "config",
             {"seed", "output_dir", "sites", "synth", "pbm", "calibration", "equilibration", "training", "selection",
              "bma", "ablate_corrector"});

  ExperimentConfig c = default_config();
  if (j.contains("seed")) {
    if (!j["seed"].is_number_unsigned()) throw InvalidInput("config.seed: expected a nonnegative integer");
    c.seed = j["seed"].get<std::uint64_t>();
  }
  std::string text_value;
  if (j.contains("output_dir")) {
    read_string(j, "output_dir", text_value, "config");
    c.output_dir = resolve(text_value, base_dir);
  }

  if (j.contains("sites")) {
    if (!j["sites"].is_array()) throw InvalidInput("config.sites: expected an array");
    std::set<std::string> names;
    for (std::size_t i = 0; i < j["sites"].size(); ++i) {
      const json& s = j["sites"][i];
      const std::string where = "config.sites[" + std::to_string(i) + "]";
      check_keys(s, where, {"name", "path"});
      SiteEntry e;
      std::string path;
      read_string(s, "path", path, where);
      if (path.empty()) throw InvalidInput(where + ".path: required");
      e.path = resolve(path, base_dir);
      read_string(s, "name", e.name, where);
      if (e.name.empty()) e.name = e.path.stem().string();
      if (!names.insert(e.name).second) throw InvalidInput(where + ": duplicate site name '" + e.name + "'");
      c.sites.push_back(std::move(e));
    }
  }

  if (j.contains("synth")) {
    const json& s = j["synth"];
    check_keys(s, "config.synth", {"output_dir", "noise_sd", "sites", "truth", "climate"});
    if (s.contains("output_dir")) {
      read_string(s, "output_dir", text_value, "config.synth");
      c.synth.output_dir = resolve(text_value, base_dir);
    }
    read_number(s, "noise_sd", c.synth.noise_sd, "config.synth");
    if (!(c.synth.noise_sd >= 0.0)) throw InvalidInput("config.synth.noise_sd: must be nonnegative");
    if (s.contains("sites")) {
      if (!s["sites"].is_array()) throw InvalidInput("config.synth.sites: expected an array");
      c.synth.sites.clear();
      for (std::size_t i = 0; i < s["sites"].size(); ++i) {
        const std::string where = "config.synth.sites[" + std::to_string(i) + "]";
        const json& e = s["sites"][i];
        check_keys(e, where, {"name", "years"});
        SynthSite site;
        read_string(e, "name", site.name, where);
        read_count(e, "years", site.years, where);
        if (site.name.empty()) throw InvalidInput(where + ".name: required");
        if (site.years < 2) throw InvalidInput(where + ".years: must be at least 2");
        c.synth.sites.push_back(site);
      }
    }
    if (s.contains("truth")) c.synth.truth = parse_params(s["truth"], c.synth.truth, "config.synth.truth");
    if (s.contains("climate")) c.synth.climate = parse_climate(s["climate"], c.synth.climate, "config.synth.climate");
  }

  if (j.contains("pbm")) c.loo.base_params = parse_params(j["pbm"], c.loo.base_params, "config.pbm");

  if (j.contains("calibration")) {
    const json& s = j["calibration"];
    check_keys(s, "config.calibration", {"enabled", "bounds", "sce"});
    read_bool(s, "enabled", c.loo.calibrate, "config.calibration");
    if (s.contains("bounds")) {
      if (!s["bounds"].is_array()) throw InvalidInput("config.calibration.bounds: expected an array");
      c.loo.bounds.clear();
      for (std::size_t i = 0; i < s["bounds"].size(); ++i) {
        const std::string where = "config.calibration.bounds[" + std::to_string(i) + "]";
        const json& b = s["bounds"][i];
        check_keys(b, where, {"name", "lower", "upper"});
        calib::ParamBound bound;
        read_string(b, "name", bound.name, where);
        read_number(b, "lower", bound.lower, where);
        read_number(b, "upper", bound.upper, where);
        try {
          (void)calib::get_param(c.loo.base_params, bound.name);
        } catch (const InvalidInput& e) {
          throw InvalidInput(where + ": " + e.what());
        }
        if (!(bound.lower < bound.upper)) throw InvalidInput(where + ": lower must be below upper");
        c.loo.bounds.push_back(bound);
      }
    }
    if (s.contains("sce")) parse_sce(s["sce"], c.loo.sce, "config.calibration.sce");
  }

  if (j.contains("equilibration")) {
    const json& s = j["equilibration"];
    check_keys(s, "config.equilibration", {"max_passes", "tol"});
    read_count(s, "max_passes", c.loo.equilibration.max_passes, "config.equilibration");
    read_number(s, "tol", c.loo.equilibration.tol, "config.equilibration");
    if (c.loo.equilibration.max_passes < 1 || !(c.loo.equilibration.tol > 0.0)) {
      throw InvalidInput("config.equilibration: max_passes >= 1 and tol > 0 required");
    }
  }

  if (j.contains("training")) {
    const json& s = j["training"];
    const std::string where = "config.training";
    check_keys(s, where, {"counts", "restarts", "max_iterations", "max_training_points", "optimize_pseudo_inputs",
                           "noise_floor"});
    if (s.contains("counts")) {
      if (!s["counts"].is_array() || s["counts"].empty()) throw InvalidInput(where + ".counts: expected a nonempty array");
      c.loo.training.counts.clear();
      for (const json& v : s["counts"]) {
        if (!v.is_number_integer() || v.get<int>() < 1) throw InvalidInput(where + ".counts: expected positive integers");
        c.loo.training.counts.push_back(v.get<int>());
      }
    }
    read_count(s, "restarts", c.loo.training.restarts, where);
    if (c.loo.training.restarts < 1) throw InvalidInput(where + ".restarts: must be at least 1");
    read_size(s, "max_iterations", c.loo.training.max_iterations, where);
    read_size(s, "max_training_points", c.loo.training.max_training_points, where);
    read_bool(s, "optimize_pseudo_inputs", c.loo.training.optimize_pseudo_inputs, where);
    read_number(s, "noise_floor", c.loo.training.noise_floor, where);
    if (!(c.loo.training.noise_floor >= 0.0)) throw InvalidInput(where + ".noise_floor: must be nonnegative");
  }

  if (j.contains("selection")) {
    read_string(j, "selection", text_value, "config");
    c.loo.selection = train::selection_policy_from_string(text_value);
  }

  if (j.contains("bma")) {
    const json& s = j["bma"];
    check_keys(s, "config.bma", {"enabled", "temperature", "mode"});
    read_bool(s, "enabled", c.loo.bma, "config.bma");
    if (s.contains("temperature") && !s["temperature"].is_null()) {
      double t = 0.0;
      read_number(s, "temperature", t, "config.bma");
      if (!(t > 0.0)) throw InvalidInput("config.bma.temperature: must be positive");
      c.loo.bma_temperature = t;
    }
    if (s.contains("mode")) {
      read_string(s, "mode", text_value, "config.bma");
      if (text_value == "shared_state") {
        c.loo.bma_mode = avg::BmaMode::shared_state;
      } else if (text_value == "trajectory_average") {
        c.loo.bma_mode = avg::BmaMode::trajectory_average;
      } else {
        throw InvalidInput("config.bma.mode: expected shared_state or trajectory_average");
      }
    }
  }

  read_bool(j, "ablate_corrector", c.loo.ablate_corrector, "config");
  c.loo.seed = c.seed;
  try {
    (void)c.loo.sce.resolved(std::max<std::size_t>(c.loo.bounds.size(), 1));
  } catch (const InvalidInput& e) {
    throw InvalidInput(std::string("config.calibration.sce: ") + e.what());
  }
  if (c.loo.calibrate && c.loo.bounds.empty()) throw InvalidInput("config.calibration.bounds: empty while enabled");
  return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InvalidInput("cannot open config " + path.string());
  std::ostringstream text;
  text << in.rdbuf();
  return parse_config(text.str(), path.parent_path());
}

std::string dump_config(const ExperimentConfig& c) {
  json sites = json::array();
  for (const SiteEntry& s : c.sites) sites.push_back({{"name", s.name}, {"path", s.path.generic_string()}});
  json synth_sites = json::array();
  for (const SynthSite& s : c.synth.sites) synth_sites.push_back({{"name", s.name}, {"years", s.years}});
  json bounds = json::array();
  for (const calib::ParamBound& b : c.loo.bounds) {
    bounds.push_back({{"name", b.name}, {"lower", b.lower}, {"upper", b.upper}});
  }
  const calib::SceConfig& s = c.loo.sce;
  const train::TrainOptions& t = c.loo.training;
  json j{
      {"seed", c.seed},
      {"sites", sites},
      {"synth",
       {{"noise_sd", c.synth.noise_sd},
        {"sites", synth_sites},
        {"truth", params_to_json(c.synth.truth)},
        {"climate", climate_to_json(c.synth.climate)}}},
      {"pbm", params_to_json(c.loo.base_params)},
      {"calibration",
       {{"enabled", c.loo.calibrate},
        {"bounds", bounds},
        {"sce",
         {{"n_complexes", s.n_complexes},
          {"points_per_complex", s.points_per_complex},
          {"simplex_size", s.simplex_size},
          {"cce_steps", s.cce_steps},
          {"max_evals", s.max_evals},
          {"convergence_threshold", s.convergence_threshold},
          {"convergence_window", s.convergence_window}}}}},
      {"equilibration",
       {{"max_passes", c.loo.equilibration.max_passes}, {"tol", c.loo.equilibration.tol}}},
      {"training",
       {{"counts", t.counts},
        {"restarts", t.restarts},
        {"max_iterations", t.max_iterations},
        {"max_training_points", t.max_training_points},
        {"optimize_pseudo_inputs", t.optimize_pseudo_inputs},
        {"noise_floor", t.noise_floor}}},
      {"selection", train::to_string(c.loo.selection)},
      {"bma",
       {{"enabled", c.loo.bma},
        {"temperature", c.loo.bma_temperature ? json(*c.loo.bma_temperature) : json(nullptr)},
        {"mode", c.loo.bma_mode == avg::BmaMode::shared_state ? "shared_state" : "trajectory_average"}}},
      {"ablate_corrector", c.loo.ablate_corrector},
  };
  return j.dump(2);
}

std::string params_json(const pbm::PbmParams& params) { return params_to_json(params).dump(2); }

std::uint64_t synth_site_seed(std::uint64_t seed, std::size_t index) {
  return train::derive_seed(seed, 0x73796e7468ULL, index);
}

}  // namespace hpbm::cfg
