#include "imbal_cli/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <sstream>
#include <thread>

#include "imbal/checkpoint.hpp"
#include "imbal/dataio.hpp"
#include "imbal/errors.hpp"
#include "imbal/evaluate.hpp"
#include "imbal/hashing.hpp"
#include "imbal/mpc.hpp"
#include "imbal/training.hpp"

namespace imbal::cli {
namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;

constexpr const char* kSiFile = "si.csv";
constexpr const char* kOrdersFile = "merit_orders.csv";
constexpr const char* kManifestFile = "manifest.json";
constexpr const char* kRunFile = "run.json";

/// Bad flags, config fields or missing inputs; exits with kExitUsage.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

fs::path resolve_out(const std::string& p) {
  fs::path path(p);
  if (path.is_relative())
    if (const char* root = std::getenv("IMBAL_OUT_ROOT"); root && *root) path = fs::path(root) / path;
  return path;
}

void write_text(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + p.string());
  out << text;
}

json load_json_file(const std::string& path) {
  if (path.empty()) return json::object();
  if (!fs::exists(path)) throw UsageError("config file not found: " + path);
  try {
    json j = json::parse(read_file(path));
    if (!j.is_object()) throw UsageError("config " + path + ": top level must be an object");
    return j;
  } catch (const json::parse_error& e) {
    throw UsageError("config " + path + ": " + e.what());
  }
}

/// Reads typed fields from a config object and rejects unknown keys.
class Fields {
 public:
  explicit Fields(const json& j) : j_(j) {}

  template <class T>
  void get(const std::string& key, T& dst) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      dst = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw UsageError("config field '" + key + "' has the wrong type");
    }
  }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!seen_.count(k)) throw UsageError("unknown config field '" + k + "'");
  }

 private:
  const json& j_;
  std::set<std::string> seen_;
};

json scenario_json(const ScenarioConfig& c) {
  return {{"days", c.days},
          {"seed", c.seed},
          {"start_minute", c.start_minute},
          {"si_mean_mw", c.si_mean_mw},
          {"si_reversion_per_min", c.si_reversion_per_min},
          {"si_volatility_mw_sqrt_min", c.si_volatility_mw_sqrt_min},
          {"si_jump_rate_per_min", c.si_jump_rate_per_min},
          {"si_jump_std_mw", c.si_jump_std_mw},
          {"si_diurnal_amplitude_mw", c.si_diurnal_amplitude_mw},
          {"si_clip_mw", c.si_clip_mw},
          {"afrr_depth_mw", c.afrr_depth_mw},
          {"afrr_bid_min_mw", c.afrr_bid_min_mw},
          {"afrr_bid_max_mw", c.afrr_bid_max_mw},
          {"afrr_up_base_eur_mwh", c.afrr_up_base_eur_mwh},
          {"afrr_down_base_eur_mwh", c.afrr_down_base_eur_mwh},
          {"afrr_slope_eur_mwh_per_mw", c.afrr_slope_eur_mwh_per_mw},
          {"price_diurnal_amplitude_eur_mwh", c.price_diurnal_amplitude_eur_mwh},
          {"price_noise_eur_mwh", c.price_noise_eur_mwh},
          {"mfrr_depth_mw", c.mfrr_depth_mw},
          {"mfrr_bid_min_mw", c.mfrr_bid_min_mw},
          {"mfrr_bid_max_mw", c.mfrr_bid_max_mw},
          {"mfrr_gap_eur_mwh", c.mfrr_gap_eur_mwh},
          {"mfrr_step_min_eur_mwh", c.mfrr_step_min_eur_mwh},
          {"mfrr_step_max_eur_mwh", c.mfrr_step_max_eur_mwh},
          {"symmetric_ladders", c.symmetric_ladders}};
}

ScenarioConfig scenario_from_json(const json& j) {
  ScenarioConfig c;
  Fields f(j);
  f.get("days", c.days);
  f.get("seed", c.seed);
  f.get("start_minute", c.start_minute);
  f.get("si_mean_mw", c.si_mean_mw);
  f.get("si_reversion_per_min", c.si_reversion_per_min);
  f.get("si_volatility_mw_sqrt_min", c.si_volatility_mw_sqrt_min);
  f.get("si_jump_rate_per_min", c.si_jump_rate_per_min);
  f.get("si_jump_std_mw", c.si_jump_std_mw);
  f.get("si_diurnal_amplitude_mw", c.si_diurnal_amplitude_mw);
  f.get("si_clip_mw", c.si_clip_mw);
  f.get("afrr_depth_mw", c.afrr_depth_mw);
  f.get("afrr_bid_min_mw", c.afrr_bid_min_mw);
  f.get("afrr_bid_max_mw", c.afrr_bid_max_mw);
  f.get("afrr_up_base_eur_mwh", c.afrr_up_base_eur_mwh);
  f.get("afrr_down_base_eur_mwh", c.afrr_down_base_eur_mwh);
  f.get("afrr_slope_eur_mwh_per_mw", c.afrr_slope_eur_mwh_per_mw);
  f.get("price_diurnal_amplitude_eur_mwh", c.price_diurnal_amplitude_eur_mwh);
  f.get("price_noise_eur_mwh", c.price_noise_eur_mwh);
  f.get("mfrr_depth_mw", c.mfrr_depth_mw);
  f.get("mfrr_bid_min_mw", c.mfrr_bid_min_mw);
  f.get("mfrr_bid_max_mw", c.mfrr_bid_max_mw);
  f.get("mfrr_gap_eur_mwh", c.mfrr_gap_eur_mwh);
  f.get("mfrr_step_min_eur_mwh", c.mfrr_step_min_eur_mwh);
  f.get("mfrr_step_max_eur_mwh", c.mfrr_step_max_eur_mwh);
  f.get("symmetric_ladders", c.symmetric_ladders);
  f.finish();
  return c;
}

struct TrainSettings {
  TrainConfig train;
  DatasetConfig dataset;
};

json train_json(const TrainSettings& s) {
  return {{"epochs", s.train.epochs},
          {"learning_rate", s.train.learning_rate},
          {"batch_size_samples", s.train.batch_size},
          {"beta1", s.train.beta1},
          {"beta2", s.train.beta2},
          {"adam_epsilon", s.train.epsilon},
          {"perturbation_mw", s.dataset.perturbation_mw},
          {"forecast_noise_mw", s.dataset.forecast_noise_mw}};
}

TrainSettings train_from_json(const json& j) {
  TrainSettings s;
  Fields f(j);
  f.get("epochs", s.train.epochs);
  f.get("learning_rate", s.train.learning_rate);
  f.get("batch_size_samples", s.train.batch_size);
  f.get("beta1", s.train.beta1);
  f.get("beta2", s.train.beta2);
  f.get("adam_epsilon", s.train.epsilon);
  f.get("perturbation_mw", s.dataset.perturbation_mw);
  f.get("forecast_noise_mw", s.dataset.forecast_noise_mw);
  f.finish();
  if (s.train.epochs <= 0) throw UsageError("config field 'epochs' must be positive");
  if (!(s.train.learning_rate > 0.0)) throw UsageError("config field 'learning_rate' must be positive");
  if (s.train.batch_size <= 0) throw UsageError("config field 'batch_size_samples' must be positive");
  if (s.dataset.perturbation_mw.empty()) throw UsageError("config field 'perturbation_mw' must not be empty");
  for (double m : s.dataset.perturbation_mw)
    if (!(m >= 0.0)) throw UsageError("config field 'perturbation_mw' must hold magnitudes >= 0");
  if (!(s.dataset.forecast_noise_mw >= 0.0)) throw UsageError("config field 'forecast_noise_mw' must be >= 0");
  return s;
}

json battery_json(const BatterySpec& b) {
  return {{"power_max_mw", b.power_max_mw}, {"energy_max_mwh", b.energy_max_mwh}, {"eff_charge", b.eff_charge},
          {"eff_discharge", b.eff_discharge}, {"soc_min", b.soc_min},           {"soc_max", b.soc_max},
          {"delta_t_h", b.delta_t_h}};
}

struct RunSettings {
  BatterySpec spec;
  double initial_soc = 0.5;
  double sigma0_mw = 10.0;
  double sigma_growth = 1.2;
  double gap_tol = 1e-6;
  long node_limit = 200000;
};

RunSettings run_from_json(const json& j, const std::string& battery) {
  RunSettings s;
  Fields f(j);
  if (battery != "custom") s.spec = BatterySpec::preset(battery);
  f.get("power_max_mw", s.spec.power_max_mw);
  f.get("energy_max_mwh", s.spec.energy_max_mwh);
  f.get("eff_charge", s.spec.eff_charge);
  f.get("eff_discharge", s.spec.eff_discharge);
  f.get("soc_min", s.spec.soc_min);
  f.get("soc_max", s.spec.soc_max);
  f.get("initial_soc", s.initial_soc);
  f.get("forecast_sigma0_mw", s.sigma0_mw);
  f.get("forecast_growth_per_step", s.sigma_growth);
  f.get("solver_gap_tol", s.gap_tol);
  f.get("solver_node_limit", s.node_limit);
  f.finish();
  if (battery != "custom" && (j.contains("power_max_mw") || j.contains("energy_max_mwh")))
    throw UsageError("config fields 'power_max_mw'/'energy_max_mwh' need --battery custom");
  try {
    s.spec.validate();
  } catch (const ContractError& e) {
    throw UsageError(std::string("battery config: ") + e.what());
  }
  if (s.initial_soc < s.spec.soc_min || s.initial_soc > s.spec.soc_max)
    throw UsageError("config field 'initial_soc' outside [soc_min, soc_max]");
  if (!(s.sigma0_mw >= 0.0)) throw UsageError("config field 'forecast_sigma0_mw' must be >= 0");
  if (!(s.sigma_growth > 0.0)) throw UsageError("config field 'forecast_growth_per_step' must be positive");
  return s;
}

/// Runs fn(i) for i in [0, n) on up to `jobs` threads; rethrows the first error by index.
void parallel_for(std::size_t n, unsigned jobs, const std::function<void(std::size_t)>& fn) {
  jobs = std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(n)));
  std::vector<std::exception_ptr> errors(n);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i; (i = next++) < n;) {
      try {
        fn(i);
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (unsigned k = 1; k < jobs; ++k) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

unsigned default_jobs() { return std::max(1u, std::thread::hardware_concurrency()); }

struct DataDir {
  MinuteData si;
  std::vector<QhMeritOrders> orders;
  json hashes;
};

DataDir load_data(const std::string& dir) {
  const fs::path d(dir);
  for (const char* f : {kSiFile, kOrdersFile})
    if (!fs::exists(d / f)) throw UsageError("data directory " + dir + " has no " + f);
  DataDir data;
  data.si = load_minute_si(d / kSiFile);
  data.orders = load_merit_orders(d / kOrdersFile);
  if (data.si.traces.size() != data.orders.size())
    throw UsageError("data directory " + dir + ": SI and merit orders cover different quarter hours");
  data.hashes = {{kSiFile, git_blob_hash_file(d / kSiFile)}, {kOrdersFile, git_blob_hash_file(d / kOrdersFile)}};
  return data;
}

/// manifest.json: command, effective config and its hash, seeds, and git
/// blob ids of inputs and of every output file (by file name).
void write_manifest(const fs::path& out_dir, const std::string& command, const json& config,
                    const std::vector<std::uint64_t>& seeds, const json& inputs, const std::vector<std::string>& outputs) {
  json m;
  m["command"] = command;
  m["version"] = IMBAL_VERSION;
  m["config"] = config;
  m["config_hash"] = sha1_hex(config.dump());
  m["seeds"] = seeds;
  m["inputs"] = inputs;
  json outs = json::object();
  for (const auto& name : outputs) outs[name] = git_blob_hash_file(out_dir / name);
  m["outputs"] = outs;
  write_text(out_dir / kManifestFile, m.dump(2) + "\n");
}

std::string csv_number(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// ---------------------------------------------------------------- generate

struct GenerateOpts {
  std::string config, out;
  std::optional<std::uint64_t> seed;
  std::optional<int> days;
};

void cmd_generate(const GenerateOpts& o, std::ostream& out) {
  ScenarioConfig cfg = scenario_from_json(load_json_file(o.config));
  if (o.seed) cfg.seed = *o.seed;
  if (o.days) cfg.days = *o.days;
  try {
    cfg.validate();
  } catch (const ContractError& e) {
    throw UsageError(e.what());
  }
  const fs::path dir = resolve_out(o.out);
  fs::create_directories(dir);
  const Scenario s = generate_synthetic(cfg);
  write_minute_si(dir / kSiFile, s.si);
  write_merit_orders(dir / kOrdersFile, s.orders);
  json inputs = json::object();
  if (!o.config.empty()) inputs[fs::path(o.config).filename().string()] = git_blob_hash_file(o.config);
  write_manifest(dir, "generate", scenario_json(cfg), {cfg.seed}, inputs, {kSiFile, kOrdersFile});
  out << "generated " << s.si.traces.size() << " quarter hours in " << dir.string() << "\n";
}

// ------------------------------------------------------------------- train

struct TrainOpts {
  std::string data, config, out;
  std::vector<std::uint64_t> seeds{0};
  bool desk = false;
  std::optional<int> epochs;
  std::optional<double> lr;
  unsigned jobs = 0;
};

std::string model_file(std::uint64_t seed) { return "model_seed" + std::to_string(seed) + ".ckpt"; }
std::string curve_file(std::uint64_t seed) { return "curve_seed" + std::to_string(seed) + ".csv"; }

void cmd_train(const TrainOpts& o, std::ostream& out, std::ostream& err) {
  TrainSettings ts = train_from_json(load_json_file(o.config));
  if (o.epochs) ts.train.epochs = *o.epochs;
  if (o.lr) ts.train.learning_rate = *o.lr;
  if (ts.train.epochs <= 0) throw UsageError("--epochs must be positive");
  if (!(ts.train.learning_rate > 0.0)) throw UsageError("--lr must be positive");
  const DataDir data = load_data(o.data);
  const Dataset ds = build_training_set(data.si, data.orders, ts.dataset);
  const ModelConfig mc = o.desk ? ModelConfig::desk() : ModelConfig::full();
  const fs::path dir = resolve_out(o.out);
  fs::create_directories(dir);

  json config = train_json(ts);
  config["model"] = json::parse(model_config_json(mc));
  config["preset"] = o.desk ? "desk" : "full";
  const std::string config_hash = sha1_hex(config.dump());
  std::mutex log_mutex;

  parallel_for(o.seeds.size(), o.jobs ? o.jobs : default_jobs(), [&](std::size_t i) {
    const std::uint64_t seed = o.seeds[i];
    TrainConfig tc = ts.train;
    tc.seed = seed;
    const TrainResult r = train(ds, mc, tc, [&](const EpochRecord& e) {
      std::lock_guard lock(log_mutex);
      err << "seed " << seed << " epoch " << e.epoch << " train_l1 " << e.train_l1 << " validation_l1 "
          << e.validation_l1 << "\n";
    });
    std::string curve = "epoch,train_l1_eur_mwh,validation_l1_eur_mwh\n";
    for (const auto& e : r.curve)
      curve += std::to_string(e.epoch) + "," + csv_number(e.train_l1) + "," + csv_number(e.validation_l1) + "\n";
    write_text(dir / curve_file(seed), curve);
    Checkpoint ck;
    ck.params = r.params;
    ck.config_hash = config_hash;
    ck.metadata_json = json{{"seed", seed},
                            {"best_epoch", r.best_epoch},
                            {"best_validation_l1_eur_mwh", r.best_validation_l1},
                            {"data", data.hashes}}
                           .dump();
    save_checkpoint(dir / model_file(seed), ck);
    std::lock_guard lock(log_mutex);
    out << "seed " << seed << ": best epoch " << r.best_epoch << ", validation L1 " << r.best_validation_l1
        << " EUR/MWh -> " << (dir / model_file(seed)).string() << "\n";
  });

  std::vector<std::string> outputs;
  for (auto s : o.seeds) {
    outputs.push_back(model_file(s));
    outputs.push_back(curve_file(s));
  }
  json inputs = data.hashes;
  if (!o.config.empty()) inputs[fs::path(o.config).filename().string()] = git_blob_hash_file(o.config);
  write_manifest(dir, "train", config, o.seeds, inputs, outputs);
}

// --------------------------------------------------------------------- run

struct RunOpts {
  std::string data, config, out, checkpoint, models, method = "clearing", battery = "1mw", forecast = "perfect";
  std::string range = "test";
  std::vector<std::uint64_t> seeds{0};
  int horizon = 4;
  bool any_horizon = false;
  bool sweep = false;
  unsigned jobs = 0;
};

std::string episode_file(std::uint64_t seed) { return "episode_seed" + std::to_string(seed) + ".csv"; }

void cmd_run(const RunOpts& o, std::ostream& out) {
  if (!o.any_horizon && o.horizon != 1 && o.horizon != 4)
    throw UsageError("--horizon accepts 1 or 4; pass --allow-any-horizon for other values");
  if (o.horizon < 1 || o.horizon > 96) throw UsageError("--horizon must be in [1, 96]");
  const Method method = method_from_string(o.method);
  const ForecastKind fk = forecast_kind_from_string(o.forecast);
  const RunSettings rs = run_from_json(load_json_file(o.config), o.battery);

  // Models: one checkpoint for every seed, or model_seed<N>.ckpt per seed.
  std::map<std::uint64_t, fs::path> model_paths;
  if (method == Method::icnn) {
    if (o.checkpoint.empty() && o.models.empty())
      throw UsageError("method icnn needs --checkpoint FILE or --models DIR");
    for (auto s : o.seeds) {
      const fs::path p = o.checkpoint.empty() ? fs::path(o.models) / model_file(s) : fs::path(o.checkpoint);
      if (!fs::exists(p)) throw UsageError("checkpoint not found: " + p.string());
      model_paths[s] = p;
    }
  } else if (!o.checkpoint.empty() || !o.models.empty()) {
    throw UsageError("method clearing takes no checkpoint");
  }

  const DataDir data = load_data(o.data);
  const std::size_t N = data.si.traces.size();
  std::size_t first = 0;
  if (o.range == "test") {
    first = N * 10 / 12 + N / 12;
    if (first >= N) throw UsageError("data too short for a test range; use --range all");
  } else if (o.range != "all") {
    throw UsageError("--range accepts test or all");
  }

  const fs::path dir = resolve_out(o.out);
  fs::create_directories(dir);
  json inputs = data.hashes;
  std::map<fs::path, IcnnParams> models;
  for (const auto& [seed, p] : model_paths) {
    if (!models.count(p)) models.emplace(p, load_checkpoint(p).params);
    inputs[p.filename().string()] = git_blob_hash_file(p);
  }
  if (!o.config.empty()) inputs[fs::path(o.config).filename().string()] = git_blob_hash_file(o.config);

  json config = {{"method", o.method},
                 {"battery", o.battery},
                 {"battery_spec", battery_json(rs.spec)},
                 {"initial_soc", rs.initial_soc},
                 {"horizon_qh", o.horizon},
                 {"forecast", o.forecast},
                 {"forecast_sigma0_mw", rs.sigma0_mw},
                 {"forecast_growth_per_step", rs.sigma_growth},
                 {"solver_gap_tol", rs.gap_tol},
                 {"solver_node_limit", rs.node_limit},
                 {"solver", o.sweep ? "sweep" : "bnb"},
                 {"range", o.range},
                 {"first_qh", first}};

  parallel_for(o.seeds.size(), o.jobs ? o.jobs : default_jobs(), [&](std::size_t i) {
    const std::uint64_t seed = o.seeds[i];
    EpisodeConfig ec;
    ec.method = method;
    ec.model = method == Method::icnn ? &models.at(model_paths.at(seed)) : nullptr;
    ec.spec = rs.spec;
    ec.initial.soc = rs.initial_soc;
    ec.horizon = o.horizon;
    ec.forecast.kind = fk;
    ec.forecast.sigma0_mw = rs.sigma0_mw;
    ec.forecast.growth = rs.sigma_growth;
    ec.forecast.seed = seed;
    ec.solver.gap_tol = rs.gap_tol;
    ec.solver.node_limit = rs.node_limit;
    ec.use_sweep = o.sweep;
    ec.first_qh = first;
    EpisodeResult r = run_episode(data.si, data.orders, ec);
    r.summary["battery"] = o.battery;
    r.summary["seed"] = std::to_string(seed);
    write_episode_csv(dir / episode_file(seed), r);
  });

  json run = config;
  run["seeds"] = o.seeds;
  json episodes = json::array();
  for (auto s : o.seeds) episodes.push_back(episode_file(s));
  run["episodes"] = episodes;
  write_text(dir / kRunFile, run.dump(2) + "\n");
  std::vector<std::string> outputs{kRunFile};
  for (auto s : o.seeds) outputs.push_back(episode_file(s));
  write_manifest(dir, "run", config, o.seeds, inputs, outputs);
  out << "ran " << o.seeds.size() << " episode(s) of " << (N - first) << " quarter hours into " << dir.string()
      << "\n";
}

// ------------------------------------------------------------------ report

struct ReportOpts {
  std::vector<std::string> runs;
  std::string out;
  double threshold_mw = 20.0;
  int precision = 3;
};

struct Group {
  std::string battery, method, forecast;
  int horizon = 0;
  BatterySpec spec;
  std::vector<EpisodeResult> episodes;
};

void cmd_report(const ReportOpts& o, std::ostream& out) {
  // Groups keyed by battery, then method / horizon / forecast, in input order.
  std::vector<std::string> batteries;
  std::map<std::string, std::vector<Group>> by_battery;
  json inputs = json::object();
  for (const auto& rd : o.runs) {
    const fs::path run_file = fs::path(rd) / kRunFile;
    if (!fs::exists(run_file)) throw UsageError("not a run directory (no run.json): " + rd);
    const json run = json::parse(read_file(run_file));
    Group key;
    key.battery = run.at("battery").get<std::string>();
    key.method = run.at("method").get<std::string>();
    key.forecast = run.at("forecast").get<std::string>();
    key.horizon = run.at("horizon_qh").get<int>();
    const json& b = run.at("battery_spec");
    key.spec.power_max_mw = b.at("power_max_mw").get<double>();
    key.spec.energy_max_mwh = b.at("energy_max_mwh").get<double>();
    if (!by_battery.count(key.battery)) batteries.push_back(key.battery);
    auto& groups = by_battery[key.battery];
    auto it = std::find_if(groups.begin(), groups.end(), [&](const Group& g) {
      return g.method == key.method && g.horizon == key.horizon && g.forecast == key.forecast &&
             g.spec.power_max_mw == key.spec.power_max_mw;
    });
    if (it == groups.end()) {
      groups.push_back(key);
      it = groups.end() - 1;
    }
    const std::string tag = fs::path(rd).lexically_normal().filename().string();
    inputs[tag + "/" + kRunFile] = git_blob_hash_file(run_file);
    for (const auto& ep : run.at("episodes")) {
      const fs::path p = fs::path(rd) / ep.get<std::string>();
      it->episodes.push_back(read_episode_csv(p));
      inputs[tag + "/" + ep.get<std::string>()] = git_blob_hash_file(p);
    }
  }

  const SiFilter all = SiFilter::all(), large = SiFilter::large(o.threshold_mw), small = SiFilter::small(o.threshold_mw);
  auto metric = [&](const Group& g, auto&& f) {
    std::vector<double> v;
    for (const auto& e : g.episodes) {
      try {
        v.push_back(f(e));
      } catch (const MetricError&) {
      }
    }
    return v.empty() ? std::string("n/a") : format_mean_std(mean_std(v), o.precision);
  };

  const std::vector<std::string> header{"method", "horizon_qh", "forecast", "seeds", "profit_all_eur_mw_qh",
                                        "profit_" + large.label(), "profit_" + small.label(), "idle_" + small.label()};
  std::string csv = "battery";
  for (const auto& h : header) csv += "," + h;
  csv += "\n";
  std::ostringstream text;
  std::string rmse = "battery,method,horizon_qh,forecast,seed,si_lo_mw,si_hi_mw,count,rmse_eur_mwh\n";
  for (const auto& bat : batteries) {
    std::vector<std::vector<std::string>> rows{header};
    for (const auto& g : by_battery[bat]) {
      std::vector<std::string> row{g.method, std::to_string(g.horizon), g.forecast, std::to_string(g.episodes.size())};
      row.push_back(metric(g, [&](const EpisodeResult& e) { return profit_per_mw_qh(e, g.spec, all); }));
      row.push_back(metric(g, [&](const EpisodeResult& e) { return profit_per_mw_qh(e, g.spec, large); }));
      row.push_back(metric(g, [&](const EpisodeResult& e) { return profit_per_mw_qh(e, g.spec, small); }));
      row.push_back(metric(g, [&](const EpisodeResult& e) { return idle_probability(e, small); }));
      csv += bat;
      for (const auto& c : row) csv += "," + c;
      csv += "\n";
      rows.push_back(row);
      for (const auto& e : g.episodes) {
        const auto seed_it = e.summary.find("seed");
        const std::string seed = seed_it == e.summary.end() ? "" : seed_it->second;
        for (const auto& b : price_rmse_by_bin(e, {o.threshold_mw}))
          rmse += bat + "," + g.method + "," + std::to_string(g.horizon) + "," + g.forecast + "," + seed + "," +
                  csv_number(b.lo) + "," + csv_number(b.hi) + "," + std::to_string(b.count) + "," +
                  csv_number(b.rmse) + "\n";
      }
    }
    std::vector<std::size_t> width(header.size(), 0);
    for (const auto& r : rows)
      for (std::size_t c = 0; c < r.size(); ++c) width[c] = std::max(width[c], r[c].size());
    text << "== battery " << bat << " ==\n";
    for (const auto& r : rows) {
      for (std::size_t c = 0; c < r.size(); ++c)
        text << (c ? "  " : "") << r[c] << std::string(width[c] - r[c].size(), ' ');
      text << "\n";
    }
    text << "\n";
  }
  out << text.str();
  if (!o.out.empty()) {
    const fs::path dir = resolve_out(o.out);
    fs::create_directories(dir);
    write_text(dir / "report.csv", csv);
    write_text(dir / "report.txt", text.str());
    write_text(dir / "rmse_by_bin.csv", rmse);
    const json config = {{"threshold_mw", o.threshold_mw}, {"precision", o.precision}, {"runs", o.runs.size()}};
    write_manifest(dir, "report", config, {}, inputs, {"report.csv", "report.txt", "rmse_by_bin.csv"});
  }
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Implicit-balancing battery control: data generation, training, MPC runs and reports", "imbal"};
  app.require_subcommand(1);

  GenerateOpts g;
  auto* gen = app.add_subcommand("generate", "Generate a synthetic scenario (si.csv, merit_orders.csv)");
  gen->add_option("--config", g.config, "Scenario config (JSON, unit-suffixed keys)");
  gen->add_option("--out", g.out, "Output directory")->required();
  gen->add_option("--seed", g.seed, "Scenario seed (overrides the config)");
  gen->add_option("--days", g.days, "Number of days (overrides the config)");

  TrainOpts t;
  auto* tr = app.add_subcommand("train", "Train market-model checkpoints, one per seed");
  tr->add_option("--data", t.data, "Data directory")->required();
  tr->add_option("--config", t.config, "Training config (JSON)");
  tr->add_option("--out", t.out, "Output directory")->required();
  tr->add_option("--seed", t.seeds, "Seeds (one checkpoint each)")->delimiter(',');
  tr->add_flag("--desk", t.desk, "Small-network preset");
  tr->add_option("--epochs", t.epochs, "Epochs (overrides the config)");
  tr->add_option("--lr", t.lr, "Learning rate (overrides the config)");
  tr->add_option("--jobs", t.jobs, "Worker threads (default: all cores)");

  RunOpts r;
  auto* rn = app.add_subcommand("run", "Run MPC episodes, one per seed");
  rn->add_option("--data", r.data, "Data directory")->required();
  rn->add_option("--config", r.config, "Battery, forecast and solver config (JSON)");
  rn->add_option("--out", r.out, "Output directory")->required();
  rn->add_option("--method", r.method, "Market model")->check(CLI::IsMember({"icnn", "clearing"}));
  rn->add_option("--checkpoint", r.checkpoint, "Checkpoint used for every seed");
  rn->add_option("--models", r.models, "Directory of model_seed<N>.ckpt files");
  rn->add_option("--battery", r.battery, "Battery preset")
      ->check(CLI::IsMember({"1mw", "10mw", "50mw", "100mw", "custom"}));
  rn->add_option("--horizon", r.horizon, "Look-ahead in quarter hours (1 or 4)");
  rn->add_flag("--allow-any-horizon", r.any_horizon, "Accept horizons other than 1 and 4");
  rn->add_option("--forecast", r.forecast, "SI forecast model")->check(CLI::IsMember({"perfect", "gaussian"}));
  rn->add_option("--seed", r.seeds, "Seeds (forecast noise and model selection)")->delimiter(',');
  rn->add_option("--range", r.range, "Quarter hours to run: test (last twelfth) or all");
  rn->add_flag("--sweep", r.sweep, "Solve with the exact sweep instead of branch-and-bound");
  rn->add_option("--jobs", r.jobs, "Worker threads (default: all cores)");

  ReportOpts p;
  auto* rp = app.add_subcommand("report", "Compare run directories");
  rp->add_option("runs", p.runs, "Run directories")->required();
  rp->add_option("--out", p.out, "Directory for report.csv, report.txt and rmse_by_bin.csv");
  rp->add_option("--threshold-mw", p.threshold_mw, "|SI| split between small and large quarter hours");
  rp->add_option("--precision", p.precision, "Decimals in the tables");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  }

  try {
    if (gen->parsed()) cmd_generate(g, out);
    if (tr->parsed()) cmd_train(t, out, err);
    if (rn->parsed()) cmd_run(r, out);
    if (rp->parsed()) cmd_report(p, out);
    return kExitOk;
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const TrainingError& e) {
    err << "training failed: " << e.what() << "\n";
    return kExitDiverged;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
}

}  // namespace imbal::cli
