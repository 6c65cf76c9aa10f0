#pragma once

// Config-driven experiment runner behind the command-line tool.
//
// Config (JSON, schema_version 1):
//
//   {
//     "schema_version": 1,
//     "dataset":   {"type": "quadratic", "m": 30, "n": 50, "d": 50,
//                   "eig_range": [1, 10], "noise_std": 0.001},
//     "delay":     {"type": "synthetic", "model_size_bytes": 1e6,
//                   "link_speed_range": [2e5, 5e6], "compute_range": [15, 100]}
//               or {"type": "trace", "path": "trace.csv", "lognormal_sigma": 0.5},
//     "selectors": [{"type": "submodular"}, {"type": "random", "K": 10}, ...],
//     "engine":    {"eta": "auto", "local_steps": 1, "max_rounds": 200,
//                   "target_metric": "test_loss", "target_value": 0.5},
//     "seeds":     [1, 2, 3]
//   }
//
// Every key is checked; unknown keys are rejected. See README.md for the
// full list of selector knobs.

#include "fedsel/core.hpp"
#include "fedsel/datagen.hpp"
#include "fedsel/delays.hpp"
#include "fedsel/engine.hpp"
#include "fedsel/selection.hpp"

#include "json.hpp"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

namespace fedsel {

namespace fs = std::filesystem;

class ConfigError : public std::invalid_argument {
public:
  using std::invalid_argument::invalid_argument;
};

enum class EtaRule { Global, Clients, Fixed };

struct SelectorSpec {
  std::string type;
  std::string name;  // output file prefix, defaults to type
  std::size_t K = 0;
  std::optional<std::size_t> local_steps;

  SetMethod method = SetMethod::Prefix;
  SamplingMode mode = SamplingMode::K1;
  int restarts = 5;
  bool corner_starts = true;
  bool every_round = true;
  std::size_t covariance_batch = 0;
  std::optional<double> rescale_margin = 0.05;

  std::size_t candidates = 0;  // power_of_choice
  std::size_t initial = 2;     // flanp
  std::size_t patience = 3;
  double threshold = 0.01;
};

struct ExperimentConfig {
  QuadraticSpec dataset;
  std::string delay_type = "synthetic";
  SyntheticDelayConfig synthetic;
  fs::path trace_path;
  double lognormal_sigma = 0.5;

  std::vector<SelectorSpec> selectors;

  EtaRule eta_rule = EtaRule::Global;
  double eta = 0.0;
  std::size_t local_steps = 1;
  std::size_t max_rounds = 100;
  TargetMetric target_metric = TargetMetric::TestLoss;
  std::optional<double> target_value;
  bool target_relative = false;  // target_value is a fraction of the metric at w0

  std::vector<std::uint64_t> seeds;
};

namespace detail {

using json = nlohmann::json;

inline void check_keys(const json& obj, const std::string& where, std::initializer_list<const char*> allowed) {
  if (!obj.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [key, _] : obj.items()) {
    bool ok = false;
    for (const char* a : allowed) ok = ok || key == a;
    if (!ok) throw ConfigError(where + "." + key + ": unknown key");
  }
}

inline const json& require(const json& obj, const std::string& where, const char* key) {
  if (!obj.contains(key)) throw ConfigError(where + "." + key + ": missing");
  return obj.at(key);
}

inline double get_number(const json& v, const std::string& path) {
  if (!v.is_number()) throw ConfigError(path + ": expected a number");
  return v.get<double>();
}

inline std::size_t get_count(const json& v, const std::string& path, std::size_t min = 0) {
  if (!v.is_number_integer() && !v.is_number_unsigned()) throw ConfigError(path + ": expected an integer");
  const auto x = v.get<long long>();
  if (x < static_cast<long long>(min)) throw ConfigError(path + ": must be >= " + std::to_string(min));
  return static_cast<std::size_t>(x);
}

inline bool get_bool(const json& v, const std::string& path) {
  if (!v.is_boolean()) throw ConfigError(path + ": expected true or false");
  return v.get<bool>();
}

inline std::string get_string(const json& v, const std::string& path) {
  if (!v.is_string()) throw ConfigError(path + ": expected a string");
  return v.get<std::string>();
}

inline std::pair<double, double> get_range(const json& v, const std::string& path) {
  if (!v.is_array() || v.size() != 2) throw ConfigError(path + ": expected [lo, hi]");
  const double lo = get_number(v[0], path + "[0]");
  const double hi = get_number(v[1], path + "[1]");
  if (hi < lo) throw ConfigError(path + ": lo must not exceed hi");
  return {lo, hi};
}

inline void parse_dataset(const json& j, ExperimentConfig& cfg) {
  const std::string w = "dataset";
  check_keys(j, w, {"type", "m", "n", "d", "eig_range", "noise_std"});
  if (get_string(require(j, w, "type"), w + ".type") != "quadratic")
    throw ConfigError(w + ".type: only \"quadratic\" is supported");
  auto& q = cfg.dataset;
  q.m = get_count(require(j, w, "m"), w + ".m", 1);
  q.n = get_count(require(j, w, "n"), w + ".n", 1);
  q.d = get_count(require(j, w, "d"), w + ".d", 1);
  if (j.contains("eig_range")) {
    const auto [lo, hi] = get_range(j["eig_range"], w + ".eig_range");
    if (!(lo > 0.0)) throw ConfigError(w + ".eig_range: eigenvalues must be positive");
    q.eig_lo = lo;
    q.eig_hi = hi;
  }
  if (j.contains("noise_std")) {
    q.noise_std = get_number(j["noise_std"], w + ".noise_std");
    if (q.noise_std < 0.0) throw ConfigError(w + ".noise_std: must be >= 0");
  }
}

inline void parse_delay(const json& j, ExperimentConfig& cfg, const fs::path& base_dir) {
  const std::string w = "delay";
  const auto type = get_string(require(j, w, "type"), w + ".type");
  if (type == "synthetic") {
    check_keys(j, w, {"type", "model_size_bytes", "link_speed_range", "compute_range"});
    auto& s = cfg.synthetic;
    if (j.contains("model_size_bytes")) s.model_size_bytes = get_number(j["model_size_bytes"], w + ".model_size_bytes");
    if (j.contains("link_speed_range")) std::tie(s.link_lo, s.link_hi) = get_range(j["link_speed_range"], w + ".link_speed_range");
    if (j.contains("compute_range")) std::tie(s.compute_lo, s.compute_hi) = get_range(j["compute_range"], w + ".compute_range");
    try {
      s.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(w + ": " + e.what());
    }
  } else if (type == "trace") {
    check_keys(j, w, {"type", "path", "lognormal_sigma"});
    fs::path p = get_string(require(j, w, "path"), w + ".path");
    if (p.is_relative()) p = base_dir / p;
    if (!fs::exists(p)) throw ConfigError(w + ".path: trace file " + p.string() + " does not exist");
    cfg.trace_path = p;
    if (j.contains("lognormal_sigma")) {
      cfg.lognormal_sigma = get_number(j["lognormal_sigma"], w + ".lognormal_sigma");
      if (cfg.lognormal_sigma < 0.0) throw ConfigError(w + ".lognormal_sigma: must be >= 0");
    }
  } else {
    throw ConfigError(w + ".type: expected \"synthetic\" or \"trace\", got \"" + type + "\"");
  }
  cfg.delay_type = type;
}

inline SelectorSpec parse_selector(const json& j, std::size_t idx, std::size_t m) {
  SelectorSpec s;
  const std::string w0 = "selectors[" + std::to_string(idx) + "]";
  if (!j.is_object()) throw ConfigError(w0 + ": expected an object");
  s.type = get_string(require(j, w0, "type"), w0 + ".type");
  const std::string w = w0 + " (" + s.type + ")";
  const auto common = [&](const json& o, const std::string& key) {
    if (key == "type") return true;
    if (key == "name") {
      s.name = get_string(o, w + ".name");
      return true;
    }
    if (key == "local_steps") {
      s.local_steps = get_count(o, w + ".local_steps", 1);
      return true;
    }
    return false;
  };
  const auto het = [&](const json& o, const std::string& key) {
    if (key == "every_round") s.every_round = get_bool(o, w + ".every_round");
    else if (key == "covariance_batch") s.covariance_batch = get_count(o, w + ".covariance_batch");
    else if (key == "rescale_margin") {
      if (o.is_null()) s.rescale_margin.reset();
      else {
        const double v = get_number(o, w + ".rescale_margin");
        if (!(v > 0.0 && v < 1.0)) throw ConfigError(w + ".rescale_margin: must be in (0, 1) or null");
        s.rescale_margin = v;
      }
    } else
      return false;
    return true;
  };
  const auto need_K = [&](bool required) {
    if (!j.contains("K")) {
      if (required) throw ConfigError(w + ".K: missing");
      return;
    }
    s.K = get_count(j["K"], w + ".K", 1);
    if (s.K > m)
      throw ConfigError(w + ".K: K = " + std::to_string(s.K) + " exceeds the number of clients m = " + std::to_string(m));
  };

  for (const auto& [key, val] : j.items()) {
    if (common(val, key) || key == "K") continue;
    bool ok = false;
    if (s.type == "submodular") {
      ok = het(val, key);
      if (key == "method") {
        const auto v = get_string(val, w + ".method");
        if (v == "prefix") s.method = SetMethod::Prefix;
        else if (v == "min_norm_point") s.method = SetMethod::MinNormPoint;
        else if (v == "exhaustive") s.method = SetMethod::Exhaustive;
        else throw ConfigError(w + ".method: expected prefix, min_norm_point or exhaustive");
        ok = true;
      }
    } else if (s.type == "sampling") {
      ok = het(val, key);
      if (key == "mode") {
        const auto v = get_string(val, w + ".mode");
        if (v == "k1") s.mode = SamplingMode::K1;
        else if (v == "exact") s.mode = SamplingMode::ExactK;
        else throw ConfigError(w + ".mode: expected k1 or exact");
        ok = true;
      } else if (key == "restarts") {
        s.restarts = static_cast<int>(get_count(val, w + ".restarts"));
        ok = true;
      } else if (key == "corner_starts") {
        s.corner_starts = get_bool(val, w + ".corner_starts");
        ok = true;
      }
    } else if (s.type == "power_of_choice") {
      if (key == "candidates") {
        s.candidates = get_count(val, w + ".candidates", 1);
        ok = true;
      }
    } else if (s.type == "flanp") {
      if (key == "initial") s.initial = get_count(val, w + ".initial", 1), ok = true;
      else if (key == "patience") s.patience = get_count(val, w + ".patience", 1), ok = true;
      else if (key == "threshold") s.threshold = get_number(val, w + ".threshold"), ok = true;
    } else if (s.type != "random" && s.type != "divfl") {
      throw ConfigError(w0 + ".type: unknown selector \"" + s.type +
                        "\" (expected submodular, sampling, random, power_of_choice, divfl or flanp)");
    }
    if (!ok) throw ConfigError(w + "." + key + ": unknown key");
  }

  if (s.type == "submodular") {
    if (j.contains("K")) throw ConfigError(w + ".K: the set selector chooses its own size");
  } else if (s.type == "flanp") {
    if (j.contains("K")) throw ConfigError(w + ".K: FLANP grows its own prefix");
    if (s.initial > m) throw ConfigError(w + ".initial: exceeds the number of clients m = " + std::to_string(m));
  } else if (s.type == "random" || s.type == "divfl" || s.type == "power_of_choice" || s.type == "sampling") {
    need_K(true);
    if (s.type == "power_of_choice" && s.candidates != 0 && (s.candidates < s.K || s.candidates > m))
      throw ConfigError(w + ".candidates: must lie in [K, m]");
  } else {
    throw ConfigError(w0 + ".type: unknown selector \"" + s.type +
                      "\" (expected submodular, sampling, random, power_of_choice, divfl or flanp)");
  }
  if (s.name.empty()) s.name = s.type;
  for (char c : s.name)
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_'))
      throw ConfigError(w + ".name: only letters, digits, '-' and '_' are allowed");
  return s;
}

inline void parse_engine(const json& j, ExperimentConfig& cfg) {
  const std::string w = "engine";
  check_keys(j, w, {"eta", "local_steps", "max_rounds", "target_metric", "target_value", "target_relative"});
  if (j.contains("eta")) {
    const auto& e = j["eta"];
    if (e.is_string()) {
      const auto v = e.get<std::string>();
      if (v == "auto") cfg.eta_rule = EtaRule::Global;
      else if (v == "auto_clients") cfg.eta_rule = EtaRule::Clients;
      else throw ConfigError(w + ".eta: expected a number, \"auto\" or \"auto_clients\"");
    } else {
      cfg.eta_rule = EtaRule::Fixed;
      cfg.eta = get_number(e, w + ".eta");
      if (!(cfg.eta > 0.0)) throw ConfigError(w + ".eta: must be positive");
    }
  }
  if (j.contains("local_steps")) cfg.local_steps = get_count(j["local_steps"], w + ".local_steps", 1);
  if (j.contains("max_rounds")) cfg.max_rounds = get_count(j["max_rounds"], w + ".max_rounds", 1);
  if (j.contains("target_metric")) {
    const auto v = get_string(j["target_metric"], w + ".target_metric");
    if (v == "test_loss") cfg.target_metric = TargetMetric::TestLoss;
    else if (v == "train_loss") cfg.target_metric = TargetMetric::TrainLoss;
    else if (v == "suboptimality") cfg.target_metric = TargetMetric::Suboptimality;
    else throw ConfigError(w + ".target_metric: expected test_loss, train_loss or suboptimality");
  }
  if (j.contains("target_value")) {
    cfg.target_value = get_number(j["target_value"], w + ".target_value");
  }
  if (j.contains("target_relative")) cfg.target_relative = get_bool(j["target_relative"], w + ".target_relative");
  if (cfg.target_relative && !cfg.target_value) throw ConfigError(w + ".target_relative: needs target_value");
}

// 1-based line of a byte offset, for parse error messages.
inline std::size_t line_of(const std::string& text, std::size_t byte) {
  byte = std::min(byte, text.size());
  return 1 + static_cast<std::size_t>(std::count(text.begin(), text.begin() + static_cast<std::ptrdiff_t>(byte), '\n'));
}

}  // namespace detail

inline constexpr int kSchemaVersion = 1;

inline ExperimentConfig parse_config(const std::string& text, const fs::path& base_dir = ".") {
  using detail::json;
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError("config line " + std::to_string(detail::line_of(text, e.byte == 0 ? 0 : e.byte - 1)) +
                      ": " + e.what());
  }
  detail::check_keys(j, "config", {"schema_version", "dataset", "delay", "selectors", "engine", "seeds"});
  const auto version = detail::get_count(detail::require(j, "config", "schema_version"), "schema_version");
  if (version != kSchemaVersion)
    throw ConfigError("schema_version: unsupported version " + std::to_string(version) + " (expected " +
                      std::to_string(kSchemaVersion) + ")");

  ExperimentConfig cfg;
  detail::parse_dataset(detail::require(j, "config", "dataset"), cfg);
  detail::parse_delay(detail::require(j, "config", "delay"), cfg, base_dir);
  if (j.contains("engine")) detail::parse_engine(j["engine"], cfg);

  const auto& sel = detail::require(j, "config", "selectors");
  if (!sel.is_array() || sel.empty()) throw ConfigError("selectors: expected a non-empty list");
  std::set<std::string> names;
  for (std::size_t k = 0; k < sel.size(); ++k) {
    auto s = detail::parse_selector(sel[k], k, cfg.dataset.m);
    if (!names.insert(s.name).second)
      throw ConfigError("selectors[" + std::to_string(k) + "].name: duplicate selector name \"" + s.name + "\"");
    cfg.selectors.push_back(std::move(s));
  }

  const auto& seeds = detail::require(j, "config", "seeds");
  if (!seeds.is_array() || seeds.empty()) throw ConfigError("seeds: expected a non-empty list of integers");
  std::set<std::uint64_t> seen;
  for (std::size_t k = 0; k < seeds.size(); ++k) {
    const auto s = static_cast<std::uint64_t>(detail::get_count(seeds[k], "seeds[" + std::to_string(k) + "]"));
    if (!seen.insert(s).second) throw ConfigError("seeds[" + std::to_string(k) + "]: duplicate seed");
    cfg.seeds.push_back(s);
  }

  if (cfg.delay_type == "trace") {
    TraceDelayConfig t;
    try {
      t = read_trace(cfg.trace_path, cfg.lognormal_sigma);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("delay.path: ") + e.what());
    }
    if (t.mean_delays.size() != cfg.dataset.m)
      throw ConfigError("delay.path: trace has " + std::to_string(t.mean_delays.size()) + " clients but dataset.m = " +
                        std::to_string(cfg.dataset.m));
  }
  return cfg;
}

inline ExperimentConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.parent_path().empty() ? fs::path(".") : path.parent_path());
}

// ---------------------------------------------------------------------------
// One (selector, seed) run.

// Everything a run needs that depends only on the seed.
struct SeedInstance {
  std::unique_ptr<QuadraticProblem> problem;  // clients in roster order
  ClientRoster roster;
  DelayModel delays;
};

inline SeedInstance build_instance(const ExperimentConfig& cfg, std::uint64_t seed) {
  QuadraticSpec spec = cfg.dataset;
  spec.seed = seed;
  const auto raw = generate_quadratic(spec);

  SeedInstance inst;
  if (cfg.delay_type == "synthetic") {
    // Delay means use their own stream so changing the dataset leaves them put.
    inst.roster = make_roster(synthesize_delays(cfg.synthetic, spec.m, seed ^ 0x9e3779b97f4a7c15ULL));
    inst.delays = DelayModel::constant({inst.roster.mean_delays().begin(), inst.roster.mean_delays().end()});
  } else {
    const auto trace = read_trace(cfg.trace_path, cfg.lognormal_sigma);
    inst.roster = make_roster(trace.mean_delays);
    inst.delays = make_trace_model(trace, inst.roster);
  }
  inst.problem = std::make_unique<QuadraticProblem>(permute_clients(raw, inst.roster.permutation()));
  return inst;
}

inline std::unique_ptr<Selector> make_selector(const SelectorSpec& s, std::uint64_t seed) {
  if (s.type == "submodular") return std::make_unique<SubmodularSelector>(s.method, s.every_round);
  if (s.type == "sampling") {
    SamplingOptions opt;
    opt.restarts = s.restarts;
    opt.corner_starts = s.corner_starts;
    opt.seed = seed;
    return std::make_unique<SamplingSelector>(s.K, s.mode, s.every_round, opt);
  }
  if (s.type == "random") return std::make_unique<RandomSelector>(s.K);
  if (s.type == "power_of_choice") return std::make_unique<PowerOfChoiceSelector>(s.K, s.candidates);
  if (s.type == "divfl") return std::make_unique<DivFLSelector>(s.K);
  if (s.type == "flanp") return std::make_unique<FlanpSelector>(s.initial, s.patience, s.threshold);
  throw ConfigError("unknown selector type " + s.type);
}

inline double max_client_curvature(const QuadraticProblem& prob) {
  double L = 0.0;
  for (std::size_t i = 0; i < prob.clients(); ++i) {
    Eigen::SelfAdjointEigenSolver<Matrix> es(prob.covariance(i), Eigen::EigenvaluesOnly);
    L = std::max(L, es.eigenvalues().maxCoeff());
  }
  return L;
}

inline EngineConfig engine_config(const ExperimentConfig& cfg, const SelectorSpec& s, const QuadraticProblem& prob,
                                  std::uint64_t seed) {
  EngineConfig e;
  switch (cfg.eta_rule) {
    case EtaRule::Global: e.eta = 1.0 / prob.curvature().L; break;
    case EtaRule::Clients: e.eta = 1.0 / max_client_curvature(prob); break;
    case EtaRule::Fixed: e.eta = cfg.eta; break;
  }
  e.local_steps = s.local_steps.value_or(cfg.local_steps);
  e.max_rounds = cfg.max_rounds;
  e.target_metric = cfg.target_metric;
  if (cfg.target_value) {
    double t = *cfg.target_value;
    if (cfg.target_relative) {
      const Vector w0 = Vector::Zero(prob.dim());
      RoundStats s0;
      s0.record.train_loss = prob.global_loss(w0);
      s0.record.test_metric = prob.normalized_test_loss(w0);
      s0.suboptimality = prob.suboptimality(w0);
      t *= metric_of(s0, cfg.target_metric);
    }
    e.target = t;
  }
  e.seed = seed;
  e.covariance_batch = s.covariance_batch;
  e.rescale_margin = s.rescale_margin;
  e.refresh_heterogeneity = true;
  return e;
}

enum class RunStatus { Ok, Diverged, Failed };

inline const char* to_string(RunStatus s) {
  switch (s) {
    case RunStatus::Ok: return "ok";
    case RunStatus::Diverged: return "diverged";
    case RunStatus::Failed: return "failed";
  }
  return "failed";
}

struct RunSummary {
  std::string selector;
  std::uint64_t seed = 0;
  RunStatus status = RunStatus::Ok;
  std::size_t rounds = 0;
  std::optional<double> time_to_target;
  double final_time = 0.0;
  double final_train_loss = std::numeric_limits<double>::quiet_NaN();
  double final_test_metric = std::numeric_limits<double>::quiet_NaN();
  std::string message;
  double selector_seconds = 0.0;  // host time; not written to CSV
};

// %.17g: round-trips doubles and prints identically on every run.
inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string run_file_name(const std::string& selector, std::uint64_t seed) {
  return selector + "_seed" + std::to_string(seed) + ".csv";
}

inline constexpr const char* kRoundCsvHeader = "round,wallclock_s,round_delay_s,selected_clients,train_loss,test_metric";

// Selected ids are printed 1-based in the client order of the dataset or trace.
inline void write_round_csv(std::ostream& out, const RunResult& res, const ClientRoster& roster) {
  out << kRoundCsvHeader << '\n';
  for (const auto& st : res.rounds) {
    const auto& r = st.record;
    std::vector<std::size_t> ids;
    ids.reserve(r.selected.size());
    for (auto i : r.selected) ids.push_back(roster.original_index(i) + 1);
    std::sort(ids.begin(), ids.end());
    out << r.round << ',' << format_double(r.cumulative_time) << ',' << format_double(r.round_delay) << ',';
    for (std::size_t k = 0; k < ids.size(); ++k) out << (k ? ";" : "") << ids[k];
    out << ',' << format_double(r.train_loss) << ',' << format_double(r.test_metric) << '\n';
  }
}

inline std::string csv_quote(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += (c == '\n' ? ' ' : c);
  }
  return out + "\"";
}

inline void write_summary_csv(std::ostream& out, const std::vector<RunSummary>& runs) {
  out << "selector,seed,status,rounds,time_to_target_s,final_wallclock_s,final_train_loss,final_test_metric,message\n";
  for (const auto& r : runs) {
    out << r.selector << ',' << r.seed << ',' << to_string(r.status) << ',' << r.rounds << ','
        << (r.time_to_target ? format_double(*r.time_to_target) : "N/A") << ',' << format_double(r.final_time) << ','
        << format_double(r.final_train_loss) << ',' << format_double(r.final_test_metric) << ','
        << csv_quote(r.message) << '\n';
  }
}

inline RunSummary run_one(const ExperimentConfig& cfg, const SelectorSpec& spec, const SeedInstance& inst,
                          std::uint64_t seed, const fs::path& out_dir) {
  RunSummary sum;
  sum.selector = spec.name;
  sum.seed = seed;
  RunResult res;
  try {
    auto selector = make_selector(spec, seed);
    const auto ecfg = engine_config(cfg, spec, *inst.problem, seed);
    res = run(*inst.problem, inst.roster, inst.delays, *selector, ecfg);
    if (res.diverged) {
      sum.status = RunStatus::Diverged;
      sum.message = res.message;
    }
    if (selector->flagged()) sum.message += (sum.message.empty() ? "" : "; ") + std::string("optimizer flagged");
  } catch (const std::exception& e) {
    sum.status = RunStatus::Failed;
    sum.message = e.what();
  }
  if (!res.rounds.empty()) {
    const auto& last = res.rounds.back().record;
    sum.rounds = last.round;
    sum.final_time = last.cumulative_time;
    sum.final_train_loss = last.train_loss;
    sum.final_test_metric = last.test_metric;
  }
  sum.time_to_target = res.time_to_target;
  sum.selector_seconds = res.selector_seconds;

  std::ofstream f(out_dir / run_file_name(spec.name, seed));
  if (!f) throw std::runtime_error("cannot write " + (out_dir / run_file_name(spec.name, seed)).string());
  write_round_csv(f, res, inst.roster);
  return sum;
}

struct ExperimentOutcome {
  std::vector<RunSummary> runs;  // config order: seeds outer, selectors inner
  bool all_ok() const {
    return std::all_of(runs.begin(), runs.end(), [](const auto& r) { return r.status == RunStatus::Ok; });
  }
};

// Runs every (selector, seed) pair, `jobs` at a time. Per-seed instances are
// built once and shared read-only; each run owns its selector and generators.
inline ExperimentOutcome run_experiment(const ExperimentConfig& cfg, const fs::path& out_dir, unsigned jobs = 1,
                                        std::ostream* log = nullptr) {
  fs::create_directories(out_dir);
  std::vector<SeedInstance> instances(cfg.seeds.size());
  for (std::size_t s = 0; s < cfg.seeds.size(); ++s) instances[s] = build_instance(cfg, cfg.seeds[s]);

  const std::size_t n_sel = cfg.selectors.size();
  const std::size_t total = cfg.seeds.size() * n_sel;
  ExperimentOutcome out;
  out.runs.resize(total);
  std::atomic<std::size_t> next{0};
  std::mutex io;
  std::exception_ptr fatal;

  const auto worker = [&] {
    for (std::size_t k = next++; k < total; k = next++) {
      const auto s = k / n_sel;
      const auto& spec = cfg.selectors[k % n_sel];
      try {
        out.runs[k] = run_one(cfg, spec, instances[s], cfg.seeds[s], out_dir);
      } catch (...) {
        std::lock_guard lock(io);
        if (!fatal) fatal = std::current_exception();
        continue;
      }
      if (log) {
        const auto& r = out.runs[k];
        std::lock_guard lock(io);
        *log << r.selector << " seed " << r.seed << ": " << to_string(r.status) << ", " << r.rounds << " rounds, "
             << "time to target " << (r.time_to_target ? format_double(*r.time_to_target) + " s" : "N/A")
             << ", selector time " << r.selector_seconds << " s";
        if (!r.message.empty()) *log << " (" << r.message << ")";
        *log << '\n';
      }
    }
  };
  jobs = std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(total)));
  std::vector<std::thread> pool;
  for (unsigned t = 1; t < jobs; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  if (fatal) std::rethrow_exception(fatal);

  std::ofstream f(out_dir / "summary.csv");
  if (!f) throw std::runtime_error("cannot write " + (out_dir / "summary.csv").string());
  write_summary_csv(f, out.runs);
  return out;
}

// ---------------------------------------------------------------------------
// Time-to-target report over a directory of round CSVs.

struct RoundRow {
  std::size_t round = 0;
  double wallclock = 0.0;
  double train_loss = 0.0;
  double test_metric = 0.0;
};

inline std::vector<RoundRow> read_round_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kRoundCsvHeader)
    throw std::runtime_error(path.string() + ": not a round CSV (bad header)");
  std::vector<RoundRow> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string c; std::getline(ss, c, ',');) cells.push_back(c);
    if (cells.size() == 5 && line.back() == ',') cells.emplace_back();
    if (cells.size() != 6) throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": expected 6 columns");
    try {
      rows.push_back({std::stoul(cells[0]), std::stod(cells[1]), std::stod(cells[4]), std::stod(cells[5])});
    } catch (const std::exception&) {
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": malformed number");
    }
  }
  return rows;
}

// Clock value of the first row at or below target; no interpolation.
inline std::optional<double> time_to_target(std::span<const RoundRow> rows, double target, bool use_train = false) {
  for (const auto& r : rows)
    if ((use_train ? r.train_loss : r.test_metric) <= target) return r.wallclock;
  return std::nullopt;
}

// Median with unreached runs counted as +inf; N/A when the median is unreached.
inline std::optional<double> median_time(std::vector<std::optional<double>> xs) {
  if (xs.empty()) return std::nullopt;
  std::vector<double> v;
  for (const auto& x : xs) v.push_back(x.value_or(std::numeric_limits<double>::infinity()));
  std::sort(v.begin(), v.end());
  const auto n = v.size();
  const double med = n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
  if (!std::isfinite(med)) return std::nullopt;
  return med;
}

struct SelectorReport {
  std::string selector;
  std::optional<double> median;
  std::vector<std::pair<std::uint64_t, std::optional<double>>> per_seed;  // ascending seed
};

inline std::vector<SelectorReport> report_time_to_target(const fs::path& runs_dir, double target,
                                                         bool use_train = false) {
  if (!fs::is_directory(runs_dir)) throw std::runtime_error(runs_dir.string() + " is not a directory");
  std::map<std::string, std::map<std::uint64_t, std::optional<double>>> found;
  for (const auto& entry : fs::directory_iterator(runs_dir)) {
    if (!entry.is_regular_file() || entry.path().extension() != ".csv") continue;
    const auto stem = entry.path().stem().string();
    const auto pos = stem.rfind("_seed");
    if (pos == std::string::npos || pos + 5 >= stem.size()) continue;
    const auto seed_str = stem.substr(pos + 5);
    if (!std::all_of(seed_str.begin(), seed_str.end(), [](unsigned char c) { return std::isdigit(c); })) continue;
    const auto rows = read_round_csv(entry.path());
    found[stem.substr(0, pos)][std::stoull(seed_str)] = time_to_target(rows, target, use_train);
  }
  if (found.empty()) throw std::runtime_error("no run CSVs found in " + runs_dir.string());
  std::vector<SelectorReport> out;
  for (const auto& [name, seeds] : found) {
    SelectorReport r;
    r.selector = name;
    std::vector<std::optional<double>> ts;
    for (const auto& [seed, t] : seeds) {
      r.per_seed.emplace_back(seed, t);
      ts.push_back(t);
    }
    r.median = median_time(ts);
    out.push_back(std::move(r));
  }
  return out;
}

inline std::string format_time(const std::optional<double>& t) { return t ? format_double(*t) : "N/A"; }

inline void write_report_csv(std::ostream& out, const std::vector<SelectorReport>& rep) {
  out << "selector,median_time_to_target_s,per_seed_time_to_target_s\n";
  for (const auto& r : rep) {
    out << r.selector << ',' << format_time(r.median) << ',';
    for (std::size_t k = 0; k < r.per_seed.size(); ++k)
      out << (k ? ";" : "") << r.per_seed[k].first << '=' << format_time(r.per_seed[k].second);
    out << '\n';
  }
}

inline void write_report_text(std::ostream& out, const std::vector<SelectorReport>& rep, double target) {
  const auto short_time = [](const std::optional<double>& t) {
    if (!t) return std::string("N/A");
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.1f", *t);
    return std::string(buf);
  };
  std::size_t w_name = 8, w_med = 6;
  for (const auto& r : rep) {
    w_name = std::max(w_name, r.selector.size());
    w_med = std::max(w_med, short_time(r.median).size());
  }
  char tbuf[32];
  std::snprintf(tbuf, sizeof tbuf, "%g", target);
  out << "time to target " << tbuf << " (seconds, N/A = not reached)\n";
  const auto pad = [](std::string s, std::size_t w) { return s.size() < w ? s + std::string(w - s.size(), ' ') : s; };
  out << pad("selector", w_name) << "  " << pad("median", w_med) << "  per seed\n";
  for (const auto& r : rep) {
    out << pad(r.selector, w_name) << "  " << pad(short_time(r.median), w_med) << " ";
    for (const auto& [seed, t] : r.per_seed) out << " " << seed << ":" << short_time(t);
    out << '\n';
  }
}

}  // namespace fedsel
