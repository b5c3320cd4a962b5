#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <functional>
#include <iterator>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "mftmes/orchestrator.hpp"
#include "mftmes/task_io.hpp"

namespace mftmes {

/// Everything an experiment needs, as read from a sectioned key/value file.
struct ExperimentConfig {
  std::vector<StrategyKind> strategies{StrategyKind::MftMes};
  double beta = 1.6;
  std::size_t n_tasks = 40;
  std::size_t n_replicates = 50;
  std::uint64_t master_seed = 1;
  std::vector<double> sweep_betas{0.0, 0.4, 0.8, 1.6, 3.2};

  RunSettings settings;
  GridSpec grid;
  TopologyConfig topology;

  std::string out_dir = "results";
  /// Empty means <out_dir>/oracle_cache.
  std::string oracle_cache;

  std::string oracle_cache_dir() const { return oracle_cache.empty() ? out_dir + "/oracle_cache" : oracle_cache; }

  void validate() const {
    if (strategies.empty()) throw ConfigError("experiment.strategy: at least one strategy required");
    if (n_tasks < 1) throw ConfigError("experiment.n_tasks must be >= 1");
    if (n_replicates < 1) throw ConfigError("experiment.n_replicates must be >= 1");
    if (!(beta >= 0.0)) throw ConfigError("experiment.beta must be >= 0");
    for (double b : sweep_betas)
      if (!(b >= 0.0)) throw ConfigError("sweep.betas must be >= 0");
    try {
      settings.validate();
      topology.validate();
      CandidateGrid check(grid);
      if (static_cast<std::size_t>(settings.init_design_count) > check.size())
        throw InvalidParameters("initial design larger than the grid");
    } catch (const InvalidParameters& e) {
      throw ConfigError(e.what());
    }
  }
};

namespace config_detail {

inline std::string fmt(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

template <class T>
std::string fmt_list(const std::vector<T>& xs, const std::function<std::string(const T&)>& f) {
  std::string out;
  for (std::size_t i = 0; i < xs.size(); ++i) out += (i ? ", " : "") + f(xs[i]);
  return out;
}

inline double parse_double(const std::string& key, const std::string& s) {
  double v = 0.0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) throw ConfigError(key + ": not a number: '" + s + "'");
  return v;
}

template <class Int>
Int parse_int(const std::string& key, const std::string& s) {
  Int v = 0;
  const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size())
    throw ConfigError(key + ": not a non-negative integer: '" + s + "'");
  return v;
}

inline bool parse_bool(const std::string& key, const std::string& s) {
  if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
  if (s == "false" || s == "0" || s == "no" || s == "off") return false;
  throw ConfigError(key + ": not a boolean: '" + s + "'");
}

struct Field {
  std::string section;
  std::string key;
  bool required;
  std::function<void(ExperimentConfig&, const std::vector<std::string>&)> set;
  std::function<std::string(const ExperimentConfig&)> get;

  std::string name() const { return section + "." + key; }
};

// Field accessors hand out mutable references; getters read through a copy.
inline ExperimentConfig& mutable_copy(const ExperimentConfig& c) {
  thread_local ExperimentConfig copy;
  copy = c;
  return copy;
}

inline const std::string& single(const std::string& name, const std::vector<std::string>& in) {
  if (in.size() != 1) throw ConfigError(name + ": expected a single value");
  return in.front();
}

inline Field real(std::string sec, std::string key, bool required, std::function<double&(ExperimentConfig&)> ref) {
  const std::string name = sec + "." + key;
  return {sec, key, required,
          [=](ExperimentConfig& c, const std::vector<std::string>& in) { ref(c) = parse_double(name, single(name, in)); },
          [=](const ExperimentConfig& c) { return fmt(ref(mutable_copy(c))); }};
}

template <class Int>
Field integer(std::string sec, std::string key, bool required, std::function<Int&(ExperimentConfig&)> ref) {
  const std::string name = sec + "." + key;
  return {sec, key, required,
          [=](ExperimentConfig& c, const std::vector<std::string>& in) { ref(c) = parse_int<Int>(name, single(name, in)); },
          [=](const ExperimentConfig& c) { return std::to_string(ref(mutable_copy(c))); }};
}

inline Field boolean(std::string sec, std::string key, bool required, std::function<bool&(ExperimentConfig&)> ref) {
  const std::string name = sec + "." + key;
  return {sec, key, required,
          [=](ExperimentConfig& c, const std::vector<std::string>& in) { ref(c) = parse_bool(name, single(name, in)); },
          [=](const ExperimentConfig& c) { return std::string(ref(mutable_copy(c)) ? "true" : "false"); }};
}

inline Field real_list(std::string sec, std::string key, bool required,
                       std::function<std::vector<double>&(ExperimentConfig&)> ref) {
  const std::string name = sec + "." + key;
  return {sec, key, required,
          [=](ExperimentConfig& c, const std::vector<std::string>& in) {
            std::vector<double> v;
            for (const auto& s : in) v.push_back(parse_double(name, s));
            ref(c) = std::move(v);
          },
          [=](const ExperimentConfig& c) {
            return fmt_list<double>(ref(mutable_copy(c)), [](const double& d) { return fmt(d); });
          }};
}

inline Field text(std::string sec, std::string key, bool required, std::function<std::string&(ExperimentConfig&)> ref) {
  const std::string name = sec + "." + key;
  return {sec, key, required,
          [=](ExperimentConfig& c, const std::vector<std::string>& in) { ref(c) = in.empty() ? "" : single(name, in); },
          [=](const ExperimentConfig& c) { return "\"" + ref(mutable_copy(c)) + "\""; }};
}

inline std::vector<StrategyKind> parse_strategies(const std::string& name, const std::vector<std::string>& in) {
  std::vector<StrategyKind> out;
  for (const auto& s : in) {
    if (s == "all") {
      out = {StrategyKind::Gibbon, StrategyKind::ContinualGibbon, StrategyKind::MftMes};
      continue;
    }
    try {
      out.push_back(strategy_from_string(s));
    } catch (const ConfigError& e) {
      throw ConfigError(name + ": " + e.what());
    }
  }
  return out;
}

/// The INI reader merges a repeated key into one multi-valued item, so repeats are caught on the raw text.
inline void reject_repeated_keys(const std::string& text) {
  std::istringstream lines(text);
  std::string line, section;
  std::set<std::string> keys;
  auto trim = [](std::string s) {
    const auto b = s.find_first_not_of(" \t\r");
    const auto e = s.find_last_not_of(" \t\r");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  };
  while (std::getline(lines, line)) {
    line = trim(line);
    if (line.empty() || line[0] == '#' || line[0] == ';') continue;
    if (line.front() == '[' && line.back() == ']') {
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) continue;
    const std::string key = trim(line.substr(0, eq));
    const std::string name = section.empty() ? key : section + "." + key;
    if (!keys.insert(name).second) throw ConfigError("duplicate key '" + name + "'");
  }
}

inline const std::vector<Field>& fields() {
  using C = ExperimentConfig;
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    f.push_back({"experiment", "strategy", true,
                 [](C& c, const std::vector<std::string>& in) { c.strategies = parse_strategies("experiment.strategy", in); },
                 [](const C& c) {
                   return fmt_list<StrategyKind>(c.strategies, [](const StrategyKind& k) { return to_string(k); });
                 }});
    f.push_back(real("experiment", "beta", true, [](C& c) -> double& { return c.beta; }));
    f.push_back(integer<std::size_t>("experiment", "n_tasks", true, [](C& c) -> std::size_t& { return c.n_tasks; }));
    f.push_back(
        integer<std::size_t>("experiment", "n_replicates", true, [](C& c) -> std::size_t& { return c.n_replicates; }));
    f.push_back(
        integer<std::uint64_t>("experiment", "master_seed", true, [](C& c) -> std::uint64_t& { return c.master_seed; }));
    f.push_back(
        integer<int>("experiment", "init_design_count", false, [](C& c) -> int& { return c.settings.init_design_count; }));
    f.push_back(boolean("experiment", "charge_initial_design", false,
                        [](C& c) -> bool& { return c.settings.charge_initial_design; }));
    f.push_back(integer<int>("experiment", "forced_fidelity", false, [](C& c) -> int& { return c.settings.forced_fidelity; }));

    f.push_back(real("cost", "budget", true, [](C& c) -> double& { return c.settings.cost.budget; }));
    f.push_back(real_list("cost", "costs", true, [](C& c) -> std::vector<double>& { return c.settings.cost.costs; }));

    f.push_back(integer<int>("acquisition", "num_particles", true, [](C& c) -> int& { return c.settings.num_particles; }));
    f.push_back(integer<int>("acquisition", "max_value_samples", true,
                             [](C& c) -> int& { return c.settings.acquisition.num_max_value_samples; }));
    f.push_back(boolean("acquisition", "sqrt_variance_factor", false,
                        [](C& c) -> bool& { return c.settings.acquisition.sqrt_variance_factor; }));

    f.push_back(real("model", "noise_variance", true, [](C& c) -> double& { return c.settings.noise_variance; }));
    f.push_back(integer<int>("model", "hidden_units", false, [](C& c) -> int& { return c.settings.architecture.hidden; }));
    f.push_back(integer<int>("model", "feature_dim", false, [](C& c) -> int& { return c.settings.architecture.output; }));
    f.push_back(real("model", "init_stddev", false, [](C& c) -> double& { return c.settings.init_stddev; }));

    f.push_back(real("svgd", "stepsize", false, [](C& c) -> double& { return c.settings.svgd.stepsize; }));
    f.push_back(integer<int>("svgd", "rounds_per_fit", false, [](C& c) -> int& { return c.settings.svgd.rounds_per_fit; }));
    f.push_back(boolean("svgd", "median_bandwidth", false, [](C& c) -> bool& { return c.settings.svgd.median_bandwidth; }));
    f.push_back(real("svgd", "fixed_bandwidth", false, [](C& c) -> double& { return c.settings.svgd.fixed_bandwidth; }));
    f.push_back(boolean("svgd", "cosine_decay", false, [](C& c) -> bool& { return c.settings.svgd.cosine_decay; }));
    f.push_back(boolean("svgd", "adagrad", false, [](C& c) -> bool& { return c.settings.svgd.adagrad; }));
    f.push_back(boolean("svgd", "freeze_fidelity_rate", false,
                        [](C& c) -> bool& { return c.settings.svgd.freeze_fidelity_rate; }));

    f.push_back(real("grid", "p0_min_dbm", false, [](C& c) -> double& { return c.grid.p0_min_dbm; }));
    f.push_back(real("grid", "p0_max_dbm", false, [](C& c) -> double& { return c.grid.p0_max_dbm; }));
    f.push_back(real("grid", "p0_step_db", false, [](C& c) -> double& { return c.grid.p0_step_db; }));
    f.push_back(real_list("grid", "alphas", false, [](C& c) -> std::vector<double>& { return c.grid.alphas; }));

    f.push_back(integer<int>("topology", "n_cells", false, [](C& c) -> int& { return c.topology.n_cells; }));
    f.push_back(integer<int>("topology", "n_ues_per_cell", false, [](C& c) -> int& { return c.topology.n_ues_per_cell; }));
    f.push_back(integer<int>("topology", "n_tx", false, [](C& c) -> int& { return c.topology.n_tx; }));
    f.push_back(integer<int>("topology", "n_rx", false, [](C& c) -> int& { return c.topology.n_rx; }));
    f.push_back(real("topology", "cell_radius_m", false, [](C& c) -> double& { return c.topology.cell_radius_m; }));
    f.push_back(real("topology", "ue_min_dist_m", false, [](C& c) -> double& { return c.topology.ue_min_dist_m; }));
    f.push_back(real("topology", "noise_power_db", false, [](C& c) -> double& { return c.topology.noise_power_db; }));
    f.push_back(real("topology", "carrier_ghz", false, [](C& c) -> double& { return c.topology.carrier_ghz; }));
    f.push_back(real("topology", "p_max_dbm", false, [](C& c) -> double& { return c.topology.p_max_dbm; }));
    f.push_back(real("topology", "shadow_std_los_db", false,
                     [](C& c) -> double& { return c.topology.pathloss.shadow_std_los_db; }));
    f.push_back(real("topology", "shadow_std_nlos_db", false,
                     [](C& c) -> double& { return c.topology.pathloss.shadow_std_nlos_db; }));

    f.push_back(real_list("sweep", "betas", false, [](C& c) -> std::vector<double>& { return c.sweep_betas; }));

    f.push_back(text("output", "out_dir", false, [](C& c) -> std::string& { return c.out_dir; }));
    f.push_back(text("output", "oracle_cache", false, [](C& c) -> std::string& { return c.oracle_cache; }));
    return f;
  }();
  return table;
}

}  // namespace config_detail

/// Parses the sectioned key/value format. Unknown sections or keys and missing
/// required keys are errors naming the key.
inline ExperimentConfig parse_config(std::istream& in) {
  const std::string text{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  config_detail::reject_repeated_keys(text);
  std::istringstream body(text);
  std::vector<CLI::ConfigItem> items;
  try {
    items = CLI::ConfigINI().from_config(body);
  } catch (const std::exception& e) {
    throw ConfigError(std::string("config syntax: ") + e.what());
  }
  const auto& table = config_detail::fields();
  ExperimentConfig cfg;
  std::set<std::string> seen;
  for (const auto& it : items) {
    if (it.name == "++" || it.name == "--") continue;
    const std::string section = it.parents.empty() ? "" : it.parents.back();
    const std::string name = section.empty() ? it.name : section + "." + it.name;
    if (it.parents.size() > 1) throw ConfigError("unknown key '" + name + "'");
    const auto f = std::find_if(table.begin(), table.end(),
                                [&](const config_detail::Field& fd) { return fd.section == section && fd.key == it.name; });
    if (f == table.end()) throw ConfigError("unknown key '" + name + "'");
    if (!seen.insert(name).second) throw ConfigError("duplicate key '" + name + "'");
    f->set(cfg, it.inputs);
  }
  for (const auto& f : table)
    if (f.required && !seen.count(f.name())) throw ConfigError("missing required key '" + f.key + "' in [" + f.section + "]");
  cfg.validate();
  return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path);
  return parse_config(in);
}

/// Canonical text of the effective configuration; parse_config(emit_config(c)) == c.
inline std::string emit_config(const ExperimentConfig& cfg) {
  std::ostringstream out;
  std::string section;
  for (const auto& f : config_detail::fields()) {
    if (f.section != section) {
      if (!section.empty()) out << '\n';
      section = f.section;
      out << '[' << section << "]\n";
    }
    out << f.key << " = " << f.get(cfg) << '\n';
  }
  return out.str();
}

inline std::string config_hash(const ExperimentConfig& cfg) { return hex64(hash_text(emit_config(cfg))); }

}  // namespace mftmes
