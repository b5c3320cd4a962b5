#pragma once

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>

#include <json.hpp>

#include "mftmes/math.hpp"
#include "mftmes/wireless.hpp"

namespace mftmes {

inline nlohmann::json to_json(const TopologyConfig& c) {
  const auto& pl = c.pathloss;
  return {{"n_cells", c.n_cells},
          {"n_ues_per_cell", c.n_ues_per_cell},
          {"n_tx", c.n_tx},
          {"n_rx", c.n_rx},
          {"cell_radius_m", c.cell_radius_m},
          {"ue_min_dist_m", c.ue_min_dist_m},
          {"noise_power_db", c.noise_power_db},
          {"carrier_ghz", c.carrier_ghz},
          {"p_max_dbm", c.p_max_dbm},
          {"pathloss",
           {{"los_intercept", pl.los_intercept},
            {"los_distance_coef", pl.los_distance_coef},
            {"los_freq_coef", pl.los_freq_coef},
            {"nlos_intercept", pl.nlos_intercept},
            {"nlos_distance_coef", pl.nlos_distance_coef},
            {"nlos_freq_coef", pl.nlos_freq_coef},
            {"los_prob_near_m", pl.los_prob_near_m},
            {"los_prob_decay_m", pl.los_prob_decay_m},
            {"shadow_std_los_db", pl.shadow_std_los_db},
            {"shadow_std_nlos_db", pl.shadow_std_nlos_db}}}};
}

inline TopologyConfig topology_from_json(const nlohmann::json& j) {
  TopologyConfig c;
  c.n_cells = j.at("n_cells").get<int>();
  c.n_ues_per_cell = j.at("n_ues_per_cell").get<int>();
  c.n_tx = j.at("n_tx").get<int>();
  c.n_rx = j.at("n_rx").get<int>();
  c.cell_radius_m = j.at("cell_radius_m").get<double>();
  c.ue_min_dist_m = j.at("ue_min_dist_m").get<double>();
  c.noise_power_db = j.at("noise_power_db").get<double>();
  c.carrier_ghz = j.at("carrier_ghz").get<double>();
  c.p_max_dbm = j.at("p_max_dbm").get<double>();
  const auto& pl = j.at("pathloss");
  c.pathloss.los_intercept = pl.at("los_intercept").get<double>();
  c.pathloss.los_distance_coef = pl.at("los_distance_coef").get<double>();
  c.pathloss.los_freq_coef = pl.at("los_freq_coef").get<double>();
  c.pathloss.nlos_intercept = pl.at("nlos_intercept").get<double>();
  c.pathloss.nlos_distance_coef = pl.at("nlos_distance_coef").get<double>();
  c.pathloss.nlos_freq_coef = pl.at("nlos_freq_coef").get<double>();
  c.pathloss.los_prob_near_m = pl.at("los_prob_near_m").get<double>();
  c.pathloss.los_prob_decay_m = pl.at("los_prob_decay_m").get<double>();
  c.pathloss.shadow_std_los_db = pl.at("shadow_std_los_db").get<double>();
  c.pathloss.shadow_std_nlos_db = pl.at("shadow_std_nlos_db").get<double>();
  c.validate();
  return c;
}

inline nlohmann::json to_json(const GridSpec& g) {
  return {{"p0_min_dbm", g.p0_min_dbm}, {"p0_max_dbm", g.p0_max_dbm}, {"p0_step_db", g.p0_step_db}, {"alphas", g.alphas}};
}

inline std::uint64_t hash_text(const std::string& s) { return fnv1a(s.data(), s.size()); }

inline std::uint64_t topology_hash(const TopologyConfig& c, int pool_size) {
  return hash_text(to_json(c).dump() + "|pool=" + std::to_string(pool_size));
}

inline std::uint64_t grid_hash(const GridSpec& g) { return hash_text(to_json(g).dump()); }

inline std::string hex64(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

/// Task descriptor: seed, topology and pool size. The channel pool is not
/// stored; it regenerates bit-identically from the seed.
inline void export_task(const TaskInstance& task, const std::string& path) {
  const nlohmann::json j{{"format_version", 1},
                         {"seed", task.seed},
                         {"pool_size", task.pool_size()},
                         {"topology", to_json(task.cfg)}};
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write task file " + path);
  out << j.dump(2) << '\n';
}

inline TaskInstance import_task(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read task file " + path);
  const auto j = nlohmann::json::parse(in);
  if (j.at("format_version").get<int>() != 1) throw std::runtime_error("unsupported task file version");
  return generate_task(j.at("seed").get<std::uint64_t>(), topology_from_json(j.at("topology")),
                       j.at("pool_size").get<int>());
}

/// Sidecar cache of per-task objective tables and oracle optima, one pair of
/// files per key: <key>.json (metadata, x*, f*) and <key>.bin (raw f64 table).
class OracleCache {
 public:
  explicit OracleCache(std::filesystem::path dir) : dir_(std::move(dir)) {}

  static std::string key(std::uint64_t task_seed, const TopologyConfig& topo, int pool_size, const GridSpec& grid) {
    return hex64(task_seed) + "-" + hex64(topology_hash(topo, pool_size)) + "-" + hex64(grid_hash(grid));
  }

  bool contains(const std::string& k) const {
    return std::filesystem::exists(dir_ / (k + ".bin")) && std::filesystem::exists(dir_ / (k + ".json"));
  }

  std::optional<ObjectiveTable> load(const std::string& k, std::size_t grid_size, std::size_t samples) const {
    const auto bin = dir_ / (k + ".bin");
    if (!std::filesystem::exists(bin) || !std::filesystem::exists(dir_ / (k + ".json"))) return std::nullopt;
    std::ifstream in(bin, std::ios::binary);
    std::vector<double> raw(grid_size * samples);
    in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size() * sizeof(double)));
    if (!in || in.peek() != std::char_traits<char>::eof()) return std::nullopt;
    return ObjectiveTable(grid_size, samples, std::move(raw));
  }

  void store(const std::string& k, const ObjectiveTable& table, const OracleResult& best, std::uint64_t task_seed) const {
    std::filesystem::create_directories(dir_);
    {
      std::ofstream out(dir_ / (k + ".bin.tmp"), std::ios::binary | std::ios::trunc);
      out.write(reinterpret_cast<const char*>(table.raw().data()),
                static_cast<std::streamsize>(table.raw().size() * sizeof(double)));
    }
    std::filesystem::rename(dir_ / (k + ".bin.tmp"), dir_ / (k + ".bin"));
    const nlohmann::json meta{{"task_seed", task_seed},
                              {"grid_index", best.grid_index},
                              {"p0_dbm", best.x.p0_dbm},
                              {"alpha", best.x.alpha},
                              {"f_star", best.value},
                              {"grid_size", table.grid_size()},
                              {"samples", table.samples()}};
    std::ofstream out(dir_ / (k + ".json"));
    out << meta.dump(2) << '\n';
  }

 private:
  std::filesystem::path dir_;
};

}  // namespace mftmes
