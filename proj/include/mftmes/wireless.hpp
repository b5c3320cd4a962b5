#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <numbers>
#include <random>
#include <stdexcept>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "mftmes/acquisition.hpp"
#include "mftmes/math.hpp"
#include "mftmes/types.hpp"

namespace mftmes {

/// Simplified UMi street-canyon path loss. All coefficients are exposed so
/// the model can be recalibrated without code changes.
struct PathlossModel {
  double los_intercept = 32.4;
  double los_distance_coef = 21.0;
  double los_freq_coef = 20.0;
  double nlos_intercept = 22.4;
  double nlos_distance_coef = 35.3;
  double nlos_freq_coef = 21.3;
  double los_prob_near_m = 18.0;
  double los_prob_decay_m = 36.0;
  double shadow_std_los_db = 4.0;
  double shadow_std_nlos_db = 7.82;

  friend bool operator==(const PathlossModel&, const PathlossModel&) = default;
};

struct TopologyConfig {
  int n_cells = 3;
  int n_ues_per_cell = 10;
  int n_tx = 4;
  int n_rx = 16;
  double cell_radius_m = 200.0;
  double ue_min_dist_m = 18.0;
  double noise_power_db = -96.0;
  double carrier_ghz = 3.5;
  double p_max_dbm = 24.0;
  PathlossModel pathloss{};

  void validate() const {
    if (n_cells < 1 || n_ues_per_cell < 1 || n_tx < 1 || n_rx < 1)
      throw InvalidParameters("topology counts must be >= 1");
    if (n_cells > 7) throw InvalidParameters("topology supports at most 7 cells (one hexagonal ring)");
    if (!(ue_min_dist_m > 0.0 && ue_min_dist_m < cell_radius_m))
      throw InvalidParameters("need 0 < ue_min_dist_m < cell_radius_m");
    if (!(carrier_ghz > 0.0)) throw InvalidParameters("carrier frequency must be positive");
  }

  friend bool operator==(const TopologyConfig&, const TopologyConfig&) = default;
};

inline double los_probability(double distance_m, const PathlossModel& pl = {}) {
  const double e = std::exp(-distance_m / pl.los_prob_decay_m);
  return std::min(pl.los_prob_near_m / distance_m, 1.0) * (1.0 - e) + e;
}

/// Deterministic part of the path loss in dB (shadowing is drawn separately).
inline double pathloss_db(double distance_m, bool los, double carrier_ghz, const PathlossModel& pl = {}) {
  const double d = std::max(distance_m, 1.0);
  const double lf = std::log10(carrier_ghz);
  const double los_db = pl.los_intercept + pl.los_distance_coef * std::log10(d) + pl.los_freq_coef * lf;
  if (los) return los_db;
  return std::max(los_db, pl.nlos_intercept + pl.nlos_distance_coef * std::log10(d) + pl.nlos_freq_coef * lf);
}

inline double pathloss_db(double distance_m, bool los, const TopologyConfig& cfg) {
  return pathloss_db(distance_m, los, cfg.carrier_ghz, cfg.pathloss);
}

/// Open-loop power control: min(P_max, P0 + alpha * PL).
inline double transmit_power_dbm(const InputPoint& x, double pl_serving_db, double p_max_dbm) {
  return std::min(p_max_dbm, x.p0_dbm + x.alpha * pl_serving_db);
}

/// One network topology: large-scale gains for every (cell, UE, BS) link and
/// a pre-drawn pool of i.i.d. fast-fading samples. Link index is
/// (c * n_ues_per_cell + u) * n_cells + b for UE u of cell c towards BS b.
struct TaskInstance {
  std::uint64_t seed = 0;
  TopologyConfig cfg;
  std::vector<std::array<double, 2>> bs_position;
  std::vector<std::array<double, 2>> ue_position;
  std::vector<double> distance_m;
  std::vector<double> pathloss_db;
  std::vector<std::uint8_t> los_flags;
  std::vector<double> slow_fading;
  /// channel_pool[s][link], n_rx x n_tx unit-variance complex Gaussian.
  std::vector<std::vector<Eigen::MatrixXcd>> channel_pool;

  int num_ues() const { return cfg.n_cells * cfg.n_ues_per_cell; }
  std::size_t pool_size() const { return channel_pool.size(); }
  std::size_t link(int c, int u, int b) const {
    return static_cast<std::size_t>((c * cfg.n_ues_per_cell + u) * cfg.n_cells + b);
  }
  /// Amplitude gain 10^(-PL/20) * xi of a link.
  double amplitude(std::size_t l) const { return std::pow(10.0, -pathloss_db[l] / 20.0) * slow_fading[l]; }
  Eigen::MatrixXcd channel(std::size_t sample, int c, int u, int b) const {
    const std::size_t l = link(c, u, b);
    return amplitude(l) * channel_pool[sample][l];
  }
};

inline TaskInstance generate_task(std::uint64_t seed, const TopologyConfig& cfg, int pool_size) {
  cfg.validate();
  if (pool_size < 1) throw InvalidParameters("channel pool needs at least one sample");
  TaskInstance task;
  task.seed = seed;
  task.cfg = cfg;

  const double isd = std::sqrt(3.0) * cfg.cell_radius_m;
  task.bs_position.push_back({0.0, 0.0});
  for (int c = 1; c < cfg.n_cells; ++c) {
    const double ang = static_cast<double>(c - 1) * std::numbers::pi / 3.0;
    task.bs_position.push_back({isd * std::cos(ang), isd * std::sin(ang)});
  }

  std::mt19937_64 topo(derive_seed(seed, {1}));
  std::uniform_real_distribution<double> radius(cfg.ue_min_dist_m, cfg.cell_radius_m);
  std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  for (int c = 0; c < cfg.n_cells; ++c)
    for (int u = 0; u < cfg.n_ues_per_cell; ++u) {
      const double r = radius(topo);
      const double a = angle(topo);
      const auto& bs = task.bs_position[static_cast<std::size_t>(c)];
      task.ue_position.push_back({bs[0] + r * std::cos(a), bs[1] + r * std::sin(a)});
    }

  const std::size_t links = static_cast<std::size_t>(task.num_ues() * cfg.n_cells);
  task.distance_m.resize(links);
  task.pathloss_db.resize(links);
  task.los_flags.resize(links);
  task.slow_fading.resize(links);
  for (int c = 0; c < cfg.n_cells; ++c)
    for (int u = 0; u < cfg.n_ues_per_cell; ++u)
      for (int b = 0; b < cfg.n_cells; ++b) {
        const std::size_t l = task.link(c, u, b);
        const auto& ue = task.ue_position[static_cast<std::size_t>(c * cfg.n_ues_per_cell + u)];
        const auto& bs = task.bs_position[static_cast<std::size_t>(b)];
        const double d = std::max(std::hypot(ue[0] - bs[0], ue[1] - bs[1]), 1.0);
        const bool los = unit(topo) < los_probability(d, cfg.pathloss);
        const double shadow_db =
            gauss(topo) * (los ? cfg.pathloss.shadow_std_los_db : cfg.pathloss.shadow_std_nlos_db);
        task.distance_m[l] = d;
        task.los_flags[l] = los ? 1 : 0;
        task.pathloss_db[l] = pathloss_db(d, los, cfg);
        task.slow_fading[l] = std::pow(10.0, -shadow_db / 20.0);
      }

  std::mt19937_64 fading(derive_seed(seed, {2}));
  std::normal_distribution<double> half(0.0, std::sqrt(0.5));
  task.channel_pool.resize(static_cast<std::size_t>(pool_size));
  for (auto& sample : task.channel_pool) {
    sample.reserve(links);
    for (std::size_t l = 0; l < links; ++l) {
      Eigen::MatrixXcd g(cfg.n_rx, cfg.n_tx);
      for (Eigen::Index j = 0; j < g.cols(); ++j)
        for (Eigen::Index i = 0; i < g.rows(); ++i) {
          const double re = half(fading);
          const double im = half(fading);
          g(i, j) = {re, im};
        }
      sample.push_back(std::move(g));
    }
  }
  return task;
}

/// Transmit powers (dBm) of every UE, indexed c * n_ues_per_cell + u.
struct PowerMap {
  std::vector<double> p_tx_dbm;
};

inline PowerMap compute_powers(const TaskInstance& task, const InputPoint& x) {
  PowerMap pm;
  for (int c = 0; c < task.cfg.n_cells; ++c)
    for (int u = 0; u < task.cfg.n_ues_per_cell; ++u)
      pm.p_tx_dbm.push_back(transmit_power_dbm(x, task.pathloss_db[task.link(c, u, c)], task.cfg.p_max_dbm));
  return pm;
}

/// Noise-plus-interference covariance at BS c for UE u of cell c: thermal
/// noise, the other UEs of cell c, and every UE of the other cells as seen by BS c.
inline Eigen::MatrixXcd interference_covariance(const TaskInstance& task, const PowerMap& powers, std::size_t sample,
                                                int c, int u) {
  const auto& cfg = task.cfg;
  const Eigen::Index nr = cfg.n_rx;
  Eigen::MatrixXcd gamma = std::pow(10.0, cfg.noise_power_db / 10.0) * Eigen::MatrixXcd::Identity(nr, nr);
  for (int cc = 0; cc < cfg.n_cells; ++cc)
    for (int uu = 0; uu < cfg.n_ues_per_cell; ++uu) {
      if (cc == c && uu == u) continue;
      const double p = std::pow(10.0, powers.p_tx_dbm[static_cast<std::size_t>(cc * cfg.n_ues_per_cell + uu)] / 10.0);
      const Eigen::MatrixXcd h = task.channel(sample, cc, uu, c);
      gamma.noalias() += p * (h * h.adjoint());
    }
  // exact Hermitian symmetry
  for (Eigen::Index j = 0; j < nr; ++j) {
    gamma(j, j) = {gamma(j, j).real(), 0.0};
    for (Eigen::Index i = j + 1; i < nr; ++i) gamma(j, i) = std::conj(gamma(i, j));
  }
  return gamma;
}

/// Per-sample link products reused across every OLPC setting.
struct SampleProducts {
  std::vector<Eigen::MatrixXcd> h;     // scaled channel per link
  std::vector<Eigen::MatrixXcd> gram;  // h h^H per link
};

inline SampleProducts sample_products(const TaskInstance& task, std::size_t sample) {
  SampleProducts sp;
  const std::size_t links = task.channel_pool[sample].size();
  sp.h.reserve(links);
  sp.gram.reserve(links);
  for (std::size_t l = 0; l < links; ++l) {
    Eigen::MatrixXcd h = task.amplitude(l) * task.channel_pool[sample][l];
    Eigen::MatrixXcd g = h * h.adjoint();
    sp.h.push_back(std::move(h));
    sp.gram.push_back(std::move(g));
  }
  return sp;
}

namespace detail {

/// log|I + p W^H W| with W = L^{-1} H and Gamma = L L^H.
inline double direct_log_det(const Eigen::MatrixXcd& gamma, const Eigen::MatrixXcd& h, double p) {
  Eigen::LLT<Eigen::MatrixXcd> llt(gamma);
  if (llt.info() != Eigen::Success) throw std::runtime_error("interference covariance not positive definite");
  const Eigen::MatrixXcd w = llt.matrixL().solve(h);
  Eigen::MatrixXcd inner = Eigen::MatrixXcd::Identity(h.cols(), h.cols());
  inner.noalias() += p * (w.adjoint() * w);
  Eigen::LLT<Eigen::MatrixXcd> small(inner);
  double log_det = 0.0;
  for (Eigen::Index i = 0; i < h.cols(); ++i) log_det += 2.0 * std::log(std::real(small.matrixLLT()(i, i)));
  return log_det;
}

}  // namespace detail

/// Sum over UEs of log2|I + p Gamma^{-1} H H^H|. With R = Gamma + p H H^H the
/// total received covariance at the BS, each term equals -log2|I - p H^H R^{-1} H|,
/// so one factorization of R per BS serves all of its UEs.
inline double sse_from_products(const TaskInstance& task, const SampleProducts& sp, const PowerMap& powers) {
  const auto& cfg = task.cfg;
  const Eigen::Index nr = cfg.n_rx;
  const double noise = std::pow(10.0, cfg.noise_power_db / 10.0);
  std::vector<double> p_lin(powers.p_tx_dbm.size());
  for (std::size_t i = 0; i < p_lin.size(); ++i) p_lin[i] = std::pow(10.0, powers.p_tx_dbm[i] / 10.0);

  double total = 0.0;
  Eigen::MatrixXcd received(nr, nr);
  Eigen::LLT<Eigen::MatrixXcd> received_llt(nr);
  Eigen::LLT<Eigen::MatrixXcd> small_llt(cfg.n_tx);
  Eigen::MatrixXcd w(nr, cfg.n_tx);
  Eigen::MatrixXcd inner(cfg.n_tx, cfg.n_tx);
  for (int b = 0; b < cfg.n_cells; ++b) {
    received = noise * Eigen::MatrixXcd::Identity(nr, nr);
    for (int c = 0; c < cfg.n_cells; ++c)
      for (int u = 0; u < cfg.n_ues_per_cell; ++u)
        received += p_lin[static_cast<std::size_t>(c * cfg.n_ues_per_cell + u)] * sp.gram[task.link(c, u, b)];
    received_llt.compute(received);
    if (received_llt.info() != Eigen::Success) throw std::runtime_error("received covariance not positive definite");
    for (int u = 0; u < cfg.n_ues_per_cell; ++u) {
      const std::size_t l = task.link(b, u, b);
      const double p = p_lin[static_cast<std::size_t>(b * cfg.n_ues_per_cell + u)];
      w = received_llt.matrixL().solve(sp.h[l]);
      inner.setIdentity();
      inner.noalias() -= p * (w.adjoint() * w);
      small_llt.compute(inner);
      double log_det = 0.0;
      bool ok = small_llt.info() == Eigen::Success;
      for (Eigen::Index i = 0; ok && i < cfg.n_tx; ++i) {
        const double d = std::real(small_llt.matrixLLT()(i, i));
        // Near-singular complement: fall back to factoring Gamma itself.
        if (!(d > 1e-6)) ok = false;
        else log_det -= 2.0 * std::log(d);
      }
      if (!ok) log_det = detail::direct_log_det(received - p * sp.gram[l], sp.h[l], p);
      total += log_det / std::numbers::ln2;
    }
  }
  return std::max(total, 0.0);
}

inline double sse_sample(const TaskInstance& task, const InputPoint& x, std::size_t sample) {
  if (sample >= task.pool_size()) throw InvalidParameters("channel sample index out of range");
  return sse_from_products(task, sample_products(task, sample), compute_powers(task, x));
}

/// Empirical objective f^(m): mean SSE over the first S^(m) pool samples.
inline double evaluate_fidelity(const TaskInstance& task, const InputPoint& x, FidelityLevel m, const CostModel& cost) {
  const auto samples = static_cast<std::size_t>(cost.cost(m));
  if (samples > task.pool_size()) throw InvalidParameters("fidelity needs more samples than the channel pool holds");
  const PowerMap powers = compute_powers(task, x);
  double sum = 0.0;
  for (std::size_t s = 0; s < samples; ++s) sum += sse_from_products(task, sample_products(task, s), powers);
  return sum / static_cast<double>(samples);
}

/// f^(m)(x) plus N(0, noise_variance) observation noise.
inline double observe(double clean_value, double noise_variance, std::uint64_t noise_seed) {
  if (noise_variance == 0.0) return clean_value;
  std::mt19937_64 rng(noise_seed);
  std::normal_distribution<double> nd(0.0, std::sqrt(noise_variance));
  return clean_value + nd(rng);
}

inline double observe(const TaskInstance& task, const InputPoint& x, FidelityLevel m, const CostModel& cost,
                      double noise_variance, std::uint64_t noise_seed) {
  return observe(evaluate_fidelity(task, x, m, cost), noise_variance, noise_seed);
}

/// Per-sample SSE for every grid point: row g holds the pool samples of grid point g.
/// Fidelity values are prefix means, so every f^(m) on the grid is a lookup.
class ObjectiveTable {
 public:
  ObjectiveTable() = default;
  ObjectiveTable(std::size_t grid_size, std::size_t samples, std::vector<double> sse)
      : grid_size_(grid_size), samples_(samples), sse_(std::move(sse)) {
    if (sse_.size() != grid_size_ * samples_) throw InvalidParameters("objective table size mismatch");
  }

  static ObjectiveTable build(const TaskInstance& task, const CandidateGrid& grid) {
    const std::size_t n = grid.size();
    const std::size_t s_count = task.pool_size();
    std::vector<PowerMap> powers;
    powers.reserve(n);
    for (const auto& x : grid.points()) powers.push_back(compute_powers(task, x));
    std::vector<double> sse(n * s_count);
    for (std::size_t s = 0; s < s_count; ++s) {
      const SampleProducts sp = sample_products(task, s);
      for (std::size_t g = 0; g < n; ++g) sse[g * s_count + s] = sse_from_products(task, sp, powers[g]);
    }
    return {n, s_count, std::move(sse)};
  }

  double value(std::size_t grid_index, FidelityLevel m, const CostModel& cost) const {
    const auto samples = static_cast<std::size_t>(cost.cost(m));
    if (samples > samples_) throw InvalidParameters("fidelity needs more samples than the table holds");
    double sum = 0.0;
    for (std::size_t s = 0; s < samples; ++s) sum += sse_[grid_index * samples_ + s];
    return sum / static_cast<double>(samples);
  }

  double sample(std::size_t grid_index, std::size_t s) const { return sse_[grid_index * samples_ + s]; }
  std::size_t grid_size() const { return grid_size_; }
  std::size_t samples() const { return samples_; }
  const std::vector<double>& raw() const { return sse_; }

 private:
  std::size_t grid_size_ = 0;
  std::size_t samples_ = 0;
  std::vector<double> sse_;
};

struct OracleResult {
  std::size_t grid_index = 0;
  InputPoint x;
  double value = 0.0;
};

/// Exhaustive argmax of f^(M) over the grid; ties resolve to the first grid point.
inline OracleResult oracle_optimum(const ObjectiveTable& table, const CandidateGrid& grid, const CostModel& cost) {
  const FidelityLevel top{cost.num_fidelities()};
  OracleResult best{0, grid[0], table.value(0, top, cost)};
  for (std::size_t g = 1; g < grid.size(); ++g) {
    const double v = table.value(g, top, cost);
    if (v > best.value) best = {g, grid[g], v};
  }
  return best;
}

inline OracleResult oracle_optimum(const TaskInstance& task, const CandidateGrid& grid, const CostModel& cost) {
  return oracle_optimum(ObjectiveTable::build(task, grid), grid, cost);
}

}  // namespace mftmes
