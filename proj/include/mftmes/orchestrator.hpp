#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "mftmes/acquisition.hpp"
#include "mftmes/mf_gp.hpp"
#include "mftmes/task_io.hpp"
#include "mftmes/transfer.hpp"
#include "mftmes/wireless.hpp"

namespace mftmes {

enum class StrategyKind { Gibbon, ContinualGibbon, MftMes };

inline std::string to_string(StrategyKind k) {
  switch (k) {
    case StrategyKind::Gibbon: return "GIBBON";
    case StrategyKind::ContinualGibbon: return "CONTINUAL_GIBBON";
    case StrategyKind::MftMes: return "MFT_MES";
  }
  return "?";
}

inline StrategyKind strategy_from_string(const std::string& s) {
  if (s == "GIBBON" || s == "gibbon") return StrategyKind::Gibbon;
  if (s == "CONTINUAL_GIBBON" || s == "continual_gibbon" || s == "continual-gibbon") return StrategyKind::ContinualGibbon;
  if (s == "MFT_MES" || s == "mft_mes" || s == "mft-mes") return StrategyKind::MftMes;
  throw ConfigError("unknown strategy '" + s + "'");
}

struct Strategy {
  StrategyKind kind = StrategyKind::MftMes;
  double beta = 1.6;

  /// GIBBON and Continual GIBBON ignore the configured beta.
  double effective_beta() const { return kind == StrategyKind::MftMes ? beta : 0.0; }
  bool carries_particles() const { return kind != StrategyKind::Gibbon; }
};

struct BudgetLedger {
  double spent = 0.0;
  double limit = 0.0;
  int rounds = 0;

  double remaining() const { return limit - spent; }
  bool can_afford(double cost) const { return spent + cost <= limit; }
  void charge(double cost) {
    if (!can_afford(cost)) throw InvalidParameters("query would exceed the budget");
    spent += cost;
    ++rounds;
  }
};

struct RoundRecord {
  int round = 0;
  InputPoint x;
  FidelityLevel m;
  double cost = 0.0;
  double y = 0.0;
  double best_ratio = 0.0;
};

struct TaskResult {
  std::size_t task_index = 0;
  std::vector<RoundRecord> per_round;
  double initial_ratio = 0.0;
  double final_ratio = 0.0;
  double oracle_value = 0.0;
  double spent = 0.0;
  int rounds = 0;
};

/// Everything a task run needs besides the task itself.
struct RunSettings {
  CostModel cost;
  AcquisitionConfig acquisition;
  SvgdConfig svgd;
  FeatureArchitecture architecture;
  int num_particles = 10;
  double init_stddev = 0.5;
  int init_design_count = 10;
  bool charge_initial_design = false;
  /// 0 lets the acquisition choose; otherwise every round uses this level.
  int forced_fidelity = 0;
  double noise_variance = 0.83;

  void validate() const {
    cost.validate();
    svgd.validate();
    if (num_particles < 1) throw InvalidParameters("need at least one particle");
    if (init_design_count < cost.num_fidelities())
      throw InvalidParameters("initial design must cover every fidelity level");
    if (forced_fidelity < 0 || forced_fidelity > cost.num_fidelities())
      throw InvalidParameters("forced fidelity out of range");
    if (!(noise_variance >= 0.0)) throw InvalidParameters("noise variance must be non-negative");
    if (acquisition.beta < 0.0) throw InvalidParameters("beta must be non-negative");
    if (acquisition.num_max_value_samples < 1) throw InvalidParameters("need at least one max-value sample");
  }
};

/// Sub-seeds of one (replicate, task) pair.
struct TaskSeeds {
  std::uint64_t design;
  std::uint64_t noise;
  std::uint64_t gumbel;

  static TaskSeeds derive(std::uint64_t master_seed, std::uint64_t replicate, std::uint64_t task_index) {
    const std::uint64_t base = derive_seed(master_seed, {0x7265706cULL, replicate, task_index});
    return {derive_seed(base, {1}), derive_seed(base, {2}), derive_seed(base, {3})};
  }
};

inline std::uint64_t task_seed(std::uint64_t master_seed, std::uint64_t task_index) {
  return derive_seed(master_seed, {0x7461736bULL, task_index});
}

inline std::uint64_t particle_init_seed(std::uint64_t master_seed, std::uint64_t replicate) {
  return derive_seed(master_seed, {0x696e6974ULL, replicate});
}

/// A task reduced to what the optimizer touches: its per-sample objective
/// table on the grid and the exhaustive optimum.
struct PreparedTask {
  std::uint64_t seed = 0;
  ObjectiveTable table;
  OracleResult oracle;
};

inline PreparedTask prepare_task(std::uint64_t seed, const TopologyConfig& topo, const CandidateGrid& grid,
                                 const CostModel& cost, const OracleCache* cache = nullptr) {
  const int pool = static_cast<int>(cost.costs.back());
  PreparedTask pt;
  pt.seed = seed;
  const std::string key = OracleCache::key(seed, topo, pool, grid.spec());
  std::optional<ObjectiveTable> hit;
  if (cache) hit = cache->load(key, grid.size(), static_cast<std::size_t>(pool));
  if (hit) {
    pt.table = std::move(*hit);
  } else {
    pt.table = ObjectiveTable::build(generate_task(seed, topo, pool), grid);
  }
  pt.oracle = oracle_optimum(pt.table, grid, cost);
  if (cache && !hit) cache->store(key, pt.table, pt.oracle, seed);
  return pt;
}

/// Lazily prepares and memoizes the task sequence of one master seed.
class TaskProvider {
 public:
  TaskProvider(TopologyConfig topo, CandidateGrid grid, CostModel cost, std::uint64_t master_seed,
               std::string cache_dir = {})
      : topo_(std::move(topo)), grid_(std::move(grid)), cost_(std::move(cost)), master_seed_(master_seed) {
    if (!cache_dir.empty()) cache_ = std::make_unique<OracleCache>(cache_dir);
  }

  const PreparedTask& get(std::size_t task_index) {
    std::lock_guard lock(mu_);
    auto it = tasks_.find(task_index);
    if (it == tasks_.end())
      it = tasks_
               .emplace(task_index, std::make_unique<PreparedTask>(prepare_task(
                                        task_seed(master_seed_, task_index), topo_, grid_, cost_, cache_.get())))
               .first;
    return *it->second;
  }

  const CandidateGrid& grid() const { return grid_; }

 private:
  TopologyConfig topo_;
  CandidateGrid grid_;
  CostModel cost_;
  std::uint64_t master_seed_;
  std::unique_ptr<OracleCache> cache_;
  std::mutex mu_;
  std::map<std::size_t, std::unique_ptr<PreparedTask>> tasks_;
};

struct DesignPoint {
  std::size_t grid_index;
  FidelityLevel m;
};

/// Distinct uniform grid points with fidelities assigned round-robin 1..M.
inline std::vector<DesignPoint> init_design_points(std::size_t grid_size, int count, int num_fidelities,
                                                   std::uint64_t seed) {
  if (count < num_fidelities) throw InvalidParameters("initial design must cover every fidelity level");
  if (static_cast<std::size_t>(count) > grid_size) throw InvalidParameters("initial design larger than the grid");
  std::vector<std::size_t> idx(grid_size);
  for (std::size_t i = 0; i < grid_size; ++i) idx[i] = i;
  std::mt19937_64 rng(seed);
  std::vector<DesignPoint> out;
  for (int i = 0; i < count; ++i) {
    std::uniform_int_distribution<std::size_t> pick(static_cast<std::size_t>(i), grid_size - 1);
    std::swap(idx[static_cast<std::size_t>(i)], idx[pick(rng)]);
    out.push_back({idx[static_cast<std::size_t>(i)], FidelityLevel{i % num_fidelities + 1}});
  }
  return out;
}

/// Initial observations (raw objective scale), not charged to the budget by default.
inline TaskDataset init_design(const PreparedTask& task, const CandidateGrid& grid, int count, const CostModel& cost,
                               double noise_variance, const TaskSeeds& seeds,
                               std::vector<std::size_t>* grid_indices = nullptr) {
  TaskDataset data;
  data.noise_variance = noise_variance;
  const auto pts = init_design_points(grid.size(), count, cost.num_fidelities(), seeds.design);
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const double clean = task.table.value(pts[i].grid_index, pts[i].m, cost);
    const double y = observe(clean, noise_variance, derive_seed(seeds.noise, {0x696eULL, i}));
    data.append({grid[pts[i].grid_index], pts[i].m, y});
    if (grid_indices) grid_indices->push_back(pts[i].grid_index);
  }
  return data;
}

/// max over queried grid points of f^(M)(x) / f*.
inline double optimality_ratio(const PreparedTask& task, std::span<const std::size_t> queried, const CostModel& cost) {
  if (!(task.oracle.value > 0.0)) throw InvalidParameters("optimality ratio needs a positive optimum");
  const FidelityLevel top{cost.num_fidelities()};
  double best = 0.0;
  for (std::size_t g : queried) best = std::max(best, task.table.value(g, top, cost) / task.oracle.value);
  return best;
}

/// Affine map of observations onto zero mean / unit spread, fixed from the initial design.
struct Standardizer {
  double offset = 0.0;
  double scale = 1.0;

  static Standardizer fit(const TaskDataset& data) {
    Standardizer s;
    if (data.empty()) return s;
    double mean = 0.0;
    for (const auto& r : data.records) mean += r.y;
    mean /= static_cast<double>(data.size());
    double ss = 0.0;
    for (const auto& r : data.records) ss += (r.y - mean) * (r.y - mean);
    const double sd = data.size() > 1 ? std::sqrt(ss / static_cast<double>(data.size() - 1)) : 0.0;
    s.offset = mean;
    s.scale = sd > 1e-9 ? sd : 1.0;
    return s;
  }

  double forward(double y) const { return (y - offset) / scale; }
  double inverse(double z) const { return z * scale + offset; }

  /// Dataset on the standardized scale; observation noise shrinks by scale^2.
  TaskDataset apply(const TaskDataset& raw) const {
    TaskDataset out;
    out.noise_variance = std::max(raw.noise_variance / (scale * scale), 1e-8);
    out.records.reserve(raw.size());
    for (const auto& r : raw.records) out.records.push_back({r.x, r.m, forward(r.y)});
    return out;
  }
};

inline double decayed_stepsize(const SvgdConfig& cfg, double spent, double budget) {
  if (!cfg.cosine_decay) return cfg.stepsize;
  const double frac = std::clamp(spent / budget, 0.0, 1.0);
  return cfg.stepsize * 0.5 * (1.0 + std::cos(std::numbers::pi * frac));
}

struct TaskRunOutput {
  TaskResult result;
  ParticleEnsemble ensemble;
  TaskDataset dataset;
};

/// One task: initial design, then budgeted acquisition rounds. Each round fits
/// every particle's posterior, draws max-value samples per particle, scores
/// the grid, observes the chosen pair and moves the particles by SVGD.
inline TaskRunOutput run_task(const PreparedTask& task, const CandidateGrid& grid, ParticleEnsemble ens,
                              const PriorModel& prior, const Strategy& strategy, const RunSettings& settings,
                              const TaskSeeds& seeds, std::size_t task_index = 0) {
  settings.validate();
  ens.validate();
  const CostModel& cost = settings.cost;
  const int num_fid = cost.num_fidelities();
  const Eigen::MatrixXd grid_inputs = normalized_inputs(grid.points());

  TaskRunOutput out;
  out.result.task_index = task_index;
  out.result.oracle_value = task.oracle.value;

  std::vector<std::size_t> queried;
  TaskDataset raw = init_design(task, grid, settings.init_design_count, cost, settings.noise_variance, seeds, &queried);
  const Standardizer stdz = Standardizer::fit(raw);

  BudgetLedger ledger{0.0, cost.budget, 0};
  if (settings.charge_initial_design) {
    for (const auto& r : raw.records) ledger.spent += cost.cost(r.m);
    if (ledger.spent > ledger.limit) throw InvalidParameters("initial design alone exceeds the budget");
  }

  double best_ratio = optimality_ratio(task, queried, cost);
  out.result.initial_ratio = best_ratio;

  auto svgd_now = [&](const TaskDataset& gp_data) {
    SvgdConfig cfg = settings.svgd;
    cfg.stepsize = decayed_stepsize(settings.svgd, ledger.spent, ledger.limit);
    ens = update_posterior_particles(ens, gp_data, prior, cfg);
  };

  TaskDataset gp_data = stdz.apply(raw);
  svgd_now(gp_data);

  AcquisitionConfig acq = settings.acquisition;
  acq.beta = strategy.effective_beta();
  CostModel round_cost = cost;
  if (settings.forced_fidelity > 0) {
    // Price every other level out of reach so only the forced one is affordable.
    for (int m = 1; m <= num_fid; ++m)
      if (m != settings.forced_fidelity) round_cost.costs[static_cast<std::size_t>(m - 1)] = cost.budget * 2.0 + 1.0;
  }

  for (int t = 1;; ++t) {
    std::vector<GridPrediction> preds;
    std::vector<MaxValueSamples> fstars;
    preds.reserve(ens.size());
    for (std::size_t v = 0; v < ens.size(); ++v) {
      const PosteriorGP post(ens.particles[v], gp_data);
      preds.push_back(predict_grid(post, grid_inputs, num_fid));
      fstars.push_back(gumbel_sample_max_values(preds.back().mean[static_cast<std::size_t>(num_fid - 1)],
                                                preds.back().variance[static_cast<std::size_t>(num_fid - 1)],
                                                acq.num_max_value_samples,
                                                derive_seed(seeds.gumbel, {static_cast<std::uint64_t>(t), v}),
                                                FidelityLevel{num_fid}));
    }
    const auto sel = select_next(preds, fstars, round_cost, ledger.remaining(), acq);
    if (!sel) break;

    const double s = cost.cost(sel->fidelity);
    const double clean = task.table.value(sel->grid_index, sel->fidelity, cost);
    const double y = observe(clean, settings.noise_variance, derive_seed(seeds.noise, {static_cast<std::uint64_t>(t)}));
    ledger.charge(s);
    const ObservationRecord rec{grid[sel->grid_index], sel->fidelity, y};
    raw.append(rec);
    gp_data.append({rec.x, rec.m, stdz.forward(y)});
    queried.push_back(sel->grid_index);
    best_ratio = std::max(best_ratio, optimality_ratio(task, std::span(&queried.back(), 1), cost));
    out.result.per_round.push_back({t, rec.x, rec.m, s, y, best_ratio});

    svgd_now(gp_data);
  }

  out.result.final_ratio = best_ratio;
  out.result.spent = ledger.spent;
  out.result.rounds = ledger.rounds;
  ens.task_index = task_index;
  out.ensemble = std::move(ens);
  out.dataset = std::move(raw);
  return out;
}

struct SequenceOptions {
  std::size_t n_tasks = 1;
  std::uint64_t master_seed = 0;
  std::uint64_t replicate = 0;
  /// Resume support: first task to run and the ensemble carried into it.
  std::size_t start_task = 0;
  std::optional<ParticleEnsemble> carried;
  /// Called after each task with the ensemble that will be carried forward.
  std::function<void(const TaskResult&, const ParticleEnsemble&)> on_task_done;
};

/// Runs tasks start_task..n_tasks-1. GIBBON restarts from the initial
/// particles with the isotropic prior every task; the continual strategies
/// carry the particles and use a KDE of the previous task's final particles
/// as the prior.
inline std::vector<TaskResult> run_sequence(TaskProvider& tasks, const Strategy& strategy, const RunSettings& settings,
                                            const SequenceOptions& opt) {
  if (opt.n_tasks < 1) throw InvalidParameters("need at least one task");
  settings.validate();
  const auto initial = [&] {
    return ParticleEnsemble::fresh(settings.architecture, static_cast<std::size_t>(settings.num_particles),
                                   particle_init_seed(opt.master_seed, opt.replicate), settings.init_stddev);
  };
  std::optional<ParticleEnsemble> carried = opt.carried;
  std::vector<TaskResult> results;
  for (std::size_t n = opt.start_task; n < opt.n_tasks; ++n) {
    ParticleEnsemble ens = initial();
    PriorModel prior = PriorModel::isotropic();
    if (strategy.carries_particles() && carried && n > 0) {
      ens = *carried;
      prior = kde_prior_from(*carried);
    }
    const PreparedTask& task = tasks.get(n);
    auto run = run_task(task, tasks.grid(), std::move(ens), prior, strategy, settings,
                        TaskSeeds::derive(opt.master_seed, opt.replicate, n), n);
    carried = run.ensemble;
    if (opt.on_task_done) opt.on_task_done(run.result, run.ensemble);
    results.push_back(std::move(run.result));
  }
  return results;
}

}  // namespace mftmes
