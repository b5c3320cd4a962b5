// mftmes: run continual multi-fidelity power-control experiments.
//
//   mftmes run        --config configs/desk.cfg [--strategy all] [--beta 1.6] [--resume]
//   mftmes sweep-beta --config configs/desk.cfg [--beta 0,0.4,0.8,1.6,3.2]
//   mftmes oracle     --config configs/desk.cfg [--tasks 0,1] [--task-seed N]
//   mftmes plot-data  results/summary.csv --kind strategy|beta
//
// MFTMES_WORKERS sets the number of replicate worker slots (default 1).

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <mutex>
#include <optional>
#include <thread>

#include <CLI11.hpp>

#include "mftmes/mftmes.hpp"

#ifndef MFTMES_VERSION
#define MFTMES_VERSION "dev"
#endif

namespace fs = std::filesystem;
using namespace mftmes;

namespace {

std::mutex log_mu;

template <class... Args>
void log(const Args&... args) {
  std::lock_guard lock(log_mu);
  (std::cerr << ... << args) << '\n';
}

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  std::ostringstream out;
  out << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
  return out.str();
}

std::size_t worker_count() {
  const char* env = std::getenv("MFTMES_WORKERS");
  if (!env || !*env) return 1;
  const long v = std::strtol(env, nullptr, 10);
  if (v < 1) throw ConfigError("MFTMES_WORKERS must be a positive integer");
  return static_cast<std::size_t>(v);
}

struct Overrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> replicates;
  std::vector<std::string> strategy;
  std::vector<double> beta;
  std::optional<std::string> out_dir;
};

ExperimentConfig load_with(const std::string& path, const Overrides& o) {
  ExperimentConfig cfg = load_config(path);
  if (o.seed) cfg.master_seed = *o.seed;
  if (o.replicates) cfg.n_replicates = *o.replicates;
  if (!o.strategy.empty()) cfg.strategies = config_detail::parse_strategies("--strategy", o.strategy);
  if (o.out_dir) cfg.out_dir = *o.out_dir;
  cfg.validate();
  return cfg;
}

void write_file_atomic(const fs::path& path, const std::string& text) {
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out << text;
  }
  fs::rename(tmp, path);
}

struct Job {
  Strategy strategy;
  std::size_t replicate;

  std::string stem() const { return RunLabel::of(strategy).str() + "-r" + std::to_string(replicate); }
};

/// Runs one (strategy, replicate) sequence, appending to its JSONL file and
/// checkpointing the carried ensemble after every task.
std::vector<SummaryRow> run_job(const Job& job, const ExperimentConfig& cfg, TaskProvider& tasks, const fs::path& out,
                                bool resume) {
  const RunLabel label = RunLabel::of(job.strategy);
  const fs::path jsonl = out / "rounds" / (job.stem() + ".jsonl");
  const fs::path ckpt = out / "checkpoints" / (job.stem() + ".ens");

  SequenceOptions opt;
  opt.n_tasks = cfg.n_tasks;
  opt.master_seed = cfg.master_seed;
  opt.replicate = job.replicate;

  std::vector<SummaryRow> rows;
  std::string kept;
  if (resume && fs::exists(ckpt)) {
    ParticleEnsemble ens = load_ensemble(ckpt.string());
    const std::size_t done = static_cast<std::size_t>(ens.task_index) + 1;
    std::ifstream in(jsonl);
    for (const auto& j : read_jsonl(in)) {
      if (j.at("task_index").get<std::size_t>() >= done) continue;
      kept += j.dump() + '\n';
    }
    std::istringstream again(kept);
    rows = summary_from_jsonl(read_jsonl(again));
    if (rows.size() != done) throw CheckpointError(jsonl.string() + " does not cover the checkpointed tasks");
    opt.start_task = done;
    opt.carried = std::move(ens);
    log("[", job.stem(), "] resuming at task ", done);
  }
  write_file_atomic(jsonl, kept);
  if (opt.start_task >= opt.n_tasks) return rows;

  std::ofstream stream(jsonl, std::ios::app);
  opt.on_task_done = [&](const TaskResult& t, const ParticleEnsemble& ens) {
    append_task_jsonl(stream, label, job.replicate, t);
    save_ensemble(ens, ckpt.string());
    rows.push_back(summary_row(label, job.replicate, t));
    log("[", job.stem(), "] task ", t.task_index, " final_ratio ", format_real(t.final_ratio), " rounds ", t.rounds,
        " spent ", format_real(t.spent));
  };
  run_sequence(tasks, job.strategy, cfg.settings, opt);
  return rows;
}

std::vector<SummaryRow> run_jobs(const std::vector<Job>& jobs, const ExperimentConfig& cfg, const fs::path& out,
                                 bool resume) {
  fs::create_directories(out / "rounds");
  fs::create_directories(out / "checkpoints");
  TaskProvider tasks(cfg.topology, CandidateGrid(cfg.grid), cfg.settings.cost, cfg.master_seed, cfg.oracle_cache_dir());

  std::vector<std::vector<SummaryRow>> results(jobs.size());
  std::atomic<std::size_t> next{0};
  std::mutex err_mu;
  std::exception_ptr first_error;
  auto worker = [&] {
    for (;;) {
      const std::size_t i = next.fetch_add(1);
      if (i >= jobs.size()) return;
      try {
        results[i] = run_job(jobs[i], cfg, tasks, out, resume);
      } catch (...) {
        std::lock_guard lock(err_mu);
        if (!first_error) first_error = std::current_exception();
        next = jobs.size();
        return;
      }
    }
  };
  const std::size_t n_workers = std::min(worker_count(), jobs.size());
  std::vector<std::thread> pool;
  for (std::size_t w = 1; w < n_workers; ++w) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);

  std::vector<SummaryRow> all;
  for (auto& r : results) all.insert(all.end(), r.begin(), r.end());
  return all;
}

RunManifest start_manifest(const std::string& command, const ExperimentConfig& cfg, const fs::path& out, bool resume) {
  const fs::path path = out / "manifest.json";
  if (resume && fs::exists(path)) {
    std::ifstream in(path);
    RunManifest old = RunManifest::from_json(nlohmann::json::parse(in));
    if (old.config_hash != config_hash(cfg))
      throw ConfigError("--resume: config hash " + config_hash(cfg) + " differs from the manifest's " + old.config_hash);
  }
  RunManifest m;
  m.command = command;
  m.config_hash = config_hash(cfg);
  m.code_version = MFTMES_VERSION;
  m.started_at = utc_now();
  m.master_seed = cfg.master_seed;
  for (std::size_t r = 0; r < cfg.n_replicates; ++r) m.replicate_seeds.emplace_back(r, particle_init_seed(cfg.master_seed, r));
  m.effective_config = emit_config(cfg);
  fs::create_directories(out);
  write_file_atomic(out / "config.cfg", m.effective_config);
  write_file_atomic(path, m.to_json().dump(2) + '\n');
  return m;
}

void finish_manifest(RunManifest& m, const fs::path& out, std::vector<std::string> outputs) {
  m.finished_at = utc_now();
  m.outputs = std::move(outputs);
  write_file_atomic(out / "manifest.json", m.to_json().dump(2) + '\n');
}

std::vector<std::string> job_outputs(const std::vector<Job>& jobs) {
  std::vector<std::string> files;
  for (const auto& j : jobs) {
    files.push_back("rounds/" + j.stem() + ".jsonl");
    files.push_back("checkpoints/" + j.stem() + ".ens");
  }
  return files;
}

std::string summary_text(const std::vector<SummaryRow>& rows) {
  std::ostringstream s;
  write_summary_csv(s, rows);
  return s.str();
}

int cmd_run(const std::string& config_path, const Overrides& o, bool resume) {
  ExperimentConfig cfg = load_with(config_path, o);
  if (o.beta.size() > 1) throw ConfigError("run takes a single --beta; use sweep-beta for lists");
  if (!o.beta.empty()) cfg.beta = o.beta.front();
  cfg.validate();
  const fs::path out = cfg.out_dir;
  RunManifest manifest = start_manifest("run", cfg, out, resume);

  std::vector<Job> jobs;
  for (StrategyKind k : cfg.strategies)
    for (std::size_t r = 0; r < cfg.n_replicates; ++r) jobs.push_back({Strategy{k, cfg.beta}, r});
  const auto rows = run_jobs(jobs, cfg, out, resume);

  write_file_atomic(out / "summary.csv", summary_text(rows));
  auto files = job_outputs(jobs);
  files.insert(files.begin(), {"config.cfg", "summary.csv"});
  finish_manifest(manifest, out, files);
  log("wrote ", (out / "summary.csv").string());
  return 0;
}

int cmd_sweep_beta(const std::string& config_path, const Overrides& o, bool resume) {
  ExperimentConfig cfg = load_with(config_path, o);
  if (!o.beta.empty()) cfg.sweep_betas = o.beta;
  cfg.strategies = {StrategyKind::MftMes};
  cfg.validate();
  const fs::path out = cfg.out_dir;
  RunManifest manifest = start_manifest("sweep-beta", cfg, out, resume);

  std::vector<Job> jobs;
  for (double b : cfg.sweep_betas)
    for (std::size_t r = 0; r < cfg.n_replicates; ++r) jobs.push_back({Strategy{StrategyKind::MftMes, b}, r});
  const auto rows = run_jobs(jobs, cfg, out, resume);

  write_file_atomic(out / "summary.csv", summary_text(rows));
  auto agg = aggregate(rows);
  mark_best(agg);
  std::ostringstream sweep;
  write_aggregate_csv(sweep, agg);
  write_file_atomic(out / "sweep.csv", sweep.str());
  auto files = job_outputs(jobs);
  files.insert(files.begin(), {"config.cfg", "summary.csv", "sweep.csv"});
  finish_manifest(manifest, out, files);
  log("wrote ", (out / "sweep.csv").string());
  return 0;
}

int cmd_oracle(const std::string& config_path, const Overrides& o, const std::vector<std::size_t>& task_list,
               const std::vector<std::uint64_t>& raw_seeds) {
  const ExperimentConfig cfg = load_with(config_path, o);
  const CandidateGrid grid(cfg.grid);
  const OracleCache cache(cfg.oracle_cache_dir());
  const int pool = static_cast<int>(cfg.settings.cost.costs.back());

  std::vector<std::pair<std::string, std::uint64_t>> targets;
  for (std::uint64_t s : raw_seeds) targets.emplace_back("seed", s);
  if (raw_seeds.empty() || !task_list.empty()) {
    std::vector<std::size_t> idx = task_list;
    if (idx.empty())
      for (std::size_t n = 0; n < cfg.n_tasks; ++n) idx.push_back(n);
    for (std::size_t n : idx) targets.emplace_back("task " + std::to_string(n), task_seed(cfg.master_seed, n));
  }
  for (const auto& [name, seed] : targets) {
    const bool hit = cache.contains(OracleCache::key(seed, cfg.topology, pool, grid.spec()));
    const PreparedTask t = prepare_task(seed, cfg.topology, grid, cfg.settings.cost, &cache);
    std::cout << name << " seed " << seed << " p0_dbm " << format_real(t.oracle.x.p0_dbm) << " alpha "
              << format_real(t.oracle.x.alpha) << " f_star " << format_real(t.oracle.value) << " cache "
              << (hit ? "hit" : "miss") << '\n';
  }
  return 0;
}

int cmd_plot_data(const std::string& results, const std::string& kind, const std::string& out_path) {
  if (kind != "strategy" && kind != "beta") throw ConfigError("--kind must be 'strategy' or 'beta'");
  std::ifstream in(results);
  if (!in) throw std::runtime_error("cannot read " + results);
  std::vector<SummaryRow> rows;
  if (fs::path(results).extension() == ".jsonl") rows = summary_from_jsonl(read_jsonl(in));
  else rows = read_summary_csv(in);
  if (kind == "beta") {
    std::erase_if(rows, [](const SummaryRow& r) { return r.label.kind != StrategyKind::MftMes; });
  }
  auto agg = aggregate(rows);
  if (kind == "beta") mark_best(agg);
  std::ostringstream text;
  write_aggregate_csv(text, agg);
  if (out_path.empty()) std::cout << text.str();
  else write_file_atomic(out_path, text.str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Continual multi-fidelity Bayesian optimization of uplink power control"};
  app.require_subcommand(1);
  app.set_version_flag("--version", MFTMES_VERSION);

  std::string config_path;
  Overrides o;
  bool resume = false;
  std::uint64_t seed = 0;
  std::size_t replicates = 0;
  std::string out_dir;

  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "experiment config file")->required()->check(CLI::ExistingFile);
    sub->add_option("--seed", seed, "master seed override");
    sub->add_option("--out-dir", out_dir, "output directory override");
  };

  auto* run = app.add_subcommand("run", "run strategies over replicated task sequences");
  common(run);
  run->add_option("--replicates", replicates, "replicate count override");
  run->add_option("--strategy", o.strategy, "gibbon, continual_gibbon, mft_mes or all")->delimiter(',');
  run->add_option("--beta", o.beta, "transfer weight override");
  run->add_flag("--resume", resume, "continue from checkpoints in the output directory");

  auto* sweep = app.add_subcommand("sweep-beta", "MFT-MES over a list of beta values on shared tasks");
  common(sweep);
  sweep->add_option("--replicates", replicates, "replicate count override");
  sweep->add_option("--beta", o.beta, "comma-separated beta list")->delimiter(',');
  sweep->add_flag("--resume", resume, "continue from checkpoints in the output directory");

  std::vector<std::size_t> task_list;
  std::vector<std::uint64_t> raw_seeds;
  auto* oracle = app.add_subcommand("oracle", "compute and cache exhaustive optima");
  common(oracle);
  oracle->add_option("--tasks", task_list, "task indices (default: all)")->delimiter(',');
  oracle->add_option("--task-seed", raw_seeds, "explicit task seeds")->delimiter(',');

  std::string results, kind = "strategy", plot_out;
  auto* plot = app.add_subcommand("plot-data", "aggregate replicates into mean and 90% band");
  plot->add_option("results", results, "summary.csv or a rounds .jsonl file")->required();
  plot->add_option("--kind", kind, "strategy or beta")->check(CLI::IsMember({"strategy", "beta"}));
  plot->add_option("--out", plot_out, "output CSV (default: stdout)");

  CLI11_PARSE(app, argc, argv);

  for (auto* sub : {run, sweep, oracle}) {
    if (sub->count("--seed")) o.seed = seed;
    if (sub->count("--out-dir")) o.out_dir = out_dir;
    if (sub != oracle && sub->count("--replicates")) o.replicates = replicates;
  }

  try {
    if (*run) return cmd_run(config_path, o, resume);
    if (*sweep) return cmd_sweep_beta(config_path, o, resume);
    if (*oracle) return cmd_oracle(config_path, o, task_list, raw_seeds);
    if (*plot) return cmd_plot_data(results, kind, plot_out);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
