#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include <json.hpp>

#include "mftmes/orchestrator.hpp"

namespace mftmes {

inline constexpr int kSchemaVersion = 1;

/// Identifies one optimizer configuration inside a results set.
struct RunLabel {
  StrategyKind kind = StrategyKind::MftMes;
  double beta = 0.0;

  static RunLabel of(const Strategy& s) { return {s.kind, s.effective_beta()}; }
  std::string str() const;
  friend auto operator<=>(const RunLabel&, const RunLabel&) = default;
};

inline std::string format_real(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline std::string RunLabel::str() const { return to_string(kind) + "_b" + format_real(beta); }

/// One line of the per-round JSONL stream.
inline nlohmann::json round_json(const RunLabel& label, std::size_t replicate, std::size_t task_index,
                                 const RoundRecord& r) {
  return {{"schema_version", kSchemaVersion},
          {"type", "round"},
          {"strategy", to_string(label.kind)},
          {"beta", label.beta},
          {"replicate", replicate},
          {"task_index", task_index},
          {"round", r.round},
          {"p0_dbm", r.x.p0_dbm},
          {"alpha", r.x.alpha},
          {"fidelity", r.m.index},
          {"cost", r.cost},
          {"y", r.y},
          {"best_ratio", r.best_ratio}};
}

/// Closing line written after the last round of a task.
inline nlohmann::json task_end_json(const RunLabel& label, std::size_t replicate, const TaskResult& t) {
  return {{"schema_version", kSchemaVersion},
          {"type", "task_end"},
          {"strategy", to_string(label.kind)},
          {"beta", label.beta},
          {"replicate", replicate},
          {"task_index", t.task_index},
          {"initial_ratio", t.initial_ratio},
          {"final_ratio", t.final_ratio},
          {"oracle_value", t.oracle_value},
          {"rounds", t.rounds},
          {"spent", t.spent}};
}

inline void append_task_jsonl(std::ostream& out, const RunLabel& label, std::size_t replicate, const TaskResult& t) {
  for (const auto& r : t.per_round) out << round_json(label, replicate, t.task_index, r).dump() << '\n';
  out << task_end_json(label, replicate, t).dump() << '\n';
  out.flush();
}

/// Row of the per-task summary table.
struct SummaryRow {
  RunLabel label;
  std::size_t replicate = 0;
  std::size_t task_index = 0;
  double initial_ratio = 0.0;
  double final_ratio = 0.0;
  double oracle_value = 0.0;
  int rounds = 0;
  double spent = 0.0;

  auto key() const { return std::tuple(label, replicate, task_index); }
};

inline SummaryRow summary_row(const RunLabel& label, std::size_t replicate, const TaskResult& t) {
  return {label, replicate, t.task_index, t.initial_ratio, t.final_ratio, t.oracle_value, t.rounds, t.spent};
}

/// Reads every complete line of a JSONL stream. A trailing partial line (an
/// interrupted write) is ignored; a malformed line elsewhere throws.
inline std::vector<nlohmann::json> read_jsonl(std::istream& in) {
  std::vector<nlohmann::json> out;
  std::string line;
  while (std::getline(in, line)) {
    const bool complete = !in.eof();
    if (line.empty()) continue;
    auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) {
      if (!complete) break;
      throw std::runtime_error("malformed JSONL line: " + line.substr(0, 80));
    }
    out.push_back(std::move(j));
  }
  return out;
}

inline std::vector<SummaryRow> summary_from_jsonl(const std::vector<nlohmann::json>& lines) {
  std::vector<SummaryRow> rows;
  for (const auto& j : lines) {
    if (j.at("type") != "task_end") continue;
    SummaryRow r;
    r.label = {strategy_from_string(j.at("strategy").get<std::string>()), j.at("beta").get<double>()};
    r.replicate = j.at("replicate").get<std::size_t>();
    r.task_index = j.at("task_index").get<std::size_t>();
    r.initial_ratio = j.at("initial_ratio").get<double>();
    r.final_ratio = j.at("final_ratio").get<double>();
    r.oracle_value = j.at("oracle_value").get<double>();
    r.rounds = j.at("rounds").get<int>();
    r.spent = j.at("spent").get<double>();
    rows.push_back(r);
  }
  return rows;
}

inline const char* kSummaryHeader =
    "schema_version,replicate,task_index,strategy,beta,final_ratio,initial_ratio,rounds,spent,oracle_value";

/// Rows sorted by (strategy, beta, replicate, task_index) so the file is
/// independent of worker scheduling.
inline void write_summary_csv(std::ostream& out, std::vector<SummaryRow> rows) {
  std::sort(rows.begin(), rows.end(), [](const SummaryRow& a, const SummaryRow& b) { return a.key() < b.key(); });
  out << kSummaryHeader << '\n';
  for (const auto& r : rows)
    out << kSchemaVersion << ',' << r.replicate << ',' << r.task_index << ',' << to_string(r.label.kind) << ','
        << format_real(r.label.beta) << ',' << format_real(r.final_ratio) << ',' << format_real(r.initial_ratio) << ','
        << r.rounds << ',' << format_real(r.spent) << ',' << format_real(r.oracle_value) << '\n';
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  return out;
}

inline std::vector<SummaryRow> read_summary_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != kSummaryHeader) throw std::runtime_error("summary CSV: unexpected header");
  std::vector<SummaryRow> rows;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto c = split_csv_line(line);
    if (c.size() != 10) throw std::runtime_error("summary CSV line " + std::to_string(lineno) + ": expected 10 columns");
    try {
      if (std::stoi(c[0]) != kSchemaVersion) throw std::runtime_error("unsupported schema_version " + c[0]);
      SummaryRow r;
      r.replicate = std::stoul(c[1]);
      r.task_index = std::stoul(c[2]);
      r.label = {strategy_from_string(c[3]), std::stod(c[4])};
      r.final_ratio = std::stod(c[5]);
      r.initial_ratio = std::stod(c[6]);
      r.rounds = std::stoi(c[7]);
      r.spent = std::stod(c[8]);
      r.oracle_value = std::stod(c[9]);
      rows.push_back(r);
    } catch (const std::logic_error& e) {
      throw std::runtime_error("summary CSV line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return rows;
}

/// Replicate mean with a 90% normal-approximation band, 1.645 sd / sqrt(n).
struct Band {
  std::size_t n = 0;
  double mean = 0.0;
  double half_width = 0.0;

  double low() const { return mean - half_width; }
  double high() const { return mean + half_width; }
};

inline constexpr double kZ90 = 1.645;

inline Band confidence_band(std::span<const double> xs) {
  Band b;
  b.n = xs.size();
  if (xs.empty()) return b;
  for (double x : xs) b.mean += x;
  b.mean /= static_cast<double>(b.n);
  if (b.n < 2) return b;
  double ss = 0.0;
  for (double x : xs) ss += (x - b.mean) * (x - b.mean);
  const double sd = std::sqrt(ss / static_cast<double>(b.n - 1));
  b.half_width = kZ90 * sd / std::sqrt(static_cast<double>(b.n));
  return b;
}

struct AggregateRow {
  RunLabel label;
  std::size_t task_index = 0;
  Band band;
  bool best = false;
};

/// Mean final ratio over replicates per (strategy, beta, task_index).
inline std::vector<AggregateRow> aggregate(const std::vector<SummaryRow>& rows) {
  std::map<std::pair<RunLabel, std::size_t>, std::vector<double>> groups;
  for (const auto& r : rows) groups[{r.label, r.task_index}].push_back(r.final_ratio);
  std::vector<AggregateRow> out;
  for (const auto& [k, v] : groups) out.push_back({k.first, k.second, confidence_band(v), false});
  return out;
}

/// Flags, per task index, the label with the highest mean (ties: smaller beta).
inline void mark_best(std::vector<AggregateRow>& rows) {
  std::map<std::size_t, std::size_t> best;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    auto [it, fresh] = best.try_emplace(rows[i].task_index, i);
    if (!fresh && rows[i].band.mean > rows[it->second].band.mean) it->second = i;
  }
  for (auto& r : rows) r.best = false;
  for (const auto& [n, i] : best) rows[i].best = true;
}

inline const char* kAggregateHeader = "schema_version,strategy,beta,task_index,n_replicates,mean_ratio,ci_low,ci_high,best";

inline void write_aggregate_csv(std::ostream& out, const std::vector<AggregateRow>& rows) {
  out << kAggregateHeader << '\n';
  for (const auto& r : rows)
    out << kSchemaVersion << ',' << to_string(r.label.kind) << ',' << format_real(r.label.beta) << ',' << r.task_index
        << ',' << r.band.n << ',' << format_real(r.band.mean) << ',' << format_real(r.band.low()) << ','
        << format_real(r.band.high()) << ',' << (r.best ? 1 : 0) << '\n';
}

/// Mean of per-task values over the window of `width` tasks ending at n (1-based count).
inline double window_mean(const std::map<std::size_t, double>& by_task, std::size_t n, std::size_t width) {
  double s = 0.0;
  std::size_t c = 0;
  for (std::size_t t = n >= width ? n - width : 0; t < n; ++t) {
    const auto it = by_task.find(t);
    if (it != by_task.end()) {
      s += it->second;
      ++c;
    }
  }
  return c ? s / static_cast<double>(c) : 0.0;
}

/// Kendall tau-b between two equally long sequences.
inline double kendall_tau_b(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw InvalidParameters("kendall tau needs equal lengths");
  double concordant = 0.0, discordant = 0.0, ties_a = 0.0, ties_b = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t j = i + 1; j < a.size(); ++j) {
      const double da = a[j] - a[i];
      const double db = b[j] - b[i];
      if (da == 0.0 && db == 0.0) continue;
      if (da == 0.0) ties_a += 1.0;
      else if (db == 0.0) ties_b += 1.0;
      else if ((da > 0.0) == (db > 0.0)) concordant += 1.0;
      else discordant += 1.0;
    }
  const double denom = std::sqrt((concordant + discordant + ties_a) * (concordant + discordant + ties_b));
  return denom > 0.0 ? (concordant - discordant) / denom : 0.0;
}

/// Provenance record written next to the results.
struct RunManifest {
  std::string command;
  std::string config_hash;
  std::string code_version;
  std::string started_at;
  std::string finished_at;
  std::uint64_t master_seed = 0;
  std::vector<std::pair<std::size_t, std::uint64_t>> replicate_seeds;
  std::vector<std::string> outputs;
  std::string effective_config;

  nlohmann::json to_json() const {
    nlohmann::json seeds = nlohmann::json::array();
    for (const auto& [r, s] : replicate_seeds) seeds.push_back({{"replicate", r}, {"particle_init_seed", s}});
    return {{"schema_version", kSchemaVersion},
            {"command", command},
            {"config_hash", config_hash},
            {"code_version", code_version},
            {"started_at", started_at},
            {"finished_at", finished_at.empty() ? nlohmann::json(nullptr) : nlohmann::json(finished_at)},
            {"master_seed", master_seed},
            {"replicate_seeds", seeds},
            {"outputs", outputs},
            {"effective_config", effective_config}};
  }

  static RunManifest from_json(const nlohmann::json& j) {
    RunManifest m;
    m.command = j.at("command").get<std::string>();
    m.config_hash = j.at("config_hash").get<std::string>();
    m.code_version = j.at("code_version").get<std::string>();
    m.started_at = j.at("started_at").get<std::string>();
    if (!j.at("finished_at").is_null()) m.finished_at = j.at("finished_at").get<std::string>();
    m.master_seed = j.at("master_seed").get<std::uint64_t>();
    for (const auto& s : j.at("replicate_seeds"))
      m.replicate_seeds.emplace_back(s.at("replicate").get<std::size_t>(), s.at("particle_init_seed").get<std::uint64_t>());
    m.outputs = j.at("outputs").get<std::vector<std::string>>();
    m.effective_config = j.at("effective_config").get<std::string>();
    return m;
  }
};

}  // namespace mftmes
