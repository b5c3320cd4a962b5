#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iterator>
#include <numbers>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mftmes/kernel_params.hpp"
#include "mftmes/math.hpp"
#include "mftmes/mf_gp.hpp"
#include "mftmes/types.hpp"

namespace mftmes {

struct ParticleEnsemble {
  std::vector<KernelParams> particles;
  std::uint64_t generation = 0;
  std::uint64_t task_index = 0;

  std::size_t size() const { return particles.size(); }

  /// V particles, particle v seeded by derive_seed(seed, {v}).
  static ParticleEnsemble fresh(const FeatureArchitecture& arch, std::size_t count, std::uint64_t seed,
                                double init_stddev = 0.5) {
    if (count < 1) throw InvalidParameters("ensemble needs at least one particle");
    ParticleEnsemble ens;
    for (std::size_t v = 0; v < count; ++v)
      ens.particles.push_back(KernelParams::random(arch, derive_seed(seed, {v}), init_stddev));
    return ens;
  }

  void validate() const {
    if (particles.empty()) throw InvalidParameters("ensemble needs at least one particle");
    for (const auto& p : particles)
      if (!(p.architecture() == particles.front().architecture()))
        throw InvalidParameters("ensemble particles disagree on architecture");
  }

  friend bool operator==(const ParticleEnsemble&, const ParticleEnsemble&) = default;
};

struct SvgdConfig {
  double stepsize = 0.01;
  int rounds_per_fit = 5;
  /// Median heuristic when true, otherwise fixed_bandwidth is used as h.
  bool median_bandwidth = true;
  double fixed_bandwidth = 1.0;
  /// Cosine decay of the stepsize over the task's budget.
  bool cosine_decay = true;
  bool freeze_fidelity_rate = false;
  /// Per-coordinate AdaGrad scaling of the SVGD direction (decay 0.9).
  bool adagrad = true;

  void validate() const {
    if (!(stepsize >= 0.0)) throw InvalidParameters("svgd stepsize must be non-negative");
    if (rounds_per_fit < 1) throw InvalidParameters("svgd rounds_per_fit must be >= 1");
    if (!median_bandwidth && !(fixed_bandwidth > 0.0)) throw InvalidParameters("svgd bandwidth must be positive");
  }
};

/// exp(-||a - b||^2 / (2 h^2)) on flattened parameter vectors.
inline double particle_kernel(const Eigen::VectorXd& a, const Eigen::VectorXd& b, double bandwidth) {
  return std::exp(-(a - b).squaredNorm() / (2.0 * bandwidth * bandwidth));
}

inline double particle_kernel(const KernelParams& a, const KernelParams& b, double bandwidth) {
  if (a.dim() != b.dim()) throw InvalidParameters("particle kernel needs equal dimensions");
  return particle_kernel(a.flat(), b.flat(), bandwidth);
}

/// h with h^2 = median pairwise squared distance / (2 log(V + 1)); 1 when degenerate.
inline double median_heuristic_bandwidth(const std::vector<Eigen::VectorXd>& xs) {
  std::vector<double> d2;
  for (std::size_t i = 0; i < xs.size(); ++i)
    for (std::size_t j = i + 1; j < xs.size(); ++j) d2.push_back((xs[i] - xs[j]).squaredNorm());
  if (d2.empty()) return 1.0;
  std::sort(d2.begin(), d2.end());
  const std::size_t n = d2.size();
  const double med = n % 2 == 1 ? d2[n / 2] : 0.5 * (d2[n / 2 - 1] + d2[n / 2]);
  if (!(med > 1e-12)) return 1.0;
  return std::sqrt(med / (2.0 * std::log(static_cast<double>(xs.size()) + 1.0)));
}

/// Prior density over flattened theta: isotropic N(0, I) or a Gaussian KDE on
/// the previous task's particles with per-dimension Silverman bandwidth.
class PriorModel {
 public:
  static PriorModel isotropic() { return PriorModel{}; }

  static PriorModel kde_from(const std::vector<Eigen::VectorXd>& anchors, double bandwidth_floor = 1e-3) {
    if (anchors.empty()) return isotropic();
    PriorModel p;
    p.uniform_fallback_ = false;
    const auto v = static_cast<Eigen::Index>(anchors.size());
    const Eigen::Index dim = anchors.front().size();
    p.anchors_.resize(v, dim);
    for (Eigen::Index i = 0; i < v; ++i) p.anchors_.row(i) = anchors[static_cast<std::size_t>(i)].transpose();
    const Eigen::RowVectorXd mean = p.anchors_.colwise().mean();
    p.bandwidth_.resize(dim);
    const double factor = 1.06 * std::pow(static_cast<double>(v), -0.2);
    for (Eigen::Index d = 0; d < dim; ++d) {
      double sd = 0.0;
      if (v > 1) sd = std::sqrt((p.anchors_.col(d).array() - mean[d]).square().sum() / static_cast<double>(v - 1));
      p.bandwidth_[d] = std::max(factor * sd, bandwidth_floor);
    }
    return p;
  }

  bool is_isotropic() const { return uniform_fallback_; }
  const Eigen::MatrixXd& anchors() const { return anchors_; }
  const Eigen::VectorXd& bandwidth() const { return bandwidth_; }

  double log_density(const Eigen::VectorXd& theta) const {
    const double half_log_2pi = 0.5 * std::log(2.0 * std::numbers::pi);
    const auto dim = static_cast<double>(theta.size());
    if (uniform_fallback_) return -0.5 * theta.squaredNorm() - dim * half_log_2pi;
    const Eigen::VectorXd e = exponents(theta);
    const double top = e.maxCoeff();
    const double lse = top + std::log((e.array() - top).exp().sum());
    return lse - std::log(static_cast<double>(anchors_.rows())) - bandwidth_.array().log().sum() - dim * half_log_2pi;
  }

  Eigen::VectorXd grad_log_density(const Eigen::VectorXd& theta) const {
    if (uniform_fallback_) return -theta;
    const Eigen::VectorXd e = exponents(theta);
    const double top = e.maxCoeff();
    Eigen::VectorXd w = (e.array() - top).exp();
    w /= w.sum();
    const Eigen::VectorXd inv_h2 = bandwidth_.array().square().inverse();
    Eigen::VectorXd g = Eigen::VectorXd::Zero(theta.size());
    for (Eigen::Index v = 0; v < anchors_.rows(); ++v)
      g -= w[v] * ((theta - anchors_.row(v).transpose()).array() * inv_h2.array()).matrix();
    return g;
  }

 private:
  Eigen::VectorXd exponents(const Eigen::VectorXd& theta) const {
    Eigen::VectorXd e(anchors_.rows());
    for (Eigen::Index v = 0; v < anchors_.rows(); ++v)
      e[v] = -0.5 * ((theta - anchors_.row(v).transpose()).array() / bandwidth_.array()).square().sum();
    return e;
  }

  bool uniform_fallback_ = true;
  Eigen::MatrixXd anchors_;
  Eigen::VectorXd bandwidth_;
};

inline PriorModel kde_prior_from(const ParticleEnsemble& ens) {
  std::vector<Eigen::VectorXd> anchors;
  for (const auto& p : ens.particles) anchors.push_back(p.flat());
  return PriorModel::kde_from(anchors);
}

/// Running squared-direction history for AdaGrad-scaled SVGD steps.
struct AdagradState {
  std::vector<Eigen::VectorXd> history;
  static constexpr double kDecay = 0.9;
  static constexpr double kFudge = 1e-6;
};

/// One SVGD update of `particles` towards the density whose score (gradient of
/// the log density) is returned by `score`. A particle whose proposal is
/// non-finite retries with half the step; a second failure throws.
template <class ScoreFn>
void svgd_update(std::vector<Eigen::VectorXd>& particles, ScoreFn&& score, double stepsize, double bandwidth,
                 AdagradState* ada = nullptr) {
  const std::size_t v_count = particles.size();
  std::vector<Eigen::VectorXd> scores;
  scores.reserve(v_count);
  for (const auto& p : particles) {
    scores.push_back(score(p));
    if (!scores.back().allFinite()) throw SvgdDiverged("non-finite log-posterior gradient");
  }
  const double inv_h2 = 1.0 / (bandwidth * bandwidth);
  std::vector<Eigen::VectorXd> moved(v_count);
  for (std::size_t v = 0; v < v_count; ++v) {
    Eigen::VectorXd omega = Eigen::VectorXd::Zero(particles[v].size());
    for (std::size_t w = 0; w < v_count; ++w) {
      const Eigen::VectorXd diff = particles[w] - particles[v];
      const double k = std::exp(-0.5 * diff.squaredNorm() * inv_h2);
      omega += -(inv_h2 * k) * diff + k * scores[w];
    }
    omega /= static_cast<double>(v_count);
    if (ada) {
      if (ada->history.size() != v_count) ada->history.assign(v_count, Eigen::VectorXd());
      auto& hist = ada->history[v];
      const Eigen::VectorXd sq = omega.array().square().matrix();
      if (hist.size() != omega.size()) hist = sq;
      else hist = AdagradState::kDecay * hist + (1.0 - AdagradState::kDecay) * sq;
      omega = (omega.array() / (AdagradState::kFudge + hist.array().sqrt())).matrix();
    }
    moved[v] = particles[v] + stepsize * omega;
    if (!moved[v].allFinite()) {
      moved[v] = particles[v] + (0.5 * stepsize) * omega;
      if (!moved[v].allFinite()) throw SvgdDiverged("SVGD proposal non-finite after halving the stepsize");
    }
  }
  particles = std::move(moved);
}

/// Score of the log posterior l+(theta | data) + log p(theta).
inline Eigen::VectorXd log_posterior_score(const KernelParams& theta, const TaskDataset& data, const PriorModel& prior,
                                           bool freeze_fidelity_rate = false) {
  Eigen::VectorXd g = prior.grad_log_density(theta.flat());
  if (!data.empty()) g += log_marginal_likelihood_and_grad(theta, data, freeze_fidelity_rate).gradient;
  if (freeze_fidelity_rate) g[theta.log_gamma_off()] = 0.0;
  return g;
}

/// One SVGD round on the GP posterior over theta.
inline ParticleEnsemble svgd_step(const ParticleEnsemble& ens, const TaskDataset& data, const PriorModel& prior,
                                  const SvgdConfig& cfg, AdagradState* ada = nullptr) {
  ens.validate();
  cfg.validate();
  const FeatureArchitecture arch = ens.particles.front().architecture();
  std::vector<Eigen::VectorXd> xs;
  for (const auto& p : ens.particles) xs.push_back(p.flat());
  const double h = cfg.median_bandwidth ? median_heuristic_bandwidth(xs) : cfg.fixed_bandwidth;
  ParticleEnsemble out = ens;
  if (cfg.stepsize == 0.0) {
    ++out.generation;
    return out;
  }
  svgd_update(
      xs,
      [&](const Eigen::VectorXd& flat) {
        return log_posterior_score(KernelParams(arch, flat), data, prior, cfg.freeze_fidelity_rate);
      },
      cfg.stepsize, h, cfg.adagrad ? ada : nullptr);
  for (std::size_t v = 0; v < xs.size(); ++v) out.particles[v] = KernelParams(arch, std::move(xs[v]));
  ++out.generation;
  return out;
}

inline ParticleEnsemble update_posterior_particles(const ParticleEnsemble& ens, const TaskDataset& data,
                                                   const PriorModel& prior, const SvgdConfig& cfg) {
  cfg.validate();
  ParticleEnsemble cur = ens;
  AdagradState ada;
  for (int r = 0; r < cfg.rounds_per_fit; ++r) cur = svgd_step(cur, data, prior, cfg, &ada);
  return cur;
}

// Checkpoint container, all integers and doubles little-endian:
//   magic "MFTMESEN" | u32 format_version | u32 V | u32 input_dim | u32 hidden | u32 output
//   | u32 flat_dim | u64 task_index | u64 generation | V*flat_dim f64 | u64 FNV-1a of all preceding bytes
inline constexpr std::uint32_t kEnsembleFormatVersion = 1;
inline constexpr char kEnsembleMagic[8] = {'M', 'F', 'T', 'M', 'E', 'S', 'E', 'N'};

namespace detail {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

template <class T>
void put(std::string& buf, T v) {
  char raw[sizeof(T)];
  std::memcpy(raw, &v, sizeof(T));
  buf.append(raw, sizeof(T));
}

template <class T>
T take(const std::string& buf, std::size_t& pos) {
  if (pos + sizeof(T) > buf.size()) throw CheckpointError("corrupt payload: checkpoint truncated");
  T v;
  std::memcpy(&v, buf.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

}  // namespace detail

inline std::string serialize_ensemble(const ParticleEnsemble& ens) {
  ens.validate();
  const auto& arch = ens.particles.front().architecture();
  std::string buf(kEnsembleMagic, sizeof(kEnsembleMagic));
  detail::put<std::uint32_t>(buf, kEnsembleFormatVersion);
  detail::put<std::uint32_t>(buf, static_cast<std::uint32_t>(ens.size()));
  detail::put<std::uint32_t>(buf, static_cast<std::uint32_t>(arch.input_dim));
  detail::put<std::uint32_t>(buf, static_cast<std::uint32_t>(arch.hidden));
  detail::put<std::uint32_t>(buf, static_cast<std::uint32_t>(arch.output));
  detail::put<std::uint32_t>(buf, static_cast<std::uint32_t>(arch.flat_size()));
  detail::put<std::uint64_t>(buf, ens.task_index);
  detail::put<std::uint64_t>(buf, ens.generation);
  for (const auto& p : ens.particles)
    for (Eigen::Index i = 0; i < p.dim(); ++i) detail::put<double>(buf, p.flat()[i]);
  detail::put<std::uint64_t>(buf, fnv1a(buf.data(), buf.size()));
  return buf;
}

inline ParticleEnsemble deserialize_ensemble(const std::string& buf) {
  if (buf.size() < sizeof(kEnsembleMagic) || std::memcmp(buf.data(), kEnsembleMagic, sizeof(kEnsembleMagic)) != 0)
    throw CheckpointError("corrupt payload: bad magic");
  std::size_t pos = sizeof(kEnsembleMagic);
  const auto version = detail::take<std::uint32_t>(buf, pos);
  if (version != kEnsembleFormatVersion)
    throw CheckpointError("version mismatch: checkpoint format " + std::to_string(version));
  const auto count = detail::take<std::uint32_t>(buf, pos);
  FeatureArchitecture arch;
  arch.input_dim = static_cast<int>(detail::take<std::uint32_t>(buf, pos));
  arch.hidden = static_cast<int>(detail::take<std::uint32_t>(buf, pos));
  arch.output = static_cast<int>(detail::take<std::uint32_t>(buf, pos));
  const auto flat_dim = detail::take<std::uint32_t>(buf, pos);
  if (count == 0 || arch.input_dim < 1 || arch.hidden < 1 || arch.output < 1 || flat_dim != arch.flat_size())
    throw CheckpointError("corrupt payload: inconsistent architecture header");
  ParticleEnsemble ens;
  ens.task_index = detail::take<std::uint64_t>(buf, pos);
  ens.generation = detail::take<std::uint64_t>(buf, pos);
  const std::size_t payload_end = pos + static_cast<std::size_t>(count) * flat_dim * sizeof(double);
  if (payload_end + sizeof(std::uint64_t) != buf.size()) throw CheckpointError("corrupt payload: size mismatch");
  for (std::uint32_t v = 0; v < count; ++v) {
    Eigen::VectorXd flat(flat_dim);
    for (std::uint32_t i = 0; i < flat_dim; ++i) flat[i] = detail::take<double>(buf, pos);
    ens.particles.emplace_back(arch, std::move(flat));
  }
  const auto checksum = detail::take<std::uint64_t>(buf, pos);
  if (checksum != fnv1a(buf.data(), payload_end)) throw CheckpointError("corrupt payload: checksum mismatch");
  return ens;
}

inline void save_ensemble(const ParticleEnsemble& ens, const std::string& path) {
  const std::string buf = serialize_ensemble(ens);
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot open checkpoint for writing: " + path);
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw CheckpointError("failed writing checkpoint: " + path);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) throw CheckpointError("failed to move checkpoint into place");
}

inline ParticleEnsemble load_ensemble(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint: " + path);
  std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return deserialize_ensemble(buf);
}

}  // namespace mftmes
