#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "mftmes/math.hpp"
#include "mftmes/mf_gp.hpp"
#include "mftmes/types.hpp"

namespace mftmes {

/// Per-fidelity query cost S^(m) and the per-task budget.
struct CostModel {
  std::vector<double> costs{10.0, 20.0, 50.0, 100.0};
  double budget = 2000.0;

  int num_fidelities() const { return static_cast<int>(costs.size()); }
  double cost(FidelityLevel m) const { return costs.at(static_cast<std::size_t>(m.index - 1)); }
  double min_cost() const { return costs.front(); }

  void validate() const {
    if (costs.empty()) throw InvalidParameters("cost model needs at least one fidelity");
    for (std::size_t i = 0; i < costs.size(); ++i) {
      if (!(costs[i] > 0.0)) throw InvalidParameters("fidelity costs must be positive");
      if (i > 0 && costs[i] < costs[i - 1]) throw InvalidParameters("fidelity costs must be non-decreasing");
    }
    if (!(budget > 0.0)) throw InvalidParameters("budget must be positive");
  }
};

struct MaxValueSamples {
  std::vector<double> values;
  FidelityLevel fidelity_of_reference{};
};

struct AcquisitionConfig {
  double beta = 0.0;
  int num_max_value_samples = 10;
  /// Use log(sqrt(factor)) in the truncated-entropy term instead of log(factor).
  bool sqrt_variance_factor = false;
};

/// Posterior statistics of one particle over the whole grid, one vector per fidelity.
struct GridPrediction {
  std::vector<Eigen::VectorXd> mean;
  std::vector<Eigen::VectorXd> variance;
};

inline GridPrediction predict_grid(const PosteriorGP& post, const Eigen::MatrixXd& grid_inputs, int num_fidelities) {
  GridPrediction out;
  const Eigen::MatrixXd feats = feature_map_batch(post.params(), grid_inputs);
  if (post.size() == 0) {
    for (int m = 1; m <= num_fidelities; ++m) {
      out.mean.push_back(Eigen::VectorXd::Zero(grid_inputs.rows()));
      out.variance.push_back(Eigen::VectorXd::Ones(grid_inputs.rows()));
    }
    return out;
  }
  const Eigen::MatrixXd cross = post.cross_input_kernel(feats);
  for (int m = 1; m <= num_fidelities; ++m) {
    auto [mu, var] = post.predict_from_cross(cross, FidelityLevel{m});
    out.mean.push_back(std::move(mu));
    out.variance.push_back(std::move(var));
  }
  return out;
}

struct GumbelFit {
  double location;
  double scale;
};

namespace detail {

inline double log_max_cdf(double z, const Eigen::VectorXd& mean, const Eigen::VectorXd& sd) {
  double s = 0.0;
  for (Eigen::Index i = 0; i < mean.size(); ++i) s += log_normal_cdf((z - mean[i]) / sd[i]);
  return s;
}

inline double max_cdf_quantile(double q, const Eigen::VectorXd& mean, const Eigen::VectorXd& sd) {
  const double target = std::log(q);
  const double sd_max = sd.maxCoeff();
  double lo = mean.minCoeff() - 5.0 * sd_max;
  double hi = mean.maxCoeff() + 5.0 * sd_max;
  double width = std::max(hi - lo, 1e-6);
  while (log_max_cdf(lo, mean, sd) > target) {
    lo -= width;
    width *= 2.0;
  }
  width = std::max(hi - lo, 1e-6);
  while (log_max_cdf(hi, mean, sd) < target) {
    hi += width;
    width *= 2.0;
  }
  while (hi - lo > 1e-10 * std::max(1.0, std::abs(lo) + std::abs(hi))) {
    const double mid = 0.5 * (lo + hi);
    if (log_max_cdf(mid, mean, sd) < target)
      lo = mid;
    else
      hi = mid;
  }
  return 0.5 * (lo + hi);
}

}  // namespace detail

/// Gumbel approximation of max_x f(x) under independent Gaussian marginals,
/// matched at the 0.25 and 0.75 quantiles of prod_x Phi((z - mu_x)/sigma_x).
inline GumbelFit fit_gumbel_quartiles(const Eigen::VectorXd& mean, const Eigen::VectorXd& variance) {
  const Eigen::VectorXd sd = variance.cwiseMax(kVarianceFloor).cwiseSqrt();
  const double z25 = detail::max_cdf_quantile(0.25, mean, sd);
  const double z75 = detail::max_cdf_quantile(0.75, mean, sd);
  const double c25 = std::log(-std::log(0.25));
  const double c75 = std::log(-std::log(0.75));
  const double scale = (z75 - z25) / (c25 - c75);
  return {z25 + scale * c25, scale};
}

inline MaxValueSamples gumbel_sample_max_values(const Eigen::VectorXd& mean, const Eigen::VectorXd& variance,
                                                int num_samples, std::uint64_t seed,
                                                FidelityLevel reference = FidelityLevel{}) {
  if (num_samples < 1) throw InvalidParameters("need at least one max-value sample");
  MaxValueSamples out{{}, reference};
  out.values.reserve(static_cast<std::size_t>(num_samples));
  if (variance.maxCoeff() <= kVarianceFloor) {
    out.values.assign(static_cast<std::size_t>(num_samples), mean.maxCoeff());
    return out;
  }
  const GumbelFit fit = fit_gumbel_quartiles(mean, variance);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (int g = 0; g < num_samples; ++g) {
    double u = unif(rng);
    while (u <= 0.0) u = unif(rng);
    out.values.push_back(fit.location - fit.scale * std::log(-std::log(u)));
  }
  return out;
}

/// Draws max-value samples from the posterior at the highest fidelity over the grid.
inline MaxValueSamples gumbel_sample_max_values(const PosteriorGP& post, const Eigen::MatrixXd& grid_inputs,
                                                int num_fidelities, int num_samples, std::uint64_t seed) {
  const FidelityLevel top{num_fidelities};
  auto [mu, var] = post.predict(feature_map_batch(post.params(), grid_inputs), top);
  return gumbel_sample_max_values(mu, var, num_samples, seed, top);
}

inline double gamma_score(double mean, double variance, double f_star) {
  return (f_star - mean) / std::sqrt(std::max(variance, kVarianceFloor));
}

/// Truncated-variance factor 1 - r (g + r), r = phi(g)/Phi(g), clamped to [1e-12, 1].
inline double truncated_variance_factor(double g) {
  const auto mills = inverse_mills(g);
  return std::clamp(1.0 - mills.ratio * mills.shifted, 1e-12, 1.0);
}

/// Cost-normalized information gain on the max value. The printed form
///   (1/S) log(sqrt(2 pi e) sigma) - 1/(|F| S) sum log(sqrt(2 pi e) sigma * factor)
/// is evaluated with the sigma terms cancelled, i.e. -1/(|F| S) sum log(factor).
inline double gibbon_alpha(double mean, double variance, std::span<const double> f_stars, double cost,
                           bool sqrt_variance_factor = false) {
  double acc = 0.0;
  for (double f : f_stars) {
    const double lf = std::log(truncated_variance_factor(gamma_score(mean, variance, f)));
    acc -= sqrt_variance_factor ? 0.5 * lf : lf;
  }
  return acc / (static_cast<double>(f_stars.size()) * cost);
}

inline double gibbon_alpha(const PosteriorGP& post, const InputPoint& x, FidelityLevel m, const MaxValueSamples& f,
                           const CostModel& cost, bool sqrt_variance_factor = false) {
  const auto mv = post.mean_var(x, m);
  return gibbon_alpha(mv.mean, mv.variance, f.values, cost.cost(m), sqrt_variance_factor);
}

namespace detail {

/// Spread-plus-average variance of an equally weighted Gaussian mixture.
inline double mixture_moment(std::span<const double> means, std::span<const double> variances) {
  const double v = static_cast<double>(means.size());
  double mean_bar = 0.0, var_bar = 0.0;
  for (std::size_t i = 0; i < means.size(); ++i) {
    mean_bar += means[i];
    var_bar += variances[i];
  }
  mean_bar /= v;
  var_bar /= v;
  double spread = 0.0;
  for (double mu : means) spread += (mu - mean_bar) * (mu - mean_bar);
  return var_bar + spread / v;
}

}  // namespace detail

/// Predictive variance of y under the particle mixture, including observation noise.
inline double mixture_variance(std::span<const double> means, std::span<const double> variances,
                               double noise_variance) {
  return detail::mixture_moment(means, variances) + noise_variance;
}

/// Information about theta carried by y at (x, m), upper-bounded through the
/// max-entropy Gaussian: 1/2 [log(2 pi e Var_mix) - mean_v log(2 pi e sigma_v^2)].
inline double transfer_term(std::span<const double> means, std::span<const double> variances) {
  const double two_pi_e = 2.0 * std::numbers::pi * std::numbers::e;
  double mean_log = 0.0;
  for (double s2 : variances) mean_log += std::log(two_pi_e * std::max(s2, kVarianceFloor));
  mean_log /= static_cast<double>(variances.size());
  const double mix = std::max(detail::mixture_moment(means, variances), kVarianceFloor);
  return 0.5 * (std::log(two_pi_e * mix) - mean_log);
}

struct Selection {
  std::size_t grid_index;
  FidelityLevel fidelity;
  double score;
};

/// Argmax over grid x affordable fidelities of
///   mean_v alpha_v(x, m) + beta * transfer_term(x, m) / S^(m).
/// Ties go to the lower fidelity, then to the earlier grid point.
/// Returns nullopt when no fidelity fits in the remaining budget.
inline std::optional<Selection> select_next(std::span<const GridPrediction> particles,
                                            std::span<const MaxValueSamples> f_per_particle, const CostModel& cost,
                                            double remaining_budget, const AcquisitionConfig& cfg) {
  if (particles.empty() || particles.size() != f_per_particle.size())
    throw InvalidParameters("select_next needs one max-value set per particle");
  const std::size_t num_particles = particles.size();
  const Eigen::Index n = particles.front().mean.front().size();
  std::optional<Selection> best;
  std::vector<double> mu(num_particles), s2(num_particles);
  for (int m = 1; m <= cost.num_fidelities(); ++m) {
    const double s = cost.cost(FidelityLevel{m});
    if (s > remaining_budget) continue;
    const auto k = static_cast<std::size_t>(m - 1);
    for (Eigen::Index i = 0; i < n; ++i) {
      double info = 0.0;
      for (std::size_t v = 0; v < num_particles; ++v) {
        mu[v] = particles[v].mean[k][i];
        s2[v] = particles[v].variance[k][i];
        info += gibbon_alpha(mu[v], s2[v], f_per_particle[v].values, s, cfg.sqrt_variance_factor);
      }
      double score = info / static_cast<double>(num_particles);
      if (cfg.beta != 0.0) score += cfg.beta * transfer_term(mu, s2) / s;
      if (!best || score > best->score) best = Selection{static_cast<std::size_t>(i), FidelityLevel{m}, score};
    }
  }
  return best;
}

struct EntropyEstimate {
  double entropy;
  double standard_error;
};

/// Monte Carlo differential entropy of an equally weighted Gaussian mixture.
inline EntropyEstimate mc_mixture_entropy(std::span<const double> means, std::span<const double> variances,
                                          int num_samples, std::uint64_t seed) {
  const std::size_t v = means.size();
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, v - 1);
  std::normal_distribution<double> nd(0.0, 1.0);
  std::vector<double> log_norm(v);
  for (std::size_t i = 0; i < v; ++i)
    log_norm[i] = -0.5 * std::log(2.0 * std::numbers::pi * variances[i]) - std::log(static_cast<double>(v));
  std::vector<double> terms(v);
  double sum = 0.0, sum_sq = 0.0;
  for (int s = 0; s < num_samples; ++s) {
    const std::size_t c = pick(rng);
    const double y = means[c] + std::sqrt(variances[c]) * nd(rng);
    double top = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < v; ++i) {
      const double d = y - means[i];
      terms[i] = log_norm[i] - 0.5 * d * d / variances[i];
      top = std::max(top, terms[i]);
    }
    double acc = 0.0;
    for (double t : terms) acc += std::exp(t - top);
    const double neg_log_p = -(top + std::log(acc));
    sum += neg_log_p;
    sum_sq += neg_log_p * neg_log_p;
  }
  const double n = static_cast<double>(num_samples);
  const double mean = sum / n;
  const double var = std::max(sum_sq / n - mean * mean, 0.0) * n / std::max(n - 1.0, 1.0);
  return {mean, std::sqrt(var / n)};
}

/// Monte Carlo entropy of the particle-mixture predictive of y at (x, m).
inline EntropyEstimate mc_entropy_bound_check(std::span<const PosteriorGP> posts, const InputPoint& x,
                                              FidelityLevel m, int num_samples, std::uint64_t seed) {
  std::vector<double> mu, s2;
  for (const auto& p : posts) {
    const auto mv = p.mean_var(x, m);
    mu.push_back(mv.mean);
    s2.push_back(mv.variance + p.noise_variance());
  }
  return mc_mixture_entropy(mu, s2, num_samples, seed);
}

}  // namespace mftmes
