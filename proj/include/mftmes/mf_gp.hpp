#pragma once

#include <cmath>
#include <numbers>
#include <span>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "mftmes/kernel_params.hpp"
#include "mftmes/math.hpp"
#include "mftmes/types.hpp"

namespace mftmes {

struct ObservationRecord {
  InputPoint x;
  FidelityLevel m;
  double y = 0.0;
};

/// Observations of one task in arrival order.
struct TaskDataset {
  std::vector<ObservationRecord> records;
  double noise_variance = 0.83;

  std::size_t size() const { return records.size(); }
  bool empty() const { return records.empty(); }
  void append(const ObservationRecord& r) { records.push_back(r); }
};

inline double input_kernel_from_features(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  return std::exp(-(a - b).squaredNorm());
}

/// exp(-||psi(x) - psi(x2)||^2)
inline double input_kernel(const KernelParams& params, const InputPoint& x, const InputPoint& x2) {
  return input_kernel_from_features(feature_map(params, x), feature_map(params, x2));
}

inline double fidelity_kernel(double gamma, int m, int m2) {
  const double d = static_cast<double>(m - m2);
  return std::exp(-gamma * d * d);
}

/// exp(-gamma |m - m2|^2) with gamma = exp(log_fidelity_lengthscale).
inline double fidelity_kernel(const KernelParams& params, FidelityLevel m, FidelityLevel m2) {
  return fidelity_kernel(params.fidelity_gamma(), m.index, m2.index);
}

inline double joint_kernel(const KernelParams& params, const InputPoint& x, FidelityLevel m, const InputPoint& x2,
                           FidelityLevel m2) {
  return input_kernel(params, x, x2) * fidelity_kernel(params, m, m2);
}

/// Pairwise squared distances between feature rows of a and b.
inline Eigen::MatrixXd squared_distances(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  const Eigen::MatrixXd at = a.transpose();
  const Eigen::MatrixXd bt = b.transpose();
  Eigen::MatrixXd d(a.rows(), b.rows());
  for (Eigen::Index j = 0; j < b.rows(); ++j)
    for (Eigen::Index i = 0; i < a.rows(); ++i) d(i, j) = (at.col(i) - bt.col(j)).squaredNorm();
  return d;
}

/// Noise-free Gram matrix of the joint kernel over (features, fidelities).
inline Eigen::MatrixXd joint_gram(const Eigen::MatrixXd& features, std::span<const int> fidelities, double gamma) {
  const Eigen::Index t = features.rows();
  Eigen::MatrixXd k(t, t);
  for (Eigen::Index j = 0; j < t; ++j) {
    k(j, j) = 1.0;
    for (Eigen::Index i = j + 1; i < t; ++i) {
      const double v = std::exp(-(features.row(i) - features.row(j)).squaredNorm()) *
                       fidelity_kernel(gamma, fidelities[static_cast<std::size_t>(i)],
                                       fidelities[static_cast<std::size_t>(j)]);
      k(i, j) = v;
      k(j, i) = v;
    }
  }
  return k;
}

namespace detail {

struct Factorized {
  Eigen::MatrixXd lower;
  double jitter = 0.0;
};

/// Cholesky of K + noise*I with the escalating jitter policy 0, 1e-10, ..., 1e-6.
inline Factorized factorize_gram(const Eigen::MatrixXd& k, double noise_variance) {
  double jitter = 0.0;
  for (;;) {
    Eigen::MatrixXd kt = k;
    kt.diagonal().array() += noise_variance + jitter;
    Eigen::LLT<Eigen::MatrixXd> llt(kt);
    if (llt.info() == Eigen::Success) {
      Eigen::MatrixXd lower = llt.matrixL();
      if ((lower.diagonal().array() > 0.0).all()) return {std::move(lower), jitter};
    }
    jitter = jitter == 0.0 ? 1e-10 : jitter * 10.0;
    if (jitter > 1e-6 * (1.0 + 1e-9)) throw IllConditionedGram("Gram matrix not positive definite after jitter 1e-6");
  }
}

inline std::vector<int> fidelity_indices(const TaskDataset& data) {
  std::vector<int> m;
  m.reserve(data.size());
  for (const auto& r : data.records) m.push_back(r.m.index);
  return m;
}

inline Eigen::VectorXd targets(const TaskDataset& data) {
  Eigen::VectorXd y(static_cast<Eigen::Index>(data.size()));
  for (std::size_t i = 0; i < data.size(); ++i) y[static_cast<Eigen::Index>(i)] = data.records[i].y;
  return y;
}

inline Eigen::MatrixXd dataset_inputs(const TaskDataset& data) {
  Eigen::MatrixXd in(static_cast<Eigen::Index>(data.size()), 2);
  for (std::size_t i = 0; i < data.size(); ++i) {
    in(static_cast<Eigen::Index>(i), 0) = data.records[i].x.normalized[0];
    in(static_cast<Eigen::Index>(i), 1) = data.records[i].x.normalized[1];
  }
  return in;
}

}  // namespace detail

struct MeanVar {
  double mean;
  double variance;
};

/// Exact GP posterior for one parameter vector. Immutable after fitting.
class PosteriorGP {
 public:
  PosteriorGP(KernelParams params, const TaskDataset& data) : params_(std::move(params)) {
    params_.validate();
    if (!(data.noise_variance > 0.0)) throw InvalidParameters("noise variance must be positive");
    noise_variance_ = data.noise_variance;
    gamma_ = params_.fidelity_gamma();
    fidelities_ = detail::fidelity_indices(data);
    if (data.empty()) return;
    features_ = feature_map_batch(params_, detail::dataset_inputs(data));
    auto fac = detail::factorize_gram(joint_gram(features_, fidelities_, gamma_), noise_variance_);
    chol_ = std::move(fac.lower);
    jitter_ = fac.jitter;
    weights_ = chol_.triangularView<Eigen::Lower>().solve(detail::targets(data));
    chol_.triangularView<Eigen::Lower>().transpose().solveInPlace(weights_);
  }

  const KernelParams& params() const { return params_; }
  const Eigen::MatrixXd& chol_factor() const { return chol_; }
  /// K~^{-1} y
  const Eigen::VectorXd& weight_vector() const { return weights_; }
  double noise_variance() const { return noise_variance_; }
  double jitter() const { return jitter_; }
  std::size_t size() const { return fidelities_.size(); }

  MeanVar mean_var(const InputPoint& x, FidelityLevel m) const {
    Eigen::MatrixXd in(1, 2);
    in << x.normalized[0], x.normalized[1];
    auto [mu, var] = predict(feature_map_batch(params_, in), m);
    return {mu[0], var[0]};
  }

  /// Posterior mean and variance for rows of query features at one fidelity.
  std::pair<Eigen::VectorXd, Eigen::VectorXd> predict(const Eigen::MatrixXd& query_features, FidelityLevel m) const {
    const Eigen::Index n = query_features.rows();
    if (fidelities_.empty()) return {Eigen::VectorXd::Zero(n), Eigen::VectorXd::Ones(n)};
    return predict_from_cross(cross_input_kernel(query_features), m);
  }

  /// exp(-||psi_q - psi_i||^2) for every query row q and data row i.
  Eigen::MatrixXd cross_input_kernel(const Eigen::MatrixXd& query_features) const {
    return (-squared_distances(query_features, features_).array()).exp().matrix();
  }

  /// Same as predict but reuses an input-space cross kernel across fidelities.
  std::pair<Eigen::VectorXd, Eigen::VectorXd> predict_from_cross(const Eigen::MatrixXd& cross_input,
                                                                 FidelityLevel m) const {
    const Eigen::Index n = cross_input.rows();
    if (fidelities_.empty()) return {Eigen::VectorXd::Zero(n), Eigen::VectorXd::Ones(n)};
    Eigen::MatrixXd cross = cross_input;
    for (std::size_t i = 0; i < fidelities_.size(); ++i)
      cross.col(static_cast<Eigen::Index>(i)) *= fidelity_kernel(gamma_, m.index, fidelities_[i]);
    Eigen::VectorXd mean = cross * weights_;
    Eigen::MatrixXd v = chol_.triangularView<Eigen::Lower>().solve(cross.transpose());
    Eigen::VectorXd var = (1.0 - v.colwise().squaredNorm().transpose().array()).matrix();
    var = var.cwiseMax(kVarianceFloor).cwiseMin(1.0);
    return {std::move(mean), std::move(var)};
  }

 private:
  KernelParams params_;
  double noise_variance_ = 0.0;
  double gamma_ = 1.0;
  double jitter_ = 0.0;
  std::vector<int> fidelities_;
  Eigen::MatrixXd features_;
  Eigen::MatrixXd chol_;
  Eigen::VectorXd weights_;
};

inline PosteriorGP fit_posterior(const KernelParams& params, const TaskDataset& data) { return {params, data}; }

inline MeanVar posterior_mean_var(const PosteriorGP& post, const InputPoint& x, FidelityLevel m) {
  return post.mean_var(x, m);
}

/// Log evidence -1/2 (t log 2pi + log|K~| + y^T K~^{-1} y).
inline double log_marginal_likelihood(const KernelParams& params, const TaskDataset& data) {
  if (data.empty()) throw InvalidParameters("log marginal likelihood needs at least one observation");
  const PosteriorGP post(params, data);
  const double t = static_cast<double>(data.size());
  const double log_det = 2.0 * post.chol_factor().diagonal().array().log().sum();
  const double quad = detail::targets(data).dot(post.weight_vector());
  return -0.5 * (t * std::log(2.0 * std::numbers::pi) + log_det + quad);
}

struct LikelihoodAndGradient {
  double value;
  Eigen::VectorXd gradient;
};

/// Log evidence and its gradient with respect to the flat parameter vector,
/// via d/dtheta_j = 1/2 tr[(a a^T - K~^{-1}) dK~/dtheta_j], a = K~^{-1} y.
/// Set freeze_fidelity_rate to hold log gamma fixed (zero gradient entry).
inline LikelihoodAndGradient log_marginal_likelihood_and_grad(const KernelParams& params, const TaskDataset& data,
                                                              bool freeze_fidelity_rate = false) {
  if (data.empty()) throw InvalidParameters("log marginal likelihood gradient needs at least one observation");
  params.validate();
  if (!(data.noise_variance > 0.0)) throw InvalidParameters("noise variance must be positive");

  const Eigen::MatrixXd inputs = detail::dataset_inputs(data);
  const Eigen::MatrixXd psi = feature_map_batch(params, inputs);
  const std::vector<int> fid = detail::fidelity_indices(data);
  const double gamma = params.fidelity_gamma();
  const Eigen::MatrixXd k = joint_gram(psi, fid, gamma);
  const auto fac = detail::factorize_gram(k, data.noise_variance);
  const auto lower = fac.lower.triangularView<Eigen::Lower>();
  const Eigen::Index t = k.rows();

  const Eigen::VectorXd y = detail::targets(data);
  Eigen::VectorXd alpha = lower.solve(y);
  lower.transpose().solveInPlace(alpha);

  Eigen::MatrixXd k_inv = lower.solve(Eigen::MatrixXd::Identity(t, t));
  k_inv = lower.transpose().solve(k_inv);

  LikelihoodAndGradient out;
  out.value = -0.5 * (static_cast<double>(t) * std::log(2.0 * std::numbers::pi) +
                      2.0 * fac.lower.diagonal().array().log().sum() + y.dot(alpha));

  // a_ij = (alpha alpha^T - K~^{-1})_ij * K_ij
  const Eigen::MatrixXd a = ((alpha * alpha.transpose() - k_inv).array() * k.array()).matrix();
  const Eigen::MatrixXd upstream = (psi.array().colwise() * a.rowwise().sum().array()).matrix() - a * psi;
  out.gradient = -2.0 * feature_map_backprop(params, inputs, upstream);

  double dgamma = 0.0;
  if (!freeze_fidelity_rate) {
    for (Eigen::Index j = 0; j < t; ++j)
      for (Eigen::Index i = 0; i < t; ++i) {
        const double dm = static_cast<double>(fid[static_cast<std::size_t>(i)] - fid[static_cast<std::size_t>(j)]);
        dgamma += a(i, j) * dm * dm;
      }
    dgamma *= -0.5 * gamma;
  }
  out.gradient[params.log_gamma_off()] = dgamma;
  return out;
}

inline Eigen::VectorXd grad_log_marginal_likelihood(const KernelParams& params, const TaskDataset& data) {
  return log_marginal_likelihood_and_grad(params, data).gradient;
}

}  // namespace mftmes
