#pragma once

#include <random>

#include <Eigen/Dense>

#include "mftmes/mf_gp.hpp"
#include "mftmes/types.hpp"

namespace mftmes::fixtures {

/// Random observations on the benchmark grid with mixed fidelities.
inline TaskDataset random_dataset(std::size_t n, std::uint64_t seed, double noise = 0.3, int fidelities = 4) {
  static const CandidateGrid grid;
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, grid.size() - 1);
  std::uniform_int_distribution<int> fid(1, fidelities);
  std::normal_distribution<double> nd(0.0, 1.0);
  TaskDataset d;
  d.noise_variance = noise;
  for (std::size_t i = 0; i < n; ++i) d.append({grid[pick(rng)], FidelityLevel{fid(rng)}, nd(rng)});
  return d;
}

/// Joint kernel entry computed from first principles, one pair at a time.
inline double naive_kernel(const KernelParams& p, const ObservationRecord& a, const InputPoint& x, FidelityLevel m) {
  const Eigen::VectorXd fa = feature_map(p, a.x);
  const Eigen::VectorXd fb = feature_map(p, x);
  double d2 = 0.0;
  for (Eigen::Index k = 0; k < fa.size(); ++k) d2 += (fa[k] - fb[k]) * (fa[k] - fb[k]);
  const double dm = a.m.index - m.index;
  return std::exp(-d2) * std::exp(-p.fidelity_gamma() * dm * dm);
}

inline Eigen::MatrixXd naive_noisy_gram(const KernelParams& p, const TaskDataset& d) {
  const auto t = static_cast<Eigen::Index>(d.size());
  Eigen::MatrixXd k(t, t);
  for (Eigen::Index i = 0; i < t; ++i)
    for (Eigen::Index j = 0; j < t; ++j)
      k(i, j) = naive_kernel(p, d.records[static_cast<std::size_t>(i)], d.records[static_cast<std::size_t>(j)].x,
                             d.records[static_cast<std::size_t>(j)].m);
  k.diagonal().array() += d.noise_variance;
  return k;
}

struct NaivePosterior {
  double mean;
  double variance;
};

/// mu = k^T K~^{-1} y, var = 1 - k^T K~^{-1} k with an explicit dense inverse.
inline NaivePosterior naive_posterior(const KernelParams& p, const TaskDataset& d, const InputPoint& x,
                                      FidelityLevel m) {
  const Eigen::MatrixXd inv = naive_noisy_gram(p, d).inverse();
  Eigen::VectorXd k(static_cast<Eigen::Index>(d.size())), y(static_cast<Eigen::Index>(d.size()));
  for (std::size_t i = 0; i < d.size(); ++i) {
    k[static_cast<Eigen::Index>(i)] = naive_kernel(p, d.records[i], x, m);
    y[static_cast<Eigen::Index>(i)] = d.records[i].y;
  }
  return {k.dot(inv * y), 1.0 - k.dot(inv * k)};
}

/// -1/2 (t log 2pi + log det K~ + y^T K~^{-1} y) from an LU decomposition.
inline double naive_lml(const KernelParams& p, const TaskDataset& d) {
  const Eigen::MatrixXd k = naive_noisy_gram(p, d);
  Eigen::VectorXd y(static_cast<Eigen::Index>(d.size()));
  for (std::size_t i = 0; i < d.size(); ++i) y[static_cast<Eigen::Index>(i)] = d.records[i].y;
  const Eigen::PartialPivLU<Eigen::MatrixXd> lu(k);
  const double log_det = lu.matrixLU().diagonal().array().abs().log().sum();
  return -0.5 * (static_cast<double>(d.size()) * std::log(2.0 * std::numbers::pi) + log_det + y.dot(lu.solve(y)));
}

inline double rel_err(double a, double b, double floor = 1e-12) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

/// Linear-Gaussian toy: prior N(0, I_2), y = A theta + N(0, I), analytic posterior.
struct ConjugateToy {
  Eigen::Matrix2d precision;
  Eigen::Vector2d mean;
  Eigen::Matrix2d covariance;

  ConjugateToy() {
    Eigen::Matrix<double, 3, 2> a;
    a << 1.0, 0.0, 1.0, 1.0, 0.0, 1.0;
    const Eigen::Vector3d y(1.0, 2.0, 0.5);
    precision = Eigen::Matrix2d::Identity() + a.transpose() * a;
    covariance = precision.inverse();
    mean = covariance * (a.transpose() * y);
  }

  Eigen::VectorXd score(const Eigen::VectorXd& theta) const { return -precision * (theta - mean); }
};

/// Mean pairwise Euclidean distance.
inline double mean_pairwise_distance(const std::vector<Eigen::VectorXd>& xs) {
  double s = 0.0;
  int n = 0;
  for (std::size_t i = 0; i < xs.size(); ++i)
    for (std::size_t j = i + 1; j < xs.size(); ++j, ++n) s += (xs[i] - xs[j]).norm();
  return n ? s / n : 0.0;
}

}  // namespace mftmes::fixtures
