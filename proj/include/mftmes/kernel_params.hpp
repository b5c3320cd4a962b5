#pragma once

#include <cstdint>
#include <random>
#include <span>

#include <Eigen/Dense>

#include "mftmes/types.hpp"

namespace mftmes {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Layer sizes of the feature network: input -> tanh(hidden) -> linear(output).
struct FeatureArchitecture {
  int input_dim = 2;
  int hidden = 16;
  int output = 4;

  std::size_t flat_size() const {
    return static_cast<std::size_t>(hidden * input_dim + hidden + output * hidden + output + 1);
  }
  friend bool operator==(const FeatureArchitecture&, const FeatureArchitecture&) = default;
};

/// Shared surrogate parameters: feature network weights and the log of the
/// fidelity-kernel rate. Flat layout is
///   [W1 (hidden x input, row-major) | b1 | W2 (output x hidden, row-major) | b2 | log gamma].
class KernelParams {
 public:
  explicit KernelParams(FeatureArchitecture arch = {})
      : arch_(arch), flat_(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(arch.flat_size()))) {
    if (arch.input_dim < 1 || arch.hidden < 1 || arch.output < 1)
      throw InvalidParameters("feature architecture needs positive layer sizes");
  }

  KernelParams(FeatureArchitecture arch, Eigen::VectorXd flat) : arch_(arch), flat_(std::move(flat)) {
    if (static_cast<std::size_t>(flat_.size()) != arch.flat_size())
      throw InvalidParameters("flattened parameter vector does not match the architecture");
  }

  /// Gaussian initialization, all entries i.i.d. N(0, stddev^2), log gamma = 0.
  static KernelParams random(FeatureArchitecture arch, std::uint64_t seed, double stddev = 0.5) {
    KernelParams p(arch);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> nd(0.0, stddev);
    for (Eigen::Index i = 0; i + 1 < p.flat_.size(); ++i) p.flat_[i] = nd(rng);
    p.flat_[p.flat_.size() - 1] = 0.0;
    return p;
  }

  const FeatureArchitecture& architecture() const { return arch_; }
  const Eigen::VectorXd& flat() const { return flat_; }
  Eigen::VectorXd& flat() { return flat_; }
  Eigen::Index dim() const { return flat_.size(); }

  double log_fidelity_lengthscale() const { return flat_[flat_.size() - 1]; }
  void set_log_fidelity_lengthscale(double v) { flat_[flat_.size() - 1] = v; }
  double fidelity_gamma() const { return std::exp(log_fidelity_lengthscale()); }

  Eigen::Map<const RowMatrix> w1() const { return {flat_.data() + w1_off(), arch_.hidden, arch_.input_dim}; }
  Eigen::Map<const Eigen::VectorXd> b1() const { return {flat_.data() + b1_off(), arch_.hidden}; }
  Eigen::Map<const RowMatrix> w2() const { return {flat_.data() + w2_off(), arch_.output, arch_.hidden}; }
  Eigen::Map<const Eigen::VectorXd> b2() const { return {flat_.data() + b2_off(), arch_.output}; }

  Eigen::Index w1_off() const { return 0; }
  Eigen::Index b1_off() const { return arch_.hidden * arch_.input_dim; }
  Eigen::Index w2_off() const { return b1_off() + arch_.hidden; }
  Eigen::Index b2_off() const { return w2_off() + arch_.output * arch_.hidden; }
  Eigen::Index log_gamma_off() const { return flat_.size() - 1; }

  void validate() const {
    if (!flat_.allFinite()) throw InvalidParameters("kernel parameters contain non-finite entries");
  }

  friend bool operator==(const KernelParams& a, const KernelParams& b) {
    return a.arch_ == b.arch_ && a.flat_.size() == b.flat_.size() && (a.flat_.array() == b.flat_.array()).all();
  }

 private:
  FeatureArchitecture arch_;
  Eigen::VectorXd flat_;
};

/// Normalized coordinates of a batch of points, one row per point.
inline Eigen::MatrixXd normalized_inputs(std::span<const InputPoint> xs) {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(xs.size()), 2);
  for (std::size_t i = 0; i < xs.size(); ++i) {
    out(static_cast<Eigen::Index>(i), 0) = xs[i].normalized[0];
    out(static_cast<Eigen::Index>(i), 1) = xs[i].normalized[1];
  }
  return out;
}

/// psi_theta applied row-wise; returns one feature row per input row.
inline Eigen::MatrixXd feature_map_batch(const KernelParams& params, const Eigen::MatrixXd& inputs) {
  params.validate();
  if (inputs.cols() != params.architecture().input_dim)
    throw InvalidParameters("feature map input dimension mismatch");
  Eigen::MatrixXd hidden = inputs * params.w1().transpose();
  hidden.rowwise() += params.b1().transpose();
  hidden = hidden.array().tanh().matrix();
  Eigen::MatrixXd out = hidden * params.w2().transpose();
  out.rowwise() += params.b2().transpose();
  return out;
}

inline Eigen::VectorXd feature_map(const KernelParams& params, const InputPoint& x) {
  Eigen::MatrixXd in(1, 2);
  in << x.normalized[0], x.normalized[1];
  return feature_map_batch(params, in).row(0).transpose();
}

/// Sum over rows i of J_i^T g_i, where J_i is the Jacobian of psi at input
/// row i with respect to the flat parameters (log gamma entry stays zero).
inline Eigen::VectorXd feature_map_backprop(const KernelParams& params, const Eigen::MatrixXd& inputs,
                                            const Eigen::MatrixXd& upstream) {
  Eigen::MatrixXd hidden = inputs * params.w1().transpose();
  hidden.rowwise() += params.b1().transpose();
  hidden = hidden.array().tanh().matrix();

  Eigen::VectorXd grad = Eigen::VectorXd::Zero(params.dim());
  const auto& arch = params.architecture();
  Eigen::Map<RowMatrix> gw1(grad.data() + params.w1_off(), arch.hidden, arch.input_dim);
  Eigen::Map<Eigen::VectorXd> gb1(grad.data() + params.b1_off(), arch.hidden);
  Eigen::Map<RowMatrix> gw2(grad.data() + params.w2_off(), arch.output, arch.hidden);
  Eigen::Map<Eigen::VectorXd> gb2(grad.data() + params.b2_off(), arch.output);

  gw2 = upstream.transpose() * hidden;
  gb2 = upstream.colwise().sum().transpose();
  Eigen::MatrixXd delta = (upstream * params.w2()).array() * (1.0 - hidden.array().square());
  gw1 = delta.transpose() * inputs;
  gb1 = delta.colwise().sum().transpose();
  return grad;
}

/// Dense Jacobian d psi(x) / d theta (output x flat_dim).
inline Eigen::MatrixXd feature_map_jacobian(const KernelParams& params, const InputPoint& x) {
  Eigen::MatrixXd in(1, 2);
  in << x.normalized[0], x.normalized[1];
  const int out_dim = params.architecture().output;
  Eigen::MatrixXd jac(out_dim, params.dim());
  for (int k = 0; k < out_dim; ++k) {
    Eigen::MatrixXd e = Eigen::MatrixXd::Zero(1, out_dim);
    e(0, k) = 1.0;
    jac.row(k) = feature_map_backprop(params, in, e).transpose();
  }
  return jac;
}

}  // namespace mftmes
