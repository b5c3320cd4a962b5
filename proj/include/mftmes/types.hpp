#pragma once

#include <algorithm>
#include <array>
#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace mftmes {

struct InvalidParameters : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct IllConditionedGram : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct SvgdDiverged : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// OLPC parameter pair (P0, alpha) together with its rescaling to [0,1]^2.
struct InputPoint {
  double p0_dbm = 0.0;
  double alpha = 0.0;
  std::array<double, 2> normalized{0.0, 0.0};

  friend bool operator==(const InputPoint& a, const InputPoint& b) {
    return a.p0_dbm == b.p0_dbm && a.alpha == b.alpha;
  }
};

/// 1-based fidelity index; level 1 is the cheapest.
struct FidelityLevel {
  int index = 1;

  friend bool operator==(FidelityLevel a, FidelityLevel b) { return a.index == b.index; }
  friend auto operator<=>(FidelityLevel a, FidelityLevel b) { return a.index <=> b.index; }
};

/// Allowed OLPC values. The defaults are the benchmark table: P0 in
/// {-202, -200, ..., 24} dBm and alpha in {0, 0.4, ..., 1.0}.
struct GridSpec {
  double p0_min_dbm = -202.0;
  double p0_max_dbm = 24.0;
  double p0_step_db = 2.0;
  std::vector<double> alphas{0.0, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};

  friend bool operator==(const GridSpec&, const GridSpec&) = default;
};

class CandidateGrid {
 public:
  explicit CandidateGrid(const GridSpec& spec = {}) : spec_(spec) {
    if (spec.p0_step_db <= 0.0 || spec.p0_max_dbm < spec.p0_min_dbm || spec.alphas.empty())
      throw InvalidParameters("grid: empty or malformed P0/alpha ranges");
    alpha_lo_ = spec.alphas.front();
    alpha_hi_ = spec.alphas.front();
    for (double a : spec.alphas) {
      alpha_lo_ = std::min(alpha_lo_, a);
      alpha_hi_ = std::max(alpha_hi_, a);
    }
    const auto n_p0 =
        static_cast<std::size_t>((spec.p0_max_dbm - spec.p0_min_dbm) / spec.p0_step_db + 0.5) + 1;
    points_.reserve(n_p0 * spec.alphas.size());
    for (std::size_t i = 0; i < n_p0; ++i) {
      const double p0 = spec.p0_min_dbm + static_cast<double>(i) * spec.p0_step_db;
      for (double a : spec.alphas) points_.push_back(make_point(p0, a));
    }
    for (std::size_t i = 1; i < spec.alphas.size(); ++i)
      for (std::size_t j = 0; j < i; ++j)
        if (spec.alphas[i] == spec.alphas[j]) throw InvalidParameters("grid: duplicate alpha value");
  }

  /// Builds a point and its normalized coordinates from this grid's bounds.
  InputPoint make_point(double p0_dbm, double alpha) const {
    InputPoint x{p0_dbm, alpha, {0.0, 0.0}};
    const double p0_span = spec_.p0_max_dbm - spec_.p0_min_dbm;
    const double a_span = alpha_hi_ - alpha_lo_;
    x.normalized[0] = p0_span > 0.0 ? (p0_dbm - spec_.p0_min_dbm) / p0_span : 0.0;
    x.normalized[1] = a_span > 0.0 ? (alpha - alpha_lo_) / a_span : 0.0;
    return x;
  }

  const std::vector<InputPoint>& points() const { return points_; }
  std::size_t size() const { return points_.size(); }
  const InputPoint& operator[](std::size_t i) const { return points_[i]; }
  const GridSpec& spec() const { return spec_; }

  /// Index of x in the grid, or size() when absent.
  std::size_t index_of(const InputPoint& x) const {
    for (std::size_t i = 0; i < points_.size(); ++i)
      if (points_[i] == x) return i;
    return points_.size();
  }

 private:
  GridSpec spec_;
  double alpha_lo_ = 0.0;
  double alpha_hi_ = 1.0;
  std::vector<InputPoint> points_;
};

}  // namespace mftmes
