#include <gtest/gtest.h>

#include "mftmes/mf_gp.hpp"
#include "support.hpp"

using namespace mftmes;
using fixtures::rel_err;

TEST(Posterior, EmptyDatasetIsPrior) {
  const auto p = KernelParams::random({}, 1);
  TaskDataset d;
  const PosteriorGP post(p, d);
  const CandidateGrid grid;
  for (int m = 1; m <= 4; ++m) {
    const auto mv = post.mean_var(grid[100], FidelityLevel{m});
    EXPECT_EQ(mv.mean, 0.0);
    EXPECT_EQ(mv.variance, 1.0);
  }
}

TEST(Posterior, OnePointClosedForm) {
  const auto p = KernelParams::random({}, 2);
  const CandidateGrid grid;
  TaskDataset d;
  d.noise_variance = 0.83;
  d.append({grid[10], FidelityLevel{2}, 1.83});
  const auto mv = fit_posterior(p, d).mean_var(grid[10], FidelityLevel{2});
  EXPECT_NEAR(mv.mean, 1.0, 1e-12);
  EXPECT_NEAR(mv.variance, 1.0 - 1.0 / 1.83, 1e-12);
  EXPECT_NEAR(mv.variance, 0.45355, 1e-5);
}

TEST(Posterior, MatchesDenseInverseOracle) {
  const CandidateGrid grid;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto p = KernelParams::random({}, seed);
    p.set_log_fidelity_lengthscale(-0.5 + 0.05 * static_cast<double>(seed));
    const auto d = fixtures::random_dataset(20, 1000 + seed);
    const PosteriorGP post(p, d);
    for (std::size_t q = 0; q < 8; ++q) {
      const InputPoint& x = grid[(seed * 37 + q * 101) % grid.size()];
      const FidelityLevel m{static_cast<int>(q % 4) + 1};
      const auto got = post.mean_var(x, m);
      const auto want = fixtures::naive_posterior(p, d, x, m);
      EXPECT_LT(rel_err(got.mean, want.mean, 1e-6), 1e-8);
      EXPECT_LT(rel_err(got.variance, want.variance, 1e-6), 1e-8);
    }
  }
}

TEST(Posterior, InterpolatesTrainingPointAsNoiseVanishes) {
  const auto p = KernelParams::random({}, 3);
  auto d = fixtures::random_dataset(6, 77, 1e-9);
  // Distinct (x, m) pairs keep the noiseless Gram invertible.
  d.records[1].x = CandidateGrid{}[500];
  const PosteriorGP post(p, d);
  for (const auto& r : d.records) EXPECT_NEAR(post.mean_var(r.x, r.m).mean, r.y, 1e-4);
}

TEST(Posterior, RevertsToPriorFarFromData) {
  KernelParams p;
  // Only feature 0 varies: 40 tanh(normalized alpha).
  const CandidateGrid grid;
  for (int h = 0; h < 16; ++h) p.flat()[p.w1_off() + 2 * h + 1] = 0.0;
  p.flat()[p.w1_off() + 1] = 1.0;
  p.flat()[p.w2_off()] = 40.0;
  TaskDataset d;
  d.noise_variance = 0.1;
  d.append({grid.make_point(0.0, 0.0), FidelityLevel{1}, 3.0});
  const InputPoint far = grid.make_point(0.0, 1.0);
  ASSERT_LT(input_kernel(p, d.records[0].x, far), 1e-10);
  const auto mv = fit_posterior(p, d).mean_var(far, FidelityLevel{1});
  EXPECT_NEAR(mv.mean, 0.0, 1e-9);
  EXPECT_NEAR(mv.variance, 1.0, 1e-9);
}

TEST(Posterior, VarianceWithinBounds) {
  const CandidateGrid grid;
  const Eigen::MatrixXd in = normalized_inputs(grid.points());
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const auto p = KernelParams::random({}, seed);
    const PosteriorGP post(p, fixtures::random_dataset(30, seed, 1e-6));
    for (int m = 1; m <= 4; ++m) {
      auto [mu, var] = post.predict(feature_map_batch(p, in), FidelityLevel{m});
      EXPECT_GE(var.minCoeff(), kVarianceFloor);
      EXPECT_LE(var.maxCoeff(), 1.0);
      EXPECT_TRUE(mu.allFinite());
    }
  }
}

TEST(Posterior, DuplicatePointsStayFactorizable) {
  const auto p = KernelParams::random({}, 8);
  TaskDataset d;
  d.noise_variance = 1e-12;
  const CandidateGrid grid;
  for (int i = 0; i < 5; ++i) d.append({grid[42], FidelityLevel{3}, 0.5});
  const PosteriorGP post(p, d);
  EXPECT_LE(post.jitter(), 1e-6);
  const auto mv = post.mean_var(grid[42], FidelityLevel{3});
  EXPECT_NEAR(mv.mean, 0.5, 1e-6);
  EXPECT_TRUE(std::isfinite(mv.variance));
}

TEST(Posterior, NonPositiveNoiseRejected) {
  auto d = fixtures::random_dataset(3, 1);
  d.noise_variance = 0.0;
  EXPECT_THROW(PosteriorGP(KernelParams::random({}, 1), d), InvalidParameters);
}

TEST(LogMarginalLikelihood, ScalarClosedForm) {
  const auto p = KernelParams::random({}, 4);
  TaskDataset d;
  d.noise_variance = 0.83;
  d.append({CandidateGrid{}[0], FidelityLevel{1}, 0.0});
  const double expected = -0.5 * (std::log(2.0 * std::numbers::pi) + std::log(1.83));
  EXPECT_NEAR(log_marginal_likelihood(p, d), expected, 1e-12);
  EXPECT_NEAR(expected, -1.2210965, 1e-7);
}

TEST(LogMarginalLikelihood, MatchesDenseOracle) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const auto p = KernelParams::random({}, 50 + seed);
    const auto d = fixtures::random_dataset(10, 60 + seed);
    EXPECT_LT(rel_err(log_marginal_likelihood(p, d), fixtures::naive_lml(p, d)), 1e-8);
  }
}

TEST(LogMarginalLikelihood, FiniteOnDuplicates) {
  const auto p = KernelParams::random({}, 9);
  auto d = fixtures::random_dataset(8, 3, 0.83);
  d.records.insert(d.records.end(), d.records.begin(), d.records.end());
  EXPECT_TRUE(std::isfinite(log_marginal_likelihood(p, d)));
}

TEST(LogMarginalLikelihood, EmptyDataIsAnError) {
  EXPECT_THROW(log_marginal_likelihood(KernelParams{}, TaskDataset{}), InvalidParameters);
  EXPECT_THROW(grad_log_marginal_likelihood(KernelParams{}, TaskDataset{}), InvalidParameters);
}

TEST(LogMarginalLikelihoodGradient, MatchesCentralDifferences) {
  for (std::uint64_t seed = 0; seed < 6; ++seed) {
    auto p = KernelParams::random({}, 200 + seed);
    p.set_log_fidelity_lengthscale(0.3 * static_cast<double>(seed) - 0.6);
    const auto d = fixtures::random_dataset(8, 300 + seed);
    const auto res = log_marginal_likelihood_and_grad(p, d);
    EXPECT_NEAR(res.value, log_marginal_likelihood(p, d), 1e-10);
    const double h = 1e-5;
    for (Eigen::Index j = 0; j < p.dim(); ++j) {
      KernelParams plus = p, minus = p;
      plus.flat()[j] += h;
      minus.flat()[j] -= h;
      const double fd = (log_marginal_likelihood(plus, d) - log_marginal_likelihood(minus, d)) / (2.0 * h);
      EXPECT_LT(std::abs(fd - res.gradient[j]), 1e-4 * std::max(1.0, std::abs(fd))) << "seed " << seed << " param " << j;
    }
  }
}

TEST(LogMarginalLikelihoodGradient, FidelityRateGradientVanishesForSingleLevel) {
  const auto p = KernelParams::random({}, 11);
  const auto d = fixtures::random_dataset(8, 12, 0.3, 1);
  EXPECT_EQ(grad_log_marginal_likelihood(p, d)[p.log_gamma_off()], 0.0);
}

TEST(LogMarginalLikelihoodGradient, FrozenRateHasZeroEntry) {
  const auto p = KernelParams::random({}, 13);
  const auto d = fixtures::random_dataset(8, 14);
  EXPECT_NE(grad_log_marginal_likelihood(p, d)[p.log_gamma_off()], 0.0);
  EXPECT_EQ(log_marginal_likelihood_and_grad(p, d, true).gradient[p.log_gamma_off()], 0.0);
}

TEST(Factorize, JitterEscalatesThenGivesUp) {
  EXPECT_EQ(detail::factorize_gram(Eigen::MatrixXd::Identity(3, 3), 0.1).jitter, 0.0);
  const auto singular = detail::factorize_gram(Eigen::MatrixXd::Ones(2, 2), 0.0);
  EXPECT_EQ(singular.jitter, 1e-10);
  Eigen::MatrixXd indefinite(2, 2);
  indefinite << 1.0, 2.0, 2.0, 1.0;
  EXPECT_THROW(detail::factorize_gram(indefinite, 0.0), IllConditionedGram);
}
