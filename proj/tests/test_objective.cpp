#include <chanopt/objective.hpp>
#include <chanopt/presets.hpp>

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>

using namespace chanopt;

namespace {

ChannelTensor single(const ComplexMatrix& h) {
  ChannelTensor t;
  t.subbands.push_back(h);
  t.frequencies_ghz.push_back(1.0);
  return t;
}

// Independent 1x1 cascaded rate: h = sum_n h2_n e^{j 2 pi phi_n} h1_n.
double scalar_cascaded_rate(const CascadedChannel::Factors& f, std::span<const double> phi, double nv) {
  double total = 0.0;
  for (std::size_t b = 0; b < f.h1.size(); ++b) {
    cplx h{};
    for (std::size_t n = 0; n < phi.size(); ++n)
      h += f.h2[b](0, n) * std::exp(cplx(0.0, 2.0 * std::numbers::pi * phi[n])) * f.h1[b](n, 0);
    total += std::log2(1.0 + std::norm(h) / nv);
  }
  return total / static_cast<double>(f.h1.size());
}

// Counts calls to a wrapped function of the configuration.
struct Counted {
  std::function<double(std::span<const double>)> f;
  std::size_t* calls;
  double operator()(std::span<const double> x) const {
    ++*calls;
    return f(x);
  }
};

}  // namespace

TEST(Rate, ZeroChannelIsZero) { EXPECT_DOUBLE_EQ(achievable_rate(single(ComplexMatrix(2, 3)), 1.0), 0.0); }

TEST(Rate, UnitScalarIsOneBit) {
  EXPECT_NEAR(achievable_rate(single(ComplexMatrix{{cplx(0.6, 0.8)}}), 1.0), 1.0, 1e-15);
}

TEST(Rate, IdentityTwoByTwoIsTwoBits) {
  EXPECT_NEAR(achievable_rate(single(ComplexMatrix::identity(2)), 1.0), 2.0, 1e-15);
}

TEST(Rate, AveragesOverSubbands) {
  ChannelTensor t;
  t.subbands = {ComplexMatrix{{1.0}}, ComplexMatrix{{std::sqrt(3.0)}}};
  EXPECT_NEAR(achievable_rate(t, 1.0), 1.5, 1e-14);
}

TEST(Rate, MatchesEigenvalueOracle) {
  RngState rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    ComplexMatrix h(2, 3);
    for (auto& v : h.data()) v = cplx(rng.normal(), rng.normal());
    const double nv = 0.1 + rng.uniform();
    const ComplexMatrix g = h * h.adjoint();
    const double a = g(0, 0).real(), d = g(1, 1).real(), b2 = std::norm(g(0, 1));
    const double mid = 0.5 * (a + d), rad = std::sqrt(0.25 * (a - d) * (a - d) + b2);
    const double expected = std::log2(1.0 + (mid + rad) / nv) + std::log2(1.0 + (mid - rad) / nv);
    EXPECT_NEAR(achievable_rate(single(h), nv), expected, 1e-12);
  }
}

TEST(Rate, StrictlyIncreasingInSnr) {
  RngState rng(8);
  ComplexMatrix h(2, 2);
  for (auto& v : h.data()) v = cplx(rng.normal(), rng.normal());
  double prev = 0.0;
  for (double nv : {100.0, 10.0, 1.0, 0.1, 0.01}) {
    const double r = achievable_rate(single(h), nv);
    EXPECT_GT(r, prev);
    prev = r;
  }
}

TEST(Rate, RejectsBadInput) {
  EXPECT_THROW(achievable_rate(single(ComplexMatrix::identity(2)), 0.0), std::invalid_argument);
  EXPECT_THROW(achievable_rate(ChannelTensor{}, 1.0), DimensionMismatch);
}

TEST(RateObjective, OneCallPerEvaluation) {
  CascadedChannel m(1, 1, 3, 1, 5);
  const std::vector<double> psi{0.2, 0.4};
  RateObjective obj(m, psi, 1.0);
  obj(std::vector<double>{0.1, 0.2, 0.3});
  obj(std::vector<double>{0.1, 0.2, 0.3});
  EXPECT_EQ(m.call_count(), 2u);
  EXPECT_EQ(obj.dim(), 3u);
}

TEST(Prior, ZeroAlphaIsFlat) {
  CascadedChannel m(1, 1, 3, 1, 5);
  const std::vector<double> psi{0.2, 0.4};
  RngState rng(1);
  for (int i = 0; i < 5; ++i)
    EXPECT_EQ(log_surrogate_prior(sample_uniform_box(3, rng), psi, m, {1.0, 0.0}), 0.0);
}

TEST(Prior, LinearInAlpha) {
  CascadedChannel m(2, 2, 4, 2, 5);
  const std::vector<double> psi{0.2, 0.4, 0.6, 0.8}, phi{0.1, 0.5, 0.7, 0.2};
  const double one = log_surrogate_prior(phi, psi, m, {0.5, 1.0});
  EXPECT_NEAR(log_surrogate_prior(phi, psi, m, {0.5, 2.0}), 2.0 * one, 1e-13);
}

TEST(Prior, BinaryGridArgmaxMatchesOracle) {
  CascadedChannel m(1, 1, 4, 2, 12);
  const std::vector<double> psi{0.3, 0.6};
  const auto f = m.factors(psi);
  std::size_t best_prior = 0, best_oracle = 0;
  double bp = -1e300, bo = -1e300;
  for (std::size_t mask = 0; mask < 16; ++mask) {
    std::vector<double> phi(4);
    for (std::size_t n = 0; n < 4; ++n) phi[n] = (mask >> n) & 1 ? 0.25 : 0.0;
    const double p = log_surrogate_prior(phi, psi, m, {1.0, 3.0});
    const double o = scalar_cascaded_rate(f, phi, 1.0);
    EXPECT_NEAR(p, 3.0 * o, 1e-12);
    if (p > bp) bp = p, best_prior = mask;
    if (o > bo) bo = o, best_oracle = mask;
  }
  EXPECT_EQ(best_prior, best_oracle);
}

TEST(Posterior, AtObservationEqualsPrior) {
  CascadedChannel m(2, 2, 4, 2, 5);
  const std::vector<double> psi{0.2, 0.4, 0.6, 0.8}, phi{0.1, 0.5, 0.7, 0.2};
  const ObjectiveParams p{0.5, 1.5};
  EXPECT_EQ(log_posterior(phi, phi, psi, 0.3, m, p), log_surrogate_prior(phi, psi, m, p));
}

TEST(Posterior, HugeSigmaApproachesPrior) {
  CascadedChannel m(2, 2, 4, 2, 5);
  const std::vector<double> psi{0.2, 0.4, 0.6, 0.8}, phi{0.1, 0.5, 0.7, 0.2}, noisy{1, 0, 1, 0};
  const ObjectiveParams p{0.5, 1.5};
  EXPECT_NEAR(log_posterior(phi, noisy, psi, 1e9, m, p), log_surrogate_prior(phi, psi, m, p), 1e-9);
}

TEST(Posterior, GridMatchesOracleInTotalVariation) {
  CascadedChannel m(1, 1, 2, 3, 31);
  const std::vector<double> psi{0.45, 0.55}, noisy{0.3, 0.65};
  const auto f = m.factors(psi);
  const ObjectiveParams p{0.25, 2.0};
  const double sigma = 0.2;
  std::vector<double> lib, ora;
  for (int i = 0; i < 9; ++i)
    for (int j = 0; j < 9; ++j) {
      const std::vector<double> phi{i / 8.0, j / 8.0};
      lib.push_back(log_posterior(phi, noisy, psi, sigma, m, p));
      const double d2 = (phi[0] - noisy[0]) * (phi[0] - noisy[0]) + (phi[1] - noisy[1]) * (phi[1] - noisy[1]);
      ora.push_back(p.alpha * scalar_cascaded_rate(f, phi, p.noise_variance) - d2 / (2 * sigma * sigma));
    }
  auto normalize = [](std::vector<double> v) {
    const double mx = *std::max_element(v.begin(), v.end());
    double z = 0.0;
    for (auto& x : v) z += (x = std::exp(x - mx));
    for (auto& x : v) x /= z;
    return v;
  };
  const auto a = normalize(lib), b = normalize(ora);
  double tv = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) tv += 0.5 * std::abs(a[k] - b[k]);
  EXPECT_LE(tv, 1e-9);
  EXPECT_EQ(std::max_element(a.begin(), a.end()) - a.begin(), std::max_element(b.begin(), b.end()) - b.begin());
}

TEST(Posterior, DifferencesIgnoreNormalization) {
  CascadedChannel m(1, 2, 3, 1, 9);
  const std::vector<double> psi{0.5, 0.5}, noisy{0.2, 0.3, 0.4}, a{0.1, 0.2, 0.3}, b{0.5, 0.9, 0.1};
  const ObjectiveParams p{1.0, 1.0};
  const double d = log_posterior(a, noisy, psi, 0.3, m, p) - log_posterior(b, noisy, psi, 0.3, m, p);
  const double expected = log_surrogate_prior(a, psi, m, p) - log_surrogate_prior(b, psi, m, p) -
                          (squared_distance(noisy, a) - squared_distance(noisy, b)) / (2 * 0.09);
  EXPECT_NEAR(d, expected, 1e-12);
  EXPECT_THROW(log_posterior(a, noisy, psi, 0.0, m, p), std::invalid_argument);
}

TEST(ZeroOrder, LinearObjectiveIsUnbiased) {
  const std::vector<double> a{1.0, -2.0, 0.5};
  const auto f = [&](std::span<const double> x) { return dot(a, x); };
  RngState rng(123);
  const std::vector<double> x{0.3, 0.4, 0.5};
  std::vector<double> mean(3, 0.0);
  const int draws = 100000;
  for (int k = 0; k < draws; ++k) {
    const auto g = zero_order_gradient(f, x, 1, 1e-2, rng);
    for (int i = 0; i < 3; ++i) mean[i] += g[i] / draws;
  }
  double err = 0.0, norm = 0.0;
  for (int i = 0; i < 3; ++i) {
    err += (mean[i] - a[i]) * (mean[i] - a[i]);
    norm += a[i] * a[i];
  }
  EXPECT_LE(std::sqrt(err / norm), 0.02);
}

TEST(ZeroOrder, ConstantObjectiveGivesExactZero) {
  RngState rng(3);
  const auto g = zero_order_gradient([](std::span<const double>) { return 4.25; }, std::vector<double>(5, 0.5), 3, 1e-2, rng);
  for (double v : g) EXPECT_EQ(v, 0.0);
}

TEST(ZeroOrder, QuadraticDifferenceIsExactDirectionalDerivative) {
  // Central differences are exact on quadratics, so each probe contributes
  // (N/m) (grad . u) u with grad evaluated at x.
  const auto f = [](std::span<const double> x) { return x[0] * x[0] + 3 * x[0] * x[1] - x[1] * x[1] + x[2]; };
  const std::vector<double> x{0.2, 0.7, 0.1};
  const std::vector<double> grad{2 * 0.2 + 3 * 0.7, 3 * 0.2 - 2 * 0.7, 1.0};
  RngState rng(10), replay(10);
  const auto g = zero_order_gradient(f, x, 2, 0.05, rng);
  std::vector<double> expected(3, 0.0);
  for (int j = 0; j < 2; ++j) {
    const auto u = sample_unit_sphere(3, replay);
    const double s = dot(grad, u) * 1.5;
    for (int i = 0; i < 3; ++i) expected[i] += s * u[i];
  }
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(g[i], expected[i], 1e-10);
}

TEST(ZeroOrder, UsesExactlyTwoMCalls) {
  std::size_t calls = 0;
  Counted f{[](std::span<const double> x) { return x[0]; }, &calls};
  RngState rng(1);
  zero_order_gradient(f, std::vector<double>(16, 0.5), 4, 1e-2, rng);
  EXPECT_EQ(calls, 8u);
}

TEST(ZeroOrder, RejectsBadProbeCounts) {
  RngState rng(1);
  const auto f = [](std::span<const double>) { return 0.0; };
  EXPECT_THROW(zero_order_gradient(f, std::vector<double>(3, 0.5), 3, 1e-2, rng), DimensionMismatch);
  EXPECT_THROW(zero_order_gradient(f, std::vector<double>(3, 0.5), 0, 1e-2, rng), DimensionMismatch);
  EXPECT_THROW(zero_order_gradient(f, std::vector<double>(3, 0.5), 1, 0.0, rng), std::invalid_argument);
}

// Smoothed-density score times sigma^2 equals the posterior mean shift.
TEST(DiscretePrior, ScoreMatchesDenoiser) {
  std::vector<RealVector> pts;
  std::vector<double> lw;
  for (int g = 0; g <= 50; ++g) {
    const double x = g / 50.0;
    pts.push_back({x});
    lw.push_back(3.0 * std::sin(6.0 * x) + 2.0 * x);
  }
  const DiscretePrior prior(pts, lw);
  for (double sigma : {0.1, 0.3})
    for (double y = -0.2; y <= 1.2; y += 0.05) {
      const double h = 1e-5;
      const double score = (prior.log_smoothed_density(std::vector<double>{y + h}, sigma) -
                            prior.log_smoothed_density(std::vector<double>{y - h}, sigma)) /
                           (2 * h);
      EXPECT_NEAR(y + sigma * sigma * score, prior.posterior_mean(std::vector<double>{y}, sigma)[0], 1e-3);
    }
}

TEST(DiscretePrior, PriorAndPosteriorNormalized) {
  const DiscretePrior prior({{0.0}, {1.0}}, {0.0, std::log(3.0)});
  const auto p = prior.prior();
  EXPECT_NEAR(p[0], 0.25, 1e-15);
  const auto post = prior.posterior(std::vector<double>{0.5}, 0.4);
  EXPECT_NEAR(post[0] + post[1], 1.0, 1e-15);
  EXPECT_NEAR(post[1], 0.75, 1e-15);
  EXPECT_THROW(DiscretePrior({}, {}), DimensionMismatch);
}
