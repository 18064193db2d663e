#pragma once

// Figure of merit (achievable rate), the rate-driven surrogate prior over
// configurations, its Gaussian-smoothed posterior, and the two-point
// zero-order gradient estimator.

#include <chanopt/channel.hpp>
#include <chanopt/numerics.hpp>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <functional>
#include <limits>
#include <numbers>
#include <span>
#include <vector>

namespace chanopt {

struct ObjectiveParams {
  double noise_variance = 1.0;  // sigma_w^2, linear
  double alpha = 1.0;           // surrogate sharpness

  void validate() const {
    if (!(noise_variance > 0.0)) throw std::invalid_argument("noise variance must be > 0");
    if (!(alpha >= 0.0)) throw std::invalid_argument("alpha must be >= 0");
  }
};

/// Mean over subbands of log2 det(I + H H^H / sigma_w^2), in bits/channel use.
inline double achievable_rate(const ChannelTensor& h, double noise_variance) {
  if (!(noise_variance > 0.0)) throw std::invalid_argument("achievable_rate: noise variance must be > 0");
  if (h.subbands.empty()) throw DimensionMismatch("achievable_rate: empty channel tensor");
  double total = 0.0;
  const double snr = 1.0 / noise_variance;
  for (const auto& hb : h.subbands) {
    ComplexMatrix gram = hb * hb.adjoint();
    gram *= snr;
    for (std::size_t i = 0; i < gram.rows(); ++i) gram(i, i) += 1.0;
    // Symmetrize away round-off so the Hermitian check inside logdet holds
    // even for large channel gains.
    for (std::size_t i = 0; i < gram.rows(); ++i)
      for (std::size_t j = i + 1; j < gram.cols(); ++j) {
        const cplx avg = 0.5 * (gram(i, j) + std::conj(gram(j, i)));
        gram(i, j) = avg;
        gram(j, i) = std::conj(avg);
      }
    for (std::size_t i = 0; i < gram.rows(); ++i) gram(i, i) = gram(i, i).real();
    total += hermitian_logdet2(gram);
  }
  return total / static_cast<double>(h.subbands.size());
}

/// F(M_psi(phi)) as a black-box function of the configuration. Each call is
/// one channel evaluation.
template <ChannelSource Channel>
class RateObjective {
 public:
  RateObjective(Channel& channel, std::span<const double> setting, double noise_variance)
      : channel_(&channel), setting_(setting.begin(), setting.end()), noise_variance_(noise_variance) {}

  double operator()(std::span<const double> config) const {
    return achievable_rate(channel_->evaluate(config, setting_), noise_variance_);
  }

  std::size_t dim() const { return channel_->config_dim(); }
  const RealVector& setting() const { return setting_; }
  double noise_variance() const { return noise_variance_; }
  Channel& channel() const { return *channel_; }

 private:
  Channel* channel_;
  RealVector setting_;
  double noise_variance_;
};

/// alpha * F(M_psi(phi)): unnormalized log of the surrogate prior.
template <ChannelSource Channel>
double log_surrogate_prior(std::span<const double> config, std::span<const double> setting, Channel& channel,
                           const ObjectiveParams& params) {
  params.validate();
  const double f = achievable_rate(channel.evaluate(config, setting), params.noise_variance);
  return params.alpha * f;
}

/// alpha * F(M_psi(phi)) - ||noisy - phi||^2 / (2 sigma^2): unnormalized log
/// posterior of the clean configuration given a noisy observation.
template <ChannelSource Channel>
double log_posterior(std::span<const double> config, std::span<const double> noisy, std::span<const double> setting,
                     double sigma, Channel& channel, const ObjectiveParams& params) {
  if (!(sigma > 0.0)) throw std::invalid_argument("log_posterior: sigma must be > 0");
  return log_surrogate_prior(config, setting, channel, params) -
         squared_distance(noisy, config) / (2.0 * sigma * sigma);
}

/// Two-point zero-order gradient estimate with m random unit directions:
///   (N_p / m) sum_j [f(phi + eps u_j) - f(phi - eps u_j)] / (2 eps) u_j
/// Exactly 2m objective calls. Probes outside [0, 1] are clamped by the
/// channel, but the quotient always divides by the requested 2 eps.
template <typename Objective>
RealVector zero_order_gradient(Objective&& objective, std::span<const double> config, std::size_t m, double eps_fd,
                               RngState& rng) {
  const std::size_t n = config.size();
  if (m == 0 || m >= n) throw DimensionMismatch("zero_order_gradient: need 1 <= m < N_p");
  if (!(eps_fd > 0.0)) throw std::invalid_argument("zero_order_gradient: probe radius must be > 0");

  std::vector<RealVector> dirs;
  dirs.reserve(m);
  for (std::size_t j = 0; j < m; ++j) dirs.push_back(sample_unit_sphere(n, rng));

  RealVector grad(n, 0.0);
  RealVector plus(n), minus(n);
  for (std::size_t j = 0; j < m; ++j) {
    const auto& u = dirs[j];
    for (std::size_t i = 0; i < n; ++i) {
      plus[i] = config[i] + eps_fd * u[i];
      minus[i] = config[i] - eps_fd * u[i];
    }
    const double fp = objective(std::span<const double>(plus));
    const double fm = objective(std::span<const double>(minus));
    const double quotient = (fp - fm) / (2.0 * eps_fd);
    for (std::size_t i = 0; i < n; ++i) grad[i] += quotient * u[i];
  }
  const double scale = static_cast<double>(n) / static_cast<double>(m);
  for (auto& g : grad) g *= scale;
  return grad;
}

/// Closed-form gradient of the achievable rate of a cascaded channel with
/// respect to the configuration. Uses d log det M = tr(M^-1 dM).
inline RealVector cascaded_rate_gradient(const CascadedChannel& model, std::span<const double> config,
                                         std::span<const double> setting, double noise_variance) {
  const auto f = model.factors(setting);
  const std::size_t np = model.config_dim();
  if (config.size() != np) throw DimensionMismatch("cascaded_rate_gradient: configuration length mismatch");
  const double snr = 1.0 / noise_variance;
  RealVector grad(np, 0.0);
  for (std::size_t b = 0; b < model.bands(); ++b) {
    const ComplexMatrix h = CascadedChannel::compose(f.h1[b], f.h2[b], config);
    ComplexMatrix m = h * h.adjoint();
    m *= snr;
    for (std::size_t i = 0; i < m.rows(); ++i) m(i, i) += 1.0;
    // P = H^H M^-1, so dF/dphi_n involves H1[n,:] P H2[:,n].
    const ComplexMatrix minv_h2 = solve_linear(m, f.h2[b]);  // M^-1 H2
    const ComplexMatrix p = h.adjoint() * minv_h2;            // ntx x np
    for (std::size_t n = 0; n < np; ++n) {
      cplx s{};
      for (std::size_t t = 0; t < f.h1[b].cols(); ++t) s += f.h1[b](n, t) * p(t, n);
      const cplx dphase = cplx(0.0, 2.0 * std::numbers::pi) * std::polar(1.0, 2.0 * std::numbers::pi * config[n]);
      grad[n] += 2.0 * snr * (dphase * s).real() / std::numbers::ln2;
    }
  }
  for (auto& g : grad) g /= static_cast<double>(model.bands());
  return grad;
}

/// Prior supported on a finite set of points with arbitrary log-weights.
/// Smoothing it with N(0, sigma^2 I) gives closed forms for the noisy
/// density and the posterior mean; used as a brute-force reference for the
/// score/denoiser relation and as an exact denoiser on toy problems.
class DiscretePrior {
 public:
  DiscretePrior(std::vector<RealVector> points, std::vector<double> log_weights)
      : points_(std::move(points)), log_weights_(std::move(log_weights)) {
    if (points_.empty() || points_.size() != log_weights_.size()) throw DimensionMismatch("DiscretePrior: bad sizes");
    const double mx = *std::max_element(log_weights_.begin(), log_weights_.end());
    double z = 0.0;
    for (double lw : log_weights_) z += std::exp(lw - mx);
    log_norm_ = mx + std::log(z);
  }

  std::size_t size() const { return points_.size(); }
  std::size_t dim() const { return points_.front().size(); }
  const std::vector<RealVector>& points() const { return points_; }

  /// Normalized prior probabilities.
  std::vector<double> prior() const {
    std::vector<double> p(size());
    for (std::size_t g = 0; g < size(); ++g) p[g] = std::exp(log_weights_[g] - log_norm_);
    return p;
  }

  /// Normalized posterior over the support given noisy = point + N(0, sigma^2 I).
  std::vector<double> posterior(std::span<const double> noisy, double sigma) const {
    std::vector<double> lw(size());
    for (std::size_t g = 0; g < size(); ++g)
      lw[g] = log_weights_[g] - squared_distance(noisy, points_[g]) / (2.0 * sigma * sigma);
    const double mx = *std::max_element(lw.begin(), lw.end());
    double z = 0.0;
    for (auto& v : lw) z += (v = std::exp(v - mx));
    for (auto& v : lw) v /= z;
    return lw;
  }

  RealVector posterior_mean(std::span<const double> noisy, double sigma) const {
    const auto w = posterior(noisy, sigma);
    RealVector mean(dim(), 0.0);
    for (std::size_t g = 0; g < size(); ++g)
      for (std::size_t i = 0; i < dim(); ++i) mean[i] += w[g] * points_[g][i];
    return mean;
  }

  /// log of the smoothed density P_sigma(noisy).
  double log_smoothed_density(std::span<const double> noisy, double sigma) const {
    const double d = static_cast<double>(dim());
    double mx = -std::numeric_limits<double>::infinity();
    std::vector<double> lw(size());
    for (std::size_t g = 0; g < size(); ++g) {
      lw[g] = log_weights_[g] - log_norm_ - squared_distance(noisy, points_[g]) / (2.0 * sigma * sigma);
      mx = std::max(mx, lw[g]);
    }
    double z = 0.0;
    for (double v : lw) z += std::exp(v - mx);
    return mx + std::log(z) - 0.5 * d * std::log(2.0 * std::numbers::pi * sigma * sigma);
  }

 private:
  std::vector<RealVector> points_;
  std::vector<double> log_weights_;
  double log_norm_ = 0.0;
};

}  // namespace chanopt
