#pragma once

// Active-learning training of the denoiser with the MAP loss
//
//   L(theta) = 1/|D| sum_i  lambda / sigma_i^2 ||phi_i - D(phi_i)||^2 - F(M_psi_i(D(phi_i)))
//
// The rate term is differentiated with zero-order pseudo-gradients at the
// network output, then chained through the network by backprop.

#include <chanopt/errors.hpp>
#include <chanopt/numerics.hpp>
#include <chanopt/objective.hpp>
#include <chanopt/scorenet.hpp>

#include <algorithm>
#include <cmath>
#include <functional>
#include <sstream>
#include <span>
#include <string>
#include <vector>

namespace chanopt {

struct TrainSample {
  RealVector config;
  RealVector setting;
  double sigma = 0.5;
};

enum class ResetRule {
  KeepWithGamma,  // re-randomize when v > gamma (probability 1 - gamma)
  ResetWithGamma, // re-randomize with probability gamma
};

enum class OptimizerKind { Sgd, Adam };

struct TrainConfig {
  double lambda = 1.0;
  double learning_rate = 5e-4;
  std::size_t iterations = 180;
  double sigma_decay = 0.9;  // beta
  double gamma = 0.25;
  std::size_t probes = 4;    // m; 2m channel calls per pseudo-gradient
  double probe_radius = 1e-2;
  std::size_t batch_size = 16;
  double sigma_init = 0.5;
  ResetRule reset_rule = ResetRule::KeepWithGamma;
  OptimizerKind optimizer = OptimizerKind::Sgd;
  double noise_variance = 1.0;  // sigma_w^2 used by F during training

  void validate() const {
    auto bad = [](const std::string& m) { throw std::invalid_argument("TrainConfig: " + m); };
    if (!(lambda > 0.0)) bad("lambda must be > 0");
    if (!(learning_rate >= 0.0)) bad("learning rate must be >= 0");
    if (!(sigma_decay > 0.0 && sigma_decay < 1.0)) bad("beta must lie in (0, 1)");
    if (!(gamma >= 0.0 && gamma <= 1.0)) bad("gamma must lie in [0, 1]");
    if (probes == 0) bad("m must be >= 1");
    if (!(probe_radius > 0.0)) bad("probe radius must be > 0");
    if (batch_size == 0) bad("batch size must be >= 1");
    if (!(sigma_init > 0.0)) bad("sigma_init must be > 0");
    if (!(noise_variance > 0.0)) bad("noise variance must be > 0");
  }
};

/// g_out = (2 lambda / sigma^2)(phi_hat - phi) - grad_F: dLoss/dphi_hat for one sample.
inline RealVector loss_output_gradient(std::span<const double> config, std::span<const double> denoised, double sigma,
                                       double lambda, std::span<const double> rate_gradient) {
  if (config.size() != denoised.size() || config.size() != rate_gradient.size())
    throw DimensionMismatch("loss_output_gradient: length mismatch");
  if (!(sigma > 0.0)) throw std::invalid_argument("loss_output_gradient: sigma must be > 0");
  RealVector g(config.size());
  const double w = 2.0 * lambda / (sigma * sigma);
  for (std::size_t i = 0; i < g.size(); ++i) g[i] = w * (denoised[i] - config[i]) - rate_gradient[i];
  return g;
}

/// Batch-averaged MAP loss for any denoiser. One channel call per sample.
template <Denoiser D, ChannelSource Channel>
double map_loss(const D& denoiser, std::span<const TrainSample> batch, double lambda, Channel& channel,
                const ObjectiveParams& params) {
  if (batch.empty()) throw std::invalid_argument("map_loss: empty batch");
  double total = 0.0;
  for (const auto& s : batch) {
    const RealVector phi_hat = denoiser(std::span<const double>(s.config), s.setting, s.sigma);
    const double rate = achievable_rate(channel.evaluate(phi_hat, s.setting), params.noise_variance);
    total += lambda / (s.sigma * s.sigma) * squared_distance(s.config, phi_hat) - rate;
  }
  return total / static_cast<double>(batch.size());
}

template <ChannelSource Channel>
double map_loss(const DenoiserParams& theta, std::span<const TrainSample> batch, double lambda, Channel& channel,
                const ObjectiveParams& params) {
  return map_loss(NetworkDenoiser(theta), batch, lambda, channel, params);
}

inline void accumulate(DenoiserParams& into, const DenoiserParams& g, double scale) {
  for (std::size_t l = 0; l < into.layers.size(); ++l) {
    auto& a = into.layers[l];
    const auto& b = g.layers[l];
    for (std::size_t i = 0; i < a.weights.size(); ++i) a.weights[i] += scale * b.weights[i];
    for (std::size_t i = 0; i < a.bias.size(); ++i) a.bias[i] += scale * b.bias[i];
  }
}

/// Estimates grad_phi F at a configuration. Receives the rate objective for
/// the sample's setting and the training stream.
template <ChannelSource Channel>
using RateGradientFn = std::function<RealVector(const RateObjective<Channel>&, std::span<const double>, RngState&)>;

template <ChannelSource Channel>
RateGradientFn<Channel> zero_order_rate_gradient(std::size_t m, double radius) {
  return [m, radius](const RateObjective<Channel>& f, std::span<const double> phi, RngState& rng) {
    return zero_order_gradient(f, phi, m, radius, rng);
  };
}

struct BatchGradient {
  double loss = 0.0;
  double mean_rate = 0.0;
  ParamGradients grads;
  std::vector<RealVector> denoised;
};

/// Loss, batch-mean parameter gradient and denoiser outputs for one batch.
/// Channel calls: one F per sample plus whatever rate_gradient spends.
template <ChannelSource Channel>
BatchGradient map_loss_gradient(const DenoiserParams& theta, std::span<const TrainSample> batch, double lambda,
                                Channel& channel, double noise_variance, const RateGradientFn<Channel>& rate_gradient,
                                RngState& rng) {
  if (batch.empty()) throw std::invalid_argument("map_loss_gradient: empty batch");
  BatchGradient out;
  out.grads = DenoiserParams::zeros(theta.dims);
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const auto& s = batch[i];
    auto fwd = denoise(theta, s.config, s.setting, s.sigma);
    RateObjective<Channel> f(channel, s.setting, noise_variance);
    const double rate = f(fwd.config);
    const RealVector g_rate = rate_gradient(f, fwd.config, rng);
    const double loss_i = lambda / (s.sigma * s.sigma) * squared_distance(s.config, fwd.config) - rate;
    if (!std::isfinite(loss_i)) {
      std::ostringstream msg;
      msg << "non-finite loss at sample " << i << " (sigma=" << s.sigma << ", rate=" << rate << ", phi_hat=[";
      for (std::size_t k = 0; k < fwd.config.size(); ++k) msg << (k ? "," : "") << fwd.config[k];
      msg << "])";
      throw NonFiniteLoss(msg.str());
    }
    const RealVector g_out = loss_output_gradient(s.config, fwd.config, s.sigma, lambda, g_rate);
    accumulate(out.grads, backward(theta, fwd.trace, g_out), inv_n);
    out.loss += loss_i * inv_n;
    out.mean_rate += rate * inv_n;
    out.denoised.push_back(std::move(fwd.config));
  }
  return out;
}

/// Plain gradient descent, or Adam (beta1 0.9, beta2 0.999) when selected.
class ParameterUpdater {
 public:
  ParameterUpdater(OptimizerKind kind, double learning_rate) : kind_(kind), lr_(learning_rate) {}

  void apply(DenoiserParams& theta, const ParamGradients& g) {
    if (kind_ == OptimizerKind::Sgd) {
      accumulate(theta, g, -lr_);
      return;
    }
    if (m_.layers.empty()) {
      m_ = DenoiserParams::zeros(theta.dims);
      v_ = DenoiserParams::zeros(theta.dims);
    }
    ++t_;
    const double b1 = 0.9, b2 = 0.999, eps = 1e-8;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    auto step = [&](std::vector<double>& p, const std::vector<double>& gr, std::vector<double>& m, std::vector<double>& v) {
      for (std::size_t i = 0; i < p.size(); ++i) {
        m[i] = b1 * m[i] + (1.0 - b1) * gr[i];
        v[i] = b2 * v[i] + (1.0 - b2) * gr[i] * gr[i];
        p[i] -= lr_ * (m[i] / c1) / (std::sqrt(v[i] / c2) + eps);
      }
    };
    for (std::size_t l = 0; l < theta.layers.size(); ++l) {
      step(theta.layers[l].weights, g.layers[l].weights, m_.layers[l].weights, v_.layers[l].weights);
      step(theta.layers[l].bias, g.layers[l].bias, m_.layers[l].bias, v_.layers[l].bias);
    }
  }

 private:
  OptimizerKind kind_;
  double lr_;
  DenoiserParams m_, v_;
  std::size_t t_ = 0;
};

struct TrainLogRow {
  std::size_t iteration = 0;  // 1-based
  double loss = 0.0;
  double mean_rate = 0.0;
  double sigma_min = 0.0;
  double sigma_max = 0.0;
  bool reset = false;
  std::uint64_t channel_calls = 0;  // cumulative, training only
};

inline constexpr std::string_view kTrainLogHeader = "iter,loss,mean_rate,sigma_min,sigma_max,reset,channel_calls";

/// Training dataset plus the bookkeeping of one active-learning run. Kept as
/// an object so tests can drive single iterations.
template <ChannelSource Channel>
class Trainer {
 public:
  Trainer(DenoiserParams theta, std::vector<RealVector> settings, Channel& channel, TrainConfig cfg, RngState rng)
      : theta_(std::move(theta)),
        channel_(&channel),
        cfg_(cfg),
        rng_(rng),
        updater_(cfg.optimizer, cfg.learning_rate),
        rate_gradient_(zero_order_rate_gradient<Channel>(cfg.probes, cfg.probe_radius)) {
    cfg_.validate();
    if (settings.empty()) throw std::invalid_argument("train: settings list is empty");
    if (theta_.config_dim() != channel.config_dim() || theta_.setting_dim() != channel.setting_dim())
      throw DimensionMismatch("train: network dimensions do not match the channel");
    dataset_.resize(cfg_.batch_size);
    for (std::size_t i = 0; i < dataset_.size(); ++i) {
      dataset_[i].setting = settings[i % settings.size()];
      if (dataset_[i].setting.size() != channel.setting_dim()) throw DimensionMismatch("train: setting length mismatch");
    }
    randomize();
  }

  /// Replaces the zero-order estimator, e.g. with an analytic gradient.
  void set_rate_gradient(RateGradientFn<Channel> fn) { rate_gradient_ = std::move(fn); }

  const DenoiserParams& params() const { return theta_; }
  DenoiserParams& params() { return theta_; }
  const std::vector<TrainSample>& dataset() const { return dataset_; }
  std::vector<TrainSample>& dataset() { return dataset_; }
  std::uint64_t channel_calls() const { return calls_; }
  const std::vector<TrainLogRow>& log() const { return log_; }

  TrainLogRow step() {
    const double v = rng_.uniform();
    const bool reset = cfg_.reset_rule == ResetRule::KeepWithGamma ? (v > cfg_.gamma) : (v < cfg_.gamma);
    if (reset) randomize();

    TrainLogRow row;
    row.iteration = log_.size() + 1;
    row.reset = reset;
    row.sigma_min = row.sigma_max = dataset_.front().sigma;
    for (const auto& s : dataset_) {
      row.sigma_min = std::min(row.sigma_min, s.sigma);
      row.sigma_max = std::max(row.sigma_max, s.sigma);
    }

    const std::uint64_t before = channel_->call_count();
    auto batch = map_loss_gradient(theta_, std::span<const TrainSample>(dataset_), cfg_.lambda, *channel_,
                                   cfg_.noise_variance, rate_gradient_, rng_);
    calls_ += channel_->call_count() - before;
    updater_.apply(theta_, batch.grads);

    for (std::size_t i = 0; i < dataset_.size(); ++i) {
      dataset_[i].sigma *= cfg_.sigma_decay;
      dataset_[i].config = std::move(batch.denoised[i]);
    }
    row.loss = batch.loss;
    row.mean_rate = batch.mean_rate;
    row.channel_calls = calls_;
    log_.push_back(row);
    return row;
  }

 private:
  void randomize() {
    for (auto& s : dataset_) {
      s.config = sample_uniform_box(theta_.config_dim(), rng_);
      s.sigma = cfg_.sigma_init;
    }
  }

  DenoiserParams theta_;
  Channel* channel_;
  TrainConfig cfg_;
  RngState rng_;
  ParameterUpdater updater_;
  RateGradientFn<Channel> rate_gradient_;
  std::vector<TrainSample> dataset_;
  std::vector<TrainLogRow> log_;
  std::uint64_t calls_ = 0;
};

struct TrainResult {
  DenoiserParams params;
  std::vector<TrainLogRow> log;
};

/// Runs cfg.iterations active-learning iterations. `on_row` (optional) sees
/// each log row as it is produced.
template <ChannelSource Channel>
TrainResult train(DenoiserParams theta0, std::vector<RealVector> settings, Channel& channel, const TrainConfig& cfg,
                  RngState rng, const std::function<void(const TrainLogRow&)>& on_row = {}) {
  Trainer<Channel> trainer(std::move(theta0), std::move(settings), channel, cfg, rng);
  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    const auto row = trainer.step();
    if (on_row) on_row(row);
  }
  return {trainer.params(), trainer.log()};
}

/// Mean F(M_psi(D(phi; psi, sigma))) over fixed held-out samples.
template <ChannelSource Channel>
double heldout_mean_rate(const DenoiserParams& theta, std::span<const TrainSample> samples, Channel& channel,
                         double noise_variance) {
  double total = 0.0;
  for (const auto& s : samples) {
    const auto phi_hat = denoise(theta, s.config, s.setting, s.sigma).config;
    total += achievable_rate(channel.evaluate(phi_hat, s.setting), noise_variance);
  }
  return total / static_cast<double>(samples.size());
}

}  // namespace chanopt
