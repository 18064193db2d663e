#pragma once

// Comparison optimizers: zero-order gradient ascent at inference time,
// uniform random search, and finite-difference gradient ascent on a
// simulator the optimizer is allowed to query.

#include <chanopt/numerics.hpp>
#include <chanopt/objective.hpp>

#include <functional>
#include <limits>
#include <span>
#include <stdexcept>
#include <vector>

namespace chanopt {

struct OptimizeResult {
  RealVector config;
  double rate = 0.0;           // final rate under the scoring channel (NaN if not scored)
  std::vector<double> trace;   // rate per iteration 0..steps, when a scoring channel was given
  std::uint64_t calls = 0;     // channel calls spent by the optimizer itself
};

using GradientFn = std::function<RealVector(std::span<const double>)>;

/// phi <- clamp(phi + lr * grad(phi)), `steps` times. `score` (optional)
/// is evaluated at every iterate including the start.
inline RealVector projected_gradient_ascent(std::span<const double> initial, std::size_t steps, double lr,
                                            const GradientFn& grad,
                                            const std::function<double(std::span<const double>)>& score,
                                            std::vector<double>* trace) {
  RealVector phi(initial.begin(), initial.end());
  if (trace && score) trace->push_back(score(phi));
  for (std::size_t s = 0; s < steps; ++s) {
    const RealVector g = grad(phi);
    for (std::size_t i = 0; i < phi.size(); ++i) phi[i] += lr * g[i];
    clamp_unit_box(phi);
    if (trace && score) trace->push_back(score(phi));
  }
  return phi;
}

/// Zero-order gradient ascent on the measured rate: 2m channel calls per step.
/// `scoring` (optional, separate channel) records the per-step rate trace.
template <ChannelSource Channel, ChannelSource Scoring = Channel>
OptimizeResult zogd_optimize(Channel& channel, std::span<const double> setting, std::span<const double> initial,
                             std::size_t steps, std::size_t m, double probe_radius, double lr, RngState& rng,
                             double noise_variance, Scoring* scoring = nullptr) {
  if (steps < 1) throw std::invalid_argument("zogd: steps must be >= 1");
  RateObjective<Channel> f(channel, setting, noise_variance);
  const auto before = channel.call_count();
  OptimizeResult out;
  GradientFn grad = [&](std::span<const double> phi) { return zero_order_gradient(f, phi, m, probe_radius, rng); };
  std::function<double(std::span<const double>)> score;
  if (scoring) score = RateObjective<Scoring>(*scoring, setting, noise_variance);
  out.config = projected_gradient_ascent(initial, steps, lr, grad, score, &out.trace);
  out.calls = channel.call_count() - before;
  out.rate = out.trace.empty() ? std::numeric_limits<double>::quiet_NaN() : out.trace.back();
  return out;
}

/// Draws configurations from `sampler` (uniform on the box by default) and
/// keeps the best. Exactly n channel calls. The trace is best-so-far.
template <ChannelSource Channel>
OptimizeResult random_search(Channel& channel, std::span<const double> setting, std::size_t n, RngState& rng,
                             double noise_variance,
                             const std::function<RealVector(RngState&)>& sampler = {}) {
  if (n < 1) throw std::invalid_argument("random_search: n must be >= 1");
  RateObjective<Channel> f(channel, setting, noise_variance);
  const auto before = channel.call_count();
  OptimizeResult out;
  out.rate = -std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < n; ++i) {
    RealVector phi = sampler ? sampler(rng) : sample_uniform_box(channel.config_dim(), rng);
    const double r = f(phi);
    if (r > out.rate) {
      out.rate = r;
      out.config = std::move(phi);
    }
    out.trace.push_back(out.rate);
  }
  out.calls = channel.call_count() - before;
  return out;
}

struct SimulatorAscentOptions {
  std::size_t steps = 50;
  double lr = 0.05;
  double fd_step = 1e-4;     // central-difference step per coordinate
  std::size_t backtracks = 8;  // halvings tried when a step lowers the model rate; 0 disables
};

/// Gradient ascent using full-coordinate central differences of the rate
/// under `model` (2 N_p model calls per step, plus line-search probes). The
/// trace and final rate are measured on `truth`.
template <ChannelSource Model, ChannelSource Truth>
OptimizeResult simulator_gradient_ascent(Truth& truth, Model& model, std::span<const double> setting,
                                         std::span<const double> initial, const SimulatorAscentOptions& opt,
                                         double noise_variance) {
  RateObjective<Model> f(model, setting, noise_variance);
  RateObjective<Truth> score(truth, setting, noise_variance);
  const auto before = model.call_count();
  OptimizeResult out;
  RealVector phi(initial.begin(), initial.end());
  const std::size_t n = phi.size();
  out.trace.push_back(score(phi));
  double current = opt.backtracks > 0 ? f(phi) : 0.0;
  RealVector probe(n), grad(n), candidate(n);
  for (std::size_t s = 0; s < opt.steps; ++s) {
    for (std::size_t i = 0; i < n; ++i) {
      probe = phi;
      probe[i] = phi[i] + opt.fd_step;
      const double fp = f(probe);
      probe[i] = phi[i] - opt.fd_step;
      const double fm = f(probe);
      grad[i] = (fp - fm) / (2.0 * opt.fd_step);
    }
    double lr = opt.lr;
    for (std::size_t attempt = 0;; ++attempt) {
      for (std::size_t i = 0; i < n; ++i) candidate[i] = clamp_unit(phi[i] + lr * grad[i]);
      if (opt.backtracks == 0) break;
      const double value = f(candidate);
      if (value >= current) {
        current = value;
        break;
      }
      if (attempt + 1 >= opt.backtracks) {
        candidate = phi;  // no ascent found along the gradient; stay put
        break;
      }
      lr *= 0.5;
    }
    phi = candidate;
    out.trace.push_back(score(phi));
  }
  out.calls = model.call_count() - before;
  out.config = std::move(phi);
  out.rate = out.trace.back();
  return out;
}

/// Simulator ascent from `initial` and from restarts - 1 uniform draws.
/// Keeps the run whose final configuration rates best under `model`; calls
/// and the returned trace cover all runs and the selected run respectively.
template <ChannelSource Model, ChannelSource Truth>
OptimizeResult simulator_multistart_ascent(Truth& truth, Model& model, std::span<const double> setting,
                                           std::span<const double> initial, const SimulatorAscentOptions& opt,
                                           std::size_t restarts, double noise_variance, RngState& rng) {
  if (restarts < 1) throw std::invalid_argument("simulator ascent: restarts must be >= 1");
  RateObjective<Model> f(model, setting, noise_variance);
  const auto before = model.call_count();
  OptimizeResult best;
  double best_model = -std::numeric_limits<double>::infinity();
  for (std::size_t r = 0; r < restarts; ++r) {
    const RealVector start =
        r == 0 ? RealVector(initial.begin(), initial.end()) : sample_uniform_box(initial.size(), rng);
    auto run = simulator_gradient_ascent(truth, model, setting, start, opt, noise_variance);
    const double value = f(run.config);
    if (value > best_model) {
      best_model = value;
      best = std::move(run);
    }
  }
  best.calls = model.call_count() - before;
  return best;
}

}  // namespace chanopt
