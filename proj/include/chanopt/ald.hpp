#pragma once

// Annealed Langevin dynamics over configurations with a learned denoiser
// standing in for the score:  score_sigma(phi) ~ (D(phi; psi, sigma) - phi) / sigma^2.
// Inference never touches the channel.

#include <chanopt/errors.hpp>
#include <chanopt/numerics.hpp>
#include <chanopt/objective.hpp>
#include <chanopt/scorenet.hpp>

#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace chanopt {

struct NoiseSchedule {
  double sigma_1 = 0.5;
  double decay = 0.9;
  std::size_t steps = 10;       // T
  std::size_t inner = 5;        // K
  double step_size = 1e-2;      // epsilon

  /// sigma_t = sigma_1 * decay^(t-1), t = 1..T.
  double sigma(std::size_t t) const { return sigma_1 * std::pow(decay, static_cast<double>(t - 1)); }
  std::size_t total_updates() const { return steps * inner; }
};

inline NoiseSchedule make_schedule(double sigma_1 = 0.5, double decay = 0.9, std::size_t steps = 10,
                                   std::size_t inner = 5, double step_size = 1e-2) {
  if (!(sigma_1 > 0.0)) throw InvalidSchedule("sigma_1 must be > 0");
  if (!(decay > 0.0 && decay < 1.0)) throw InvalidSchedule("decay must lie in (0, 1)");
  if (steps < 1 || inner < 1) throw InvalidSchedule("T and K must be >= 1");
  if (!(step_size > 0.0)) throw InvalidSchedule("step size must be > 0");
  return {sigma_1, decay, steps, inner, step_size};
}

struct AldOptions {
  bool inject_noise = true;  // false zeroes z (test hook)
  // Classical variant: per-level step epsilon * sigma_t^2 / sigma_T^2.
  bool scale_step_by_sigma = false;
};

/// Runs T x K Langevin updates, calling `visit(update_index, phi)` after
/// each (update_index counts from 1). Returns the final iterate.
template <Denoiser D, typename Visitor>
RealVector ald_run(const D& denoiser, std::span<const double> setting, const NoiseSchedule& schedule,
                   std::span<const double> initial, RngState& rng, const AldOptions& opts, Visitor&& visit) {
  RealVector phi(initial.begin(), initial.end());
  for (double v : phi)
    if (!(v >= 0.0 && v <= 1.0)) throw DimensionMismatch("ald: initial configuration must lie in [0, 1]");
  const double sigma_last = schedule.sigma(schedule.steps);
  std::size_t index = 0;
  for (std::size_t t = 1; t <= schedule.steps; ++t) {
    const double sigma = schedule.sigma(t);
    const double eps = opts.scale_step_by_sigma ? schedule.step_size * sigma * sigma / (sigma_last * sigma_last)
                                                : schedule.step_size;
    const double drift = eps / (2.0 * sigma * sigma);
    const double kick = std::sqrt(eps);
    for (std::size_t k = 1; k <= schedule.inner; ++k) {
      const RealVector z = opts.inject_noise ? sample_gaussian(phi.size(), rng) : RealVector(phi.size(), 0.0);
      const RealVector target = denoiser(std::span<const double>(phi), setting, sigma);
      if (target.size() != phi.size()) throw DimensionMismatch("ald: denoiser output has the wrong length");
      for (std::size_t i = 0; i < phi.size(); ++i) phi[i] += drift * (target[i] - phi[i]) + kick * z[i];
      clamp_unit_box(phi);
      visit(++index, std::as_const(phi));
    }
  }
  return phi;
}

template <Denoiser D>
RealVector ald_optimize(const D& denoiser, std::span<const double> setting, const NoiseSchedule& schedule,
                        std::span<const double> initial, RngState& rng, const AldOptions& opts = {}) {
  return ald_run(denoiser, setting, schedule, initial, rng, opts, [](std::size_t, const RealVector&) {});
}

inline RealVector ald_optimize(const DenoiserParams& theta, std::span<const double> setting,
                               const NoiseSchedule& schedule, std::span<const double> initial, RngState& rng,
                               const AldOptions& opts = {}) {
  return ald_optimize(NetworkDenoiser(theta), setting, schedule, initial, rng, opts);
}

struct TracePoint {
  std::size_t iteration = 0;
  RealVector config;
  double rate = 0.0;
};

/// Same trajectory as ald_optimize, plus the rate of every iterate
/// (including the initial one) under a diagnostics channel. The caller owns
/// that channel, so its calls never mix with optimization accounting.
template <Denoiser D, ChannelSource Channel>
std::vector<TracePoint> ald_trace(const D& denoiser, std::span<const double> setting, const NoiseSchedule& schedule,
                                  std::span<const double> initial, RngState& rng, Channel& diagnostics,
                                  double noise_variance, const AldOptions& opts = {}) {
  std::vector<RealVector> iterates{RealVector(initial.begin(), initial.end())};
  ald_run(denoiser, setting, schedule, initial, rng, opts,
          [&](std::size_t, const RealVector& phi) { iterates.push_back(phi); });
  RateObjective<Channel> rate(diagnostics, setting, noise_variance);
  std::vector<TracePoint> trace;
  trace.reserve(iterates.size());
  for (std::size_t i = 0; i < iterates.size(); ++i) {
    const double r = rate(iterates[i]);
    trace.push_back({i, std::move(iterates[i]), r});
  }
  return trace;
}

}  // namespace chanopt
