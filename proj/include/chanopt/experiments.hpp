#pragma once

// Experiment harness behind the command-line tool: configuration, training,
// method comparison runs, traces, call accounting and rate heatmaps. Every
// output file starts with a `#` line carrying the config hash and seed list.

#include <chanopt/ald.hpp>
#include <chanopt/baselines.hpp>
#include <chanopt/channel.hpp>
#include <chanopt/errors.hpp>
#include <chanopt/keyvalue.hpp>
#include <chanopt/numerics.hpp>
#include <chanopt/objective.hpp>
#include <chanopt/presets.hpp>
#include <chanopt/scorenet.hpp>
#include <chanopt/training.hpp>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <exception>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

namespace chanopt {

inline const std::vector<std::string> kMethodNames{"ald", "zogd", "random", "sim_perfect", "sim_imperfect"};

enum class InitMode { Uniform, Half };

struct ExperimentConfig {
  std::string scene = "builtin:desk";
  std::vector<std::string> methods{"ald", "zogd", "random", "sim_perfect"};
  std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16, 17, 18, 19, 20};
  std::vector<double> snr{0.25, 1.0, 4.0, 16.0};
  double eval_snr = 1.0;
  std::size_t budget = 50;
  std::string out = "out";
  std::string checkpoint;
  InitMode init = InitMode::Uniform;
  std::size_t threads = 1;

  TrainConfig train;
  std::size_t train_settings = 16;
  std::uint64_t train_seed = 1;
  double train_snr = 1.0;
  std::vector<std::size_t> hidden = kDefaultHiddenWidths;

  NoiseSchedule schedule;
  bool ald_scaled_step = false;

  std::size_t zogd_probes = 4;
  double zogd_radius = 1e-2;
  double zogd_lr = 0.05;
  std::size_t random_samples = 0;  // 0: same as budget

  SimulatorAscentOptions sim;
  std::size_t sim_restarts = 1;
  double sim_overlay = 1e-2;

  std::size_t latency_batch = 8;
  std::size_t latency_zogd_max_steps = 200;

  std::size_t heatmap_resolution = 40;
  std::vector<double> heatmap_phi;

  std::size_t random_budget() const { return random_samples ? random_samples : budget; }
  AldOptions ald_options() const {
    AldOptions o;
    o.scale_step_by_sigma = ald_scaled_step;
    return o;
  }

  void validate() const {
    if (methods.empty()) throw ConfigError("methods: at least one method is required");
    for (const auto& m : methods)
      if (std::find(kMethodNames.begin(), kMethodNames.end(), m) == kMethodNames.end())
        throw ConfigError("methods: unknown method `" + m + "`");
    if (seeds.empty()) throw ConfigError("seeds: at least one seed is required");
    if (snr.empty()) throw ConfigError("snr: at least one value is required");
    for (double s : snr)
      if (!(s > 0.0)) throw ConfigError("snr: values must be > 0");
    if (!(eval_snr > 0.0) || !(train_snr > 0.0)) throw ConfigError("snr values must be > 0");
    if (budget < 1) throw ConfigError("budget must be >= 1");
    if (train_settings < 1) throw ConfigError("train_settings must be >= 1");
    if (hidden.empty()) throw ConfigError("hidden: at least one hidden layer is required");
    if (zogd_probes < 1) throw ConfigError("zogd_probes must be >= 1");
    if (!(sim_overlay >= 0.0)) throw ConfigError("sim_overlay must be >= 0");
    if (sim_restarts < 1) throw ConfigError("sim_restarts must be >= 1");
    if (latency_batch < 1) throw ConfigError("latency_batch must be >= 1");
    if (heatmap_resolution < 2) throw ConfigError("heatmap_resolution must be >= 2");
    try {
      train.validate();
    } catch (const std::invalid_argument& e) {
      throw ConfigError(e.what());
    }
    make_schedule(schedule.sigma_1, schedule.decay, schedule.steps, schedule.inner, schedule.step_size);
  }
};

namespace detail {

inline std::vector<std::string> list_of(const KeyValueFile& kv, std::string_view key) {
  std::vector<std::string> out;
  if (const auto* e = kv.find(key))
    for (auto& s : split_list(e->value)) out.push_back(std::string(s));
  return out;
}

inline bool parse_flag(const KeyValueFile& kv, std::string_view key, bool fallback) {
  const auto* e = kv.find(key);
  if (!e) return fallback;
  if (e->value == "1" || e->value == "true" || e->value == "yes") return true;
  if (e->value == "0" || e->value == "false" || e->value == "no") return false;
  throw ConfigError("`" + e->key + "`: expected true or false", e->line);
}

/// "1-20", "3, 5, 9-11" style seed lists.
inline std::vector<std::uint64_t> parse_seed_list(const KeyValueEntry& e) {
  std::vector<std::uint64_t> out;
  for (const auto& item : split_list(e.value)) {
    const auto dash = item.find('-');
    if (dash == std::string::npos) {
      const auto v = parse_u64(item);
      if (!v) throw ConfigError("seeds: bad seed `" + std::string(item) + "`", e.line);
      out.push_back(*v);
      continue;
    }
    const auto lo = parse_u64(trim(std::string_view(item).substr(0, dash)));
    const auto hi = parse_u64(trim(std::string_view(item).substr(dash + 1)));
    if (!lo || !hi || *hi < *lo || *hi - *lo > 100000)
      throw ConfigError("seeds: bad range `" + std::string(item) + "`", e.line);
    for (auto s = *lo; s <= *hi; ++s) out.push_back(s);
  }
  return out;
}

inline std::string fmt_g(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace detail

/// Reads a config file's key-value pairs on top of the defaults. Relative
/// scene paths resolve against `base_dir`.
inline ExperimentConfig parse_experiment_config(const KeyValueFile& kv, const std::filesystem::path& base_dir = {}) {
  kv.check_known({"scene", "methods", "seeds", "snr", "eval_snr", "budget", "out", "checkpoint", "init", "threads",
                  "train_iterations", "train_lambda", "train_lr", "train_beta", "train_gamma", "train_probes",
                  "train_probe_radius", "train_batch", "train_sigma_init", "train_reset_rule", "train_optimizer",
                  "train_settings", "train_seed", "train_snr", "hidden", "ald_sigma1", "ald_decay", "ald_steps",
                  "ald_inner", "ald_step_size", "ald_scaled_step", "zogd_probes", "zogd_radius", "zogd_lr",
                  "random_samples", "sim_lr", "sim_fd_step", "sim_backtracks", "sim_restarts", "sim_overlay",
                  "latency_batch", "latency_zogd_max_steps", "heatmap_resolution", "heatmap_phi"});
  ExperimentConfig c;
  if (const auto* e = kv.find("scene")) {
    c.scene = e->value;
    if (!c.scene.starts_with("builtin:") && !base_dir.empty() && std::filesystem::path(c.scene).is_relative())
      c.scene = (base_dir / c.scene).string();
  }
  if (kv.has("methods")) c.methods = detail::list_of(kv, "methods");
  if (const auto* e = kv.find("seeds")) c.seeds = detail::parse_seed_list(*e);
  c.snr = kv.get_double_list("snr", c.snr);
  c.eval_snr = kv.get_double("eval_snr", c.eval_snr);
  c.budget = kv.get_u64("budget", c.budget);
  c.out = kv.get_string("out", c.out);
  c.checkpoint = kv.get_string("checkpoint", c.checkpoint);
  if (const auto* e = kv.find("init")) {
    if (e->value == "uniform") c.init = InitMode::Uniform;
    else if (e->value == "half") c.init = InitMode::Half;
    else throw ConfigError("init: expected uniform or half", e->line);
  }
  c.threads = kv.get_u64("threads", c.threads);

  auto& t = c.train;
  t.iterations = kv.get_u64("train_iterations", t.iterations);
  t.lambda = kv.get_double("train_lambda", t.lambda);
  t.learning_rate = kv.get_double("train_lr", t.learning_rate);
  t.sigma_decay = kv.get_double("train_beta", t.sigma_decay);
  t.gamma = kv.get_double("train_gamma", t.gamma);
  t.probes = kv.get_u64("train_probes", t.probes);
  t.probe_radius = kv.get_double("train_probe_radius", t.probe_radius);
  t.batch_size = kv.get_u64("train_batch", t.batch_size);
  t.sigma_init = kv.get_double("train_sigma_init", t.sigma_init);
  if (const auto* e = kv.find("train_reset_rule")) {
    if (e->value == "keep_gamma") t.reset_rule = ResetRule::KeepWithGamma;
    else if (e->value == "reset_gamma") t.reset_rule = ResetRule::ResetWithGamma;
    else throw ConfigError("train_reset_rule: expected keep_gamma or reset_gamma", e->line);
  }
  if (const auto* e = kv.find("train_optimizer")) {
    if (e->value == "sgd") t.optimizer = OptimizerKind::Sgd;
    else if (e->value == "adam") t.optimizer = OptimizerKind::Adam;
    else throw ConfigError("train_optimizer: expected sgd or adam", e->line);
  }
  c.train_settings = kv.get_u64("train_settings", c.train_settings);
  c.train_seed = kv.get_u64("train_seed", c.train_seed);
  c.train_snr = kv.get_double("train_snr", c.train_snr);
  if (const auto* e = kv.find("hidden")) {
    c.hidden.clear();
    for (const auto& item : split_list(e->value)) {
      const auto v = parse_u64(item);
      if (!v || *v == 0) throw ConfigError("hidden: widths must be positive integers", e->line);
      c.hidden.push_back(*v);
    }
  }

  auto& s = c.schedule;
  s.sigma_1 = kv.get_double("ald_sigma1", s.sigma_1);
  s.decay = kv.get_double("ald_decay", s.decay);
  s.steps = kv.get_u64("ald_steps", s.steps);
  s.inner = kv.get_u64("ald_inner", s.inner);
  s.step_size = kv.get_double("ald_step_size", s.step_size);
  c.ald_scaled_step = detail::parse_flag(kv, "ald_scaled_step", c.ald_scaled_step);

  c.zogd_probes = kv.get_u64("zogd_probes", c.zogd_probes);
  c.zogd_radius = kv.get_double("zogd_radius", c.zogd_radius);
  c.zogd_lr = kv.get_double("zogd_lr", c.zogd_lr);
  c.random_samples = kv.get_u64("random_samples", c.random_samples);
  c.sim.lr = kv.get_double("sim_lr", c.sim.lr);
  c.sim.fd_step = kv.get_double("sim_fd_step", c.sim.fd_step);
  c.sim.backtracks = kv.get_u64("sim_backtracks", c.sim.backtracks);
  c.sim.steps = c.budget;
  c.sim_restarts = kv.get_u64("sim_restarts", c.sim_restarts);
  c.sim_overlay = kv.get_double("sim_overlay", c.sim_overlay);
  c.latency_batch = kv.get_u64("latency_batch", c.latency_batch);
  c.latency_zogd_max_steps = kv.get_u64("latency_zogd_max_steps", c.latency_zogd_max_steps);
  c.heatmap_resolution = kv.get_u64("heatmap_resolution", c.heatmap_resolution);
  c.heatmap_phi = kv.get_double_list("heatmap_phi", {});

  try {
    c.validate();
  } catch (const InvalidSchedule& e) {
    throw ConfigError(std::string("ald schedule: ") + e.what());
  }
  return c;
}

inline ExperimentConfig load_experiment_config(const std::string& path) {
  return parse_experiment_config(KeyValueFile::load(path), std::filesystem::path(path).parent_path());
}

/// Scene text for "builtin:desk", "builtin:large" or a file path.
inline std::string scene_text(const std::string& scene) {
  if (scene == "builtin:desk") return desk_scene_text();
  if (scene == "builtin:large") return large_scene_text();
  if (scene.starts_with("builtin:")) throw ConfigError("unknown builtin scene `" + scene + "`");
  std::ifstream in(scene, std::ios::binary);
  if (!in) throw ConfigError("cannot open scene file: " + scene);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char ch : bytes) {
    h ^= ch;
    h *= 0x100000001b3ull;
  }
  return h;
}

/// Canonical text of every setting that influences results (the output
/// directory and thread count are excluded).
inline std::string canonical_text(const ExperimentConfig& c, std::string_view scene) {
  using detail::fmt_g;
  std::ostringstream o;
  auto join_d = [](const auto& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + fmt_g(static_cast<double>(v[i]));
    return s;
  };
  o << "methods=";
  for (std::size_t i = 0; i < c.methods.size(); ++i) o << (i ? "," : "") << c.methods[i];
  o << "\nseeds=" << join_d(c.seeds) << "\nsnr=" << join_d(c.snr) << "\neval_snr=" << fmt_g(c.eval_snr)
    << "\nbudget=" << c.budget << "\ninit=" << (c.init == InitMode::Uniform ? "uniform" : "half")
    << "\ntrain=" << c.train.iterations << "," << fmt_g(c.train.lambda) << "," << fmt_g(c.train.learning_rate) << ","
    << fmt_g(c.train.sigma_decay) << "," << fmt_g(c.train.gamma) << "," << c.train.probes << ","
    << fmt_g(c.train.probe_radius) << "," << c.train.batch_size << "," << fmt_g(c.train.sigma_init) << ","
    << static_cast<int>(c.train.reset_rule) << "," << static_cast<int>(c.train.optimizer) << "," << c.train_settings
    << "," << c.train_seed << "," << fmt_g(c.train_snr) << "\nhidden=" << join_d(c.hidden)
    << "\nald=" << fmt_g(c.schedule.sigma_1) << "," << fmt_g(c.schedule.decay) << "," << c.schedule.steps << ","
    << c.schedule.inner << "," << fmt_g(c.schedule.step_size) << "," << c.ald_scaled_step
    << "\nzogd=" << c.zogd_probes << "," << fmt_g(c.zogd_radius) << "," << fmt_g(c.zogd_lr)
    << "\nrandom=" << c.random_budget() << "\nsim=" << fmt_g(c.sim.lr) << "," << fmt_g(c.sim.fd_step) << ","
    << c.sim.backtracks << "," << c.sim_restarts << "," << fmt_g(c.sim_overlay) << "\nlatency=" << c.latency_batch
    << "," << c.latency_zogd_max_steps << "\nheatmap=" << c.heatmap_resolution << "," << join_d(c.heatmap_phi)
    << "\nscene=" << scene << "\n";
  return o.str();
}

/// Resolved configuration plus the loaded scene.
struct ExperimentContext {
  ExperimentConfig config;
  std::shared_ptr<const Environment> env;
  std::uint64_t config_hash = 0;

  explicit ExperimentContext(ExperimentConfig c) : config(std::move(c)) {
    config.validate();
    const std::string text = scene_text(config.scene);
    env = std::make_shared<const Environment>(parse_scene(text));
    config_hash = fnv1a64(canonical_text(config, text));
  }

  std::vector<std::size_t> network_dims() const {
    return denoiser_dims(env->np, env->setting_dim(), config.hidden);
  }

  std::string header(std::string_view command, std::span<const std::uint64_t> seeds) const {
    char hash[24];
    std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(config_hash));
    std::string s = "# chanopt " + std::string(command) + " config_hash=" + hash + " seeds=";
    for (std::size_t i = 0; i < seeds.size(); ++i) s += (i ? "," : "") + std::to_string(seeds[i]);
    return s;
  }
  std::string header(std::string_view command) const { return header(command, config.seeds); }
};

// ---------------------------------------------------------------------------
// Worker pool
// ---------------------------------------------------------------------------

/// Runs fn(0..n-1) on up to `threads` workers (0 = hardware concurrency).
/// Callers store results by index, so output order never depends on timing.
/// The first exception thrown by any task is rethrown.
inline void parallel_for(std::size_t n, std::size_t threads, const std::function<void(std::size_t)>& fn) {
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = std::min(threads, n);
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  auto worker = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
        next = n;
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

// ---------------------------------------------------------------------------
// Per-seed streams and method runs
// ---------------------------------------------------------------------------

/// Setting, starting configuration and independent method streams derived
/// from one seed. Identical across SNR values, so sweeps are matched.
struct SeedStreams {
  RealVector setting;
  RealVector initial;
  RngState ald, random, zogd, sim, overlay;

  SeedStreams(std::uint64_t seed, const Environment& env, InitMode init) {
    const RngState base(seed);
    RngState s0 = base.split(0);
    setting = sample_uniform_box(env.setting_dim(), s0);
    RngState s1 = base.split(1);
    initial = init == InitMode::Uniform ? sample_uniform_box(env.np, s1) : RealVector(env.np, 0.5);
    ald = base.split(2);
    random = base.split(3);
    zogd = base.split(4);
    sim = base.split(5);
    overlay = base.split(6);
  }
};

struct MethodRun {
  RealVector config;
  double rate = 0.0;
  std::uint64_t calls = 0;
  std::vector<double> trace;
};

/// One optimization run. Rates are measured on a noise-free evaluator that
/// the optimizer never sees; `calls` counts only the optimizer's own calls.
inline MethodRun run_method(const ExperimentContext& ctx, const DenoiserParams* theta, std::string_view method,
                            std::uint64_t seed, double snr, bool want_trace) {
  const auto& c = ctx.config;
  const double nv = 1.0 / snr;
  SeedStreams st(seed, *ctx.env, c.init);
  ChannelEvaluator scoring(ctx.env);
  scoring.set_noise_overlay(0.0);
  MethodRun run;

  if (method == "ald") {
    if (!theta) throw ConfigError("method ald needs a checkpoint");
    const NetworkDenoiser d(*theta);
    if (want_trace) {
      const auto points = ald_trace(d, st.setting, c.schedule, st.initial, st.ald, scoring, nv, c.ald_options());
      for (const auto& p : points) run.trace.push_back(p.rate);
      run.config = points.back().config;
      run.rate = points.back().rate;
    } else {
      run.config = ald_optimize(d, st.setting, c.schedule, st.initial, st.ald, c.ald_options());
      run.rate = RateObjective<ChannelEvaluator>(scoring, st.setting, nv)(run.config);
    }
    run.calls = 0;
    return run;
  }

  ChannelEvaluator ev(ctx.env);
  ev.set_noise_overlay(0.0);
  OptimizeResult r;
  if (method == "random") {
    r = random_search(ev, st.setting, c.random_budget(), st.random, nv);
  } else if (method == "zogd") {
    r = zogd_optimize(ev, st.setting, st.initial, c.budget, c.zogd_probes, c.zogd_radius, c.zogd_lr, st.zogd, nv,
                      &scoring);
  } else if (method == "sim_perfect" || method == "sim_imperfect") {
    // The optimizer plans on `ev`; for imperfect knowledge that belief is the
    // overlay-perturbed simulator, while scoring stays noise-free.
    if (method == "sim_imperfect") {
      ev.set_noise_overlay(c.sim_overlay);
      ev.reseed_overlay(st.overlay.split(0).next_u64());
    }
    SimulatorAscentOptions opt = c.sim;
    opt.steps = c.budget;
    r = simulator_multistart_ascent(scoring, ev, st.setting, st.initial, opt, c.sim_restarts, nv, st.sim);
  } else {
    throw ConfigError("unknown method `" + std::string(method) + "`");
  }
  run.config = std::move(r.config);
  run.calls = r.calls;
  run.rate = RateObjective<ChannelEvaluator>(scoring, st.setting, nv)(run.config);
  if (want_trace) run.trace = std::move(r.trace);
  return run;
}

// ---------------------------------------------------------------------------
// Output helpers
// ---------------------------------------------------------------------------

inline void write_text_file(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw ConfigError("cannot write " + path.string());
  out << text;
  if (!out) throw ConfigError("failed writing " + path.string());
}

inline std::string checkpoint_path(const ExperimentConfig& c) {
  return c.checkpoint.empty() ? (std::filesystem::path(c.out) / "checkpoint.bin").string() : c.checkpoint;
}

inline DenoiserParams load_network(const ExperimentContext& ctx) {
  const auto dims = ctx.network_dims();
  return load_checkpoint(checkpoint_path(ctx.config), &dims);
}

inline bool uses_method(const ExperimentConfig& c, std::string_view m) {
  return std::find(c.methods.begin(), c.methods.end(), m) != c.methods.end();
}

inline std::optional<DenoiserParams> network_if_needed(const ExperimentContext& ctx) {
  if (!uses_method(ctx.config, "ald")) return std::nullopt;
  return load_network(ctx);
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainSummary {
  DenoiserParams params;
  std::vector<TrainLogRow> log;
  double heldout_before = 0.0;
  double heldout_after = 0.0;
  std::uint64_t channel_calls = 0;
};

/// Training settings and held-out samples derived from train_seed.
inline std::vector<RealVector> training_settings(const ExperimentContext& ctx) {
  RngState rng = RngState(ctx.config.train_seed).split(10);
  std::vector<RealVector> out;
  for (std::size_t i = 0; i < ctx.config.train_settings; ++i) out.push_back(sample_uniform_box(ctx.env->setting_dim(), rng));
  return out;
}

inline std::vector<TrainSample> heldout_samples(const ExperimentContext& ctx, std::size_t n = 16) {
  RngState rng = RngState(ctx.config.train_seed).split(13);
  std::vector<TrainSample> out(n);
  for (auto& s : out) {
    s.setting = sample_uniform_box(ctx.env->setting_dim(), rng);
    s.config = sample_uniform_box(ctx.env->np, rng);
    s.sigma = ctx.config.train.sigma_init;
  }
  return out;
}

inline TrainSummary run_training(const ExperimentContext& ctx,
                                 const std::function<void(const TrainLogRow&)>& on_row = {}) {
  const auto& c = ctx.config;
  const RngState root(c.train_seed);
  RngState init_rng = root.split(11);
  auto theta0 = init_denoiser(ctx.env->np, ctx.env->setting_dim(), c.hidden, init_rng);
  TrainConfig tc = c.train;
  tc.noise_variance = 1.0 / c.train_snr;

  const auto heldout = heldout_samples(ctx);
  ChannelEvaluator diag(ctx.env);
  diag.set_noise_overlay(0.0);
  TrainSummary out;
  out.heldout_before = heldout_mean_rate(theta0, std::span<const TrainSample>(heldout), diag, tc.noise_variance);

  ChannelEvaluator ev(ctx.env);
  ev.set_noise_overlay(0.0);
  auto result = train(std::move(theta0), training_settings(ctx), ev, tc, root.split(12), on_row);
  out.channel_calls = ev.call_count();
  out.params = std::move(result.params);
  out.log = std::move(result.log);
  out.heldout_after = heldout_mean_rate(out.params, std::span<const TrainSample>(heldout), diag, tc.noise_variance);
  return out;
}

inline std::string format_train_log(const ExperimentContext& ctx, const std::vector<TrainLogRow>& log) {
  using detail::fmt_g;
  const std::uint64_t seed = ctx.config.train_seed;
  std::string s = ctx.header("train", std::span<const std::uint64_t>(&seed, 1)) + "\n";
  s += std::string(kTrainLogHeader) + "\n";
  for (const auto& r : log)
    s += std::to_string(r.iteration) + "," + fmt_g(r.loss) + "," + fmt_g(r.mean_rate) + "," + fmt_g(r.sigma_min) + "," +
         fmt_g(r.sigma_max) + "," + (r.reset ? "1" : "0") + "," + std::to_string(r.channel_calls) + "\n";
  return s;
}

/// Writes the checkpoint and out/train_log.csv.
inline TrainSummary cmd_train(const ExperimentContext& ctx) {
  auto summary = run_training(ctx);
  const std::filesystem::path out(ctx.config.out);
  std::filesystem::create_directories(out);
  const auto ckpt = checkpoint_path(ctx.config);
  if (std::filesystem::path(ckpt).has_parent_path())
    std::filesystem::create_directories(std::filesystem::path(ckpt).parent_path());
  save_checkpoint(summary.params, ckpt);
  write_text_file(out / "train_log.csv", format_train_log(ctx, summary.log));
  return summary;
}

// ---------------------------------------------------------------------------
// optimize, sweep-snr, trace
// ---------------------------------------------------------------------------

inline constexpr std::string_view kOptimizeHeader = "method,seed,rate,calls,config";
inline constexpr std::string_view kSweepHeader = "method,snr,seed,rate,calls";
inline constexpr std::string_view kTraceHeader = "method,iter,seed,rate";

struct SweepRow {
  std::string method;
  double snr = 0.0;
  std::uint64_t seed = 0;
  double rate = 0.0;
  std::uint64_t calls = 0;
};

/// One row per (method, seed) at eval_snr, with the final configuration.
inline std::string cmd_optimize(const ExperimentContext& ctx) {
  const auto& c = ctx.config;
  const auto theta = network_if_needed(ctx);
  const std::size_t n = c.methods.size() * c.seeds.size();
  std::vector<MethodRun> runs(n);
  parallel_for(n, c.threads, [&](std::size_t i) {
    runs[i] = run_method(ctx, theta ? &*theta : nullptr, c.methods[i / c.seeds.size()], c.seeds[i % c.seeds.size()],
                         c.eval_snr, false);
  });
  std::string s = ctx.header("optimize") + "\n" + std::string(kOptimizeHeader) + "\n";
  for (std::size_t i = 0; i < n; ++i) {
    std::string phi;
    for (std::size_t k = 0; k < runs[i].config.size(); ++k) phi += (k ? " " : "") + detail::fmt_g(runs[i].config[k]);
    s += c.methods[i / c.seeds.size()] + "," + std::to_string(c.seeds[i % c.seeds.size()]) + "," +
         detail::fmt_g(runs[i].rate) + "," + std::to_string(runs[i].calls) + "," + phi + "\n";
  }
  write_text_file(std::filesystem::path(c.out) / "optimize.csv", s);
  return s;
}

/// Rows ordered by (method, snr, seed).
inline std::vector<SweepRow> sweep_snr_rows(const ExperimentContext& ctx, const DenoiserParams* theta) {
  const auto& c = ctx.config;
  const std::size_t per_method = c.snr.size() * c.seeds.size();
  std::vector<SweepRow> rows(c.methods.size() * per_method);
  parallel_for(rows.size(), c.threads, [&](std::size_t i) {
    const auto& m = c.methods[i / per_method];
    const double snr = c.snr[(i % per_method) / c.seeds.size()];
    const auto seed = c.seeds[i % c.seeds.size()];
    const auto run = run_method(ctx, theta, m, seed, snr, false);
    rows[i] = {m, snr, seed, run.rate, run.calls};
  });
  return rows;
}

inline std::string format_sweep(const ExperimentContext& ctx, const std::vector<SweepRow>& rows) {
  std::string s = ctx.header("sweep-snr") + "\n" + std::string(kSweepHeader) + "\n";
  for (const auto& r : rows)
    s += r.method + "," + detail::fmt_g(r.snr) + "," + std::to_string(r.seed) + "," + detail::fmt_g(r.rate) + "," +
         std::to_string(r.calls) + "\n";
  return s;
}

inline std::vector<SweepRow> cmd_sweep_snr(const ExperimentContext& ctx) {
  const auto theta = network_if_needed(ctx);
  auto rows = sweep_snr_rows(ctx, theta ? &*theta : nullptr);
  write_text_file(std::filesystem::path(ctx.config.out) / "sweep_snr.csv", format_sweep(ctx, rows));
  return rows;
}

struct TraceRow {
  std::string method;
  std::size_t iter = 0;
  std::uint64_t seed = 0;
  double rate = 0.0;
};

/// Per-iteration rates at eval_snr. ald, zogd and the simulator methods
/// report iterations 0..budget; random search reports best-so-far over draws
/// 1..n.
inline std::vector<TraceRow> cmd_trace(const ExperimentContext& ctx) {
  const auto& c = ctx.config;
  const auto theta = network_if_needed(ctx);
  const std::size_t n = c.methods.size() * c.seeds.size();
  std::vector<MethodRun> runs(n);
  parallel_for(n, c.threads, [&](std::size_t i) {
    runs[i] = run_method(ctx, theta ? &*theta : nullptr, c.methods[i / c.seeds.size()], c.seeds[i % c.seeds.size()],
                         c.eval_snr, true);
  });
  std::vector<TraceRow> rows;
  std::string s = ctx.header("trace") + "\n" + std::string(kTraceHeader) + "\n";
  for (std::size_t i = 0; i < n; ++i) {
    const auto& m = c.methods[i / c.seeds.size()];
    const auto seed = c.seeds[i % c.seeds.size()];
    const std::size_t first = m == "random" ? 1 : 0;
    for (std::size_t k = 0; k < runs[i].trace.size(); ++k) {
      rows.push_back({m, k + first, seed, runs[i].trace[k]});
      s += m + "," + std::to_string(k + first) + "," + std::to_string(seed) + "," + detail::fmt_g(runs[i].trace[k]) + "\n";
    }
  }
  write_text_file(std::filesystem::path(c.out) / "trace.csv", s);
  return rows;
}

// ---------------------------------------------------------------------------
// latency
// ---------------------------------------------------------------------------

struct LatencyRow {
  std::string method;
  double calls_per_setting = 0.0;  // NaN when a target was never reached
  double wall_seconds = 0.0;
  double mean_rate = 0.0;
};

inline constexpr std::string_view kLatencyHeader = "method,calls_per_setting,wall_seconds,mean_rate";

/// Optimizes a batch of latency_batch settings (the first seeds of the list)
/// with every method. A final `zogd_to_ald` row reports the zogd calls per
/// setting needed before its batch-mean rate first reaches the ald batch mean
/// (NaN if not within latency_zogd_max_steps).
inline std::vector<LatencyRow> cmd_latency(const ExperimentContext& ctx) {
  const auto& c = ctx.config;
  if (c.seeds.size() < c.latency_batch)
    throw ConfigError("latency needs at least latency_batch (" + std::to_string(c.latency_batch) + ") seeds");
  const auto theta = network_if_needed(ctx);
  const std::vector<std::uint64_t> batch(c.seeds.begin(), c.seeds.begin() + static_cast<std::ptrdiff_t>(c.latency_batch));
  const double b = static_cast<double>(batch.size());
  std::vector<LatencyRow> rows;
  double ald_mean = std::numeric_limits<double>::quiet_NaN();
  for (const auto& m : c.methods) {
    LatencyRow row{m, 0.0, 0.0, 0.0};
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<MethodRun> runs(batch.size());
    parallel_for(batch.size(), c.threads, [&](std::size_t i) {
      runs[i] = run_method(ctx, theta ? &*theta : nullptr, m, batch[i], c.eval_snr, false);
    });
    row.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    for (const auto& r : runs) {
      row.calls_per_setting += static_cast<double>(r.calls) / b;
      row.mean_rate += r.rate / b;
    }
    if (m == "ald") ald_mean = row.mean_rate;
    rows.push_back(row);
  }
  if (uses_method(c, "ald") && uses_method(c, "zogd")) {
    ExperimentConfig long_cfg = c;
    long_cfg.budget = c.latency_zogd_max_steps;
    ExperimentContext long_ctx = ctx;
    long_ctx.config = long_cfg;
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<MethodRun> runs(batch.size());
    parallel_for(batch.size(), c.threads,
                 [&](std::size_t i) { runs[i] = run_method(long_ctx, nullptr, "zogd", batch[i], c.eval_snr, true); });
    LatencyRow row{"zogd_to_ald", std::numeric_limits<double>::quiet_NaN(), 0.0, 0.0};
    for (std::size_t k = 0; k <= c.latency_zogd_max_steps; ++k) {
      double mean = 0.0;
      for (const auto& r : runs) mean += r.trace[k] / b;
      row.mean_rate = mean;
      if (mean >= ald_mean) {
        row.calls_per_setting = static_cast<double>(k * 2 * c.zogd_probes);
        break;
      }
    }
    row.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    rows.push_back(row);
  }
  std::string s = ctx.header("latency", batch) + "\n" + std::string(kLatencyHeader) + "\n";
  for (const auto& r : rows) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%s,%.17g,%.3f,%.17g\n", r.method.c_str(), r.calls_per_setting, r.wall_seconds,
                  r.mean_rate);
    s += buf;
  }
  write_text_file(std::filesystem::path(c.out) / "latency.csv", s);
  return rows;
}

// ---------------------------------------------------------------------------
// heatmap
// ---------------------------------------------------------------------------

/// Rate of a single probe receiver over a grid. values is row-major with row
/// 0 at the top (largest y), matching the image orientation.
struct HeatmapGrid {
  Rect extent;
  std::size_t nx = 0, ny = 0;
  std::vector<double> values;

  double& at(std::size_t row, std::size_t col) { return values[row * nx + col]; }
  double at(std::size_t row, std::size_t col) const { return values[row * nx + col]; }
  double cell_x(std::size_t col) const { return extent.x0 + (static_cast<double>(col) + 0.5) * (extent.x1 - extent.x0) / static_cast<double>(nx); }
  double cell_y(std::size_t row) const { return extent.y1 - (static_cast<double>(row) + 0.5) * (extent.y1 - extent.y0) / static_cast<double>(ny); }
};

/// Probe location for a cell, moved along +x away from any non-TX dipole
/// closer than 5 mm.
inline std::pair<double, double> probe_position(const Environment& env, double x, double y) {
  constexpr double clearance = 5e-3;
  for (int attempt = 0; attempt < 16; ++attempt) {
    bool clear = true;
    for (const auto& d : env.dipoles) {
      if (d.kind == DipoleKind::Tx) continue;
      if (std::hypot(d.x - x, d.y - y) < clearance) clear = false;
    }
    if (clear) return {x, y};
    x += clearance;
  }
  return {x, y};
}

inline HeatmapGrid rate_heatmap(const Environment& env, std::span<const double> config, std::span<const double> setting,
                                double noise_variance, std::size_t resolution, std::size_t threads = 1) {
  if (!env.probe_region) throw ConfigError("heatmap: scene has no probe_region");
  if (resolution < 2) throw ConfigError("heatmap: resolution must be >= 2");
  HeatmapGrid g{*env.probe_region, resolution, resolution, std::vector<double>(resolution * resolution)};
  parallel_for(g.values.size(), threads, [&](std::size_t i) {
    const auto [x, y] = probe_position(env, g.cell_x(i % g.nx), g.cell_y(i / g.nx));
    ChannelEvaluator ev(env.with_probe_receiver(x, y));
    ev.set_noise_overlay(0.0);
    g.values[i] = achievable_rate(ev.evaluate(config, setting), noise_variance);
  });
  return g;
}

inline HeatmapGrid heatmap_difference(const HeatmapGrid& a, const HeatmapGrid& b) {
  if (a.nx != b.nx || a.ny != b.ny) throw DimensionMismatch("heatmap grids differ in size");
  HeatmapGrid d = a;
  for (std::size_t i = 0; i < d.values.size(); ++i) d.values[i] = b.values[i] - a.values[i];
  return d;
}

/// Mean over cells whose centre lies within rx_region_radius of the RX centroid.
inline double receiver_region_mean(const HeatmapGrid& g, const Environment& env) {
  double cx = 0.0, cy = 0.0;
  for (auto i : env.rx_index) {
    cx += env.dipoles[i].x / static_cast<double>(env.rx_index.size());
    cy += env.dipoles[i].y / static_cast<double>(env.rx_index.size());
  }
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t r = 0; r < g.ny; ++r)
    for (std::size_t col = 0; col < g.nx; ++col)
      if (std::hypot(g.cell_x(col) - cx, g.cell_y(r) - cy) <= env.rx_region_radius) {
        sum += g.at(r, col);
        ++n;
      }
  if (n == 0) throw ConfigError("heatmap: no grid cell falls inside the receiver region");
  return sum / static_cast<double>(n);
}

inline std::string heatmap_matrix_text(const HeatmapGrid& g, const std::string& header) {
  std::string s = header + "\n";
  char buf[96];
  std::snprintf(buf, sizeof buf, "# extent %.6g %.6g %.6g %.6g, %zu x %zu, row 0 = top\n", g.extent.x0, g.extent.y0,
                g.extent.x1, g.extent.y1, g.ny, g.nx);
  s += buf;
  for (std::size_t r = 0; r < g.ny; ++r) {
    for (std::size_t col = 0; col < g.nx; ++col) s += (col ? " " : "") + detail::fmt_g(g.at(r, col));
    s += "\n";
  }
  return s;
}

/// Binary 8-bit graymap. `symmetric` maps [-m, m] with zero at mid-gray;
/// otherwise [lo, hi] maps to [0, 255].
inline std::string heatmap_pgm(const HeatmapGrid& g, const std::string& header, double lo, double hi, bool symmetric) {
  std::string s = "P5\n" + header + "\n" + std::to_string(g.nx) + " " + std::to_string(g.ny) + "\n255\n";
  double m = 0.0;
  for (double v : g.values) m = std::max(m, std::abs(v));
  for (double v : g.values) {
    double t;
    if (symmetric) t = m > 0.0 ? 0.5 + 0.5 * v / m : 0.5;
    else t = hi > lo ? (v - lo) / (hi - lo) : 0.0;
    s.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(t, 0.0, 1.0) * 255.0))));
  }
  return s;
}

struct HeatmapResult {
  HeatmapGrid reference, optimized, difference;
  double receiver_mean_difference = 0.0;
};

/// Heatmaps for phi = 0.5 everywhere and for `optimized`, at one setting.
inline HeatmapResult compute_heatmaps(const Environment& env, std::span<const double> optimized,
                                      std::span<const double> setting, double noise_variance, std::size_t resolution,
                                      std::size_t threads = 1) {
  HeatmapResult h;
  const RealVector reference(env.np, 0.5);
  h.reference = rate_heatmap(env, reference, setting, noise_variance, resolution, threads);
  h.optimized = rate_heatmap(env, optimized, setting, noise_variance, resolution, threads);
  h.difference = heatmap_difference(h.reference, h.optimized);
  h.receiver_mean_difference = receiver_region_mean(h.difference, env);
  return h;
}

/// Optimized configuration for the heatmap: heatmap_phi when given,
/// otherwise ALD from the checkpoint at the seed's setting.
inline HeatmapResult cmd_heatmap(const ExperimentContext& ctx, std::uint64_t seed) {
  const auto& c = ctx.config;
  SeedStreams st(seed, *ctx.env, c.init);
  RealVector phi;
  if (!c.heatmap_phi.empty()) {
    if (c.heatmap_phi.size() != ctx.env->np) throw ConfigError("heatmap_phi must have np entries");
    phi = c.heatmap_phi;
  } else {
    const auto theta = load_network(ctx);
    phi = ald_optimize(NetworkDenoiser(theta), st.setting, c.schedule, st.initial, st.ald, c.ald_options());
  }
  auto h = compute_heatmaps(*ctx.env, phi, st.setting, 1.0 / c.eval_snr, c.heatmap_resolution, c.threads);

  const std::filesystem::path out(c.out);
  const auto header = ctx.header("heatmap", std::span<const std::uint64_t>(&seed, 1));
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto* g : {&h.reference, &h.optimized})
    for (double v : g->values) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
  write_text_file(out / "heatmap_reference.txt", heatmap_matrix_text(h.reference, header));
  write_text_file(out / "heatmap_optimized.txt", heatmap_matrix_text(h.optimized, header));
  write_text_file(out / "heatmap_difference.txt", heatmap_matrix_text(h.difference, header));
  write_text_file(out / "heatmap_reference.pgm", heatmap_pgm(h.reference, header, lo, hi, false));
  write_text_file(out / "heatmap_optimized.pgm", heatmap_pgm(h.optimized, header, lo, hi, false));
  write_text_file(out / "heatmap_difference.pgm", heatmap_pgm(h.difference, header, 0.0, 0.0, true));
  return h;
}

}  // namespace chanopt
