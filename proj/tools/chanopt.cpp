#include <chanopt/experiments.hpp>

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;

struct CommonFlags {
  std::string config;
  std::string scene;
  std::string checkpoint;
  std::optional<std::uint64_t> seed;
  std::string out;
};

void add_common_flags(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--config", f.config, "experiment config file (key = value)");
  cmd->add_option("--scene", f.scene, "scene file, or builtin:desk / builtin:large");
  cmd->add_option("--checkpoint", f.checkpoint, "network checkpoint path");
  cmd->add_option("--seed", f.seed, "run a single seed instead of the configured list");
  cmd->add_option("--out", f.out, "output directory");
}

chanopt::ExperimentContext make_context(const CommonFlags& f) {
  auto cfg = f.config.empty() ? chanopt::ExperimentConfig{} : chanopt::load_experiment_config(f.config);
  if (!f.scene.empty()) cfg.scene = f.scene;
  if (!f.checkpoint.empty()) cfg.checkpoint = f.checkpoint;
  if (f.seed) cfg.seeds = {*f.seed};
  if (!f.out.empty()) cfg.out = f.out;
  return chanopt::ExperimentContext(std::move(cfg));
}

double mean_rate(const std::vector<chanopt::SweepRow>& rows, const std::string& method, double snr) {
  double sum = 0.0;
  std::size_t n = 0;
  for (const auto& r : rows)
    if (r.method == method && r.snr == snr) {
      sum += r.rate;
      ++n;
    }
  return n ? sum / static_cast<double>(n) : 0.0;
}

int run(const std::string& command, const CommonFlags& flags) {
  const auto ctx = make_context(flags);
  const auto& c = ctx.config;
  if (command == "train") {
    const auto s = chanopt::cmd_train(ctx);
    std::printf("trained %zu iterations, %llu channel calls\n", s.log.size(),
                static_cast<unsigned long long>(s.channel_calls));
    std::printf("held-out mean rate: %.6f -> %.6f\n", s.heldout_before, s.heldout_after);
    std::printf("checkpoint: %s\n", chanopt::checkpoint_path(c).c_str());
  } else if (command == "optimize") {
    std::fputs(chanopt::cmd_optimize(ctx).c_str(), stdout);
  } else if (command == "sweep-snr") {
    const auto rows = chanopt::cmd_sweep_snr(ctx);
    for (const auto& m : c.methods) {
      std::printf("%-14s", m.c_str());
      for (double snr : c.snr) std::printf("  snr=%g: %.4f", snr, mean_rate(rows, m, snr));
      std::printf("\n");
    }
  } else if (command == "trace") {
    const auto rows = chanopt::cmd_trace(ctx);
    std::printf("wrote %zu trace rows\n", rows.size());
  } else if (command == "latency") {
    for (const auto& r : chanopt::cmd_latency(ctx))
      std::printf("%-14s calls/setting %10.1f  wall %8.3f s  mean rate %.4f\n", r.method.c_str(), r.calls_per_setting,
                  r.wall_seconds, r.mean_rate);
  } else if (command == "heatmap") {
    const auto h = chanopt::cmd_heatmap(ctx, c.seeds.front());
    std::printf("receiver-region mean rate difference: %.6f\n", h.receiver_mean_difference);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Channel configuration optimizer: training, baselines and benchmark runs"};
  app.require_subcommand(1);
  CommonFlags flags;
  const std::vector<std::pair<std::string, std::string>> commands{
      {"train", "train the denoiser and write a checkpoint plus train_log.csv"},
      {"optimize", "optimize each configured seed with every method"},
      {"sweep-snr", "final rate and channel calls per method, SNR and seed"},
      {"trace", "rate per iteration per method and seed"},
      {"latency", "channel calls, wall time and mean rate over a batch of settings"},
      {"heatmap", "probe-receiver rate maps for the reference and optimized configuration"},
  };
  for (const auto& [name, help] : commands) add_common_flags(app.add_subcommand(name, help), flags);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    return run(command, flags);
  } catch (const chanopt::NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << "\n";
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  }
}
