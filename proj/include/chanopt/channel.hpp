#pragma once

// Programmable channel mapping (configuration, setting) -> per-subband MIMO
// channel matrices. Two realizations share the same call surface:
//
//  * ChannelEvaluator: coupled-dipole rich-scattering simulator. Every
//    dipole i carries an inverse polarizability
//        W_ii = (f_res,i^2 - f^2 + j f Gamma_i) / A_i
//    and couples to every other dipole through the free-space scalar Green's
//    function, W_ik = -exp(-j k r_ik) / (4 pi r_ik). Exciting the TX dipoles
//    and solving W X = E gives the RX response. RIS dipoles have their
//    resonance set by the configuration; TX positions come from the setting.
//
//  * CascadedChannel: H[b] = H2[b] diag(exp(j 2 pi phi)) H1[b] with fixed
//    random factors. Differentiable in closed form; used as a test oracle.

#include <chanopt/errors.hpp>
#include <chanopt/keyvalue.hpp>
#include <chanopt/numerics.hpp>

#include <atomic>
#include <bit>
#include <concepts>
#include <cmath>
#include <memory>
#include <mutex>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace chanopt {

inline constexpr double kSpeedOfLight = 0.299792458;  // meters per nanosecond

enum class DipoleKind { Tx, Rx, Ris, Scatterer };

inline const char* to_string(DipoleKind k) {
  switch (k) {
    case DipoleKind::Tx: return "tx";
    case DipoleKind::Rx: return "rx";
    case DipoleKind::Ris: return "ris";
    case DipoleKind::Scatterer: return "scatterer";
  }
  return "?";
}

struct Dipole {
  DipoleKind kind = DipoleKind::Scatterer;
  double x = 0.0;  // meters
  double y = 0.0;
  double f_res = 1.0;     // GHz; ignored for RIS (configuration-controlled)
  double gamma = 0.1;     // loss rate, GHz
  double coupling = 1.0;  // dimensionless strength A
};

struct Rect {
  double x0 = 0.0, y0 = 0.0, x1 = 0.0, y1 = 0.0;

  bool contains(double x, double y) const { return x >= x0 && x <= x1 && y >= y0 && y <= y1; }
  bool valid() const { return x1 > x0 && y1 > y0; }
};

struct ChannelTensor {
  std::vector<ComplexMatrix> subbands;
  std::vector<double> frequencies_ghz;

  std::size_t bands() const { return subbands.size(); }

  friend bool operator==(const ChannelTensor&, const ChannelTensor&) = default;
};

struct Environment {
  std::size_t ntx = 0;
  std::size_t nrx = 0;
  std::size_t np = 0;
  std::size_t bands = 1;
  double f_lo = 0.9;
  double f_hi = 1.1;
  double ris_f_min = 0.8;
  double ris_f_max = 1.2;
  std::size_t params_per_element = 1;
  double noise_overlay = 0.0;
  Rect tx_box;
  // Optional sweep region for rate heatmaps and the radius around the RX
  // centroid that counts as the receiver area.
  std::optional<Rect> probe_region;
  double rx_region_radius = 0.15;

  // TX entries hold nominal positions; the setting overrides them.
  std::vector<Dipole> dipoles;
  std::vector<std::size_t> tx_index;
  std::vector<std::size_t> rx_index;
  std::vector<std::size_t> ris_index;

  std::size_t setting_dim() const { return 2 * ntx; }

  std::vector<double> subband_frequencies() const {
    std::vector<double> f(bands);
    const double width = (f_hi - f_lo) / static_cast<double>(bands);
    for (std::size_t b = 0; b < bands; ++b) f[b] = f_lo + (static_cast<double>(b) + 0.5) * width;
    return f;
  }

  // Rebuilds the per-kind index lists and checks the scene invariants.
  void finalize() {
    tx_index.clear();
    rx_index.clear();
    ris_index.clear();
    for (std::size_t i = 0; i < dipoles.size(); ++i) {
      switch (dipoles[i].kind) {
        case DipoleKind::Tx: tx_index.push_back(i); break;
        case DipoleKind::Rx: rx_index.push_back(i); break;
        case DipoleKind::Ris: ris_index.push_back(i); break;
        case DipoleKind::Scatterer: break;
      }
    }
    if (ris_index.empty()) throw InvalidScene("scene has no RIS dipoles");
    if (ris_index.size() != np) throw InvalidScene("np = " + std::to_string(np) + " but scene has " + std::to_string(ris_index.size()) + " RIS dipoles");
    if (tx_index.size() != ntx || ntx == 0) throw InvalidScene("ntx does not match the TX dipole count");
    if (rx_index.size() != nrx || nrx == 0) throw InvalidScene("nrx does not match the RX dipole count");
    if (bands == 0) throw InvalidScene("bands must be >= 1");
    if (!(f_lo < f_hi)) throw InvalidScene("f_lo_ghz must be below f_hi_ghz");
    if (!(ris_f_min < ris_f_max)) throw InvalidScene("ris_f_min_ghz must be below ris_f_max_ghz");
    if (!tx_box.valid()) throw InvalidScene("tx_box is empty");
    if (noise_overlay < 0.0) throw InvalidScene("noise_overlay must be >= 0");
    for (const auto& d : dipoles) {
      if (!(d.gamma > 0.0)) throw InvalidScene("dipole loss rate must be > 0");
      if (!(d.coupling > 0.0)) throw InvalidScene("dipole coupling must be > 0");
      if (d.kind != DipoleKind::Tx && tx_box.contains(d.x, d.y))
        throw InvalidScene(std::string(to_string(d.kind)) + " dipole lies inside the transmitter box");
    }
    for (std::size_t i = 0; i < dipoles.size(); ++i)
      for (std::size_t k = i + 1; k < dipoles.size(); ++k) {
        if (dipoles[i].kind == DipoleKind::Tx && dipoles[k].kind == DipoleKind::Tx) continue;
        if (std::hypot(dipoles[i].x - dipoles[k].x, dipoles[i].y - dipoles[k].y) < 1e-4)
          throw InvalidScene("dipoles " + std::to_string(i) + " and " + std::to_string(k) + " are coincident");
      }
  }

  /// Same scene with every SCATTERER dipole removed.
  Environment without_scatterers() const {
    Environment e = *this;
    e.dipoles.clear();
    for (const auto& d : dipoles)
      if (d.kind != DipoleKind::Scatterer) e.dipoles.push_back(d);
    e.finalize();
    return e;
  }

  /// Same scene measured by a single probe receiver at (x, y). The original
  /// RX antennas stay in place as passive scatterers.
  Environment with_probe_receiver(double x, double y) const {
    Environment e = *this;
    Dipole probe = dipoles[rx_index.front()];
    probe.x = x;
    probe.y = y;
    e.dipoles.clear();
    for (auto d : dipoles) {
      if (d.kind == DipoleKind::Rx) d.kind = DipoleKind::Scatterer;
      e.dipoles.push_back(d);
    }
    e.dipoles.push_back(probe);
    e.nrx = 1;
    e.finalize();
    return e;
  }
};

// ---------------------------------------------------------------------------
// Scene files
// ---------------------------------------------------------------------------

inline DipoleKind parse_dipole_kind(const std::string& s, std::size_t line) {
  if (s == "tx" || s == "TX") return DipoleKind::Tx;
  if (s == "rx" || s == "RX") return DipoleKind::Rx;
  if (s == "ris" || s == "RIS") return DipoleKind::Ris;
  if (s == "scatterer" || s == "SCATTERER") return DipoleKind::Scatterer;
  throw ConfigError("unknown dipole kind `" + s + "`", line);
}

inline Rect parse_rect(const KeyValueFile& kv, std::string_view key) {
  const auto v = kv.get_double_list(key);
  if (v.size() != 4) throw ConfigError("`" + std::string(key) + "` needs x0,y0,x1,y1", kv.require(key).line);
  return {v[0], v[1], v[2], v[3]};
}

/// Builds an Environment from a parsed scene description.
///
/// `dipole = kind,x,y[,f_res]` lines: TX lines give a nominal position inside
/// `tx_box`; each RIS line is one element that expands to params_per_element
/// tunable dipoles spaced `ris_sub_spacing` apart along x.
inline Environment build_environment(const KeyValueFile& kv) {
  kv.check_known({"ntx", "nrx", "np", "bands", "f_lo_ghz", "f_hi_ghz", "ris_f_min_ghz", "ris_f_max_ghz",
                  "gamma_*", "coupling_*", "f_res_*", "noise_overlay", "dipole", "tx_box", "probe_region",
                  "rx_region_radius", "params_per_element", "ris_sub_spacing", "name"});
  Environment env;
  env.ntx = kv.get_u64("ntx");
  env.nrx = kv.get_u64("nrx");
  env.np = kv.get_u64("np");
  env.bands = kv.get_u64("bands");
  env.f_lo = kv.get_double("f_lo_ghz");
  env.f_hi = kv.get_double("f_hi_ghz");
  env.ris_f_min = kv.get_double("ris_f_min_ghz");
  env.ris_f_max = kv.get_double("ris_f_max_ghz");
  env.noise_overlay = kv.get_double("noise_overlay", 0.0);
  env.params_per_element = kv.get_u64("params_per_element", 1);
  env.tx_box = parse_rect(kv, "tx_box");
  if (kv.has("probe_region")) env.probe_region = parse_rect(kv, "probe_region");
  env.rx_region_radius = kv.get_double("rx_region_radius", env.rx_region_radius);
  const double sub_spacing = kv.get_double("ris_sub_spacing", 0.01);
  if (env.params_per_element == 0) throw InvalidScene("params_per_element must be >= 1");

  auto per_kind = [&](std::string_view prefix, DipoleKind k, double fallback) {
    return kv.get_double(std::string(prefix) + to_string(k), fallback);
  };

  for (const auto* e : kv.all("dipole")) {
    const auto fields = split_list(e->value);
    if (fields.size() < 3 || fields.size() > 4) throw ConfigError("dipole needs kind,x,y[,f_res]", e->line);
    Dipole d;
    d.kind = parse_dipole_kind(fields[0], e->line);
    const auto x = parse_double(fields[1]);
    const auto y = parse_double(fields[2]);
    if (!x || !y) throw ConfigError("dipole coordinates must be numbers", e->line);
    d.x = *x;
    d.y = *y;
    d.gamma = per_kind("gamma_", d.kind, 0.1);
    d.coupling = per_kind("coupling_", d.kind, 1.0);
    d.f_res = per_kind("f_res_", d.kind, 0.5 * (env.f_lo + env.f_hi));
    if (fields.size() == 4) {
      if (d.kind == DipoleKind::Ris) throw ConfigError("RIS resonance is set by the configuration", e->line);
      const auto f = parse_double(fields[3]);
      if (!f) throw ConfigError("dipole f_res must be a number", e->line);
      d.f_res = *f;
    }
    if (d.kind == DipoleKind::Ris) {
      for (std::size_t s = 0; s < env.params_per_element; ++s) {
        Dipole sub = d;
        sub.x += static_cast<double>(s) * sub_spacing;
        env.dipoles.push_back(sub);
      }
    } else {
      if (d.kind == DipoleKind::Tx && !env.tx_box.contains(d.x, d.y))
        throw InvalidScene("TX dipole nominal position lies outside tx_box (line " + std::to_string(e->line) + ")");
      env.dipoles.push_back(d);
    }
  }
  env.finalize();
  return env;
}

inline Environment parse_scene(std::string_view text) { return build_environment(KeyValueFile::parse(text)); }

inline Environment load_scene(const std::string& path) { return build_environment(KeyValueFile::load(path)); }

// ---------------------------------------------------------------------------
// Coupled-dipole simulator
// ---------------------------------------------------------------------------

struct DipolePositions {
  std::vector<double> x, y;
};

/// Dipole coordinates with TX dipoles placed by the setting.
inline DipolePositions place_dipoles(const Environment& env, std::span<const double> setting) {
  if (setting.size() != env.setting_dim())
    throw DimensionMismatch("setting has length " + std::to_string(setting.size()) + ", expected " + std::to_string(env.setting_dim()));
  DipolePositions p;
  p.x.resize(env.dipoles.size());
  p.y.resize(env.dipoles.size());
  for (std::size_t i = 0; i < env.dipoles.size(); ++i) {
    p.x[i] = env.dipoles[i].x;
    p.y[i] = env.dipoles[i].y;
  }
  const Rect& box = env.tx_box;
  for (std::size_t n = 0; n < env.ntx; ++n) {
    const double u = setting[2 * n];
    const double v = setting[2 * n + 1];
    if (!(u >= 0.0 && u <= 1.0 && v >= 0.0 && v <= 1.0)) throw DimensionMismatch("setting entries must lie in [0, 1]");
    p.x[env.tx_index[n]] = box.x0 + u * (box.x1 - box.x0);
    p.y[env.tx_index[n]] = box.y0 + v * (box.y1 - box.y0);
  }
  for (std::size_t a = 0; a < env.ntx; ++a)
    for (std::size_t b = a + 1; b < env.ntx; ++b) {
      const auto i = env.tx_index[a];
      const auto k = env.tx_index[b];
      if (std::hypot(p.x[i] - p.x[k], p.y[i] - p.y[k]) < 1e-4) throw DegenerateScene("TX dipoles coincide for this setting");
    }
  return p;
}

/// Interaction matrix W at frequency f for a configuration already clamped
/// into [0, 1].
inline ComplexMatrix interaction_matrix(const Environment& env, const DipolePositions& pos,
                                        std::span<const double> config, double f_ghz) {
  const std::size_t n = env.dipoles.size();
  ComplexMatrix w(n, n);
  const double k = 2.0 * std::numbers::pi * f_ghz / kSpeedOfLight;
  std::size_t ris_slot = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const Dipole& d = env.dipoles[i];
    double f_res = d.f_res;
    if (d.kind == DipoleKind::Ris) f_res = env.ris_f_min + config[ris_slot++] * (env.ris_f_max - env.ris_f_min);
    w(i, i) = cplx(f_res * f_res - f_ghz * f_ghz, f_ghz * d.gamma) / d.coupling;
  }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      const double r = std::hypot(pos.x[i] - pos.x[j], pos.y[i] - pos.y[j]);
      const cplx g = std::polar(1.0 / (4.0 * std::numbers::pi * r), -k * r);
      w(i, j) = -g;
      w(j, i) = -g;
    }
  return w;
}

/// Owns the call counter and the noise-overlay stream for one simulator.
/// The counter is atomic; the overlay stream is guarded by a mutex.
class ChannelEvaluator {
 public:
  explicit ChannelEvaluator(std::shared_ptr<const Environment> env, std::uint64_t overlay_seed = 0)
      : env_(std::move(env)), overlay_(env_->noise_overlay), overlay_rng_(overlay_seed) {}

  explicit ChannelEvaluator(Environment env, std::uint64_t overlay_seed = 0)
      : ChannelEvaluator(std::make_shared<const Environment>(std::move(env)), overlay_seed) {}

  ChannelEvaluator(const ChannelEvaluator&) = delete;
  ChannelEvaluator& operator=(const ChannelEvaluator&) = delete;

  const Environment& environment() const { return *env_; }
  std::shared_ptr<const Environment> shared_environment() const { return env_; }

  std::size_t config_dim() const { return env_->np; }
  std::size_t setting_dim() const { return env_->setting_dim(); }

  double noise_overlay() const { return overlay_; }
  void set_noise_overlay(double rho) {
    if (rho < 0.0) throw InvalidScene("noise overlay must be >= 0");
    overlay_ = rho;
  }
  void reseed_overlay(std::uint64_t seed) {
    std::lock_guard lock(rng_mutex_);
    overlay_rng_ = RngState(seed);
  }

  std::uint64_t call_count() const { return calls_.load(); }
  void reset_calls() { calls_.store(0); }
  /// Number of evaluations whose configuration had to be clamped into [0, 1].
  std::uint64_t clamp_events() const { return clamps_.load(); }

  ChannelTensor evaluate(std::span<const double> config, std::span<const double> setting) {
    const Environment& env = *env_;
    if (config.size() != env.np)
      throw DimensionMismatch("configuration has length " + std::to_string(config.size()) + ", expected " + std::to_string(env.np));
    RealVector phi(config.begin(), config.end());
    bool clamped = false;
    for (auto& v : phi) {
      if (!std::isfinite(v)) throw DimensionMismatch("configuration entries must be finite");
      const double c = clamp_unit(v);
      clamped |= (c != v);
      v = c;
    }
    if (clamped) ++clamps_;

    const DipolePositions pos = place_dipoles(env, setting);
    ChannelTensor out;
    out.frequencies_ghz = env.subband_frequencies();
    out.subbands.reserve(env.bands);

    ComplexMatrix excite(env.dipoles.size(), env.ntx);
    for (std::size_t t = 0; t < env.ntx; ++t) excite(env.tx_index[t], t) = 1.0;

    for (double f : out.frequencies_ghz) {
      ComplexMatrix x;
      try {
        x = solve_linear(interaction_matrix(env, pos, phi, f), excite);
      } catch (const SingularMatrix& e) {
        throw DegenerateScene(std::string("interaction matrix is singular: ") + e.what());
      }
      ComplexMatrix h(env.nrx, env.ntx);
      for (std::size_t r = 0; r < env.nrx; ++r)
        for (std::size_t t = 0; t < env.ntx; ++t) h(r, t) = x(env.rx_index[r], t);
      out.subbands.push_back(std::move(h));
    }

    if (overlay_ > 0.0) {
      std::lock_guard lock(rng_mutex_);
      for (auto& h : out.subbands)
        for (auto& v : h.data()) v *= 1.0 + complex_normal(overlay_rng_, overlay_);
    }
    ++calls_;
    return out;
  }

 private:
  std::shared_ptr<const Environment> env_;
  double overlay_;
  std::atomic<std::uint64_t> calls_{0};
  std::atomic<std::uint64_t> clamps_{0};
  std::mutex rng_mutex_;
  RngState overlay_rng_;
};

/// Free-function form of ChannelEvaluator::evaluate.
inline ChannelTensor evaluate_channel(ChannelEvaluator& ev, std::span<const double> config, std::span<const double> setting) {
  return ev.evaluate(config, setting);
}

// ---------------------------------------------------------------------------
// Cascaded closed-form model
// ---------------------------------------------------------------------------

/// H[b] = H2[b] diag(exp(j 2 pi phi)) H1[b]. The random factors are drawn from
/// a stream seeded by (seed, bit pattern of the setting), so each setting
/// gets its own fixed channel.
class CascadedChannel {
 public:
  struct Factors {
    std::vector<ComplexMatrix> h1;  // np x ntx per band
    std::vector<ComplexMatrix> h2;  // nrx x np per band
  };

  CascadedChannel(std::size_t ntx, std::size_t nrx, std::size_t np, std::size_t bands, std::uint64_t seed,
                  double gain = 1.0)
      : ntx_(ntx), nrx_(nrx), np_(np), bands_(bands), seed_(seed), gain_(gain) {}

  CascadedChannel(const CascadedChannel& o)
      : ntx_(o.ntx_), nrx_(o.nrx_), np_(o.np_), bands_(o.bands_), seed_(o.seed_), gain_(o.gain_) {}

  std::size_t config_dim() const { return np_; }
  std::size_t setting_dim() const { return 2 * ntx_; }
  std::size_t bands() const { return bands_; }

  std::uint64_t call_count() const { return calls_.load(); }
  void reset_calls() { calls_.store(0); }

  Factors factors(std::span<const double> setting) const {
    if (setting.size() != setting_dim()) throw DimensionMismatch("cascaded model: setting length mismatch");
    std::uint64_t s = seed_;
    for (double v : setting) s = detail::mix64(s ^ std::bit_cast<std::uint64_t>(v));
    RngState rng(s);
    Factors f;
    // Unit-power factors scaled so that E|H_ij|^2 = gain^2.
    const double var1 = 1.0;
    const double var2 = gain_ * gain_ / static_cast<double>(np_);
    for (std::size_t b = 0; b < bands_; ++b) {
      ComplexMatrix h1(np_, ntx_), h2(nrx_, np_);
      for (auto& v : h1.data()) v = complex_normal(rng, var1);
      for (auto& v : h2.data()) v = complex_normal(rng, var2);
      f.h1.push_back(std::move(h1));
      f.h2.push_back(std::move(h2));
    }
    return f;
  }

  ChannelTensor evaluate(std::span<const double> config, std::span<const double> setting) {
    if (config.size() != np_) throw DimensionMismatch("cascaded model: configuration length mismatch");
    const Factors f = factors(setting);
    ChannelTensor out;
    for (std::size_t b = 0; b < bands_; ++b) {
      out.frequencies_ghz.push_back(static_cast<double>(b));
      out.subbands.push_back(compose(f.h1[b], f.h2[b], config));
    }
    ++calls_;
    return out;
  }

  static ComplexMatrix compose(const ComplexMatrix& h1, const ComplexMatrix& h2, std::span<const double> config) {
    ComplexMatrix scaled = h1;
    for (std::size_t n = 0; n < h1.rows(); ++n) {
      const cplx phase = std::polar(1.0, 2.0 * std::numbers::pi * config[n]);
      for (std::size_t t = 0; t < h1.cols(); ++t) scaled(n, t) *= phase;
    }
    return h2 * scaled;
  }

 private:
  std::size_t ntx_, nrx_, np_, bands_;
  std::uint64_t seed_;
  double gain_;
  std::atomic<std::uint64_t> calls_{0};
};

inline ChannelTensor evaluate_channel_cascaded(CascadedChannel& model, std::span<const double> config,
                                               std::span<const double> setting) {
  return model.evaluate(config, setting);
}

/// Common surface of both channel realizations.
template <typename C>
concept ChannelSource = requires(C& c, std::span<const double> v) {
  { c.evaluate(v, v) } -> std::same_as<ChannelTensor>;
  { c.call_count() } -> std::convertible_to<std::uint64_t>;
  { c.config_dim() } -> std::convertible_to<std::size_t>;
  { c.setting_dim() } -> std::convertible_to<std::size_t>;
};

}  // namespace chanopt
