#pragma once

// Fully-connected denoiser D(phi_noisy; psi, sigma) -> phi_hat in (0,1)^N_p.
// ReLU hidden layers, sigmoid output, hand-written reverse mode.

#include <chanopt/errors.hpp>
#include <chanopt/numerics.hpp>

#include <bit>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <span>
#include <string>
#include <vector>

namespace chanopt {

struct DenseLayer {
  std::size_t in = 0;
  std::size_t out = 0;
  std::vector<double> weights;  // out x in, row-major
  std::vector<double> bias;     // out

  DenseLayer() = default;
  DenseLayer(std::size_t in_dim, std::size_t out_dim)
      : in(in_dim), out(out_dim), weights(in_dim * out_dim, 0.0), bias(out_dim, 0.0) {}

  double& w(std::size_t o, std::size_t i) { return weights[o * in + i]; }
  double w(std::size_t o, std::size_t i) const { return weights[o * in + i]; }

  friend bool operator==(const DenseLayer&, const DenseLayer&) = default;
};

/// Network weights plus the layer-width chain. dims.front() is the input
/// width N_p + dim(psi) + 1, dims.back() is N_p.
struct DenoiserParams {
  std::vector<std::size_t> dims;
  std::vector<DenseLayer> layers;

  std::size_t config_dim() const { return dims.back(); }
  std::size_t input_dim() const { return dims.front(); }
  std::size_t setting_dim() const { return dims.front() - dims.back() - 1; }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.weights.size() + l.bias.size();
    return n;
  }

  /// All weights then biases, layer by layer (the checkpoint order).
  template <typename Fn>
  void for_each_parameter(Fn&& fn) {
    for (auto& l : layers) {
      for (auto& v : l.weights) fn(v);
      for (auto& v : l.bias) fn(v);
    }
  }
  template <typename Fn>
  void for_each_parameter(Fn&& fn) const {
    for (const auto& l : layers) {
      for (const auto& v : l.weights) fn(v);
      for (const auto& v : l.bias) fn(v);
    }
  }

  static DenoiserParams zeros(std::vector<std::size_t> dims) {
    if (dims.size() < 2) throw DimensionMismatch("denoiser needs at least one layer");
    for (auto d : dims)
      if (d == 0) throw DimensionMismatch("layer widths must be positive");
    DenoiserParams p;
    p.dims = std::move(dims);
    for (std::size_t l = 0; l + 1 < p.dims.size(); ++l) p.layers.emplace_back(p.dims[l], p.dims[l + 1]);
    return p;
  }

  friend bool operator==(const DenoiserParams&, const DenoiserParams&) = default;
};

using ParamGradients = DenoiserParams;

inline std::vector<std::size_t> denoiser_dims(std::size_t np, std::size_t setting_dim,
                                              std::span<const std::size_t> hidden) {
  std::vector<std::size_t> dims;
  dims.push_back(np + setting_dim + 1);
  dims.insert(dims.end(), hidden.begin(), hidden.end());
  dims.push_back(np);
  return dims;
}

inline const std::vector<std::size_t> kDefaultHiddenWidths{64, 64, 64, 64, 64};

/// Glorot-uniform weights, zero biases.
inline DenoiserParams init_denoiser(std::size_t np, std::size_t setting_dim, std::span<const std::size_t> hidden,
                                    RngState& rng) {
  auto p = DenoiserParams::zeros(denoiser_dims(np, setting_dim, hidden));
  for (auto& l : p.layers) {
    const double bound = std::sqrt(6.0 / static_cast<double>(l.in + l.out));
    for (auto& w : l.weights) w = (2.0 * rng.uniform() - 1.0) * bound;
  }
  return p;
}

inline double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

/// Activations cached by one forward pass. activations[0] is the input
/// feature vector; pre[l] feeds activations[l + 1].
struct ForwardTrace {
  RealVector noisy;
  RealVector setting;
  double sigma = 0.0;
  std::vector<RealVector> pre;
  std::vector<RealVector> activations;

  const RealVector& output() const { return activations.back(); }
};

inline RealVector denoiser_features(std::span<const double> noisy, std::span<const double> setting, double sigma) {
  RealVector x;
  x.reserve(noisy.size() + setting.size() + 1);
  x.insert(x.end(), noisy.begin(), noisy.end());
  x.insert(x.end(), setting.begin(), setting.end());
  x.push_back(std::log10(sigma));
  return x;
}

struct DenoiseResult {
  RealVector config;
  ForwardTrace trace;
};

inline DenoiseResult denoise(const DenoiserParams& theta, std::span<const double> noisy,
                             std::span<const double> setting, double sigma) {
  if (noisy.size() != theta.config_dim() || setting.size() != theta.setting_dim())
    throw DimensionMismatch("denoise: input dimensions do not match the network");
  if (!(sigma > 0.0)) throw std::invalid_argument("denoise: sigma must be > 0");

  ForwardTrace tr;
  tr.noisy.assign(noisy.begin(), noisy.end());
  tr.setting.assign(setting.begin(), setting.end());
  tr.sigma = sigma;
  tr.activations.push_back(denoiser_features(noisy, setting, sigma));

  const std::size_t depth = theta.layers.size();
  for (std::size_t l = 0; l < depth; ++l) {
    const DenseLayer& layer = theta.layers[l];
    const RealVector& a = tr.activations.back();
    RealVector z(layer.out);
    for (std::size_t o = 0; o < layer.out; ++o) {
      double s = layer.bias[o];
      const double* row = &layer.weights[o * layer.in];
      for (std::size_t i = 0; i < layer.in; ++i) s += row[i] * a[i];
      z[o] = s;
    }
    RealVector act(layer.out);
    const bool last = (l + 1 == depth);
    for (std::size_t o = 0; o < layer.out; ++o) act[o] = last ? sigmoid(z[o]) : (z[o] > 0.0 ? z[o] : 0.0);
    tr.pre.push_back(std::move(z));
    tr.activations.push_back(std::move(act));
  }
  RealVector out = tr.output();
  return {std::move(out), std::move(tr)};
}

/// Reverse-mode gradients of g_out^T D(x) with respect to every weight and
/// bias. ReLU'(0) is taken as 0.
inline ParamGradients backward(const DenoiserParams& theta, const ForwardTrace& trace, std::span<const double> g_out) {
  const std::size_t depth = theta.layers.size();
  if (g_out.size() != theta.config_dim() || trace.pre.size() != depth)
    throw DimensionMismatch("backward: trace or gradient does not match the network");

  ParamGradients grads = DenoiserParams::zeros(theta.dims);
  RealVector delta(g_out.size());
  {
    const RealVector& y = trace.output();
    for (std::size_t o = 0; o < delta.size(); ++o) delta[o] = g_out[o] * y[o] * (1.0 - y[o]);
  }
  for (std::size_t l = depth; l-- > 0;) {
    const DenseLayer& layer = theta.layers[l];
    DenseLayer& g = grads.layers[l];
    const RealVector& a = trace.activations[l];
    for (std::size_t o = 0; o < layer.out; ++o) {
      g.bias[o] = delta[o];
      double* row = &g.weights[o * layer.in];
      for (std::size_t i = 0; i < layer.in; ++i) row[i] = delta[o] * a[i];
    }
    if (l == 0) break;
    RealVector prev(layer.in, 0.0);
    for (std::size_t o = 0; o < layer.out; ++o) {
      const double d = delta[o];
      if (d == 0.0) continue;
      const double* row = &layer.weights[o * layer.in];
      for (std::size_t i = 0; i < layer.in; ++i) prev[i] += row[i] * d;
    }
    const RealVector& z = trace.pre[l - 1];
    for (std::size_t i = 0; i < prev.size(); ++i)
      if (!(z[i] > 0.0)) prev[i] = 0.0;
    delta = std::move(prev);
  }
  return grads;
}

template <typename D>
concept Denoiser = requires(const D& d, std::span<const double> v, double s) {
  { d(v, v, s) } -> std::convertible_to<RealVector>;
};

/// Adapts trained network weights to the Denoiser interface.
class NetworkDenoiser {
 public:
  explicit NetworkDenoiser(const DenoiserParams& theta) : theta_(&theta) {}

  RealVector operator()(std::span<const double> noisy, std::span<const double> setting, double sigma) const {
    return denoise(*theta_, noisy, setting, sigma).config;
  }

 private:
  const DenoiserParams* theta_;
};

// ---------------------------------------------------------------------------
// Checkpoints
//
//   "SALDC1\n"
//   "<layer count + 1> <d0> <d1> ... <dL>\n"
//   per layer: weights (row-major, out x in) then bias, little-endian f64
// ---------------------------------------------------------------------------

inline constexpr std::string_view kCheckpointMagic = "SALDC1\n";

namespace detail {
inline void put_f64_le(std::string& buf, double v) {
  auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) {
    buf.push_back(static_cast<char>(bits & 0xFF));
    bits >>= 8;
  }
}

inline double get_f64_le(const unsigned char* p) {
  std::uint64_t bits = 0;
  for (int i = 7; i >= 0; --i) bits = (bits << 8) | p[i];
  return std::bit_cast<double>(bits);
}
}  // namespace detail

inline std::string serialize_checkpoint(const DenoiserParams& theta) {
  std::string buf(kCheckpointMagic);
  buf += std::to_string(theta.dims.size());
  for (auto d : theta.dims) buf += " " + std::to_string(d);
  buf += "\n";
  theta.for_each_parameter([&](double v) { detail::put_f64_le(buf, v); });
  return buf;
}

inline DenoiserParams deserialize_checkpoint(std::string_view bytes,
                                             const std::vector<std::size_t>* expected_dims = nullptr) {
  if (bytes.size() < kCheckpointMagic.size() || bytes.substr(0, kCheckpointMagic.size()) != kCheckpointMagic)
    throw BadMagic("checkpoint: bad magic");
  bytes.remove_prefix(kCheckpointMagic.size());
  const auto nl = bytes.find('\n');
  if (nl == std::string_view::npos) throw TruncatedFile("checkpoint: missing dims line");
  std::istringstream dims_line{std::string(bytes.substr(0, nl))};
  bytes.remove_prefix(nl + 1);

  std::size_t count = 0;
  if (!(dims_line >> count) || count < 2 || count > 64) throw TruncatedFile("checkpoint: malformed dims line");
  std::vector<std::size_t> dims(count);
  for (auto& d : dims)
    if (!(dims_line >> d) || d == 0 || d > (1u << 20)) throw TruncatedFile("checkpoint: malformed dims line");
  if (expected_dims && *expected_dims != dims) throw DimMismatchOnLoad("checkpoint: layer dims differ from the expected architecture");

  auto theta = DenoiserParams::zeros(dims);
  const std::size_t need = theta.parameter_count() * 8;
  if (bytes.size() < need) throw TruncatedFile("checkpoint: expected " + std::to_string(need) + " weight bytes, found " + std::to_string(bytes.size()));
  if (bytes.size() > need) throw DimMismatchOnLoad("checkpoint: trailing bytes after the last layer");
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  theta.for_each_parameter([&](double& v) {
    v = detail::get_f64_le(p);
    p += 8;
  });
  return theta;
}

inline void save_checkpoint(const DenoiserParams& theta, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot open checkpoint for writing: " + path);
  const auto buf = serialize_checkpoint(theta);
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw CheckpointError("failed writing checkpoint: " + path);
}

inline DenoiserParams load_checkpoint(const std::string& path, const std::vector<std::size_t>* expected_dims = nullptr) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return deserialize_checkpoint(ss.str(), expected_dims);
}

}  // namespace chanopt
