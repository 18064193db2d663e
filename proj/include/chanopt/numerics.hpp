#pragma once

// Complex dense kernels and the repo-wide random stream.

#include <chanopt/errors.hpp>

#include <Eigen/Cholesky>
#include <Eigen/Dense>
#include <Eigen/LU>

#include <cmath>
#include <complex>
#include <cstdint>
#include <initializer_list>
#include <numbers>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

namespace chanopt {

using cplx = std::complex<double>;
using RealVector = std::vector<double>;

/// Dense row-major complex matrix.
class ComplexMatrix {
 public:
  ComplexMatrix() = default;
  ComplexMatrix(std::size_t rows, std::size_t cols, cplx fill = {})
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  ComplexMatrix(std::initializer_list<std::initializer_list<cplx>> init) {
    rows_ = init.size();
    cols_ = rows_ ? init.begin()->size() : 0;
    data_.reserve(rows_ * cols_);
    for (const auto& row : init) {
      if (row.size() != cols_) throw DimensionMismatch("ragged matrix initializer");
      data_.insert(data_.end(), row.begin(), row.end());
    }
  }

  static ComplexMatrix identity(std::size_t n) {
    ComplexMatrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  static ComplexMatrix diagonal(std::span<const cplx> d) {
    ComplexMatrix m(d.size(), d.size());
    for (std::size_t i = 0; i < d.size(); ++i) m(i, i) = d[i];
    return m;
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool square() const { return rows_ == cols_; }

  cplx& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  const cplx& operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  std::span<cplx> data() { return data_; }
  std::span<const cplx> data() const { return data_; }

  ComplexMatrix adjoint() const {
    ComplexMatrix out(cols_, rows_);
    for (std::size_t r = 0; r < rows_; ++r)
      for (std::size_t c = 0; c < cols_; ++c) out(c, r) = std::conj((*this)(r, c));
    return out;
  }

  ComplexMatrix transpose() const {
    ComplexMatrix out(cols_, rows_);
    for (std::size_t r = 0; r < rows_; ++r)
      for (std::size_t c = 0; c < cols_; ++c) out(c, r) = (*this)(r, c);
    return out;
  }

  ComplexMatrix& operator+=(const ComplexMatrix& o) {
    check_same_shape(o);
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }

  ComplexMatrix& operator-=(const ComplexMatrix& o) {
    check_same_shape(o);
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] -= o.data_[i];
    return *this;
  }

  ComplexMatrix& operator*=(cplx s) {
    for (auto& v : data_) v *= s;
    return *this;
  }

  friend ComplexMatrix operator+(ComplexMatrix a, const ComplexMatrix& b) { return a += b; }
  friend ComplexMatrix operator-(ComplexMatrix a, const ComplexMatrix& b) { return a -= b; }
  friend ComplexMatrix operator*(ComplexMatrix a, cplx s) { return a *= s; }
  friend ComplexMatrix operator*(cplx s, ComplexMatrix a) { return a *= s; }

  friend ComplexMatrix operator*(const ComplexMatrix& a, const ComplexMatrix& b);

  friend bool operator==(const ComplexMatrix&, const ComplexMatrix&) = default;

  /// Largest entry magnitude.
  double max_abs() const {
    double m = 0.0;
    for (const auto& v : data_) m = std::max(m, std::abs(v));
    return m;
  }

  bool all_finite() const {
    for (const auto& v : data_)
      if (!std::isfinite(v.real()) || !std::isfinite(v.imag())) return false;
    return true;
  }

 private:
  void check_same_shape(const ComplexMatrix& o) const {
    if (rows_ != o.rows_ || cols_ != o.cols_) throw DimensionMismatch("matrix shapes differ");
  }

  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<cplx> data_;
};

namespace detail {
using EigenMat = Eigen::Matrix<cplx, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
inline Eigen::Map<EigenMat> view(ComplexMatrix& m) {
  return {m.data().data(), static_cast<Eigen::Index>(m.rows()), static_cast<Eigen::Index>(m.cols())};
}
inline Eigen::Map<const EigenMat> view(const ComplexMatrix& m) {
  return {m.data().data(), static_cast<Eigen::Index>(m.rows()), static_cast<Eigen::Index>(m.cols())};
}
}  // namespace detail

inline ComplexMatrix operator*(const ComplexMatrix& a, const ComplexMatrix& b) {
  if (a.cols() != b.rows()) throw DimensionMismatch("matrix product: inner dimensions differ");
  ComplexMatrix out(a.rows(), b.cols());
  if (a.cols() > 0) detail::view(out).noalias() = detail::view(a) * detail::view(b);
  return out;
}

/// Solves A X = B by LU factorization with partial pivoting.
inline ComplexMatrix solve_linear(const ComplexMatrix& a, const ComplexMatrix& b) {
  if (!a.square()) throw DimensionMismatch("solve_linear: A must be square");
  if (b.rows() != a.rows()) throw DimensionMismatch("solve_linear: B row count must match A");
  if (a.rows() == 0) return b;
  const Eigen::PartialPivLU<detail::EigenMat> lu(detail::view(a));
  const auto diag = lu.matrixLU().diagonal();
  for (Eigen::Index k = 0; k < diag.size(); ++k)
    if (!(std::abs(diag[k]) >= 1e-300))
      throw SingularMatrix("solve_linear: pivot below 1e-300 at column " + std::to_string(k));
  ComplexMatrix x(b.rows(), b.cols());
  detail::view(x) = lu.solve(detail::view(b));
  return x;
}

/// log2 det(M) for Hermitian positive-definite M, via Cholesky.
inline double hermitian_logdet2(const ComplexMatrix& m) {
  if (!m.square()) throw DimensionMismatch("hermitian_logdet2: matrix must be square");
  const std::size_t n = m.rows();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i; j < n; ++j)
      if (std::abs(m(i, j) - std::conj(m(j, i))) > 1e-10)
        throw NotPositiveDefinite("hermitian_logdet2: matrix is not Hermitian");
  if (n == 0) return 0.0;
  const Eigen::LLT<detail::EigenMat, Eigen::Lower> llt(detail::view(m));
  if (llt.info() != Eigen::Success) throw NotPositiveDefinite("hermitian_logdet2: matrix is not positive definite");
  double logdet = 0.0;
  const auto l = llt.matrixLLT().diagonal();
  for (Eigen::Index j = 0; j < l.size(); ++j) {
    const double ljj = l[j].real();
    if (!(ljj > 0.0)) throw NotPositiveDefinite("hermitian_logdet2: non-positive pivot at " + std::to_string(j));
    logdet += 2.0 * std::log2(ljj);
  }
  return logdet;
}

// ---------------------------------------------------------------------------
// Random numbers
// ---------------------------------------------------------------------------

namespace detail {
inline constexpr std::uint64_t kGoldenGamma = 0x9E3779B97F4A7C15ULL;

inline constexpr std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}
}  // namespace detail

/// Counter-based SplitMix64 stream: output k is mix64(seed + k * gamma).
/// The whole state is (seed, counter), so a stream replays bit-exactly on
/// any platform. Gaussian draws use Box-Muller on two uniforms.
class RngState {
 public:
  static constexpr std::string_view algorithm = "splitmix64";

  explicit RngState(std::uint64_t seed = 0) : seed_(seed) {}

  std::uint64_t seed() const { return seed_; }
  std::uint64_t counter() const { return counter_; }

  std::uint64_t next_u64() {
    ++counter_;
    return detail::mix64(seed_ + counter_ * detail::kGoldenGamma);
  }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double normal() {
    // 1 - uniform() lies in (0, 1], so the log is finite.
    const double u1 = 1.0 - uniform();
    const double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  /// Independent child stream for parallel workers.
  RngState split(std::uint64_t stream) const {
    return RngState(detail::mix64(seed_ ^ detail::mix64(stream + detail::kGoldenGamma)));
  }

  friend bool operator==(const RngState&, const RngState&) = default;

 private:
  std::uint64_t seed_;
  std::uint64_t counter_ = 0;
};

inline RealVector sample_gaussian(std::size_t dim, RngState& rng) {
  RealVector z(dim);
  for (auto& v : z) v = rng.normal();
  return z;
}

/// Uniform direction on the unit sphere in R^dim (normalized Gaussian).
inline RealVector sample_unit_sphere(std::size_t dim, RngState& rng) {
  if (dim == 0) throw DimensionMismatch("sample_unit_sphere: dim must be >= 1");
  for (;;) {
    RealVector u = sample_gaussian(dim, rng);
    double norm2 = 0.0;
    for (double v : u) norm2 += v * v;
    if (norm2 < 1e-300) continue;
    const double norm = std::sqrt(norm2);
    for (auto& v : u) v /= norm;
    return u;
  }
}

inline RealVector sample_uniform_box(std::size_t dim, RngState& rng) {
  RealVector u(dim);
  for (auto& v : u) v = rng.uniform();
  return u;
}

inline cplx complex_normal(RngState& rng, double variance) {
  const double s = std::sqrt(variance / 2.0);
  const double re = rng.normal();
  const double im = rng.normal();
  return {s * re, s * im};
}

// Small real-vector helpers shared by the optimizers.

inline double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionMismatch("dot: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionMismatch("squared_distance: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
  return s;
}

inline double clamp_unit(double v) { return v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v); }

inline void clamp_unit_box(std::span<double> v) {
  for (auto& x : v) x = clamp_unit(x);
}

}  // namespace chanopt
