#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

// Minimal dense kernels: double precision throughout, row-major storage,
// no broadcasting. Dimension mismatches throw ContractError.

namespace hlstm {

struct ContractError : std::logic_error {
  explicit ContractError(const std::string& what) : std::logic_error(what) {}
};

inline void require(bool cond, const char* what) {
  if (!cond) throw ContractError(what);
}

inline void require(bool cond, const std::string& what) {
  if (!cond) throw ContractError(what);
}

struct Vector {
  std::vector<double> data;

  Vector() = default;
  explicit Vector(int dim, double fill = 0.0) : data(static_cast<size_t>(dim), fill) {
    require(dim >= 0, "Vector: negative dim");
  }

  int dim() const { return static_cast<int>(data.size()); }
  double& operator[](int i) { return data[static_cast<size_t>(i)]; }
  double operator[](int i) const { return data[static_cast<size_t>(i)]; }
  bool empty() const { return data.empty(); }
};

struct Matrix {
  int rows = 0;
  int cols = 0;
  std::vector<double> data;  // row-major

  Matrix() = default;
  Matrix(int r, int c, double fill = 0.0)
      : rows(r), cols(c), data(static_cast<size_t>(r) * static_cast<size_t>(c), fill) {
    require(r >= 0 && c >= 0, "Matrix: negative dims");
  }

  double& at(int r, int c) { return data[static_cast<size_t>(r) * cols + c]; }
  double at(int r, int c) const { return data[static_cast<size_t>(r) * cols + c]; }
  bool empty() const { return rows == 0 || cols == 0; }
  size_t size() const { return data.size(); }
};

// Counted multiply-accumulates of all matrix-vector kernels on this thread.
// The chunk-mode cost comparisons read this; nothing else depends on it.
inline uint64_t& mac_counter() {
  thread_local uint64_t count = 0;
  return count;
}
inline void mac_reset() { mac_counter() = 0; }
inline uint64_t mac_read() { return mac_counter(); }

inline Vector matvec(const Matrix& m, const Vector& v) {
  require(m.cols == v.dim(), "matvec: m.cols != v.dim");
  Vector out(m.rows);
  const double* row = m.data.data();
  for (int r = 0; r < m.rows; ++r, row += m.cols) {
    double acc = 0.0;
    for (int c = 0; c < m.cols; ++c) acc += row[c] * v.data[static_cast<size_t>(c)];
    out[r] = acc;
  }
  mac_counter() += static_cast<uint64_t>(m.rows) * static_cast<uint64_t>(m.cols);
  return out;
}

// out = m^T v, used by the backward passes.
inline Vector matvec_t(const Matrix& m, const Vector& v) {
  require(m.rows == v.dim(), "matvec_t: m.rows != v.dim");
  Vector out(m.cols);
  const double* row = m.data.data();
  for (int r = 0; r < m.rows; ++r, row += m.cols) {
    const double vr = v[r];
    for (int c = 0; c < m.cols; ++c) out.data[static_cast<size_t>(c)] += row[c] * vr;
  }
  mac_counter() += static_cast<uint64_t>(m.rows) * static_cast<uint64_t>(m.cols);
  return out;
}

// m += u v^T
inline void add_outer(Matrix& m, const Vector& u, const Vector& v) {
  require(m.rows == u.dim() && m.cols == v.dim(), "add_outer: shape mismatch");
  double* row = m.data.data();
  for (int r = 0; r < m.rows; ++r, row += m.cols) {
    const double ur = u[r];
    for (int c = 0; c < m.cols; ++c) row[c] += ur * v.data[static_cast<size_t>(c)];
  }
  mac_counter() += static_cast<uint64_t>(m.rows) * static_cast<uint64_t>(m.cols);
}

inline void add_in_place(Vector& a, const Vector& b) {
  require(a.dim() == b.dim(), "add_in_place: dim mismatch");
  for (int i = 0; i < a.dim(); ++i) a[i] += b[i];
}

// a += s * b
inline void axpy(Vector& a, double s, const Vector& b) {
  require(a.dim() == b.dim(), "axpy: dim mismatch");
  for (int i = 0; i < a.dim(); ++i) a[i] += s * b[i];
}

inline void axpy(Matrix& a, double s, const Matrix& b) {
  require(a.rows == b.rows && a.cols == b.cols, "axpy: shape mismatch");
  for (size_t i = 0; i < a.data.size(); ++i) a.data[i] += s * b.data[i];
}

// a += b ⊙ c
inline void add_hadamard(Vector& a, const Vector& b, const Vector& c) {
  require(a.dim() == b.dim() && b.dim() == c.dim(), "add_hadamard: dim mismatch");
  for (int i = 0; i < a.dim(); ++i) a[i] += b[i] * c[i];
}

inline Vector hadamard(const Vector& a, const Vector& b) {
  require(a.dim() == b.dim(), "hadamard: dim mismatch");
  Vector out(a.dim());
  for (int i = 0; i < a.dim(); ++i) out[i] = a[i] * b[i];
  return out;
}

inline double dot(const Vector& a, const Vector& b) {
  require(a.dim() == b.dim(), "dot: dim mismatch");
  double acc = 0.0;
  for (int i = 0; i < a.dim(); ++i) acc += a[i] * b[i];
  return acc;
}

inline double sigmoid_scalar(double x) {
  // branch keeps exp() argument non-positive; saturates instead of overflowing
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline Vector sigmoid(const Vector& v) {
  Vector out(v.dim());
  for (int i = 0; i < v.dim(); ++i) out[i] = sigmoid_scalar(v[i]);
  return out;
}

inline Vector tanh(const Vector& v) {
  Vector out(v.dim());
  for (int i = 0; i < v.dim(); ++i) out[i] = std::tanh(v[i]);
  return out;
}

inline bool all_finite(const Vector& v) {
  for (double x : v.data)
    if (!std::isfinite(x)) return false;
  return true;
}

inline bool all_finite(const Matrix& m) {
  for (double x : m.data)
    if (!std::isfinite(x)) return false;
  return true;
}

// Fixed pseudo-random generator: xoshiro256** with splitmix64 seeding.
// Uniforms take the top 53 bits; gaussians use the Marsaglia polar method
// (the second sample of each pair is cached). Same seed, same sequence,
// independent of platform and standard-library version.
class RngStream {
 public:
  explicit RngStream(uint64_t seed) {
    uint64_t x = seed;
    for (auto& si : state_) {
      x += 0x9e3779b97f4a7c15ULL;
      uint64_t z = x;
      z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
      z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
      si = z ^ (z >> 31);
    }
  }

  uint64_t next_u64() {
    const uint64_t result = rotl(state_[1] * 5, 7) * 9;
    const uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = rotl(state_[3], 45);
    return result;
  }

  // uniform in [0, 1)
  double next_unit() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double next_uniform(double lo, double hi) { return lo + (hi - lo) * next_unit(); }

  double next_gaussian() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u, v, s;
    do {
      u = 2.0 * next_unit() - 1.0;
      v = 2.0 * next_unit() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double f = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * f;
    have_spare_ = true;
    return u * f;
  }

 private:
  static uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

  std::array<uint64_t, 4> state_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

inline Vector sample_gaussian(RngStream& rng, int dim, double stddev) {
  require(stddev >= 0.0, "sample_gaussian: stddev < 0");
  Vector out(dim);
  if (stddev == 0.0) return out;  // zero vector, rng untouched
  for (int i = 0; i < dim; ++i) out[i] = stddev * rng.next_gaussian();
  return out;
}

inline Vector sample_uniform(RngStream& rng, int dim, double lo, double hi) {
  Vector out(dim);
  for (int i = 0; i < dim; ++i) out[i] = rng.next_uniform(lo, hi);
  return out;
}

// FNV-1a over raw bytes; used for the bit-identity checks (parameter
// checksums, minibatch replay verification).
inline uint64_t fnv1a(const void* bytes, size_t n, uint64_t h = 0xcbf29ce484222325ULL) {
  const auto* p = static_cast<const unsigned char*>(bytes);
  for (size_t i = 0; i < n; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline uint64_t fnv1a(const Vector& v, uint64_t h = 0xcbf29ce484222325ULL) {
  return fnv1a(v.data.data(), v.data.size() * sizeof(double), h);
}

}  // namespace hlstm
