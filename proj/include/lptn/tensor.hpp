#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace lptn {

using i64 = std::int64_t;
using u64 = std::uint64_t;

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};
class ShapeError : public Error {
 public:
  using Error::Error;
};
class ValueError : public Error {
 public:
  using Error::Error;
};
class IoError : public Error {
 public:
  using Error::Error;
};

template <class... Args>
std::string cat(const Args&... args) {
  std::ostringstream os;
  (os << ... << args);
  return os.str();
}

// NCHW shape. Every tensor in this project is rank 4; per-channel vectors
// (biases, norm affine parameters) use {1, C, 1, 1}.
struct Shape {
  i64 n = 0, c = 0, h = 0, w = 0;

  i64 numel() const { return n * c * h * w; }
  bool operator==(const Shape& o) const = default;
  std::string str() const { return cat(n, "x", c, "x", h, "x", w); }
};

// Dense NCHW tensor. Plain value type: copy/move do the obvious thing and
// instances are safe to share across threads once filled.
template <typename T>
struct Tensor {
  Shape shape{};
  std::vector<T> data;

  Tensor() = default;
  explicit Tensor(Shape s, T fill = T(0))
      : shape(s), data(static_cast<std::size_t>(s.numel()), fill) {}

  i64 numel() const { return shape.numel(); }
  bool empty() const { return data.empty(); }
  T* ptr() { return data.data(); }
  const T* ptr() const { return data.data(); }

  i64 index(i64 in, i64 ic, i64 iy, i64 ix) const {
    return ((in * shape.c + ic) * shape.h + iy) * shape.w + ix;
  }
  T& at(i64 in, i64 ic, i64 iy, i64 ix) {
    return data[static_cast<std::size_t>(index(in, ic, iy, ix))];
  }
  const T& at(i64 in, i64 ic, i64 iy, i64 ix) const {
    return data[static_cast<std::size_t>(index(in, ic, iy, ix))];
  }

  void fill(T v) { std::fill(data.begin(), data.end(), v); }

  bool all_finite() const {
    for (T v : data) {
      if (!std::isfinite(static_cast<double>(v))) return false;
    }
    return true;
  }
};

using Tensorf = Tensor<float>;
using Tensord = Tensor<double>;

template <typename To, typename From>
Tensor<To> cast(const Tensor<From>& t) {
  Tensor<To> out(t.shape);
  for (i64 i = 0; i < t.numel(); ++i) {
    out.data[static_cast<std::size_t>(i)] = static_cast<To>(t.data[static_cast<std::size_t>(i)]);
  }
  return out;
}

template <typename T>
double max_abs(const Tensor<T>& t) {
  double m = 0.0;
  for (T v : t.data) m = std::max(m, std::abs(static_cast<double>(v)));
  return m;
}

template <typename A, typename B>
double max_abs_diff(const Tensor<A>& a, const Tensor<B>& b) {
  if (!(a.shape == b.shape)) {
    throw ShapeError(cat("max_abs_diff: shape mismatch ", a.shape.str(), " vs ", b.shape.str()));
  }
  double m = 0.0;
  for (i64 i = 0; i < a.numel(); ++i) {
    m = std::max(m, std::abs(static_cast<double>(a.data[static_cast<std::size_t>(i)]) -
                             static_cast<double>(b.data[static_cast<std::size_t>(i)])));
  }
  return m;
}

// Max-norm relative error against a reference (used by the oracle tests).
template <typename A, typename B>
double rel_error(const Tensor<A>& got, const Tensor<B>& ref) {
  const double scale = std::max(1.0, max_abs(ref));
  return max_abs_diff(got, ref) / scale;
}

template <typename T>
bool allclose(const Tensor<T>& a, const Tensor<T>& b, double atol) {
  return a.shape == b.shape && max_abs_diff(a, b) <= atol;
}

inline u64 mix64(u64 x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Seeded RNG with cheap derived streams so that independent parts of a run
// (init, data sampling, synthetic content) do not share state.
class Rng {
 public:
  explicit Rng(u64 seed) : seed_(seed), gen_(mix64(seed)) {}

  Rng child(u64 tag) const { return Rng(mix64(seed_ ^ mix64(tag))); }

  float uniform(float lo, float hi) {
    std::uniform_real_distribution<float> d(lo, hi);
    return d(gen_);
  }
  double uniform_d(double lo, double hi) {
    std::uniform_real_distribution<double> d(lo, hi);
    return d(gen_);
  }
  float normal(float mu, float sd) {
    std::normal_distribution<float> d(mu, sd);
    return d(gen_);
  }
  i64 uniform_int(i64 n) {  // [0, n)
    std::uniform_int_distribution<i64> d(0, n - 1);
    return d(gen_);
  }
  u64 seed() const { return seed_; }

  std::string state() const {
    std::ostringstream os;
    os << gen_;
    return os.str();
  }
  void set_state(const std::string& s) {
    std::istringstream is(s);
    is >> gen_;
    if (is.fail()) throw ValueError("Rng::set_state: malformed state string");
  }

 private:
  u64 seed_;
  std::mt19937_64 gen_;
};

template <typename T>
Tensor<T> uniform_tensor(Shape s, Rng& rng, T lo, T hi) {
  Tensor<T> t(s);
  for (auto& v : t.data) v = static_cast<T>(rng.uniform(static_cast<float>(lo), static_cast<float>(hi)));
  return t;
}

}  // namespace lptn
