#pragma once

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <stdexcept>
#include <string>
#include <vector>

namespace splitnn {

struct ShapeError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct StateError : std::logic_error {
  using std::logic_error::logic_error;
};

// Dense row-major numeric array. Activations are [channels, length] or flat
// [units]; conv weights use [out, in, taps].
struct Tensor {
  std::vector<std::size_t> shape;
  std::vector<double> data;

  Tensor() = default;

  explicit Tensor(std::initializer_list<std::size_t> s) : shape(s) {
    data.assign(count(shape), 0.0);
  }

  explicit Tensor(std::vector<std::size_t> s) : shape(std::move(s)) {
    data.assign(count(shape), 0.0);
  }

  static std::size_t count(const std::vector<std::size_t>& s) {
    std::size_t n = 1;
    for (std::size_t d : s) {
      if (d == 0) throw ShapeError("tensor dimension must be positive");
      n *= d;
    }
    return s.empty() ? 0 : n;
  }

  std::size_t size() const { return data.size(); }
  std::size_t ndim() const { return shape.size(); }

  std::size_t rows() const { return shape.at(0); }
  std::size_t cols() const { return shape.at(1); }

  double& operator()(std::size_t r, std::size_t c) { return data[r * shape[1] + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data[r * shape[1] + c]; }

  double& operator[](std::size_t i) { return data[i]; }
  double operator[](std::size_t i) const { return data[i]; }

  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  void fill(double v) { data.assign(data.size(), v); }
};

inline void require(bool cond, const std::string& msg) {
  if (!cond) throw ShapeError(msg);
}

inline std::string shape_str(const std::vector<std::size_t>& s) {
  std::string out = "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

// Every kernel output must hold finite values; a NaN anywhere poisons
// training silently, so this check stays on in release builds.
inline void check_finite(const Tensor& t, const char* where) {
  for (double v : t.data) {
    if (!std::isfinite(v))
      throw std::runtime_error(std::string("non-finite value out of ") + where);
  }
}

}  // namespace splitnn
