#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "wnet/core.hpp"

namespace wnet {

/// Dense batch x height x width x channels tensor (channels innermost).
template <typename T>
struct Tensor4 {
  int n = 0, h = 0, w = 0, c = 0;
  std::vector<T> data;

  Tensor4() = default;
  Tensor4(int n_, int h_, int w_, int c_, T fill = T(0))
      : n(n_), h(h_), w(w_), c(c_), data(static_cast<size_t>(n_) * h_ * w_ * c_, fill) {
    detail::require(n_ >= 1 && h_ >= 1 && w_ >= 1 && c_ >= 1, "tensor dims must be >= 1, got ", shape_string());
  }

  size_t index(int b, int y, int x, int ch) const {
    return ((static_cast<size_t>(b) * h + y) * w + x) * c + ch;
  }
  T& at(int b, int y, int x, int ch) { return data[index(b, y, x, ch)]; }
  const T& at(int b, int y, int x, int ch) const { return data[index(b, y, x, ch)]; }

  size_t size() const { return data.size(); }
  std::array<int, 4> shape() const { return {n, h, w, c}; }
  bool same_shape(const Tensor4& o) const { return shape() == o.shape(); }
  std::string shape_string() const { return detail::concat("[", n, "x", h, "x", w, "x", c, "]"); }

  void fill(T v) { std::fill(data.begin(), data.end(), v); }
  bool empty() const { return data.empty(); }

  template <typename U>
  Tensor4<U> cast() const {
    Tensor4<U> out;
    out.n = n;
    out.h = h;
    out.w = w;
    out.c = c;
    out.data.assign(data.begin(), data.end());
    return out;
  }

  bool all_finite() const {
    for (const T& v : data)
      if (!std::isfinite(v)) return false;
    return true;
  }

  bool operator==(const Tensor4&) const = default;
};

template <typename T>
Tensor4<T> zeros_like(const Tensor4<T>& t) {
  Tensor4<T> z;
  z.n = t.n;
  z.h = t.h;
  z.w = t.w;
  z.c = t.c;
  z.data.assign(t.data.size(), T(0));
  return z;
}

template <typename T>
void add_into(Tensor4<T>& acc, const Tensor4<T>& g) {
  detail::require(acc.same_shape(g), "gradient shape ", g.shape_string(), " does not match ", acc.shape_string());
  for (size_t i = 0; i < acc.data.size(); ++i) acc.data[i] += g.data[i];
}

}  // namespace wnet
