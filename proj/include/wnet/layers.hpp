#pragma once

// Forward / backward pairs for the network building blocks. Every backward
// is the exact derivative of its forward.

#include <cmath>
#include <vector>

#include "wnet/tensor.hpp"

namespace wnet {

template <typename T>
struct ConvGrads {
  Tensor4<T> input;
  Tensor4<T> weight;
  Tensor4<T> bias;
};

namespace detail {

template <typename T>
void check_conv(const Tensor4<T>& x, const Tensor4<T>& w, const Tensor4<T>& b) {
  require(w.n == w.h && w.n % 2 == 1, "conv kernel must be square with odd size, got ", w.shape_string());
  require(w.w == x.c, "conv kernel expects ", w.w, " input channels but input is ", x.shape_string(), " (kernel ",
          w.shape_string(), ")");
  require(b.n == 1 && b.h == 1 && b.w == 1 && b.c == w.c, "conv bias ", b.shape_string(), " does not match kernel ",
          w.shape_string());
}

}  // namespace detail

/// Same-padded (zero) stride-1 convolution. Kernel layout [k, k, in, out];
/// bias [1, 1, 1, out].
template <typename T>
Tensor4<T> conv2d_forward(const Tensor4<T>& x, const Tensor4<T>& w, const Tensor4<T>& b) {
  detail::check_conv(x, w, b);
  const int k = w.n, r = k / 2, ci = x.c, co = w.c;
  Tensor4<T> y(x.n, x.h, x.w, co);
  for (int n = 0; n < x.n; ++n)
    for (int yy = 0; yy < x.h; ++yy)
      for (int xx = 0; xx < x.w; ++xx) {
        T* __restrict out = &y.at(n, yy, xx, 0);
        for (int o = 0; o < co; ++o) out[o] = b.data[o];
        for (int ky = 0; ky < k; ++ky) {
          const int sy = yy + ky - r;
          if (sy < 0 || sy >= x.h) continue;
          for (int kx = 0; kx < k; ++kx) {
            const int sx = xx + kx - r;
            if (sx < 0 || sx >= x.w) continue;
            const T* in = &x.at(n, sy, sx, 0);
            const T* wk = &w.data[w.index(ky, kx, 0, 0)];
            for (int i = 0; i < ci; ++i) {
              const T a = in[i];
              const T* __restrict wr = wk + static_cast<size_t>(i) * co;
              for (int o = 0; o < co; ++o) out[o] += a * wr[o];
            }
          }
        }
      }
  return y;
}

template <typename T>
ConvGrads<T> conv2d_backward(const Tensor4<T>& x, const Tensor4<T>& w, const Tensor4<T>& dy) {
  detail::require(dy.n == x.n && dy.h == x.h && dy.w == x.w && dy.c == w.c, "conv upstream gradient ",
                  dy.shape_string(), " does not match output of input ", x.shape_string(), " with kernel ",
                  w.shape_string());
  const int k = w.n, r = k / 2, ci = x.c, co = w.c;
  ConvGrads<T> g{zeros_like(x), zeros_like(w), Tensor4<T>(1, 1, 1, co)};
  // Transposed kernel [k, k, out, in] keeps the input-gradient inner loop contiguous.
  std::vector<T> wt(w.size());
  for (int ky = 0; ky < k; ++ky)
    for (int kx = 0; kx < k; ++kx)
      for (int i = 0; i < ci; ++i)
        for (int o = 0; o < co; ++o)
          wt[((static_cast<size_t>(ky) * k + kx) * co + o) * ci + i] = w.at(ky, kx, i, o);

  for (int n = 0; n < x.n; ++n)
    for (int yy = 0; yy < x.h; ++yy)
      for (int xx = 0; xx < x.w; ++xx) {
        const T* __restrict up = &dy.at(n, yy, xx, 0);
        for (int o = 0; o < co; ++o) g.bias.data[o] += up[o];
        for (int ky = 0; ky < k; ++ky) {
          const int sy = yy + ky - r;
          if (sy < 0 || sy >= x.h) continue;
          for (int kx = 0; kx < k; ++kx) {
            const int sx = xx + kx - r;
            if (sx < 0 || sx >= x.w) continue;
            const T* in = &x.at(n, sy, sx, 0);
            T* __restrict din = &g.input.at(n, sy, sx, 0);
            T* dwk = &g.weight.data[w.index(ky, kx, 0, 0)];
            for (int i = 0; i < ci; ++i) {
              const T a = in[i];
              T* __restrict dwr = dwk + static_cast<size_t>(i) * co;
              for (int o = 0; o < co; ++o) dwr[o] += a * up[o];
            }
            const T* wtk = &wt[(static_cast<size_t>(ky) * k + kx) * co * ci];
            for (int o = 0; o < co; ++o) {
              const T gv = up[o];
              const T* __restrict wr = wtk + static_cast<size_t>(o) * ci;
              for (int i = 0; i < ci; ++i) din[i] += gv * wr[i];
            }
          }
        }
      }
  return g;
}

/// 1x1 convolution (per-pixel affine map across channels).
template <typename T>
Tensor4<T> linear_1x1_forward(const Tensor4<T>& x, const Tensor4<T>& w, const Tensor4<T>& b) {
  detail::require(w.n == 1 && w.h == 1, "linear_1x1 kernel must be 1x1, got ", w.shape_string());
  return conv2d_forward(x, w, b);
}

template <typename T>
ConvGrads<T> linear_1x1_backward(const Tensor4<T>& x, const Tensor4<T>& w, const Tensor4<T>& dy) {
  return conv2d_backward(x, w, dy);
}

template <typename T>
Tensor4<T> relu_forward(const Tensor4<T>& x) {
  Tensor4<T> y = x;
  for (T& v : y.data) v = v > T(0) ? v : T(0);
  return y;
}

/// Gradient passes where the forward input was strictly positive.
template <typename T>
Tensor4<T> relu_backward(const Tensor4<T>& x, const Tensor4<T>& dy) {
  detail::require(x.same_shape(dy), "relu gradient ", dy.shape_string(), " vs input ", x.shape_string());
  Tensor4<T> dx = dy;
  for (size_t i = 0; i < dx.data.size(); ++i)
    if (!(x.data[i] > T(0))) dx.data[i] = T(0);
  return dx;
}

/// 2x2 max pooling, stride 2. Ties go to the first element in raster order.
template <typename T>
Tensor4<T> maxpool2_forward(const Tensor4<T>& x) {
  detail::require(x.h % 2 == 0 && x.w % 2 == 0, "maxpool2 needs even spatial dims, got ", x.shape_string());
  Tensor4<T> y(x.n, x.h / 2, x.w / 2, x.c);
  for (int n = 0; n < x.n; ++n)
    for (int yy = 0; yy < y.h; ++yy)
      for (int xx = 0; xx < y.w; ++xx)
        for (int ch = 0; ch < x.c; ++ch) {
          T m = x.at(n, 2 * yy, 2 * xx, ch);
          m = std::max(m, x.at(n, 2 * yy, 2 * xx + 1, ch));
          m = std::max(m, x.at(n, 2 * yy + 1, 2 * xx, ch));
          m = std::max(m, x.at(n, 2 * yy + 1, 2 * xx + 1, ch));
          y.at(n, yy, xx, ch) = m;
        }
  return y;
}

template <typename T>
Tensor4<T> maxpool2_backward(const Tensor4<T>& x, const Tensor4<T>& dy) {
  detail::require(dy.n == x.n && dy.h * 2 == x.h && dy.w * 2 == x.w && dy.c == x.c, "maxpool2 gradient ",
                  dy.shape_string(), " vs input ", x.shape_string());
  Tensor4<T> dx = zeros_like(x);
  for (int n = 0; n < x.n; ++n)
    for (int yy = 0; yy < dy.h; ++yy)
      for (int xx = 0; xx < dy.w; ++xx)
        for (int ch = 0; ch < x.c; ++ch) {
          int by = 2 * yy, bx = 2 * xx;
          T m = x.at(n, by, bx, ch);
          for (int d = 1; d < 4; ++d) {
            const int sy = 2 * yy + d / 2, sx = 2 * xx + d % 2;
            if (x.at(n, sy, sx, ch) > m) {
              m = x.at(n, sy, sx, ch);
              by = sy;
              bx = sx;
            }
          }
          dx.at(n, by, bx, ch) += dy.at(n, yy, xx, ch);
        }
  return dx;
}

/// Nearest-neighbor x2 upsampling.
template <typename T>
Tensor4<T> upsample2_forward(const Tensor4<T>& x) {
  Tensor4<T> y(x.n, x.h * 2, x.w * 2, x.c);
  for (int n = 0; n < y.n; ++n)
    for (int yy = 0; yy < y.h; ++yy)
      for (int xx = 0; xx < y.w; ++xx)
        for (int ch = 0; ch < y.c; ++ch) y.at(n, yy, xx, ch) = x.at(n, yy / 2, xx / 2, ch);
  return y;
}

template <typename T>
Tensor4<T> upsample2_backward(const Tensor4<T>& x, const Tensor4<T>& dy) {
  detail::require(dy.n == x.n && dy.h == 2 * x.h && dy.w == 2 * x.w && dy.c == x.c, "upsample2 gradient ",
                  dy.shape_string(), " vs input ", x.shape_string());
  Tensor4<T> dx = zeros_like(x);
  for (int n = 0; n < dy.n; ++n)
    for (int yy = 0; yy < dy.h; ++yy)
      for (int xx = 0; xx < dy.w; ++xx)
        for (int ch = 0; ch < dy.c; ++ch) dx.at(n, yy / 2, xx / 2, ch) += dy.at(n, yy, xx, ch);
  return dx;
}

/// Channel concatenation [a | b].
template <typename T>
Tensor4<T> concat_forward(const Tensor4<T>& a, const Tensor4<T>& b) {
  detail::require(a.n == b.n && a.h == b.h && a.w == b.w, "concat spatial mismatch: ", a.shape_string(), " vs ",
                  b.shape_string());
  Tensor4<T> y(a.n, a.h, a.w, a.c + b.c);
  for (size_t p = 0; p < static_cast<size_t>(a.n) * a.h * a.w; ++p) {
    std::copy_n(&a.data[p * a.c], a.c, &y.data[p * y.c]);
    std::copy_n(&b.data[p * b.c], b.c, &y.data[p * y.c + a.c]);
  }
  return y;
}

template <typename T>
std::pair<Tensor4<T>, Tensor4<T>> concat_backward(const Tensor4<T>& a, const Tensor4<T>& b, const Tensor4<T>& dy) {
  detail::require(dy.n == a.n && dy.h == a.h && dy.w == a.w && dy.c == a.c + b.c, "concat gradient ",
                  dy.shape_string(), " vs inputs ", a.shape_string(), " + ", b.shape_string());
  Tensor4<T> da = zeros_like(a), db = zeros_like(b);
  for (size_t p = 0; p < static_cast<size_t>(a.n) * a.h * a.w; ++p) {
    std::copy_n(&dy.data[p * dy.c], a.c, &da.data[p * a.c]);
    std::copy_n(&dy.data[p * dy.c + a.c], b.c, &db.data[p * b.c]);
  }
  return {std::move(da), std::move(db)};
}

/// Per-pixel x / max(|x|, eps) across channels.
template <typename T>
Tensor4<T> l2_normalize_channels(const Tensor4<T>& x, double eps = 1e-8) {
  Tensor4<T> y = x;
  for (size_t p = 0; p < static_cast<size_t>(x.n) * x.h * x.w; ++p) {
    T s = 0;
    for (int ch = 0; ch < x.c; ++ch) s += x.data[p * x.c + ch] * x.data[p * x.c + ch];
    const T inv = T(1) / std::max(std::sqrt(s), static_cast<T>(eps));
    for (int ch = 0; ch < x.c; ++ch) y.data[p * x.c + ch] *= inv;
  }
  return y;
}

template <typename T>
Tensor4<T> l2_normalize_channels_backward(const Tensor4<T>& x, const Tensor4<T>& dy, double eps = 1e-8) {
  detail::require(x.same_shape(dy), "l2 normalize gradient ", dy.shape_string(), " vs input ", x.shape_string());
  Tensor4<T> dx = zeros_like(x);
  for (size_t p = 0; p < static_cast<size_t>(x.n) * x.h * x.w; ++p) {
    const T* xv = &x.data[p * x.c];
    const T* g = &dy.data[p * x.c];
    T* out = &dx.data[p * x.c];
    T s = 0;
    for (int ch = 0; ch < x.c; ++ch) s += xv[ch] * xv[ch];
    const T nrm = std::sqrt(s);
    if (nrm > static_cast<T>(eps)) {
      T proj = 0;
      for (int ch = 0; ch < x.c; ++ch) proj += xv[ch] * g[ch];
      proj /= s;
      for (int ch = 0; ch < x.c; ++ch) out[ch] = (g[ch] - xv[ch] * proj) / nrm;
    } else {
      for (int ch = 0; ch < x.c; ++ch) out[ch] = g[ch] / static_cast<T>(eps);
    }
  }
  return dx;
}

/// Channel 0 = column / (w - 1), channel 1 = row / (h - 1).
template <typename T>
Tensor4<T> coordinate_channels(int h, int w, int batch = 1) {
  detail::require(h >= 2 && w >= 2, "coordinate channels need h, w >= 2, got ", h, "x", w);
  Tensor4<T> t(batch, h, w, 2);
  for (int n = 0; n < batch; ++n)
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) {
        t.at(n, y, x, 0) = static_cast<T>(x) / static_cast<T>(w - 1);
        t.at(n, y, x, 1) = static_cast<T>(y) / static_cast<T>(h - 1);
      }
  return t;
}

}  // namespace wnet
