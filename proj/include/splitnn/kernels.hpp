#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <utility>
#include <vector>

#include "splitnn/tensor.hpp"

namespace splitnn {

// 1D cross-correlation with symmetric "same" zero padding, stride 1.
// x: [Cin, L], w: [Cout, Cin, K] (K odd), b: [Cout] -> z: [Cout, L]
// z[k][t] = b[k] + sum_j sum_u x[j][t+u-p] * w[k][j][u],  p = (K-1)/2
inline Tensor conv1d_forward(const Tensor& x, const Tensor& w, const Tensor& b) {
  require(x.ndim() == 2, "conv1d_forward: input must be [channels, length], got " + shape_str(x.shape));
  require(w.ndim() == 3, "conv1d_forward: weights must be [out, in, taps], got " + shape_str(w.shape));
  const std::size_t cout = w.shape[0], cin = w.shape[1], K = w.shape[2];
  const std::size_t L = x.shape[1];
  require(K % 2 == 1, "conv1d_forward: filter size must be odd");
  require(x.shape[0] == cin, "conv1d_forward: input channels " + std::to_string(x.shape[0]) +
                                 " != weight in-channels " + std::to_string(cin));
  require(b.ndim() == 1 && b.shape[0] == cout, "conv1d_forward: bias shape mismatch");
  const std::size_t p = (K - 1) / 2;

  Tensor z({cout, L});
  for (std::size_t k = 0; k < cout; ++k) {
    const double* wk = &w.data[k * cin * K];
    for (std::size_t t = 0; t < L; ++t) {
      double acc = b.data[k];
      // valid taps: 0 <= t + u - p < L
      const std::size_t u_lo = p > t ? p - t : 0;
      const std::size_t u_hi = std::min(K, L + p - t);
      for (std::size_t j = 0; j < cin; ++j) {
        const double* xj = &x.data[j * L + t - p];
        const double* wkj = wk + j * K;
        for (std::size_t u = u_lo; u < u_hi; ++u) acc += xj[u] * wkj[u];
      }
      z.data[k * L + t] = acc;
    }
  }
  check_finite(z, "conv1d_forward");
  return z;
}

// Gradient w.r.t. the conv input: full correlation of the output gradient
// with the tap-reversed filters, cropped back to the same-pad geometry.
// g: [Cout, L] -> gx: [Cin, L];  gx[j][s] = sum_k sum_u g[k][s+p-u] * w[k][j][u]
inline Tensor conv1d_backward_input(const Tensor& g, const Tensor& w) {
  require(g.ndim() == 2, "conv1d_backward_input: gradient must be 2D");
  const std::size_t cout = w.shape[0], cin = w.shape[1], K = w.shape[2];
  const std::size_t L = g.shape[1];
  require(g.shape[0] == cout, "conv1d_backward_input: gradient channels mismatch");
  const std::size_t p = (K - 1) / 2;

  Tensor gx({cin, L});
  for (std::size_t j = 0; j < cin; ++j) {
    for (std::size_t s = 0; s < L; ++s) {
      double acc = 0.0;
      // valid taps: 0 <= s + p - u < L
      const std::size_t u_lo = s + p >= L ? s + p - L + 1 : 0;
      const std::size_t u_hi = std::min(K, s + p + 1);
      for (std::size_t k = 0; k < cout; ++k) {
        const double* gk = &g.data[k * L + s + p];
        const double* wkj = &w.data[(k * cin + j) * K];
        for (std::size_t u = u_lo; u < u_hi; ++u) acc += gk[-static_cast<std::ptrdiff_t>(u)] * wkj[u];
      }
      gx.data[j * L + s] = acc;
    }
  }
  check_finite(gx, "conv1d_backward_input");
  return gx;
}

// Parameter gradients, accumulated into gw/gb (callers zero them per batch).
// gw[k][j][u] += sum_t g[k][t] * x[j][t+u-p];  gb[k] += sum_t g[k][t]
inline void conv1d_backward_params(const Tensor& x, const Tensor& g, const Tensor& w_shape_ref,
                                   Tensor& gw, Tensor& gb) {
  const std::size_t cout = w_shape_ref.shape[0], cin = w_shape_ref.shape[1], K = w_shape_ref.shape[2];
  const std::size_t L = x.shape[1];
  require(g.shape[0] == cout && g.shape[1] == L, "conv1d_backward_params: gradient shape mismatch");
  require(x.shape[0] == cin, "conv1d_backward_params: input shape mismatch");
  require(gw.same_shape(w_shape_ref) && gb.shape[0] == cout, "conv1d_backward_params: accumulator shape mismatch");
  const std::size_t p = (K - 1) / 2;

  for (std::size_t k = 0; k < cout; ++k) {
    const double* gk = &g.data[k * L];
    for (std::size_t j = 0; j < cin; ++j) {
      const double* xj = &x.data[j * L];
      for (std::size_t u = 0; u < K; ++u) {
        // valid t: 0 <= t + u - p < L
        const std::size_t t_lo = p > u ? p - u : 0;
        const std::size_t t_hi = std::min(L, L + p - u);
        double acc = 0.0;
        for (std::size_t t = t_lo; t < t_hi; ++t) acc += gk[t] * xj[t + u - p];
        gw.data[(k * cin + j) * K + u] += acc;
      }
    }
    double bacc = 0.0;
    for (std::size_t t = 0; t < L; ++t) bacc += gk[t];
    gb.data[k] += bacc;
  }
}

inline Tensor leaky_relu(const Tensor& z, double alpha) {
  Tensor y(z.shape);
  for (std::size_t i = 0; i < z.size(); ++i) {
    double v = z.data[i];
    y.data[i] = v > 0.0 ? v : alpha * v;
  }
  check_finite(y, "leaky_relu");
  return y;
}

// Slope at exactly zero follows the negative branch.
inline Tensor leaky_relu_backward(const Tensor& z, const Tensor& g, double alpha) {
  require(z.same_shape(g), "leaky_relu_backward: shape mismatch");
  Tensor gx(z.shape);
  for (std::size_t i = 0; i < z.size(); ++i)
    gx.data[i] = g.data[i] * (z.data[i] > 0.0 ? 1.0 : alpha);
  return gx;
}

// Window-2 stride-2 max pooling over the length axis; ties pick the left
// element. idx stores absolute input offsets for the backward scatter.
inline Tensor maxpool2(const Tensor& x, std::vector<std::size_t>& idx) {
  require(x.ndim() == 2, "maxpool2: input must be 2D");
  const std::size_t C = x.shape[0], L = x.shape[1];
  require(L % 2 == 0, "maxpool2: length must be even, got " + std::to_string(L));
  Tensor y({C, L / 2});
  idx.assign(C * (L / 2), 0);
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t t = 0; t < L / 2; ++t) {
      const std::size_t a = c * L + 2 * t;
      const std::size_t pick = x.data[a] >= x.data[a + 1] ? a : a + 1;
      y.data[c * (L / 2) + t] = x.data[pick];
      idx[c * (L / 2) + t] = pick;
    }
  }
  return y;
}

inline Tensor maxpool2_backward(const Tensor& g, const std::vector<std::size_t>& idx,
                                const std::vector<std::size_t>& in_shape) {
  Tensor gx(in_shape);
  require(g.size() == idx.size(), "maxpool2_backward: index cache mismatch");
  for (std::size_t i = 0; i < g.size(); ++i) gx.data[idx[i]] += g.data[i];
  return gx;
}

// z = W a + b.  W: [out, in], a: [in] -> z: [out]
inline Tensor dense_forward(const Tensor& W, const Tensor& b, const Tensor& a) {
  require(W.ndim() == 2, "dense_forward: weights must be 2D");
  const std::size_t out = W.shape[0], in = W.shape[1];
  require(a.ndim() == 1 && a.shape[0] == in,
          "dense_forward: input " + shape_str(a.shape) + " != weight columns " + std::to_string(in));
  require(b.shape[0] == out, "dense_forward: bias shape mismatch");
  Tensor z({out});
  for (std::size_t r = 0; r < out; ++r) {
    double acc = b.data[r];
    const double* wr = &W.data[r * in];
    for (std::size_t c = 0; c < in; ++c) acc += wr[c] * a.data[c];
    z.data[r] = acc;
  }
  check_finite(z, "dense_forward");
  return z;
}

// ga = W^T g; gW += g a^T; gb += g
inline Tensor dense_backward(const Tensor& W, const Tensor& a, const Tensor& g,
                             Tensor& gW, Tensor& gb) {
  const std::size_t out = W.shape[0], in = W.shape[1];
  require(g.shape[0] == out, "dense_backward: gradient shape mismatch");
  Tensor ga({in});
  for (std::size_t r = 0; r < out; ++r) {
    const double gr = g.data[r];
    const double* wr = &W.data[r * in];
    double* gwr = &gW.data[r * in];
    for (std::size_t c = 0; c < in; ++c) {
      ga.data[c] += wr[c] * gr;
      gwr[c] += gr * a.data[c];
    }
    gb.data[r] += gr;
  }
  check_finite(ga, "dense_backward");
  return ga;
}

inline Tensor flatten(const Tensor& x) {
  Tensor y({x.size()});
  y.data = x.data;
  return y;
}

// Max-subtraction stabilized softmax; loss = -log p[label].
// The logit gradient is (p - onehot); batch scaling is the caller's.
struct SoftmaxResult {
  Tensor probs;
  double loss = 0.0;
};

inline Tensor softmax(const Tensor& z) {
  require(z.ndim() == 1, "softmax: logits must be 1D");
  Tensor p(z.shape);
  double m = z.data[0];
  for (double v : z.data) m = std::max(m, v);
  double sum = 0.0;
  for (std::size_t i = 0; i < z.size(); ++i) {
    p.data[i] = std::exp(z.data[i] - m);
    sum += p.data[i];
  }
  for (double& v : p.data) v /= sum;
  check_finite(p, "softmax");
  return p;
}

inline double cross_entropy(const Tensor& probs, std::uint8_t label) {
  require(label < probs.size(), "cross_entropy: label out of range");
  return -std::log(std::max(probs.data[label], 1e-300));
}

inline SoftmaxResult softmax_cross_entropy(const Tensor& z, std::uint8_t label) {
  SoftmaxResult r;
  r.probs = softmax(z);
  r.loss = cross_entropy(r.probs, label);
  return r;
}

inline Tensor softmax_cross_entropy_grad(const Tensor& probs, std::uint8_t label) {
  Tensor g(probs.shape);
  g.data = probs.data;
  g.data[label] -= 1.0;
  return g;
}

}  // namespace splitnn
