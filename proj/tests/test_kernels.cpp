#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <vector>

#include "splitnn/adam.hpp"
#include "splitnn/kernels.hpp"
#include "splitnn/rng.hpp"
#include "splitnn/tensor.hpp"

using namespace splitnn;

namespace {

// Reference conv written straight from the defining sum with explicit
// bounds checks. Element accumulation order matches the definition
// (out channel, position, in channel, tap) so agreement is exact.
Tensor oracle_conv_forward(const Tensor& x, const Tensor& w, const Tensor& b) {
  const std::size_t cout = w.shape[0], cin = w.shape[1], K = w.shape[2], L = x.shape[1];
  const std::ptrdiff_t p = static_cast<std::ptrdiff_t>((K - 1) / 2);
  Tensor z({cout, L});
  for (std::size_t k = 0; k < cout; ++k)
    for (std::size_t t = 0; t < L; ++t) {
      double acc = b.data[k];
      for (std::size_t j = 0; j < cin; ++j)
        for (std::size_t u = 0; u < K; ++u) {
          std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + u) - p;
          if (src >= 0 && src < static_cast<std::ptrdiff_t>(L))
            acc += x.data[j * L + src] * w.data[(k * cin + j) * K + u];
        }
      z.data[k * L + t] = acc;
    }
  return z;
}

Tensor oracle_conv_backward_input(const Tensor& g, const Tensor& w) {
  const std::size_t cout = w.shape[0], cin = w.shape[1], K = w.shape[2], L = g.shape[1];
  const std::ptrdiff_t p = static_cast<std::ptrdiff_t>((K - 1) / 2);
  Tensor gx({cin, L});
  for (std::size_t j = 0; j < cin; ++j)
    for (std::size_t s = 0; s < L; ++s) {
      double acc = 0.0;
      for (std::size_t k = 0; k < cout; ++k)
        for (std::size_t u = 0; u < K; ++u) {
          std::ptrdiff_t t = static_cast<std::ptrdiff_t>(s) + p - static_cast<std::ptrdiff_t>(u);
          if (t >= 0 && t < static_cast<std::ptrdiff_t>(L))
            acc += g.data[k * L + t] * w.data[(k * cin + j) * K + u];
        }
      gx.data[j * L + s] = acc;
    }
  return gx;
}

void oracle_conv_backward_params(const Tensor& x, const Tensor& g, const Tensor& wref,
                                 Tensor& gw, Tensor& gb) {
  const std::size_t cout = wref.shape[0], cin = wref.shape[1], K = wref.shape[2], L = x.shape[1];
  const std::ptrdiff_t p = static_cast<std::ptrdiff_t>((K - 1) / 2);
  for (std::size_t k = 0; k < cout; ++k) {
    for (std::size_t j = 0; j < cin; ++j)
      for (std::size_t u = 0; u < K; ++u) {
        double acc = 0.0;
        for (std::size_t t = 0; t < L; ++t) {
          std::ptrdiff_t src = static_cast<std::ptrdiff_t>(t + u) - p;
          if (src >= 0 && src < static_cast<std::ptrdiff_t>(L))
            acc += g.data[k * L + t] * x.data[j * L + src];
        }
        gw.data[(k * cin + j) * K + u] += acc;
      }
    double bacc = 0.0;
    for (std::size_t t = 0; t < L; ++t) bacc += g.data[k * L + t];
    gb.data[k] += bacc;
  }
}

Tensor random_tensor(Rng& rng, std::vector<std::size_t> shape, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.data) v = rng.uniform(lo, hi);
  return t;
}

double dot(const Tensor& a, const Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a.data[i] * b.data[i];
  return s;
}

double max_abs(const Tensor& t) {
  double m = 0.0;
  for (double v : t.data) m = std::max(m, std::fabs(v));
  return m;
}

// max-norm relative deviation between an analytic gradient vector and its
// central finite-difference estimate
double vec_rel_err(const std::vector<double>& fd, const std::vector<double>& an) {
  double scale = 1e-8, err = 0.0;
  for (double v : an) scale = std::max(scale, std::fabs(v));
  for (std::size_t i = 0; i < fd.size(); ++i) err = std::max(err, std::fabs(fd[i] - an[i]));
  return err / scale;
}

constexpr double kFdStep = 1e-5;

}  // namespace

TEST_CASE("conv1d forward matches hand-computed same-pad example") {
  Tensor x({1, 4});
  x.data = {1, 2, 3, 4};
  Tensor w({1, 1, 3});
  w.data = {1, 0, -1};
  Tensor b({1});
  Tensor z = conv1d_forward(x, w, b);
  REQUIRE(z.shape == std::vector<std::size_t>{1, 4});
  CHECK(z.data[0] == -2.0);
  CHECK(z.data[1] == -2.0);
  CHECK(z.data[2] == -2.0);
  CHECK(z.data[3] == 3.0);
}

TEST_CASE("conv1d K=1 identity kernel reproduces the input") {
  Rng rng(7);
  Tensor x = random_tensor(rng, {3, 10});
  Tensor w({3, 3, 1});
  for (std::size_t k = 0; k < 3; ++k) w.data[k * 3 + k] = 1.0;  // [k][j][0]
  Tensor b({3});
  Tensor z = conv1d_forward(x, w, b);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(z.data[i] == x.data[i]);
}

TEST_CASE("conv1d forward matches naive quadruple-loop oracle exactly") {
  Rng rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    std::size_t cin = 1 + rng.next_below(4);
    std::size_t cout = 1 + rng.next_below(4);
    std::size_t K = 1 + 2 * rng.next_below(4);  // odd 1..7
    std::size_t L = K + rng.next_below(20);
    Tensor x = random_tensor(rng, {cin, L});
    Tensor w = random_tensor(rng, {cout, cin, K});
    Tensor b = random_tensor(rng, {cout});
    Tensor z = conv1d_forward(x, w, b);
    Tensor zo = oracle_conv_forward(x, w, b);
    for (std::size_t i = 0; i < z.size(); ++i) REQUIRE(z.data[i] == zo.data[i]);
  }
}

TEST_CASE("conv1d backward kernels match naive oracles exactly") {
  Rng rng(13);
  for (int trial = 0; trial < 50; ++trial) {
    std::size_t cin = 1 + rng.next_below(3);
    std::size_t cout = 1 + rng.next_below(3);
    std::size_t K = 1 + 2 * rng.next_below(4);
    std::size_t L = K + rng.next_below(16);
    Tensor x = random_tensor(rng, {cin, L});
    Tensor w = random_tensor(rng, {cout, cin, K});
    Tensor g = random_tensor(rng, {cout, L});

    Tensor gx = conv1d_backward_input(g, w);
    Tensor gxo = oracle_conv_backward_input(g, w);
    for (std::size_t i = 0; i < gx.size(); ++i) REQUIRE(gx.data[i] == gxo.data[i]);

    Tensor gw(w.shape), gb({cout}), gwo(w.shape), gbo({cout});
    conv1d_backward_params(x, g, w, gw, gb);
    oracle_conv_backward_params(x, g, w, gwo, gbo);
    for (std::size_t i = 0; i < gw.size(); ++i) REQUIRE(gw.data[i] == gwo.data[i]);
    for (std::size_t i = 0; i < gb.size(); ++i) REQUIRE(gb.data[i] == gbo.data[i]);
  }
}

TEST_CASE("conv1d backward for 1x5 input K=3 equals the quadruple-loop oracle") {
  Rng rng(17);
  Tensor x = random_tensor(rng, {1, 5});
  Tensor w = random_tensor(rng, {1, 1, 3});
  Tensor g = random_tensor(rng, {1, 5});
  Tensor gx = conv1d_backward_input(g, w);
  Tensor gxo = oracle_conv_backward_input(g, w);
  for (std::size_t i = 0; i < gx.size(); ++i) REQUIRE(gx.data[i] == gxo.data[i]);
}

TEST_CASE("conv1d weight gradient for K=1 sums elementwise products") {
  Tensor x({1, 4});
  x.data = {1, 2, 3, 4};
  Tensor g({1, 4});
  g.data = {1, 1, 1, 1};
  Tensor w({1, 1, 1});
  Tensor gw(w.shape), gb({1});
  conv1d_backward_params(x, g, w, gw, gb);
  CHECK(gw.data[0] == 10.0);
  CHECK(gb.data[0] == 4.0);
}

TEST_CASE("conv1d backward input is the exact adjoint of forward") {
  Rng rng(19);
  for (int trial = 0; trial < 20; ++trial) {
    std::size_t cin = 1 + rng.next_below(3);
    std::size_t cout = 1 + rng.next_below(3);
    std::size_t K = 1 + 2 * rng.next_below(4);
    std::size_t L = K + rng.next_below(24);
    Tensor x = random_tensor(rng, {cin, L});
    Tensor w = random_tensor(rng, {cout, cin, K});
    Tensor b({cout});
    Tensor g = random_tensor(rng, {cout, L});
    // <conv(x), g> == <x, conv_bwd(g)> when bias is zero
    double lhs = dot(conv1d_forward(x, w, b), g);
    double rhs = dot(x, conv1d_backward_input(g, w));
    REQUIRE(std::fabs(lhs - rhs) <= 1e-9 * std::max(1.0, std::fabs(lhs)));
  }
}

TEST_CASE("conv1d gradients match central finite differences") {
  Rng rng(23);
  Tensor x = random_tensor(rng, {2, 9});
  Tensor w = random_tensor(rng, {3, 2, 5});
  Tensor b = random_tensor(rng, {3});
  Tensor R = random_tensor(rng, {2 * 0 + 3, 9});  // fixed projection, loss = <z, R>

  Tensor gx_an = conv1d_backward_input(R, w);
  Tensor gw_an(w.shape), gb_an({3});
  conv1d_backward_params(x, R, w, gw_an, gb_an);

  auto loss = [&](const Tensor& xx, const Tensor& ww, const Tensor& bb) {
    return dot(conv1d_forward(xx, ww, bb), R);
  };

  std::vector<double> fd, an;
  for (std::size_t i = 0; i < x.size(); ++i) {
    Tensor xp = x, xm = x;
    xp.data[i] += kFdStep;
    xm.data[i] -= kFdStep;
    fd.push_back((loss(xp, w, b) - loss(xm, w, b)) / (2 * kFdStep));
    an.push_back(gx_an.data[i]);
  }
  CHECK(vec_rel_err(fd, an) <= 1e-6);

  fd.clear();
  an.clear();
  for (std::size_t i = 0; i < w.size(); ++i) {
    Tensor wp = w, wm = w;
    wp.data[i] += kFdStep;
    wm.data[i] -= kFdStep;
    fd.push_back((loss(x, wp, b) - loss(x, wm, b)) / (2 * kFdStep));
    an.push_back(gw_an.data[i]);
  }
  for (std::size_t i = 0; i < b.size(); ++i) {
    Tensor bp = b, bm = b;
    bp.data[i] += kFdStep;
    bm.data[i] -= kFdStep;
    fd.push_back((loss(x, w, bp) - loss(x, w, bm)) / (2 * kFdStep));
    an.push_back(gb_an.data[i]);
  }
  CHECK(vec_rel_err(fd, an) <= 1e-6);
}

TEST_CASE("leaky relu forward and backward") {
  Tensor z({3});
  z.data = {-1.0, 0.0, 2.0};
  Tensor y = leaky_relu(z, 0.01);
  CHECK(y.data[0] == -0.01);
  CHECK(y.data[1] == 0.0);
  CHECK(y.data[2] == 2.0);

  Tensor g({3});
  g.data = {1.0, 1.0, 1.0};
  Tensor gz = leaky_relu_backward(z, g, 0.01);
  CHECK(gz.data[0] == 0.01);
  CHECK(gz.data[1] == 0.01);  // zero input follows the negative branch
  CHECK(gz.data[2] == 1.0);

  // finite differences away from the kink
  Rng rng(29);
  for (int trial = 0; trial < 100; ++trial) {
    double v = rng.uniform(0.1, 2.0) * (rng.next_below(2) ? 1.0 : -1.0);
    Tensor zz({1});
    zz.data = {v};
    Tensor one({1});
    one.data = {1.0};
    double an = leaky_relu_backward(zz, one, 0.01).data[0];
    Tensor zp = zz, zm = zz;
    zp.data[0] += kFdStep;
    zm.data[0] -= kFdStep;
    double fd = (leaky_relu(zp, 0.01).data[0] - leaky_relu(zm, 0.01).data[0]) / (2 * kFdStep);
    REQUIRE(std::fabs(fd - an) <= 1e-6 * std::max(1.0, std::fabs(an)));
  }
}

TEST_CASE("maxpool2 picks window maxima, ties to the left") {
  Tensor x({1, 4});
  x.data = {1, 3, 2, 2};
  std::vector<std::size_t> idx;
  Tensor y = maxpool2(x, idx);
  REQUIRE(y.shape == std::vector<std::size_t>{1, 2});
  CHECK(y.data[0] == 3.0);
  CHECK(y.data[1] == 2.0);
  CHECK(idx[0] == 1);
  CHECK(idx[1] == 2);

  Tensor g({1, 2});
  g.data = {5.0, 7.0};
  Tensor gx = maxpool2_backward(g, idx, x.shape);
  CHECK(gx.data[0] == 0.0);
  CHECK(gx.data[1] == 5.0);
  CHECK(gx.data[2] == 7.0);
  CHECK(gx.data[3] == 0.0);
}

TEST_CASE("maxpool2 rejects odd lengths") {
  Tensor x({1, 5});
  std::vector<std::size_t> idx;
  CHECK_THROWS_AS(maxpool2(x, idx), ShapeError);
}

TEST_CASE("maxpool2 gradient routes only to argmax positions") {
  Rng rng(31);
  for (int trial = 0; trial < 50; ++trial) {
    Tensor x = random_tensor(rng, {2, 12});
    std::vector<std::size_t> idx;
    Tensor y = maxpool2(x, idx);
    Tensor g = random_tensor(rng, {2, 6});
    Tensor gx = maxpool2_backward(g, idx, x.shape);
    // each window kicks its gradient to exactly one input slot
    for (std::size_t c = 0; c < 2; ++c)
      for (std::size_t t = 0; t < 6; ++t) {
        double a = gx.data[c * 12 + 2 * t], bb = gx.data[c * 12 + 2 * t + 1];
        REQUIRE((a == 0.0 || bb == 0.0));
        REQUIRE(a + bb == g.data[c * 6 + t]);
      }
  }
}

TEST_CASE("dense forward/backward vs finite differences") {
  Rng rng(37);
  Tensor W = random_tensor(rng, {4, 6});
  Tensor b = random_tensor(rng, {4});
  Tensor a = random_tensor(rng, {6});
  Tensor R = random_tensor(rng, {4});

  Tensor gW(W.shape), gb(b.shape);
  Tensor ga = dense_backward(W, a, R, gW, gb);

  auto loss = [&](const Tensor& WW, const Tensor& bb, const Tensor& aa) {
    return dot(dense_forward(WW, bb, aa), R);
  };
  std::vector<double> fd, an;
  for (std::size_t i = 0; i < a.size(); ++i) {
    Tensor ap = a, am = a;
    ap.data[i] += kFdStep;
    am.data[i] -= kFdStep;
    fd.push_back((loss(W, b, ap) - loss(W, b, am)) / (2 * kFdStep));
    an.push_back(ga.data[i]);
  }
  for (std::size_t i = 0; i < W.size(); ++i) {
    Tensor Wp = W, Wm = W;
    Wp.data[i] += kFdStep;
    Wm.data[i] -= kFdStep;
    fd.push_back((loss(Wp, b, a) - loss(Wm, b, a)) / (2 * kFdStep));
    an.push_back(gW.data[i]);
  }
  for (std::size_t i = 0; i < b.size(); ++i) {
    Tensor bp = b, bm = b;
    bp.data[i] += kFdStep;
    bm.data[i] -= kFdStep;
    fd.push_back((loss(W, bp, a) - loss(W, bm, a)) / (2 * kFdStep));
    an.push_back(gb.data[i]);
  }
  CHECK(vec_rel_err(fd, an) <= 1e-6);
}

TEST_CASE("dense rejects mismatched input width") {
  Tensor W({4, 6}), b({4}), a({5});
  CHECK_THROWS_AS(dense_forward(W, b, a), ShapeError);
}

TEST_CASE("softmax cross-entropy probabilities, stability, gradient") {
  Tensor z({3});
  z.data = {1000.0, 1000.0, 1000.0};  // max-subtraction keeps this finite
  Tensor p = softmax(z);
  double sum = p.data[0] + p.data[1] + p.data[2];
  CHECK(std::fabs(sum - 1.0) <= 1e-12);
  CHECK(std::fabs(p.data[0] - 1.0 / 3.0) <= 1e-12);

  Rng rng(41);
  for (int trial = 0; trial < 100; ++trial) {
    Tensor logits = random_tensor(rng, {5}, -3.0, 3.0);
    std::uint8_t label = static_cast<std::uint8_t>(rng.next_below(5));
    SoftmaxResult r = softmax_cross_entropy(logits, label);
    double psum = 0.0;
    for (double v : r.probs.data) psum += v;
    REQUIRE(std::fabs(psum - 1.0) <= 1e-12);

    Tensor g = softmax_cross_entropy_grad(r.probs, label);
    std::vector<double> fd, an(g.data.begin(), g.data.end());
    for (std::size_t i = 0; i < logits.size(); ++i) {
      Tensor lp = logits, lm = logits;
      lp.data[i] += kFdStep;
      lm.data[i] -= kFdStep;
      fd.push_back((softmax_cross_entropy(lp, label).loss - softmax_cross_entropy(lm, label).loss) /
                   (2 * kFdStep));
    }
    REQUIRE(vec_rel_err(fd, an) <= 1e-4);
  }
}

TEST_CASE("adam first step moves a unit-gradient parameter by almost lr") {
  Tensor p({1});
  p.data = {1.0};
  Tensor g({1});
  g.data = {1.0};
  AdamState s;
  AdamConfig cfg;  // lr 0.001
  adam_step(p, g, s, cfg);
  // mhat = 1, vhat = 1 after bias correction at t=1
  double expect = 1.0 - cfg.lr / (1.0 + cfg.eps);
  CHECK(std::fabs(p.data[0] - expect) <= 1e-15);
  CHECK(s.t == 1);
}

TEST_CASE("adam trajectory matches a scalar reference recurrence") {
  // independent recurrence over a fixed gradient sequence
  std::vector<double> grads = {0.5, -1.25, 2.0, 0.0, -0.75, 0.3, 1.1, -0.2};
  AdamConfig cfg;
  double m = 0, v = 0, theta_ref = 0.4;
  for (std::size_t t = 1; t <= grads.size(); ++t) {
    double g = grads[t - 1];
    m = cfg.beta1 * m + (1 - cfg.beta1) * g;
    v = cfg.beta2 * v + (1 - cfg.beta2) * g * g;
    double mhat = m / (1 - std::pow(cfg.beta1, static_cast<double>(t)));
    double vhat = v / (1 - std::pow(cfg.beta2, static_cast<double>(t)));
    theta_ref -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
  }

  Tensor p({1});
  p.data = {0.4};
  AdamState s;
  for (double g : grads) {
    Tensor gt({1});
    gt.data = {g};
    adam_step(p, gt, s, cfg);
  }
  CHECK(std::fabs(p.data[0] - theta_ref) <= 1e-15);
}

TEST_CASE("adam is deterministic for identical sequences") {
  Rng rng(43);
  Tensor p1 = random_tensor(rng, {25});
  Tensor p2 = p1;
  AdamState s1, s2;
  AdamConfig cfg;
  Rng gs(99);
  for (int step = 0; step < 20; ++step) {
    Tensor g = random_tensor(gs, {25});
    adam_step(p1, g, s1, cfg);
    adam_step(p2, g, s2, cfg);
  }
  for (std::size_t i = 0; i < p1.size(); ++i) REQUIRE(p1.data[i] == p2.data[i]);
}

TEST_CASE("rng streams are reproducible and laplace matches its distribution") {
  Rng a(1234), b(1234);
  for (int i = 0; i < 1000; ++i) REQUIRE(a.next_u64() == b.next_u64());

  // scale-b Laplace has mean 0 and variance 2 b^2
  Rng r(555);
  const double scale = 0.7;
  double sum = 0, sum2 = 0;
  const int n = 200000;
  for (int i = 0; i < n; ++i) {
    double v = r.laplace(scale);
    sum += v;
    sum2 += v * v;
  }
  double mean = sum / n, var = sum2 / n - mean * mean;
  CHECK(std::fabs(mean) < 0.01);
  CHECK(std::fabs(var - 2 * scale * scale) < 0.05);
  CHECK(r.laplace(0.0) == 0.0);
}

TEST_CASE("non-finite kernel outputs are rejected") {
  Tensor x({1, 2});
  x.data = {1e308, 1e308};
  Tensor w({1, 1, 1});
  w.data = {1e10};
  Tensor b({1});
  CHECK_THROWS(conv1d_forward(x, w, b));
}

TEST_CASE("conv shape violations raise shape errors") {
  Tensor x({2, 8}), b({3});
  Tensor w_even({3, 2, 4});
  CHECK_THROWS_AS(conv1d_forward(x, w_even, b), ShapeError);
  Tensor w_badchan({3, 5, 3});
  CHECK_THROWS_AS(conv1d_forward(x, w_badchan, b), ShapeError);
}
