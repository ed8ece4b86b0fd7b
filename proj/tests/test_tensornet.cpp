#include <cmath>
#include <cstdio>
#include <filesystem>
#include <stdexcept>
#include <vector>

#include "doctest.h"
#include "tossim/rng.hpp"
#include "tossim/tensornet.hpp"

using namespace tossim;
using namespace tossim::tn;

namespace {

// Plain six-loop cross-correlation, the reference the fast path must match.
template <class T>
void conv_reference(const Tensor4<T>& in, const ConvParams<T>& p, int stride,
                    int pad, Tensor4<T>& out) {
  const int oh = (in.h + 2 * pad - p.kh()) / stride + 1;
  const int ow = (in.w + 2 * pad - p.kw()) / stride + 1;
  out = Tensor4<T>(in.n, p.out_ch(), oh, ow);
  for (int n = 0; n < in.n; ++n)
    for (int oc = 0; oc < p.out_ch(); ++oc)
      for (int oy = 0; oy < oh; ++oy)
        for (int ox = 0; ox < ow; ++ox) {
          T acc = p.bias[oc];
          for (int ic = 0; ic < p.in_ch(); ++ic)
            for (int ky = 0; ky < p.kh(); ++ky)
              for (int kx = 0; kx < p.kw(); ++kx) {
                const int iy = oy * stride - pad + ky;
                const int ix = ox * stride - pad + kx;
                if (iy < 0 || iy >= in.h || ix < 0 || ix >= in.w) continue;
                acc += in.at(n, ic, iy, ix) * p.kernel.at(oc, ic, ky, kx);
              }
          out.at(n, oc, oy, ox) = acc;
        }
}

template <class T>
void fill_random(std::vector<T>& v, Rng& rng, double scale = 1.0) {
  for (auto& x : v) x = static_cast<T>(rng.uniform(-scale, scale));
}

template <class T>
void fill_random(Tensor4<T>& t, Rng& rng, double scale = 1.0) {
  fill_random(t.data, rng, scale);
}

double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  REQUIRE(a.size() == b.size());
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// Scalar loss L = sum(out * w) with fixed random w; its analytic gradient
// w.r.t. out is w, which seeds the backward pass under test.
struct ConvProbe {
  Tensor4<double> in;
  ConvParams<double> p;
  int stride, pad;
  std::vector<double> w;

  double loss() {
    ConvScratch<double> scratch;
    Tensor4<double> out;
    conv2d_forward(in, p, stride, pad, out, scratch);
    double L = 0.0;
    for (std::size_t i = 0; i < out.size(); ++i) L += out.data[i] * w[i];
    return L;
  }
};

constexpr double kFdEps = 1e-6;

double central_diff(double& x, ConvProbe& probe) {
  const double keep = x;
  x = keep + kFdEps;
  const double hi = probe.loss();
  x = keep - kFdEps;
  const double lo = probe.loss();
  x = keep;
  return (hi - lo) / (2.0 * kFdEps);
}

}  // namespace

TEST_SUITE("tensornet") {

TEST_CASE("gemm and gemm_nt match the textbook triple loop") {
  Rng rng(11);
  const int M = 7, N = 13, K = 9;
  std::vector<double> A(M * K), B(K * N), Bt(N * K), C(M * N, 0.5), Cref = C;
  fill_random(A, rng);
  fill_random(B, rng);
  for (int i = 0; i < N; ++i)
    for (int k = 0; k < K; ++k) Bt[i * K + k] = B[k * N + i];

  for (bool acc : {false, true}) {
    std::vector<double> C1 = C, C2 = C, R = Cref;
    gemm(M, N, K, A.data(), B.data(), C1.data(), acc);
    gemm_nt(M, N, K, A.data(), Bt.data(), C2.data(), acc);
    for (int i = 0; i < M; ++i)
      for (int j = 0; j < N; ++j) {
        double s = acc ? R[i * N + j] : 0.0;
        for (int k = 0; k < K; ++k) s += A[i * K + k] * B[k * N + j];
        R[i * N + j] = s;
      }
    CHECK(max_abs_diff(C1, R) < 1e-12);
    CHECK(max_abs_diff(C2, R) < 1e-12);
  }
}

TEST_CASE("float gemm agrees with the double reference at float precision") {
  Rng rng(12);
  const int M = 17, N = 31, K = 23;
  std::vector<float> A(M * K), B(K * N), C(M * N, 0.0f);
  fill_random(A, rng);
  fill_random(B, rng);
  gemm(M, N, K, A.data(), B.data(), C.data(), false);
  for (int i = 0; i < M; ++i)
    for (int j = 0; j < N; ++j) {
      double s = 0.0;
      for (int k = 0; k < K; ++k)
        s += static_cast<double>(A[i * K + k]) * B[k * N + j];
      CHECK(std::abs(C[i * N + j] - s) < 1e-4);
    }
}

TEST_CASE("conv2d_forward equals the six-loop reference") {
  Rng rng(21);
  struct Shape {
    int n, ic, h, w, oc, k, stride, pad;
  };
  for (const Shape s : {Shape{2, 3, 9, 11, 4, 3, 1, 1},
                        Shape{1, 2, 8, 8, 5, 3, 2, 1},
                        Shape{1, 4, 7, 5, 2, 1, 1, 0},
                        Shape{3, 1, 6, 10, 3, 5, 1, 2},
                        Shape{1, 3, 12, 6, 2, 3, 2, 0}}) {
    Tensor4<double> in(s.n, s.ic, s.h, s.w);
    ConvParams<double> p(s.oc, s.ic, s.k, s.k);
    fill_random(in, rng);
    fill_random(p.kernel, rng);
    fill_random(p.bias, rng);
    ConvScratch<double> scratch;
    Tensor4<double> out, ref;
    conv2d_forward(in, p, s.stride, s.pad, out, scratch);
    conv_reference(in, p, s.stride, s.pad, ref);
    REQUIRE(out.same_shape(ref));
    CHECK(max_abs_diff(out.data, ref.data) < 1e-12);
  }
}

TEST_CASE("conv2d_backward gradients match central differences") {
  Rng rng(22);
  for (int cfg = 0; cfg < 2; ++cfg) {
    const int stride = cfg == 0 ? 1 : 2;
    const int pad = 1;
    ConvProbe probe{Tensor4<double>(1, 2, 6, 7), ConvParams<double>(3, 2, 3, 3),
                    stride, pad, {}};
    fill_random(probe.in, rng);
    fill_random(probe.p.kernel, rng);
    fill_random(probe.p.bias, rng);

    ConvScratch<double> scratch;
    Tensor4<double> out;
    conv2d_forward(probe.in, probe.p, stride, pad, out, scratch);
    probe.w.resize(out.size());
    fill_random(probe.w, rng);

    Tensor4<double> grad_out(out.n, out.c, out.h, out.w);
    grad_out.data = probe.w;
    ConvGrads<double> grads(probe.p);
    Tensor4<double> grad_in(probe.in.n, probe.in.c, probe.in.h, probe.in.w);
    conv2d_backward(probe.in, probe.p, grad_out, stride, pad, grads, &grad_in,
                    scratch);

    for (std::size_t i = 0; i < probe.p.kernel.size(); i += 7) {
      const double fd = central_diff(probe.p.kernel.data[i], probe);
      CHECK(std::abs(grads.kernel.data[i] - fd) <
            1e-5 * std::max(1.0, std::abs(fd)));
    }
    for (std::size_t i = 0; i < probe.p.bias.size(); ++i) {
      const double fd = central_diff(probe.p.bias[i], probe);
      CHECK(std::abs(grads.bias[i] - fd) < 1e-5 * std::max(1.0, std::abs(fd)));
    }
    for (std::size_t i = 0; i < probe.in.size(); i += 5) {
      const double fd = central_diff(probe.in.data[i], probe);
      CHECK(std::abs(grad_in.data[i] - fd) < 1e-5 * std::max(1.0, std::abs(fd)));
    }
  }
}

TEST_CASE("conv2d_backward accumulates into grads and respects null grad_in") {
  Rng rng(23);
  Tensor4<double> in(1, 2, 5, 5);
  ConvParams<double> p(2, 2, 3, 3);
  fill_random(in, rng);
  fill_random(p.kernel, rng);
  ConvScratch<double> scratch;
  Tensor4<double> out;
  conv2d_forward(in, p, 1, 1, out, scratch);
  Tensor4<double> grad_out(out.n, out.c, out.h, out.w);
  fill_random(grad_out, rng);

  ConvGrads<double> once(p), twice(p);
  Tensor4<double>* no_grad_in = nullptr;
  conv2d_backward(in, p, grad_out, 1, 1, once, no_grad_in, scratch);
  conv2d_backward(in, p, grad_out, 1, 1, twice, no_grad_in, scratch);
  conv2d_backward(in, p, grad_out, 1, 1, twice, no_grad_in, scratch);
  for (std::size_t i = 0; i < once.kernel.size(); ++i) {
    CHECK(twice.kernel.data[i] == doctest::Approx(2.0 * once.kernel.data[i]));
  }
}

TEST_CASE("relu forward and backward") {
  Tensor4<double> t(1, 1, 2, 3);
  t.data = {-1.0, 0.0, 2.5, -0.1, 7.0, -3.0};
  relu_forward(t);
  CHECK(t.data == std::vector<double>{0.0, 0.0, 2.5, 0.0, 7.0, 0.0});
  Tensor4<double> g(1, 1, 2, 3);
  g.data = {1.0, 2.0, 3.0, 4.0, 5.0, 6.0};
  relu_backward(t, g);
  CHECK(g.data == std::vector<double>{0.0, 0.0, 3.0, 0.0, 5.0, 0.0});
}

TEST_CASE("maxpool 2x2: values, first-max ties, odd truncation, backward") {
  Tensor4<double> in(1, 1, 3, 5);
  // Row-major 3 x 5; the last row and column are dropped by the pooling.
  in.data = {1, 5, 2, 2, 9,
             5, 3, 2, 2, 8,
             7, 7, 7, 7, 7};
  Tensor4<double> out;
  std::vector<std::int32_t> argmax;
  maxpool2x2_forward(in, out, argmax);
  REQUIRE(out.h == 1);
  REQUIRE(out.w == 2);
  CHECK(out.at(0, 0, 0, 0) == 5.0);
  CHECK(out.at(0, 0, 0, 1) == 2.0);
  // Ties resolve to the first element in scan order: (0,1) beats (1,0) for
  // the left window; (0,2) beats the three other 2s for the right one.
  CHECK(argmax[0] == 1);
  CHECK(argmax[1] == 2);

  Tensor4<double> grad_out(1, 1, 1, 2);
  grad_out.data = {10.0, 20.0};
  Tensor4<double> grad_in;
  maxpool2x2_backward(grad_out, argmax, in.h, in.w, grad_in);
  REQUIRE(grad_in.same_shape(in));
  CHECK(grad_in.data[1] == 10.0);
  CHECK(grad_in.data[2] == 20.0);
  double total = 0.0;
  for (double v : grad_in.data) total += v;
  CHECK(total == 30.0);
}

TEST_CASE("upsample2x matches the align-corners-false formula") {
  Rng rng(31);
  Tensor4<double> in(2, 3, 4, 5);
  fill_random(in, rng);
  Tensor4<double> out;
  upsample2x_forward(in, out);
  REQUIRE(out.h == 8);
  REQUIRE(out.w == 10);
  for (int n = 0; n < out.n; ++n)
    for (int c = 0; c < out.c; ++c)
      for (int y = 0; y < out.h; ++y)
        for (int x = 0; x < out.w; ++x) {
          auto src = [&](double d, int limit) {
            const double s = (d + 0.5) / 2.0 - 0.5;
            return std::min(std::max(s, 0.0), static_cast<double>(limit - 1));
          };
          const double sy = src(y, in.h), sx = src(x, in.w);
          const int y0 = static_cast<int>(std::floor(sy));
          const int x0 = static_cast<int>(std::floor(sx));
          const int y1 = std::min(y0 + 1, in.h - 1);
          const int x1 = std::min(x0 + 1, in.w - 1);
          const double fy = sy - y0, fx = sx - x0;
          const double expect =
              in.at(n, c, y0, x0) * (1 - fy) * (1 - fx) +
              in.at(n, c, y0, x1) * (1 - fy) * fx +
              in.at(n, c, y1, x0) * fy * (1 - fx) + in.at(n, c, y1, x1) * fy * fx;
          CHECK(out.at(n, c, y, x) == doctest::Approx(expect).epsilon(1e-12));
        }
}

TEST_CASE("upsample2x backward is the adjoint of forward") {
  // <U x, y> == <x, U^T y> for random x, y: the defining property of the
  // transpose, checked directly.
  Rng rng(32);
  Tensor4<double> x(1, 2, 3, 4);
  fill_random(x, rng);
  Tensor4<double> Ux;
  upsample2x_forward(x, Ux);
  Tensor4<double> y(Ux.n, Ux.c, Ux.h, Ux.w);
  fill_random(y, rng);
  Tensor4<double> Uty;
  upsample2x_backward(y, x.h, x.w, Uty);
  double lhs = 0.0, rhs = 0.0;
  for (std::size_t i = 0; i < Ux.size(); ++i) lhs += Ux.data[i] * y.data[i];
  for (std::size_t i = 0; i < x.size(); ++i) rhs += x.data[i] * Uty.data[i];
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
}

TEST_CASE("bce loss: ln 2 at an even guess, clamping, gradient") {
  const double ln2 = 0.6931471805599453;
  CHECK(bce_loss(0.5, 1.0).first == doctest::Approx(ln2).epsilon(1e-12));
  CHECK(bce_loss(0.5, 0.0).first == doctest::Approx(ln2).epsilon(1e-12));
  // Saturated predictions stay finite through the clamp.
  CHECK(std::isfinite(bce_loss(0.0, 1.0).first));
  CHECK(std::isfinite(bce_loss(1.0, 0.0).first));
  CHECK(bce_loss(0.0, 1.0).first == doctest::Approx(-std::log(1e-7)));
  // Central difference on the analytic form, away from the clamp.
  for (double q : {0.2, 0.5, 0.9}) {
    for (double y : {0.0, 1.0}) {
      const double h = 1e-7;
      const double fd =
          (bce_loss(q + h, y).first - bce_loss(q - h, y).first) / (2.0 * h);
      CHECK(bce_loss(q, y).second == doctest::Approx(fd).epsilon(1e-4));
    }
  }
}

TEST_CASE("huber loss: quadratic inside, linear outside, unit values") {
  CHECK(huber_loss(0.5, 0.0).first == doctest::Approx(0.125).epsilon(1e-15));
  CHECK(huber_loss(2.0, 0.0).first == doctest::Approx(1.5).epsilon(1e-15));
  CHECK(huber_loss(0.0, 0.0).first == 0.0);
  CHECK(huber_loss(-0.5, 0.0).first == doctest::Approx(0.125));
  CHECK(huber_loss(1.3, 0.4).first == doctest::Approx(0.5 * 0.81));
  // Gradient: e inside the unit region, sign(e) outside.
  CHECK(huber_loss(0.5, 0.0).second == doctest::Approx(0.5));
  CHECK(huber_loss(-0.5, 0.0).second == doctest::Approx(-0.5));
  CHECK(huber_loss(2.0, 0.0).second == doctest::Approx(1.0));
  CHECK(huber_loss(-2.0, 0.0).second == doctest::Approx(-1.0));
  // Continuity at the knee.
  CHECK(huber_loss(1.0 - 1e-9, 0.0).first ==
        doctest::Approx(huber_loss(1.0 + 1e-9, 0.0).first).epsilon(1e-6));
}

TEST_CASE("sigmoid is symmetric and saturates safely") {
  CHECK(sigmoid(0.0) == 0.5);
  CHECK(sigmoid(3.0) == doctest::Approx(1.0 / (1.0 + std::exp(-3.0))));
  CHECK(sigmoid(3.0) + sigmoid(-3.0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(sigmoid(800.0) == doctest::Approx(1.0));
  CHECK(sigmoid(-800.0) == doctest::Approx(0.0));
  CHECK(std::isfinite(sigmoid(-800.0)));
}

TEST_CASE("sgd momentum step follows the update rule") {
  ConvParams<double> p(1, 1, 1, 2);
  p.kernel.data = {1.0, -2.0};
  p.bias = {0.5};
  ConvGrads<double> g(p);
  g.kernel.data = {0.2, -0.4};
  g.bias = {0.1};
  const double lr = 0.1, mu = 0.9, wd = 0.01;

  // Two hand-computed steps with the same gradient; biases follow the same
  // decayed rule as kernels.
  auto advance = [&](double w, double grad) {
    double m = 0.0;
    for (int i = 0; i < 2; ++i) {
      m = mu * m + (grad + wd * w);
      w -= lr * m;
    }
    return w;
  };
  const double w0 = advance(1.0, 0.2);
  const double w1 = advance(-2.0, -0.4);
  const double b0 = advance(0.5, 0.1);
  sgd_momentum_step(p, g, lr, mu, wd);
  sgd_momentum_step(p, g, lr, mu, wd);
  CHECK(p.kernel.data[0] == doctest::Approx(w0).epsilon(1e-12));
  CHECK(p.kernel.data[1] == doctest::Approx(w1).epsilon(1e-12));
  CHECK(p.bias[0] == doctest::Approx(b0).epsilon(1e-12));
  ConvGrads<double> wrong(ConvParams<double>(1, 1, 2, 2));
  CHECK_THROWS_AS(sgd_momentum_step(p, wrong, lr, mu, wd), std::invalid_argument);
}

TEST_CASE("he_init statistics and determinism") {
  ConvParams<float> a(16, 8, 3, 3), b(16, 8, 3, 3);
  Rng r1(99), r2(99);
  he_init(a, r1);
  he_init(b, r2);
  CHECK(a.kernel.data == b.kernel.data);
  for (float v : a.bias) CHECK(v == 0.0f);
  double sum = 0.0, sq = 0.0;
  for (float v : a.kernel.data) {
    sum += v;
    sq += static_cast<double>(v) * v;
  }
  const double n = static_cast<double>(a.kernel.size());
  const double mean = sum / n;
  const double var = sq / n - mean * mean;
  const double expect_var = 2.0 / (8 * 3 * 3);
  CHECK(std::abs(mean) < 0.01);
  CHECK(var == doctest::Approx(expect_var).epsilon(0.1));
}

TEST_CASE("checkpoint round-trips bits and validates metadata") {
  namespace fs = std::filesystem;
  const std::string path = (fs::temp_directory_path() / "tn_ckpt_test.bin").string();
  Rng rng(41);
  std::vector<float> a(60), b(7);
  fill_random(a, rng);
  fill_random(b, rng);
  const std::vector<NamedBuffer<const float>> save_list = {
      {"layer1.kernel", {3, 4, 5}, a.data(), a.size()},
      {"layer1.bias", {7}, b.data(), b.size()},
  };
  save_checkpoint(path, save_list);

  std::vector<float> a2(60), b2(7);
  std::vector<NamedBuffer<float>> load_list = {
      {"layer1.kernel", {3, 4, 5}, a2.data(), a2.size()},
      {"layer1.bias", {7}, b2.data(), b2.size()},
  };
  load_checkpoint(path, load_list);
  CHECK(a == a2);
  CHECK(b == b2);

  // Name mismatch.
  std::vector<NamedBuffer<float>> wrong_name = {
      {"layerX.kernel", {3, 4, 5}, a2.data(), a2.size()},
      {"layer1.bias", {7}, b2.data(), b2.size()},
  };
  CHECK_THROWS_AS(load_checkpoint(path, wrong_name), std::runtime_error);
  // Shape mismatch.
  std::vector<NamedBuffer<float>> wrong_shape = {
      {"layer1.kernel", {4, 3, 5}, a2.data(), a2.size()},
      {"layer1.bias", {7}, b2.data(), b2.size()},
  };
  CHECK_THROWS_AS(load_checkpoint(path, wrong_shape), std::runtime_error);
  // Dtype mismatch: loading float data into double buffers.
  std::vector<double> a3(60), b3(7);
  std::vector<NamedBuffer<double>> wrong_type = {
      {"layer1.kernel", {3, 4, 5}, a3.data(), a3.size()},
      {"layer1.bias", {7}, b3.data(), b3.size()},
  };
  CHECK_THROWS_AS(load_checkpoint(path, wrong_type), std::runtime_error);
  fs::remove(path);
}

TEST_CASE("fnv1a hash is order- and byte-sensitive") {
  std::vector<float> a = {1.0f, 2.0f}, b = {3.0f};
  const std::vector<NamedBuffer<const float>> ab = {
      {"a", {2}, a.data(), 2}, {"b", {1}, b.data(), 1}};
  const std::vector<NamedBuffer<const float>> ba = {
      {"b", {1}, b.data(), 1}, {"a", {2}, a.data(), 2}};
  const auto h1 = fnv1a_hash(ab);
  CHECK(h1 == fnv1a_hash(ab));
  CHECK(h1 != fnv1a_hash(ba));
  a[0] = std::nextafter(a[0], 2.0f);
  CHECK(h1 != fnv1a_hash(ab));
}

}  // TEST_SUITE
