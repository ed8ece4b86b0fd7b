#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "tossim/rng.hpp"

namespace tossim::tn {

/// Dense NCHW tensor. double for gradient-check builds, float for training;
/// kernels are instantiated for both.
template <class T>
struct Tensor4 {
  int n = 0, c = 0, h = 0, w = 0;
  std::vector<T> data;

  Tensor4() = default;
  Tensor4(int n_, int c_, int h_, int w_)
      : n(n_), c(c_), h(h_), w(w_),
        data(static_cast<std::size_t>(n_) * c_ * h_ * w_, T(0)) {}

  std::size_t size() const { return data.size(); }
  T* ptr() { return data.data(); }
  const T* ptr() const { return data.data(); }
  T& at(int in_, int ic, int iy, int ix) {
    return data[((static_cast<std::size_t>(in_) * c + ic) * h + iy) * w + ix];
  }
  T at(int in_, int ic, int iy, int ix) const {
    return data[((static_cast<std::size_t>(in_) * c + ic) * h + iy) * w + ix];
  }
  void zero() { std::fill(data.begin(), data.end(), T(0)); }
  bool same_shape(const Tensor4& o) const {
    return n == o.n && c == o.c && h == o.h && w == o.w;
  }
};

/// Convolution parameters with their momentum buffers (zero-initialized).
template <class T>
struct ConvParams {
  Tensor4<T> kernel;  // [out_ch][in_ch][kh][kw]
  std::vector<T> bias;
  Tensor4<T> kernel_m;
  std::vector<T> bias_m;

  ConvParams() = default;
  ConvParams(int out_ch, int in_ch, int kh, int kw)
      : kernel(out_ch, in_ch, kh, kw),
        bias(out_ch, T(0)),
        kernel_m(out_ch, in_ch, kh, kw),
        bias_m(out_ch, T(0)) {}

  int out_ch() const { return kernel.n; }
  int in_ch() const { return kernel.c; }
  int kh() const { return kernel.h; }
  int kw() const { return kernel.w; }
};

template <class T>
struct ConvGrads {
  Tensor4<T> kernel;
  std::vector<T> bias;

  ConvGrads() = default;
  explicit ConvGrads(const ConvParams<T>& p)
      : kernel(p.kernel.n, p.kernel.c, p.kernel.h, p.kernel.w),
        bias(p.bias.size(), T(0)) {}
  void zero() {
    kernel.zero();
    std::fill(bias.begin(), bias.end(), T(0));
  }
};

/// Reusable buffers for the im2col path; one per thread of execution.
template <class T>
struct ConvScratch {
  std::vector<T> col;  // K x N
  std::vector<T> w_t;  // K x M
  std::vector<T> d;    // K x N (input-gradient staging)
};

/// C (MxN) = A (MxK) * B (KxN), all row-major. accumulate adds into C.
/// Single-threaded and bit-reproducible. The float instantiation carries a
/// vectorized kernel; the generic one is a plain blocked loop.
template <class T>
void gemm(int M, int N, int K, const T* A, const T* B, T* C, bool accumulate);

/// C (MxN) = A (MxK) * B^T with B given row-major as N x K. Both operands
/// stream along contiguous rows, so this is the right shape for parameter
/// gradients (M, N small, K huge) without materializing a transpose.
template <class T>
void gemm_nt(int M, int N, int K, const T* A, const T* B, T* C, bool accumulate);

/// Cross-correlation with square stride/padding. in: [n][ic][h][w],
/// out: [n][oc][oh][ow] with oh = (h + 2 pad - kh)/stride + 1.
template <class T>
void conv2d_forward(const Tensor4<T>& in, const ConvParams<T>& p, int stride,
                    int pad, Tensor4<T>& out, ConvScratch<T>& scratch);

/// Backward for conv2d_forward. Accumulates parameter gradients into
/// `grads` (callers zero them at batch start); writes the input gradient
/// into grad_in unless grad_in is null.
template <class T>
void conv2d_backward(const Tensor4<T>& in, const ConvParams<T>& p,
                     const Tensor4<T>& grad_out, int stride, int pad,
                     ConvGrads<T>& grads, Tensor4<T>* grad_in,
                     ConvScratch<T>& scratch);

template <class T>
void relu_forward(Tensor4<T>& t);
/// grad <- grad * (value > 0), where `value` is the post-activation tensor.
template <class T>
void relu_backward(const Tensor4<T>& value, Tensor4<T>& grad);

/// 2x2 max pooling, stride 2; odd trailing rows/cols are truncated.
/// argmax records the within-channel flat input index of the (first) max.
template <class T>
void maxpool2x2_forward(const Tensor4<T>& in, Tensor4<T>& out,
                        std::vector<std::int32_t>& argmax);
template <class T>
void maxpool2x2_backward(const Tensor4<T>& grad_out,
                         const std::vector<std::int32_t>& argmax, int in_h,
                         int in_w, Tensor4<T>& grad_in);

/// Bilinear 2x upsampling, align-corners false (source coordinate
/// (d + 0.5)/2 - 0.5, clamped).
template <class T>
void upsample2x_forward(const Tensor4<T>& in, Tensor4<T>& out);
template <class T>
void upsample2x_backward(const Tensor4<T>& grad_out, int in_h, int in_w,
                         Tensor4<T>& grad_in);

template <class T>
T sigmoid(T x);

/// Binary cross-entropy on a probability q, label y in {0,1}; q is clamped
/// to [1e-7, 1 - 1e-7]. Returns (loss, dloss/dq), gradient at the clamped q.
template <class T>
std::pair<T, T> bce_loss(T q, T y);

/// Huber: e = delta - delta_bar; 0.5 e^2 for |e| < 1 else |e| - 0.5.
/// Returns (loss, dloss/ddelta).
template <class T>
std::pair<T, T> huber_loss(T delta, T delta_bar);

/// m <- momentum * m + (g + weight_decay * p); p <- p - lr * m.
template <class T>
void sgd_momentum_step(ConvParams<T>& p, const ConvGrads<T>& g, T lr,
                       T momentum, T weight_decay);

/// He initialization: kernel ~ N(0, sqrt(2 / fan_in)), bias 0.
template <class T>
void he_init(ConvParams<T>& p, Rng& rng);

/// Named view of a parameter buffer, for checkpoints and hashing.
template <class T>
struct NamedBuffer {
  std::string name;
  std::vector<int> dims;
  T* data = nullptr;
  std::size_t count = 0;
};

/// Little-endian binary checkpoint: magic "TSNET001", u32 tensor count,
/// then per tensor: u16 name length, name, u8 dtype (4=float, 8=double),
/// u8 ndims, u32 dims, raw buffer. Loading checks names, dtype, and shapes.
template <class T>
void save_checkpoint(const std::string& path,
                     const std::vector<NamedBuffer<const T>>& tensors);
template <class T>
void load_checkpoint(const std::string& path,
                     const std::vector<NamedBuffer<T>>& tensors);

/// FNV-1a over the raw bytes of the buffers, in order. Identifies parameter
/// state in logs.
template <class T>
std::uint64_t fnv1a_hash(const std::vector<NamedBuffer<const T>>& tensors);

}  // namespace tossim::tn
