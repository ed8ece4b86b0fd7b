#include "tossim/tensornet.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <type_traits>

#if defined(__AVX512F__)
#include <immintrin.h>
#endif

namespace tossim::tn {

namespace {

template <class T>
void gemm_generic(int M, int N, int K, const T* A, const T* B, T* C,
                  bool accumulate) {
  constexpr int JB = 64;
  constexpr int MT = 4;
  T acc[MT][JB];
  for (int j0 = 0; j0 < N; j0 += JB) {
    const int jb = std::min(JB, N - j0);
    for (int m0 = 0; m0 < M; m0 += MT) {
      const int mb = std::min(MT, M - m0);
      for (int m = 0; m < mb; ++m) {
        std::fill(acc[m], acc[m] + jb, T(0));
      }
      for (int k = 0; k < K; ++k) {
        const T* b = B + static_cast<std::size_t>(k) * N + j0;
        for (int m = 0; m < mb; ++m) {
          const T a = A[static_cast<std::size_t>(m0 + m) * K + k];
          T* out = acc[m];
          for (int j = 0; j < jb; ++j) out[j] += a * b[j];
        }
      }
      for (int m = 0; m < mb; ++m) {
        T* c = C + static_cast<std::size_t>(m0 + m) * N + j0;
        if (accumulate) {
          for (int j = 0; j < jb; ++j) c[j] += acc[m][j];
        } else {
          for (int j = 0; j < jb; ++j) c[j] = acc[m][j];
        }
      }
    }
  }
}

#if defined(__AVX512F__)

// 4 x 64 register tile; the j-loop outside keeps the B panel hot in L2
// across the m sweep.
inline void panel4x64_f32(int K, int N, const float* a0, const float* a1,
                          const float* a2, const float* a3, const float* B,
                          int j0, float* c0, float* c1, float* c2, float* c3,
                          bool accumulate) {
  __m512 acc[4][4];
  for (int m = 0; m < 4; ++m) {
    for (int v = 0; v < 4; ++v) acc[m][v] = _mm512_setzero_ps();
  }
  const float* b = B + j0;
  for (int k = 0; k < K; ++k, b += N) {
    const __m512 b0 = _mm512_loadu_ps(b);
    const __m512 b1 = _mm512_loadu_ps(b + 16);
    const __m512 b2 = _mm512_loadu_ps(b + 32);
    const __m512 b3 = _mm512_loadu_ps(b + 48);
    __m512 a;
    a = _mm512_set1_ps(a0[k]);
    acc[0][0] = _mm512_fmadd_ps(a, b0, acc[0][0]);
    acc[0][1] = _mm512_fmadd_ps(a, b1, acc[0][1]);
    acc[0][2] = _mm512_fmadd_ps(a, b2, acc[0][2]);
    acc[0][3] = _mm512_fmadd_ps(a, b3, acc[0][3]);
    a = _mm512_set1_ps(a1[k]);
    acc[1][0] = _mm512_fmadd_ps(a, b0, acc[1][0]);
    acc[1][1] = _mm512_fmadd_ps(a, b1, acc[1][1]);
    acc[1][2] = _mm512_fmadd_ps(a, b2, acc[1][2]);
    acc[1][3] = _mm512_fmadd_ps(a, b3, acc[1][3]);
    a = _mm512_set1_ps(a2[k]);
    acc[2][0] = _mm512_fmadd_ps(a, b0, acc[2][0]);
    acc[2][1] = _mm512_fmadd_ps(a, b1, acc[2][1]);
    acc[2][2] = _mm512_fmadd_ps(a, b2, acc[2][2]);
    acc[2][3] = _mm512_fmadd_ps(a, b3, acc[2][3]);
    a = _mm512_set1_ps(a3[k]);
    acc[3][0] = _mm512_fmadd_ps(a, b0, acc[3][0]);
    acc[3][1] = _mm512_fmadd_ps(a, b1, acc[3][1]);
    acc[3][2] = _mm512_fmadd_ps(a, b2, acc[3][2]);
    acc[3][3] = _mm512_fmadd_ps(a, b3, acc[3][3]);
  }
  float* crows[4] = {c0, c1, c2, c3};
  for (int m = 0; m < 4; ++m) {
    float* c = crows[m] + j0;
    for (int v = 0; v < 4; ++v) {
      __m512 res = acc[m][v];
      if (accumulate) res = _mm512_add_ps(res, _mm512_loadu_ps(c + 16 * v));
      _mm512_storeu_ps(c + 16 * v, res);
    }
  }
}

inline void panel1x64_f32(int K, int N, const float* a0, const float* B,
                          int j0, float* c0, bool accumulate) {
  __m512 acc[4];
  for (int v = 0; v < 4; ++v) acc[v] = _mm512_setzero_ps();
  const float* b = B + j0;
  for (int k = 0; k < K; ++k, b += N) {
    const __m512 a = _mm512_set1_ps(a0[k]);
    acc[0] = _mm512_fmadd_ps(a, _mm512_loadu_ps(b), acc[0]);
    acc[1] = _mm512_fmadd_ps(a, _mm512_loadu_ps(b + 16), acc[1]);
    acc[2] = _mm512_fmadd_ps(a, _mm512_loadu_ps(b + 32), acc[2]);
    acc[3] = _mm512_fmadd_ps(a, _mm512_loadu_ps(b + 48), acc[3]);
  }
  float* c = c0 + j0;
  for (int v = 0; v < 4; ++v) {
    __m512 res = acc[v];
    if (accumulate) res = _mm512_add_ps(res, _mm512_loadu_ps(c + 16 * v));
    _mm512_storeu_ps(c + 16 * v, res);
  }
}

// Up to 4 rows x one masked 16-lane column chunk; covers every N tail so no
// shape ever falls back to strided scalar loops.
inline void panel4x16m_f32(int K, int N, const float* const a[4], int mb,
                           const float* B, int j0, __mmask16 mask, float* const c[4],
                           bool accumulate) {
  __m512 acc[4];
  for (int m = 0; m < 4; ++m) acc[m] = _mm512_setzero_ps();
  const float* b = B + j0;
  for (int k = 0; k < K; ++k, b += N) {
    const __m512 bv = _mm512_maskz_loadu_ps(mask, b);
    for (int m = 0; m < mb; ++m) {
      acc[m] = _mm512_fmadd_ps(_mm512_set1_ps(a[m][k]), bv, acc[m]);
    }
  }
  for (int m = 0; m < mb; ++m) {
    __m512 res = acc[m];
    if (accumulate) {
      res = _mm512_add_ps(res, _mm512_maskz_loadu_ps(mask, c[m] + j0));
    }
    _mm512_mask_storeu_ps(c[m] + j0, mask, res);
  }
}

// j0 stays outermost so the K x 64 section of B it owns is L2-resident
// across the whole m sweep; B streams from memory exactly once per call.
void gemm_f32_avx512(int M, int N, int K, const float* A, const float* B,
                     float* C, bool accumulate) {
  const int n64 = N - N % 64;
  for (int j0 = 0; j0 < n64; j0 += 64) {
    int m0 = 0;
    for (; m0 + 4 <= M; m0 += 4) {
      panel4x64_f32(K, N, A + static_cast<std::size_t>(m0) * K,
                    A + static_cast<std::size_t>(m0 + 1) * K,
                    A + static_cast<std::size_t>(m0 + 2) * K,
                    A + static_cast<std::size_t>(m0 + 3) * K, B, j0,
                    C + static_cast<std::size_t>(m0) * N,
                    C + static_cast<std::size_t>(m0 + 1) * N,
                    C + static_cast<std::size_t>(m0 + 2) * N,
                    C + static_cast<std::size_t>(m0 + 3) * N, accumulate);
    }
    for (; m0 < M; ++m0) {
      panel1x64_f32(K, N, A + static_cast<std::size_t>(m0) * K, B, j0,
                    C + static_cast<std::size_t>(m0) * N, accumulate);
    }
  }
  for (int j0 = n64; j0 < N; j0 += 16) {
    const int jb = std::min(16, N - j0);
    const __mmask16 mask = static_cast<__mmask16>((1u << jb) - 1u);
    for (int m0 = 0; m0 < M; m0 += 4) {
      const int mb = std::min(4, M - m0);
      const float* a[4];
      float* c[4];
      for (int m = 0; m < 4; ++m) {
        const int row = m0 + std::min(m, mb - 1);  // clamp; extra rows unused
        a[m] = A + static_cast<std::size_t>(row) * K;
        c[m] = C + static_cast<std::size_t>(row) * N;
      }
      panel4x16m_f32(K, N, a, mb, B, j0, mask, c, accumulate);
    }
  }
}

inline float hsum(__m512 v) { return _mm512_reduce_add_ps(v); }

// 4x4 tile of dot products over K; A rows and B rows both stream
// contiguously. The j0-outer caller keeps the smaller operand hot.
void gemm_nt_f32_avx512(int M, int N, int K, const float* A, const float* B,
                        float* C, bool accumulate) {
  const int k16 = K - K % 16;
  const __mmask16 ktail =
      static_cast<__mmask16>((1u << (K - k16)) - 1u);
  for (int j0 = 0; j0 < N; j0 += 4) {
    const int jb = std::min(4, N - j0);
    const float* b[4];
    for (int j = 0; j < 4; ++j) {
      b[j] = B + static_cast<std::size_t>(j0 + std::min(j, jb - 1)) * K;
    }
    for (int m0 = 0; m0 < M; m0 += 4) {
      const int mb = std::min(4, M - m0);
      __m512 acc[4][4];
      for (int m = 0; m < 4; ++m) {
        for (int j = 0; j < 4; ++j) acc[m][j] = _mm512_setzero_ps();
      }
      const float* a[4];
      for (int m = 0; m < 4; ++m) {
        a[m] = A + static_cast<std::size_t>(m0 + std::min(m, mb - 1)) * K;
      }
      for (int k = 0; k < k16; k += 16) {
        __m512 bv[4];
        for (int j = 0; j < jb; ++j) bv[j] = _mm512_loadu_ps(b[j] + k);
        for (int m = 0; m < mb; ++m) {
          const __m512 av = _mm512_loadu_ps(a[m] + k);
          for (int j = 0; j < jb; ++j) {
            acc[m][j] = _mm512_fmadd_ps(av, bv[j], acc[m][j]);
          }
        }
      }
      if (k16 < K) {
        __m512 bv[4];
        for (int j = 0; j < jb; ++j) bv[j] = _mm512_maskz_loadu_ps(ktail, b[j] + k16);
        for (int m = 0; m < mb; ++m) {
          const __m512 av = _mm512_maskz_loadu_ps(ktail, a[m] + k16);
          for (int j = 0; j < jb; ++j) {
            acc[m][j] = _mm512_fmadd_ps(av, bv[j], acc[m][j]);
          }
        }
      }
      for (int m = 0; m < mb; ++m) {
        float* crow = C + static_cast<std::size_t>(m0 + m) * N + j0;
        for (int j = 0; j < jb; ++j) {
          const float v = hsum(acc[m][j]);
          crow[j] = accumulate ? crow[j] + v : v;
        }
      }
    }
  }
}

#endif  // __AVX512F__

template <class T>
void gemm_nt_generic(int M, int N, int K, const T* A, const T* B, T* C,
                     bool accumulate) {
  for (int m = 0; m < M; ++m) {
    const T* a = A + static_cast<std::size_t>(m) * K;
    T* c = C + static_cast<std::size_t>(m) * N;
    for (int j = 0; j < N; ++j) {
      const T* b = B + static_cast<std::size_t>(j) * K;
      T sum = T(0);
      for (int k = 0; k < K; ++k) sum += a[k] * b[k];
      c[j] = accumulate ? c[j] + sum : sum;
    }
  }
}

template <class T>
void im2col(const T* in, int c, int h, int w, int kh, int kw, int stride,
            int pad, int oh, int ow, T* col) {
  // col[(ic*kh+ky)*kw+kx][oy*ow+ox]
  const int N = oh * ow;
  for (int ic = 0; ic < c; ++ic) {
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx) {
        T* dst = col + (static_cast<std::size_t>(ic * kh + ky) * kw + kx) * N;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride + ky - pad;
          if (iy < 0 || iy >= h) {
            std::fill(dst + oy * ow, dst + (oy + 1) * ow, T(0));
            continue;
          }
          const T* src = in + static_cast<std::size_t>(ic) * h * w +
                         static_cast<std::size_t>(iy) * w;
          const int x0 = kx - pad;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * stride + x0;
            dst[oy * ow + ox] = (ix >= 0 && ix < w) ? src[ix] : T(0);
          }
        }
      }
    }
  }
}

template <class T>
void col2im_add(const T* col, int c, int h, int w, int kh, int kw, int stride,
                int pad, int oh, int ow, T* grad_in) {
  const int N = oh * ow;
  for (int ic = 0; ic < c; ++ic) {
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx) {
        const T* src = col + (static_cast<std::size_t>(ic * kh + ky) * kw + kx) * N;
        for (int oy = 0; oy < oh; ++oy) {
          const int iy = oy * stride + ky - pad;
          if (iy < 0 || iy >= h) continue;
          T* dst = grad_in + static_cast<std::size_t>(ic) * h * w +
                   static_cast<std::size_t>(iy) * w;
          const int x0 = kx - pad;
          for (int ox = 0; ox < ow; ++ox) {
            const int ix = ox * stride + x0;
            if (ix >= 0 && ix < w) dst[ix] += src[oy * ow + ox];
          }
        }
      }
    }
  }
}

template <class T>
void transpose(const T* src, int rows, int cols, T* dst) {
  constexpr int TB = 32;
  for (int r0 = 0; r0 < rows; r0 += TB) {
    const int r1 = std::min(r0 + TB, rows);
    for (int c0 = 0; c0 < cols; c0 += TB) {
      const int c1 = std::min(c0 + TB, cols);
      for (int r = r0; r < r1; ++r) {
        for (int c = c0; c < c1; ++c) {
          dst[static_cast<std::size_t>(c) * rows + r] =
              src[static_cast<std::size_t>(r) * cols + c];
        }
      }
    }
  }
}

int conv_out_dim(int in, int k, int stride, int pad) {
  return (in + 2 * pad - k) / stride + 1;
}

}  // namespace

template <class T>
void gemm(int M, int N, int K, const T* A, const T* B, T* C, bool accumulate) {
#if defined(__AVX512F__)
  if constexpr (std::is_same_v<T, float>) {
    gemm_f32_avx512(M, N, K, A, B, C, accumulate);
    return;
  }
#endif
  gemm_generic(M, N, K, A, B, C, accumulate);
}

template <class T>
void gemm_nt(int M, int N, int K, const T* A, const T* B, T* C, bool accumulate) {
#if defined(__AVX512F__)
  if constexpr (std::is_same_v<T, float>) {
    gemm_nt_f32_avx512(M, N, K, A, B, C, accumulate);
    return;
  }
#endif
  gemm_nt_generic(M, N, K, A, B, C, accumulate);
}

template <class T>
void conv2d_forward(const Tensor4<T>& in, const ConvParams<T>& p, int stride,
                    int pad, Tensor4<T>& out, ConvScratch<T>& scratch) {
  if (in.c != p.in_ch()) throw std::invalid_argument("conv2d: channel mismatch");
  if (stride < 1 || pad < 0) throw std::invalid_argument("conv2d: bad stride/pad");
  const int oh = conv_out_dim(in.h, p.kh(), stride, pad);
  const int ow = conv_out_dim(in.w, p.kw(), stride, pad);
  if (oh <= 0 || ow <= 0) throw std::invalid_argument("conv2d: empty output");
  const int M = p.out_ch();
  const int K = p.in_ch() * p.kh() * p.kw();
  const int N = oh * ow;
  if (out.n != in.n || out.c != M || out.h != oh || out.w != ow) {
    out = Tensor4<T>(in.n, M, oh, ow);
  }
  scratch.col.resize(static_cast<std::size_t>(K) * N);
  for (int b = 0; b < in.n; ++b) {
    const T* src = in.ptr() + static_cast<std::size_t>(b) * in.c * in.h * in.w;
    T* dst = out.ptr() + static_cast<std::size_t>(b) * M * N;
    im2col(src, in.c, in.h, in.w, p.kh(), p.kw(), stride, pad, oh, ow,
           scratch.col.data());
    gemm<T>(M, N, K, p.kernel.ptr(), scratch.col.data(), dst, false);
    for (int oc = 0; oc < M; ++oc) {
      const T bias = p.bias[oc];
      T* row = dst + static_cast<std::size_t>(oc) * N;
      for (int x = 0; x < N; ++x) row[x] += bias;
    }
  }
}

template <class T>
void conv2d_backward(const Tensor4<T>& in, const ConvParams<T>& p,
                     const Tensor4<T>& grad_out, int stride, int pad,
                     ConvGrads<T>& grads, Tensor4<T>* grad_in,
                     ConvScratch<T>& scratch) {
  const int oh = grad_out.h, ow = grad_out.w;
  if (grad_out.c != p.out_ch() || grad_out.n != in.n ||
      oh != conv_out_dim(in.h, p.kh(), stride, pad) ||
      ow != conv_out_dim(in.w, p.kw(), stride, pad)) {
    throw std::invalid_argument("conv2d backward: shape mismatch");
  }
  if (!grads.kernel.same_shape(p.kernel) || grads.bias.size() != p.bias.size()) {
    throw std::invalid_argument("conv2d backward: grad shape mismatch");
  }
  const int M = p.out_ch();
  const int K = p.in_ch() * p.kh() * p.kw();
  const int N = oh * ow;
  scratch.col.resize(static_cast<std::size_t>(K) * N);
  if (grad_in) {
    if (!grad_in->same_shape(in)) *grad_in = Tensor4<T>(in.n, in.c, in.h, in.w);
    grad_in->zero();
    scratch.w_t.resize(static_cast<std::size_t>(K) * M);
    scratch.d.resize(static_cast<std::size_t>(K) * N);
    transpose(p.kernel.ptr(), M, K, scratch.w_t.data());
  }
  for (int b = 0; b < in.n; ++b) {
    const T* src = in.ptr() + static_cast<std::size_t>(b) * in.c * in.h * in.w;
    const T* go = grad_out.ptr() + static_cast<std::size_t>(b) * M * N;
    for (int oc = 0; oc < M; ++oc) {
      T sum = T(0);
      const T* row = go + static_cast<std::size_t>(oc) * N;
      for (int x = 0; x < N; ++x) sum += row[x];
      grads.bias[oc] += sum;
    }
    im2col(src, in.c, in.h, in.w, p.kh(), p.kw(), stride, pad, oh, ow,
           scratch.col.data());
    gemm_nt<T>(M, K, N, go, scratch.col.data(), grads.kernel.ptr(), true);
    if (grad_in) {
      gemm<T>(K, N, M, scratch.w_t.data(), go, scratch.d.data(), false);
      col2im_add(scratch.d.data(), in.c, in.h, in.w, p.kh(), p.kw(), stride,
                 pad, oh, ow,
                 grad_in->ptr() + static_cast<std::size_t>(b) * in.c * in.h * in.w);
    }
  }
}

template <class T>
void relu_forward(Tensor4<T>& t) {
  for (auto& x : t.data) x = x > T(0) ? x : T(0);
}

template <class T>
void relu_backward(const Tensor4<T>& value, Tensor4<T>& grad) {
  if (!value.same_shape(grad)) throw std::invalid_argument("relu backward: shape");
  for (std::size_t i = 0; i < grad.data.size(); ++i) {
    if (value.data[i] <= T(0)) grad.data[i] = T(0);
  }
}

template <class T>
void maxpool2x2_forward(const Tensor4<T>& in, Tensor4<T>& out,
                        std::vector<std::int32_t>& argmax) {
  const int oh = in.h / 2, ow = in.w / 2;
  if (oh < 1 || ow < 1) throw std::invalid_argument("maxpool: input too small");
  if (out.n != in.n || out.c != in.c || out.h != oh || out.w != ow) {
    out = Tensor4<T>(in.n, in.c, oh, ow);
  }
  argmax.resize(out.size());
  std::size_t oi = 0;
  for (int b = 0; b < in.n; ++b) {
    for (int c = 0; c < in.c; ++c) {
      const T* plane = in.ptr() + (static_cast<std::size_t>(b) * in.c + c) * in.h * in.w;
      for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox, ++oi) {
          const int iy = oy * 2, ix = ox * 2;
          // first max in row-major window order
          std::int32_t best_idx = iy * in.w + ix;
          T best = plane[best_idx];
          const std::int32_t cand[3] = {iy * in.w + ix + 1, (iy + 1) * in.w + ix,
                                        (iy + 1) * in.w + ix + 1};
          for (std::int32_t idx : cand) {
            if (plane[idx] > best) {
              best = plane[idx];
              best_idx = idx;
            }
          }
          out.data[oi] = best;
          argmax[oi] = best_idx;
        }
      }
    }
  }
}

template <class T>
void maxpool2x2_backward(const Tensor4<T>& grad_out,
                         const std::vector<std::int32_t>& argmax, int in_h,
                         int in_w, Tensor4<T>& grad_in) {
  if (argmax.size() != grad_out.size()) {
    throw std::invalid_argument("maxpool backward: argmax size");
  }
  if (grad_in.n != grad_out.n || grad_in.c != grad_out.c || grad_in.h != in_h ||
      grad_in.w != in_w) {
    grad_in = Tensor4<T>(grad_out.n, grad_out.c, in_h, in_w);
  }
  grad_in.zero();
  std::size_t oi = 0;
  for (int b = 0; b < grad_out.n; ++b) {
    for (int c = 0; c < grad_out.c; ++c) {
      T* plane = grad_in.ptr() +
                 (static_cast<std::size_t>(b) * grad_out.c + c) * in_h * in_w;
      const std::size_t count = static_cast<std::size_t>(grad_out.h) * grad_out.w;
      for (std::size_t x = 0; x < count; ++x, ++oi) {
        plane[argmax[oi]] += grad_out.data[oi];
      }
    }
  }
}

namespace {

struct LerpIdx {
  int i0, i1;
  double w1;  // weight of i1; weight of i0 is 1 - w1
};

LerpIdx up2x_src(int d, int in_dim) {
  const double s = (d + 0.5) / 2.0 - 0.5;
  const int i0_raw = static_cast<int>(std::floor(s));
  LerpIdx r;
  r.w1 = s - i0_raw;
  r.i0 = std::clamp(i0_raw, 0, in_dim - 1);
  r.i1 = std::clamp(i0_raw + 1, 0, in_dim - 1);
  return r;
}

}  // namespace

template <class T>
void upsample2x_forward(const Tensor4<T>& in, Tensor4<T>& out) {
  const int oh = in.h * 2, ow = in.w * 2;
  if (out.n != in.n || out.c != in.c || out.h != oh || out.w != ow) {
    out = Tensor4<T>(in.n, in.c, oh, ow);
  }
  std::vector<LerpIdx> ys(oh), xs(ow);
  for (int y = 0; y < oh; ++y) ys[y] = up2x_src(y, in.h);
  for (int x = 0; x < ow; ++x) xs[x] = up2x_src(x, in.w);
  for (int b = 0; b < in.n; ++b) {
    for (int c = 0; c < in.c; ++c) {
      const T* sp = in.ptr() + (static_cast<std::size_t>(b) * in.c + c) * in.h * in.w;
      T* dp = out.ptr() + (static_cast<std::size_t>(b) * in.c + c) * oh * ow;
      for (int y = 0; y < oh; ++y) {
        const LerpIdx& ly = ys[y];
        const T* r0 = sp + static_cast<std::size_t>(ly.i0) * in.w;
        const T* r1 = sp + static_cast<std::size_t>(ly.i1) * in.w;
        T* dst = dp + static_cast<std::size_t>(y) * ow;
        for (int x = 0; x < ow; ++x) {
          const LerpIdx& lx = xs[x];
          const T top = r0[lx.i0] + static_cast<T>(lx.w1) * (r0[lx.i1] - r0[lx.i0]);
          const T bot = r1[lx.i0] + static_cast<T>(lx.w1) * (r1[lx.i1] - r1[lx.i0]);
          dst[x] = top + static_cast<T>(ly.w1) * (bot - top);
        }
      }
    }
  }
}

template <class T>
void upsample2x_backward(const Tensor4<T>& grad_out, int in_h, int in_w,
                         Tensor4<T>& grad_in) {
  if (grad_out.h != in_h * 2 || grad_out.w != in_w * 2) {
    throw std::invalid_argument("upsample backward: shape mismatch");
  }
  if (grad_in.n != grad_out.n || grad_in.c != grad_out.c || grad_in.h != in_h ||
      grad_in.w != in_w) {
    grad_in = Tensor4<T>(grad_out.n, grad_out.c, in_h, in_w);
  }
  grad_in.zero();
  const int oh = grad_out.h, ow = grad_out.w;
  std::vector<LerpIdx> ys(oh), xs(ow);
  for (int y = 0; y < oh; ++y) ys[y] = up2x_src(y, in_h);
  for (int x = 0; x < ow; ++x) xs[x] = up2x_src(x, in_w);
  for (int b = 0; b < grad_out.n; ++b) {
    for (int c = 0; c < grad_out.c; ++c) {
      const T* gp = grad_out.ptr() + (static_cast<std::size_t>(b) * grad_out.c + c) * oh * ow;
      T* dp = grad_in.ptr() + (static_cast<std::size_t>(b) * grad_out.c + c) * in_h * in_w;
      for (int y = 0; y < oh; ++y) {
        const LerpIdx& ly = ys[y];
        for (int x = 0; x < ow; ++x) {
          const LerpIdx& lx = xs[x];
          const T g = gp[static_cast<std::size_t>(y) * ow + x];
          const T wy1 = static_cast<T>(ly.w1), wy0 = T(1) - wy1;
          const T wx1 = static_cast<T>(lx.w1), wx0 = T(1) - wx1;
          dp[static_cast<std::size_t>(ly.i0) * in_w + lx.i0] += g * wy0 * wx0;
          dp[static_cast<std::size_t>(ly.i0) * in_w + lx.i1] += g * wy0 * wx1;
          dp[static_cast<std::size_t>(ly.i1) * in_w + lx.i0] += g * wy1 * wx0;
          dp[static_cast<std::size_t>(ly.i1) * in_w + lx.i1] += g * wy1 * wx1;
        }
      }
    }
  }
}

template <class T>
T sigmoid(T x) {
  if (x >= T(0)) {
    const T e = std::exp(-x);
    return T(1) / (T(1) + e);
  }
  const T e = std::exp(x);
  return e / (T(1) + e);
}

template <class T>
std::pair<T, T> bce_loss(T q, T y) {
  const T lo = T(1e-7), hi = T(1) - T(1e-7);
  const T qc = std::min(std::max(q, lo), hi);
  const T loss = -(y * std::log(qc) + (T(1) - y) * std::log(T(1) - qc));
  const T dq = (qc - y) / (qc * (T(1) - qc));
  return {loss, dq};
}

template <class T>
std::pair<T, T> huber_loss(T delta, T delta_bar) {
  const T e = delta - delta_bar;
  if (std::abs(e) < T(1)) {
    return {T(0.5) * e * e, e};
  }
  return {std::abs(e) - T(0.5), e > T(0) ? T(1) : T(-1)};
}

template <class T>
void sgd_momentum_step(ConvParams<T>& p, const ConvGrads<T>& g, T lr,
                       T momentum, T weight_decay) {
  if (!g.kernel.same_shape(p.kernel) || g.bias.size() != p.bias.size()) {
    throw std::invalid_argument("sgd: shape mismatch");
  }
  for (std::size_t i = 0; i < p.kernel.data.size(); ++i) {
    T& m = p.kernel_m.data[i];
    m = momentum * m + (g.kernel.data[i] + weight_decay * p.kernel.data[i]);
    p.kernel.data[i] -= lr * m;
  }
  for (std::size_t i = 0; i < p.bias.size(); ++i) {
    T& m = p.bias_m[i];
    m = momentum * m + (g.bias[i] + weight_decay * p.bias[i]);
    p.bias[i] -= lr * m;
  }
}

template <class T>
void he_init(ConvParams<T>& p, Rng& rng) {
  const double fan_in = static_cast<double>(p.in_ch()) * p.kh() * p.kw();
  const double stddev = std::sqrt(2.0 / fan_in);
  for (auto& x : p.kernel.data) x = static_cast<T>(rng.normal() * stddev);
  std::fill(p.bias.begin(), p.bias.end(), T(0));
  p.kernel_m.zero();
  std::fill(p.bias_m.begin(), p.bias_m.end(), T(0));
}

namespace {

constexpr char kMagic[8] = {'T', 'S', 'N', 'E', 'T', '0', '0', '1'};

template <class V>
void write_pod(std::ofstream& out, const V& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <class V>
V read_pod(std::ifstream& in) {
  V v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(V));
  if (!in) throw std::runtime_error("checkpoint: truncated file");
  return v;
}

}  // namespace

template <class T>
void save_checkpoint(const std::string& path,
                     const std::vector<NamedBuffer<const T>>& tensors) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("checkpoint: cannot write " + path);
  out.write(kMagic, sizeof(kMagic));
  write_pod(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& t : tensors) {
    write_pod(out, static_cast<std::uint16_t>(t.name.size()));
    out.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    write_pod(out, static_cast<std::uint8_t>(sizeof(T)));
    write_pod(out, static_cast<std::uint8_t>(t.dims.size()));
    std::size_t count = 1;
    for (int d : t.dims) {
      write_pod(out, static_cast<std::uint32_t>(d));
      count *= static_cast<std::size_t>(d);
    }
    if (count != t.count) throw std::runtime_error("checkpoint: dims disagree with count");
    out.write(reinterpret_cast<const char*>(t.data),
              static_cast<std::streamsize>(count * sizeof(T)));
  }
  if (!out) throw std::runtime_error("checkpoint: write failed for " + path);
}

template <class T>
void load_checkpoint(const std::string& path,
                     const std::vector<NamedBuffer<T>>& tensors) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    throw std::runtime_error("checkpoint: bad magic in " + path);
  }
  const auto n = read_pod<std::uint32_t>(in);
  if (n != tensors.size()) {
    throw std::runtime_error("checkpoint: tensor count mismatch in " + path);
  }
  for (const auto& t : tensors) {
    const auto name_len = read_pod<std::uint16_t>(in);
    std::string name(name_len, '\0');
    in.read(name.data(), name_len);
    if (!in || name != t.name) {
      throw std::runtime_error("checkpoint: expected tensor " + t.name + ", found " + name);
    }
    const auto dtype = read_pod<std::uint8_t>(in);
    if (dtype != sizeof(T)) {
      throw std::runtime_error("checkpoint: dtype mismatch for " + t.name);
    }
    const auto ndims = read_pod<std::uint8_t>(in);
    if (ndims != t.dims.size()) {
      throw std::runtime_error("checkpoint: rank mismatch for " + t.name);
    }
    std::size_t count = 1;
    for (std::size_t i = 0; i < ndims; ++i) {
      const auto d = read_pod<std::uint32_t>(in);
      if (d != static_cast<std::uint32_t>(t.dims[i])) {
        throw std::runtime_error("checkpoint: shape mismatch for " + t.name);
      }
      count *= d;
    }
    if (count != t.count) throw std::runtime_error("checkpoint: dims disagree with count");
    in.read(reinterpret_cast<char*>(t.data),
            static_cast<std::streamsize>(count * sizeof(T)));
    if (!in) throw std::runtime_error("checkpoint: truncated tensor " + t.name);
  }
}

template <class T>
std::uint64_t fnv1a_hash(const std::vector<NamedBuffer<const T>>& tensors) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (const auto& t : tensors) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(t.data);
    const std::size_t len = t.count * sizeof(T);
    for (std::size_t i = 0; i < len; ++i) {
      h ^= bytes[i];
      h *= 0x100000001b3ull;
    }
  }
  return h;
}

#define TOSSIM_INSTANTIATE(T)                                                   \
  template void gemm<T>(int, int, int, const T*, const T*, T*, bool);           \
  template void gemm_nt<T>(int, int, int, const T*, const T*, T*, bool);        \
  template void conv2d_forward<T>(const Tensor4<T>&, const ConvParams<T>&, int, \
                                  int, Tensor4<T>&, ConvScratch<T>&);           \
  template void conv2d_backward<T>(const Tensor4<T>&, const ConvParams<T>&,     \
                                   const Tensor4<T>&, int, int, ConvGrads<T>&,  \
                                   Tensor4<T>*, ConvScratch<T>&);               \
  template void relu_forward<T>(Tensor4<T>&);                                   \
  template void relu_backward<T>(const Tensor4<T>&, Tensor4<T>&);               \
  template void maxpool2x2_forward<T>(const Tensor4<T>&, Tensor4<T>&,           \
                                      std::vector<std::int32_t>&);              \
  template void maxpool2x2_backward<T>(const Tensor4<T>&,                       \
                                       const std::vector<std::int32_t>&, int,   \
                                       int, Tensor4<T>&);                       \
  template void upsample2x_forward<T>(const Tensor4<T>&, Tensor4<T>&);          \
  template void upsample2x_backward<T>(const Tensor4<T>&, int, int,             \
                                       Tensor4<T>&);                            \
  template T sigmoid<T>(T);                                                     \
  template std::pair<T, T> bce_loss<T>(T, T);                                   \
  template std::pair<T, T> huber_loss<T>(T, T);                                 \
  template void sgd_momentum_step<T>(ConvParams<T>&, const ConvGrads<T>&, T, T, \
                                     T);                                        \
  template void he_init<T>(ConvParams<T>&, Rng&);                               \
  template void save_checkpoint<T>(const std::string&,                          \
                                   const std::vector<NamedBuffer<const T>>&);   \
  template void load_checkpoint<T>(const std::string&,                          \
                                   const std::vector<NamedBuffer<T>>&);         \
  template std::uint64_t fnv1a_hash<T>(const std::vector<NamedBuffer<const T>>&);

TOSSIM_INSTANTIATE(float)
TOSSIM_INSTANTIATE(double)

#undef TOSSIM_INSTANTIATE

}  // namespace tossim::tn
