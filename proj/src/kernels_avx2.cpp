// AVX2 + FMA variants. This translation unit is compiled with -mavx2 -mfma and
// must only be entered after kernels_dispatch.cpp has confirmed CPU support.

#include "kernels_impl.hpp"

#if defined(GRELA_HAVE_AVX2_TU) && defined(__AVX2__) && defined(__FMA__)

#include <immintrin.h>

#include <algorithm>

#include "grela/memory.hpp"

namespace grela::kernels::avx2 {
namespace {

struct F64 {
  using T = double;
  using V = __m256d;
  static constexpr std::size_t W = 4;
  static V zero() { return _mm256_setzero_pd(); }
  static V set1(T x) { return _mm256_set1_pd(x); }
  static V load(const T* p) { return _mm256_loadu_pd(p); }
  static void store(T* p, V v) { _mm256_storeu_pd(p, v); }
  static V fma(V a, V b, V c) { return _mm256_fmadd_pd(a, b, c); }
  static V add(V a, V b) { return _mm256_add_pd(a, b); }
  static T hsum(V v) {
    __m128d lo = _mm256_castpd256_pd128(v);
    __m128d hi = _mm256_extractf128_pd(v, 1);
    lo = _mm_add_pd(lo, hi);
    __m128d sh = _mm_unpackhi_pd(lo, lo);
    return _mm_cvtsd_f64(_mm_add_sd(lo, sh));
  }
};

struct F32 {
  using T = float;
  using V = __m256;
  static constexpr std::size_t W = 8;
  static V zero() { return _mm256_setzero_ps(); }
  static V set1(T x) { return _mm256_set1_ps(x); }
  static V load(const T* p) { return _mm256_loadu_ps(p); }
  static void store(T* p, V v) { _mm256_storeu_ps(p, v); }
  static V fma(V a, V b, V c) { return _mm256_fmadd_ps(a, b, c); }
  static V add(V a, V b) { return _mm256_add_ps(a, b); }
  static T hsum(V v) {
    __m128 lo = _mm256_castps256_ps128(v);
    __m128 hi = _mm256_extractf128_ps(v, 1);
    lo = _mm_add_ps(lo, hi);
    __m128 sh = _mm_movehdup_ps(lo);
    __m128 s = _mm_add_ps(lo, sh);
    sh = _mm_movehl_ps(sh, s);
    return _mm_cvtss_f32(_mm_add_ss(s, sh));
  }
};

template <class S>
typename S::T dot(const typename S::T* a, const typename S::T* b, std::size_t n) {
  constexpr std::size_t W = S::W;
  typename S::V acc0 = S::zero(), acc1 = S::zero(), acc2 = S::zero(), acc3 = S::zero();
  std::size_t i = 0;
  for (; i + 4 * W <= n; i += 4 * W) {
    acc0 = S::fma(S::load(a + i), S::load(b + i), acc0);
    acc1 = S::fma(S::load(a + i + W), S::load(b + i + W), acc1);
    acc2 = S::fma(S::load(a + i + 2 * W), S::load(b + i + 2 * W), acc2);
    acc3 = S::fma(S::load(a + i + 3 * W), S::load(b + i + 3 * W), acc3);
  }
  for (; i + W <= n; i += W) acc0 = S::fma(S::load(a + i), S::load(b + i), acc0);
  typename S::T total = S::hsum(S::add(S::add(acc0, acc1), S::add(acc2, acc3)));
  for (; i < n; ++i) total += a[i] * b[i];
  return total;
}

template <class S>
void axpy(typename S::T alpha, const typename S::T* x, typename S::T* y, std::size_t n) {
  constexpr std::size_t W = S::W;
  const typename S::V va = S::set1(alpha);
  std::size_t i = 0;
  for (; i + 2 * W <= n; i += 2 * W) {
    S::store(y + i, S::fma(va, S::load(x + i), S::load(y + i)));
    S::store(y + i + W, S::fma(va, S::load(x + i + W), S::load(y + i + W)));
  }
  for (; i + W <= n; i += W) S::store(y + i, S::fma(va, S::load(x + i), S::load(y + i)));
  for (; i < n; ++i) y[i] += alpha * x[i];
}

// C[R x cols] += alpha * A[R x k] * B[k x n], register-blocked R rows by 2W
// columns. A and B are contiguous row-major with strides lda / ldb.
template <class S, std::size_t R>
void block_rows(std::size_t n, std::size_t k, typename S::T alpha, const typename S::T* a,
                std::size_t lda, const typename S::T* b, std::size_t ldb, typename S::T* c,
                std::size_t ldc) {
  using T = typename S::T;
  using V = typename S::V;
  constexpr std::size_t W = S::W;
  const V valpha = S::set1(alpha);
  std::size_t j = 0;
  for (; j + 2 * W <= n; j += 2 * W) {
    V acc[R][2];
    for (std::size_t r = 0; r < R; ++r) acc[r][0] = acc[r][1] = S::zero();
    for (std::size_t p = 0; p < k; ++p) {
      const V b0 = S::load(b + p * ldb + j);
      const V b1 = S::load(b + p * ldb + j + W);
      for (std::size_t r = 0; r < R; ++r) {
        const V av = S::set1(a[r * lda + p]);
        acc[r][0] = S::fma(av, b0, acc[r][0]);
        acc[r][1] = S::fma(av, b1, acc[r][1]);
      }
    }
    for (std::size_t r = 0; r < R; ++r) {
      T* crow = c + r * ldc + j;
      S::store(crow, S::fma(valpha, acc[r][0], S::load(crow)));
      S::store(crow + W, S::fma(valpha, acc[r][1], S::load(crow + W)));
    }
  }
  for (; j + W <= n; j += W) {
    V acc[R];
    for (std::size_t r = 0; r < R; ++r) acc[r] = S::zero();
    for (std::size_t p = 0; p < k; ++p) {
      const V b0 = S::load(b + p * ldb + j);
      for (std::size_t r = 0; r < R; ++r) acc[r] = S::fma(S::set1(a[r * lda + p]), b0, acc[r]);
    }
    for (std::size_t r = 0; r < R; ++r) {
      T* crow = c + r * ldc + j;
      S::store(crow, S::fma(valpha, acc[r], S::load(crow)));
    }
  }
  for (; j < n; ++j) {
    for (std::size_t r = 0; r < R; ++r) {
      T acc = 0;
      for (std::size_t p = 0; p < k; ++p) acc += a[r * lda + p] * b[p * ldb + j];
      c[r * ldc + j] += alpha * acc;
    }
  }
}

template <class S>
void gemm(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k, typename S::T alpha,
          const typename S::T* a, std::size_t lda, const typename S::T* b, std::size_t ldb,
          typename S::T beta, typename S::T* c, std::size_t ldc) {
  using T = typename S::T;
  if (m == 0 || n == 0) return;
  for (std::size_t i = 0; i < m; ++i) {
    T* row = c + i * ldc;
    if (beta == T(0)) {
      std::fill(row, row + n, T(0));
    } else if (beta != T(1)) {
      for (std::size_t j = 0; j < n; ++j) row[j] *= beta;
    }
  }
  if (k == 0 || alpha == T(0)) return;

  // Transposed operands are packed so the micro-kernel only sees the
  // non-transposed layout.
  memory::Buffer<T> packed_a, packed_b;
  if (ta == Trans::Yes) {
    packed_a.resize(m * k);
    for (std::size_t p = 0; p < k; ++p)
      for (std::size_t i = 0; i < m; ++i) packed_a[i * k + p] = a[p * lda + i];
    a = packed_a.data();
    lda = k;
  }
  if (tb == Trans::Yes) {
    packed_b.resize(k * n);
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t p = 0; p < k; ++p) packed_b[p * n + j] = b[j * ldb + p];
    b = packed_b.data();
    ldb = n;
  }

  // Panels of K keep the active slice of B resident in L1/L2.
  constexpr std::size_t kPanel = 256;
  for (std::size_t p0 = 0; p0 < k; p0 += kPanel) {
    const std::size_t kp = std::min(kPanel, k - p0);
    const T* ap = a + p0;
    const T* bp = b + p0 * ldb;
    std::size_t i = 0;
    for (; i + 4 <= m; i += 4) block_rows<S, 4>(n, kp, alpha, ap + i * lda, lda, bp, ldb, c + i * ldc, ldc);
    for (; i < m; ++i) block_rows<S, 1>(n, kp, alpha, ap + i * lda, lda, bp, ldb, c + i * ldc, ldc);
  }
}

double dot_f64(const double* a, const double* b, std::size_t n) { return dot<F64>(a, b, n); }
float dot_f32(const float* a, const float* b, std::size_t n) { return dot<F32>(a, b, n); }
void axpy_f64(double alpha, const double* x, double* y, std::size_t n) { axpy<F64>(alpha, x, y, n); }
void axpy_f32(float alpha, const float* x, float* y, std::size_t n) { axpy<F32>(alpha, x, y, n); }
void gemm_f64(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k, double alpha,
              const double* a, std::size_t lda, const double* b, std::size_t ldb, double beta,
              double* c, std::size_t ldc) {
  gemm<F64>(ta, tb, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}
void gemm_f32(Trans ta, Trans tb, std::size_t m, std::size_t n, std::size_t k, float alpha,
              const float* a, std::size_t lda, const float* b, std::size_t ldb, float beta,
              float* c, std::size_t ldc) {
  gemm<F32>(ta, tb, m, n, k, alpha, a, lda, b, ldb, beta, c, ldc);
}

const Table kTable{Isa::Avx2, dot_f64, dot_f32, axpy_f64, axpy_f32, gemm_f64, gemm_f32};

}  // namespace

const Table* table() noexcept { return &kTable; }

}  // namespace grela::kernels::avx2

#else

namespace grela::kernels::avx2 {
const Table* table() noexcept { return nullptr; }
}  // namespace grela::kernels::avx2

#endif
