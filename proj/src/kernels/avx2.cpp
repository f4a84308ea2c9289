// AVX2 + FMA variants. This translation unit is compiled with -mavx2 -mfma and
// must only be entered after cpu_has_avx2() returned true.

#include "parauni/kernels/kernels.hpp"

#if defined(__AVX2__) && defined(__FMA__)

#include <immintrin.h>

namespace parauni::kernels {
namespace {

inline float hsum(__m256 v) {
  __m128 lo = _mm256_castps256_ps128(v);
  __m128 hi = _mm256_extractf128_ps(v, 1);
  lo = _mm_add_ps(lo, hi);
  __m128 shuf = _mm_movehdup_ps(lo);
  __m128 sums = _mm_add_ps(lo, shuf);
  shuf = _mm_movehl_ps(shuf, sums);
  sums = _mm_add_ss(sums, shuf);
  return _mm_cvtss_f32(sums);
}

inline void store_row(float* dst, __m256 v, bool accumulate) {
  if (accumulate) v = _mm256_add_ps(_mm256_loadu_ps(dst), v);
  _mm256_storeu_ps(dst, v);
}

// Row i of C for NN/TN. a_stride is the distance between consecutive p for
// this row of op(A): 1 for NN, m for TN.
void gemm_row(const float* a_row, std::size_t a_stride, const float* b, float* c_row,
              std::size_t n, std::size_t k, bool accumulate) {
  std::size_t j = 0;
  for (; j + 32 <= n; j += 32) {
    __m256 acc0 = _mm256_setzero_ps();
    __m256 acc1 = _mm256_setzero_ps();
    __m256 acc2 = _mm256_setzero_ps();
    __m256 acc3 = _mm256_setzero_ps();
    for (std::size_t p = 0; p < k; ++p) {
      __m256 av = _mm256_set1_ps(a_row[p * a_stride]);
      const float* bp = b + p * n + j;
      acc0 = _mm256_fmadd_ps(av, _mm256_loadu_ps(bp), acc0);
      acc1 = _mm256_fmadd_ps(av, _mm256_loadu_ps(bp + 8), acc1);
      acc2 = _mm256_fmadd_ps(av, _mm256_loadu_ps(bp + 16), acc2);
      acc3 = _mm256_fmadd_ps(av, _mm256_loadu_ps(bp + 24), acc3);
    }
    store_row(c_row + j, acc0, accumulate);
    store_row(c_row + j + 8, acc1, accumulate);
    store_row(c_row + j + 16, acc2, accumulate);
    store_row(c_row + j + 24, acc3, accumulate);
  }
  for (; j + 8 <= n; j += 8) {
    __m256 acc = _mm256_setzero_ps();
    for (std::size_t p = 0; p < k; ++p)
      acc = _mm256_fmadd_ps(_mm256_set1_ps(a_row[p * a_stride]), _mm256_loadu_ps(b + p * n + j), acc);
    store_row(c_row + j, acc, accumulate);
  }
  for (; j < n; ++j) {
    float acc = 0.0f;
    for (std::size_t p = 0; p < k; ++p) acc += a_row[p * a_stride] * b[p * n + j];
    c_row[j] = accumulate ? c_row[j] + acc : acc;
  }
}

float dot_avx2(const float* x, const float* y, std::size_t n) {
  __m256 acc0 = _mm256_setzero_ps();
  __m256 acc1 = _mm256_setzero_ps();
  std::size_t i = 0;
  for (; i + 16 <= n; i += 16) {
    acc0 = _mm256_fmadd_ps(_mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i), acc0);
    acc1 = _mm256_fmadd_ps(_mm256_loadu_ps(x + i + 8), _mm256_loadu_ps(y + i + 8), acc1);
  }
  for (; i + 8 <= n; i += 8)
    acc0 = _mm256_fmadd_ps(_mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i), acc0);
  float acc = hsum(_mm256_add_ps(acc0, acc1));
  for (; i < n; ++i) acc += x[i] * y[i];
  return acc;
}

void gemm_avx2(GemmKind kind, std::size_t m, std::size_t n, std::size_t k, const float* a,
               const float* b, float* c, bool accumulate) {
  switch (kind) {
    case GemmKind::NN:
      for (std::size_t i = 0; i < m; ++i) gemm_row(a + i * k, 1, b, c + i * n, n, k, accumulate);
      break;
    case GemmKind::TN:
      for (std::size_t i = 0; i < m; ++i) gemm_row(a + i, m, b, c + i * n, n, k, accumulate);
      break;
    case GemmKind::NT:
      for (std::size_t i = 0; i < m; ++i) {
        const float* a_row = a + i * k;
        for (std::size_t j = 0; j < n; ++j) {
          float v = dot_avx2(a_row, b + j * k, k);
          c[i * n + j] = accumulate ? c[i * n + j] + v : v;
        }
      }
      break;
  }
}

void axpy_avx2(std::size_t n, float alpha, const float* x, float* y) {
  __m256 av = _mm256_set1_ps(alpha);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(y + i, _mm256_fmadd_ps(av, _mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i)));
  for (; i < n; ++i) y[i] += alpha * x[i];
}

void add_avx2(const float* x, const float* y, float* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(out + i, _mm256_add_ps(_mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i)));
  for (; i < n; ++i) out[i] = x[i] + y[i];
}

void mul_avx2(const float* x, const float* y, float* out, std::size_t n) {
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8)
    _mm256_storeu_ps(out + i, _mm256_mul_ps(_mm256_loadu_ps(x + i), _mm256_loadu_ps(y + i)));
  for (; i < n; ++i) out[i] = x[i] * y[i];
}

void scale_avx2(const float* x, float alpha, float* out, std::size_t n) {
  __m256 av = _mm256_set1_ps(alpha);
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) _mm256_storeu_ps(out + i, _mm256_mul_ps(av, _mm256_loadu_ps(x + i)));
  for (; i < n; ++i) out[i] = alpha * x[i];
}

float sum_avx2(const float* x, std::size_t n) {
  __m256 acc = _mm256_setzero_ps();
  std::size_t i = 0;
  for (; i + 8 <= n; i += 8) acc = _mm256_add_ps(acc, _mm256_loadu_ps(x + i));
  float s = hsum(acc);
  for (; i < n; ++i) s += x[i];
  return s;
}

}  // namespace

const KernelTable* avx2_table() {
  static const KernelTable table{"avx2",   gemm_avx2, dot_avx2,   axpy_avx2,
                                 add_avx2, mul_avx2,  scale_avx2, sum_avx2};
  return &table;
}

}  // namespace parauni::kernels

#else

namespace parauni::kernels {
const KernelTable* avx2_table() { return nullptr; }
}  // namespace parauni::kernels

#endif
