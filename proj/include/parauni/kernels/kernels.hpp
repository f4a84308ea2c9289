#pragma once

// Dense f32 inner loops used by the tensor core. Every kernel has a scalar
// reference implementation; SIMD variants must agree with it to within
// accumulation-order rounding (see tests/test_kernels.cpp).

#include <cstddef>
#include <string_view>

namespace parauni::kernels {

// C[m,n] (+)= op(A) * op(B), row-major, no padding.
//   NN: A[m,k] B[k,n]    NT: A[m,k] B[n,k]    TN: A[k,m] B[k,n]
enum class GemmKind { NN, NT, TN };

struct KernelTable {
  std::string_view name;
  void (*gemm)(GemmKind kind, std::size_t m, std::size_t n, std::size_t k, const float* a,
               const float* b, float* c, bool accumulate);
  float (*dot)(const float* x, const float* y, std::size_t n);
  // y += alpha * x
  void (*axpy)(std::size_t n, float alpha, const float* x, float* y);
  // out = x + y
  void (*add)(const float* x, const float* y, float* out, std::size_t n);
  // out = x * y
  void (*mul)(const float* x, const float* y, float* out, std::size_t n);
  // out = alpha * x
  void (*scale)(const float* x, float alpha, float* out, std::size_t n);
  float (*sum)(const float* x, std::size_t n);
};

const KernelTable& scalar_table();
// Null when the binary was built without the variant.
const KernelTable* avx2_table();

// Active table: AVX2 when the CPU reports avx2+fma, scalar otherwise.
// PARAUNI_KERNELS=scalar|avx2 in the environment forces a choice at startup.
const KernelTable& active();

// Overrides the active table for the rest of the process. Tests use this to
// run the same model code through both variants.
void set_active(const KernelTable& table);

bool cpu_has_avx2();

}  // namespace parauni::kernels
