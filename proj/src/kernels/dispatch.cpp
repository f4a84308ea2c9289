#include <atomic>
#include <cstdlib>
#include <string_view>

#include "parauni/kernels/kernels.hpp"

namespace parauni::kernels {

bool cpu_has_avx2() {
#if defined(__x86_64__) || defined(__i386__)
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

namespace {

const KernelTable* detect() {
  const KernelTable* simd = cpu_has_avx2() ? avx2_table() : nullptr;
  if (const char* forced = std::getenv("PARAUNI_KERNELS")) {
    std::string_view name(forced);
    if (name == "scalar") return &scalar_table();
    if (name == "avx2" && simd) return simd;
  }
  return simd ? simd : &scalar_table();
}

std::atomic<const KernelTable*>& slot() {
  static std::atomic<const KernelTable*> table{detect()};
  return table;
}

}  // namespace

const KernelTable& active() { return *slot().load(std::memory_order_relaxed); }

void set_active(const KernelTable& table) { slot().store(&table, std::memory_order_relaxed); }

}  // namespace parauni::kernels
