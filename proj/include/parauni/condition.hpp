#pragma once

#include "parauni/tensor.hpp"

namespace parauni {

// Fused conditioning tensor c[N_q, D_c] read by the denoiser's cross-attention.
struct Condition {
  Tensor c;
};

}  // namespace parauni
