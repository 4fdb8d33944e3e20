#pragma once

#include <cstdint>
#include <vector>

#include "dmh/check.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace dmh {

// First-order linear recurrence over M independent lanes:
//   h[t] = a[t] * h[t-1] + b[t],   h[-1] = h0 (zero when null).
// Inputs a, b and output h are row-major (L, M).
template <typename Real>
void linear_scan_sequential(const Real* a, const Real* b, Real* h, int64_t L,
                            int64_t M, const Real* h0 = nullptr) {
  for (int64_t m = 0; m < M; ++m) h[m] = a[m] * (h0 ? h0[m] : Real(0)) + b[m];
  for (int64_t t = 1; t < L; ++t) {
    const Real* at = a + t * M;
    const Real* bt = b + t * M;
    const Real* hp = h + (t - 1) * M;
    Real* ht = h + t * M;
    for (int64_t m = 0; m < M; ++m) ht[m] = at[m] * hp[m] + bt[m];
  }
}

// Same recurrence via a work-efficient (Blelloch-style) associative scan over
// elements (a, b) with composition (a2, b2) ∘ (a1, b1) = (a2*a1, a2*b1 + b2).
// The combination tree is fixed, so results do not depend on worker count.
template <typename Real>
void linear_scan_parallel(const Real* a, const Real* b, Real* h, int64_t L, int64_t M) {
  std::vector<Real> ca(a, a + L * M);
  std::vector<Real> cb(b, b + L * M);
  auto combine_into = [&](int64_t left, int64_t right) {
    Real* al = ca.data() + left * M;
    Real* bl = cb.data() + left * M;
    Real* ar = ca.data() + right * M;
    Real* br = cb.data() + right * M;
    for (int64_t m = 0; m < M; ++m) {
      br[m] = ar[m] * bl[m] + br[m];
      ar[m] = ar[m] * al[m];
    }
  };
  int64_t pow2 = 1;
  while (pow2 < L) pow2 <<= 1;
  for (int64_t stride = 1; stride < L; stride <<= 1) {
    int64_t count = (L - (2 * stride - 1) + 2 * stride - 1) / (2 * stride);
    if (count <= 0) continue;
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (count > 4)
#endif
    for (int64_t k = 0; k < count; ++k) {
      int64_t i = 2 * stride - 1 + k * 2 * stride;
      if (i < L) combine_into(i - stride, i);
    }
  }
  for (int64_t stride = pow2 >> 1; stride >= 1; stride >>= 1) {
    int64_t first = 3 * stride - 1;
    if (first >= L) continue;
    int64_t count = (L - first + 2 * stride - 1) / (2 * stride);
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (count > 4)
#endif
    for (int64_t k = 0; k < count; ++k) {
      int64_t i = first + k * 2 * stride;
      if (i < L) combine_into(i - stride, i);
    }
  }
  // h[-1] = 0, so the inclusive prefix offset term is just b.
  std::copy(cb.begin(), cb.end(), h);
}

}  // namespace dmh
