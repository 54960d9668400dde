#pragma once

#include <cstdint>

namespace veil::detail {

/// C (M x N, row-major) = op(A) * op(B) (+ C when accumulate).
/// op(A) is M x K: A is stored M x K, or K x M when trans_a.
/// op(B) is K x N: B is stored K x N, or N x K when trans_b.
void gemm(bool trans_a, bool trans_b, std::int64_t m, std::int64_t n, std::int64_t k, const float* a,
          const float* b, float* c, bool accumulate);

}  // namespace veil::detail
