#pragma once

#include <algorithm>
#include <cstdint>
#include <cstring>

namespace ldseg::nn::detail {

// C[M,N] += A[M,K] * B[K,N], all row-major. Register-tiled 4x64 kernel with a
// fixed per-element accumulation order (k ascending), so results are
// independent of blocking and reproducible run to run. gcc/clang vectorize the
// fixed-size hot path to FMA code at -O3.
template <typename T>
void gemm_accum(std::int64_t M, std::int64_t N, std::int64_t K, const T* A, std::int64_t lda,
                const T* B, std::int64_t ldb, T* C, std::int64_t ldc) {
  constexpr std::int64_t MR = 4;
  constexpr std::int64_t NR = 64;
  for (std::int64_t i0 = 0; i0 < M; i0 += MR) {
    const std::int64_t mr = std::min(MR, M - i0);
    for (std::int64_t j0 = 0; j0 < N; j0 += NR) {
      const std::int64_t nr = std::min(NR, N - j0);
      T acc[MR][NR];
      if (mr == MR && nr == NR) {
        for (auto& row : acc) std::memset(row, 0, sizeof(row));
        for (std::int64_t k = 0; k < K; ++k) {
          const T a0 = A[(i0 + 0) * lda + k];
          const T a1 = A[(i0 + 1) * lda + k];
          const T a2 = A[(i0 + 2) * lda + k];
          const T a3 = A[(i0 + 3) * lda + k];
          const T* b = B + k * ldb + j0;
          for (std::int64_t j = 0; j < NR; ++j) {
            acc[0][j] += a0 * b[j];
            acc[1][j] += a1 * b[j];
            acc[2][j] += a2 * b[j];
            acc[3][j] += a3 * b[j];
          }
        }
      } else {
        for (std::int64_t r = 0; r < mr; ++r) std::memset(acc[r], 0, sizeof(T) * static_cast<std::size_t>(nr));
        for (std::int64_t k = 0; k < K; ++k) {
          const T* b = B + k * ldb + j0;
          for (std::int64_t r = 0; r < mr; ++r) {
            const T a = A[(i0 + r) * lda + k];
            for (std::int64_t j = 0; j < nr; ++j) acc[r][j] += a * b[j];
          }
        }
      }
      for (std::int64_t r = 0; r < mr; ++r) {
        T* crow = C + (i0 + r) * ldc + j0;
        for (std::int64_t j = 0; j < nr; ++j) crow[j] += acc[r][j];
      }
    }
  }
}

}  // namespace ldseg::nn::detail
