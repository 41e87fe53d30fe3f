#pragma once

#include <cstdint>

namespace duodiff::kernels {

// Dense GEMM kernels over row-major buffers.
//
// gemm_nn computes every output row with the same instruction sequence
// regardless of M, so a row's result does not depend on which other rows
// share the call. Early-exit equivalence between shrinking-batch and
// full-batch evaluation relies on this.

/// C[M,N] = A[M,K] * B[K,N]  (overwrites C)
void gemm_nn(int64_t M, int64_t N, int64_t K, const float* A, const float* B, float* C);

/// C[M,N] += A[M,K] * B[N,K]^T
void gemm_nt_acc(int64_t M, int64_t N, int64_t K, const float* A, const float* B, float* C);

/// C[K,N] += A[M,K]^T * B[M,N]
void gemm_tn_acc(int64_t M, int64_t N, int64_t K, const float* A, const float* B, float* C);

/// Worker cap for row-parallel kernels. Reads DUODIFF_THREADS on first use;
/// 1 (the default) is the strict single-threaded mode.
int num_threads();
void set_num_threads(int n);

}  // namespace duodiff::kernels
