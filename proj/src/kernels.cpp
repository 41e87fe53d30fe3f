#include "duodiff/kernels.hpp"

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <thread>
#include <vector>

namespace duodiff::kernels {
namespace {

std::atomic<int> g_threads{0};

constexpr int64_t kColBlock = 64;

template <int R>
void rows_kernel(int64_t N, int64_t K, const float* A, const float* B, float* C) {
  for (int64_t j0 = 0; j0 < N; j0 += kColBlock) {
    const int64_t nb = std::min(kColBlock, N - j0);
    float acc[R][kColBlock] = {};
    if (nb == kColBlock) {
      for (int64_t k = 0; k < K; ++k) {
        const float* brow = B + k * N + j0;
        for (int r = 0; r < R; ++r) {
          const float a = A[r * K + k];
          for (int64_t j = 0; j < kColBlock; ++j) acc[r][j] += a * brow[j];
        }
      }
    } else {
      for (int64_t k = 0; k < K; ++k) {
        const float* brow = B + k * N + j0;
        for (int r = 0; r < R; ++r) {
          const float a = A[r * K + k];
          for (int64_t j = 0; j < nb; ++j) acc[r][j] += a * brow[j];
        }
      }
    }
    for (int r = 0; r < R; ++r) std::copy_n(acc[r], nb, C + r * N + j0);
  }
}

void gemm_rows(int64_t row_begin, int64_t row_end, int64_t N, int64_t K, const float* A, const float* B,
               float* C) {
  int64_t i = row_begin;
  for (; i + 4 <= row_end; i += 4) rows_kernel<4>(N, K, A + i * K, B, C + i * N);
  for (; i < row_end; ++i) rows_kernel<1>(N, K, A + i * K, B, C + i * N);
}

}  // namespace

int num_threads() {
  int n = g_threads.load();
  if (n == 0) {
    n = 1;
    if (const char* env = std::getenv("DUODIFF_THREADS")) n = std::max(1, std::atoi(env));
    g_threads.store(n);
  }
  return n;
}

void set_num_threads(int n) { g_threads.store(std::max(1, n)); }

void gemm_nn(int64_t M, int64_t N, int64_t K, const float* A, const float* B, float* C) {
  const int threads = num_threads();
  if (threads <= 1 || M < 32 || M * N * K < (int64_t{1} << 20)) {
    gemm_rows(0, M, N, K, A, B, C);
    return;
  }
  // Blocks are multiples of 4 rows; each row's arithmetic is unchanged.
  const int64_t chunk = ((M + threads - 1) / threads + 3) / 4 * 4;
  std::vector<std::jthread> pool;
  for (int64_t b = chunk; b < M; b += chunk)
    pool.emplace_back([=] { gemm_rows(b, std::min(M, b + chunk), N, K, A, B, C); });
  gemm_rows(0, std::min(M, chunk), N, K, A, B, C);
}

void gemm_nt_acc(int64_t M, int64_t N, int64_t K, const float* A, const float* B, float* C) {
  std::vector<float> bt(static_cast<size_t>(K * N));
  for (int64_t n = 0; n < N; ++n)
    for (int64_t k = 0; k < K; ++k) bt[static_cast<size_t>(k * N + n)] = B[n * K + k];
  std::vector<float> tmp(static_cast<size_t>(M * N));
  gemm_nn(M, N, K, A, bt.data(), tmp.data());
  for (int64_t i = 0; i < M * N; ++i) C[i] += tmp[static_cast<size_t>(i)];
}

void gemm_tn_acc(int64_t M, int64_t N, int64_t K, const float* A, const float* B, float* C) {
  std::vector<float> at(static_cast<size_t>(K * M));
  for (int64_t i = 0; i < M; ++i)
    for (int64_t k = 0; k < K; ++k) at[static_cast<size_t>(k * M + i)] = A[i * K + k];
  std::vector<float> tmp(static_cast<size_t>(K * N));
  gemm_nn(K, N, M, at.data(), B, tmp.data());
  for (int64_t i = 0; i < K * N; ++i) C[i] += tmp[static_cast<size_t>(i)];
}

}  // namespace duodiff::kernels
