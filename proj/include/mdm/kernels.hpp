#pragma once

// Dense linear-algebra kernels behind the autodiff engine.
//
// Every kernel exists twice: a plain serial loop nest (the reference) and an
// OpenMP version that splits the outermost output dimension across threads.
// Both accumulate each output element over the reduction index in ascending
// order, so their results are bitwise identical for any thread count.

#include <cstddef>
#include <span>

namespace mdm::kernels {

// C[m x n] (+)= A[m x k] * B[k x n]
// C[m x n] (+)= A[m x k] * B[n x k]^T
// C[m x n] (+)= A[k x m]^T * B[k x n]
// When `accumulate` is false C is overwritten.

namespace serial {
void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n, bool accumulate = false);
void gemm_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n, bool accumulate = false);
void gemm_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n, bool accumulate = false);
}  // namespace serial

namespace parallel {
void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n, bool accumulate = false);
void gemm_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n, bool accumulate = false);
void gemm_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n, bool accumulate = false);
}  // namespace parallel

/// Problems with fewer multiply-adds than this stay on the serial path.
inline constexpr std::size_t kParallelThreshold = 1u << 16;

// Dispatching entry points used by the rest of the library.
void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n, bool accumulate = false);
void gemm_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n, bool accumulate = false);
void gemm_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n, bool accumulate = false);

/// Number of threads the parallel kernels would use (1 without OpenMP).
int max_threads();

}  // namespace mdm::kernels
