#include "mdm/kernels.hpp"

#include <algorithm>
#include <cstdint>

#ifdef MDM_HAVE_OPENMP
#include <omp.h>
#endif

namespace mdm::kernels {

namespace parallel {

// Row blocks are independent; the per-element reduction order matches serial::.

void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
    const auto rows = static_cast<std::int64_t>(m);
#pragma omp parallel for schedule(static)
    for (std::int64_t ii = 0; ii < rows; ++ii) {
        const auto i = static_cast<std::size_t>(ii);
        double* ci = c.data() + i * n;
        if (!accumulate) std::fill(ci, ci + n, 0.0);
        for (std::size_t p = 0; p < k; ++p) {
            const double aip = a[i * k + p];
            const double* bp = b.data() + p * n;
            for (std::size_t j = 0; j < n; ++j) ci[j] += aip * bp[j];
        }
    }
}

void gemm_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
    const auto rows = static_cast<std::int64_t>(m);
#pragma omp parallel for schedule(static)
    for (std::int64_t ii = 0; ii < rows; ++ii) {
        const auto i = static_cast<std::size_t>(ii);
        const double* ai = a.data() + i * k;
        for (std::size_t j = 0; j < n; ++j) {
            const double* bj = b.data() + j * k;
            double acc = 0.0;
            for (std::size_t p = 0; p < k; ++p) acc += ai[p] * bj[p];
            c[i * n + j] = accumulate ? c[i * n + j] + acc : acc;
        }
    }
}

void gemm_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
    const auto rows = static_cast<std::int64_t>(m);
#pragma omp parallel for schedule(static)
    for (std::int64_t ii = 0; ii < rows; ++ii) {
        const auto i = static_cast<std::size_t>(ii);
        double* ci = c.data() + i * n;
        if (!accumulate) std::fill(ci, ci + n, 0.0);
        for (std::size_t p = 0; p < k; ++p) {
            const double api = a[p * m + i];
            const double* bp = b.data() + p * n;
            for (std::size_t j = 0; j < n; ++j) ci[j] += api * bp[j];
        }
    }
}

}  // namespace parallel

namespace {
bool use_parallel(std::size_t m, std::size_t k, std::size_t n) {
#ifdef MDM_HAVE_OPENMP
    return m > 1 && m * k * n >= kParallelThreshold && omp_get_max_threads() > 1 && !omp_in_parallel();
#else
    (void)m; (void)k; (void)n;
    return false;
#endif
}
}  // namespace

void gemm_nn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
    if (use_parallel(m, k, n)) parallel::gemm_nn(a, b, c, m, k, n, accumulate);
    else serial::gemm_nn(a, b, c, m, k, n, accumulate);
}

void gemm_nt(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
    if (use_parallel(m, k, n)) parallel::gemm_nt(a, b, c, m, k, n, accumulate);
    else serial::gemm_nt(a, b, c, m, k, n, accumulate);
}

void gemm_tn(std::span<const double> a, std::span<const double> b, std::span<double> c,
             std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
    if (use_parallel(m, k, n)) parallel::gemm_tn(a, b, c, m, k, n, accumulate);
    else serial::gemm_tn(a, b, c, m, k, n, accumulate);
}

int max_threads() {
#ifdef MDM_HAVE_OPENMP
    return omp_get_max_threads();
#else
    return 1;
#endif
}

}  // namespace mdm::kernels
