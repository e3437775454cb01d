// Compiled with -mavx2 -mfma; only reached after a CPUID check in dispatch.cpp.

#include <immintrin.h>

#include <cmath>

#include "nmhebb/kernels.hpp"

namespace nmhebb::kernels::avx2 {
namespace {

template <typename T>
struct Vec;

template <>
struct Vec<float> {
    using reg = __m256;
    static constexpr std::size_t width = 8;
    static reg zero() { return _mm256_setzero_ps(); }
    static reg load(const float* p) { return _mm256_loadu_ps(p); }
    static void store(float* p, reg v) { _mm256_storeu_ps(p, v); }
    static reg set1(float x) { return _mm256_set1_ps(x); }
    static reg fma(reg a, reg b, reg c) { return _mm256_fmadd_ps(a, b, c); }
    static reg add(reg a, reg b) { return _mm256_add_ps(a, b); }
    static float hsum(reg v) {
        __m128 lo = _mm256_castps256_ps128(v);
        __m128 hi = _mm256_extractf128_ps(v, 1);
        lo = _mm_add_ps(lo, hi);
        __m128 sh = _mm_movehdup_ps(lo);
        lo = _mm_add_ps(lo, sh);
        sh = _mm_movehl_ps(sh, lo);
        return _mm_cvtss_f32(_mm_add_ss(lo, sh));
    }
};

template <>
struct Vec<double> {
    using reg = __m256d;
    static constexpr std::size_t width = 4;
    static reg zero() { return _mm256_setzero_pd(); }
    static reg load(const double* p) { return _mm256_loadu_pd(p); }
    static void store(double* p, reg v) { _mm256_storeu_pd(p, v); }
    static reg set1(double x) { return _mm256_set1_pd(x); }
    static reg fma(reg a, reg b, reg c) { return _mm256_fmadd_pd(a, b, c); }
    static reg add(reg a, reg b) { return _mm256_add_pd(a, b); }
    static double hsum(reg v) {
        __m128d lo = _mm256_castpd256_pd128(v);
        __m128d hi = _mm256_extractf128_pd(v, 1);
        lo = _mm_add_pd(lo, hi);
        return _mm_cvtsd_f64(_mm_add_sd(lo, _mm_unpackhi_pd(lo, lo)));
    }
};

template <typename T>
inline void put(T* c, typename Vec<T>::reg v, bool accumulate) {
    using V = Vec<T>;
    V::store(c, accumulate ? V::add(V::load(c), v) : v);
}

// Register-blocked micro-kernel: ROWS rows of C by two vectors of columns
// (6 x 2 fills 12 of the 16 ymm registers with accumulators).
template <typename T, std::size_t ROWS>
inline void block_2v(std::size_t K, const T* A, std::size_t lda, const T* B, std::size_t ldb, T* C, std::size_t ldc,
                     bool accumulate) {
    using V = Vec<T>;
    typename V::reg acc0[ROWS], acc1[ROWS];
    for (std::size_t r = 0; r < ROWS; ++r) acc0[r] = acc1[r] = V::zero();
    for (std::size_t k = 0; k < K; ++k) {
        const auto b0 = V::load(B + k * ldb);
        const auto b1 = V::load(B + k * ldb + V::width);
        for (std::size_t r = 0; r < ROWS; ++r) {
            const auto a = V::set1(A[r * lda + k]);
            acc0[r] = V::fma(a, b0, acc0[r]);
            acc1[r] = V::fma(a, b1, acc1[r]);
        }
    }
    for (std::size_t r = 0; r < ROWS; ++r) {
        put<T>(C + r * ldc, acc0[r], accumulate);
        put<T>(C + r * ldc + V::width, acc1[r], accumulate);
    }
}

template <typename T, std::size_t ROWS>
inline void block_1v(std::size_t K, const T* A, std::size_t lda, const T* B, std::size_t ldb, T* C, std::size_t ldc,
                     bool accumulate) {
    using V = Vec<T>;
    typename V::reg acc[ROWS];
    for (std::size_t r = 0; r < ROWS; ++r) acc[r] = V::zero();
    for (std::size_t k = 0; k < K; ++k) {
        const auto b = V::load(B + k * ldb);
        for (std::size_t r = 0; r < ROWS; ++r) acc[r] = V::fma(V::set1(A[r * lda + k]), b, acc[r]);
    }
    for (std::size_t r = 0; r < ROWS; ++r) put<T>(C + r * ldc, acc[r], accumulate);
}

template <typename T, std::size_t ROWS>
inline void row_strip(std::size_t N, std::size_t K, const T* A, std::size_t lda, const T* B, std::size_t ldb, T* C,
                      std::size_t ldc, bool accumulate) {
    constexpr std::size_t W = Vec<T>::width;
    std::size_t j = 0;
    for (; j + 2 * W <= N; j += 2 * W) block_2v<T, ROWS>(K, A, lda, B + j, ldb, C + j, ldc, accumulate);
    for (; j + W <= N; j += W) block_1v<T, ROWS>(K, A, lda, B + j, ldb, C + j, ldc, accumulate);
    for (; j < N; ++j)
        for (std::size_t r = 0; r < ROWS; ++r) {
            T s = 0;
            for (std::size_t k = 0; k < K; ++k) s = std::fma(A[r * lda + k], B[k * ldb + j], s);
            T& c = C[r * ldc + j];
            c = accumulate ? c + s : s;
        }
}

template <typename T>
void gemm_nn(std::size_t M, std::size_t N, std::size_t K, const T* A, std::size_t lda, const T* B, std::size_t ldb,
             T* C, std::size_t ldc, bool accumulate) {
    std::size_t i = 0;
    for (; i + 6 <= M; i += 6) row_strip<T, 6>(N, K, A + i * lda, lda, B, ldb, C + i * ldc, ldc, accumulate);
    for (; i + 4 <= M; i += 4) row_strip<T, 4>(N, K, A + i * lda, lda, B, ldb, C + i * ldc, ldc, accumulate);
    for (; i < M; ++i) row_strip<T, 1>(N, K, A + i * lda, lda, B, ldb, C + i * ldc, ldc, accumulate);
}

template <typename T>
T dot(const T* a, const T* b, std::size_t n) {
    using V = Vec<T>;
    constexpr std::size_t W = V::width;
    auto s0 = V::zero(), s1 = V::zero();
    std::size_t i = 0;
    for (; i + 2 * W <= n; i += 2 * W) {
        s0 = V::fma(V::load(a + i), V::load(b + i), s0);
        s1 = V::fma(V::load(a + i + W), V::load(b + i + W), s1);
    }
    for (; i + W <= n; i += W) s0 = V::fma(V::load(a + i), V::load(b + i), s0);
    T s = V::hsum(V::add(s0, s1));
    for (; i < n; ++i) s = std::fma(a[i], b[i], s);
    return s;
}

// Four output columns at a time share each load of the A row.
template <typename T>
void gemm_nt(std::size_t M, std::size_t N, std::size_t K, const T* A, std::size_t lda, const T* B, std::size_t ldb,
             T* C, std::size_t ldc, bool accumulate) {
    using V = Vec<T>;
    constexpr std::size_t W = V::width;
    for (std::size_t i = 0; i < M; ++i) {
        const T* a = A + i * lda;
        T* c = C + i * ldc;
        std::size_t j = 0;
        for (; j + 4 <= N; j += 4) {
            const T* b0 = B + j * ldb;
            const T* b1 = b0 + ldb;
            const T* b2 = b1 + ldb;
            const T* b3 = b2 + ldb;
            auto s0 = V::zero(), s1 = V::zero(), s2 = V::zero(), s3 = V::zero();
            std::size_t k = 0;
            for (; k + W <= K; k += W) {
                const auto av = V::load(a + k);
                s0 = V::fma(av, V::load(b0 + k), s0);
                s1 = V::fma(av, V::load(b1 + k), s1);
                s2 = V::fma(av, V::load(b2 + k), s2);
                s3 = V::fma(av, V::load(b3 + k), s3);
            }
            T r[4] = {V::hsum(s0), V::hsum(s1), V::hsum(s2), V::hsum(s3)};
            for (; k < K; ++k) {
                r[0] = std::fma(a[k], b0[k], r[0]);
                r[1] = std::fma(a[k], b1[k], r[1]);
                r[2] = std::fma(a[k], b2[k], r[2]);
                r[3] = std::fma(a[k], b3[k], r[3]);
            }
            for (int q = 0; q < 4; ++q) c[j + q] = accumulate ? c[j + q] + r[q] : r[q];
        }
        for (; j < N; ++j) {
            const T s = dot(a, B + j * ldb, K);
            c[j] = accumulate ? c[j] + s : s;
        }
    }
}

template <typename T>
void axpy(T alpha, const T* x, T* y, std::size_t n) {
    using V = Vec<T>;
    constexpr std::size_t W = V::width;
    const auto av = V::set1(alpha);
    std::size_t i = 0;
    for (; i + W <= n; i += W) V::store(y + i, V::fma(av, V::load(x + i), V::load(y + i)));
    for (; i < n; ++i) y[i] = std::fma(alpha, x[i], y[i]);
}

}  // namespace

template <typename T>
const Table<T>& table() {
    static const Table<T> t{&gemm_nn<T>, &gemm_nt<T>, &dot<T>, &axpy<T>};
    return t;
}

template const Table<float>& table<float>();
template const Table<double>& table<double>();

}  // namespace nmhebb::kernels::avx2
