#include <doctest.h>

#include <cmath>
#include <random>
#include <vector>

#include "nmhebb/kernels.hpp"

using namespace nmhebb;

namespace {

template <typename T>
std::vector<T> random_vec(std::size_t n, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::vector<T> v(n);
    for (auto& x : v) x = static_cast<T>(u(rng));
    return v;
}

// Triple loop in long double: independent of both kernel variants.
template <typename T>
std::vector<long double> naive_nn(std::size_t M, std::size_t N, std::size_t K, const std::vector<T>& A,
                                  const std::vector<T>& B) {
    std::vector<long double> C(M * N, 0.0L);
    for (std::size_t i = 0; i < M; ++i)
        for (std::size_t j = 0; j < N; ++j)
            for (std::size_t k = 0; k < K; ++k) C[i * N + j] += static_cast<long double>(A[i * K + k]) * B[k * N + j];
    return C;
}

template <typename T>
double tol();
template <>
double tol<float>() { return 1e-4; }
template <>
double tol<double>() { return 1e-12; }

template <typename T>
void check_variants() {
    std::mt19937_64 rng(42);
    const std::size_t shapes[][3] = {{1, 1, 1}, {4, 16, 3}, {5, 17, 9}, {32, 256, 288}, {7, 3, 13}, {9, 33, 1}};
    std::vector<kernels::Isa> isas{kernels::Isa::scalar};
    if (kernels::isa_available(kernels::Isa::avx2)) isas.push_back(kernels::Isa::avx2);

    for (auto& s : shapes) {
        const std::size_t M = s[0], N = s[1], K = s[2];
        auto A = random_vec<T>(M * K, rng);
        auto B = random_vec<T>(K * N, rng);
        auto Bt = random_vec<T>(N * K, rng);
        const auto ref = naive_nn(M, N, K, A, B);
        for (auto isa : isas) {
            CAPTURE(kernels::isa_name(isa));
            CAPTURE(M);
            CAPTURE(N);
            CAPTURE(K);
            const auto& t = kernels::table_for<T>(isa);
            std::vector<T> C(M * N, T(0.5));
            t.gemm_nn(M, N, K, A.data(), K, B.data(), N, C.data(), N, false);
            for (std::size_t i = 0; i < C.size(); ++i) CHECK(std::abs(C[i] - static_cast<double>(ref[i])) <= tol<T>() * K);
            // accumulate adds onto existing contents
            std::vector<T> C2(M * N, T(1));
            t.gemm_nn(M, N, K, A.data(), K, B.data(), N, C2.data(), N, true);
            for (std::size_t i = 0; i < C2.size(); ++i) CHECK(std::abs(C2[i] - 1 - C[i]) <= tol<T>() * 4);

            std::vector<T> D(M * N);
            t.gemm_nt(M, N, K, A.data(), K, Bt.data(), K, D.data(), N, false);
            for (std::size_t i = 0; i < M; ++i)
                for (std::size_t j = 0; j < N; ++j) {
                    long double r = 0;
                    for (std::size_t k = 0; k < K; ++k) r += static_cast<long double>(A[i * K + k]) * Bt[j * K + k];
                    CHECK(std::abs(D[i * N + j] - static_cast<double>(r)) <= tol<T>() * K);
                }
        }
    }
}

}  // namespace

TEST_CASE("gemm variants agree with a long-double reference") {
    check_variants<float>();
    check_variants<double>();
}

TEST_CASE("scalar and avx2 kernels agree to rounding") {
    if (!kernels::isa_available(kernels::Isa::avx2)) return;
    std::mt19937_64 rng(9);
    const auto& s = kernels::table_for<double>(kernels::Isa::scalar);
    const auto& v = kernels::table_for<double>(kernels::Isa::avx2);
    for (std::size_t n : {0u, 1u, 3u, 8u, 31u, 257u}) {
        auto a = random_vec<double>(n, rng), b = random_vec<double>(n, rng);
        CHECK(s.dot(a.data(), b.data(), n) == doctest::Approx(v.dot(a.data(), b.data(), n)).epsilon(1e-12));
        auto y1 = b, y2 = b;
        s.axpy(0.75, a.data(), y1.data(), n);
        v.axpy(0.75, a.data(), y2.data(), n);
        for (std::size_t i = 0; i < n; ++i) CHECK(y1[i] == doctest::Approx(y2[i]).epsilon(1e-14));
    }
}

TEST_CASE("each variant is bit-reproducible") {
    std::mt19937_64 rng(3);
    auto A = random_vec<float>(12 * 40, rng), B = random_vec<float>(40 * 70, rng);
    for (auto isa : {kernels::Isa::scalar, kernels::Isa::avx2}) {
        if (!kernels::isa_available(isa)) continue;
        std::vector<float> c1(12 * 70), c2(12 * 70);
        kernels::table_for<float>(isa).gemm_nn(12, 70, 40, A.data(), 40, B.data(), 70, c1.data(), 70, false);
        kernels::table_for<float>(isa).gemm_nn(12, 70, 40, A.data(), 40, B.data(), 70, c2.data(), 70, false);
        CHECK(c1 == c2);
    }
}

TEST_CASE("set_isa switches the dispatched variant") {
    const auto before = kernels::active_isa();
    kernels::set_isa(kernels::Isa::scalar);
    CHECK(kernels::active_isa() == kernels::Isa::scalar);
    kernels::set_isa(before);
    CHECK(kernels::active_isa() == before);
}
