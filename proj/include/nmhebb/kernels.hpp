#pragma once

// Arithmetic inner loops behind conv2d, dense and the optimizer.
//
// Every kernel exists as a portable scalar reference and, on x86-64, as an
// AVX2+FMA variant. The variant is chosen once at startup from CPUID and can
// be overridden with NMHEBB_ISA=scalar|avx2 or set_isa(). Each variant has a
// fixed reduction order, so results are bit-reproducible for a given ISA;
// scalar and AVX2 agree to rounding (see tests/unit/test_kernels.cpp).

#include <cstddef>
#include <string_view>

namespace nmhebb::kernels {

enum class Isa { scalar, avx2 };

std::string_view isa_name(Isa isa);
bool isa_available(Isa isa);
Isa active_isa();
// Throws std::invalid_argument if the ISA is not available on this CPU.
void set_isa(Isa isa);

// C[M,N] (+)= A[M,K] * B[K,N]   (row-major, leading dimensions in elements)
template <typename T>
void gemm_nn(std::size_t M, std::size_t N, std::size_t K, const T* A, std::size_t lda, const T* B, std::size_t ldb,
             T* C, std::size_t ldc, bool accumulate);

// C[M,N] (+)= A[M,K] * B[N,K]^T
template <typename T>
void gemm_nt(std::size_t M, std::size_t N, std::size_t K, const T* A, std::size_t lda, const T* B, std::size_t ldb,
             T* C, std::size_t ldc, bool accumulate);

template <typename T>
T dot(const T* a, const T* b, std::size_t n);

// y += alpha * x
template <typename T>
void axpy(T alpha, const T* x, T* y, std::size_t n);

// Per-ISA entry points, exposed so tests can compare variants directly.
template <typename T>
struct Table {
    void (*gemm_nn)(std::size_t, std::size_t, std::size_t, const T*, std::size_t, const T*, std::size_t, T*,
                    std::size_t, bool);
    void (*gemm_nt)(std::size_t, std::size_t, std::size_t, const T*, std::size_t, const T*, std::size_t, T*,
                    std::size_t, bool);
    T (*dot)(const T*, const T*, std::size_t);
    void (*axpy)(T, const T*, T*, std::size_t);
};

template <typename T>
const Table<T>& table_for(Isa isa);

namespace scalar {
template <typename T>
const Table<T>& table();
}

#if defined(__x86_64__) || defined(_M_X64)
namespace avx2 {
template <typename T>
const Table<T>& table();
}
#endif

}  // namespace nmhebb::kernels
