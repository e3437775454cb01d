#include <atomic>
#include <cstdlib>
#include <stdexcept>
#include <string>

#include "nmhebb/kernels.hpp"

namespace nmhebb::kernels {
namespace {

#if defined(__x86_64__) || defined(_M_X64)
constexpr bool kX86 = true;
#else
constexpr bool kX86 = false;
#endif

bool cpu_has_avx2() {
#if defined(__x86_64__) || defined(_M_X64)
    __builtin_cpu_init();
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
    return false;
#endif
}

Isa initial_isa() {
    if (const char* env = std::getenv("NMHEBB_ISA")) {
        const std::string v(env);
        if (v == "scalar") return Isa::scalar;
        if (v == "avx2" && cpu_has_avx2()) return Isa::avx2;
    }
    return cpu_has_avx2() ? Isa::avx2 : Isa::scalar;
}

std::atomic<Isa>& current() {
    static std::atomic<Isa> isa{initial_isa()};
    return isa;
}

}  // namespace

std::string_view isa_name(Isa isa) { return isa == Isa::avx2 ? "avx2" : "scalar"; }

bool isa_available(Isa isa) { return isa == Isa::scalar || (kX86 && cpu_has_avx2()); }

Isa active_isa() { return current().load(std::memory_order_relaxed); }

void set_isa(Isa isa) {
    if (!isa_available(isa)) throw std::invalid_argument("ISA not available: " + std::string(isa_name(isa)));
    current().store(isa, std::memory_order_relaxed);
}

template <typename T>
const Table<T>& table_for(Isa isa) {
#if defined(__x86_64__) || defined(_M_X64)
    if (isa == Isa::avx2) return avx2::table<T>();
#endif
    (void)isa;
    return scalar::table<T>();
}

template <typename T>
void gemm_nn(std::size_t M, std::size_t N, std::size_t K, const T* A, std::size_t lda, const T* B, std::size_t ldb,
             T* C, std::size_t ldc, bool accumulate) {
    table_for<T>(active_isa()).gemm_nn(M, N, K, A, lda, B, ldb, C, ldc, accumulate);
}

template <typename T>
void gemm_nt(std::size_t M, std::size_t N, std::size_t K, const T* A, std::size_t lda, const T* B, std::size_t ldb,
             T* C, std::size_t ldc, bool accumulate) {
    table_for<T>(active_isa()).gemm_nt(M, N, K, A, lda, B, ldb, C, ldc, accumulate);
}

template <typename T>
T dot(const T* a, const T* b, std::size_t n) {
    return table_for<T>(active_isa()).dot(a, b, n);
}

template <typename T>
void axpy(T alpha, const T* x, T* y, std::size_t n) {
    table_for<T>(active_isa()).axpy(alpha, x, y, n);
}

#define NMHEBB_INSTANTIATE(T)                                                                                      \
    template const Table<T>& table_for<T>(Isa);                                                                    \
    template void gemm_nn<T>(std::size_t, std::size_t, std::size_t, const T*, std::size_t, const T*, std::size_t, \
                             T*, std::size_t, bool);                                                               \
    template void gemm_nt<T>(std::size_t, std::size_t, std::size_t, const T*, std::size_t, const T*, std::size_t, \
                             T*, std::size_t, bool);                                                               \
    template T dot<T>(const T*, const T*, std::size_t);                                                            \
    template void axpy<T>(T, const T*, T*, std::size_t);

NMHEBB_INSTANTIATE(float)
NMHEBB_INSTANTIATE(double)
#undef NMHEBB_INSTANTIATE

}  // namespace nmhebb::kernels
