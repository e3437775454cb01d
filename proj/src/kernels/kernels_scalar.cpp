#include <algorithm>
#include <vector>

#include "nmhebb/kernels.hpp"

namespace nmhebb::kernels::scalar {
namespace {

// i-k-j order with a per-row accumulator: each C element sums k ascending.
template <typename T>
void gemm_nn(std::size_t M, std::size_t N, std::size_t K, const T* A, std::size_t lda, const T* B, std::size_t ldb,
             T* C, std::size_t ldc, bool accumulate) {
    std::vector<T> row(N);
    for (std::size_t i = 0; i < M; ++i) {
        std::fill(row.begin(), row.end(), T(0));
        for (std::size_t k = 0; k < K; ++k) {
            const T a = A[i * lda + k];
            const T* b = B + k * ldb;
            for (std::size_t j = 0; j < N; ++j) row[j] += a * b[j];
        }
        T* c = C + i * ldc;
        if (accumulate)
            for (std::size_t j = 0; j < N; ++j) c[j] += row[j];
        else
            for (std::size_t j = 0; j < N; ++j) c[j] = row[j];
    }
}

template <typename T>
T dot(const T* a, const T* b, std::size_t n) {
    T s = 0;
    for (std::size_t i = 0; i < n; ++i) s += a[i] * b[i];
    return s;
}

template <typename T>
void gemm_nt(std::size_t M, std::size_t N, std::size_t K, const T* A, std::size_t lda, const T* B, std::size_t ldb,
             T* C, std::size_t ldc, bool accumulate) {
    for (std::size_t i = 0; i < M; ++i)
        for (std::size_t j = 0; j < N; ++j) {
            const T s = dot(A + i * lda, B + j * ldb, K);
            C[i * ldc + j] = accumulate ? C[i * ldc + j] + s : s;
        }
}

template <typename T>
void axpy(T alpha, const T* x, T* y, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

}  // namespace

template <typename T>
const Table<T>& table() {
    static const Table<T> t{&gemm_nn<T>, &gemm_nt<T>, &dot<T>, &axpy<T>};
    return t;
}

template const Table<float>& table<float>();
template const Table<double>& table<double>();

}  // namespace nmhebb::kernels::scalar
