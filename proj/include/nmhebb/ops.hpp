#pragma once

// Differentiable primitives. Each call appends one node to the graph.

#include <cstddef>

#include "nmhebb/graph.hpp"

namespace nmhebb::ad {

enum class Mode { train, eval };

// Output spatial extent of a convolution/pooling window; throws ConfigError
// if the window does not tile the padded input exactly.
std::size_t window_out(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad, const char* what);

// x [N,Cin,H,W], w [Cout,Cin,K,K], b [Cout] or an invalid Var for no bias
// -> [N,Cout,H',W'] (cross-correlation)
template <typename T>
Var conv2d(Graph<T>& g, Var x, Var w, Var b, std::size_t stride, std::size_t padding);

// x [N,D], w [D,M], b [M] -> [N,M]
template <typename T>
Var dense(Graph<T>& g, Var x, Var w, Var b);

// Subgradient at 0 is 0.
template <typename T>
Var relu(Graph<T>& g, Var x);

template <typename T>
Var sigmoid(Graph<T>& g, Var x);

// Ties resolve to the first maximum in row-major window order.
template <typename T>
Var max_pool2d(Graph<T>& g, Var x, std::size_t window, std::size_t stride);

// [N,C,H,W] -> [N,C]
template <typename T>
Var global_avg_pool(Graph<T>& g, Var x);

template <typename T>
struct BatchNormRunning {
    Tensor<T> mean;
    Tensor<T> var;
};

struct BatchNormOptions {
    double eps = 1e-5;
    double momentum = 0.1;
    // When false, training-mode forwards leave running statistics untouched.
    bool update_running = true;
};

// Per-channel normalization of [N,C,H,W]. Training mode normalizes with the
// biased batch variance and, if requested, folds the batch statistics into
// `running` once (replays do not update it again). Eval mode uses `running`.
template <typename T>
Var batch_norm2d(Graph<T>& g, Var x, Var gamma, Var beta, BatchNormRunning<T>& running, Mode mode,
                 const BatchNormOptions& opt = {});

template <typename T>
Var add(Graph<T>& g, Var a, Var b);

template <typename T>
Var sub(Graph<T>& g, Var a, Var b);

// Elementwise product of equal shapes.
template <typename T>
Var mul(Graph<T>& g, Var a, Var b);

template <typename T>
Var scale(Graph<T>& g, Var a, T s);

// Sum of all elements -> scalar (shape {}).
template <typename T>
Var sum(Graph<T>& g, Var a);

template <typename T>
Var mean(Graph<T>& g, Var a);

template <typename T>
Var reshape(Graph<T>& g, Var a, Shape shape);

// Rows [begin, begin+count) along the first axis.
template <typename T>
Var slice_rows(Graph<T>& g, Var a, std::size_t begin, std::size_t count);

}  // namespace nmhebb::ad
