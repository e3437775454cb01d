#include "nmhebb/ops.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <memory>
#include <string>

#include "nmhebb/kernels.hpp"

namespace nmhebb::ad {
namespace {

void expect(bool ok, const std::string& msg) {
    if (!ok) throw ShapeError(msg);
}

void expect_same(const Shape& a, const Shape& b, const char* op) {
    expect(a == b, std::string(op) + ": shape mismatch " + shape_str(a) + " vs " + shape_str(b));
}

template <typename T>
void transpose(const T* src, std::size_t rows, std::size_t cols, T* dst) {
    for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) dst[c * rows + r] = src[r * cols + c];
}

struct ConvGeom {
    std::size_t N, C, H, W, Co, K, stride, pad, Ho, Wo;
    std::size_t ck() const { return C * K * K; }
    std::size_t hw() const { return Ho * Wo; }
};

// Output columns [lo, hi) of a kernel tap read inside the input row.
inline void valid_span(const ConvGeom& g, std::size_t kw, std::size_t& lo, std::size_t& hi) {
    const auto off = static_cast<std::ptrdiff_t>(kw) - static_cast<std::ptrdiff_t>(g.pad);
    const auto s = static_cast<std::ptrdiff_t>(g.stride);
    std::ptrdiff_t a = off >= 0 ? 0 : (-off + s - 1) / s;
    std::ptrdiff_t b = (static_cast<std::ptrdiff_t>(g.W) - off + s - 1) / s;
    a = std::min<std::ptrdiff_t>(a, static_cast<std::ptrdiff_t>(g.Wo));
    b = std::clamp<std::ptrdiff_t>(b, a, static_cast<std::ptrdiff_t>(g.Wo));
    lo = static_cast<std::size_t>(a);
    hi = static_cast<std::size_t>(b);
}

template <typename T>
void im2col(const ConvGeom& g, const T* x, T* col) {
    const std::size_t hw = g.hw();
    for (std::size_t c = 0; c < g.C; ++c)
        for (std::size_t kh = 0; kh < g.K; ++kh)
            for (std::size_t kw = 0; kw < g.K; ++kw) {
                T* row = col + ((c * g.K + kh) * g.K + kw) * hw;
                std::size_t lo, hi;
                valid_span(g, kw, lo, hi);
                for (std::size_t oh = 0; oh < g.Ho; ++oh) {
                    T* out = row + oh * g.Wo;
                    const auto ih = static_cast<std::ptrdiff_t>(oh * g.stride + kh) - static_cast<std::ptrdiff_t>(g.pad);
                    if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(g.H)) {
                        std::fill(out, out + g.Wo, T(0));
                        continue;
                    }
                    std::fill(out, out + lo, T(0));
                    std::fill(out + hi, out + g.Wo, T(0));
                    if (lo >= hi) continue;
                    const T* in = x + (c * g.H + ih) * g.W + (lo * g.stride + kw - g.pad);
                    if (g.stride == 1)
                        std::copy(in, in + (hi - lo), out + lo);
                    else
                        for (std::size_t ow = lo; ow < hi; ++ow) out[ow] = in[(ow - lo) * g.stride];
                }
            }
}

template <typename T>
void col2im_add(const ConvGeom& g, const T* col, T* dx) {
    const std::size_t hw = g.hw();
    for (std::size_t c = 0; c < g.C; ++c)
        for (std::size_t kh = 0; kh < g.K; ++kh)
            for (std::size_t kw = 0; kw < g.K; ++kw) {
                const T* row = col + ((c * g.K + kh) * g.K + kw) * hw;
                for (std::size_t oh = 0; oh < g.Ho; ++oh) {
                    const auto ih = static_cast<std::ptrdiff_t>(oh * g.stride + kh) - static_cast<std::ptrdiff_t>(g.pad);
                    if (ih < 0 || ih >= static_cast<std::ptrdiff_t>(g.H)) continue;
                    for (std::size_t ow = 0; ow < g.Wo; ++ow) {
                        const auto iw =
                            static_cast<std::ptrdiff_t>(ow * g.stride + kw) - static_cast<std::ptrdiff_t>(g.pad);
                        if (iw < 0 || iw >= static_cast<std::ptrdiff_t>(g.W)) continue;
                        dx[(c * g.H + ih) * g.W + iw] += row[oh * g.Wo + ow];
                    }
                }
            }
}

}  // namespace

std::size_t window_out(std::size_t in, std::size_t k, std::size_t stride, std::size_t pad, const char* what) {
    if (k < 1 || stride < 1) throw ConfigError(std::string(what) + ": kernel and stride must be >= 1");
    const std::size_t padded = in + 2 * pad;
    if (padded < k)
        throw ConfigError(std::string(what) + ": window " + std::to_string(k) + " exceeds padded input " +
                          std::to_string(padded));
    if ((padded - k) % stride != 0)
        throw ConfigError(std::string(what) + ": output size (" + std::to_string(in) + " + 2*" + std::to_string(pad) +
                          " - " + std::to_string(k) + ")/" + std::to_string(stride) + " + 1 is not integral");
    return (padded - k) / stride + 1;
}

template <typename T>
Var conv2d(Graph<T>& g, Var x, Var w, Var b, std::size_t stride, std::size_t padding) {
    const Shape& xs = g.value(x).shape();
    const Shape& ws = g.value(w).shape();
    expect(xs.size() == 4, "conv2d: input must be [N,C,H,W], got " + shape_str(xs));
    expect(ws.size() == 4 && ws[2] == ws[3], "conv2d: weight must be [Cout,Cin,K,K], got " + shape_str(ws));
    expect(ws[1] == xs[1], "conv2d: input has " + std::to_string(xs[1]) + " channels, weight expects " +
                               std::to_string(ws[1]));
    const bool has_bias = b.valid();
    if (has_bias)
        expect(g.value(b).shape() == Shape{ws[0]},
               "conv2d: bias must be [" + std::to_string(ws[0]) + "], got " + shape_str(g.value(b).shape()));

    auto geom = std::make_shared<ConvGeom>();
    *geom = ConvGeom{xs[0], xs[1], xs[2], xs[3], ws[0], ws[2], stride, padding, 0, 0};
    geom->Ho = window_out(geom->H, geom->K, stride, padding, "conv2d");
    geom->Wo = window_out(geom->W, geom->K, stride, padding, "conv2d");
    auto cols = std::make_shared<std::vector<T>>();

    auto fwd = [geom, cols, x, w, b, has_bias](Graph<T>& gr, typename Graph<T>::Node& self) {
        const ConvGeom& q = *geom;
        const std::size_t ck = q.ck(), hw = q.hw();
        const T* X = gr.value(x).data();
        const T* Wt = gr.value(w).data();
        const T* B = has_bias ? gr.value(b).data() : nullptr;
        T* Y = self.value.data();
        // A few weight or bias elements moved and the input did not: only
        // their output channels change, and the cached columns are current.
        std::vector<std::size_t> chans;
        if (!gr.input_dirty(x.id) && !cols->empty()) {
            auto ew = gr.changed_elements(w.id);
            auto eb = has_bias ? gr.changed_elements(b.id) : std::span<const std::size_t>{};
            for (auto e : ew) chans.push_back(e / ck);
            for (auto e : eb) chans.push_back(e);
            if ((ew.empty() && gr.input_dirty(w.id)) || (has_bias && eb.empty() && gr.input_dirty(b.id))) chans.clear();
        }
        if (!chans.empty()) {
            std::sort(chans.begin(), chans.end());
            chans.erase(std::unique(chans.begin(), chans.end()), chans.end());
            for (std::size_t n = 0; n < q.N; ++n)
                for (auto co : chans) {
                    T* out = Y + (n * q.Co + co) * hw;
                    kernels::gemm_nn<T>(1, hw, ck, Wt + co * ck, ck, cols->data() + n * ck * hw, hw, out, hw, false);
                    if (B)
                        for (std::size_t i = 0; i < hw; ++i) out[i] += B[co];
                }
            return;
        }
        cols->resize(q.N * ck * hw);
        for (std::size_t n = 0; n < q.N; ++n) {
            T* col = cols->data() + n * ck * hw;
            im2col(q, X + n * q.C * q.H * q.W, col);
            T* out = Y + n * q.Co * hw;
            kernels::gemm_nn<T>(q.Co, hw, ck, Wt, ck, col, hw, out, hw, false);
            if (B)
                for (std::size_t co = 0; co < q.Co; ++co)
                    for (std::size_t i = 0; i < hw; ++i) out[co * hw + i] += B[co];
        }
    };
    auto bwd = [geom, cols, x, w, b](Graph<T>& gr, const typename Graph<T>::Node& self) {
        const ConvGeom& q = *geom;
        const std::size_t ck = q.ck(), hw = q.hw();
        const T* dY = self.grad.data();
        if (b.valid() && gr.requires_grad(b)) {
            auto& db = gr.grad_buffer(b.id);
            for (std::size_t n = 0; n < q.N; ++n)
                for (std::size_t co = 0; co < q.Co; ++co) {
                    const T* r = dY + (n * q.Co + co) * hw;
                    T s = 0;
                    for (std::size_t i = 0; i < hw; ++i) s += r[i];
                    db[co] += s;
                }
        }
        if (gr.requires_grad(w)) {
            T* dW = gr.grad_buffer(w.id).data();
            for (std::size_t n = 0; n < q.N; ++n)
                kernels::gemm_nt<T>(q.Co, ck, hw, dY + n * q.Co * hw, hw, cols->data() + n * ck * hw, hw, dW, ck,
                                    true);
        }
        if (gr.requires_grad(x)) {
            std::vector<T> wt(ck * q.Co), dcol(ck * hw);
            transpose(gr.value(w).data(), q.Co, ck, wt.data());
            T* dX = gr.grad_buffer(x.id).data();
            for (std::size_t n = 0; n < q.N; ++n) {
                kernels::gemm_nn<T>(ck, hw, q.Co, wt.data(), q.Co, dY + n * q.Co * hw, hw, dcol.data(), hw, false);
                col2im_add(q, dcol.data(), dX + n * q.C * q.H * q.W);
            }
        }
    };
    std::vector<Var> inputs{x, w};
    if (has_bias) inputs.push_back(b);
    return g.push({geom->N, geom->Co, geom->Ho, geom->Wo}, std::move(inputs), fwd, bwd);
}

template <typename T>
Var dense(Graph<T>& g, Var x, Var w, Var b) {
    const Shape& xs = g.value(x).shape();
    const Shape& ws = g.value(w).shape();
    expect(xs.size() == 2, "dense: input must be [N,D], got " + shape_str(xs));
    expect(ws.size() == 2 && ws[0] == xs[1], "dense: weight " + shape_str(ws) + " incompatible with input " + shape_str(xs));
    expect(g.value(b).shape() == Shape{ws[1]}, "dense: bias must be [" + std::to_string(ws[1]) + "]");
    const std::size_t N = xs[0], D = xs[1], M = ws[1];

    auto fwd = [=](Graph<T>& gr, typename Graph<T>::Node& self) {
        T* Y = self.value.data();
        const T* X = gr.value(x).data();
        const T* Wt = gr.value(w).data();
        const T* B = gr.value(b).data();
        if (!gr.input_dirty(x.id)) {
            // element edits: recompute only the touched output columns
            auto ew = gr.changed_elements(w.id);
            auto eb = gr.changed_elements(b.id);
            if ((!ew.empty() || !gr.input_dirty(w.id)) && (!eb.empty() || !gr.input_dirty(b.id))) {
                std::vector<std::size_t> cs;
                for (auto e : ew) cs.push_back(e % M);
                for (auto e : eb) cs.push_back(e);
                for (auto m : cs)
                    for (std::size_t n = 0; n < N; ++n) {
                        T s = 0;
                        for (std::size_t d = 0; d < D; ++d) s += X[n * D + d] * Wt[d * M + m];
                        Y[n * M + m] = s + B[m];
                    }
                return;
            }
        }
        kernels::gemm_nn<T>(N, M, D, X, D, Wt, M, Y, M, false);
        for (std::size_t n = 0; n < N; ++n)
            for (std::size_t m = 0; m < M; ++m) Y[n * M + m] += B[m];
    };
    auto bwd = [=](Graph<T>& gr, const typename Graph<T>::Node& self) {
        const T* dY = self.grad.data();
        if (gr.requires_grad(b)) {
            auto& db = gr.grad_buffer(b.id);
            for (std::size_t n = 0; n < N; ++n)
                for (std::size_t m = 0; m < M; ++m) db[m] += dY[n * M + m];
        }
        if (gr.requires_grad(w)) {
            std::vector<T> xt(D * N);
            transpose(gr.value(x).data(), N, D, xt.data());
            kernels::gemm_nn<T>(D, M, N, xt.data(), N, dY, M, gr.grad_buffer(w.id).data(), M, true);
        }
        if (gr.requires_grad(x))
            kernels::gemm_nt<T>(N, D, M, dY, M, gr.value(w).data(), M, gr.grad_buffer(x.id).data(), D, true);
    };
    return g.push({N, M}, {x, w, b}, fwd, bwd);
}

template <typename T>
Var relu(Graph<T>& g, Var x) {
    auto base = std::make_shared<std::vector<std::uint8_t>>();  // active set at creation
    auto fwd = [x, base](Graph<T>& gr, typename Graph<T>::Node& self) {
        const auto& in = gr.value(x);
        for (std::size_t i = 0; i < in.size(); ++i) self.value[i] = in[i] > T(0) ? in[i] : T(0);
        if (!gr.replaying()) {
            base->resize(in.size());
            for (std::size_t i = 0; i < in.size(); ++i) (*base)[i] = in[i] > T(0);
            return;
        }
        std::size_t flips = 0;
        for (std::size_t i = 0; i < in.size(); ++i) flips += (in[i] > T(0)) != static_cast<bool>((*base)[i]);
        gr.note_branch_changes(flips);
    };
    auto bwd = [x](Graph<T>& gr, const typename Graph<T>::Node& self) {
        if (!gr.requires_grad(x)) return;
        const auto& in = gr.value(x);
        auto& dx = gr.grad_buffer(x.id);
        for (std::size_t i = 0; i < in.size(); ++i)
            if (in[i] > T(0)) dx[i] += self.grad[i];
    };
    return g.push(g.value(x).shape(), {x}, fwd, bwd);
}

template <typename T>
Var sigmoid(Graph<T>& g, Var x) {
    auto fwd = [x](Graph<T>& gr, typename Graph<T>::Node& self) {
        const auto& in = gr.value(x);
        for (std::size_t i = 0; i < in.size(); ++i) {
            const T v = in[i];
            if (v >= T(0)) {
                self.value[i] = T(1) / (T(1) + std::exp(-v));
            } else {
                const T e = std::exp(v);
                self.value[i] = e / (T(1) + e);
            }
        }
    };
    auto bwd = [x](Graph<T>& gr, const typename Graph<T>::Node& self) {
        if (!gr.requires_grad(x)) return;
        auto& dx = gr.grad_buffer(x.id);
        for (std::size_t i = 0; i < self.value.size(); ++i) {
            const T y = self.value[i];
            dx[i] += self.grad[i] * y * (T(1) - y);
        }
    };
    return g.push(g.value(x).shape(), {x}, fwd, bwd);
}

template <typename T>
Var max_pool2d(Graph<T>& g, Var x, std::size_t window, std::size_t stride) {
    const Shape& xs = g.value(x).shape();
    expect(xs.size() == 4, "max_pool2d: input must be [N,C,H,W], got " + shape_str(xs));
    const std::size_t N = xs[0], C = xs[1], H = xs[2], W = xs[3];
    const std::size_t Ho = window_out(H, window, stride, 0, "max_pool2d");
    const std::size_t Wo = window_out(W, window, stride, 0, "max_pool2d");
    auto argmax = std::make_shared<std::vector<std::size_t>>(N * C * Ho * Wo);
    auto base = std::make_shared<std::vector<std::size_t>>();

    auto fwd = [=](Graph<T>& gr, typename Graph<T>::Node& self) {
        const T* X = gr.value(x).data();
        std::size_t o = 0;
        for (std::size_t nc = 0; nc < N * C; ++nc)
            for (std::size_t oh = 0; oh < Ho; ++oh)
                for (std::size_t ow = 0; ow < Wo; ++ow, ++o) {
                    std::size_t best = nc * H * W + (oh * stride) * W + ow * stride;
                    for (std::size_t kh = 0; kh < window; ++kh)
                        for (std::size_t kw = 0; kw < window; ++kw) {
                            const std::size_t idx = nc * H * W + (oh * stride + kh) * W + ow * stride + kw;
                            if (X[idx] > X[best]) best = idx;
                        }
                    (*argmax)[o] = best;
                    self.value[o] = X[best];
                }
        if (!gr.replaying())
            *base = *argmax;
        else
            for (std::size_t i = 0; i < argmax->size(); ++i) gr.note_branch_changes((*argmax)[i] != (*base)[i]);
    };
    auto bwd = [=](Graph<T>& gr, const typename Graph<T>::Node& self) {
        if (!gr.requires_grad(x)) return;
        auto& dx = gr.grad_buffer(x.id);
        for (std::size_t o = 0; o < argmax->size(); ++o) dx[(*argmax)[o]] += self.grad[o];
    };
    return g.push({N, C, Ho, Wo}, {x}, fwd, bwd);
}

template <typename T>
Var global_avg_pool(Graph<T>& g, Var x) {
    const Shape& xs = g.value(x).shape();
    expect(xs.size() == 4, "global_avg_pool: input must be [N,C,H,W], got " + shape_str(xs));
    const std::size_t NC = xs[0] * xs[1], hw = xs[2] * xs[3];
    auto fwd = [=](Graph<T>& gr, typename Graph<T>::Node& self) {
        const T* X = gr.value(x).data();
        for (std::size_t i = 0; i < NC; ++i) {
            T s = 0;
            for (std::size_t j = 0; j < hw; ++j) s += X[i * hw + j];
            self.value[i] = s / static_cast<T>(hw);
        }
    };
    auto bwd = [=](Graph<T>& gr, const typename Graph<T>::Node& self) {
        if (!gr.requires_grad(x)) return;
        auto& dx = gr.grad_buffer(x.id);
        for (std::size_t i = 0; i < NC; ++i) {
            const T d = self.grad[i] / static_cast<T>(hw);
            for (std::size_t j = 0; j < hw; ++j) dx[i * hw + j] += d;
        }
    };
    return g.push({xs[0], xs[1]}, {x}, fwd, bwd);
}

template <typename T>
Var batch_norm2d(Graph<T>& g, Var x, Var gamma, Var beta, BatchNormRunning<T>& running, Mode mode,
                 const BatchNormOptions& opt) {
    const Shape& xs = g.value(x).shape();
    expect(xs.size() == 4, "batch_norm2d: input must be [N,C,H,W], got " + shape_str(xs));
    const std::size_t N = xs[0], C = xs[1], hw = xs[2] * xs[3], m = N * hw;
    expect(g.value(gamma).shape() == Shape{C} && g.value(beta).shape() == Shape{C},
           "batch_norm2d: gamma/beta must be [" + std::to_string(C) + "]");
    expect(running.mean.shape() == Shape{C} && running.var.shape() == Shape{C},
           "batch_norm2d: running statistics must be [" + std::to_string(C) + "]");
    if (mode == Mode::train && N < 2)
        throw ShapeError("batch_norm2d: training mode needs a batch of at least 2, got " + std::to_string(N));

    struct Ctx {
        std::vector<T> xhat, invstd;
        bool committed = false;
    };
    auto ctx = std::make_shared<Ctx>();
    ctx->xhat.resize(N * C * hw);
    ctx->invstd.resize(C);
    BatchNormRunning<T>* run = &running;
    const T eps = static_cast<T>(opt.eps), momentum = static_cast<T>(opt.momentum);
    const bool update = opt.update_running;

    auto fwd = [=](Graph<T>& gr, typename Graph<T>::Node& self) {
        const T* X = gr.value(x).data();
        const T* G = gr.value(gamma).data();
        const T* B = gr.value(beta).data();
        for (std::size_t c = 0; c < C; ++c) {
            T mu, var;
            if (mode == Mode::train) {
                // four interleaved partial sums keep the reduction off the add latency chain
                T s[4] = {0, 0, 0, 0};
                for (std::size_t n = 0; n < N; ++n) {
                    const T* xc = X + (n * C + c) * hw;
                    std::size_t j = 0;
                    for (; j + 4 <= hw; j += 4)
                        for (int k = 0; k < 4; ++k) s[k] += xc[j + k];
                    for (; j < hw; ++j) s[0] += xc[j];
                }
                mu = ((s[0] + s[1]) + (s[2] + s[3])) / static_cast<T>(m);
                T v[4] = {0, 0, 0, 0};
                for (std::size_t n = 0; n < N; ++n) {
                    const T* xc = X + (n * C + c) * hw;
                    std::size_t j = 0;
                    for (; j + 4 <= hw; j += 4)
                        for (int k = 0; k < 4; ++k) v[k] += (xc[j + k] - mu) * (xc[j + k] - mu);
                    for (; j < hw; ++j) v[0] += (xc[j] - mu) * (xc[j] - mu);
                }
                var = ((v[0] + v[1]) + (v[2] + v[3])) / static_cast<T>(m);
                if (update && !ctx->committed) {
                    run->mean[c] = (T(1) - momentum) * run->mean[c] + momentum * mu;
                    run->var[c] = (T(1) - momentum) * run->var[c] + momentum * var * static_cast<T>(m) / static_cast<T>(m - 1);
                }
            } else {
                mu = run->mean[c];
                var = run->var[c];
            }
            const T is = T(1) / std::sqrt(var + eps);
            ctx->invstd[c] = is;
            T* Y = self.value.data();
            T* XH = ctx->xhat.data();
            for (std::size_t n = 0; n < N; ++n)
                for (std::size_t j = 0; j < hw; ++j) {
                    const std::size_t i = (n * C + c) * hw + j;
                    const T xh = (X[i] - mu) * is;
                    XH[i] = xh;
                    Y[i] = G[c] * xh + B[c];
                }
        }
        ctx->committed = true;
    };
    auto bwd = [=](Graph<T>& gr, const typename Graph<T>::Node& self) {
        const T* dY = self.grad.data();
        const T* G = gr.value(gamma).data();
        std::vector<T> sum_dy(C, T(0)), sum_dy_xhat(C, T(0));
        for (std::size_t c = 0; c < C; ++c)
            for (std::size_t n = 0; n < N; ++n)
                for (std::size_t j = 0; j < hw; ++j) {
                    const std::size_t i = (n * C + c) * hw + j;
                    sum_dy[c] += dY[i];
                    sum_dy_xhat[c] += dY[i] * ctx->xhat[i];
                }
        if (gr.requires_grad(beta)) {
            auto& db = gr.grad_buffer(beta.id);
            for (std::size_t c = 0; c < C; ++c) db[c] += sum_dy[c];
        }
        if (gr.requires_grad(gamma)) {
            auto& dg = gr.grad_buffer(gamma.id);
            for (std::size_t c = 0; c < C; ++c) dg[c] += sum_dy_xhat[c];
        }
        if (!gr.requires_grad(x)) return;
        auto& dx = gr.grad_buffer(x.id);
        const T mt = static_cast<T>(m);
        for (std::size_t c = 0; c < C; ++c) {
            const T k = G[c] * ctx->invstd[c];
            for (std::size_t n = 0; n < N; ++n)
                for (std::size_t j = 0; j < hw; ++j) {
                    const std::size_t i = (n * C + c) * hw + j;
                    if (mode == Mode::train)
                        dx[i] += k / mt * (mt * dY[i] - sum_dy[c] - ctx->xhat[i] * sum_dy_xhat[c]);
                    else
                        dx[i] += k * dY[i];
                }
        }
    };
    return g.push(xs, {x, gamma, beta}, fwd, bwd);
}

template <typename T>
Var add(Graph<T>& g, Var a, Var b) {
    expect_same(g.value(a).shape(), g.value(b).shape(), "add");
    auto fwd = [a, b](Graph<T>& gr, typename Graph<T>::Node& self) {
        const auto &va = gr.value(a), &vb = gr.value(b);
        for (std::size_t i = 0; i < va.size(); ++i) self.value[i] = va[i] + vb[i];
    };
    auto bwd = [a, b](Graph<T>& gr, const typename Graph<T>::Node& self) {
        for (Var v : {a, b}) {
            if (!gr.requires_grad(v)) continue;
            auto& d = gr.grad_buffer(v.id);
            for (std::size_t i = 0; i < d.size(); ++i) d[i] += self.grad[i];
        }
    };
    return g.push(g.value(a).shape(), {a, b}, fwd, bwd);
}

template <typename T>
Var sub(Graph<T>& g, Var a, Var b) {
    expect_same(g.value(a).shape(), g.value(b).shape(), "sub");
    auto fwd = [a, b](Graph<T>& gr, typename Graph<T>::Node& self) {
        const auto &va = gr.value(a), &vb = gr.value(b);
        for (std::size_t i = 0; i < va.size(); ++i) self.value[i] = va[i] - vb[i];
    };
    auto bwd = [a, b](Graph<T>& gr, const typename Graph<T>::Node& self) {
        if (gr.requires_grad(a)) {
            auto& d = gr.grad_buffer(a.id);
            for (std::size_t i = 0; i < d.size(); ++i) d[i] += self.grad[i];
        }
        if (gr.requires_grad(b)) {
            auto& d = gr.grad_buffer(b.id);
            for (std::size_t i = 0; i < d.size(); ++i) d[i] -= self.grad[i];
        }
    };
    return g.push(g.value(a).shape(), {a, b}, fwd, bwd);
}

template <typename T>
Var mul(Graph<T>& g, Var a, Var b) {
    expect_same(g.value(a).shape(), g.value(b).shape(), "mul");
    auto fwd = [a, b](Graph<T>& gr, typename Graph<T>::Node& self) {
        const auto &va = gr.value(a), &vb = gr.value(b);
        for (std::size_t i = 0; i < va.size(); ++i) self.value[i] = va[i] * vb[i];
    };
    auto bwd = [a, b](Graph<T>& gr, const typename Graph<T>::Node& self) {
        const auto &va = gr.value(a), &vb = gr.value(b);
        if (gr.requires_grad(a)) {
            auto& d = gr.grad_buffer(a.id);
            for (std::size_t i = 0; i < d.size(); ++i) d[i] += self.grad[i] * vb[i];
        }
        if (gr.requires_grad(b)) {
            auto& d = gr.grad_buffer(b.id);
            for (std::size_t i = 0; i < d.size(); ++i) d[i] += self.grad[i] * va[i];
        }
    };
    return g.push(g.value(a).shape(), {a, b}, fwd, bwd);
}

template <typename T>
Var scale(Graph<T>& g, Var a, T s) {
    auto fwd = [a, s](Graph<T>& gr, typename Graph<T>::Node& self) {
        const auto& va = gr.value(a);
        for (std::size_t i = 0; i < va.size(); ++i) self.value[i] = s * va[i];
    };
    auto bwd = [a, s](Graph<T>& gr, const typename Graph<T>::Node& self) {
        if (!gr.requires_grad(a)) return;
        auto& d = gr.grad_buffer(a.id);
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += s * self.grad[i];
    };
    return g.push(g.value(a).shape(), {a}, fwd, bwd);
}

template <typename T>
Var sum(Graph<T>& g, Var a) {
    auto fwd = [a](Graph<T>& gr, typename Graph<T>::Node& self) {
        T s = 0;
        for (T v : gr.value(a).values()) s += v;
        self.value[0] = s;
    };
    auto bwd = [a](Graph<T>& gr, const typename Graph<T>::Node& self) {
        if (!gr.requires_grad(a)) return;
        for (T& d : gr.grad_buffer(a.id)) d += self.grad[0];
    };
    return g.push({}, {a}, fwd, bwd);
}

template <typename T>
Var mean(Graph<T>& g, Var a) {
    const std::size_t n = g.value(a).size();
    expect(n > 0, "mean: empty tensor");
    return scale(g, sum(g, a), T(1) / static_cast<T>(n));
}

template <typename T>
Var reshape(Graph<T>& g, Var a, Shape shape) {
    expect(numel(shape) == g.value(a).size(), "reshape: " + shape_str(g.value(a).shape()) + " -> " + shape_str(shape));
    auto fwd = [a](Graph<T>& gr, typename Graph<T>::Node& self) {
        std::copy(gr.value(a).storage().begin(), gr.value(a).storage().end(), self.value.storage().begin());
    };
    auto bwd = [a](Graph<T>& gr, const typename Graph<T>::Node& self) {
        if (!gr.requires_grad(a)) return;
        auto& d = gr.grad_buffer(a.id);
        for (std::size_t i = 0; i < d.size(); ++i) d[i] += self.grad[i];
    };
    return g.push(std::move(shape), {a}, fwd, bwd);
}

template <typename T>
Var slice_rows(Graph<T>& g, Var a, std::size_t begin, std::size_t count) {
    Shape shape = g.value(a).shape();
    expect(!shape.empty() && begin + count <= shape[0] && count > 0,
           "slice_rows: [" + std::to_string(begin) + ", +" + std::to_string(count) + ") of " + shape_str(shape));
    const std::size_t row = g.value(a).size() / shape[0];
    shape[0] = count;
    auto fwd = [=](Graph<T>& gr, typename Graph<T>::Node& self) {
        auto src = gr.value(a).storage().begin() + begin * row;
        std::copy(src, src + count * row, self.value.storage().begin());
    };
    auto bwd = [=](Graph<T>& gr, const typename Graph<T>::Node& self) {
        if (!gr.requires_grad(a)) return;
        auto& d = gr.grad_buffer(a.id);
        for (std::size_t i = 0; i < count * row; ++i) d[begin * row + i] += self.grad[i];
    };
    return g.push(std::move(shape), {a}, fwd, bwd);
}

#define NMHEBB_INSTANTIATE(T)                                                                                  \
    template Var conv2d<T>(Graph<T>&, Var, Var, Var, std::size_t, std::size_t);                                \
    template Var dense<T>(Graph<T>&, Var, Var, Var);                                                           \
    template Var relu<T>(Graph<T>&, Var);                                                                      \
    template Var sigmoid<T>(Graph<T>&, Var);                                                                   \
    template Var max_pool2d<T>(Graph<T>&, Var, std::size_t, std::size_t);                                      \
    template Var global_avg_pool<T>(Graph<T>&, Var);                                                           \
    template Var batch_norm2d<T>(Graph<T>&, Var, Var, Var, BatchNormRunning<T>&, Mode, const BatchNormOptions&); \
    template Var add<T>(Graph<T>&, Var, Var);                                                                  \
    template Var sub<T>(Graph<T>&, Var, Var);                                                                  \
    template Var mul<T>(Graph<T>&, Var, Var);                                                                  \
    template Var scale<T>(Graph<T>&, Var, T);                                                                  \
    template Var sum<T>(Graph<T>&, Var);                                                                       \
    template Var mean<T>(Graph<T>&, Var);                                                                      \
    template Var reshape<T>(Graph<T>&, Var, Shape);                                                            \
    template Var slice_rows<T>(Graph<T>&, Var, std::size_t, std::size_t);

NMHEBB_INSTANTIATE(float)
NMHEBB_INSTANTIATE(double)
#undef NMHEBB_INSTANTIATE

}  // namespace nmhebb::ad
