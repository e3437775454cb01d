#include "nmhebb/backbones.hpp"

#include <cmath>
#include <random>

namespace nmhebb {

std::string arch_name(Arch a) { return a == Arch::tiny_vgg ? "tiny_vgg" : "mini_resnet"; }

Arch parse_arch(const std::string& s) {
    if (s == "tiny_vgg") return Arch::tiny_vgg;
    if (s == "mini_resnet") return Arch::mini_resnet;
    throw ConfigError("unknown architecture '" + s + "' (expected tiny_vgg or mini_resnet)");
}

template <typename T>
std::size_t ModelState<T>::param_index(const std::string& name) const {
    for (std::size_t i = 0; i < params.size(); ++i)
        if (params[i].name == name) return i;
    throw std::out_of_range("no parameter named '" + name + "'");
}

template <typename T>
std::optional<std::size_t> ModelState<T>::running_index(const std::string& name) const {
    for (std::size_t i = 0; i < running.size(); ++i)
        if (running[i].name == name) return i;
    return std::nullopt;
}

template <typename T>
std::size_t ModelState<T>::parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params) n += p.value.size();
    return n;
}

namespace {

void check_input(std::size_t num_classes, std::size_t input_channels, std::size_t input_size) {
    if (input_size != 16 && input_size != 28 && input_size != 32)
        throw ConfigError("unsupported input size " + std::to_string(input_size) + " (expected 16, 28 or 32)");
    if (num_classes < 2) throw ConfigError("num_classes must be >= 2");
    if (input_channels < 1) throw ConfigError("input_channels must be >= 1");
}

// Accumulates parameters in declaration order.
class Builder {
public:
    explicit Builder(std::uint64_t seed) : rng_(seed) {}

    void conv(const std::string& name, std::size_t cout, std::size_t cin, std::size_t k, bool bias) {
        kaiming(name + ".w", {cout, cin, k, k}, cin * k * k);
        if (bias) zeros(name + ".b", {cout});
    }
    void dense(const std::string& name, std::size_t in, std::size_t out) {
        kaiming(name + ".w", {in, out}, in);
        zeros(name + ".b", {out});
    }
    void bn(const std::string& name, std::size_t c) {
        params_.push_back({name + ".gamma", Tensor<double>({c}, 1.0)});
        zeros(name + ".beta", {c});
        running_.push_back({name, {Tensor<double>({c}, 0.0), Tensor<double>({c}, 1.0)}});
    }

    template <typename T>
    void finish(ModelState<T>& m) {
        ModelState<double> d;
        d.params = std::move(params_);
        d.running = std::move(running_);
        auto cast = d.template cast<T>();
        m.params = std::move(cast.params);
        m.running = std::move(cast.running);
    }

private:
    void kaiming(const std::string& name, Shape shape, std::size_t fan_in) {
        const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
        std::uniform_real_distribution<double> u(-bound, bound);
        Tensor<double> t(std::move(shape));
        for (auto& v : t.values()) v = u(rng_);
        params_.push_back({name, std::move(t)});
    }
    void zeros(const std::string& name, Shape shape) { params_.push_back({name, Tensor<double>(std::move(shape))}); }

    std::mt19937_64 rng_;
    std::vector<NamedTensor<double>> params_;
    std::vector<NamedRunningStats<double>> running_;
};

template <typename T>
class Net {
public:
    Net(ad::Graph<T>& g, ModelState<T>& m, const std::vector<ad::Var>& p, const ForwardOptions& o)
        : g_(g), m_(m), p_(p), opt_(o) {}

    ad::Var param(const std::string& name) const { return p_.at(m_.param_index(name)); }
    bool has(const std::string& name) const {
        for (const auto& p : m_.params)
            if (p.name == name) return true;
        return false;
    }
    ad::Var conv(ad::Var x, const std::string& name, std::size_t stride, std::size_t pad) {
        const ad::Var b = has(name + ".b") ? param(name + ".b") : ad::Var{};
        return ad::conv2d(g_, x, param(name + ".w"), b, stride, pad);
    }
    ad::Var bn(ad::Var x, const std::string& name) {
        auto idx = m_.running_index(name);
        if (!idx) throw std::out_of_range("no batch-norm statistics for '" + name + "'");
        ad::BatchNormOptions bo;
        bo.update_running = opt_.update_running;
        bo.momentum = opt_.bn_momentum;
        return ad::batch_norm2d(g_, x, param(name + ".gamma"), param(name + ".beta"), m_.running[*idx].stats,
                                opt_.mode, bo);
    }
    ad::Var dense(ad::Var x, const std::string& name) {
        return ad::dense(g_, x, param(name + ".w"), param(name + ".b"));
    }
    ad::Graph<T>& graph() { return g_; }

private:
    ad::Graph<T>& g_;
    ModelState<T>& m_;
    const std::vector<ad::Var>& p_;
    ForwardOptions opt_;
};

template <typename T>
ForwardTaps forward_tiny_vgg(Net<T>& net, ad::Var x) {
    auto& g = net.graph();
    auto h = ad::relu(g, net.conv(x, "conv1", 1, 1));
    auto hebb = ad::relu(g, net.conv(h, "conv2", 1, 1));
    h = ad::max_pool2d(g, hebb, 2, 2);
    h = ad::relu(g, net.conv(h, "conv3", 1, 1));
    h = ad::max_pool2d(g, h, 2, 2);
    h = ad::relu(g, net.conv(h, "conv4", 1, 1));
    h = ad::global_avg_pool(g, h);
    auto emb = ad::relu(g, net.dense(h, "embed"));
    auto logits = net.dense(emb, "fc");
    return {logits, emb, hebb, net.param("conv2.w")};
}

template <typename T>
ad::Var block(Net<T>& net, const std::string& prefix, ad::Var x) {
    auto& g = net.graph();
    auto h = ad::relu(g, net.bn(net.conv(x, prefix + ".conv1", 1, 1), prefix + ".bn1"));
    h = net.bn(net.conv(h, prefix + ".conv2", 1, 1), prefix + ".bn2");
    ad::Var shortcut = x;
    if (net.has(prefix + ".proj.w")) shortcut = net.bn(net.conv(x, prefix + ".proj", 1, 0), prefix + ".proj_bn");
    return ad::relu(g, ad::add(g, h, shortcut));
}

template <typename T>
ForwardTaps forward_mini_resnet(Net<T>& net, ad::Var x) {
    auto& g = net.graph();
    auto h = ad::relu(g, net.bn(net.conv(x, "stem.conv", 1, 1), "stem.bn"));
    h = block(net, "s1.b1", h);
    h = block(net, "s1.b2", h);
    h = ad::max_pool2d(g, h, 2, 2);
    h = block(net, "s2.b1", h);
    auto hebb = block(net, "s2.b2", h);
    h = ad::global_avg_pool(g, hebb);
    auto emb = ad::relu(g, net.dense(h, "embed"));
    auto logits = net.dense(emb, "fc");
    return {logits, emb, hebb, net.param("s2.b2.conv2.w")};
}

}  // namespace

template <typename T>
ModelState<T> build_tiny_vgg(std::size_t num_classes, std::size_t input_channels, std::size_t input_size,
                             std::uint64_t seed) {
    check_input(num_classes, input_channels, input_size);
    ModelState<T> m;
    m.arch = Arch::tiny_vgg;
    m.num_classes = num_classes;
    m.input_channels = input_channels;
    m.input_size = input_size;
    m.hebbian_layer = "conv2";
    m.embedding_layer = "embed";
    Builder b(seed);
    b.conv("conv1", 32, input_channels, 3, true);
    b.conv("conv2", 32, 32, 3, true);
    b.conv("conv3", 64, 32, 3, true);
    b.conv("conv4", 128, 64, 3, true);
    b.dense("embed", 128, m.embed_dim);
    b.dense("fc", m.embed_dim, num_classes);
    b.finish(m);
    return m;
}

template <typename T>
ModelState<T> build_mini_resnet(std::size_t num_classes, std::size_t input_channels, std::size_t input_size,
                                std::uint64_t seed) {
    check_input(num_classes, input_channels, input_size);
    ModelState<T> m;
    m.arch = Arch::mini_resnet;
    m.num_classes = num_classes;
    m.input_channels = input_channels;
    m.input_size = input_size;
    m.hebbian_layer = "s2.b2.conv2";
    m.embedding_layer = "embed";
    Builder b(seed);
    b.conv("stem.conv", 16, input_channels, 3, false);
    b.bn("stem.bn", 16);
    auto add_block = [&](const std::string& p, std::size_t cin, std::size_t cout) {
        b.conv(p + ".conv1", cout, cin, 3, false);
        b.bn(p + ".bn1", cout);
        b.conv(p + ".conv2", cout, cout, 3, false);
        b.bn(p + ".bn2", cout);
        if (cin != cout) {
            b.conv(p + ".proj", cout, cin, 1, false);
            b.bn(p + ".proj_bn", cout);
        }
    };
    add_block("s1.b1", 16, 16);
    add_block("s1.b2", 16, 16);
    add_block("s2.b1", 16, 32);
    add_block("s2.b2", 32, 32);
    b.dense("embed", 32, m.embed_dim);
    b.dense("fc", m.embed_dim, num_classes);
    b.finish(m);
    return m;
}

template <typename T>
ModelState<T> build_model(Arch arch, std::size_t num_classes, std::size_t input_channels, std::size_t input_size,
                          std::uint64_t seed) {
    return arch == Arch::tiny_vgg ? build_tiny_vgg<T>(num_classes, input_channels, input_size, seed)
                                  : build_mini_resnet<T>(num_classes, input_channels, input_size, seed);
}

template <typename T>
std::vector<ad::Var> bind_parameters(ad::Graph<T>& g, const ModelState<T>& model, bool trainable) {
    std::vector<ad::Var> vars;
    vars.reserve(model.params.size());
    for (const auto& p : model.params) vars.push_back(trainable ? g.parameter(p.value) : g.constant(p.value));
    return vars;
}

template <typename T>
ForwardTaps forward(ad::Graph<T>& g, ModelState<T>& model, const std::vector<ad::Var>& params, ad::Var x,
                    const ForwardOptions& opt) {
    const Shape& xs = g.value(x).shape();
    const Shape want{xs.empty() ? 0 : xs[0], model.input_channels, model.input_size, model.input_size};
    if (xs.size() != 4 || xs != want)
        throw ShapeError("forward: batch shape " + shape_str(xs) + " does not match model input [N," +
                         std::to_string(model.input_channels) + "," + std::to_string(model.input_size) + "," +
                         std::to_string(model.input_size) + "]");
    if (params.size() != model.params.size()) throw ShapeError("forward: parameter binding size mismatch");
    Net<T> net(g, model, params, opt);
    return model.arch == Arch::tiny_vgg ? forward_tiny_vgg(net, x) : forward_mini_resnet(net, x);
}

template <typename T>
ad::Var residual_block(ad::Graph<T>& g, ModelState<T>& model, const std::vector<ad::Var>& params,
                       const std::string& prefix, ad::Var x, const ForwardOptions& opt) {
    Net<T> net(g, model, params, opt);
    return block(net, prefix, x);
}

namespace {

template <typename T>
Tensor<T> slice_images(const Tensor<T>& images, std::size_t begin, std::size_t end) {
    const std::size_t per = images.size() / images.dim(0);
    Shape s = images.shape();
    s[0] = end - begin;
    return Tensor<T>(s, std::vector<T>(images.data() + begin * per, images.data() + end * per));
}

template <typename T, typename Fn>
void for_chunks(const Tensor<T>& images, std::size_t chunk, Fn&& fn) {
    const std::size_t n = images.dim(0);
    for (std::size_t b = 0; b < n; b += chunk) fn(b, slice_images(images, b, std::min(n, b + chunk)));
}

}  // namespace

template <typename T>
Inference<T> infer(ModelState<T>& model, const Tensor<T>& images, std::size_t chunk) {
    const std::size_t n = images.dim(0);
    Inference<T> out{Tensor<T>({n, model.num_classes}), Tensor<T>({n, model.embed_dim})};
    for_chunks(images, chunk, [&](std::size_t begin, Tensor<T> batch) {
        ad::Graph<T> g;
        auto params = bind_parameters(g, model, false);
        auto taps = forward(g, model, params, g.constant(std::move(batch)), {ad::Mode::eval, false});
        const auto& l = g.value(taps.logits);
        const auto& e = g.value(taps.embedding);
        std::copy(l.storage().begin(), l.storage().end(), out.logits.data() + begin * model.num_classes);
        std::copy(e.storage().begin(), e.storage().end(), out.embeddings.data() + begin * model.embed_dim);
    });
    return out;
}

template <typename T>
Tensor<T> hebbian_activations(ModelState<T>& model, const Tensor<T>& images, std::size_t chunk) {
    std::vector<T> all;
    Shape shape;
    for_chunks(images, chunk, [&](std::size_t, Tensor<T> batch) {
        ad::Graph<T> g;
        auto params = bind_parameters(g, model, false);
        auto taps = forward(g, model, params, g.constant(std::move(batch)), {ad::Mode::eval, false});
        const auto& a = g.value(taps.hebbian_activation);
        shape = a.shape();
        all.insert(all.end(), a.storage().begin(), a.storage().end());
    });
    shape.at(0) = images.dim(0);
    return Tensor<T>(shape, std::move(all));
}

template <typename T>
std::pair<ForwardTaps, ForwardTaps> split_taps(ad::Graph<T>& g, const ForwardTaps& taps, std::size_t first) {
    const std::size_t n = g.value(taps.logits).dim(0);
    if (first == 0 || first >= n)
        throw ShapeError("split_taps: cannot split a batch of " + std::to_string(n) + " at " + std::to_string(first));
    auto part = [&](std::size_t begin, std::size_t count) {
        return ForwardTaps{ad::slice_rows(g, taps.logits, begin, count), ad::slice_rows(g, taps.embedding, begin, count),
                           ad::slice_rows(g, taps.hebbian_activation, begin, count), taps.hebbian_weight};
    };
    return {part(0, first), part(first, n - first)};
}

#define NMHEBB_INSTANTIATE(T)                                                                                        \
    template struct ModelState<T>;                                                                                   \
    template ModelState<T> build_tiny_vgg<T>(std::size_t, std::size_t, std::size_t, std::uint64_t);                 \
    template ModelState<T> build_mini_resnet<T>(std::size_t, std::size_t, std::size_t, std::uint64_t);              \
    template ModelState<T> build_model<T>(Arch, std::size_t, std::size_t, std::size_t, std::uint64_t);              \
    template std::vector<ad::Var> bind_parameters<T>(ad::Graph<T>&, const ModelState<T>&, bool);                     \
    template ForwardTaps forward<T>(ad::Graph<T>&, ModelState<T>&, const std::vector<ad::Var>&, ad::Var,             \
                                    const ForwardOptions&);                                                          \
    template ad::Var residual_block<T>(ad::Graph<T>&, ModelState<T>&, const std::vector<ad::Var>&, const std::string&, \
                                       ad::Var, const ForwardOptions&);                                              \
    template Inference<T> infer<T>(ModelState<T>&, const Tensor<T>&, std::size_t);                                   \
    template Tensor<T> hebbian_activations<T>(ModelState<T>&, const Tensor<T>&, std::size_t);                      \
    template std::pair<ForwardTaps, ForwardTaps> split_taps<T>(ad::Graph<T>&, const ForwardTaps&, std::size_t);

NMHEBB_INSTANTIATE(float)
NMHEBB_INSTANTIATE(double)
#undef NMHEBB_INSTANTIATE

}  // namespace nmhebb
