#pragma once

// Two toy CNN backbones, each with one designated Hebbian-regularized
// convolution and a 128-d penultimate embedding tap.
//
// Parameter order is the construction order listed in backbones.cpp and is
// part of the checkpoint contract: the consolidation penalty, the optimizer
// buffers and checkpoints all iterate parameters in this order.

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "nmhebb/ops.hpp"

namespace nmhebb {

enum class Arch { tiny_vgg, mini_resnet };

std::string arch_name(Arch a);
Arch parse_arch(const std::string& s);

template <typename T>
struct NamedTensor {
    std::string name;
    Tensor<T> value;
};

template <typename T>
struct NamedRunningStats {
    std::string name;  // batch-norm layer name
    ad::BatchNormRunning<T> stats;
};

template <typename T>
struct ModelState {
    Arch arch = Arch::tiny_vgg;
    std::size_t num_classes = 0;
    std::size_t input_channels = 0;
    std::size_t input_size = 0;
    std::size_t embed_dim = 128;

    std::vector<NamedTensor<T>> params;  // theta, trainable
    std::vector<NamedRunningStats<T>> running;  // not part of theta
    std::string hebbian_layer;            // weight "<layer>.w" of one conv
    std::string embedding_layer;

    std::size_t param_index(const std::string& name) const;
    std::optional<std::size_t> running_index(const std::string& name) const;
    std::size_t parameter_count() const;

    template <typename U>
    ModelState<U> cast() const {
        ModelState<U> m;
        m.arch = arch;
        m.num_classes = num_classes;
        m.input_channels = input_channels;
        m.input_size = input_size;
        m.embed_dim = embed_dim;
        m.hebbian_layer = hebbian_layer;
        m.embedding_layer = embedding_layer;
        for (const auto& p : params) m.params.push_back({p.name, p.value.template cast<U>()});
        for (const auto& r : running)
            m.running.push_back({r.name, {r.stats.mean.template cast<U>(), r.stats.var.template cast<U>()}});
        return m;
    }
};

// Kaiming-uniform (fan-in) weights, zero biases, unit/zero batch-norm
// gamma/beta. Initial values are drawn in double and rounded to T, so the
// float and double builds of one seed describe the same network.
template <typename T>
ModelState<T> build_tiny_vgg(std::size_t num_classes, std::size_t input_channels, std::size_t input_size,
                             std::uint64_t seed);

template <typename T>
ModelState<T> build_mini_resnet(std::size_t num_classes, std::size_t input_channels, std::size_t input_size,
                                std::uint64_t seed);

template <typename T>
ModelState<T> build_model(Arch arch, std::size_t num_classes, std::size_t input_channels, std::size_t input_size,
                          std::uint64_t seed);

struct ForwardTaps {
    ad::Var logits;              // [N,K]
    ad::Var embedding;           // [N,128]
    ad::Var hebbian_activation;  // [N,Cout,H,W], post-ReLU
    ad::Var hebbian_weight;      // [Cout,Cin,K,K]
};

struct ForwardOptions {
    ad::Mode mode = ad::Mode::train;
    bool update_running = true;
    double bn_momentum = 0.1;  // 1/(k+1) on the k-th batch gives a cumulative average
};

// Graph leaves for every parameter, in parameter order.
template <typename T>
std::vector<ad::Var> bind_parameters(ad::Graph<T>& g, const ModelState<T>& model, bool trainable = true);

// One pass over `x` [N,C,S,S]. Running statistics in `model` are updated in
// training mode when opt.update_running is set.
template <typename T>
ForwardTaps forward(ad::Graph<T>& g, ModelState<T>& model, const std::vector<ad::Var>& params, ad::Var x,
                    const ForwardOptions& opt = {});

// Residual block: relu(bn2(conv2(relu(bn1(conv1(x))))) + shortcut(x)), where
// the shortcut is a 1x1 conv + bn when "<prefix>.proj.w" exists.
template <typename T>
ad::Var residual_block(ad::Graph<T>& g, ModelState<T>& model, const std::vector<ad::Var>& params,
                       const std::string& prefix, ad::Var x, const ForwardOptions& opt);

// Phase 2 runs A and B through one forward pass so batch-norm statistics
// cover both halves; this splits the taps back into [0,first) and [first,N).
template <typename T>
std::pair<ForwardTaps, ForwardTaps> split_taps(ad::Graph<T>& g, const ForwardTaps& taps, std::size_t first);

template <typename T>
struct Inference {
    Tensor<T> logits;
    Tensor<T> embeddings;
};

// Eval-mode logits and embeddings for a stack of images, in chunks.
template <typename T>
Inference<T> infer(ModelState<T>& model, const Tensor<T>& images, std::size_t chunk = 256);

// Eval-mode post-ReLU activations of the Hebbian layer, [N,Cout,H,W].
template <typename T>
Tensor<T> hebbian_activations(ModelState<T>& model, const Tensor<T>& images, std::size_t chunk = 256);

}  // namespace nmhebb
