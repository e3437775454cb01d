#pragma once

// Tape-based reverse-mode differentiation.
//
// A Graph records primitive applications in creation order, which is a
// topological order by construction. backward() walks the tape in exact
// reverse, so gradient accumulation order (and therefore every bit of the
// result) is fixed for a given sequence of ops.

#include <algorithm>
#include <cstdint>
#include <functional>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "nmhebb/tensor.hpp"

namespace nmhebb::ad {

struct Var {
    std::uint32_t id = std::numeric_limits<std::uint32_t>::max();
    bool valid() const { return id != std::numeric_limits<std::uint32_t>::max(); }
    bool operator==(const Var&) const = default;
};

template <typename T>
class Graph {
public:
    struct Node;
    // Recomputes node.value from its inputs. Empty for leaves and detached copies.
    using ForwardFn = std::function<void(Graph&, Node&)>;
    // Reads node.grad and accumulates into the input gradients.
    using BackwardFn = std::function<void(Graph&, const Node&)>;

    struct Node {
        Tensor<T> value;
        std::vector<T> grad;  // empty until a gradient reaches this node
        bool requires_grad = false;
        std::vector<std::uint32_t> inputs;
        ForwardFn forward;
        BackwardFn backward;
    };

    Var constant(Tensor<T> value) { return leaf(std::move(value), false); }
    Var parameter(Tensor<T> value) { return leaf(std::move(value), true); }

    // Appends an op node. `forward` is invoked once to produce the value; it
    // is retained so replay() can re-evaluate the node.
    Var push(Shape shape, std::vector<Var> inputs, ForwardFn forward, BackwardFn backward) {
        Node n;
        n.value = Tensor<T>(std::move(shape));
        for (Var v : inputs) {
            n.inputs.push_back(v.id);
            n.requires_grad = n.requires_grad || nodes_.at(v.id).requires_grad;
        }
        n.forward = std::move(forward);
        n.backward = std::move(backward);
        nodes_.push_back(std::move(n));
        Node& self = nodes_.back();
        self.forward(*this, self);
        check_finite(self);
        return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
    }

    // A constant copy of `v`. It has no recorded inputs, so gradients stop
    // here and replay() leaves it frozen at its current value.
    Var detach(Var v) { return constant(value(v)); }

    const Tensor<T>& value(Var v) const { return nodes_.at(v.id).value; }
    // Leaves only: op outputs are owned by their forward function.
    Tensor<T>& mutable_leaf(Var v) {
        Node& n = nodes_.at(v.id);
        if (n.forward) throw std::logic_error("mutable_leaf: node is not a leaf");
        return n.value;
    }
    bool requires_grad(Var v) const { return nodes_.at(v.id).requires_grad; }
    const Node& node(Var v) const { return nodes_.at(v.id); }
    const Node& node(std::uint32_t id) const { return nodes_.at(id); }
    std::size_t size() const { return nodes_.size(); }

    // Gradient of the last backward() target w.r.t. v; zeros if none reached it.
    std::vector<T> grad(Var v) const {
        const Node& n = nodes_.at(v.id);
        return n.grad.empty() ? std::vector<T>(n.value.size(), T(0)) : n.grad;
    }

    // Accumulation buffer for an input, allocated on first use.
    std::vector<T>& grad_buffer(std::uint32_t id) {
        Node& n = nodes_.at(id);
        if (n.grad.empty()) n.grad.assign(n.value.size(), T(0));
        return n.grad;
    }

    void zero_grad() {
        for (auto& n : nodes_) n.grad.clear();
    }

    void backward(Var output) {
        Node& out = nodes_.at(output.id);
        if (out.value.size() != 1) throw ShapeError("backward: output must be scalar, got " + shape_str(out.value.shape()));
        zero_grad();
        if (!out.requires_grad) return;
        out.grad.assign(1, T(1));
        for (std::size_t i = output.id + 1; i-- > 0;) {
            const Node& n = nodes_[i];
            if (!n.requires_grad || n.grad.empty() || !n.backward) continue;
            n.backward(*this, n);
        }
    }

    // Re-evaluates every node that depends on one of `changed` (after their
    // leaf values were edited in place). Nodes with untouched inputs keep
    // their values.
    void replay(std::span<const Var> changed) {
        hint_.clear();
        run_replay(changed);
    }

    // replay() after editing a few elements of one leaf. Ops may use
    // changed_elements() to recompute only the slices of output they touch.
    void replay_elements(Var leaf, std::vector<std::size_t> indices) {
        hint_leaf_ = leaf.id;
        hint_ = std::move(indices);
        const Var changed[] = {leaf};
        run_replay(changed);
        hint_.clear();
    }

    // Valid inside a forward function during replay.
    bool replaying() const { return !dirty_.empty(); }
    bool input_dirty(std::uint32_t id) const { return dirty_.empty() || dirty_[id]; }

    // Ops with a non-differentiable point (relu, max) report during replay
    // how many of their branch decisions differ from the ones taken when the
    // node was created. A finite difference across such a switch is not a
    // derivative.
    void note_branch_changes(std::size_t n) { branch_changes_ += n; }
    std::size_t branch_changes() const { return branch_changes_; }
    // Edited element indices of leaf `id`; empty when the edit is unknown.
    std::span<const std::size_t> changed_elements(std::uint32_t id) const {
        if (!hint_.empty() && hint_leaf_ == id) return hint_;
        return {};
    }

private:
    void run_replay(std::span<const Var> changed) {
        std::vector<char>& dirty = dirty_;
        dirty.assign(nodes_.size(), 0);
        branch_changes_ = 0;
        std::uint32_t first = static_cast<std::uint32_t>(nodes_.size());
        for (Var v : changed) {
            dirty.at(v.id) = 1;
            first = std::min(first, v.id);
        }
        for (std::size_t i = first; i < nodes_.size(); ++i) {
            Node& n = nodes_[i];
            if (!n.forward) continue;
            bool any = false;
            for (auto in : n.inputs) any = any || dirty[in];
            if (!any) continue;
            n.forward(*this, n);
            dirty[i] = 1;
        }
        dirty.clear();
    }

    Var leaf(Tensor<T> value, bool requires_grad) {
        Node n;
        n.value = std::move(value);
        n.requires_grad = requires_grad;
        nodes_.push_back(std::move(n));
        return Var{static_cast<std::uint32_t>(nodes_.size() - 1)};
    }

    void check_finite([[maybe_unused]] const Node& n) const {
#ifndef NDEBUG
        if (!all_finite<T>(n.value.values()))
            throw DivergenceError("non-finite value produced by node " + std::to_string(nodes_.size() - 1));
#endif
    }

    std::vector<Node> nodes_;
    std::vector<char> dirty_;  // non-empty only while replaying
    std::size_t branch_changes_ = 0;
    std::uint32_t hint_leaf_ = 0;
    std::vector<std::size_t> hint_;
};

}  // namespace nmhebb::ad
