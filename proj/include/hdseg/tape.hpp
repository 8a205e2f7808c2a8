#pragma once

#include <cassert>
#include <cmath>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "hdseg/kernels.hpp"
#include "hdseg/tensor.hpp"

namespace hdseg {

// Handle into a Tape. Only meaningful for the tape that produced it.
struct Value {
    int idx = -1;
    bool valid() const { return idx >= 0; }
};

// Reverse-mode tape. Nodes are appended in execution order, so insertion
// order is a topological order and the backward sweep is a single reverse
// pass. One tape per forward; a tape is single-context mutable state.
template <typename T>
class Tape {
public:
    struct Node {
        Tensor<T> value;
        Tensor<T> grad;  // allocated on first touch during backward
        std::vector<int> inputs;
        std::function<void(Tape&, int)> backward;  // null for leaves
        Param<T>* param = nullptr;
        const char* tag = "";
        bool touched = false;
        bool needs_grad = false;
    };

    Value constant(Tensor<T> v, const char* tag = "const") {
        return push(std::move(v), {}, nullptr, tag, nullptr, false);
    }

    // Learnable leaf. Copies the parameter value so workers always compute on
    // the snapshot taken at graph-build time.
    Value param(Param<T>& p) {
        return push(Tensor<T>(p.value), {}, nullptr, "param", &p, true);
    }

    Value emit(Tensor<T> out, std::vector<int> inputs, std::function<void(Tape&, int)> back,
               const char* tag) {
        bool needs = false;
        for (int i : inputs) {
            if (i < 0 || i >= static_cast<int>(nodes_.size()))
                throw std::logic_error("tape input out of range");
            needs = needs || nodes_[static_cast<size_t>(i)].needs_grad;
        }
        return push(std::move(out), std::move(inputs), std::move(back), tag, nullptr, needs);
    }

    bool needs_grad(int idx) const { return nodes_[static_cast<size_t>(idx)].needs_grad; }

    const Tensor<T>& val(Value v) const { return nodes_[check(v)].value; }
    Tensor<T>& val_mut(Value v) { return nodes_[check(v)].value; }

    Tensor<T>& grad(Value v) { return grad(check(v)); }

    Tensor<T>& grad(int idx) {
        Node& n = nodes_[static_cast<size_t>(idx)];
        if (!n.touched) {
            n.grad = Tensor<T>(n.value.shape());
            n.touched = true;
        }
        return n.grad;
    }

    bool grad_touched(Value v) const { return nodes_[check(v)].touched; }

    const Node& node(Value v) const { return nodes_[check(v)]; }
    size_t node_count() const { return nodes_.size(); }

    // Seeds d(root)/d(root) = 1, sweeps the tape in reverse, then folds leaf
    // gradients into their Param grad buffers.
    void backward(Value root) {
        const size_t r = sweep(root);
        for (size_t i = 0; i <= r; ++i) {
            Node& n = nodes_[i];
            if (n.param && n.touched)
                kern::add(n.param->grad.data(), n.grad.data(), n.param->grad.data(), n.grad.size());
        }
    }

    // Variant folding leaf gradients into a name-keyed map; lets workers
    // accumulate privately while sharing a read-only parameter snapshot.
    void backward(Value root, std::map<std::string, Tensor<T>>& grads) {
        const size_t r = sweep(root);
        for (size_t i = 0; i <= r; ++i) {
            Node& n = nodes_[i];
            if (!n.param || !n.touched) continue;
            auto [it, fresh] = grads.try_emplace(n.param->name, Tensor<T>(n.grad.shape()));
            kern::add(it->second.data(), n.grad.data(), it->second.data(), n.grad.size());
        }
    }

    // Parameters whose leaves received gradient in the last backward; used by
    // the no-orphan structural check.
    std::vector<const Param<T>*> touched_params() const {
        std::vector<const Param<T>*> out;
        for (const Node& n : nodes_)
            if (n.param && n.touched) out.push_back(n.param);
        return out;
    }

private:
    size_t sweep(Value root) {
        const size_t r = check(root);
        if (nodes_[r].value.size() != 1)
            throw std::invalid_argument("backward root must be scalar, got size " +
                                        std::to_string(nodes_[r].value.size()));
        grad(root)[0] = T(1);
        for (int i = static_cast<int>(r); i >= 0; --i) {
            Node& n = nodes_[static_cast<size_t>(i)];
            if (!n.touched || !n.backward) continue;
            n.backward(*this, i);
        }
        return r;
    }

    size_t check(Value v) const {
        if (!v.valid() || v.idx >= static_cast<int>(nodes_.size()))
            throw std::logic_error("invalid tape value");
        return static_cast<size_t>(v.idx);
    }

    Value push(Tensor<T> out, std::vector<int> inputs, std::function<void(Tape&, int)> back,
               const char* tag, Param<T>* p, bool needs) {
        Node n;
        n.value = std::move(out);
        n.inputs = std::move(inputs);
        n.backward = std::move(back);
        n.tag = tag;
        n.param = p;
        n.needs_grad = needs;
        nodes_.push_back(std::move(n));
        return Value{static_cast<int>(nodes_.size()) - 1};
    }

    std::vector<Node> nodes_;
};

}  // namespace hdseg
