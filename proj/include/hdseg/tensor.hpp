#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <map>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace hdseg {

inline size_t numel(const std::vector<int>& shape) {
    size_t n = 1;
    for (int d : shape) {
        if (d <= 0) throw std::invalid_argument("tensor extent must be positive");
        n *= static_cast<size_t>(d);
    }
    return n;
}

// Dense row-major N-d array. Gradient buffers live beside values (in Param and
// in tape nodes) rather than inside the tensor itself.
template <typename T>
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)), data_(numel(shape_), T{}) {}

    Tensor(std::vector<int> shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
        if (data_.size() != numel(shape_)) throw std::invalid_argument("tensor data size does not match shape");
    }

    static Tensor full(std::vector<int> shape, T v) {
        Tensor t(std::move(shape));
        for (auto& x : t.data_) x = v;
        return t;
    }

    bool empty() const { return data_.empty(); }
    int rank() const { return static_cast<int>(shape_.size()); }
    int dim(int i) const { return shape_.at(static_cast<size_t>(i)); }
    const std::vector<int>& shape() const { return shape_; }
    size_t size() const { return data_.size(); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::vector<T>& vec() { return data_; }
    const std::vector<T>& vec() const { return data_; }

    T& operator[](size_t i) { return data_[i]; }
    const T& operator[](size_t i) const { return data_[i]; }

    // row-major multi-index access, mostly for tests and small setups
    T& at(std::initializer_list<int> idx) { return data_[offset(idx)]; }
    const T& at(std::initializer_list<int> idx) const { return data_[offset(idx)]; }

    bool same_shape(const Tensor& o) const { return shape_ == o.shape_; }

    void fill(T v) {
        for (auto& x : data_) x = v;
    }

private:
    size_t offset(std::initializer_list<int> idx) const {
        if (static_cast<int>(idx.size()) != rank()) throw std::invalid_argument("index rank mismatch");
        size_t off = 0;
        int i = 0;
        for (int v : idx) {
            if (v < 0 || v >= shape_[static_cast<size_t>(i)]) throw std::out_of_range("tensor index out of range");
            off = off * static_cast<size_t>(shape_[static_cast<size_t>(i)]) + static_cast<size_t>(v);
            ++i;
        }
        return off;
    }

    std::vector<int> shape_;
    std::vector<T> data_;
};

// Named learnable (or stateful, e.g. batch-norm running stats) tensor with a
// persistent gradient buffer.
template <typename T>
struct Param {
    std::string name;
    Tensor<T> value;
    Tensor<T> grad;
    bool learnable = true;

    void zero_grad() {
        if (!grad.same_shape(value)) grad = Tensor<T>(value.shape());
        grad.fill(T{});
    }
};

// Name-ordered registry with stable addresses (std::map nodes never move).
template <typename T>
class ParamStore {
public:
    Param<T>& add(const std::string& name, Tensor<T> init, bool learnable = true) {
        auto [it, fresh] = items_.try_emplace(name);
        if (!fresh) throw std::invalid_argument("duplicate parameter name: " + name);
        Param<T>& p = it->second;
        p.name = name;
        p.value = std::move(init);
        p.grad = Tensor<T>(p.value.shape());
        p.learnable = learnable;
        return p;
    }

    Param<T>& get(const std::string& name) {
        auto it = items_.find(name);
        if (it == items_.end()) throw std::out_of_range("no such parameter: " + name);
        return it->second;
    }
    const Param<T>& get(const std::string& name) const {
        auto it = items_.find(name);
        if (it == items_.end()) throw std::out_of_range("no such parameter: " + name);
        return it->second;
    }
    bool contains(const std::string& name) const { return items_.count(name) != 0; }

    void zero_grads() {
        for (auto& [_, p] : items_) p.zero_grad();
    }

    size_t count() const { return items_.size(); }

    auto begin() { return items_.begin(); }
    auto end() { return items_.end(); }
    auto begin() const { return items_.begin(); }
    auto end() const { return items_.end(); }

private:
    std::map<std::string, Param<T>> items_;
};

}  // namespace hdseg
