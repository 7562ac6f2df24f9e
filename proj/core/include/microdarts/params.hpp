#pragma once

#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "microdarts/autodiff.hpp"
#include "microdarts/errors.hpp"
#include "microdarts/tensor.hpp"

namespace microdarts {

// Named model parameters in registration order. The order is the contract:
// updates, velocity buffers and graph binding all follow it, which keeps
// runs reproducible.
template <typename T>
class ParamStore {
public:
    struct Entry {
        std::string name;
        Tensor<T> tensor;
    };

    Tensor<T>& add(std::string name, Tensor<T> t) {
        if (index_.count(name)) throw StructuralError("params: duplicate name " + name);
        index_.emplace(name, entries_.size());
        entries_.push_back({std::move(name), std::move(t)});
        return entries_.back().tensor;
    }

    bool contains(const std::string& name) const { return index_.count(name) != 0; }

    size_t index_of(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) throw StructuralError("params: unknown name " + name);
        return it->second;
    }

    Tensor<T>& at(const std::string& name) {
        auto it = index_.find(name);
        if (it == index_.end()) throw StructuralError("params: unknown name " + name);
        return entries_[it->second].tensor;
    }
    const Tensor<T>& at(const std::string& name) const {
        return const_cast<ParamStore*>(this)->at(name);
    }

    size_t size() const { return entries_.size(); }
    std::span<Entry> entries() { return entries_; }
    std::span<const Entry> entries() const { return entries_; }

    // Registers every parameter as a graph leaf; ids align with entries().
    std::vector<typename Graph<T>::NodeId> bind(Graph<T>& g, bool trainable) const {
        std::vector<typename Graph<T>::NodeId> ids;
        ids.reserve(entries_.size());
        for (const Entry& e : entries_) {
            Tensor<T> copy = e.tensor;
            copy.drop_grad();
            ids.push_back(g.leaf(std::move(copy), trainable, e.name));
        }
        return ids;
    }

private:
    std::vector<Entry> entries_;
    std::unordered_map<std::string, size_t> index_;
};

// Momentum buffers, parallel to a ParamStore's entries, allocated lazily.
template <typename T>
struct SgdState {
    std::vector<std::vector<T>> velocity;
};

// v <- momentum*v + grad + weight_decay*param; param <- param - lr*v.
template <typename T>
void sgd_step(ParamStore<T>& params, const std::vector<std::span<const T>>& grads,
              SgdState<T>& state, double lr, double momentum, double weight_decay) {
    if (lr <= 0.0) throw StructuralError("sgd: learning rate must be positive");
    if (momentum < 0.0 || momentum >= 1.0) throw StructuralError("sgd: momentum must be in [0,1)");
    if (grads.size() != params.size())
        throw StructuralError("sgd: " + std::to_string(grads.size()) + " grads for " +
                              std::to_string(params.size()) + " params");
    if (state.velocity.size() < params.size()) state.velocity.resize(params.size());
    auto entries = params.entries();
    for (size_t p = 0; p < entries.size(); ++p) {
        auto& values = entries[p].tensor.values();
        const auto grad = grads[p];
        if (grad.size() != values.size())
            throw StructuralError("sgd: grad size mismatch for " + entries[p].name);
        auto& v = state.velocity[p];
        if (v.empty()) v.assign(values.size(), T{0});
        const T mu = static_cast<T>(momentum);
        const T wd = static_cast<T>(weight_decay);
        const T step = static_cast<T>(lr);
        for (size_t i = 0; i < values.size(); ++i) {
            v[i] = mu * v[i] + grad[i] + wd * values[i];
            values[i] -= step * v[i];
        }
    }
}

}  // namespace microdarts
