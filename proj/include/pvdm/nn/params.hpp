#pragma once

#include <cmath>
#include <map>
#include <random>
#include <string>

#include "pvdm/rng.hpp"
#include "pvdm/tensor/autograd.hpp"

namespace pvdm {

/// Named, ordered registry of trainable (or frozen) parameters.
template <typename T>
class ParamStore {
public:
    Var<T> add(const std::string& name, Tensor<T> init, bool trainable = true) {
        if (params_.count(name)) throw std::logic_error("duplicate parameter name: " + name);
        Var<T> v(std::move(init), trainable);
        params_.emplace(name, v);
        return v;
    }

    /// Uniform(-b, b) with b = 1/sqrt(fan_in).
    Var<T> add_fan_in(const std::string& name, Shape shape, int64_t fan_in, Rng& rng, T gain = T(1)) {
        const T bound = gain / std::sqrt(static_cast<T>(std::max<int64_t>(1, fan_in)));
        return add(name, Tensor<T>::uniform(std::move(shape), rng, -bound, bound));
    }

    Var<T> add_constant(const std::string& name, Shape shape, T value) { return add(name, Tensor<T>(std::move(shape), value)); }

    const std::map<std::string, Var<T>>& all() const { return params_; }
    std::map<std::string, Var<T>>& all() { return params_; }

    const Var<T>& get(const std::string& name) const {
        auto it = params_.find(name);
        if (it == params_.end()) throw std::out_of_range("unknown parameter: " + name);
        return it->second;
    }

    bool contains(const std::string& name) const { return params_.count(name) != 0; }

    int64_t count() const {
        int64_t n = 0;
        for (const auto& [_, v] : params_) n += v.numel();
        return n;
    }

    int64_t trainable_count() const {
        int64_t n = 0;
        for (const auto& [_, v] : params_) n += v.requires_grad() ? v.numel() : 0;
        return n;
    }

    void zero_grad() {
        for (auto& [_, v] : params_) v.zero_grad();
    }

    void set_trainable(bool on) {
        for (auto& [_, v] : params_) v.set_requires_grad(on);
    }

    /// Copies values from another store with identical names and shapes.
    template <typename U>
    void load_values(const ParamStore<U>& other) {
        for (auto& [name, v] : params_) {
            const auto& src = other.get(name);
            if (src.shape() != v.shape()) throw std::invalid_argument("parameter shape mismatch for " + name);
            v.mutable_value() = src.value().template cast<T>();
        }
    }

private:
    std::map<std::string, Var<T>> params_;
};

}  // namespace pvdm
