#pragma once

#include <bit>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "ddipnet/tensor.hpp"

namespace ddipnet {

template <class T>
struct BasicNamedTensor {
    std::string name;
    BasicTensor<T> tensor;
};

/// Ordered, uniquely named collection of tensors (network parameters or
/// non-trainable buffers).
template <class T>
class BasicParamSet {
   public:
    using Entry = BasicNamedTensor<T>;

    void add(std::string name, BasicTensor<T> tensor) {
        if (contains(name)) throw ConfigError("duplicate parameter name '" + name + "'");
        entries_.push_back({std::move(name), std::move(tensor)});
    }

    bool contains(std::string_view name) const {
        for (const auto& e : entries_)
            if (e.name == name) return true;
        return false;
    }

    const BasicTensor<T>& at(std::string_view name) const {
        for (const auto& e : entries_)
            if (e.name == name) return e.tensor;
        throw ConfigError("no parameter named '" + std::string(name) + "'");
    }
    BasicTensor<T>& at(std::string_view name) {
        for (auto& e : entries_)
            if (e.name == name) return e.tensor;
        throw ConfigError("no parameter named '" + std::string(name) + "'");
    }

    std::size_t size() const { return entries_.size(); }
    bool empty() const { return entries_.empty(); }
    auto begin() { return entries_.begin(); }
    auto end() { return entries_.end(); }
    auto begin() const { return entries_.begin(); }
    auto end() const { return entries_.end(); }
    const Entry& operator[](std::size_t i) const { return entries_[i]; }
    Entry& operator[](std::size_t i) { return entries_[i]; }

    std::size_t element_count() const {
        std::size_t n = 0;
        for (const auto& e : entries_) n += e.tensor.numel();
        return n;
    }

    void zero_grad() {
        for (auto& e : entries_) e.tensor.zero_grad();
    }

    /// Deep copy; the copies are fresh leaves.
    BasicParamSet clone(bool requires_grad) const {
        BasicParamSet out;
        for (const auto& e : entries_) out.add(e.name, e.tensor.detach(requires_grad));
        return out;
    }

    /// True when names, shapes and every stored bit agree.
    bool bit_equal(const BasicParamSet& other) const {
        if (size() != other.size()) return false;
        for (std::size_t i = 0; i < size(); ++i) {
            const auto& a = entries_[i];
            const auto& b = other.entries_[i];
            if (a.name != b.name || a.tensor.shape() != b.tensor.shape()) return false;
            auto da = a.tensor.data();
            auto db = b.tensor.data();
            for (std::size_t j = 0; j < da.size(); ++j)
                if (std::bit_cast<std::uint64_t>(static_cast<double>(da[j])) !=
                    std::bit_cast<std::uint64_t>(static_cast<double>(db[j])))
                    return false;
        }
        return true;
    }

   private:
    std::vector<Entry> entries_;
};

using NamedTensor = BasicNamedTensor<float>;
using ParamSet = BasicParamSet<float>;

template <class To, class From>
BasicParamSet<To> cast_params(const BasicParamSet<From>& in, bool requires_grad) {
    BasicParamSet<To> out;
    for (const auto& e : in) out.add(e.name, cast_tensor<To>(e.tensor, requires_grad));
    return out;
}

}  // namespace ddipnet
