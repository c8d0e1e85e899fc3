#pragma once

#include <map>
#include <set>

#include "ptx/tensor.hpp"

namespace ptx {

// Fills a tensor with seeded gaussian noise; every parameter derives its own
// stream from (run_seed, name) so adding or reordering tensors never shifts
// another tensor's values.
template <typename T>
void fill_normal(Tensor<T>& t, uint64_t run_seed, double sd) {
    Rng rng(mix_seed(run_seed, fnv1a64(t.name)));
    for (auto& v : t.data) v = T(rng.normal() * sd);
}

template <typename T>
void fill_uniform(Tensor<T>& t, uint64_t run_seed, double amp) {
    Rng rng(mix_seed(run_seed, fnv1a64(t.name)));
    for (auto& v : t.data) v = T(rng.uniform(-amp, amp));
}

template <typename T>
void fill_zero(Tensor<T>& t) {
    std::fill(t.data.begin(), t.data.end(), T(0));
}

// Named parameter registry with a frozen/trainable split. Iteration order is
// the map's name order, which keeps checkpoints, fingerprints and optimizer
// state layouts stable across runs.
template <typename T>
class ParamSet {
  public:
    void add(const std::string& name, TensorPtr<T> t, bool frozen) {
        if (tensors_.count(name)) throw ConfigError("duplicate parameter name: " + name);
        t->name = name;
        if (frozen) {
            t->disable_grad();
            frozen_.insert(name);
        } else {
            t->enable_grad();
        }
        tensors_.emplace(name, std::move(t));
    }

    const std::map<std::string, TensorPtr<T>>& all() const { return tensors_; }

    TensorPtr<T> get(const std::string& name) const {
        auto it = tensors_.find(name);
        if (it == tensors_.end()) throw ConfigError("unknown parameter: " + name);
        return it->second;
    }

    bool is_frozen(const std::string& name) const { return frozen_.count(name) > 0; }

    std::vector<TensorPtr<T>> trainable() const {
        std::vector<TensorPtr<T>> out;
        for (auto& [name, t] : tensors_)
            if (!frozen_.count(name)) out.push_back(t);
        return out;
    }

    std::vector<TensorPtr<T>> frozen_tensors() const {
        std::vector<TensorPtr<T>> out;
        for (auto& [name, t] : tensors_)
            if (frozen_.count(name)) out.push_back(t);
        return out;
    }

    size_t trainable_elements() const {
        size_t n = 0;
        for (auto& [name, t] : tensors_)
            if (!frozen_.count(name)) n += t->numel();
        return n;
    }

    size_t total_elements() const {
        size_t n = 0;
        for (auto& [name, t] : tensors_) n += t->numel();
        return n;
    }

    double trainable_fraction() const {
        size_t total = total_elements();
        return total == 0 ? 0.0 : double(trainable_elements()) / double(total);
    }

    void zero_grad() const {
        for (auto& [name, t] : tensors_) t->zero_grad();
    }

    // FNV-1a over (name, f32 payload) of every frozen tensor in name order.
    // Values are hashed through their f32 bit patterns so the digest is
    // stable across the working precision and the on-disk format.
    uint64_t frozen_fingerprint() const {
        uint64_t h = 0xcbf29ce484222325ull;
        for (auto& [name, t] : tensors_) {
            if (!frozen_.count(name)) continue;
            h = fnv1a64(name.data(), name.size(), h);
            for (T v : t->data) {
                uint32_t bits = std::bit_cast<uint32_t>(float(v));
                unsigned char b[4] = {(unsigned char)(bits & 0xff), (unsigned char)((bits >> 8) & 0xff),
                                      (unsigned char)((bits >> 16) & 0xff), (unsigned char)((bits >> 24) & 0xff)};
                h = fnv1a64(b, 4, h);
            }
        }
        return h;
    }

  private:
    std::map<std::string, TensorPtr<T>> tensors_;
    std::set<std::string> frozen_;
};

}  // namespace ptx
