#pragma once

#include <functional>

#include "ptx/tensor.hpp"

namespace ptx {

// Reverse-mode tape. Ops append their backward closures in execution order,
// which is already a topological order of the graph; backward() seeds the
// loss gradient with 1 and plays the closures back exactly once, in reverse.
template <typename T>
class Tape {
  public:
    void record(std::function<void()> fn) { records_.push_back(std::move(fn)); }

    size_t size() const { return records_.size(); }

    void backward(const TensorPtr<T>& loss) {
        if (loss->numel() != 1)
            throw std::invalid_argument("backward expects a scalar loss, got " + shape_str(loss->shape));
        if (!loss->requires_grad)
            throw std::invalid_argument("backward: loss does not require grad");
        loss->grad[0] = T(1);
        for (auto it = records_.rbegin(); it != records_.rend(); ++it) (*it)();
        records_.clear();
    }

    void clear() { records_.clear(); }

  private:
    std::vector<std::function<void()>> records_;
};

}  // namespace ptx
