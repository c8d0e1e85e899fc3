#pragma once

#include "ptx/ops.hpp"
#include "ptx/params.hpp"

namespace ptx {

// Bottleneck adapter running in parallel with a frozen sublayer:
//   delta(x) = gelu(x W_down) W_up,    adapter(x) = x + delta(x)
// W_up starts at zero so a freshly inserted adapter is an exact identity on
// the residual stream; W_down starts random so gradient signal reaches it
// through W_up from the first update.
template <typename T>
struct ParallelAdapter {
    TensorPtr<T> w_down;  // [d, r]
    TensorPtr<T> w_up;    // [r, d]

    static ParallelAdapter init(size_t d, size_t r, uint64_t seed, const std::string& prefix) {
        ParallelAdapter a;
        a.w_down = make_tensor<T>({d, r});
        a.w_down->name = prefix + ".w_down";
        fill_uniform(*a.w_down, seed, 1.0 / std::sqrt(double(d)));
        a.w_up = make_tensor<T>({r, d});
        a.w_up->name = prefix + ".w_up";
        return a;
    }

    void register_params(ParamSet<T>& ps, bool frozen = false) const {
        ps.add(w_down->name, w_down, frozen);
        ps.add(w_up->name, w_up, frozen);
    }

    TensorPtr<T> delta(Tape<T>* tape, const TensorPtr<T>& x) const {
        return matmul(tape, gelu(tape, matmul(tape, x, w_down)), w_up);
    }

    TensorPtr<T> forward(Tape<T>* tape, const TensorPtr<T>& x) const {
        return add(tape, x, delta(tape, x));
    }
};

// Text-conditioned variant: the class embedding t is squeezed through its own
// projection, activated, and added to every token before the bottleneck:
//   t_hat = gelu(t W_text)
//   delta(x, t) = gelu((x .+ t_hat) W1) W2
// There is no residual inside; the surrounding block owns the skip path.
// With no text attached the adapter degenerates to the plain parallel form
// on exactly the same x (no zero-vector round trip that could flip -0.0).
template <typename T>
struct TextAdapter {
    TensorPtr<T> w_text;  // [d_t, d]
    TensorPtr<T> w1;      // [d, r]
    TensorPtr<T> w2;      // [r, d]

    static TextAdapter init(size_t d, size_t r, size_t d_t, uint64_t seed, const std::string& prefix) {
        TextAdapter a;
        a.w_text = make_tensor<T>({d_t, d});
        a.w_text->name = prefix + ".w_text";
        fill_uniform(*a.w_text, seed, 1.0 / std::sqrt(double(d_t)));
        a.w1 = make_tensor<T>({d, r});
        a.w1->name = prefix + ".w1";
        fill_uniform(*a.w1, seed, 1.0 / std::sqrt(double(d)));
        a.w2 = make_tensor<T>({r, d});
        a.w2->name = prefix + ".w2";
        return a;
    }

    void register_params(ParamSet<T>& ps, bool frozen = false) const {
        ps.add(w_text->name, w_text, frozen);
        ps.add(w1->name, w1, frozen);
        ps.add(w2->name, w2, frozen);
    }

    // [1,d_t] class embedding -> [1,d] token-space bias
    TensorPtr<T> project_text(Tape<T>* tape, const TensorPtr<T>& t_embed) const {
        if (t_embed->ndim() != 2 || t_embed->shape[0] != 1 || t_embed->shape[1] != w_text->shape[0])
            throw std::invalid_argument("text embedding must be [1," + std::to_string(w_text->shape[0]) +
                                        "], got " + shape_str(t_embed->shape));
        return gelu(tape, matmul(tape, t_embed, w_text));
    }

    TensorPtr<T> delta(Tape<T>* tape, const TensorPtr<T>& x, const TensorPtr<T>& t_embed) const {
        TensorPtr<T> xin = x;
        if (t_embed) xin = add_rowvec(tape, x, project_text(tape, t_embed));
        return matmul(tape, gelu(tape, matmul(tape, xin, w1)), w2);
    }
};

}  // namespace ptx
