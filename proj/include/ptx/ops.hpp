#pragma once

#include <Eigen/Dense>
#include <functional>

#include "ptx/tape.hpp"

namespace ptx {

// Differentiable primitives. Every op takes a nullable tape: with a tape the
// op wires its backward closure in, without one it is a plain forward pass
// (inference and finite differencing). Gradients accumulate with +=, so a
// tensor used twice gets the sum of both paths.

namespace detail {

template <typename T>
using EMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using Map = Eigen::Map<EMat<T>>;
template <typename T>
using CMap = Eigen::Map<const EMat<T>>;

template <typename T, typename... Ts>
bool wants_grad(Tape<T>* tape, const Ts&... ins) {
    if (!tape) return false;
    return (... || ins->requires_grad);
}

inline constexpr double kInvSqrt2 = 0.70710678118654752440;
inline constexpr double kInvSqrt2Pi = 0.39894228040143267794;

}  // namespace detail

template <typename T>
TensorPtr<T> matmul(Tape<T>* tape, const TensorPtr<T>& a, const TensorPtr<T>& b) {
    if (a->ndim() != 2 || b->ndim() != 2 || a->shape[1] != b->shape[0])
        throw std::invalid_argument("matmul shape mismatch: " + shape_str(a->shape) + " x " + shape_str(b->shape));
    const size_t m = a->shape[0], k = a->shape[1], n = b->shape[1];
    auto out = make_tensor<T>({m, n});
    detail::Map<T>(out->data.data(), m, n).noalias() =
        detail::CMap<T>(a->data.data(), m, k) * detail::CMap<T>(b->data.data(), k, n);
    if (detail::wants_grad(tape, a, b)) {
        out->enable_grad();
        tape->record([a, b, out, m, k, n] {
            detail::CMap<T> dc(out->grad.data(), m, n);
            if (a->requires_grad)
                detail::Map<T>(a->grad.data(), m, k).noalias() +=
                    dc * detail::CMap<T>(b->data.data(), k, n).transpose();
            if (b->requires_grad)
                detail::Map<T>(b->grad.data(), k, n).noalias() +=
                    detail::CMap<T>(a->data.data(), m, k).transpose() * dc;
        });
    }
    return out;
}

template <typename T>
TensorPtr<T> add(Tape<T>* tape, const TensorPtr<T>& a, const TensorPtr<T>& b) {
    if (a->shape != b->shape)
        throw std::invalid_argument("add shape mismatch: " + shape_str(a->shape) + " vs " + shape_str(b->shape));
    auto out = make_tensor<T>(a->shape);
    for (size_t i = 0; i < out->numel(); ++i) out->data[i] = a->data[i] + b->data[i];
    if (detail::wants_grad(tape, a, b)) {
        out->enable_grad();
        tape->record([a, b, out] {
            for (size_t i = 0; i < out->numel(); ++i) {
                if (a->requires_grad) a->grad[i] += out->grad[i];
                if (b->requires_grad) b->grad[i] += out->grad[i];
            }
        });
    }
    return out;
}

template <typename T>
TensorPtr<T> mul(Tape<T>* tape, const TensorPtr<T>& a, const TensorPtr<T>& b) {
    if (a->shape != b->shape)
        throw std::invalid_argument("mul shape mismatch: " + shape_str(a->shape) + " vs " + shape_str(b->shape));
    auto out = make_tensor<T>(a->shape);
    for (size_t i = 0; i < out->numel(); ++i) out->data[i] = a->data[i] * b->data[i];
    if (detail::wants_grad(tape, a, b)) {
        out->enable_grad();
        tape->record([a, b, out] {
            for (size_t i = 0; i < out->numel(); ++i) {
                if (a->requires_grad) a->grad[i] += out->grad[i] * b->data[i];
                if (b->requires_grad) b->grad[i] += out->grad[i] * a->data[i];
            }
        });
    }
    return out;
}

template <typename T>
TensorPtr<T> scale(Tape<T>* tape, const TensorPtr<T>& a, T s) {
    auto out = make_tensor<T>(a->shape);
    for (size_t i = 0; i < out->numel(); ++i) out->data[i] = a->data[i] * s;
    if (detail::wants_grad(tape, a)) {
        out->enable_grad();
        tape->record([a, out, s] {
            for (size_t i = 0; i < out->numel(); ++i) a->grad[i] += out->grad[i] * s;
        });
    }
    return out;
}

// a is [m,n]; v is [n] (or [1,n]) and is added to every row.
template <typename T>
TensorPtr<T> add_rowvec(Tape<T>* tape, const TensorPtr<T>& a, const TensorPtr<T>& v) {
    size_t vn = v->numel();
    if (a->ndim() != 2 || a->shape[1] != vn || (v->ndim() == 2 && v->shape[0] != 1))
        throw std::invalid_argument("add_rowvec shape mismatch: " + shape_str(a->shape) + " vs " + shape_str(v->shape));
    const size_t m = a->shape[0], n = a->shape[1];
    auto out = make_tensor<T>(a->shape);
    for (size_t i = 0; i < m; ++i)
        for (size_t j = 0; j < n; ++j) out->data[i * n + j] = a->data[i * n + j] + v->data[j];
    if (detail::wants_grad(tape, a, v)) {
        out->enable_grad();
        tape->record([a, v, out, m, n] {
            for (size_t i = 0; i < m; ++i)
                for (size_t j = 0; j < n; ++j) {
                    if (a->requires_grad) a->grad[i * n + j] += out->grad[i * n + j];
                    if (v->requires_grad) v->grad[j] += out->grad[i * n + j];
                }
        });
    }
    return out;
}

template <typename T>
TensorPtr<T> transpose(Tape<T>* tape, const TensorPtr<T>& a) {
    if (a->ndim() != 2) throw std::invalid_argument("transpose expects a matrix, got " + shape_str(a->shape));
    const size_t m = a->shape[0], n = a->shape[1];
    auto out = make_tensor<T>({n, m});
    for (size_t i = 0; i < m; ++i)
        for (size_t j = 0; j < n; ++j) out->data[j * m + i] = a->data[i * n + j];
    if (detail::wants_grad(tape, a)) {
        out->enable_grad();
        tape->record([a, out, m, n] {
            for (size_t i = 0; i < m; ++i)
                for (size_t j = 0; j < n; ++j) a->grad[i * n + j] += out->grad[j * m + i];
        });
    }
    return out;
}

// Exact (erf-based) GELU. gelu(0) == 0 bit-for-bit, which the zero-initialised
// adapter branches rely on.
template <typename T>
TensorPtr<T> gelu(Tape<T>* tape, const TensorPtr<T>& a) {
    auto out = make_tensor<T>(a->shape);
    for (size_t i = 0; i < out->numel(); ++i) {
        double x = double(a->data[i]);
        out->data[i] = T(0.5 * x * (1.0 + std::erf(x * detail::kInvSqrt2)));
    }
    if (detail::wants_grad(tape, a)) {
        out->enable_grad();
        tape->record([a, out] {
            for (size_t i = 0; i < out->numel(); ++i) {
                double x = double(a->data[i]);
                double cdf = 0.5 * (1.0 + std::erf(x * detail::kInvSqrt2));
                double pdf = detail::kInvSqrt2Pi * std::exp(-0.5 * x * x);
                a->grad[i] += out->grad[i] * T(cdf + x * pdf);
            }
        });
    }
    return out;
}

// Row-wise layer norm over [m,n] with population variance.
template <typename T>
TensorPtr<T> layer_norm(Tape<T>* tape, const TensorPtr<T>& x, const TensorPtr<T>& gamma,
                        const TensorPtr<T>& beta, T eps = T(1e-5)) {
    if (x->ndim() != 2 || gamma->numel() != x->shape[1] || beta->numel() != x->shape[1])
        throw std::invalid_argument("layer_norm shape mismatch: " + shape_str(x->shape));
    const size_t m = x->shape[0], n = x->shape[1];
    auto out = make_tensor<T>(x->shape);
    auto xhat = std::make_shared<std::vector<T>>(m * n);
    auto inv_sd = std::make_shared<std::vector<T>>(m);
    for (size_t i = 0; i < m; ++i) {
        const T* row = &x->data[i * n];
        T mean = std::accumulate(row, row + n, T(0)) / T(n);
        T var = T(0);
        for (size_t j = 0; j < n; ++j) var += (row[j] - mean) * (row[j] - mean);
        var /= T(n);
        T is = T(1) / std::sqrt(var + eps);
        (*inv_sd)[i] = is;
        for (size_t j = 0; j < n; ++j) {
            T xh = (row[j] - mean) * is;
            (*xhat)[i * n + j] = xh;
            out->data[i * n + j] = gamma->data[j] * xh + beta->data[j];
        }
    }
    if (detail::wants_grad(tape, x, gamma, beta)) {
        out->enable_grad();
        tape->record([x, gamma, beta, out, xhat, inv_sd, m, n] {
            for (size_t i = 0; i < m; ++i) {
                T gsum = T(0), gxsum = T(0);
                for (size_t j = 0; j < n; ++j) {
                    T dy = out->grad[i * n + j];
                    T g = dy * gamma->data[j];
                    gsum += g;
                    gxsum += g * (*xhat)[i * n + j];
                    if (gamma->requires_grad) gamma->grad[j] += dy * (*xhat)[i * n + j];
                    if (beta->requires_grad) beta->grad[j] += dy;
                }
                if (!x->requires_grad) continue;
                T gmean = gsum / T(n), gxmean = gxsum / T(n);
                for (size_t j = 0; j < n; ++j) {
                    T g = out->grad[i * n + j] * gamma->data[j];
                    x->grad[i * n + j] += (*inv_sd)[i] * (g - gmean - (*xhat)[i * n + j] * gxmean);
                }
            }
        });
    }
    return out;
}

// Fused scaled-dot-product attention over per-head blocks.
// q: [h,nq,dh], k,v: [h,nk,dh] -> [h,nq,dh]. Scores are scaled by 1/sqrt(dh)
// and softmaxed row-wise with the usual row-max shift.
template <typename T>
TensorPtr<T> softmax_attention(Tape<T>* tape, const TensorPtr<T>& q, const TensorPtr<T>& k,
                               const TensorPtr<T>& v) {
    if (q->ndim() != 3 || k->ndim() != 3 || v->ndim() != 3 || q->shape[0] != k->shape[0] ||
        k->shape != v->shape || q->shape[2] != k->shape[2])
        throw std::invalid_argument("attention shape mismatch: q=" + shape_str(q->shape) +
                                    " k=" + shape_str(k->shape) + " v=" + shape_str(v->shape));
    const size_t h = q->shape[0], nq = q->shape[1], nk = k->shape[1], dh = q->shape[2];
    const T sc = T(1) / std::sqrt(T(dh));
    auto out = make_tensor<T>({h, nq, dh});
    auto probs = std::make_shared<std::vector<T>>(h * nq * nk);
    for (size_t t = 0; t < h; ++t) {
        detail::CMap<T> Q(&q->data[t * nq * dh], nq, dh);
        detail::CMap<T> K(&k->data[t * nk * dh], nk, dh);
        detail::CMap<T> V(&v->data[t * nk * dh], nk, dh);
        detail::Map<T> P(&(*probs)[t * nq * nk], nq, nk);
        P.noalias() = Q * K.transpose() * sc;
        for (size_t i = 0; i < nq; ++i) {
            T* row = &(*probs)[t * nq * nk + i * nk];
            T mx = *std::max_element(row, row + nk);
            T sum = T(0);
            for (size_t j = 0; j < nk; ++j) {
                row[j] = std::exp(row[j] - mx);
                sum += row[j];
            }
            for (size_t j = 0; j < nk; ++j) row[j] /= sum;
        }
        detail::Map<T>(&out->data[t * nq * dh], nq, dh).noalias() = P * V;
    }
    if (detail::wants_grad(tape, q, k, v)) {
        out->enable_grad();
        tape->record([q, k, v, out, probs, h, nq, nk, dh, sc] {
            std::vector<T> dS(nq * nk);
            for (size_t t = 0; t < h; ++t) {
                detail::CMap<T> Q(&q->data[t * nq * dh], nq, dh);
                detail::CMap<T> K(&k->data[t * nk * dh], nk, dh);
                detail::CMap<T> V(&v->data[t * nk * dh], nk, dh);
                detail::CMap<T> P(&(*probs)[t * nq * nk], nq, nk);
                detail::CMap<T> dO(&out->grad[t * nq * dh], nq, dh);
                if (v->requires_grad)
                    detail::Map<T>(&v->grad[t * nk * dh], nk, dh).noalias() += P.transpose() * dO;
                // dS = P .* (dP - rowsum(dP .* P)), with dP = dO V^T
                detail::Map<T> dSm(dS.data(), nq, nk);
                dSm.noalias() = dO * V.transpose();
                for (size_t i = 0; i < nq; ++i) {
                    T dot = T(0);
                    for (size_t j = 0; j < nk; ++j) dot += dS[i * nk + j] * (*probs)[t * nq * nk + i * nk + j];
                    for (size_t j = 0; j < nk; ++j)
                        dS[i * nk + j] = (*probs)[t * nq * nk + i * nk + j] * (dS[i * nk + j] - dot);
                }
                if (q->requires_grad)
                    detail::Map<T>(&q->grad[t * nq * dh], nq, dh).noalias() += dSm * K * sc;
                if (k->requires_grad)
                    detail::Map<T>(&k->grad[t * nk * dh], nk, dh).noalias() += dSm.transpose() * Q * sc;
            }
        });
    }
    return out;
}

// Mean binary cross-entropy on logits, in the overflow-safe form
//   mean( max(z,0) - z*y + log1p(exp(-|z|)) ).
// Targets are data, not parameters; no gradient flows into y.
template <typename T>
TensorPtr<T> bce_loss(Tape<T>* tape, const TensorPtr<T>& z, const TensorPtr<T>& y) {
    if (z->shape != y->shape)
        throw std::invalid_argument("bce_loss shape mismatch: " + shape_str(z->shape) + " vs " + shape_str(y->shape));
    const size_t n = z->numel();
    auto out = make_tensor<T>({1});
    T acc = T(0);
    for (size_t i = 0; i < n; ++i) {
        T zi = z->data[i], yi = y->data[i];
        acc += std::max(zi, T(0)) - zi * yi + std::log1p(std::exp(-std::abs(zi)));
    }
    out->data[0] = acc / T(n);
    if (detail::wants_grad(tape, z)) {
        out->enable_grad();
        tape->record([z, y, out, n] {
            T d = out->grad[0] / T(n);
            for (size_t i = 0; i < n; ++i) {
                T sig = T(1) / (T(1) + std::exp(-z->data[i]));
                z->grad[i] += d * (sig - y->data[i]);
            }
        });
    }
    return out;
}

namespace detail {

// Source index/weight pair for one output coordinate of the 2x upsample,
// align-corners-false convention: src = (dst + 0.5)/2 - 0.5, edges clamped.
inline void up2_coeffs(size_t dst, size_t src_extent, size_t& i0, size_t& i1, double& w1) {
    double s = (double(dst) + 0.5) * 0.5 - 0.5;
    double f = std::floor(s);
    w1 = s - f;
    long lo = long(f);
    i0 = size_t(std::clamp(lo, 0l, long(src_extent) - 1));
    i1 = size_t(std::clamp(lo + 1, 0l, long(src_extent) - 1));
}

}  // namespace detail

template <typename T>
TensorPtr<T> bilinear_upsample2x(Tape<T>* tape, const TensorPtr<T>& x) {
    if (x->ndim() != 2) throw std::invalid_argument("bilinear_upsample2x expects [h,w], got " + shape_str(x->shape));
    const size_t h = x->shape[0], w = x->shape[1];
    auto out = make_tensor<T>({2 * h, 2 * w});
    for (size_t i = 0; i < 2 * h; ++i) {
        size_t y0, y1;
        double wy;
        detail::up2_coeffs(i, h, y0, y1, wy);
        for (size_t j = 0; j < 2 * w; ++j) {
            size_t x0, x1;
            double wx;
            detail::up2_coeffs(j, w, x0, x1, wx);
            double v = (1 - wy) * (1 - wx) * double(x->data[y0 * w + x0]) +
                       (1 - wy) * wx * double(x->data[y0 * w + x1]) +
                       wy * (1 - wx) * double(x->data[y1 * w + x0]) +
                       wy * wx * double(x->data[y1 * w + x1]);
            out->data[i * 2 * w + j] = T(v);
        }
    }
    if (detail::wants_grad(tape, x)) {
        out->enable_grad();
        tape->record([x, out, h, w] {
            for (size_t i = 0; i < 2 * h; ++i) {
                size_t y0, y1;
                double wy;
                detail::up2_coeffs(i, h, y0, y1, wy);
                for (size_t j = 0; j < 2 * w; ++j) {
                    size_t x0, x1;
                    double wx;
                    detail::up2_coeffs(j, w, x0, x1, wx);
                    T d = out->grad[i * 2 * w + j];
                    x->grad[y0 * w + x0] += T((1 - wy) * (1 - wx)) * d;
                    x->grad[y0 * w + x1] += T((1 - wy) * wx) * d;
                    x->grad[y1 * w + x0] += T(wy * (1 - wx)) * d;
                    x->grad[y1 * w + x1] += T(wy * wx) * d;
                }
            }
        });
    }
    return out;
}

// [h,w,c] image -> [gh*gw, p*p*c] rows of flattened non-overlapping patches,
// patch grid scanned row-major, pixels within a patch row-major with channels
// innermost (the image's own memory order).
template <typename T>
TensorPtr<T> patchify(Tape<T>* tape, const TensorPtr<T>& img, size_t p) {
    if (img->ndim() != 3 || p == 0 || img->shape[0] % p != 0 || img->shape[1] % p != 0)
        throw std::invalid_argument("patchify: bad image " + shape_str(img->shape) + " for patch " + std::to_string(p));
    const size_t h = img->shape[0], w = img->shape[1], c = img->shape[2];
    const size_t gh = h / p, gw = w / p, row = p * p * c;
    auto out = make_tensor<T>({gh * gw, row});
    auto src_of = [=](size_t patch, size_t col) {
        size_t gi = patch / gw, gj = patch % gw;
        size_t py = col / (p * c), px = (col / c) % p, cc = col % c;
        return ((gi * p + py) * w + (gj * p + px)) * c + cc;
    };
    for (size_t patch = 0; patch < gh * gw; ++patch)
        for (size_t col = 0; col < row; ++col) out->data[patch * row + col] = img->data[src_of(patch, col)];
    if (detail::wants_grad(tape, img)) {
        out->enable_grad();
        tape->record([img, out, src_of, gh, gw, row] {
            for (size_t patch = 0; patch < gh * gw; ++patch)
                for (size_t col = 0; col < row; ++col)
                    img->grad[src_of(patch, col)] += out->grad[patch * row + col];
        });
    }
    return out;
}

// [n,d] -> [h,n,d/h]
template <typename T>
TensorPtr<T> split_heads(Tape<T>* tape, const TensorPtr<T>& x, size_t heads) {
    if (x->ndim() != 2 || heads == 0 || x->shape[1] % heads != 0)
        throw std::invalid_argument("split_heads: " + shape_str(x->shape) + " into " + std::to_string(heads));
    const size_t n = x->shape[0], d = x->shape[1], dh = d / heads;
    auto out = make_tensor<T>({heads, n, dh});
    for (size_t t = 0; t < heads; ++t)
        for (size_t i = 0; i < n; ++i)
            for (size_t c = 0; c < dh; ++c) out->data[(t * n + i) * dh + c] = x->data[i * d + t * dh + c];
    if (detail::wants_grad(tape, x)) {
        out->enable_grad();
        tape->record([x, out, heads, n, d, dh] {
            for (size_t t = 0; t < heads; ++t)
                for (size_t i = 0; i < n; ++i)
                    for (size_t c = 0; c < dh; ++c) x->grad[i * d + t * dh + c] += out->grad[(t * n + i) * dh + c];
        });
    }
    return out;
}

// [h,n,dh] -> [n,h*dh]
template <typename T>
TensorPtr<T> merge_heads(Tape<T>* tape, const TensorPtr<T>& x) {
    if (x->ndim() != 3) throw std::invalid_argument("merge_heads expects [h,n,dh], got " + shape_str(x->shape));
    const size_t heads = x->shape[0], n = x->shape[1], dh = x->shape[2], d = heads * dh;
    auto out = make_tensor<T>({n, d});
    for (size_t t = 0; t < heads; ++t)
        for (size_t i = 0; i < n; ++i)
            for (size_t c = 0; c < dh; ++c) out->data[i * d + t * dh + c] = x->data[(t * n + i) * dh + c];
    if (detail::wants_grad(tape, x)) {
        out->enable_grad();
        tape->record([x, out, heads, n, d, dh] {
            for (size_t t = 0; t < heads; ++t)
                for (size_t i = 0; i < n; ++i)
                    for (size_t c = 0; c < dh; ++c) x->grad[(t * n + i) * dh + c] += out->grad[i * d + t * dh + c];
        });
    }
    return out;
}

template <typename T>
TensorPtr<T> concat_rows(Tape<T>* tape, const TensorPtr<T>& a, const TensorPtr<T>& b) {
    if (a->ndim() != 2 || b->ndim() != 2 || a->shape[1] != b->shape[1])
        throw std::invalid_argument("concat_rows shape mismatch: " + shape_str(a->shape) + " vs " + shape_str(b->shape));
    const size_t ma = a->shape[0], mb = b->shape[0], n = a->shape[1];
    auto out = make_tensor<T>({ma + mb, n});
    std::copy(a->data.begin(), a->data.end(), out->data.begin());
    std::copy(b->data.begin(), b->data.end(), out->data.begin() + ma * n);
    if (detail::wants_grad(tape, a, b)) {
        out->enable_grad();
        tape->record([a, b, out, ma, mb, n] {
            if (a->requires_grad)
                for (size_t i = 0; i < ma * n; ++i) a->grad[i] += out->grad[i];
            if (b->requires_grad)
                for (size_t i = 0; i < mb * n; ++i) b->grad[i] += out->grad[ma * n + i];
        });
    }
    return out;
}

template <typename T>
TensorPtr<T> slice_rows(Tape<T>* tape, const TensorPtr<T>& x, size_t r0, size_t r1) {
    if (x->ndim() != 2 || r0 >= r1 || r1 > x->shape[0])
        throw std::invalid_argument("slice_rows: bad range [" + std::to_string(r0) + "," + std::to_string(r1) +
                                    ") on " + shape_str(x->shape));
    const size_t n = x->shape[1];
    auto out = make_tensor<T>({r1 - r0, n});
    std::copy(x->data.begin() + r0 * n, x->data.begin() + r1 * n, out->data.begin());
    if (detail::wants_grad(tape, x)) {
        out->enable_grad();
        tape->record([x, out, r0, n] {
            for (size_t i = 0; i < out->numel(); ++i) x->grad[r0 * n + i] += out->grad[i];
        });
    }
    return out;
}

template <typename T>
TensorPtr<T> reshape(Tape<T>* tape, const TensorPtr<T>& x, std::vector<size_t> new_shape) {
    auto out = make_tensor<T>(std::move(new_shape));
    if (out->numel() != x->numel())
        throw std::invalid_argument("reshape numel mismatch: " + shape_str(x->shape) + " -> " + shape_str(out->shape));
    out->data = x->data;
    if (detail::wants_grad(tape, x)) {
        out->enable_grad();
        tape->record([x, out] {
            for (size_t i = 0; i < out->numel(); ++i) x->grad[i] += out->grad[i];
        });
    }
    return out;
}

template <typename T>
TensorPtr<T> sum_all(Tape<T>* tape, const TensorPtr<T>& x) {
    auto out = make_tensor<T>({1});
    out->data[0] = std::accumulate(x->data.begin(), x->data.end(), T(0));
    if (detail::wants_grad(tape, x)) {
        out->enable_grad();
        tape->record([x, out] {
            for (size_t i = 0; i < x->numel(); ++i) x->grad[i] += out->grad[0];
        });
    }
    return out;
}

template <typename T>
Tensor<T> sigmoid_map(const Tensor<T>& z) {
    Tensor<T> p(z.shape);
    for (size_t i = 0; i < z.numel(); ++i) p.data[i] = T(1) / (T(1) + std::exp(-z.data[i]));
    return p;
}

// ---------------------------------------------------------------------------
// Central-difference gradient audit. Runs the analytic backward pass once,
// then perturbs a seeded sample of coordinates per parameter and compares
// (f(t+h)-f(t-h))/2h against the stored gradient. Double precision only:
// with h=1e-5 the difference quotient loses ~10 digits in f32.
// ---------------------------------------------------------------------------

struct GradCheckReport {
    double max_rel_err = 0.0;
    size_t coords_checked = 0;
    std::string worst_tensor;
    size_t worst_index = 0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
};

inline GradCheckReport grad_check(const std::function<TensorPtr<double>(Tape<double>*)>& f,
                                  const std::vector<TensorPtr<double>>& params, uint64_t seed,
                                  size_t coords_per_tensor = 32, double h = 1e-5) {
    for (auto& p : params) p->zero_grad();
    Tape<double> tape;
    auto loss = f(&tape);
    tape.backward(loss);
    std::vector<std::vector<double>> analytic;
    analytic.reserve(params.size());
    for (auto& p : params) analytic.push_back(p->grad);

    GradCheckReport rep;
    Rng rng(mix_seed(seed, 0x67726463));
    for (size_t pi = 0; pi < params.size(); ++pi) {
        auto& p = params[pi];
        std::vector<size_t> coords;
        if (p->numel() <= coords_per_tensor) {
            coords.resize(p->numel());
            std::iota(coords.begin(), coords.end(), size_t(0));
        } else {
            std::vector<size_t> all(p->numel());
            std::iota(all.begin(), all.end(), size_t(0));
            rng.shuffle(all);
            coords.assign(all.begin(), all.begin() + coords_per_tensor);
        }
        for (size_t c : coords) {
            double keep = p->data[c];
            p->data[c] = keep + h;
            double lp = f(nullptr)->data[0];
            p->data[c] = keep - h;
            double lm = f(nullptr)->data[0];
            p->data[c] = keep;
            double numeric = (lp - lm) / (2.0 * h);
            double a = analytic[pi][c];
            double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-6});
            ++rep.coords_checked;
            if (rel > rep.max_rel_err) {
                rep.max_rel_err = rel;
                rep.worst_tensor = p->name.empty() ? ("param" + std::to_string(pi)) : p->name;
                rep.worst_index = c;
                rep.worst_analytic = a;
                rep.worst_numeric = numeric;
            }
        }
    }
    return rep;
}

}  // namespace ptx
