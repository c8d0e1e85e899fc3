#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <memory>
#include <numeric>
#include <sstream>

#include "ptx/common.hpp"

namespace ptx {

// Dense row-major n-d tensor. The gradient buffer exists iff requires_grad,
// and always matches data in size.
template <typename T>
struct Tensor {
    std::vector<size_t> shape;
    std::vector<T> data;
    bool requires_grad = false;
    std::vector<T> grad;
    std::string name;

    Tensor() = default;
    explicit Tensor(std::vector<size_t> s) : shape(std::move(s)) {
        data.assign(numel_of(shape), T(0));
    }

    static size_t numel_of(const std::vector<size_t>& s) {
        size_t n = 1;
        for (size_t e : s) {
            if (e == 0) throw std::invalid_argument("tensor extent must be positive");
            n *= e;
        }
        return n;
    }

    size_t numel() const { return data.size(); }
    size_t ndim() const { return shape.size(); }

    void enable_grad() {
        requires_grad = true;
        grad.assign(data.size(), T(0));
    }
    void disable_grad() {
        requires_grad = false;
        grad.clear();
        grad.shrink_to_fit();
    }
    void zero_grad() {
        if (requires_grad) std::fill(grad.begin(), grad.end(), T(0));
    }

    T& at2(size_t i, size_t j) { return data[i * shape[1] + j]; }
    const T& at2(size_t i, size_t j) const { return data[i * shape[1] + j]; }
};

template <typename T>
using TensorPtr = std::shared_ptr<Tensor<T>>;

template <typename T>
TensorPtr<T> make_tensor(std::vector<size_t> shape, bool requires_grad = false) {
    auto t = std::make_shared<Tensor<T>>(std::move(shape));
    if (requires_grad) t->enable_grad();
    return t;
}

template <typename T>
TensorPtr<T> make_tensor(std::vector<size_t> shape, std::vector<T> values, bool requires_grad = false) {
    auto t = make_tensor<T>(std::move(shape), requires_grad);
    if (values.size() != t->numel())
        throw std::invalid_argument("tensor data size does not match shape");
    t->data = std::move(values);
    return t;
}

template <typename T>
TensorPtr<T> make_scalar(T v, bool requires_grad = false) {
    auto t = make_tensor<T>({1}, requires_grad);
    t->data[0] = v;
    return t;
}

template <typename To, typename From>
TensorPtr<To> cast_tensor(const Tensor<From>& src) {
    auto out = make_tensor<To>(src.shape);
    for (size_t i = 0; i < src.data.size(); ++i) out->data[i] = To(src.data[i]);
    out->name = src.name;
    return out;
}

inline std::string shape_str(const std::vector<size_t>& s) {
    std::ostringstream os;
    os << "[";
    for (size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

template <typename T>
bool all_finite(const Tensor<T>& t) {
    for (T v : t.data)
        if (!std::isfinite(double(v))) return false;
    return true;
}

// ---------------------------------------------------------------------------
// "PTX1" binary tensor container: magic, u32 LE ndim, ndim u32 LE extents,
// f32 LE payload. Shared by checkpoints, embedding banks and scene dumps.
// ---------------------------------------------------------------------------

namespace detail {

inline void put_u32(std::string& out, uint32_t v) {
    out.push_back(char(v & 0xff));
    out.push_back(char((v >> 8) & 0xff));
    out.push_back(char((v >> 16) & 0xff));
    out.push_back(char((v >> 24) & 0xff));
}

inline uint32_t get_u32(const unsigned char* p) {
    return uint32_t(p[0]) | (uint32_t(p[1]) << 8) | (uint32_t(p[2]) << 16) | (uint32_t(p[3]) << 24);
}

}  // namespace detail

template <typename T>
void write_ptx_file(const std::filesystem::path& path, const Tensor<T>& t) {
    std::string buf;
    buf.reserve(8 + 4 * t.ndim() + 4 * t.numel());
    buf += "PTX1";
    detail::put_u32(buf, uint32_t(t.ndim()));
    for (size_t e : t.shape) detail::put_u32(buf, uint32_t(e));
    for (T v : t.data) detail::put_u32(buf, std::bit_cast<uint32_t>(float(v)));

    std::FILE* f = std::fopen(path.string().c_str(), "wb");
    if (!f) throw IoError("cannot open for writing: " + path.string());
    size_t w = std::fwrite(buf.data(), 1, buf.size(), f);
    std::fclose(f);
    if (w != buf.size()) throw IoError("short write: " + path.string());
}

inline Tensor<float> read_ptx_file(const std::filesystem::path& path) {
    std::FILE* f = std::fopen(path.string().c_str(), "rb");
    if (!f) throw IoError("cannot open: " + path.string());
    std::fseek(f, 0, SEEK_END);
    long sz = std::ftell(f);
    std::fseek(f, 0, SEEK_SET);
    std::vector<unsigned char> buf(size_t(std::max(0l, sz)));
    size_t r = std::fread(buf.data(), 1, buf.size(), f);
    std::fclose(f);
    if (r != buf.size()) throw IoError("read failed: " + path.string());

    if (buf.size() < 8 || std::memcmp(buf.data(), "PTX1", 4) != 0)
        throw IoError("not a PTX1 tensor file: " + path.string());
    uint32_t ndim = detail::get_u32(buf.data() + 4);
    size_t off = 8;
    if (buf.size() < off + 4 * ndim)
        throw IoError("truncated tensor file (header): " + path.string());
    std::vector<size_t> shape(ndim);
    size_t numel = 1;
    for (uint32_t i = 0; i < ndim; ++i) {
        shape[i] = detail::get_u32(buf.data() + off);
        off += 4;
        numel *= shape[i];
    }
    if (buf.size() != off + 4 * numel)
        throw IoError("truncated tensor file (payload): " + path.string());
    Tensor<float> t(shape);
    for (size_t i = 0; i < numel; ++i) {
        t.data[i] = std::bit_cast<float>(detail::get_u32(buf.data() + off));
        off += 4;
    }
    return t;
}

// Nearest-neighbor resample of a [h,w] map; used to match binary ground
// truth to the loss resolution without introducing fractional labels.
template <typename T>
Tensor<T> nearest_resample(const Tensor<T>& src, size_t oh, size_t ow) {
    if (src.ndim() != 2) throw std::invalid_argument("nearest_resample expects [h,w], got " + shape_str(src.shape));
    size_t h = src.shape[0], w = src.shape[1];
    Tensor<T> out({oh, ow});
    double sy = double(h) / double(oh), sx = double(w) / double(ow);
    for (size_t i = 0; i < oh; ++i) {
        size_t yi = std::min(h - 1, size_t((double(i) + 0.5) * sy));
        for (size_t j = 0; j < ow; ++j) {
            size_t xj = std::min(w - 1, size_t((double(j) + 0.5) * sx));
            out.data[i * ow + j] = src.data[yi * w + xj];
        }
    }
    return out;
}

}  // namespace ptx
