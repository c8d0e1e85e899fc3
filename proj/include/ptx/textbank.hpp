#pragma once

#include <fstream>
#include <map>

#include "json.hpp"
#include "ptx/tensor.hpp"

namespace ptx {

// Frozen per-class embedding table. Rows live in a single [C, d_t] tensor;
// the manifest maps class names to row indices. Synthetic banks stand in for
// an offline text encoder: seeded unit-norm gaussians, redrawn (still
// deterministically) if any pair lands too close on the sphere.
class TextBank {
  public:
    static constexpr double kMaxAbsCosine = 0.6;

    static TextBank build_synthetic(const std::vector<std::string>& class_names, size_t d_t,
                                    uint64_t seed) {
        if (d_t < 8) throw ConfigError("text dim must be at least 8, got " + std::to_string(d_t));
        if (class_names.empty()) throw ConfigError("text bank needs at least one class");
        TextBank bank;
        bank.source_ = "synthetic-seeded";
        for (size_t i = 0; i < class_names.size(); ++i) {
            if (bank.index_.count(class_names[i]))
                throw ConfigError("duplicate class name: " + class_names[i]);
            bank.index_[class_names[i]] = i;
        }
        const size_t c = class_names.size();
        for (uint64_t attempt = 0;; ++attempt) {
            if (attempt >= 1000)
                throw ConfigError("could not draw " + std::to_string(c) + " embeddings at d_t=" +
                                  std::to_string(d_t) + " with pairwise |cosine| < 0.6");
            Rng rng(mix_seed(seed, 0x7478626b + attempt));
            Tensor<float> rows({c, d_t});
            for (size_t i = 0; i < c; ++i) {
                double norm2 = 0;
                std::vector<double> v(d_t);
                for (size_t j = 0; j < d_t; ++j) {
                    v[j] = rng.normal();
                    norm2 += v[j] * v[j];
                }
                double inv = 1.0 / std::sqrt(norm2);
                for (size_t j = 0; j < d_t; ++j) rows.data[i * d_t + j] = float(v[j] * inv);
            }
            if (max_abs_cosine(rows) < kMaxAbsCosine) {
                bank.rows_ = std::move(rows);
                break;
            }
        }
        return bank;
    }

    static TextBank load(const std::filesystem::path& dir) {
        auto manifest_path = dir / "manifest.json";
        std::ifstream in(manifest_path);
        if (!in) throw IoError("cannot open bank manifest: " + manifest_path.string());
        nlohmann::json j;
        try {
            in >> j;
        } catch (const std::exception& e) {
            throw IoError("bank manifest is not valid JSON: " + manifest_path.string() + ": " + e.what());
        }
        TextBank bank;
        bank.source_ = j.value("source", std::string("imported"));
        size_t d_t = j.at("d_t").get<size_t>();
        auto rows = read_ptx_file(dir / "embeddings.ptx");
        if (rows.ndim() != 2)
            throw ConfigError("bank tensor must be 2-d, got " + shape_str(rows.shape));
        const size_t c = rows.shape[0];
        for (auto& [name, idx] : j.at("classes").items()) {
            size_t i = idx.get<size_t>();
            if (i >= c)
                throw ConfigError("class '" + name + "' has index " + std::to_string(i) +
                                  " but the bank holds only " + std::to_string(c) + " rows");
            if (bank.index_.count(name)) throw ConfigError("duplicate class name: " + name);
            for (auto& [other, oi] : bank.index_)
                if (oi == i) throw ConfigError("class '" + name + "' reuses row " + std::to_string(i) +
                                               " already claimed by '" + other + "'");
            bank.index_[name] = i;
        }
        if (bank.index_.size() != c)
            throw ConfigError("bank manifest lists " + std::to_string(bank.index_.size()) +
                              " classes but the tensor holds " + std::to_string(c) + " rows");
        if (rows.shape[1] != d_t)
            throw ConfigError("bank manifest says d_t=" + std::to_string(d_t) + " but '" +
                              first_class_of(bank.index_) + "' and the other rows are " +
                              std::to_string(rows.shape[1]) + "-dimensional");
        // imported embeddings come in unnormalized; bring them onto the sphere
        for (size_t i = 0; i < c; ++i) {
            double norm2 = 0;
            for (size_t jx = 0; jx < d_t; ++jx) {
                float v = rows.data[i * d_t + jx];
                if (!std::isfinite(v))
                    throw ConfigError("non-finite value in embedding of class '" +
                                      class_at(bank.index_, i) + "'");
                norm2 += double(v) * double(v);
            }
            if (norm2 == 0)
                throw ConfigError("zero-length embedding for class '" + class_at(bank.index_, i) + "'");
            float inv = float(1.0 / std::sqrt(norm2));
            for (size_t jx = 0; jx < d_t; ++jx) rows.data[i * d_t + jx] *= inv;
        }
        bank.rows_ = std::move(rows);
        return bank;
    }

    void save(const std::filesystem::path& dir) const {
        std::filesystem::create_directories(dir);
        nlohmann::json j;
        j["d_t"] = dim();
        j["source"] = source_;
        j["classes"] = nlohmann::json::object();
        for (auto& [name, idx] : index_) j["classes"][name] = idx;
        std::ofstream out(dir / "manifest.json");
        if (!out) throw IoError("cannot write bank manifest in " + dir.string());
        out << j.dump(2) << "\n";
        write_ptx_file(dir / "embeddings.ptx", rows_);
    }

    size_t dim() const { return rows_.shape.empty() ? 0 : rows_.shape[1]; }
    size_t size() const { return index_.size(); }
    bool has(const std::string& name) const { return index_.count(name) > 0; }
    const std::map<std::string, size_t>& classes() const { return index_; }
    const Tensor<float>& rows() const { return rows_; }
    const std::string& source() const { return source_; }

    size_t index_of(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) {
            std::string known;
            for (auto& [k, v] : index_) known += (known.empty() ? "" : ", ") + k;
            throw ConfigError("unknown class '" + name + "' (bank has: " + known + ")");
        }
        return it->second;
    }

    // [1, d_t] row in the requested working precision, never grad-tracked
    template <typename T>
    TensorPtr<T> lookup(const std::string& name) const {
        size_t i = index_of(name);
        auto t = make_tensor<T>({1, dim()});
        for (size_t j = 0; j < dim(); ++j) t->data[j] = T(rows_.data[i * dim() + j]);
        t->name = "textbank." + name;
        return t;
    }

    // digest of the class map plus the f32 payload; folded into the frozen
    // fingerprint during training
    uint64_t fingerprint() const {
        uint64_t h = 0xcbf29ce484222325ull;
        for (auto& [name, idx] : index_) {
            h = fnv1a64(name, h);
            unsigned char ib[8];
            for (int b = 0; b < 8; ++b) ib[b] = (unsigned char)((uint64_t(idx) >> (8 * b)) & 0xff);
            h = fnv1a64(ib, 8, h);
        }
        for (float v : rows_.data) {
            uint32_t bits = std::bit_cast<uint32_t>(v);
            unsigned char b[4] = {(unsigned char)(bits & 0xff), (unsigned char)((bits >> 8) & 0xff),
                                  (unsigned char)((bits >> 16) & 0xff), (unsigned char)((bits >> 24) & 0xff)};
            h = fnv1a64(b, 4, h);
        }
        return h;
    }

    static double max_abs_cosine(const Tensor<float>& rows) {
        const size_t c = rows.shape[0], d = rows.shape[1];
        double worst = 0;
        for (size_t i = 0; i < c; ++i)
            for (size_t j = i + 1; j < c; ++j) {
                double dot = 0, ni = 0, nj = 0;
                for (size_t k = 0; k < d; ++k) {
                    dot += double(rows.data[i * d + k]) * double(rows.data[j * d + k]);
                    ni += double(rows.data[i * d + k]) * double(rows.data[i * d + k]);
                    nj += double(rows.data[j * d + k]) * double(rows.data[j * d + k]);
                }
                worst = std::max(worst, std::abs(dot) / std::sqrt(ni * nj));
            }
        return worst;
    }

  private:
    static std::string class_at(const std::map<std::string, size_t>& index, size_t i) {
        for (auto& [name, idx] : index)
            if (idx == i) return name;
        return "<row " + std::to_string(i) + ">";
    }
    static std::string first_class_of(const std::map<std::string, size_t>& index) {
        return index.empty() ? "<none>" : index.begin()->first;
    }

    std::map<std::string, size_t> index_;
    Tensor<float> rows_;
    std::string source_ = "synthetic-seeded";
};

}  // namespace ptx
