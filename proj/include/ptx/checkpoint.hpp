#pragma once

#include "json.hpp"
#include "ptx/model.hpp"

namespace ptx {

// ---------------------------------------------------------------------------
// Adam over the trainable subset. Moment buffers are keyed by tensor name so
// checkpoints can restore them independent of construction order.
// ---------------------------------------------------------------------------

template <typename T>
struct AdamState {
    size_t t = 0;
    std::map<std::string, std::pair<std::vector<T>, std::vector<T>>> moments;  // name -> (m, v)

    void ensure(const ParamSet<T>& ps) {
        for (auto& p : ps.trainable()) {
            auto& mv = moments[p->name];
            if (mv.first.size() != p->numel()) {
                mv.first.assign(p->numel(), T(0));
                mv.second.assign(p->numel(), T(0));
            }
        }
    }
};

template <typename T>
void adam_step(ParamSet<T>& ps, AdamState<T>& st, double lr, double beta1, double beta2, double eps) {
    st.ensure(ps);
    ++st.t;
    const double c1 = 1.0 - std::pow(beta1, double(st.t));
    const double c2 = 1.0 - std::pow(beta2, double(st.t));
    for (auto& p : ps.trainable()) {
        auto& [m, v] = st.moments[p->name];
        for (size_t i = 0; i < p->numel(); ++i) {
            double g = double(p->grad[i]);
            if (!std::isfinite(g))
                throw NumericError("non-finite gradient in '" + p->name + "' at optimizer step " +
                                   std::to_string(st.t));
            double mi = beta1 * double(m[i]) + (1.0 - beta1) * g;
            double vi = beta2 * double(v[i]) + (1.0 - beta2) * g * g;
            m[i] = T(mi);
            v[i] = T(vi);
            p->data[i] = T(double(p->data[i]) - lr * (mi / c1) / (std::sqrt(vi / c2) + eps));
        }
    }
}

// ---------------------------------------------------------------------------
// Checkpoint directory: manifest.json plus one PTX1 file per tensor (and per
// optimizer moment). Writes go to a sibling .tmp directory that replaces the
// target only once complete, so an interrupted save never clobbers the last
// good checkpoint.
// ---------------------------------------------------------------------------

struct CheckpointMeta {
    std::string variant;
    ModelConfig config;
    std::string precision = "f32";
    uint64_t seed = 0;
    size_t step = 0;
    size_t epoch = 0;
    uint64_t frozen_fingerprint = 0;
};

template <typename T>
void save_checkpoint(const std::filesystem::path& dir, const Model<T>& model, const CheckpointMeta& meta,
                     const AdamState<T>* opt = nullptr) {
    namespace fs = std::filesystem;
    fs::path tmp = dir;
    tmp += ".tmp";
    fs::remove_all(tmp);
    fs::create_directories(tmp);

    nlohmann::json man;
    man["format"] = "ptx-checkpoint";
    man["version"] = kVersion;
    man["variant"] = meta.variant;
    man["model"] = meta.config.to_json();
    man["precision"] = meta.precision;
    man["seed"] = meta.seed;
    man["step"] = meta.step;
    man["epoch"] = meta.epoch;
    man["frozen_fingerprint"] = to_hex(meta.frozen_fingerprint);

    char buf[32];
    size_t idx = 0;
    man["tensors"] = nlohmann::json::object();
    for (auto& [name, t] : model.params().all()) {
        std::snprintf(buf, sizeof(buf), "t_%04zu.ptx", idx++);
        write_ptx_file(tmp / buf, *t);
        man["tensors"][name] = {{"file", buf},
                                {"frozen", model.params().is_frozen(name)},
                                {"shape", t->shape}};
    }
    if (opt) {
        nlohmann::json moments = nlohmann::json::object();
        idx = 0;
        for (auto& [name, mv] : opt->moments) {
            Tensor<T> m({mv.first.size()}), v({mv.second.size()});
            m.data = mv.first;
            v.data = mv.second;
            char mb[32], vb[32];
            std::snprintf(mb, sizeof(mb), "m_%04zu.ptx", idx);
            std::snprintf(vb, sizeof(vb), "v_%04zu.ptx", idx);
            ++idx;
            write_ptx_file(tmp / mb, m);
            write_ptx_file(tmp / vb, v);
            moments[name] = {{"m", mb}, {"v", vb}};
        }
        man["adam"] = {{"t", opt->t}, {"moments", moments}};
    }
    {
        std::ofstream out(tmp / "manifest.json");
        if (!out) throw IoError("cannot write " + (tmp / "manifest.json").string());
        out << man.dump(2) << "\n";
    }
    fs::remove_all(dir);
    fs::rename(tmp, dir);
}

struct CheckpointData {
    CheckpointMeta meta;
    std::map<std::string, Tensor<float>> tensors;
    std::map<std::string, bool> frozen;
    bool has_adam = false;
    size_t adam_t = 0;
    std::map<std::string, std::pair<Tensor<float>, Tensor<float>>> adam_moments;
};

inline CheckpointData load_checkpoint(const std::filesystem::path& dir) {
    std::ifstream in(dir / "manifest.json");
    if (!in) throw IoError("cannot open checkpoint manifest " + (dir / "manifest.json").string());
    nlohmann::json man;
    try {
        in >> man;
    } catch (const nlohmann::json::exception& e) {
        throw IoError("bad checkpoint manifest " + (dir / "manifest.json").string() + ": " + e.what());
    }
    CheckpointData ck;
    try {
        if (man.at("format").get<std::string>() != "ptx-checkpoint")
            throw IoError("not a checkpoint directory: " + dir.string());
        ck.meta.variant = man.at("variant").get<std::string>();
        ck.meta.config = ModelConfig::from_json(man.at("model"));
        ck.meta.precision = man.at("precision").get<std::string>();
        ck.meta.seed = man.at("seed").get<uint64_t>();
        ck.meta.step = man.at("step").get<size_t>();
        ck.meta.epoch = man.at("epoch").get<size_t>();
        ck.meta.frozen_fingerprint = std::stoull(man.at("frozen_fingerprint").get<std::string>(), nullptr, 16);
        for (auto it = man.at("tensors").begin(); it != man.at("tensors").end(); ++it) {
            auto t = read_ptx_file(dir / it.value().at("file").get<std::string>());
            auto shape = it.value().at("shape").get<std::vector<size_t>>();
            if (t.shape != shape)
                throw IoError("checkpoint tensor '" + it.key() + "' has shape " + shape_str(t.shape) +
                              " on disk but " + shape_str(shape) + " in the manifest");
            ck.frozen[it.key()] = it.value().at("frozen").get<bool>();
            ck.tensors.emplace(it.key(), std::move(t));
        }
        if (man.count("adam")) {
            ck.has_adam = true;
            ck.adam_t = man["adam"].at("t").get<size_t>();
            for (auto it = man["adam"].at("moments").begin(); it != man["adam"].at("moments").end(); ++it) {
                auto m = read_ptx_file(dir / it.value().at("m").get<std::string>());
                auto v = read_ptx_file(dir / it.value().at("v").get<std::string>());
                ck.adam_moments.emplace(it.key(), std::make_pair(std::move(m), std::move(v)));
            }
        }
    } catch (const nlohmann::json::exception& e) {
        throw IoError("bad checkpoint manifest " + (dir / "manifest.json").string() + ": " + e.what());
    }
    return ck;
}

// Strict loads restore a training state: the name sets must match exactly and
// the frozen split must agree. Partial loads seed a new model from whatever
// overlaps (used to carry the warmed-up backbone into each variant).
template <typename T>
void load_into_model(const CheckpointData& ck, Model<T>& model, bool strict) {
    if (strict) {
        std::string diff;
        for (auto& [name, t] : model.params().all())
            if (!ck.tensors.count(name)) diff += "\n  missing from checkpoint: " + name;
        for (auto& [name, t] : ck.tensors)
            if (!model.params().all().count(name)) diff += "\n  unexpected in checkpoint: " + name;
        if (diff.empty())
            for (auto& [name, t] : model.params().all())
                if (ck.frozen.at(name) != model.params().is_frozen(name))
                    diff += "\n  frozen flag differs: " + name;
        if (!diff.empty()) throw ConfigError("checkpoint does not match the model:" + diff);
    }
    for (auto& [name, dst] : model.params().all()) {
        auto it = ck.tensors.find(name);
        if (it == ck.tensors.end()) continue;
        if (it->second.shape != dst->shape)
            throw ConfigError("checkpoint tensor '" + name + "' is " + shape_str(it->second.shape) +
                              " but the model wants " + shape_str(dst->shape));
        for (size_t i = 0; i < dst->numel(); ++i) dst->data[i] = T(it->second.data[i]);
    }
}

template <typename T>
void load_adam(const CheckpointData& ck, AdamState<T>& st) {
    if (!ck.has_adam) throw ConfigError("checkpoint has no optimizer state to resume from");
    st.t = ck.adam_t;
    st.moments.clear();
    for (auto& [name, mv] : ck.adam_moments) {
        auto& slot = st.moments[name];
        slot.first.resize(mv.first.numel());
        slot.second.resize(mv.second.numel());
        for (size_t i = 0; i < mv.first.numel(); ++i) slot.first[i] = T(mv.first.data[i]);
        for (size_t i = 0; i < mv.second.numel(); ++i) slot.second[i] = T(mv.second.data[i]);
    }
}

}  // namespace ptx
