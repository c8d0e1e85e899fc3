#pragma once

#include "ptx/checkpoint.hpp"
#include "ptx/textbank.hpp"

namespace ptx {

struct TrainConfig {
    double lr = 3e-4;
    std::array<double, 2> betas = {0.9, 0.999};
    double eps = 1e-8;
    size_t epochs = 20;
    size_t batch_size = 1;
    uint64_t seed = 0;
    std::string variant = "parallel_text";
    size_t checkpoint_every = 0;  // steps; 0 saves only at the end

    void validate() const {
        if (!(lr > 0)) throw ConfigError("lr must be positive");
        if (!(eps > 0)) throw ConfigError("eps must be positive");
        if (!(betas[0] >= 0 && betas[0] < 1 && betas[1] >= 0 && betas[1] < 1))
            throw ConfigError("betas must lie in [0, 1)");
        if (epochs < 1) throw ConfigError("epochs must be >= 1");
        if (batch_size != 1) throw ConfigError("only batch_size 1 is supported");
        VariantSpec::from_name(variant);  // throws with the list of valid names
    }

    nlohmann::json to_json() const {
        return {{"lr", lr},         {"betas", betas},     {"eps", eps},
                {"epochs", epochs}, {"batch_size", batch_size}, {"seed", seed},
                {"variant", variant}, {"checkpoint_every", checkpoint_every}};
    }

    static TrainConfig from_json(const nlohmann::json& j) {
        static const std::set<std::string> known = {"lr",   "betas",      "eps",     "epochs",
                                                    "batch_size", "seed", "variant", "checkpoint_every"};
        for (auto it = j.begin(); it != j.end(); ++it)
            if (!known.count(it.key()))
                throw ConfigError("unknown train config key '" + it.key() + "'");
        TrainConfig c;
        try {
            c.lr = j.value("lr", c.lr);
            if (j.count("betas")) {
                c.betas[0] = j["betas"].at(0).get<double>();
                c.betas[1] = j["betas"].at(1).get<double>();
            }
            c.eps = j.value("eps", c.eps);
            c.epochs = j.value("epochs", c.epochs);
            c.batch_size = j.value("batch_size", c.batch_size);
            c.seed = j.value("seed", c.seed);
            c.variant = j.value("variant", c.variant);
            c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(std::string("bad train config: ") + e.what());
        }
        c.validate();
        return c;
    }
};

// Digest of everything that must not move during task training: the frozen
// parameter partition plus (when present) the class-embedding bank.
template <typename T>
uint64_t frozen_state_digest(const Model<T>& model, const TextBank* bank) {
    uint64_t h = model.params().frozen_fingerprint();
    if (bank) h = mix_seed(h, bank->fingerprint());
    return h;
}

namespace detail {

struct SampleRef {
    size_t scene, sample;
};

inline std::vector<SampleRef> flatten_samples(const Dataset& ds) {
    std::vector<SampleRef> out;
    for (size_t i = 0; i < ds.scenes.size(); ++i)
        for (size_t k = 0; k < ds.scenes[i].samples.size(); ++k) out.push_back({i, k});
    if (out.empty()) throw ConfigError("dataset has no prompt samples to train on");
    return out;
}

inline std::vector<size_t> epoch_order(size_t n, uint64_t seed, size_t epoch) {
    std::vector<size_t> order(n);
    std::iota(order.begin(), order.end(), size_t(0));
    Rng rng(mix_seed(seed, 0x65706f63 + epoch));
    rng.shuffle(order);
    return order;
}

inline void append_loss_row(std::ofstream& csv, size_t step, double loss) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%zu,%.17g\n", step, loss);
    csv << buf;
}

}  // namespace detail

struct TrainResult {
    std::vector<double> losses;
    size_t final_step = 0;
    std::filesystem::path checkpoint_dir;
    std::filesystem::path loss_csv;
};

// One optimizer step per prompt sample, epochs over a seeded reshuffle of the
// whole set. `start_step` > 0 continues a resumed state: the shuffle for any
// epoch depends only on (seed, epoch), so a resumed run replays the exact
// sample order the straight run would have seen.
template <typename T>
TrainResult train_model(Model<T>& model, AdamState<T>& opt, const Dataset& data, const TextBank* bank,
                        const TrainConfig& cfg, const std::filesystem::path& out_dir,
                        size_t start_step = 0, size_t stop_after_steps = 0) {
    cfg.validate();
    if (model.variant().name != cfg.variant)
        throw ConfigError("model was built as '" + model.variant().name + "' but the config says '" +
                          cfg.variant + "'");
    if (model.variant().uses_text() && !bank)
        throw ConfigError("variant '" + cfg.variant + "' needs a class-embedding bank");
    if (model.params().trainable().empty())
        throw ConfigError("variant '" + cfg.variant + "' has no trainable parameters");

    auto samples = detail::flatten_samples(data);
    const size_t n = samples.size();
    const size_t total = cfg.epochs * n;
    if (start_step > total) throw ConfigError("resume step is past the end of this run");

    std::filesystem::create_directories(out_dir);
    TrainResult res;
    res.checkpoint_dir = out_dir / "checkpoint";
    res.loss_csv = out_dir / "loss.csv";

    std::ofstream csv;
    if (start_step == 0) {
        csv.open(res.loss_csv, std::ios::trunc);
        csv << "step,loss\n";
    } else {
        if (!std::filesystem::exists(res.loss_csv))
            throw IoError("resume expects an existing " + res.loss_csv.string());
        csv.open(res.loss_csv, std::ios::app);
    }
    if (!csv) throw IoError("cannot write " + res.loss_csv.string());

    const uint64_t digest = frozen_state_digest(model, bank);
    size_t last_saved = 0;
    auto save = [&](size_t step) {
        CheckpointMeta meta;
        meta.variant = cfg.variant;
        meta.config = model.config();
        meta.precision = precision_name<T>();
        meta.seed = cfg.seed;
        meta.step = step;
        meta.epoch = step / n;
        meta.frozen_fingerprint = digest;
        save_checkpoint(res.checkpoint_dir, model, meta, &opt);
        last_saved = step;
    };

    std::vector<size_t> order;
    size_t order_epoch = size_t(-1);
    for (size_t step = start_step; step < total; ++step) {
        const size_t epoch = step / n, idx = step % n;
        if (epoch != order_epoch) {
            order = detail::epoch_order(n, cfg.seed, epoch);
            order_epoch = epoch;
        }
        const auto& ref = samples[order[idx]];
        const Scene& scene = data.scenes[ref.scene];
        const PromptSample& sm = scene.samples[ref.sample];

        auto img = image_input<T>(scene);
        auto y = target_for<T>(scene, sm, model.config());
        TensorPtr<T> text = model.variant().uses_text() ? bank->template lookup<T>(sm.class_name) : nullptr;

        model.params().zero_grad();
        Tape<T> tape;
        auto loss = bce_loss(&tape, model.forward(&tape, img, sm.points, text), y);
        const double lval = double(loss->data[0]);
        if (!std::isfinite(lval)) {
            std::string kept = last_saved > 0 ? " (checkpoint from step " + std::to_string(last_saved) +
                                                    " kept in " + res.checkpoint_dir.string() + ")"
                                              : "";
            throw NumericError("loss is not finite at step " + std::to_string(step + 1) + kept);
        }
        tape.backward(loss);
        adam_step(model.params(), opt, cfg.lr, cfg.betas[0], cfg.betas[1], cfg.eps);

        res.losses.push_back(lval);
        detail::append_loss_row(csv, step + 1, lval);
        res.final_step = step + 1;

        if (cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0) save(step + 1);
        if (stop_after_steps > 0 && step + 1 >= stop_after_steps && step + 1 < total) {
            csv.flush();
            if (cfg.checkpoint_every == 0 || (step + 1) % cfg.checkpoint_every != 0) save(step + 1);
            return res;
        }
    }
    csv.flush();
    save(total);
    res.final_step = total;
    return res;
}

// Rebuilds the model and optimizer a checkpoint describes, refusing any drift
// between the checkpoint's provenance and the requested run.
template <typename T>
std::unique_ptr<Model<T>> resume_model(const CheckpointData& ck, const TrainConfig& cfg,
                                       const ModelConfig& mcfg, AdamState<T>& opt) {
    std::string diff;
    if (ck.meta.variant != cfg.variant)
        diff += "\n  variant: checkpoint=" + ck.meta.variant + " run=" + cfg.variant;
    if (!(ck.meta.config == mcfg))
        diff += "\n  model: checkpoint=" + ck.meta.config.to_json().dump() + " run=" + mcfg.to_json().dump();
    if (ck.meta.precision != precision_name<T>())
        diff += "\n  precision: checkpoint=" + ck.meta.precision + " run=" + std::string(precision_name<T>());
    if (ck.meta.seed != cfg.seed)
        diff += "\n  seed: checkpoint=" + std::to_string(ck.meta.seed) + " run=" + std::to_string(cfg.seed);
    if (!diff.empty()) throw ConfigError("checkpoint does not match this run:" + diff);

    auto model = std::make_unique<Model<T>>(mcfg, VariantSpec::from_name(cfg.variant), cfg.seed);
    load_into_model(ck, *model, /*strict=*/true);
    load_adam(ck, opt);
    return model;
}

// ---------------------------------------------------------------------------
// Warm-up: the "pretrained backbone" stand-in. A fresh model with everything
// trainable runs a short full-model fit on easy single-instance scenes, then
// the result is cached on disk. Every variant of a given seed starts from
// this same state, so cross-variant deltas measure the adapters, not their
// starting points.
// ---------------------------------------------------------------------------

inline constexpr size_t kWarmupSteps = 300;
inline constexpr double kWarmupLr = 1e-3;

inline SceneSpec warmup_scene_spec(const ModelConfig& cfg, const std::vector<std::string>& classes) {
    SceneSpec s;
    s.image_size = cfg.image_size;
    s.classes = classes;
    s.instances_per_class_min = 1;
    s.instances_per_class_max = 1;
    // the gray palette keeps the backbone off color shortcuts that would not
    // transfer; lone instances are easy to segment regardless
    s.palette = "ambiguous";
    s.prompt_modes = {"interior"};
    s.single_class_per_scene = true;
    // shapes scaled to the canvas so small test models get placeable scenes
    s.radius_max = std::min<size_t>(10, cfg.image_size / 4);
    s.radius_min = std::min<size_t>(6, s.radius_max);
    return s;
}

template <typename T>
std::filesystem::path warmup_checkpoint(const ModelConfig& cfg, const std::vector<std::string>& classes,
                                        uint64_t seed, const std::filesystem::path& cache_dir,
                                        size_t steps = kWarmupSteps) {
    uint64_t key = fnv1a64(cfg.to_json().dump());
    for (auto& c : classes) key = fnv1a64(c.data(), c.size(), key);
    key = mix_seed(key, seed);
    key = mix_seed(key, steps);
    auto dir = cache_dir / ("warmup_" + to_hex(key));
    if (std::filesystem::exists(dir / "manifest.json")) return dir;

    Model<T> model(cfg, VariantSpec::from_name("none"), seed, /*freeze_backbone=*/false);
    AdamState<T> opt;
    auto spec = warmup_scene_spec(cfg, classes);
    for (size_t i = 0; i < steps; ++i) {
        auto scene = generate_scene(spec, mix_seed(seed, 0x5741524d + i));
        const auto& sm = scene.samples.at(0);
        auto img = image_input<T>(scene);
        auto y = target_for<T>(scene, sm, cfg);
        model.params().zero_grad();
        Tape<T> tape;
        auto loss = bce_loss(&tape, model.forward(&tape, img, sm.points, nullptr), y);
        if (!std::isfinite(double(loss->data[0])))
            throw NumericError("warm-up loss is not finite at step " + std::to_string(i + 1));
        tape.backward(loss);
        adam_step(model.params(), opt, kWarmupLr, 0.9, 0.999, 1e-8);
    }
    CheckpointMeta meta;
    meta.variant = "none";
    meta.config = cfg;
    meta.precision = precision_name<T>();
    meta.seed = seed;
    meta.step = steps;
    meta.epoch = 0;
    meta.frozen_fingerprint = 0;  // nothing frozen during warm-up
    save_checkpoint(dir, model, meta);
    return dir;
}

// Task model: requested variant, frozen backbone, weights carried over from
// the shared warm-up checkpoint; adapters and injections keep their fresh
// (identity) initialization.
template <typename T>
std::unique_ptr<Model<T>> build_task_model(const ModelConfig& cfg, const std::string& variant,
                                           uint64_t seed, const std::filesystem::path& warmup_dir) {
    auto model = std::make_unique<Model<T>>(cfg, VariantSpec::from_name(variant), seed);
    auto ck = load_checkpoint(warmup_dir);
    if (!(ck.meta.config == cfg))
        throw ConfigError("warm-up checkpoint was built for a different model configuration");
    load_into_model(ck, *model, /*strict=*/false);
    return model;
}

}  // namespace ptx
