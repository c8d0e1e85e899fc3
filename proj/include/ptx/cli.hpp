#pragma once

#include <chrono>
#include <cstdlib>
#include <iostream>

#include "CLI11.hpp"
#include "ptx/ablation.hpp"

namespace ptx::cli {

inline Precision env_precision() {
    const char* v = std::getenv("PTX_PRECISION");
    return v ? parse_precision(v) : Precision::f32;
}

inline nlohmann::json read_json_file(const std::filesystem::path& p) {
    std::ifstream in(p);
    if (!in) throw IoError("cannot open " + p.string());
    try {
        nlohmann::json j;
        in >> j;
        return j;
    } catch (const nlohmann::json::exception& e) {
        throw IoError(p.string() + " is not valid JSON: " + e.what());
    }
}

// Every command that produces an output directory drops a manifest there
// describing the run: the exact invocation, the fully resolved configuration,
// and where the artifacts went. Wall-clock duration is informational and the
// only field that varies between identical runs.
inline void write_run_manifest(const std::filesystem::path& dir, const std::string& command,
                               const std::vector<std::string>& argv, const nlohmann::json& config,
                               const nlohmann::json& outputs, double duration_seconds) {
    nlohmann::json j;
    j["command"] = command;
    j["argv"] = argv;
    j["version"] = kVersion;
    j["config"] = config;
    j["outputs"] = outputs;
    j["duration_seconds"] = duration_seconds;
    std::filesystem::create_directories(dir);
    auto final_path = dir / "run_manifest.json";
    auto tmp = final_path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp);
        if (!out) throw IoError("cannot write " + tmp.string());
        out << j.dump(2) << "\n";
    }
    std::filesystem::rename(tmp, final_path);
}

class Stopwatch {
  public:
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    }

  private:
    std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

// ---------------------------------------------------------------------------
// gen: synthesize a scene dataset (and optionally the class-embedding bank
// that goes with it). The spec is validated before anything touches disk.
// ---------------------------------------------------------------------------

struct GenOpts {
    std::filesystem::path spec;
    std::filesystem::path out;
    uint64_t seed = 0;
    size_t count = 0;
    std::filesystem::path bank_out;
    size_t bank_dim = 64;
};

inline int cmd_gen(const GenOpts& o, const std::vector<std::string>& argv) {
    Stopwatch clock;
    auto spec = SceneSpec::from_json(read_json_file(o.spec));
    spec.validate();
    if (o.count == 0) throw ConfigError("--count must be at least 1");

    auto ds = generate_dataset(spec, o.seed, o.count);
    write_dataset(ds, o.out);

    std::map<std::string, size_t> instances;
    size_t samples = 0;
    for (auto& sc : ds.scenes) {
        for (auto& inst : sc.instances) ++instances[inst.class_name];
        samples += sc.samples.size();
    }
    std::cout << "wrote " << ds.scenes.size() << " scenes (" << samples << " prompt samples) to "
              << o.out.string() << "\n";
    for (auto& [name, n] : instances) std::cout << "  " << name << ": " << n << " instances\n";

    nlohmann::json outputs = {{"scenes", (o.out / "scenes.jsonl").string()}, {"count", ds.scenes.size()}};
    if (!o.bank_out.empty()) {
        auto bank = TextBank::build_synthetic(spec.classes, o.bank_dim, o.seed);
        bank.save(o.bank_out);
        outputs["bank"] = o.bank_out.string();
        std::cout << "wrote a " << spec.classes.size() << "-class embedding bank (d_t=" << o.bank_dim
                  << ") to " << o.bank_out.string() << "\n";
    }
    write_run_manifest(o.out, "gen", argv, {{"spec", spec.to_json()}, {"seed", o.seed}, {"count", o.count}},
                       outputs, clock.seconds());
    return 0;
}

// ---------------------------------------------------------------------------
// train: fit one variant on a dataset directory.
// ---------------------------------------------------------------------------

struct TrainOpts {
    std::filesystem::path data;
    std::filesystem::path out;
    std::filesystem::path config;        // TrainConfig json, defaults if empty
    std::filesystem::path model_config;  // ModelConfig json, defaults if empty
    std::string variant;                 // overrides the config when set
    int64_t seed = -1;                   // overrides the config when >= 0
    std::filesystem::path bank;
    std::filesystem::path resume;
    std::filesystem::path warmup;  // warm-start cache directory
};

template <typename T>
int cmd_train(const TrainOpts& o, const std::vector<std::string>& argv) {
    Stopwatch clock;
    TrainConfig cfg = o.config.empty() ? TrainConfig{} : TrainConfig::from_json(read_json_file(o.config));
    if (!o.variant.empty()) cfg.variant = o.variant;
    if (o.seed >= 0) cfg.seed = uint64_t(o.seed);
    cfg.validate();

    auto vs = VariantSpec::from_name(cfg.variant);
    if (cfg.variant == "none")
        throw ConfigError("variant 'none' trains nothing; it is the frozen evaluation baseline");
    if (vs.uses_text() && o.bank.empty())
        throw ConfigError("variant '" + cfg.variant + "' needs --bank");
    if (!vs.uses_text() && !o.bank.empty())
        throw ConfigError("variant '" + cfg.variant + "' does not take a text bank; drop --bank");
    if (!o.resume.empty() && !o.warmup.empty())
        throw ConfigError("--resume and --warmup are mutually exclusive");

    auto data = read_dataset(o.data);
    TextBank bank;
    const TextBank* bank_ptr = nullptr;
    if (!o.bank.empty()) {
        bank = TextBank::load(o.bank);
        for (auto& c : data.spec.classes)
            if (!bank.classes().count(c))
                throw ConfigError("bank at " + o.bank.string() + " has no embedding for class '" + c + "'");
        bank_ptr = &bank;
    }

    ModelConfig mcfg =
        o.model_config.empty() ? ModelConfig{} : ModelConfig::from_json(read_json_file(o.model_config));
    if (mcfg.image_size != data.spec.image_size)
        throw ConfigError("model expects " + std::to_string(mcfg.image_size) + "px images but the dataset is " +
                          std::to_string(data.spec.image_size) + "px");

    std::unique_ptr<Model<T>> model;
    AdamState<T> opt;
    size_t start_step = 0;
    if (!o.resume.empty()) {
        auto ck = load_checkpoint(o.resume);
        if (o.model_config.empty()) mcfg = ck.meta.config;  // adopt the checkpoint's geometry
        model = resume_model(ck, cfg, mcfg, opt);
        start_step = ck.meta.step;
        std::cout << "resuming from step " << start_step << "\n";
    } else if (!o.warmup.empty()) {
        auto wdir = warmup_checkpoint<T>(mcfg, data.spec.classes, cfg.seed, o.warmup);
        model = build_task_model<T>(mcfg, cfg.variant, cfg.seed, wdir);
        std::cout << "starting from the warmed-up backbone at " << wdir.string() << "\n";
    } else {
        model = std::make_unique<Model<T>>(mcfg, vs, cfg.seed);
    }

    auto res = train_model(*model, opt, data, bank_ptr, cfg, o.out, start_step);
    std::cout << "trained to step " << res.final_step;
    if (!res.losses.empty()) {
        char buf[48];
        std::snprintf(buf, sizeof(buf), "%.6f", res.losses.back());
        std::cout << ", final loss " << buf;
    }
    std::cout << "\ncheckpoint: " << res.checkpoint_dir.string() << "\nloss curve: " << res.loss_csv.string()
              << "\n";

    write_run_manifest(o.out, "train", argv,
                       {{"train", cfg.to_json()}, {"model", mcfg.to_json()}, {"seed", cfg.seed}},
                       {{"checkpoint", res.checkpoint_dir.string()}, {"loss_csv", res.loss_csv.string()}},
                       clock.seconds());
    return 0;
}

// ---------------------------------------------------------------------------
// eval: score a checkpoint on a dataset directory.
// ---------------------------------------------------------------------------

struct EvalOpts {
    std::filesystem::path data;
    std::filesystem::path checkpoint;
    std::filesystem::path bank;
    std::filesystem::path out;  // optional: writes eval.json + manifest
    std::string mode;
    double threshold = 0.5;
};

template <typename T>
int cmd_eval(const EvalOpts& o, const std::vector<std::string>& argv) {
    Stopwatch clock;
    if (!o.mode.empty() && o.mode != "interior" && o.mode != "edge" && o.mode != "mixed" &&
        o.mode != "partial_instances")
        throw ConfigError("unknown prompt mode '" + o.mode + "'");
    auto ck = load_checkpoint(o.checkpoint);
    if (ck.meta.precision != precision_name<T>())
        throw ConfigError("checkpoint was written at " + ck.meta.precision + " but PTX_PRECISION selects " +
                          precision_name<T>());
    auto vs = VariantSpec::from_name(ck.meta.variant);
    if (vs.uses_text() && o.bank.empty())
        throw ConfigError("variant '" + ck.meta.variant + "' needs --bank");
    if (!vs.uses_text() && !o.bank.empty())
        throw ConfigError("variant '" + ck.meta.variant + "' does not take a text bank; drop --bank");

    Model<T> model(ck.meta.config, vs, ck.meta.seed);
    load_into_model(ck, model, /*strict=*/true);
    auto data = read_dataset(o.data);
    TextBank bank;
    const TextBank* bank_ptr = nullptr;
    if (!o.bank.empty()) {
        bank = TextBank::load(o.bank);
        bank_ptr = &bank;
    }

    auto res = evaluate(model, data, bank_ptr, o.threshold, o.mode);
    auto rec = partial_recall(model, data, bank_ptr, o.threshold);

    char buf[160];
    std::snprintf(buf, sizeof(buf), "variant %s, %zu scenes, %zu samples (%zu skipped)\n",
                  ck.meta.variant.c_str(), data.scenes.size(), res.samples, res.skipped);
    std::cout << buf;
    std::snprintf(buf, sizeof(buf), "mIoU %.2f   MAE %.4f\n", res.miou, res.mae);
    std::cout << buf;
    if (rec.samples + rec.skipped > 0) {
        std::snprintf(buf, sizeof(buf),
                      "unprompted-instance recall %.3f over %zu samples (%zu without unprompted area)\n",
                      rec.mean_recall, rec.samples, rec.skipped);
        std::cout << buf;
    }

    if (!o.out.empty()) {
        nlohmann::json j = {{"miou", res.miou},
                            {"mae", res.mae},
                            {"samples", res.samples},
                            {"skipped", res.skipped},
                            {"recall", rec.mean_recall},
                            {"recall_samples", rec.samples},
                            {"recall_skipped", rec.skipped},
                            {"threshold", o.threshold},
                            {"mode", o.mode}};
        std::filesystem::create_directories(o.out);
        std::ofstream out(o.out / "eval.json");
        if (!out) throw IoError("cannot write " + (o.out / "eval.json").string());
        out << j.dump(2) << "\n";
        write_run_manifest(o.out, "eval", argv,
                           {{"checkpoint", o.checkpoint.string()},
                            {"variant", ck.meta.variant},
                            {"threshold", o.threshold},
                            {"mode", o.mode}},
                           {{"eval", (o.out / "eval.json").string()}}, clock.seconds());
    }
    return 0;
}

// ---------------------------------------------------------------------------
// ablate: run one of the comparison studies end to end.
// ---------------------------------------------------------------------------

struct AblateOpts {
    std::string study;
    std::filesystem::path work;
    std::filesystem::path out;
    size_t train_scenes = 0;  // 0 keeps the preset
    size_t test_scenes = 0;
    size_t epochs = 0;
    std::vector<uint64_t> seeds;
    uint64_t data_seed = 0;
    bool small = false;
};

// The smoke preset: the same tiny geometry the unit tests exercise, for
// wiring checks in seconds instead of hours.
inline BenchmarkSetup small_benchmark(std::filesystem::path work) {
    auto b = BenchmarkSetup::standard(std::move(work));
    b.model.image_size = 32;
    b.model.patch_size = 4;
    b.model.embed_dim = 8;
    b.model.depth = 2;
    b.model.heads = 2;
    b.model.bottleneck = 4;
    b.model.text_dim = 8;
    b.model.decoder_dim = 8;
    b.model.mlp_hidden = 16;
    b.scene.image_size = 32;
    b.scene.radius_min = 4;
    b.scene.radius_max = 6;
    b.scene.instances_per_class_min = 1;
    b.scene.instances_per_class_max = 2;
    b.scene.points_per_prompt = 3;
    b.train_scenes = 6;
    b.test_scenes = 3;
    b.train.epochs = 1;
    b.seeds = {1};
    return b;
}

template <typename T>
int cmd_ablate(const AblateOpts& o, const std::vector<std::string>& argv) {
    Stopwatch clock;
    auto b = o.small ? small_benchmark(o.work) : BenchmarkSetup::standard(o.work);
    if (o.train_scenes) b.train_scenes = o.train_scenes;
    if (o.test_scenes) b.test_scenes = o.test_scenes;
    if (o.epochs) b.train.epochs = o.epochs;
    if (!o.seeds.empty()) b.seeds = o.seeds;
    if (o.data_seed) b.data_seed = o.data_seed;

    std::string text;
    nlohmann::json json;
    if (o.study == "table1") {
        auto rep = run_table1<T>(b);
        text = render_text(rep);
        json = to_json(rep);
    } else if (o.study == "injection") {
        auto rep = run_injection<T>(b);
        text = render_text(rep);
        json = to_json(rep);
    } else if (o.study == "placement") {
        auto rep = run_placement<T>(b);
        text = render_text(rep);
        json = to_json(rep);
    } else if (o.study == "categories") {
        auto rep = run_categories<T>(b);
        text = render_text(rep);
        json = to_json(rep);
    } else {
        throw ConfigError("unknown study '" + o.study +
                          "' (expected table1, injection, placement, or categories)");
    }

    std::cout << text;
    write_report_files(o.out, o.study, text, json);
    write_run_manifest(o.out, "ablate", argv, {{"study", o.study}, {"setup", b.to_json()}},
                       {{"text", (o.out / (o.study + ".txt")).string()},
                        {"json", (o.out / (o.study + ".json")).string()}},
                       clock.seconds());
    return 0;
}

// ---------------------------------------------------------------------------
// gradcheck: central-difference audit of the full forward pass. Always runs
// in f64; the difference quotient is meaningless at f32.
// ---------------------------------------------------------------------------

struct GradcheckOpts {
    uint64_t seed = 5;
    size_t coords = 8;
    std::string variant = "parallel_text";
    double tolerance = 1e-4;
    bool full = false;  // default geometry instead of the tiny one
};

inline int cmd_gradcheck(const GradcheckOpts& o) {
    ModelConfig cfg;
    if (!o.full) {
        cfg.image_size = 32;
        cfg.patch_size = 4;
        cfg.embed_dim = 8;
        cfg.depth = 2;
        cfg.heads = 2;
        cfg.bottleneck = 4;
        cfg.text_dim = 8;
        cfg.decoder_dim = 8;
        cfg.mlp_hidden = 16;
    }
    auto vs = VariantSpec::from_name(o.variant);
    Model<double> model(cfg, vs, o.seed);
    // zero-initialized projections hide their inputs from the loss; audit a
    // model that has moved off the identity point
    for (auto& t : model.params().trainable()) fill_uniform(*t, mix_seed(o.seed, 0x6763726b), 0.3);

    SceneSpec spec;
    spec.image_size = cfg.image_size;
    spec.classes = {"disk", "square"};
    spec.instances_per_class_min = 1;
    spec.instances_per_class_max = 1;
    spec.radius_min = 4;
    spec.radius_max = std::min<size_t>(6, cfg.image_size / 4);
    spec.points_per_prompt = 3;
    auto scene = generate_scene(spec, mix_seed(o.seed, 0x7363));
    const auto& sm = scene.samples.front();

    auto img = image_input<double>(scene);
    auto y = target_for<double>(scene, sm, cfg);
    TensorPtr<double> text;
    if (vs.uses_text()) {
        auto bank = TextBank::build_synthetic(spec.classes, cfg.text_dim, o.seed);
        text = bank.lookup<double>(sm.class_name);
    }

    auto f = [&](Tape<double>* tape) {
        return bce_loss(tape, model.forward(tape, img, sm.points, text), y);
    };
    auto rep = grad_check(f, model.params().trainable(), o.seed, o.coords);

    char buf[200];
    std::snprintf(buf, sizeof(buf), "checked %zu coordinates across %zu tensors\n", rep.coords_checked,
                  model.params().trainable().size());
    std::cout << buf;
    std::snprintf(buf, sizeof(buf), "max rel err %.3e at %s[%zu] (analytic %.6e, numeric %.6e)\n",
                  rep.max_rel_err, rep.worst_tensor.c_str(), rep.worst_index, rep.worst_analytic,
                  rep.worst_numeric);
    std::cout << buf;
    if (rep.max_rel_err > o.tolerance) {
        std::snprintf(buf, sizeof(buf), "gradient check failed: %.3e exceeds %.1e", rep.max_rel_err,
                      o.tolerance);
        throw NumericError(buf);
    }
    std::cout << "gradient check passed\n";
    return 0;
}

// ---------------------------------------------------------------------------
// params: the parameter budget of a variant.
// ---------------------------------------------------------------------------

struct ParamsOpts {
    std::string variant = "parallel_text";
    std::filesystem::path model_config;
    bool tensors = false;
};

inline int cmd_params(const ParamsOpts& o) {
    ModelConfig cfg =
        o.model_config.empty() ? ModelConfig{} : ModelConfig::from_json(read_json_file(o.model_config));
    Model<float> model(cfg, VariantSpec::from_name(o.variant), 0);
    const auto& ps = model.params();

    size_t adapters = 0, decoder = 0, inject = 0;
    for (auto& [name, t] : ps.all()) {
        if (ps.is_frozen(name)) continue;
        if (name.find("_adapter.") != std::string::npos) adapters += t->numel();
        else if (name.find(".w_text") != std::string::npos) inject += t->numel();
        else decoder += t->numel();
    }

    char buf[120];
    std::cout << "variant " << o.variant << "\n";
    std::snprintf(buf, sizeof(buf), "  total      %10zu\n", ps.total_elements());
    std::cout << buf;
    std::snprintf(buf, sizeof(buf), "  frozen     %10zu\n", ps.total_elements() - ps.trainable_elements());
    std::cout << buf;
    std::snprintf(buf, sizeof(buf), "  trainable  %10zu  (%.2f%%)\n", ps.trainable_elements(),
                  100.0 * ps.trainable_fraction());
    std::cout << buf;
    if (adapters) {
        std::snprintf(buf, sizeof(buf), "    adapters         %10zu\n", adapters);
        std::cout << buf;
    }
    if (inject) {
        std::snprintf(buf, sizeof(buf), "    text projections %10zu\n", inject);
        std::cout << buf;
    }
    if (decoder) {
        std::snprintf(buf, sizeof(buf), "    decoder          %10zu\n", decoder);
        std::cout << buf;
    }
    if (o.tensors)
        for (auto& [name, t] : ps.all())
            if (!ps.is_frozen(name)) std::cout << "  " << name << " " << shape_str(t->shape) << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// Argument wiring and the exception-to-exit-code boundary.
// ---------------------------------------------------------------------------

inline int run(int argc, char** argv) {
    std::vector<std::string> raw(argv, argv + argc);
    CLI::App app{"promptable segmentation with text-conditioned parallel adapters"};
    app.set_version_flag("--version", std::string("ptx ") + kVersion);
    app.require_subcommand(1);

    GenOpts g;
    auto* gen = app.add_subcommand("gen", "generate a synthetic scene dataset");
    gen->add_option("--spec", g.spec, "scene spec (json)")->required();
    gen->add_option("--out", g.out, "output dataset directory")->required();
    gen->add_option("--seed", g.seed, "dataset seed");
    gen->add_option("--count", g.count, "number of scenes")->required();
    gen->add_option("--bank-out", g.bank_out, "also write a synthetic embedding bank here");
    gen->add_option("--bank-dim", g.bank_dim, "embedding width for --bank-out");

    TrainOpts t;
    auto* train = app.add_subcommand("train", "train one variant on a dataset");
    train->add_option("--data", t.data, "dataset directory")->required();
    train->add_option("--out", t.out, "output directory")->required();
    train->add_option("--config", t.config, "training config (json)");
    train->add_option("--model-config", t.model_config, "model geometry (json)");
    train->add_option("--variant", t.variant, "adapter variant (overrides the config)");
    train->add_option("--seed", t.seed, "run seed (overrides the config)");
    train->add_option("--bank", t.bank, "class-embedding bank directory");
    train->add_option("--resume", t.resume, "checkpoint directory to continue from");
    train->add_option("--warmup", t.warmup, "warm-up cache directory to start the backbone from");

    EvalOpts e;
    auto* eval = app.add_subcommand("eval", "score a checkpoint on a dataset");
    eval->add_option("--data", e.data, "dataset directory")->required();
    eval->add_option("--checkpoint", e.checkpoint, "checkpoint directory")->required();
    eval->add_option("--bank", e.bank, "class-embedding bank directory");
    eval->add_option("--out", e.out, "write eval.json and a manifest here");
    eval->add_option("--mode", e.mode, "score only this prompt mode");
    eval->add_option("--threshold", e.threshold, "mask probability threshold");

    AblateOpts a;
    auto* ablate = app.add_subcommand("ablate", "run a comparison study");
    ablate->add_option("--study", a.study, "table1, injection, placement, or categories")->required();
    ablate->add_option("--work", a.work, "arm cache directory")->required();
    ablate->add_option("--out", a.out, "report output directory")->required();
    ablate->add_option("--train-scenes", a.train_scenes, "override the training scene count");
    ablate->add_option("--test-scenes", a.test_scenes, "override the held-out scene count");
    ablate->add_option("--epochs", a.epochs, "override the training epochs");
    ablate->add_option("--seeds", a.seeds, "override the run seeds")->delimiter(',');
    ablate->add_option("--data-seed", a.data_seed, "override the dataset seed");
    ablate->add_flag("--small", a.small, "tiny smoke-test budget");

    GradcheckOpts gc;
    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference audit of the backward pass");
    gradcheck->add_option("--seed", gc.seed, "model and probe seed");
    gradcheck->add_option("--coords", gc.coords, "coordinates sampled per tensor");
    gradcheck->add_option("--variant", gc.variant, "adapter variant");
    gradcheck->add_option("--tolerance", gc.tolerance, "max relative error accepted");
    gradcheck->add_flag("--full", gc.full, "audit the default geometry instead of the tiny one");

    ParamsOpts p;
    auto* params = app.add_subcommand("params", "parameter budget of a variant");
    params->add_option("--variant", p.variant, "adapter variant");
    params->add_option("--model-config", p.model_config, "model geometry (json)");
    params->add_flag("--tensors", p.tensors, "list every trainable tensor");

    auto dispatch = [&]<typename T>() -> int {
        if (*gen) return cmd_gen(g, raw);
        if (*train) return cmd_train<T>(t, raw);
        if (*eval) return cmd_eval<T>(e, raw);
        if (*ablate) return cmd_ablate<T>(a, raw);
        if (*gradcheck) return cmd_gradcheck(gc);
        if (*params) return cmd_params(p);
        return 0;
    };

    try {
        app.parse(argc, argv);
        return env_precision() == Precision::f32 ? dispatch.template operator()<float>()
                                                 : dispatch.template operator()<double>();
    } catch (const CLI::CallForHelp& h) {
        return app.exit(h);
    } catch (const CLI::CallForVersion& v) {
        return app.exit(v);
    } catch (const CLI::ParseError& pe) {
        app.exit(pe);
        return 2;
    } catch (const ConfigError& ce) {
        std::cerr << "error: " << ce.what() << "\n";
        return 2;
    } catch (const NumericError& ne) {
        std::cerr << "error: " << ne.what() << "\n";
        return 3;
    } catch (const IoError& io) {
        std::cerr << "error: " << io.what() << "\n";
        return 4;
    }
}

}  // namespace ptx::cli
