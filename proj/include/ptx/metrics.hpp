#pragma once

#include "ptx/trainer.hpp"

namespace ptx {

// Intersection-over-union of two binary masks. Two empty masks agree
// perfectly by convention. Anything non-binary is a caller bug, not data.
inline double iou(const Tensor<float>& a, const Tensor<float>& b) {
    if (a.shape != b.shape)
        throw ConfigError("iou: shape mismatch " + shape_str(a.shape) + " vs " + shape_str(b.shape));
    size_t inter = 0, uni = 0;
    for (size_t i = 0; i < a.numel(); ++i) {
        float x = a.data[i], y = b.data[i];
        if ((x != 0.0f && x != 1.0f) || (y != 0.0f && y != 1.0f))
            throw ConfigError("iou expects binary masks, found " + std::to_string(x != 0.0f && x != 1.0f ? x : y));
        if (x != 0.0f && y != 0.0f) ++inter;
        if (x != 0.0f || y != 0.0f) ++uni;
    }
    return uni == 0 ? 1.0 : double(inter) / double(uni);
}

// Mean absolute error between a probability map and a binary target.
inline double mask_mae(const Tensor<float>& prob, const Tensor<float>& gt) {
    if (prob.shape != gt.shape)
        throw ConfigError("mae: shape mismatch " + shape_str(prob.shape) + " vs " + shape_str(gt.shape));
    double acc = 0;
    for (size_t i = 0; i < prob.numel(); ++i) {
        float p = prob.data[i], y = gt.data[i];
        if (!(p >= 0.0f && p <= 1.0f))
            throw ConfigError("mae expects probabilities in [0,1], found " + std::to_string(p));
        if (y != 0.0f && y != 1.0f)
            throw ConfigError("mae expects a binary target, found " + std::to_string(y));
        acc += std::abs(double(p) - double(y));
    }
    return acc / double(prob.numel());
}

inline Tensor<float> threshold_mask(const Tensor<float>& prob, double threshold) {
    Tensor<float> out(prob.shape);
    for (size_t i = 0; i < prob.numel(); ++i) out.data[i] = double(prob.data[i]) >= threshold ? 1.0f : 0.0f;
    return out;
}

struct EvalResult {
    double miou = 0.0;  // percent
    double mae = 0.0;
    size_t samples = 0;
    size_t skipped = 0;  // prompt class absent from the embedding bank
    std::vector<double> per_sample_iou;
};

// Runs the model over every prompt sample (optionally one prompt mode only)
// and scores masks at the logits resolution against the nearest-resampled
// class union. Samples whose class the bank cannot embed are skipped and
// counted rather than silently dropped.
template <typename T>
EvalResult evaluate(const Model<T>& model, const Dataset& data, const TextBank* bank,
                    double threshold = 0.5, const std::string& mode_filter = "") {
    if (model.variant().uses_text() && !bank)
        throw ConfigError("variant '" + model.variant().name + "' needs a class-embedding bank");
    EvalResult res;
    double mae_acc = 0;
    for (const Scene& scene : data.scenes) {
        auto img = image_input<T>(scene);
        for (const PromptSample& sm : scene.samples) {
            if (!mode_filter.empty() && sm.prompt_mode != mode_filter) continue;
            TensorPtr<T> text;
            if (model.variant().uses_text()) {
                try {
                    text = bank->template lookup<T>(sm.class_name);
                } catch (const ConfigError&) {
                    ++res.skipped;
                    continue;
                }
            }
            auto logits = model.forward(nullptr, img, sm.points, text);
            auto prob_t = sigmoid_map(*logits);
            Tensor<float> prob(prob_t.shape);
            for (size_t i = 0; i < prob.numel(); ++i) prob.data[i] = float(prob_t.data[i]);
            auto gt_t = target_for<T>(scene, sm, model.config());
            Tensor<float> gt(gt_t->shape);
            for (size_t i = 0; i < gt.numel(); ++i) gt.data[i] = float(gt_t->data[i]);

            double sample_iou = iou(threshold_mask(prob, threshold), gt);
            res.per_sample_iou.push_back(sample_iou);
            mae_acc += mask_mae(prob, gt);
            ++res.samples;
        }
    }
    if (res.samples > 0) {
        double s = 0;
        for (double v : res.per_sample_iou) s += v;
        res.miou = 100.0 * s / double(res.samples);
        res.mae = mae_acc / double(res.samples);
    }
    return res;
}

// Instances of the sample's class that received no prompt point. For
// partial-instance prompts this is the withheld remainder the conditioned
// model is supposed to recover.
inline std::vector<size_t> unprompted_instances(const Scene& scene, const PromptSample& sm) {
    std::vector<size_t> out;
    for (size_t i = 0; i < scene.instances.size(); ++i) {
        const Instance& inst = scene.instances[i];
        if (inst.class_name != sm.class_name) continue;
        bool hit = false;
        for (auto& p : sm.points)
            if (inst.mask.data[size_t(p[1]) * inst.mask.shape[0] + size_t(p[0])] != 0.0f) hit = true;
        if (!hit) out.push_back(i);
    }
    return out;
}

// Recall of the unprompted same-class area inside a predicted mask, both
// taken at the prediction's resolution. Empty unprompted area (possible after
// resampling) yields no value.
inline std::optional<double> unprompted_recall_on(const Scene& scene, const PromptSample& sm,
                                                  const Tensor<float>& pred) {
    if (pred.ndim() != 2 || pred.shape[0] != pred.shape[1])
        throw ConfigError("recall expects a square prediction, got " + shape_str(pred.shape));
    auto idx = unprompted_instances(scene, sm);
    if (idx.empty()) return std::nullopt;
    std::vector<const Tensor<float>*> masks;
    for (size_t i : idx) masks.push_back(&scene.instances[i].mask);
    auto full = union_mask(masks, scene.image.shape[0]);
    auto small = nearest_resample(full, pred.shape[0], pred.shape[1]);
    size_t area = 0, hit = 0;
    for (size_t i = 0; i < small.numel(); ++i) {
        if (small.data[i] == 0.0f) continue;
        ++area;
        if (pred.data[i] != 0.0f) ++hit;
    }
    if (area == 0) return std::nullopt;
    return double(hit) / double(area);
}

struct RecallResult {
    double mean_recall = 0.0;
    size_t samples = 0;
    size_t skipped = 0;  // no unprompted area at the evaluation resolution
};

template <typename T>
RecallResult partial_recall(const Model<T>& model, const Dataset& data, const TextBank* bank,
                            double threshold = 0.5) {
    if (model.variant().uses_text() && !bank)
        throw ConfigError("variant '" + model.variant().name + "' needs a class-embedding bank");
    RecallResult res;
    double acc = 0;
    for (const Scene& scene : data.scenes) {
        auto img = image_input<T>(scene);
        for (const PromptSample& sm : scene.samples) {
            if (sm.prompt_mode != "partial_instances") continue;
            TensorPtr<T> text;
            if (model.variant().uses_text()) {
                try {
                    text = bank->template lookup<T>(sm.class_name);
                } catch (const ConfigError&) {
                    ++res.skipped;
                    continue;
                }
            }
            auto logits = model.forward(nullptr, img, sm.points, text);
            auto prob_t = sigmoid_map(*logits);
            Tensor<float> prob(prob_t.shape);
            for (size_t i = 0; i < prob.numel(); ++i) prob.data[i] = float(prob_t.data[i]);
            auto r = unprompted_recall_on(scene, sm, threshold_mask(prob, threshold));
            if (!r) {
                ++res.skipped;
                continue;
            }
            acc += *r;
            ++res.samples;
        }
    }
    if (res.samples > 0) res.mean_recall = acc / double(res.samples);
    return res;
}

}  // namespace ptx
