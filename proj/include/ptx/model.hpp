#pragma once

#include <optional>

#include "json.hpp"
#include "ptx/adapters.hpp"
#include "ptx/scenes.hpp"

namespace ptx {

struct ModelConfig {
    size_t image_size = 64;
    size_t patch_size = 8;
    size_t embed_dim = 64;
    size_t depth = 4;
    size_t heads = 4;
    size_t bottleneck = 16;  // adapter rank
    size_t text_dim = 64;
    size_t decoder_dim = 64;
    // MLP width of the frozen blocks. Not interesting on its own, but it sets
    // the frozen/trainable balance: 8x embed keeps the adapter share of the
    // default model under a tenth of the parameters.
    size_t mlp_hidden = 512;

    size_t grid() const { return image_size / patch_size; }
    size_t tokens() const { return grid() * grid(); }
    size_t patch_row() const { return patch_size * patch_size * 3; }
    size_t logit_size() const { return 2 * grid(); }  // one fixed 2x upsample

    void validate() const {
        if (patch_size == 0 || image_size % patch_size != 0)
            throw ConfigError("image_size must be a multiple of patch_size");
        if (heads == 0 || embed_dim % heads != 0)
            throw ConfigError("embed_dim must be a multiple of heads");
        if (embed_dim % 4 != 0 || decoder_dim % 4 != 0)
            throw ConfigError("embed_dim and decoder_dim must be multiples of 4 for the sinusoidal features");
        if (depth == 0 || bottleneck == 0 || text_dim == 0 || mlp_hidden == 0)
            throw ConfigError("depth, bottleneck, text_dim and mlp_hidden must be positive");
    }

    nlohmann::json to_json() const {
        return {{"image_size", image_size}, {"patch_size", patch_size}, {"embed_dim", embed_dim},
                {"depth", depth},           {"heads", heads},           {"bottleneck", bottleneck},
                {"text_dim", text_dim},     {"decoder_dim", decoder_dim}, {"mlp_hidden", mlp_hidden}};
    }

    static ModelConfig from_json(const nlohmann::json& j) {
        ModelConfig c;
        c.image_size = j.value("image_size", c.image_size);
        c.patch_size = j.value("patch_size", c.patch_size);
        c.embed_dim = j.value("embed_dim", c.embed_dim);
        c.depth = j.value("depth", c.depth);
        c.heads = j.value("heads", c.heads);
        c.bottleneck = j.value("bottleneck", c.bottleneck);
        c.text_dim = j.value("text_dim", c.text_dim);
        c.decoder_dim = j.value("decoder_dim", c.decoder_dim);
        c.mlp_hidden = j.value("mlp_hidden", c.mlp_hidden);
        c.validate();
        return c;
    }

    bool operator==(const ModelConfig&) const = default;
};

enum class InjectionSite { none, image_encoder, prompt_encoder, mask_decoder };
enum class TextPlacement { mlp_only, mlp_and_mhsa };

inline std::string to_string(InjectionSite s) {
    switch (s) {
        case InjectionSite::none: return "none";
        case InjectionSite::image_encoder: return "image_encoder";
        case InjectionSite::prompt_encoder: return "prompt_encoder";
        case InjectionSite::mask_decoder: return "mask_decoder";
    }
    return "?";
}

inline std::string to_string(TextPlacement p) {
    return p == TextPlacement::mlp_only ? "mlp_only" : "mlp_and_mhsa";
}

struct VariantSpec {
    std::string name = "none";
    bool adapters_enabled = false;
    bool decoder_trainable = false;
    InjectionSite injection_site = InjectionSite::none;
    TextPlacement text_placement = TextPlacement::mlp_only;

    bool uses_text() const { return injection_site != InjectionSite::none; }

    void validate() const {
        if (!adapters_enabled && injection_site != InjectionSite::none)
            throw ConfigError("variant '" + name + "': text injection requires adapters");
        if (text_placement == TextPlacement::mlp_and_mhsa && injection_site != InjectionSite::image_encoder)
            throw ConfigError("variant '" + name + "': mlp_and_mhsa placement only applies to the image encoder site");
    }

    static const std::vector<std::string>& names() {
        static const std::vector<std::string> n = {"none",          "decoder_only",  "parallel",
                                                   "parallel_text", "inject_prompt", "inject_decoder",
                                                   "text_mlp_mhsa"};
        return n;
    }

    static VariantSpec from_name(const std::string& name) {
        VariantSpec v;
        v.name = name;
        if (name == "none") {
            // zero-shot row: nothing trains beyond the shared warm-up
        } else if (name == "decoder_only") {
            v.decoder_trainable = true;
        } else if (name == "parallel") {
            v.adapters_enabled = true;
            v.decoder_trainable = true;
        } else if (name == "parallel_text") {
            v.adapters_enabled = true;
            v.decoder_trainable = true;
            v.injection_site = InjectionSite::image_encoder;
        } else if (name == "inject_prompt") {
            v.adapters_enabled = true;
            v.decoder_trainable = true;
            v.injection_site = InjectionSite::prompt_encoder;
        } else if (name == "inject_decoder") {
            v.adapters_enabled = true;
            v.decoder_trainable = true;
            v.injection_site = InjectionSite::mask_decoder;
        } else if (name == "text_mlp_mhsa") {
            v.adapters_enabled = true;
            v.decoder_trainable = true;
            v.injection_site = InjectionSite::image_encoder;
            v.text_placement = TextPlacement::mlp_and_mhsa;
        } else {
            std::string known;
            for (auto& k : names()) known += (known.empty() ? "" : ", ") + k;
            throw ConfigError("unknown variant '" + name + "' (expected one of: " + known + ")");
        }
        v.validate();
        return v;
    }
};

// Sinusoidal features of normalized 2-d coordinates: first half of the
// channels encodes u, second half v, as interleaved (sin, cos) pairs over
// frequencies pi*(k+1). Deterministic, parameter-free, shared by the prompt
// encoder and the decoder's grid features.
template <typename T>
TensorPtr<T> sinusoidal_features(const std::vector<std::array<double, 2>>& uv, size_t d) {
    auto out = make_tensor<T>({uv.size(), d});
    const size_t half = d / 2, pairs = half / 2;
    for (size_t i = 0; i < uv.size(); ++i)
        for (size_t axis = 0; axis < 2; ++axis) {
            double u = uv[i][axis];
            for (size_t k = 0; k < pairs; ++k) {
                double w = M_PI * double(k + 1) * u;
                out->data[i * d + axis * half + 2 * k] = T(std::sin(w));
                out->data[i * d + axis * half + 2 * k + 1] = T(std::cos(w));
            }
        }
    return out;
}

template <typename T>
struct EncoderBlock {
    TensorPtr<T> ln1_g, ln1_b;
    TensorPtr<T> wq, bq, wk, bk, wv, bv, wo, bo;
    TensorPtr<T> ln2_g, ln2_b;
    TensorPtr<T> mlp_w1, mlp_b1, mlp_w2, mlp_b2;
    std::optional<ParallelAdapter<T>> attn_plain;
    std::optional<TextAdapter<T>> attn_text;
    std::optional<ParallelAdapter<T>> mlp_plain;
    std::optional<TextAdapter<T>> mlp_text;
};

template <typename T>
class Model {
  public:
    Model(ModelConfig cfg, VariantSpec variant, uint64_t seed, bool freeze_backbone = true)
        : cfg_(cfg), variant_(variant), seed_(seed) {
        cfg_.validate();
        variant_.validate();
        build(freeze_backbone);
    }

    const ModelConfig& config() const { return cfg_; }
    const VariantSpec& variant() const { return variant_; }
    ParamSet<T>& params() { return params_; }
    const ParamSet<T>& params() const { return params_; }

    // --- image encoder -----------------------------------------------------

    TensorPtr<T> encode_image(Tape<T>* tape, const TensorPtr<T>& image, const TensorPtr<T>& text) const {
        if (image->ndim() != 3 || image->shape[0] != cfg_.image_size ||
            image->shape[1] != cfg_.image_size || image->shape[2] != 3)
            throw ConfigError("image must be [" + std::to_string(cfg_.image_size) + "," +
                              std::to_string(cfg_.image_size) + ",3], got " + shape_str(image->shape));
        if (text && variant_.injection_site != InjectionSite::image_encoder)
            throw ConfigError("variant '" + variant_.name + "' does not accept text in the image encoder");

        auto x = add_rowvec(tape, matmul(tape, patchify(tape, image, cfg_.patch_size), patch_w_), patch_b_);
        x = add(tape, x, pos_embed_);
        for (auto& blk : blocks_) {
            // attention sublayer plus its parallel branch, all fed by the
            // same residual-stream input
            TensorPtr<T> attn_delta;
            if (blk.attn_text) attn_delta = blk.attn_text->delta(tape, x, text);
            else if (blk.attn_plain) attn_delta = blk.attn_plain->delta(tape, x);
            auto a = layer_norm(tape, x, blk.ln1_g, blk.ln1_b);
            auto q = split_heads(tape, add_rowvec(tape, matmul(tape, a, blk.wq), blk.bq), cfg_.heads);
            auto k = split_heads(tape, add_rowvec(tape, matmul(tape, a, blk.wk), blk.bk), cfg_.heads);
            auto v = split_heads(tape, add_rowvec(tape, matmul(tape, a, blk.wv), blk.bv), cfg_.heads);
            auto att = merge_heads(tape, softmax_attention(tape, q, k, v));
            auto attn_out = add_rowvec(tape, matmul(tape, att, blk.wo), blk.bo);
            auto y = add(tape, x, attn_out);
            if (attn_delta) y = add(tape, y, attn_delta);

            TensorPtr<T> mlp_delta;
            if (blk.mlp_text) mlp_delta = blk.mlp_text->delta(tape, y, text);
            else if (blk.mlp_plain) mlp_delta = blk.mlp_plain->delta(tape, y);
            auto h = layer_norm(tape, y, blk.ln2_g, blk.ln2_b);
            auto hidden = gelu(tape, add_rowvec(tape, matmul(tape, h, blk.mlp_w1), blk.mlp_b1));
            auto mlp_out = add_rowvec(tape, matmul(tape, hidden, blk.mlp_w2), blk.mlp_b2);
            auto z = add(tape, y, mlp_out);
            if (mlp_delta) z = add(tape, z, mlp_delta);
            x = z;
        }
        return layer_norm(tape, x, lnf_g_, lnf_b_);
    }

    // --- prompt encoder -----------------------------------------------------

    TensorPtr<T> encode_prompts(Tape<T>* tape, const std::vector<std::array<int, 2>>& points,
                                const TensorPtr<T>& text) const {
        if (points.empty()) throw ConfigError("need at least one prompt point");
        if (text && variant_.injection_site != InjectionSite::prompt_encoder)
            throw ConfigError("variant '" + variant_.name + "' does not accept text in the prompt encoder");
        std::vector<std::array<double, 2>> uv;
        uv.reserve(points.size());
        const double denom = double(cfg_.image_size - 1);
        for (auto& p : points) {
            if (p[0] < 0 || p[1] < 0 || p[0] >= int(cfg_.image_size) || p[1] >= int(cfg_.image_size))
                throw ConfigError("prompt point (" + std::to_string(p[0]) + "," + std::to_string(p[1]) +
                                  ") is outside the " + std::to_string(cfg_.image_size) + "px image");
            uv.push_back({double(p[0]) / denom, double(p[1]) / denom});
        }
        auto tok = add_rowvec(tape, sinusoidal_features<T>(uv, cfg_.embed_dim), point_embed_);
        if (text && prompt_w_text_)
            tok = add_rowvec(tape, tok, gelu(tape, matmul(tape, text, prompt_w_text_)));
        return tok;
    }

    // --- mask decoder --------------------------------------------------------

    TensorPtr<T> decode_mask(Tape<T>* tape, const TensorPtr<T>& image_tokens,
                             const TensorPtr<T>& prompt_tokens, const TensorPtr<T>& text) const {
        if (text && variant_.injection_site != InjectionSite::mask_decoder)
            throw ConfigError("variant '" + variant_.name + "' does not accept text in the mask decoder");
        const size_t n = cfg_.tokens(), g = cfg_.grid(), dd = cfg_.decoder_dim;
        if (image_tokens->shape != std::vector<size_t>{n, cfg_.embed_dim})
            throw ConfigError("image tokens must be [" + std::to_string(n) + "," +
                              std::to_string(cfg_.embed_dim) + "], got " + shape_str(image_tokens->shape));

        auto xi = add(tape, image_tokens, grid_features());
        auto xp = add_rowvec(tape, matmul(tape, xi, proj_w_), proj_b_);
        auto pp = add_rowvec(tape, matmul(tape, prompt_tokens, proj_w_), proj_b_);
        auto q0 = concat_rows(tape, mask_token_, pp);
        if (text && dec_w_text_)
            q0 = add_rowvec(tape, q0, gelu(tape, matmul(tape, text, dec_w_text_)));

        const size_t kq = q0->shape[0];
        // prompt side reads the image, then the image reads the prompt side
        auto att1 = reshape(tape,
                            softmax_attention(tape, reshape(tape, q0, {1, kq, dd}),
                                              reshape(tape, xp, {1, n, dd}), reshape(tape, xp, {1, n, dd})),
                            {kq, dd});
        auto q1 = layer_norm(tape, add(tape, q0, att1), lnq_g_, lnq_b_);
        auto att2 = reshape(tape,
                            softmax_attention(tape, reshape(tape, xp, {1, n, dd}),
                                              reshape(tape, q1, {1, kq, dd}), reshape(tape, q1, {1, kq, dd})),
                            {n, dd});
        auto x1 = layer_norm(tape, add(tape, xp, att2), lnimg_g_, lnimg_b_);

        auto m = slice_rows(tape, q1, 0, 1);
        auto logits = scale(tape, matmul(tape, x1, transpose(tape, m)), T(1) / std::sqrt(T(dd)));
        return bilinear_upsample2x(tape, reshape(tape, logits, {g, g}));
    }

    // Routes the class embedding to the variant's single injection site and
    // returns logits at the loss resolution.
    TensorPtr<T> forward(Tape<T>* tape, const TensorPtr<T>& image,
                         const std::vector<std::array<int, 2>>& points, const TensorPtr<T>& text) const {
        if (variant_.uses_text() && !text)
            throw ConfigError("variant '" + variant_.name + "' needs a class embedding");
        if (!variant_.uses_text() && text)
            throw ConfigError("variant '" + variant_.name + "' does not take a class embedding");
        auto site = variant_.injection_site;
        auto img_tok = encode_image(tape, image, site == InjectionSite::image_encoder ? text : nullptr);
        auto prm_tok = encode_prompts(tape, points, site == InjectionSite::prompt_encoder ? text : nullptr);
        return decode_mask(tape, img_tok, prm_tok, site == InjectionSite::mask_decoder ? text : nullptr);
    }

  private:
    void build(bool freeze_backbone) {
        auto frozen_backbone = [&](const std::string& name, std::vector<size_t> shape, double sd) {
            auto t = make_tensor<T>(std::move(shape));
            t->name = name;
            if (sd > 0) fill_normal(*t, seed_, sd);
            params_.add(name, t, freeze_backbone);
            return t;
        };
        auto frozen_const = [&](const std::string& name, std::vector<size_t> shape, double value) {
            auto t = make_tensor<T>(std::move(shape));
            t->name = name;
            std::fill(t->data.begin(), t->data.end(), T(value));
            params_.add(name, t, freeze_backbone);
            return t;
        };
        auto decoder_param = [&](const std::string& name, std::vector<size_t> shape, double sd, double cval) {
            auto t = make_tensor<T>(std::move(shape));
            t->name = name;
            if (sd > 0) fill_normal(*t, seed_, sd);
            else std::fill(t->data.begin(), t->data.end(), T(cval));
            bool frozen = freeze_backbone && !variant_.decoder_trainable;
            params_.add(name, t, frozen);
            return t;
        };

        const size_t d = cfg_.embed_dim, dd = cfg_.decoder_dim, r = cfg_.bottleneck;
        patch_w_ = frozen_backbone("patch_embed.w", {cfg_.patch_row(), d}, 1.0 / std::sqrt(double(cfg_.patch_row())));
        patch_b_ = frozen_backbone("patch_embed.b", {d}, 0.0);
        pos_embed_ = frozen_backbone("pos_embed", {cfg_.tokens(), d}, 0.02);
        point_embed_ = frozen_backbone("prompt.point_embed", {1, d}, 0.02);

        blocks_.resize(cfg_.depth);
        for (size_t i = 0; i < cfg_.depth; ++i) {
            auto& b = blocks_[i];
            std::string p = "block" + std::to_string(i) + ".";
            double wsd = 1.0 / std::sqrt(double(d));
            b.ln1_g = frozen_const(p + "ln1.gamma", {d}, 1.0);
            b.ln1_b = frozen_const(p + "ln1.beta", {d}, 0.0);
            b.wq = frozen_backbone(p + "attn.wq", {d, d}, wsd);
            b.bq = frozen_backbone(p + "attn.bq", {d}, 0.0);
            b.wk = frozen_backbone(p + "attn.wk", {d, d}, wsd);
            b.bk = frozen_backbone(p + "attn.bk", {d}, 0.0);
            b.wv = frozen_backbone(p + "attn.wv", {d, d}, wsd);
            b.bv = frozen_backbone(p + "attn.bv", {d}, 0.0);
            b.wo = frozen_backbone(p + "attn.wo", {d, d}, wsd);
            b.bo = frozen_backbone(p + "attn.bo", {d}, 0.0);
            b.ln2_g = frozen_const(p + "ln2.gamma", {d}, 1.0);
            b.ln2_b = frozen_const(p + "ln2.beta", {d}, 0.0);
            b.mlp_w1 = frozen_backbone(p + "mlp.w1", {d, cfg_.mlp_hidden}, wsd);
            b.mlp_b1 = frozen_backbone(p + "mlp.b1", {cfg_.mlp_hidden}, 0.0);
            b.mlp_w2 = frozen_backbone(p + "mlp.w2", {cfg_.mlp_hidden, d}, 1.0 / std::sqrt(double(cfg_.mlp_hidden)));
            b.mlp_b2 = frozen_backbone(p + "mlp.b2", {d}, 0.0);

            if (variant_.adapters_enabled) {
                bool text_in_encoder = variant_.injection_site == InjectionSite::image_encoder;
                if (text_in_encoder && variant_.text_placement == TextPlacement::mlp_and_mhsa) {
                    b.attn_text = TextAdapter<T>::init(d, r, cfg_.text_dim, seed_, p + "attn_adapter");
                    b.attn_text->register_params(params_);
                } else {
                    b.attn_plain = ParallelAdapter<T>::init(d, r, seed_, p + "attn_adapter");
                    b.attn_plain->register_params(params_);
                }
                if (text_in_encoder) {
                    b.mlp_text = TextAdapter<T>::init(d, r, cfg_.text_dim, seed_, p + "mlp_adapter");
                    b.mlp_text->register_params(params_);
                } else {
                    b.mlp_plain = ParallelAdapter<T>::init(d, r, seed_, p + "mlp_adapter");
                    b.mlp_plain->register_params(params_);
                }
            }
        }
        lnf_g_ = frozen_const("ln_f.gamma", {d}, 1.0);
        lnf_b_ = frozen_const("ln_f.beta", {d}, 0.0);

        proj_w_ = decoder_param("decoder.token_proj.w", {d, dd}, 1.0 / std::sqrt(double(d)), 0.0);
        proj_b_ = decoder_param("decoder.token_proj.b", {dd}, 0.0, 0.0);
        mask_token_ = decoder_param("decoder.mask_token", {1, dd}, 0.02, 0.0);
        lnq_g_ = decoder_param("decoder.ln_q.gamma", {dd}, 0.0, 1.0);
        lnq_b_ = decoder_param("decoder.ln_q.beta", {dd}, 0.0, 0.0);
        lnimg_g_ = decoder_param("decoder.ln_img.gamma", {dd}, 0.0, 1.0);
        lnimg_b_ = decoder_param("decoder.ln_img.beta", {dd}, 0.0, 0.0);

        // injection projections start at zero so a fresh text variant computes
        // exactly the baseline function, mirroring the zero-init up-projections
        if (variant_.injection_site == InjectionSite::prompt_encoder) {
            prompt_w_text_ = make_tensor<T>({cfg_.text_dim, d});
            prompt_w_text_->name = "prompt.w_text";
            params_.add(prompt_w_text_->name, prompt_w_text_, false);
        }
        if (variant_.injection_site == InjectionSite::mask_decoder) {
            dec_w_text_ = make_tensor<T>({cfg_.text_dim, dd});
            dec_w_text_->name = "decoder.w_text";
            params_.add(dec_w_text_->name, dec_w_text_, false);
        }
    }

    // cached constant positional features of the patch-grid centers
    TensorPtr<T> grid_features() const {
        if (!grid_feat_) {
            std::vector<std::array<double, 2>> uv;
            const double denom = double(cfg_.image_size - 1), half = double(cfg_.patch_size - 1) / 2.0;
            for (size_t gi = 0; gi < cfg_.grid(); ++gi)
                for (size_t gj = 0; gj < cfg_.grid(); ++gj)
                    uv.push_back({(double(gj * cfg_.patch_size) + half) / denom,
                                  (double(gi * cfg_.patch_size) + half) / denom});
            grid_feat_ = sinusoidal_features<T>(uv, cfg_.embed_dim);
            grid_feat_->name = "decoder.grid_features";
        }
        return grid_feat_;
    }

    ModelConfig cfg_;
    VariantSpec variant_;
    uint64_t seed_;
    ParamSet<T> params_;

    TensorPtr<T> patch_w_, patch_b_, pos_embed_, point_embed_;
    std::vector<EncoderBlock<T>> blocks_;
    TensorPtr<T> lnf_g_, lnf_b_;
    TensorPtr<T> proj_w_, proj_b_, mask_token_, lnq_g_, lnq_b_, lnimg_g_, lnimg_b_;
    TensorPtr<T> prompt_w_text_, dec_w_text_;
    mutable TensorPtr<T> grid_feat_;
};

// Binary ground truth for a sample, brought to the logits resolution.
template <typename T>
TensorPtr<T> target_for(const Scene& scene, const PromptSample& sample, const ModelConfig& cfg) {
    auto gt = class_union(scene, sample.class_name);
    auto small = nearest_resample(gt, cfg.logit_size(), cfg.logit_size());
    auto out = make_tensor<T>({cfg.logit_size(), cfg.logit_size()});
    for (size_t i = 0; i < small.numel(); ++i) out->data[i] = T(small.data[i]);
    return out;
}

template <typename T>
TensorPtr<T> image_input(const Scene& scene) {
    auto img = make_tensor<T>(scene.image.shape);
    for (size_t i = 0; i < scene.image.numel(); ++i) img->data[i] = T(scene.image.data[i]);
    return img;
}

}  // namespace ptx
