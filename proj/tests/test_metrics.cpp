#include "ptx/metrics.hpp"

#include <gtest/gtest.h>

#include <set>

using namespace ptx;

namespace {

ModelConfig tiny_config() {
    ModelConfig c;
    c.image_size = 32;
    c.patch_size = 4;
    c.embed_dim = 8;
    c.depth = 2;
    c.heads = 2;
    c.bottleneck = 4;
    c.text_dim = 8;
    c.decoder_dim = 8;
    c.mlp_hidden = 16;
    return c;
}

SceneSpec tiny_scene_spec() {
    SceneSpec s;
    s.image_size = 32;
    s.classes = {"disk", "square"};
    s.instances_per_class_min = 1;
    s.instances_per_class_max = 1;
    s.radius_min = 4;
    s.radius_max = 6;
    s.points_per_prompt = 3;
    return s;
}

Tensor<float> random_binary(Rng& rng, size_t h, size_t w, double density) {
    Tensor<float> m({h, w});
    for (size_t i = 0; i < m.numel(); ++i) m.data[i] = rng.uniform() < density ? 1.0f : 0.0f;
    return m;
}

// Set-algebra reference for iou: collect the on-indices of both masks and
// intersect/union them as index sets, far away from the counting loop under
// test.
double iou_by_sets(const Tensor<float>& a, const Tensor<float>& b) {
    std::set<size_t> sa, sb;
    for (size_t i = 0; i < a.numel(); ++i) {
        if (a.data[i] != 0.0f) sa.insert(i);
        if (b.data[i] != 0.0f) sb.insert(i);
    }
    std::vector<size_t> inter, uni;
    std::set_intersection(sa.begin(), sa.end(), sb.begin(), sb.end(), std::back_inserter(inter));
    std::set_union(sa.begin(), sa.end(), sb.begin(), sb.end(), std::back_inserter(uni));
    if (uni.empty()) return 1.0;
    return double(inter.size()) / double(uni.size());
}

}  // namespace

TEST(Iou, MatchesASetAlgebraReferenceOnAThousandRandomPairs) {
    Rng rng(4242);
    for (int trial = 0; trial < 1000; ++trial) {
        size_t s = 1 + rng.index(12);
        double da = 0.05 + 0.9 * rng.uniform();
        double db = 0.05 + 0.9 * rng.uniform();
        auto a = random_binary(rng, s, s, da);
        auto b = random_binary(rng, s, s, db);
        EXPECT_DOUBLE_EQ(iou(a, b), iou_by_sets(a, b));
    }
}

TEST(Iou, EdgeValues) {
    Tensor<float> empty({4, 4});
    EXPECT_DOUBLE_EQ(iou(empty, empty), 1.0);  // nothing to find, nothing found

    Tensor<float> left({2, 2}), right({2, 2});
    left.data[0] = left.data[2] = 1.0f;
    right.data[1] = right.data[3] = 1.0f;
    EXPECT_DOUBLE_EQ(iou(left, right), 0.0);
    EXPECT_DOUBLE_EQ(iou(left, left), 1.0);

    // one shared pixel out of three occupied
    Tensor<float> c({2, 2});
    c.data[0] = c.data[1] = 1.0f;
    EXPECT_DOUBLE_EQ(iou(left, c), 1.0 / 3.0);
}

TEST(Iou, RejectsBadInputs) {
    Tensor<float> a({2, 2}), b({2, 3}), soft({2, 2});
    soft.data[0] = 0.5f;
    EXPECT_THROW(iou(a, b), ConfigError);
    EXPECT_THROW(iou(a, soft), ConfigError);
    EXPECT_THROW(iou(soft, a), ConfigError);
}

TEST(Mae, MatchesAnIndependentAccumulationOnAThousandRandomPairs) {
    Rng rng(777);
    for (int trial = 0; trial < 1000; ++trial) {
        size_t s = 1 + rng.index(10);
        Tensor<float> prob({s, s});
        for (size_t i = 0; i < prob.numel(); ++i) prob.data[i] = float(rng.uniform());
        auto gt = random_binary(rng, s, s, 0.5);
        // reference: per-pixel errors collected first, then summed back to front
        std::vector<double> errs;
        for (size_t i = 0; i < prob.numel(); ++i)
            errs.push_back(std::abs(double(prob.data[i]) - double(gt.data[i])));
        double ref = 0;
        for (auto it = errs.rbegin(); it != errs.rend(); ++it) ref += *it;
        ref /= double(errs.size());
        EXPECT_NEAR(mask_mae(prob, gt), ref, 1e-12);
    }
}

TEST(Mae, RejectsBadInputs) {
    Tensor<float> p({2, 2}), gt({2, 2});
    Tensor<float> wide({2, 3});
    EXPECT_THROW(mask_mae(p, wide), ConfigError);

    Tensor<float> hot({2, 2});
    hot.data[0] = 1.5f;
    EXPECT_THROW(mask_mae(hot, gt), ConfigError);
    hot.data[0] = -0.1f;
    EXPECT_THROW(mask_mae(hot, gt), ConfigError);

    Tensor<float> soft_gt({2, 2});
    soft_gt.data[0] = 0.25f;
    EXPECT_THROW(mask_mae(p, soft_gt), ConfigError);
}

TEST(Threshold, ZeroSelectsEverythingAndTheBoundaryIsInclusive) {
    Tensor<float> prob({1, 4});
    prob.data = {0.0f, 0.3f, 0.5f, 0.9f};
    auto all = threshold_mask(prob, 0.0);
    for (size_t i = 0; i < all.numel(); ++i) EXPECT_EQ(all.data[i], 1.0f);

    auto half = threshold_mask(prob, 0.5);
    EXPECT_EQ(half.data[0], 0.0f);
    EXPECT_EQ(half.data[1], 0.0f);
    EXPECT_EQ(half.data[2], 1.0f);  // p == threshold counts as selected
    EXPECT_EQ(half.data[3], 1.0f);
}

// A model with all-zero logits predicts p=0.5 everywhere; its training loss
// must start at ln 2 regardless of the target. This pins the constant the
// loss curves are read against.
TEST(BceContext, ZeroLogitsCostLnTwoForAnyTarget) {
    Rng rng(31);
    auto z = make_tensor<double>({16});
    auto y = make_tensor<double>({16});
    for (size_t i = 0; i < 16; ++i) y->data[i] = rng.uniform() < 0.5 ? 1.0 : 0.0;
    auto loss = bce_loss<double>(nullptr, z, y);
    EXPECT_NEAR(loss->data[0], std::log(2.0), 1e-9);
}

TEST(Evaluate, ModeFilterPartitionsTheSamples) {
    auto spec = tiny_scene_spec();
    spec.prompt_modes = {"interior", "edge"};
    auto data = generate_dataset(spec, 11, 3);
    Model<float> model(tiny_config(), VariantSpec::from_name("none"), 5);

    auto all = evaluate(model, data, nullptr);
    auto interior = evaluate(model, data, nullptr, 0.5, "interior");
    auto edge = evaluate(model, data, nullptr, 0.5, "edge");
    ASSERT_GT(all.samples, 0u);
    EXPECT_EQ(interior.samples + edge.samples, all.samples);
    EXPECT_EQ(all.skipped, 0u);
    EXPECT_GE(all.miou, 0.0);
    EXPECT_LE(all.miou, 100.0);
    EXPECT_EQ(all.per_sample_iou.size(), all.samples);
}

TEST(Evaluate, ClassesMissingFromTheBankAreCountedAsSkipped) {
    auto data = generate_dataset(tiny_scene_spec(), 12, 3);
    Model<float> model(tiny_config(), VariantSpec::from_name("parallel_text"), 5);
    auto bank = TextBank::build_synthetic({"disk"}, tiny_config().text_dim, 9);

    size_t disk_samples = 0, square_samples = 0;
    for (auto& sc : data.scenes)
        for (auto& sm : sc.samples) (sm.class_name == "disk" ? disk_samples : square_samples)++;

    auto res = evaluate(model, data, &bank);
    EXPECT_EQ(res.samples, disk_samples);
    EXPECT_EQ(res.skipped, square_samples);
    EXPECT_GT(res.skipped, 0u);
}

TEST(Evaluate, TextVariantsRefuseToRunWithoutABank) {
    auto data = generate_dataset(tiny_scene_spec(), 13, 1);
    Model<float> model(tiny_config(), VariantSpec::from_name("parallel_text"), 5);
    EXPECT_THROW(evaluate(model, data, nullptr), ConfigError);
    EXPECT_THROW(partial_recall(model, data, nullptr), ConfigError);
}

TEST(Recall, HandpickedPredictionsScoreExactly) {
    // two disks, prompt points confined to the first: the second is the
    // withheld instance the recall is about
    SceneSpec spec = tiny_scene_spec();
    spec.instances_per_class_min = 2;
    spec.instances_per_class_max = 2;
    auto scene = generate_scene(spec, 21);

    size_t first = SIZE_MAX, second = SIZE_MAX;
    for (size_t i = 0; i < scene.instances.size(); ++i) {
        if (scene.instances[i].class_name != "disk") continue;
        if (first == SIZE_MAX) first = i;
        else second = i;
    }
    ASSERT_NE(second, SIZE_MAX);

    PromptSample sm;
    sm.class_name = "disk";
    sm.prompt_mode = "partial_instances";
    auto cand = interior_candidates(scene.instances[first].mask);
    ASSERT_GE(cand.size(), 2u);
    sm.points = {cand[0], cand[1]};

    auto idx = unprompted_instances(scene, sm);
    ASSERT_EQ(idx.size(), 1u);
    EXPECT_EQ(idx[0], second);

    const size_t s = scene.image.shape[0];
    Tensor<float> ones({s, s});
    for (size_t i = 0; i < ones.numel(); ++i) ones.data[i] = 1.0f;
    Tensor<float> zeros({s, s});

    EXPECT_DOUBLE_EQ(*unprompted_recall_on(scene, sm, ones), 1.0);
    EXPECT_DOUBLE_EQ(*unprompted_recall_on(scene, sm, zeros), 0.0);
    // predicting exactly the withheld disk and nothing else is also perfect:
    // recall does not care about the prompted instance
    EXPECT_DOUBLE_EQ(*unprompted_recall_on(scene, sm, scene.instances[second].mask), 1.0);
    // ...and predicting only the prompted disk recalls nothing
    EXPECT_DOUBLE_EQ(*unprompted_recall_on(scene, sm, scene.instances[first].mask), 0.0);
}

TEST(Recall, WorksAtTheLogitsResolution) {
    SceneSpec spec = tiny_scene_spec();
    spec.instances_per_class_min = 2;
    spec.instances_per_class_max = 2;
    auto scene = generate_scene(spec, 22);

    size_t first = SIZE_MAX, second = SIZE_MAX;
    for (size_t i = 0; i < scene.instances.size(); ++i) {
        if (scene.instances[i].class_name != "square") continue;
        if (first == SIZE_MAX) first = i;
        else second = i;
    }
    ASSERT_NE(second, SIZE_MAX);

    PromptSample sm;
    sm.class_name = "square";
    sm.prompt_mode = "partial_instances";
    auto cand = interior_candidates(scene.instances[first].mask);
    ASSERT_FALSE(cand.empty());
    sm.points = {cand[0]};

    // a half-resolution prediction equal to the resampled withheld mask
    const size_t g = scene.image.shape[0] / 2;
    auto down = nearest_resample(scene.instances[second].mask, g, g);
    auto r = unprompted_recall_on(scene, sm, down);
    ASSERT_TRUE(r.has_value());
    EXPECT_DOUBLE_EQ(*r, 1.0);
}

TEST(Recall, FullyPromptedSamplesYieldNoValue) {
    auto scene = generate_scene(tiny_scene_spec(), 23);  // one instance per class
    ASSERT_FALSE(scene.samples.empty());
    const auto& sm = scene.samples.front();  // interior points inside the only instance
    const size_t s = scene.image.shape[0];
    Tensor<float> ones({s, s});
    for (size_t i = 0; i < ones.numel(); ++i) ones.data[i] = 1.0f;
    EXPECT_FALSE(unprompted_recall_on(scene, sm, ones).has_value());
}

TEST(Recall, RejectsNonSquarePredictions) {
    auto scene = generate_scene(tiny_scene_spec(), 24);
    ASSERT_FALSE(scene.samples.empty());
    Tensor<float> wide({4, 8});
    EXPECT_THROW(unprompted_recall_on(scene, scene.samples.front(), wide), ConfigError);
}

TEST(Recall, PartialRecallAveragesOnlyPartialSamples) {
    SceneSpec spec = tiny_scene_spec();
    spec.instances_per_class_min = 2;
    spec.instances_per_class_max = 2;
    spec.prompt_modes = {"interior", "partial_instances"};
    auto data = generate_dataset(spec, 25, 3);

    size_t partial = 0;
    for (auto& sc : data.scenes)
        for (auto& sm : sc.samples)
            if (sm.prompt_mode == "partial_instances") ++partial;
    ASSERT_GT(partial, 0u);

    Model<float> model(tiny_config(), VariantSpec::from_name("none"), 5);
    auto res = partial_recall(model, data, nullptr);
    EXPECT_EQ(res.samples + res.skipped, partial);
    EXPECT_GE(res.mean_recall, 0.0);
    EXPECT_LE(res.mean_recall, 1.0);
}
