#include <gtest/gtest.h>
#include <sys/wait.h>

#include <array>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "json.hpp"

// Exercises the installed binary the way a user would: real processes, real
// exit codes, stdout and stderr folded together.

namespace fs = std::filesystem;

namespace {

struct RunResult {
    int code = -1;
    std::string output;
};

RunResult run_cli(const std::string& args, const std::string& env = "") {
    std::string cmd = env + " " + std::string(PTX_CLI_PATH) + " " + args + " 2>&1";
    FILE* pipe = popen(cmd.c_str(), "r");
    if (!pipe) throw std::runtime_error("popen failed");
    RunResult r;
    std::array<char, 512> buf;
    while (fgets(buf.data(), buf.size(), pipe)) r.output += buf.data();
    int status = pclose(pipe);
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

fs::path fresh_dir(const std::string& name) {
    fs::path p = fs::temp_directory_path() / ("ptx_cli_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

fs::path write_tiny_spec(const fs::path& dir) {
    nlohmann::json j = {{"image_size", 32},
                        {"classes", {"disk", "square"}},
                        {"instances_per_class", {1, 2}},
                        {"radius", {4, 6}},
                        {"points_per_prompt", 3},
                        {"prompt_modes", {"interior", "partial_instances"}}};
    auto p = dir / "spec.json";
    std::ofstream(p) << j.dump(2);
    return p;
}

fs::path write_tiny_model_config(const fs::path& dir) {
    nlohmann::json j = {{"image_size", 32}, {"patch_size", 4},  {"embed_dim", 8},
                        {"depth", 2},       {"heads", 2},       {"bottleneck", 4},
                        {"text_dim", 8},    {"decoder_dim", 8}, {"mlp_hidden", 16}};
    auto p = dir / "model.json";
    std::ofstream(p) << j.dump(2);
    return p;
}

fs::path write_train_config(const fs::path& dir, size_t epochs, uint64_t seed) {
    nlohmann::json j = {{"epochs", epochs}, {"seed", seed}, {"lr", 1e-2}, {"variant", "parallel_text"}};
    auto p = dir / "train.json";
    std::ofstream(p) << j.dump(2);
    return p;
}

nlohmann::json read_json(const fs::path& p) {
    std::ifstream in(p);
    nlohmann::json j;
    in >> j;
    return j;
}

}  // namespace

TEST(Cli, VersionAndHelpExitZero) {
    auto v = run_cli("--version");
    EXPECT_EQ(v.code, 0);
    EXPECT_NE(v.output.find("ptx 0.1.0"), std::string::npos);

    auto h = run_cli("--help");
    EXPECT_EQ(h.code, 0);
    EXPECT_NE(h.output.find("gen"), std::string::npos);
    EXPECT_NE(h.output.find("ablate"), std::string::npos);
}

TEST(Cli, MissingSubcommandOrOptionIsExitTwo) {
    EXPECT_EQ(run_cli("").code, 2);
    EXPECT_EQ(run_cli("gen").code, 2);               // --spec/--out/--count required
    EXPECT_EQ(run_cli("frobnicate").code, 2);        // unknown subcommand
    EXPECT_EQ(run_cli("gen --spec a --out b").code, 2);
}

TEST(Cli, GenWritesDatasetManifestAndSummary) {
    auto dir = fresh_dir("gen");
    auto spec = write_tiny_spec(dir);
    auto out = dir / "data";
    auto r = run_cli("gen --spec " + spec.string() + " --out " + out.string() + " --seed 7 --count 4");
    ASSERT_EQ(r.code, 0) << r.output;
    EXPECT_NE(r.output.find("wrote 4 scenes"), std::string::npos);
    EXPECT_NE(r.output.find("disk:"), std::string::npos);
    EXPECT_NE(r.output.find("square:"), std::string::npos);
    EXPECT_TRUE(fs::exists(out / "scenes.jsonl"));
    EXPECT_TRUE(fs::exists(out / "spec.json"));

    auto manifest = read_json(out / "run_manifest.json");
    EXPECT_EQ(manifest.at("command"), "gen");
    EXPECT_EQ(manifest.at("version"), "0.1.0");
    EXPECT_EQ(manifest.at("config").at("seed"), 7);
    EXPECT_TRUE(manifest.contains("duration_seconds"));
}

TEST(Cli, GenRejectsABadSpecWithoutTouchingTheOutput) {
    auto dir = fresh_dir("gen_bad");
    nlohmann::json j = {{"classes", {"disk", "square"}}, {"radius", {2, 3}}};  // radius_min < 4
    auto spec = dir / "bad.json";
    std::ofstream(spec) << j.dump();
    auto out = dir / "data";
    auto r = run_cli("gen --spec " + spec.string() + " --out " + out.string() + " --count 2");
    EXPECT_EQ(r.code, 2);
    EXPECT_FALSE(fs::exists(out));
}

TEST(Cli, GenUnreadableSpecIsExitFour) {
    auto dir = fresh_dir("gen_io");
    auto r = run_cli("gen --spec " + (dir / "absent.json").string() + " --out " + (dir / "d").string() +
                     " --count 1");
    EXPECT_EQ(r.code, 4);
    EXPECT_NE(r.output.find("cannot open"), std::string::npos);
}

TEST(Cli, GenCanEmitAMatchingBank) {
    auto dir = fresh_dir("gen_bank");
    auto spec = write_tiny_spec(dir);
    auto out = dir / "data";
    auto bank = dir / "bank";
    auto r = run_cli("gen --spec " + spec.string() + " --out " + out.string() +
                     " --count 2 --bank-out " + bank.string() + " --bank-dim 8");
    ASSERT_EQ(r.code, 0) << r.output;
    EXPECT_TRUE(fs::exists(bank / "manifest.json"));
    EXPECT_TRUE(fs::exists(bank / "embeddings.ptx"));
    auto m = read_json(bank / "manifest.json");
    EXPECT_EQ(m.at("d_t"), 8);
    EXPECT_TRUE(m.at("classes").contains("disk"));
}

class CliPipeline : public ::testing::Test {
  protected:
    // one dataset + bank + trained checkpoint shared by the pipeline tests
    static void SetUpTestSuite() {
        dir_ = new fs::path(fresh_dir("pipeline"));
        auto spec = write_tiny_spec(*dir_);
        auto model = write_tiny_model_config(*dir_);
        auto train = write_train_config(*dir_, 1, 3);
        auto r1 = run_cli("gen --spec " + spec.string() + " --out " + (*dir_ / "data").string() +
                          " --seed 1 --count 6 --bank-out " + (*dir_ / "bank").string() + " --bank-dim 8");
        ASSERT_EQ(r1.code, 0) << r1.output;
        auto r2 = run_cli("train --data " + (*dir_ / "data").string() + " --config " + train.string() +
                          " --model-config " + model.string() + " --bank " + (*dir_ / "bank").string() +
                          " --out " + (*dir_ / "run").string());
        ASSERT_EQ(r2.code, 0) << r2.output;
    }
    static void TearDownTestSuite() {
        delete dir_;
        dir_ = nullptr;
    }
    static fs::path* dir_;
};

fs::path* CliPipeline::dir_ = nullptr;

TEST_F(CliPipeline, TrainProducedCheckpointLossCurveAndManifest) {
    EXPECT_TRUE(fs::exists(*dir_ / "run" / "checkpoint" / "manifest.json"));
    EXPECT_TRUE(fs::exists(*dir_ / "run" / "loss.csv"));
    auto manifest = read_json(*dir_ / "run" / "run_manifest.json");
    EXPECT_EQ(manifest.at("command"), "train");
    EXPECT_EQ(manifest.at("config").at("train").at("variant"), "parallel_text");
    EXPECT_EQ(manifest.at("config").at("model").at("image_size"), 32);
}

TEST_F(CliPipeline, EvalScoresTheCheckpoint) {
    auto r = run_cli("eval --data " + (*dir_ / "data").string() + " --checkpoint " +
                     (*dir_ / "run" / "checkpoint").string() + " --bank " + (*dir_ / "bank").string() +
                     " --out " + (*dir_ / "evalout").string());
    ASSERT_EQ(r.code, 0) << r.output;
    EXPECT_NE(r.output.find("mIoU"), std::string::npos);
    EXPECT_NE(r.output.find("variant parallel_text"), std::string::npos);
    auto j = read_json(*dir_ / "evalout" / "eval.json");
    EXPECT_GE(j.at("miou").get<double>(), 0.0);
    EXPECT_LE(j.at("miou").get<double>(), 100.0);
    EXPECT_GT(j.at("samples").get<size_t>(), 0u);
}

TEST_F(CliPipeline, EvalFiltersByPromptMode) {
    auto all = run_cli("eval --data " + (*dir_ / "data").string() + " --checkpoint " +
                       (*dir_ / "run" / "checkpoint").string() + " --bank " + (*dir_ / "bank").string());
    auto lone = run_cli("eval --data " + (*dir_ / "data").string() + " --checkpoint " +
                        (*dir_ / "run" / "checkpoint").string() + " --bank " + (*dir_ / "bank").string() +
                        " --mode interior");
    ASSERT_EQ(all.code, 0);
    ASSERT_EQ(lone.code, 0);
    EXPECT_NE(all.output, lone.output);

    auto bad = run_cli("eval --data " + (*dir_ / "data").string() + " --checkpoint " +
                       (*dir_ / "run" / "checkpoint").string() + " --bank " + (*dir_ / "bank").string() +
                       " --mode sideways");
    EXPECT_EQ(bad.code, 2);
}

TEST_F(CliPipeline, EvalRefusesAPrecisionMismatch) {
    auto r = run_cli("eval --data " + (*dir_ / "data").string() + " --checkpoint " +
                         (*dir_ / "run" / "checkpoint").string() + " --bank " + (*dir_ / "bank").string(),
                     "PTX_PRECISION=f64");
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.output.find("f32"), std::string::npos);
}

TEST_F(CliPipeline, ResumeContinuesInPlace) {
    auto longer = write_train_config(*dir_, 2, 3);  // same seed/variant, one more epoch
    auto model = *dir_ / "model.json";
    auto r = run_cli("train --data " + (*dir_ / "data").string() + " --config " + longer.string() +
                     " --model-config " + model.string() + " --bank " + (*dir_ / "bank").string() +
                     " --out " + (*dir_ / "run").string() + " --resume " +
                     (*dir_ / "run" / "checkpoint").string());
    ASSERT_EQ(r.code, 0) << r.output;
    EXPECT_NE(r.output.find("resuming from step"), std::string::npos);
}

TEST_F(CliPipeline, TrainGuardsItsPreconditions) {
    std::string base = "train --data " + (*dir_ / "data").string() + " --model-config " +
                       (*dir_ / "model.json").string() + " --out " + (*dir_ / "guard").string();
    auto none = run_cli(base + " --variant none");
    EXPECT_EQ(none.code, 2);
    EXPECT_NE(none.output.find("trains nothing"), std::string::npos);

    auto missing_bank = run_cli(base + " --variant parallel_text");
    EXPECT_EQ(missing_bank.code, 2);
    EXPECT_NE(missing_bank.output.find("--bank"), std::string::npos);

    auto stray_bank = run_cli(base + " --variant parallel --bank " + (*dir_ / "bank").string());
    EXPECT_EQ(stray_bank.code, 2);

    auto bad_variant = run_cli(base + " --variant waffles");
    EXPECT_EQ(bad_variant.code, 2);
}

TEST(Cli, BadPrecisionEnvIsExitTwo) {
    auto r = run_cli("params", "PTX_PRECISION=f16");
    EXPECT_EQ(r.code, 2);
    EXPECT_NE(r.output.find("f16"), std::string::npos);
}

TEST(Cli, ParamsPrintsTheBudget) {
    auto r = run_cli("params");
    ASSERT_EQ(r.code, 0);
    EXPECT_NE(r.output.find("trainable"), std::string::npos);
    EXPECT_NE(r.output.find("37248"), std::string::npos);
    EXPECT_NE(r.output.find("9.65%"), std::string::npos);

    auto listed = run_cli("params --tensors");
    EXPECT_NE(listed.output.find("mlp_adapter"), std::string::npos);
}

TEST(Cli, GradcheckPassesByDefaultAndFailsOnAnAbsurdTolerance) {
    auto ok = run_cli("gradcheck --coords 2");
    ASSERT_EQ(ok.code, 0) << ok.output;
    EXPECT_NE(ok.output.find("max rel err"), std::string::npos);
    EXPECT_NE(ok.output.find("passed"), std::string::npos);

    auto fail = run_cli("gradcheck --coords 2 --tolerance 1e-18");
    EXPECT_EQ(fail.code, 3);
    EXPECT_NE(fail.output.find("exceeds"), std::string::npos);
}

TEST(Cli, AblateRunsTheSmallTable1) {
    auto dir = fresh_dir("ablate");
    auto r = run_cli("ablate --study table1 --small --work " + (dir / "work").string() + " --out " +
                     (dir / "reports").string());
    ASSERT_EQ(r.code, 0) << r.output;
    EXPECT_NE(r.output.find("study: table1"), std::string::npos);
    EXPECT_NE(r.output.find("parallel_text"), std::string::npos);
    EXPECT_TRUE(fs::exists(dir / "reports" / "table1.txt"));
    EXPECT_TRUE(fs::exists(dir / "reports" / "table1.json"));
    auto manifest = read_json(dir / "reports" / "run_manifest.json");
    EXPECT_EQ(manifest.at("command"), "ablate");
    EXPECT_EQ(manifest.at("config").at("study"), "table1");

    auto bad = run_cli("ablate --study tablezero --small --work " + (dir / "w2").string() + " --out " +
                       (dir / "r2").string());
    EXPECT_EQ(bad.code, 2);
}
