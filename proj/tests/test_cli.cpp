#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "tactus/cli.hpp"

namespace {

namespace fs = std::filesystem;

using tactus::ConfigError;
using tactus::RunConfig;

int run(std::vector<std::string> args) { return tactus::cli_main(std::move(args)); }

std::string fresh_dir(const std::string& name) {
    const fs::path p = fs::temp_directory_path() / "tactus_cli" / name;
    fs::remove_all(p);
    return p.string();
}

std::string slurp(const std::string& path) { return tactus::detail::read_file(path); }

int count_lines(const std::string& text) {
    int n = 0;
    for (char c : text)
        if (c == '\n') ++n;
    return n;
}

// Tiny corpus + model shared by the pipeline tests: 3 structured + 2 wild
// clips of 8 frames, 2 joints, and a 2-layer width-8 denoiser.
std::string tiny_datagen(const std::string& dir) {
    EXPECT_EQ(run({"datagen", "--out", dir, "--n-structured", "3", "--n-wild", "2", "--frames", "8", "--joints",
                   "2", "--seed", "5"}),
              0);
    return dir + "/dataset.mids";
}

std::vector<std::string> tiny_model_flags() {
    return {"--layers", "2", "--d-model", "8", "--heads",         "2", "--frames", "8",
            "--joints", "2", "--vocab",   "20", "--time-enc-dims", "4", "--lora-rank", "2",
            "--lora-alpha", "2"};
}

std::string tiny_base(const std::string& data, const std::string& dir) {
    std::vector<std::string> args = {"train", "--stage", "base", "--data", data, "--out", dir,
                                     "--steps", "4",     "--batch", "2",   "--seed", "3"};
    for (const auto& f : tiny_model_flags()) args.push_back(f);
    EXPECT_EQ(run(args), 0);
    return dir + "/base.ckpt";
}

TEST(Config, ParsesTypesAndRejectsMalformedLines) {
    RunConfig c = tactus::parse_config("# comment\n\n  steps = 12 # trailing\nlr=0.5\nflag=true\nzica=1,3\nname=x\n");
    EXPECT_EQ(c.get_int("steps", 0), 12);
    EXPECT_DOUBLE_EQ(c.get_real("lr", 0), 0.5);
    EXPECT_TRUE(c.get_bool("flag", false));
    EXPECT_EQ(c.get_int_list("zica", {}), (std::vector<int>{1, 3}));
    EXPECT_EQ(c.get_str("name", ""), "x");
    EXPECT_EQ(c.get_int("missing", 7), 7);
    EXPECT_THROW(c.get("missing"), ConfigError);
    EXPECT_THROW(c.get_int("name", 0), ConfigError);
    EXPECT_THROW(c.get_bool("lr", false), ConfigError);
    EXPECT_THROW(tactus::parse_config("just words\n"), ConfigError);
    EXPECT_THROW(tactus::parse_config("=value\n"), ConfigError);

    RunConfig over;
    over.set("steps", "99");
    tactus::merge_overrides(c, over);
    EXPECT_EQ(c.get_int("steps", 0), 99);
    EXPECT_EQ(tactus::parse_config(c.resolved()).kv, c.kv);
}

TEST(Datagen, WritesDatasetManifestsAndResolvedConfig) {
    const std::string dir = fresh_dir("datagen");
    const std::string data = tiny_datagen(dir);
    auto clips = tactus::load_clips<double>(data);
    EXPECT_EQ(clips.size(), 5u);
    EXPECT_EQ(count_lines(slurp(dir + "/manifest.csv")), 5);
    auto test_clips = tactus::load_clips<double>(dir + "/test.mids");
    EXPECT_EQ(count_lines(slurp(dir + "/test_manifest.csv")), static_cast<int>(test_clips.size()));
    const std::string resolved = slurp(dir + "/datagen.config");
    EXPECT_NE(resolved.find("n_structured=3\n"), std::string::npos);
    EXPECT_NE(resolved.find("seed=5\n"), std::string::npos);
    EXPECT_NE(resolved.find("tempo_lo=80\n"), std::string::npos);
}

TEST(Datagen, RepeatedSeedIsByteIdentical) {
    const std::string a = fresh_dir("datagen_a"), b = fresh_dir("datagen_b");
    tiny_datagen(a);
    tiny_datagen(b);
    EXPECT_EQ(slurp(a + "/dataset.mids"), slurp(b + "/dataset.mids"));
    EXPECT_EQ(slurp(a + "/test.mids"), slurp(b + "/test.mids"));
    EXPECT_EQ(slurp(a + "/manifest.csv"), slurp(b + "/manifest.csv"));
}

TEST(Datagen, InvalidTempoRangeExitsTwoWithNoPartialFiles) {
    const std::string dir = fresh_dir("datagen_bad");
    EXPECT_EQ(run({"datagen", "--out", dir, "--tempo-lo", "180", "--tempo-hi", "90"}), 2);
    EXPECT_FALSE(fs::exists(dir));
}

TEST(Datagen, FlagsOverrideConfigFile) {
    const std::string dir = fresh_dir("datagen_cfgfile");
    fs::create_directories(dir);
    const std::string cfg_path = dir + "/in.config";
    std::ofstream(cfg_path) << "n_structured=3\nn_wild=2\nframes=8\njoints=2\nseed=5\n";
    EXPECT_EQ(run({"datagen", "--config", cfg_path, "--out", dir + "/out", "--n-structured", "4"}), 0);
    EXPECT_EQ(count_lines(slurp(dir + "/out/manifest.csv")), 6);
}

TEST(ExitCodes, HelpUsageAndMissingInputs) {
    EXPECT_EQ(run({"--help"}), 0);
    EXPECT_EQ(run({}), 2);
    EXPECT_EQ(run({"frobnicate"}), 2);
    EXPECT_EQ(run({"datagen", "--no-such-flag"}), 2);
    EXPECT_EQ(run({"train", "--stage", "base"}), 2);
    const std::string dir = fresh_dir("exitcodes");
    EXPECT_EQ(run({"train", "--stage", "base", "--data", dir + "/nope.mids", "--out", dir}), 3);
    EXPECT_EQ(run({"eval", "--clips", dir + "/nope.mids", "--out", dir}), 3);
    EXPECT_EQ(run({"datagen", "--out", dir, "--n-structured", "soon"}), 2);
}

TEST(Train, BasePipelineWritesCheckpointCurveAndConfig) {
    const std::string dir = fresh_dir("train_base");
    const std::string data = tiny_datagen(dir + "/data");
    const std::string ckpt = tiny_base(data, dir + "/run");
    auto base = tactus::load_checkpoint<double>(ckpt);
    EXPECT_EQ(base.stage, tactus::TrainStage::base);
    EXPECT_EQ(base.step, 4);
    EXPECT_TRUE(base.cfg.zica_layers.empty());
    const std::string curve = slurp(dir + "/run/base_curve.csv");
    EXPECT_EQ(count_lines(curve), 5);
    const std::string resolved = slurp(dir + "/run/train.config");
    EXPECT_NE(resolved.find("lr=0.0001\n"), std::string::npos);
    EXPECT_NE(resolved.find("beta0=3\n"), std::string::npos);
    EXPECT_NE(resolved.find("gamma=6\n"), std::string::npos);
    EXPECT_NE(resolved.find("stage=base\n"), std::string::npos);
}

TEST(Train, StepsDefaultEchoesPresetAndFourThousand) {
    const std::string dir = fresh_dir("train_defaults");
    tiny_datagen(dir + "/data");
    // steps=1 keeps the run cheap while the echoed default is what matters
    std::vector<std::string> args = {"train", "--stage", "base", "--data", dir + "/data/dataset.mids",
                                     "--out", dir + "/a", "--steps", "1", "--batch", "1"};
    for (const auto& f : tiny_model_flags()) args.push_back(f);
    EXPECT_EQ(run(args), 0);
    EXPECT_NE(slurp(dir + "/a/train.config").find("steps=1\n"), std::string::npos);
    EXPECT_EQ(run({"train", "--stage", "base", "--data", dir + "/data/dataset.mids", "--out", dir + "/b",
                   "--preset", "desk", "--stop-after", "0", "--batch", "1", "--layers", "2", "--d-model", "8",
                   "--heads", "2", "--frames", "8", "--joints", "2", "--vocab", "20", "--time-enc-dims", "4",
                   "--lora-rank", "2"}),
              0);
    const std::string desk = slurp(dir + "/b/train.config");
    EXPECT_NE(desk.find("steps=2000\n"), std::string::npos);
    EXPECT_NE(desk.find("preset=desk\n"), std::string::npos);
    EXPECT_EQ(run({"train", "--stage", "base", "--data", dir + "/data/dataset.mids", "--out", dir + "/c",
                   "--stop-after", "0", "--batch", "1", "--layers", "2", "--d-model", "8", "--heads", "2",
                   "--frames", "8", "--joints", "2", "--vocab", "20", "--time-enc-dims", "4", "--lora-rank", "2"}),
              0);
    EXPECT_NE(slurp(dir + "/c/train.config").find("steps=4000\n"), std::string::npos);
}

TEST(Train, AdapterStageRequiresBaseCheckpoint) {
    const std::string dir = fresh_dir("train_adapter_usage");
    const std::string data = tiny_datagen(dir + "/data");
    EXPECT_EQ(run({"train", "--stage", "adapter", "--data", data, "--out", dir}), 2);
    EXPECT_EQ(run({"train", "--stage", "sideways", "--data", data, "--out", dir}), 2);
}

TEST(Train, AdapterStageWithExplicitLayers) {
    const std::string dir = fresh_dir("train_adapter");
    const std::string data = tiny_datagen(dir + "/data");
    const std::string base = tiny_base(data, dir + "/base");
    EXPECT_EQ(run({"train", "--stage", "adapter", "--data", data, "--base-ckpt", base, "--out", dir + "/ad",
                   "--steps", "4", "--batch", "2", "--seed", "3", "--zica", "1"}),
              0);
    auto ck = tactus::load_checkpoint<double>(dir + "/ad/adapter.ckpt");
    EXPECT_EQ(ck.stage, tactus::TrainStage::adapter);
    EXPECT_EQ(ck.cfg.zica_layers, (std::vector<int>{1}));
    EXPECT_EQ(ck.params.count("adpt.zica1.wo"), 1u);
    EXPECT_EQ(count_lines(slurp(dir + "/ad/adapter_curve.csv")), 5);
    EXPECT_FALSE(fs::exists(dir + "/ad/adaptability.csv"));
}

TEST(Train, AdapterStageProbesWhenNoLayersGiven) {
    const std::string dir = fresh_dir("train_adapter_probe");
    const std::string data = tiny_datagen(dir + "/data");
    const std::string base = tiny_base(data, dir + "/base");
    EXPECT_EQ(run({"train", "--stage", "adapter", "--data", data, "--base-ckpt", base, "--out", dir + "/ad",
                   "--steps", "2", "--batch", "1", "--probe-set", "2", "--probe-samples", "1", "--probe-steps",
                   "2", "--zica-k", "1"}),
              0);
    auto ck = tactus::load_checkpoint<double>(dir + "/ad/adapter.ckpt");
    EXPECT_EQ(ck.cfg.zica_layers.size(), 1u);
    const std::string csv = slurp(dir + "/ad/adaptability.csv");
    EXPECT_EQ(count_lines(csv), 3);
    EXPECT_EQ(csv.rfind("layer,score,rank,selected\n", 0), 0u);
}

TEST(Probe, WritesAdaptabilityTable) {
    const std::string dir = fresh_dir("probe");
    const std::string data = tiny_datagen(dir + "/data");
    const std::string base = tiny_base(data, dir + "/base");
    EXPECT_EQ(run({"probe", "--ckpt", base, "--data", data, "--out", dir + "/p", "--probe-set", "2",
                   "--probe-samples", "1", "--probe-steps", "2"}),
              0);
    const std::string csv = slurp(dir + "/p/adaptability.csv");
    EXPECT_EQ(count_lines(csv), 3);
    EXPECT_TRUE(fs::exists(dir + "/p/probe.config"));
}

TEST(Sample, GeneratesDeterministicClipsAndHonorsSpeed) {
    const std::string dir = fresh_dir("sample");
    const std::string data = tiny_datagen(dir + "/data");
    const std::string base = tiny_base(data, dir + "/base");
    auto gen = [&](const std::string& out, std::vector<std::string> extra) {
        std::vector<std::string> args = {"sample", "--ckpt", base, "--out", out,    "--n",
                                         "2",      "--steps", "3",  "--seed", "11"};
        for (auto& e : extra) args.push_back(std::move(e));
        return run(args);
    };
    EXPECT_EQ(gen(dir + "/a", {}), 0);
    EXPECT_EQ(gen(dir + "/b", {}), 0);
    EXPECT_EQ(slurp(dir + "/a/samples.mids"), slurp(dir + "/b/samples.mids"));
    auto clips = tactus::load_clips<double>(dir + "/a/samples.mids");
    ASSERT_EQ(clips.size(), 2u);
    EXPECT_EQ(clips[0].clip.poses.shape, (std::vector<int>{8, 2, 2}));
    EXPECT_EQ(clips[0].clip.source_tag, tactus::kSourceGenerated);
    EXPECT_NEAR(clips[0].track.tempo_bpm, 120.0, 1e-4);
    EXPECT_EQ(count_lines(slurp(dir + "/a/samples_manifest.csv")), 2);

    EXPECT_EQ(gen(dir + "/fast", {"--speed", "1.25"}), 0);
    auto fast = tactus::load_clips<double>(dir + "/fast/samples.mids");
    EXPECT_NEAR(fast[0].track.tempo_bpm, 150.0, 1e-4);
    EXPECT_NE(slurp(dir + "/fast/samples.mids"), slurp(dir + "/a/samples.mids"));

    EXPECT_EQ(gen(dir + "/bad", {"--style", "12"}), 2);
}

TEST(Eval, ScoresAClipsFileAndEmitsSeries) {
    const std::string dir = fresh_dir("eval");
    const std::string data = tiny_datagen(dir + "/data");
    EXPECT_EQ(run({"eval", "--clips", data, "--out", dir + "/e"}), 0);
    const std::string json = slurp(dir + "/e/metrics.json");
    EXPECT_NE(json.find("\"beat_alignment\""), std::string::npos);
    EXPECT_NE(json.find("\"per_clip_alignment\""), std::string::npos);
    const std::string csv = slurp(dir + "/e/metrics.csv");
    EXPECT_EQ(csv.rfind("clip,beat_alignment\n", 0), 0u);
    EXPECT_EQ(count_lines(csv), 6);
    EXPECT_EQ(slurp(dir + "/e/energy.csv").rfind("time,energy,is_beat_frame\n", 0), 0u);
    EXPECT_EQ(run({"eval", "--clips", data, "--out", dir + "/bad", "--energy-clip", "9"}), 2);
}

TEST(Report, UntrainedAdaptersShowZeroDrift) {
    const std::string dir = fresh_dir("report_zero");
    const std::string data = tiny_datagen(dir + "/data");
    const std::string base = tiny_base(data, dir + "/base");
    // stop_after=0 attaches adapters and saves without a single step
    EXPECT_EQ(run({"train", "--stage", "adapter", "--data", data, "--base-ckpt", base, "--out", dir + "/ad",
                   "--steps", "4", "--stop-after", "0", "--batch", "1", "--seed", "3", "--zica", "1"}),
              0);
    EXPECT_EQ(run({"report", "--base-ckpt", base, "--adapter-ckpt", dir + "/ad/adapter.ckpt", "--test",
                   dir + "/data/test.mids", "--out", dir + "/r", "--eval-n", "2", "--eval-steps", "3",
                   "--gamma", "1", "--tempo-n", "1", "--drift-n", "1", "--seed", "9"}),
              0);
    const std::string csv = slurp(dir + "/r/report.csv");
    EXPECT_EQ(count_lines(csv), 3);
    const size_t row = csv.find("\nadapted,");
    ASSERT_NE(row, std::string::npos);
    // variant,beat,diversity,drift,... -> drift is the fourth field
    size_t pos = row + 1;
    for (int commas = 0; commas < 3; ++commas) pos = csv.find(',', pos) + 1;
    EXPECT_EQ(std::stod(csv.substr(pos)), 0.0);
}

TEST(Report, RunsAllFourAblationsToCompletion) {
    const std::string dir = fresh_dir("report_ablations");
    const std::string data = tiny_datagen(dir + "/data");
    const std::string base = tiny_base(data, dir + "/base");
    EXPECT_EQ(run({"report", "--base-ckpt", base, "--test", dir + "/data/test.mids", "--data", data,
                   "--out", dir + "/r", "--eval-n", "2", "--eval-steps", "3", "--gamma", "1", "--tempo-n", "1",
                   "--drift-n", "1", "--ablation-steps", "2", "--batch", "1", "--seed", "9", "--probe-set", "2",
                   "--probe-samples", "1", "--probe-steps", "2", "--zica-k", "1", "--no-zica-selection",
                   "--lora-rank", "2", "--uniform-schedule", "--feature-addition"}),
              0);
    const std::string csv = slurp(dir + "/r/report.csv");
    EXPECT_EQ(csv.rfind("variant,beat_alignment,diversity,prior_drift,tempo_ratio_slow,tempo_ratio_fast\n", 0),
              0u);
    EXPECT_EQ(count_lines(csv), 6);
    for (const char* v : {"\nbase,", "\nno_zica_selection,", "\nlora_rank_2,", "\nuniform_schedule,",
                          "\nfeature_addition,"})
        EXPECT_NE(csv.find(v), std::string::npos) << v;
    const std::string json = slurp(dir + "/r/report.json");
    EXPECT_NE(json.find("\"rows\""), std::string::npos);
    EXPECT_TRUE(fs::exists(dir + "/r/report.config"));
}

TEST(OutRoot, EnvironmentVariableSuppliesDefaultDirectory) {
    const std::string root = fresh_dir("envroot");
    ASSERT_EQ(setenv("TACTUS_OUT_ROOT", root.c_str(), 1), 0);
    const int rc = run({"datagen", "--n-structured", "3", "--n-wild", "2", "--frames", "8", "--joints", "2"});
    unsetenv("TACTUS_OUT_ROOT");
    EXPECT_EQ(rc, 0);
    EXPECT_TRUE(fs::exists(root + "/datagen/dataset.mids"));
}

}  // namespace
