#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <utility>
#include <vector>

#include <CLI11.hpp>

#include "tactus/data.hpp"
#include "tactus/diffusion.hpp"
#include "tactus/eval.hpp"
#include "tactus/model.hpp"
#include "tactus/probe.hpp"
#include "tactus/runconfig.hpp"
#include "tactus/training.hpp"

namespace tactus {

namespace detail {

inline std::string fmt_real(double v) {
    char b[32];
    std::snprintf(b, sizeof b, "%.10g", v);
    return std::string(b);
}

}  // namespace detail

// Typed reader over a RunConfig that records the effective value of every
// key it serves, defaults included; the recorded set is what gets written
// next to the outputs as the run's fully resolved configuration.
class KeyLog {
  public:
    explicit KeyLog(const RunConfig& src) : src_(src) {}

    std::string required(const std::string& key) {
        const std::string v = src_.get(key);
        used_.set(key, v);
        return v;
    }
    std::string str(const std::string& key, const std::string& def) {
        const std::string v = src_.get_str(key, def);
        used_.set(key, v);
        return v;
    }
    int64_t i64(const std::string& key, int64_t def) {
        const int64_t v = src_.get_int(key, def);
        used_.set(key, std::to_string(v));
        return v;
    }
    double real(const std::string& key, double def) {
        const double v = src_.get_real(key, def);
        used_.set(key, detail::fmt_real(v));
        return v;
    }
    bool boolean(const std::string& key, bool def) {
        const bool v = src_.get_bool(key, def);
        used_.set(key, v ? "1" : "0");
        return v;
    }
    std::vector<int> ints(const std::string& key, const std::vector<int>& def) {
        const std::vector<int> v = src_.get_int_list(key, def);
        std::string joined;
        for (size_t i = 0; i < v.size(); ++i) joined += (i ? "," : "") + std::to_string(v[i]);
        used_.set(key, joined);
        return v;
    }
    bool has(const std::string& key) const { return src_.has(key); }
    const RunConfig& used() const { return used_; }

  private:
    const RunConfig& src_;
    RunConfig used_;
};

namespace detail {

inline std::string out_dir_for(KeyLog& k, const char* cmd) {
    const std::string out = k.str("out", default_out_root() + "/" + cmd);
    std::filesystem::create_directories(out);
    return out;
}

inline void write_resolved(const KeyLog& k, const std::string& out, const char* cmd) {
    write_file(out + "/" + cmd + ".config", k.used().resolved());
}

// Splits a flat clips file back into the sampler's two training pools.
inline Dataset<double> pools_from_clips(const std::vector<Example<double>>& clips) {
    Dataset<double> ds;
    for (const auto& e : clips) (e.clip.source_tag == kSourceWild ? ds.wild : ds.structured).push_back(e);
    return ds;
}

inline ModelConfig<double> model_config_from(KeyLog& k) {
    ModelConfig<double> m;
    m.layers = static_cast<int>(k.i64("layers", m.layers));
    m.d_model = static_cast<int>(k.i64("d_model", m.d_model));
    m.heads = static_cast<int>(k.i64("heads", m.heads));
    m.frames = static_cast<int>(k.i64("frames", m.frames));
    m.joints = static_cast<int>(k.i64("joints", m.joints));
    m.d_audio = static_cast<int>(k.i64("d_audio", kAudioFeatureDim));
    m.vocab = static_cast<int>(k.i64("vocab", kVocabSize));
    m.lora_rank = static_cast<int>(k.i64("lora_rank", m.lora_rank));
    m.lora_alpha = k.real("lora_alpha", static_cast<double>(m.lora_alpha));
    m.time_enc_dims = static_cast<int>(k.i64("time_enc_dims", m.time_enc_dims));
    m.windowed_audio = k.boolean("windowed_audio", m.windowed_audio);
    m.audio_window = static_cast<int>(k.i64("audio_window", m.audio_window));
    m.sigma_data = k.real("sigma_data", m.sigma_data);
    m.sigma_range.sigma_min = k.real("sigma_min", m.sigma_range.sigma_min);
    m.sigma_range.sigma_max = k.real("sigma_max", m.sigma_range.sigma_max);
    return m;
}

inline TrainConfig<double> train_config_from(KeyLog& k, TrainStage stage, int64_t steps) {
    TrainConfig<double> tc;
    tc.stage = stage;
    tc.steps = steps;
    tc.stop_after = k.i64("stop_after", -1);
    tc.batch = static_cast<int>(k.i64("batch", 8));
    tc.lr = k.real("lr", 1e-4);
    tc.p_cond_drop = k.real("p_cond_drop", 0.1);
    tc.p_base = k.real("p_base", 0.1);
    tc.beta0 = k.real("beta0", 3.0);
    tc.decay_rate = k.real("decay_rate", 6.0);
    tc.seed = static_cast<uint64_t>(k.i64("seed", 1));
    tc.eval_every = k.i64("eval_every", 100);
    return tc;
}

// Audio conditioning exists exactly when adapters were attached at some
// layer (cross-attention or the additive baseline).
inline bool audio_conditioned(const ModelConfig<double>& m) { return !m.zica_layers.empty(); }

inline std::vector<int> all_layers(int layers) {
    std::vector<int> all(static_cast<size_t>(layers));
    for (int l = 0; l < layers; ++l) all[static_cast<size_t>(l)] = l;
    return all;
}

// Layer placement for adapters: an explicit list wins, otherwise the skip
// probe ranks layers and the top round(L/3) (or zica_k) are taken.
inline std::vector<int> probed_selection(KeyLog& k, const Checkpoint<double>& base,
                                         const std::vector<Example<double>>& clips, std::string* probe_csv) {
    if (k.has("zica")) return k.ints("zica", {});
    const int layers = base.cfg.layers;
    const int n_set = static_cast<int>(k.i64("probe_set", 4));
    const int n_samples = static_cast<int>(k.i64("probe_samples", 2));
    const int steps = static_cast<int>(k.i64("probe_steps", 8));
    const uint64_t seed = static_cast<uint64_t>(k.i64("probe_seed", 7));
    std::vector<Example<double>> eval_set(clips.begin(),
                                          clips.begin() + std::min<size_t>(clips.size(), static_cast<size_t>(n_set)));
    GuidanceConfig<double> g;
    g.gamma = 1.0;
    auto report = probe_layers(base.model(), eval_set, n_samples, steps, g, seed);
    if (!report.warning.empty()) std::cerr << "warning: " << report.warning << "\n";
    const int count = static_cast<int>(k.i64("zica_k", default_selection_count(layers)));
    if (probe_csv) *probe_csv = adaptability_csv(report);
    return select_layers(report, count);
}

}  // namespace detail

// Synthesizes the paired music/dance corpus: training clips plus a manifest
// line per record, and a held-out file on test tempos. The spec is checked
// before anything touches the filesystem.
inline int cmd_datagen(const RunConfig& cfg) {
    KeyLog k(cfg);
    DatasetSpec<double> spec;
    spec.n_structured = static_cast<int>(k.i64("n_structured", spec.n_structured));
    spec.n_wild = static_cast<int>(k.i64("n_wild", spec.n_wild));
    spec.styles = k.ints("styles", spec.styles);
    spec.tempo_lo = k.real("tempo_lo", spec.tempo_lo);
    spec.tempo_hi = k.real("tempo_hi", spec.tempo_hi);
    spec.seed = static_cast<uint64_t>(k.i64("seed", 1));
    spec.p_base = k.real("p_base", spec.p_base);
    spec.frames = static_cast<int>(k.i64("frames", spec.frames));
    spec.joints = static_cast<int>(k.i64("joints", spec.joints));
    spec.fps = k.real("fps", spec.fps);
    spec.validate();
    const std::string out = detail::out_dir_for(k, "datagen");
    Dataset<double> ds = make_dataset(spec);
    std::vector<Example<double>> train = ds.structured;
    train.insert(train.end(), ds.wild.begin(), ds.wild.end());
    save_clips(out + "/dataset.mids", train);
    write_clips_manifest(out + "/manifest.csv", train, "train");
    save_clips(out + "/test.mids", ds.test);
    write_clips_manifest(out + "/test_manifest.csv", ds.test, "test");
    detail::write_resolved(k, out, "datagen");
    std::cout << "datagen: " << train.size() << " training clips, " << ds.test.size() << " held-out clips -> " << out
              << "\n";
    return 0;
}

// Two-stage trainer. Stage base fits the text-conditioned denoiser from
// scratch; stage adapter freezes it and fits ZICA + LoRA on top, placing
// cross-attention by probe ranking unless told otherwise.
inline int cmd_train(const RunConfig& cfg) {
    KeyLog k(cfg);
    const std::string stage = k.required("stage");
    const double fps = k.real("fps", 12);
    const std::string preset = k.str("preset", "");
    if (!preset.empty() && preset != "desk") throw ConfigError("train: unknown preset '" + preset + "'");
    const int64_t default_steps = preset == "desk" ? 2000 : 4000;
    k.real("gamma", 6.0);  // sampling default, recorded for downstream commands
    auto clips = load_clips<double>(k.required("data"), fps);
    Dataset<double> ds = detail::pools_from_clips(clips);

    if (stage == "base") {
        ModelConfig<double> mc = detail::model_config_from(k);
        mc.zica_layers.clear();
        TrainConfig<double> tc = detail::train_config_from(k, TrainStage::base, k.i64("steps", default_steps));
        const std::string out = detail::out_dir_for(k, "train");
        tc.checkpoint_path = out + "/base.ckpt";
        Rng rng(tc.seed);
        Model<double> m = build_model(mc, rng);
        TrainResult<double> r = train_base(m, ds, tc);
        detail::write_file(out + "/base_curve.csv", curve_csv(r.curve));
        detail::write_resolved(k, out, "train");
        if (!r.warning.empty()) std::cerr << "warning: " << r.warning << "\n";
        std::cout << "train base: " << r.ckpt.step << " steps, final loss "
                  << detail::fmt_real(r.curve.empty() ? 0.0 : r.curve.back().loss) << " -> " << tc.checkpoint_path
                  << "\n";
        return 0;
    }
    if (stage != "adapter") throw ConfigError("train: stage must be 'base' or 'adapter', got '" + stage + "'");

    if (!k.has("base_ckpt")) throw ConfigError("train --stage adapter requires --base-ckpt");
    Checkpoint<double> base = load_checkpoint<double>(k.required("base_ckpt"));
    ModelConfig<double> mc = base.cfg;
    mc.lora_rank = static_cast<int>(k.i64("lora_rank", mc.lora_rank));
    mc.lora_alpha = k.real("lora_alpha", static_cast<double>(mc.lora_alpha));
    mc.feature_addition = k.boolean("feature_addition", false);
    mc.windowed_audio = k.boolean("windowed_audio", mc.windowed_audio);
    mc.audio_window = static_cast<int>(k.i64("audio_window", mc.audio_window));
    std::string probe_csv;
    mc.zica_layers = k.boolean("no_zica_selection", false) ? detail::all_layers(base.cfg.layers)
                                                           : detail::probed_selection(k, base, clips, &probe_csv);
    TrainConfig<double> tc =
        detail::train_config_from(k, TrainStage::adapter, k.i64("steps", default_steps));
    if (k.boolean("uniform_schedule", false)) tc.beta0 = 1.0;
    const std::string out = detail::out_dir_for(k, "train");
    tc.checkpoint_path = out + "/adapter.ckpt";
    Checkpoint<double> start = attach_adapters(base, mc, tc.seed);
    TrainResult<double> r = train_adapters(start, ds, tc);
    detail::write_file(out + "/adapter_curve.csv", curve_csv(r.curve));
    if (!probe_csv.empty()) detail::write_file(out + "/adaptability.csv", probe_csv);
    detail::write_resolved(k, out, "train");
    if (!r.warning.empty()) std::cerr << "warning: " << r.warning << "\n";
    std::string zl;
    for (size_t i = 0; i < mc.zica_layers.size(); ++i) zl += (i ? "," : "") + std::to_string(mc.zica_layers[i]);
    std::cout << "train adapter: " << r.ckpt.step << " steps, cross-attention at layers [" << zl << "], final loss "
              << detail::fmt_real(r.curve.empty() ? 0.0 : r.curve.back().loss) << " -> " << tc.checkpoint_path
              << "\n";
    return 0;
}

// Ranks every layer by the quality of generations with that layer skipped
// and writes the adaptability table.
inline int cmd_probe(const RunConfig& cfg) {
    KeyLog k(cfg);
    Checkpoint<double> ck = load_checkpoint<double>(k.required("ckpt"));
    auto clips = load_clips<double>(k.required("data"), k.real("fps", 12));
    const int n_set = static_cast<int>(k.i64("probe_set", 8));
    std::vector<Example<double>> eval_set(clips.begin(),
                                          clips.begin() + std::min<size_t>(clips.size(), static_cast<size_t>(n_set)));
    const int n_samples = static_cast<int>(k.i64("probe_samples", 3));
    const int steps = static_cast<int>(k.i64("probe_steps", 12));
    GuidanceConfig<double> g;
    g.gamma = k.real("gamma", 1.0);
    const uint64_t seed = static_cast<uint64_t>(k.i64("seed", 7));
    AdaptabilityReport<double> report = probe_layers(ck.model(), eval_set, n_samples, steps, g, seed);
    const std::string out = detail::out_dir_for(k, "probe");
    detail::write_file(out + "/adaptability.csv", adaptability_csv(report));
    detail::write_resolved(k, out, "probe");
    if (!report.warning.empty()) std::cerr << "warning: " << report.warning << "\n";
    std::string sel;
    for (size_t i = 0; i < report.selected.size(); ++i) sel += (i ? "," : "") + std::to_string(report.selected[i]);
    std::cout << "probe: selected layers [" << sel << "] -> " << out << "/adaptability.csv\n";
    return 0;
}

// Generates clips for one synthetic track and stores them in the dataset
// container so eval reads generations and ground truth identically.
inline int cmd_sample(const RunConfig& cfg) {
    KeyLog k(cfg);
    Checkpoint<double> ck = load_checkpoint<double>(k.required("ckpt"));
    const ModelConfig<double>& mc = ck.cfg;
    const double fps = k.real("fps", 12);
    const double tempo = k.real("tempo", 120);
    const int style = static_cast<int>(k.i64("style", 0));
    const bool base_cap = k.boolean("base_caption", false);
    const int n = static_cast<int>(k.i64("n", 4));
    const int steps = static_cast<int>(k.i64("steps", 24));
    const double speed = k.real("speed", 1.0);
    const double phase = k.real("phase", 0.1);
    const uint64_t seed = static_cast<uint64_t>(k.i64("seed", 1));
    GuidanceConfig<double> g;
    g.gamma = k.real("gamma", 6.0);
    if (n < 1) throw ConfigError("sample: n must be >= 1");
    ConditionTokens cond = base_cap ? base_caption() : caption_for(style, kSourceStructured, true);
    AudioTrack<double> track = make_track(tempo, mc.frames / fps, fps, phase);
    if (speed != 1.0) track = resample_track(track, speed);
    const bool with_audio = detail::audio_conditioned(mc);
    Model<double> m = ck.model();
    Rng root(seed);
    std::vector<Example<double>> outs;
    outs.reserve(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
        Rng r = root.derive(static_cast<uint64_t>(i));
        Tensor<double> poses = generate_clip(m, cond, with_audio ? &track.features : nullptr, g, steps, r);
        Example<double> e;
        e.track = track;
        e.clip = MotionClip<double>{poses, fps, base_cap ? 0 : style, kSourceGenerated};
        e.caption = cond;
        outs.push_back(std::move(e));
    }
    const std::string out = detail::out_dir_for(k, "sample");
    save_clips(out + "/samples.mids", outs);
    write_clips_manifest(out + "/samples_manifest.csv", outs, "sample");
    detail::write_resolved(k, out, "sample");
    std::cout << "sample: " << n << " clips at tempo " << detail::fmt_real(track.tempo_bpm) << " -> " << out
              << "/samples.mids\n";
    return 0;
}

// Scores a clips file against its own tracks: per-clip beat alignment, the
// aggregate, pairwise diversity, and a plot-ready energy series.
inline int cmd_eval(const RunConfig& cfg) {
    KeyLog k(cfg);
    const double fps = k.real("fps", 12);
    auto clips = load_clips<double>(k.required("clips"), fps);
    const double tau = k.real("tau", 0.1);
    const int energy_clip = static_cast<int>(k.i64("energy_clip", 0));
    if (clips.empty()) throw ConfigError("eval: clips file is empty");
    if (energy_clip < 0 || energy_clip >= static_cast<int>(clips.size()))
        throw ConfigError("eval: energy_clip outside the file");
    MetricsReport<double> rep;
    std::vector<MotionClip<double>> motions;
    for (const auto& e : clips) {
        rep.per_clip_alignment.push_back(beat_alignment_score(e.clip, e.track, tau));
        rep.beat_alignment += rep.per_clip_alignment.back();
        motions.push_back(e.clip);
    }
    rep.beat_alignment /= static_cast<double>(clips.size());
    rep.diversity = motions.size() >= 2 ? diversity_score(motions) : 0.0;
    rep.validate();
    const std::string out = detail::out_dir_for(k, "eval");
    detail::write_file(out + "/metrics.json", metrics_to_json(rep));
    detail::write_file(out + "/metrics.csv", metrics_to_csv(rep));
    const auto& ec = clips[static_cast<size_t>(energy_clip)];
    detail::write_file(out + "/energy.csv", energy_series_csv(ec.clip, ec.track));
    detail::write_resolved(k, out, "eval");
    std::cout << "eval: beat_alignment " << detail::fmt_real(rep.beat_alignment) << ", diversity "
              << detail::fmt_real(rep.diversity) << " -> " << out << "\n";
    return 0;
}

namespace detail {

struct ReportRow {
    std::string variant;
    double beat_alignment = 0;
    double diversity = 0;
    double prior_drift = 0;
    bool has_tempo = false;
    double tempo_slow = 0;
    double tempo_fast = 0;
};

struct ReportContext {
    std::vector<Example<double>> test;
    int n_eval = 0;
    int steps = 0;
    GuidanceConfig<double> g;
    double tau = 0.1;
    double fps = 12;
    uint64_t seed = 0;
    AudioTrack<double> tempo_track;
    double slow = 0.75, fast = 1.25;
    int tempo_n = 3;
    int drift_n = 4;
};

// Fixed-caption protocol: every model is scored on the same held-out
// tracks under the base caption, audio attached only where the model has
// attachment points.
inline void eval_into(ReportRow& row, const Model<double>& m, const ReportContext& rc) {
    Rng root(rc.seed);
    std::vector<MotionClip<double>> motions;
    const bool with_audio = audio_conditioned(m.cfg);
    double total = 0;
    for (int i = 0; i < rc.n_eval; ++i) {
        const Example<double>& e = rc.test[static_cast<size_t>(i) % rc.test.size()];
        Rng r = root.derive(100000 + static_cast<uint64_t>(i));
        Tensor<double> poses =
            generate_clip(m, base_caption(), with_audio ? &e.track.features : nullptr, rc.g, rc.steps, r);
        MotionClip<double> clip{poses, rc.fps, 0, kSourceGenerated};
        total += beat_alignment_score(clip, e.track, rc.tau);
        motions.push_back(std::move(clip));
    }
    row.beat_alignment = total / static_cast<double>(rc.n_eval);
    row.diversity = motions.size() >= 2 ? diversity_score(motions) : 0.0;
    if (!with_audio) return;
    auto generate = [&](const AudioTrack<double>& track, int i) {
        Rng r = Rng(rc.seed).derive(200000 + static_cast<uint64_t>(i));
        Tensor<double> poses = generate_clip(m, base_caption(), &track.features, rc.g, rc.steps, r);
        return MotionClip<double>{poses, rc.fps, 0, kSourceGenerated};
    };
    try {
        const std::vector<double> ratios =
            tempo_response(generate, rc.tempo_track, {1.0, rc.slow, rc.fast}, rc.tempo_n);
        row.has_tempo = true;
        row.tempo_slow = ratios[1];
        row.tempo_fast = ratios[2];
    } catch (const NumericError& e) {
        std::cerr << "note: tempo response unavailable for " << row.variant << ": " << e.what() << "\n";
    }
}

inline std::string report_csv(const std::vector<ReportRow>& rows) {
    std::string s = "variant,beat_alignment,diversity,prior_drift,tempo_ratio_slow,tempo_ratio_fast\n";
    for (const auto& r : rows) {
        s += r.variant + "," + fmt_real(r.beat_alignment) + "," + fmt_real(r.diversity) + "," +
             fmt_real(r.prior_drift) + ",";
        s += r.has_tempo ? fmt_real(r.tempo_slow) : std::string();
        s += ",";
        s += r.has_tempo ? fmt_real(r.tempo_fast) : std::string();
        s += "\n";
    }
    return s;
}

inline std::string report_json(const std::vector<ReportRow>& rows) {
    std::string s = "{\n  \"rows\": [\n";
    for (size_t i = 0; i < rows.size(); ++i) {
        const auto& r = rows[i];
        s += "    {\"variant\": \"" + r.variant + "\", \"beat_alignment\": " + fmt_real(r.beat_alignment) +
             ", \"diversity\": " + fmt_real(r.diversity) + ", \"prior_drift\": " + fmt_real(r.prior_drift) +
             ", \"tempo_ratio_slow\": " + (r.has_tempo ? fmt_real(r.tempo_slow) : "null") +
             ", \"tempo_ratio_fast\": " + (r.has_tempo ? fmt_real(r.tempo_fast) : "null") + "}";
        s += i + 1 < rows.size() ? ",\n" : "\n";
    }
    s += "  ]\n}\n";
    return s;
}

}  // namespace detail

// Side-by-side summary of the frozen base, an adapted checkpoint, and any
// requested ablation variants (each trained in-process for ablation_steps):
// beat alignment, diversity, drift from the base prior, and tempo response.
inline int cmd_report(const RunConfig& cfg) {
    KeyLog k(cfg);
    Checkpoint<double> base = load_checkpoint<double>(k.required("base_ckpt"));
    detail::ReportContext rc;
    rc.fps = k.real("fps", 12);
    rc.test = load_clips<double>(k.required("test"), rc.fps);
    rc.n_eval = static_cast<int>(std::min<int64_t>(k.i64("eval_n", 8), static_cast<int64_t>(rc.test.size())));
    if (rc.n_eval < 1) throw ConfigError("report: need at least one held-out clip");
    rc.steps = static_cast<int>(k.i64("eval_steps", 16));
    rc.g.gamma = k.real("gamma", 6.0);
    rc.tau = k.real("tau", 0.1);
    rc.seed = static_cast<uint64_t>(k.i64("seed", 1));
    rc.slow = k.real("tempo_slow", 0.75);
    rc.fast = k.real("tempo_fast", 1.25);
    rc.tempo_n = static_cast<int>(k.i64("tempo_n", 3));
    rc.drift_n = static_cast<int>(k.i64("drift_n", 4));
    rc.tempo_track = make_track(k.real("tempo", 120.0), base.cfg.frames / rc.fps, rc.fps, k.real("phase", 0.1));

    std::vector<ConditionTokens> drift_conds;
    for (int i = 0; i < rc.drift_n; ++i) drift_conds.push_back(rc.test[static_cast<size_t>(i) % rc.test.size()].caption);

    Model<double> base_model = base.model();
    std::vector<detail::ReportRow> rows;
    rows.push_back({});
    rows.back().variant = "base";
    detail::eval_into(rows.back(), base_model, rc);

    auto add_model_row = [&](const std::string& name, const Checkpoint<double>& ck) {
        detail::ReportRow row;
        row.variant = name;
        Model<double> m = ck.model();
        detail::eval_into(row, m, rc);
        row.prior_drift = prior_drift(base_model, m, drift_conds, rc.drift_n, rc.steps, rc.g, rc.seed);
        rows.push_back(std::move(row));
    };

    if (k.has("adapter_ckpt")) add_model_row("adapted", load_checkpoint<double>(k.required("adapter_ckpt")));

    const bool abl_all_layers = k.boolean("no_zica_selection", false);
    const bool abl_rank = k.has("lora_rank");
    const bool abl_uniform = k.boolean("uniform_schedule", false);
    const bool abl_fadd = k.boolean("feature_addition", false);
    if (abl_all_layers || abl_rank || abl_uniform || abl_fadd) {
        auto clips = load_clips<double>(k.required("data"), rc.fps);
        Dataset<double> ds = detail::pools_from_clips(clips);
        TrainConfig<double> tc =
            detail::train_config_from(k, TrainStage::adapter, k.i64("ablation_steps", 200));
        // the selection probe runs once and is shared by every variant
        // except the deliberate every-layer attachment
        std::vector<int> selected;
        if (abl_rank || abl_uniform || abl_fadd) selected = detail::probed_selection(k, base, clips, nullptr);
        auto run_variant = [&](const std::string& name, ModelConfig<double> mc, double beta0) {
            TrainConfig<double> vt = tc;
            vt.beta0 = beta0;
            TrainResult<double> r = train_adapters(attach_adapters(base, mc, vt.seed), ds, vt);
            add_model_row(name, r.ckpt);
        };
        if (abl_all_layers) {
            ModelConfig<double> mc = base.cfg;
            mc.zica_layers = detail::all_layers(mc.layers);
            run_variant("no_zica_selection", mc, tc.beta0);
        }
        if (abl_rank) {
            ModelConfig<double> mc = base.cfg;
            mc.zica_layers = selected;
            mc.lora_rank = static_cast<int>(k.i64("lora_rank", mc.lora_rank));
            run_variant("lora_rank_" + std::to_string(mc.lora_rank), mc, tc.beta0);
        }
        if (abl_uniform) {
            ModelConfig<double> mc = base.cfg;
            mc.zica_layers = selected;
            run_variant("uniform_schedule", mc, 1.0);
        }
        if (abl_fadd) {
            ModelConfig<double> mc = base.cfg;
            mc.zica_layers = selected;
            mc.feature_addition = true;
            run_variant("feature_addition", mc, tc.beta0);
        }
    }

    const std::string out = detail::out_dir_for(k, "report");
    detail::write_file(out + "/report.csv", detail::report_csv(rows));
    detail::write_file(out + "/report.json", detail::report_json(rows));
    detail::write_resolved(k, out, "report");
    std::cout << detail::report_csv(rows);
    return 0;
}

namespace detail {

// Registers a value option that lands in the override map as key=value, so
// flags and config files flow through one resolution path.
inline void cli_opt(CLI::App* sc, RunConfig* over, const std::string& flag, const std::string& key,
                    const std::string& desc) {
    sc->add_option_function<std::string>(
        flag, [over, key](const std::string& v) { over->set(key, v); }, desc);
}

inline void cli_flag(CLI::App* sc, RunConfig* over, const std::string& flag, const std::string& key,
                     const std::string& desc) {
    sc->add_flag_callback(
        flag, [over, key] { over->set(key, "1"); }, desc);
}

}  // namespace detail

// Parses arguments (no program name), merges --config file and flag
// overrides, and dispatches. Exit codes: 0 success, 2 usage or
// configuration error, 3 runtime or data error.
inline int cli_main(std::vector<std::string> args) {
    CLI::App app{"beat-synchronized dance adapter laboratory", "tactus"};
    app.require_subcommand(1);
    RunConfig over;
    std::string config_path;
    int (*run)(const RunConfig&) = nullptr;

    auto common = [&](CLI::App* sc, int (*fn)(const RunConfig&)) {
        sc->add_option("--config", config_path, "key=value file; flags override its entries");
        detail::cli_opt(sc, &over, "--out", "out", "output directory (default: $TACTUS_OUT_ROOT/<command>)");
        detail::cli_opt(sc, &over, "--seed", "seed", "run seed");
        detail::cli_opt(sc, &over, "--fps", "fps", "frame rate of clips and tracks");
        sc->callback([&run, fn] { run = fn; });
    };

    CLI::App* dg = app.add_subcommand("datagen", "synthesize the paired music/dance corpus");
    common(dg, &cmd_datagen);
    detail::cli_opt(dg, &over, "--n-structured", "n_structured", "studio-style clip count");
    detail::cli_opt(dg, &over, "--n-wild", "n_wild", "perturbed in-the-wild clip count");
    detail::cli_opt(dg, &over, "--styles", "styles", "comma-separated style ids");
    detail::cli_opt(dg, &over, "--tempo-lo", "tempo_lo", "slowest tempo, BPM");
    detail::cli_opt(dg, &over, "--tempo-hi", "tempo_hi", "fastest tempo, BPM");
    detail::cli_opt(dg, &over, "--p-base", "p_base", "base-caption probability");
    detail::cli_opt(dg, &over, "--frames", "frames", "frames per clip");
    detail::cli_opt(dg, &over, "--joints", "joints", "joints per skeleton");

    CLI::App* tr = app.add_subcommand("train", "train the base model or its adapters");
    common(tr, &cmd_train);
    detail::cli_opt(tr, &over, "--stage", "stage", "base | adapter");
    detail::cli_opt(tr, &over, "--data", "data", "training clips file");
    detail::cli_opt(tr, &over, "--base-ckpt", "base_ckpt", "frozen base checkpoint (adapter stage)");
    detail::cli_opt(tr, &over, "--preset", "preset", "'desk' shrinks steps for a commodity CPU");
    detail::cli_opt(tr, &over, "--steps", "steps", "training steps (default 4000, desk 2000)");
    detail::cli_opt(tr, &over, "--stop-after", "stop_after", "pause at this step for a resumable checkpoint");
    detail::cli_opt(tr, &over, "--batch", "batch", "clips per step");
    detail::cli_opt(tr, &over, "--lr", "lr", "Adam learning rate");
    detail::cli_opt(tr, &over, "--p-cond-drop", "p_cond_drop", "condition dropout rate");
    detail::cli_opt(tr, &over, "--p-base", "p_base", "caption diversification rate (adapter stage)");
    detail::cli_opt(tr, &over, "--beta0", "beta0", "initial Beta shape for noise-level sampling");
    detail::cli_opt(tr, &over, "--decay-rate", "decay_rate", "Beta shape decay rate");
    detail::cli_opt(tr, &over, "--gamma", "gamma", "guidance scale recorded for sampling");
    detail::cli_opt(tr, &over, "--eval-every", "eval_every", "progress period");
    detail::cli_opt(tr, &over, "--layers", "layers", "transformer depth");
    detail::cli_opt(tr, &over, "--d-model", "d_model", "model width");
    detail::cli_opt(tr, &over, "--heads", "heads", "attention heads");
    detail::cli_opt(tr, &over, "--frames", "frames", "frames per clip");
    detail::cli_opt(tr, &over, "--joints", "joints", "joints per skeleton");
    detail::cli_opt(tr, &over, "--vocab", "vocab", "caption token vocabulary");
    detail::cli_opt(tr, &over, "--time-enc-dims", "time_enc_dims", "audio time-encoding width");
    detail::cli_opt(tr, &over, "--sigma-min", "sigma_min", "smallest noise level");
    detail::cli_opt(tr, &over, "--sigma-max", "sigma_max", "largest noise level");
    detail::cli_opt(tr, &over, "--sigma-data", "sigma_data", "signal scale for preconditioning");
    detail::cli_opt(tr, &over, "--lora-rank", "lora_rank", "LoRA rank");
    detail::cli_opt(tr, &over, "--lora-alpha", "lora_alpha", "LoRA scale numerator");
    detail::cli_flag(tr, &over, "--feature-addition", "feature_addition",
                     "replace cross-attention with the additive baseline");
    detail::cli_flag(tr, &over, "--uniform-schedule", "uniform_schedule",
                     "train adapters with log-uniform noise levels");
    detail::cli_flag(tr, &over, "--no-zica-selection", "no_zica_selection",
                     "attach cross-attention at every layer");
    detail::cli_flag(tr, &over, "--windowed-audio", "windowed_audio", "restrict audio attention to a local window");
    detail::cli_opt(tr, &over, "--audio-window", "audio_window", "audio attention half-width, frames");
    detail::cli_opt(tr, &over, "--zica", "zica", "explicit comma-separated cross-attention layers");
    detail::cli_opt(tr, &over, "--zica-k", "zica_k", "how many probed layers to select");
    detail::cli_opt(tr, &over, "--probe-set", "probe_set", "examples used by the selection probe");
    detail::cli_opt(tr, &over, "--probe-samples", "probe_samples", "generations per probed layer");
    detail::cli_opt(tr, &over, "--probe-steps", "probe_steps", "sampler steps inside the probe");
    detail::cli_opt(tr, &over, "--probe-seed", "probe_seed", "probe seed");

    CLI::App* pb = app.add_subcommand("probe", "rank layers by adaptability");
    common(pb, &cmd_probe);
    detail::cli_opt(pb, &over, "--ckpt", "ckpt", "checkpoint to probe");
    detail::cli_opt(pb, &over, "--data", "data", "clips file supplying probe conditions");
    detail::cli_opt(pb, &over, "--probe-set", "probe_set", "examples used by the probe");
    detail::cli_opt(pb, &over, "--probe-samples", "probe_samples", "generations per probed layer");
    detail::cli_opt(pb, &over, "--probe-steps", "probe_steps", "sampler steps inside the probe");
    detail::cli_opt(pb, &over, "--gamma", "gamma", "guidance scale");

    CLI::App* sm = app.add_subcommand("sample", "generate clips from a checkpoint");
    common(sm, &cmd_sample);
    detail::cli_opt(sm, &over, "--ckpt", "ckpt", "checkpoint to sample");
    detail::cli_opt(sm, &over, "--tempo", "tempo", "track tempo, BPM");
    detail::cli_opt(sm, &over, "--style", "style", "dance style id");
    detail::cli_flag(sm, &over, "--base-caption", "base_caption", "condition on the minimal caption");
    detail::cli_opt(sm, &over, "--n", "n", "clips to generate");
    detail::cli_opt(sm, &over, "--steps", "steps", "sampler steps");
    detail::cli_opt(sm, &over, "--gamma", "gamma", "guidance scale");
    detail::cli_opt(sm, &over, "--speed", "speed", "resample the track by this factor before generation");
    detail::cli_opt(sm, &over, "--phase", "phase", "first beat offset, seconds");

    CLI::App* ev = app.add_subcommand("eval", "score a clips file");
    common(ev, &cmd_eval);
    detail::cli_opt(ev, &over, "--clips", "clips", "clips file to score");
    detail::cli_opt(ev, &over, "--tau", "tau", "beat-alignment tolerance, seconds");
    detail::cli_opt(ev, &over, "--energy-clip", "energy_clip", "clip index for the energy series");

    CLI::App* rp = app.add_subcommand("report", "compare base, adapted, and ablation variants");
    common(rp, &cmd_report);
    detail::cli_opt(rp, &over, "--base-ckpt", "base_ckpt", "frozen base checkpoint");
    detail::cli_opt(rp, &over, "--adapter-ckpt", "adapter_ckpt", "adapted checkpoint to compare");
    detail::cli_opt(rp, &over, "--data", "data", "training clips file for ablation runs");
    detail::cli_opt(rp, &over, "--test", "test", "held-out clips file for scoring");
    detail::cli_opt(rp, &over, "--eval-n", "eval_n", "held-out tracks to score");
    detail::cli_opt(rp, &over, "--eval-steps", "eval_steps", "sampler steps during scoring");
    detail::cli_opt(rp, &over, "--gamma", "gamma", "guidance scale");
    detail::cli_opt(rp, &over, "--tau", "tau", "beat-alignment tolerance, seconds");
    detail::cli_opt(rp, &over, "--tempo", "tempo", "tempo of the response-test track, BPM");
    detail::cli_opt(rp, &over, "--phase", "phase", "first beat offset of the response-test track");
    detail::cli_opt(rp, &over, "--tempo-n", "tempo_n", "generations per speed factor");
    detail::cli_opt(rp, &over, "--tempo-slow", "tempo_slow", "slow speed factor");
    detail::cli_opt(rp, &over, "--tempo-fast", "tempo_fast", "fast speed factor");
    detail::cli_opt(rp, &over, "--drift-n", "drift_n", "generations for the prior-drift estimate");
    detail::cli_opt(rp, &over, "--ablation-steps", "ablation_steps", "training steps per ablation variant");
    detail::cli_flag(rp, &over, "--no-zica-selection", "no_zica_selection",
                     "run the every-layer attachment ablation");
    detail::cli_opt(rp, &over, "--lora-rank", "lora_rank", "run a rank ablation at this rank");
    detail::cli_flag(rp, &over, "--uniform-schedule", "uniform_schedule", "run the log-uniform schedule ablation");
    detail::cli_flag(rp, &over, "--feature-addition", "feature_addition", "run the additive-conditioning ablation");
    detail::cli_opt(rp, &over, "--batch", "batch", "clips per ablation step");
    detail::cli_opt(rp, &over, "--lr", "lr", "ablation learning rate");
    detail::cli_opt(rp, &over, "--p-cond-drop", "p_cond_drop", "ablation condition dropout");
    detail::cli_opt(rp, &over, "--p-base", "p_base", "ablation caption diversification");
    detail::cli_opt(rp, &over, "--beta0", "beta0", "ablation initial Beta shape");
    detail::cli_opt(rp, &over, "--decay-rate", "decay_rate", "ablation Beta decay rate");
    detail::cli_opt(rp, &over, "--zica", "zica", "explicit cross-attention layers for ablations");
    detail::cli_opt(rp, &over, "--zica-k", "zica_k", "how many probed layers to select");
    detail::cli_opt(rp, &over, "--probe-set", "probe_set", "examples used by the selection probe");
    detail::cli_opt(rp, &over, "--probe-samples", "probe_samples", "generations per probed layer");
    detail::cli_opt(rp, &over, "--probe-steps", "probe_steps", "sampler steps inside the probe");
    detail::cli_opt(rp, &over, "--probe-seed", "probe_seed", "probe seed");

    try {
        std::reverse(args.begin(), args.end());
        app.parse(std::move(args));
    } catch (const CLI::CallForHelp& e) {
        std::cout << app.help();
        return 0;
    } catch (const CLI::ParseError& e) {
        std::cerr << e.what() << "\n";
        return 2;
    }

    try {
        RunConfig merged;
        if (!config_path.empty()) merged = load_config(config_path);
        merge_overrides(merged, over);
        return run(merged);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
}

}  // namespace tactus
