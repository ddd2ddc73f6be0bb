#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "tactus/data.hpp"

namespace {

using tactus::AudioTrack;
using tactus::ConditionTokens;
using tactus::ConfigError;
using tactus::Dataset;
using tactus::DatasetSpec;
using tactus::Example;
using tactus::IoError;
using tactus::kAudioFeatureDim;
using tactus::MotionClip;
using tactus::Rng;
using tactus::ShapeError;
using tactus::Tensor;

// Total kinetic energy between consecutive frames; entry t covers the
// midpoint time (t + 0.5) / fps.
std::vector<double> energy_series(const Tensor<double>& poses) {
    const int f = poses.dim(0), j = poses.dim(1);
    std::vector<double> e(static_cast<size_t>(f - 1), 0.0);
    for (int t = 0; t + 1 < f; ++t)
        for (int q = 0; q < j * 2; ++q) {
            double d = (*poses.data)[(t + 1) * j * 2 + q] - (*poses.data)[t * j * 2 + q];
            e[t] += d * d;
        }
    return e;
}

// Argmax of energy in a window of +/- half a beat interval around the beat,
// reported as a midpoint time.
double peak_near_beat(const std::vector<double>& energy, double beat, double fps, double ibi) {
    int best = -1;
    double best_e = -1;
    for (int t = 0; t < static_cast<int>(energy.size()); ++t) {
        double mid = (t + 0.5) / fps;
        if (std::abs(mid - beat) > ibi / 2) continue;
        if (energy[t] > best_e) {
            best_e = energy[t];
            best = t;
        }
    }
    EXPECT_GE(best, 0) << "no frames near beat " << beat;
    return (best + 0.5) / fps;
}

TEST(Tokens, VocabularyLayout) {
    EXPECT_EQ(tactus::style_token(0), 4);
    EXPECT_EQ(tactus::style_token(5), 9);
    EXPECT_EQ(tactus::setting_token(0), 10);
    EXPECT_EQ(tactus::setting_token(5), 15);
    EXPECT_EQ(tactus::camera_token(0), 16);
    EXPECT_EQ(tactus::camera_token(3), 19);
    EXPECT_THROW(tactus::style_token(6), ConfigError);
    EXPECT_THROW(tactus::style_token(-1), ConfigError);
    EXPECT_THROW(tactus::setting_token(6), ConfigError);
    EXPECT_THROW(tactus::camera_token(4), ConfigError);
    auto base = tactus::base_caption();
    EXPECT_EQ(base.ids, (std::vector<int>{1, 2, 3}));
    EXPECT_FALSE(base.detailed);
    auto full = tactus::make_caption(2, 1, 3);
    EXPECT_EQ(full.ids, (std::vector<int>{1, 2, 3, 6, 11, 19}));
    EXPECT_TRUE(full.detailed);
    for (int id : full.ids) EXPECT_LT(id, tactus::kVocabSize);
}

TEST(Tokens, DiversifyCaptionReplacementRate) {
    auto detailed = tactus::make_caption(1, 0, 0);
    Rng rng(101);
    auto same = tactus::diversify_caption(detailed, 0.0, rng);
    EXPECT_EQ(same.ids, detailed.ids);
    auto based = tactus::diversify_caption(detailed, 1.0, rng);
    EXPECT_EQ(based.ids, tactus::base_caption().ids);
    int hits = 0;
    const int n = 100000;
    for (int i = 0; i < n; ++i)
        if (!tactus::diversify_caption(detailed, 0.1, rng).detailed) ++hits;
    double frac = static_cast<double>(hits) / n;
    EXPECT_NEAR(frac, 0.1, 0.01);
    EXPECT_THROW(tactus::diversify_caption(detailed, -0.1, rng), ConfigError);
    EXPECT_THROW(tactus::diversify_caption(detailed, 1.1, rng), ConfigError);
}

TEST(Track, BeatGridIsExact) {
    auto t = tactus::make_track<double>(120, 4, 12, 0.0);
    ASSERT_EQ(t.beat_times.size(), 8u);
    for (size_t k = 0; k < t.beat_times.size(); ++k) EXPECT_DOUBLE_EQ(t.beat_times[k], 0.5 * k);
    auto shifted = tactus::make_track<double>(120, 4, 12, 0.2);
    ASSERT_EQ(shifted.beat_times.size(), 8u);
    EXPECT_DOUBLE_EQ(shifted.beat_times.front(), 0.2);
    Rng rng(7);
    for (int trial = 0; trial < 20; ++trial) {
        double tempo = rng.uniform(60.0, 200.0);
        auto track = tactus::synth_track(tempo, 4.0, 12.0, rng);
        tactus::validate_track(track);
        ASSERT_GE(track.beat_times.size(), 3u);
        for (size_t k = 1; k < track.beat_times.size(); ++k)
            EXPECT_NEAR(track.beat_times[k] - track.beat_times[k - 1], 60.0 / tempo, 1e-9);
        EXPECT_LT(track.beat_times.back(), track.duration_s);
    }
}

TEST(Track, FasterTempoScalesBeatCount) {
    auto base = tactus::make_track<double>(120, 4, 12, 0.1);
    auto faster = tactus::make_track<double>(150, 4, 12, 0.1);
    EXPECT_EQ(base.beat_times.size(), 8u);
    EXPECT_EQ(faster.beat_times.size(), 10u);  // 8 * 1.25
}

TEST(Track, EnvelopeArgmaxSitsOnBeatFrames) {
    Rng rng(11);
    auto t = tactus::synth_track(97.0, 4.0, 12.0, rng);
    const int f = t.features.dim(0);
    const double ibi = 60.0 / t.tempo_bpm;
    for (double b : t.beat_times) {
        int best = -1;
        double best_v = -1;
        for (int i = 0; i < f; ++i) {
            if (std::abs(i / 12.0 - b) > ibi / 2) continue;
            double v = (*t.features.data)[i * kAudioFeatureDim];
            if (v > best_v) {
                best_v = v;
                best = i;
            }
        }
        EXPECT_EQ(best, static_cast<int>(std::lround(b * 12.0))) << "beat at " << b;
    }
}

TEST(Track, PhaseColumnsStayOnTheUnitCircle) {
    Rng rng(13);
    for (int trial = 0; trial < 5; ++trial) {
        auto t = tactus::synth_track(rng.uniform(60.0, 200.0), 3.0, 12.0, rng);
        for (int i = 0; i < t.features.dim(0); ++i) {
            double s = (*t.features.data)[i * kAudioFeatureDim + 1];
            double c = (*t.features.data)[i * kAudioFeatureDim + 2];
            EXPECT_NEAR(s * s + c * c, 1.0, 1e-6);
        }
    }
}

TEST(Track, SynthRejectsTempoOutsideRange) {
    Rng rng(17);
    EXPECT_THROW(tactus::synth_track(59.9, 4.0, 12.0, rng), ConfigError);
    EXPECT_THROW(tactus::synth_track(200.1, 4.0, 12.0, rng), ConfigError);
    EXPECT_THROW(tactus::make_track<double>(120, -1, 12, 0), ConfigError);
    EXPECT_THROW(tactus::make_track<double>(120, 4, 0, 0), ConfigError);
    EXPECT_THROW(tactus::make_track<double>(120, 4, 12, -0.5), ConfigError);
}

TEST(Track, ResampleScalesEveryBeatTime) {
    Rng rng(19);
    auto t = tactus::synth_track(120.0, 4.0, 12.0, rng);
    auto fast = tactus::resample_track(t, 1.25);
    EXPECT_DOUBLE_EQ(fast.tempo_bpm, 150.0);
    EXPECT_DOUBLE_EQ(fast.duration_s, t.duration_s);
    ASSERT_GE(fast.beat_times.size(), t.beat_times.size());
    for (size_t k = 0; k < t.beat_times.size(); ++k)
        EXPECT_NEAR(fast.beat_times[k], t.beat_times[k] / 1.25, 1e-12);
    auto slow = tactus::resample_track(t, 0.75);
    EXPECT_DOUBLE_EQ(slow.tempo_bpm, 90.0);
    EXPECT_THROW(tactus::resample_track(t, 0.0), ConfigError);
    EXPECT_THROW(tactus::resample_track(t, -1.0), ConfigError);
}

TEST(Dance, KineticEnergyPeaksOnEveryBeat) {
    Rng rng(23);
    for (int style = 0; style < tactus::kStyleCount; ++style) {
        for (double tempo : {84.0, 120.0, 156.0}) {
            auto track = tactus::synth_track(tempo, 32.0 / 12.0, 12.0, rng);
            auto clip = tactus::synth_dance(track, style, rng);
            auto energy = energy_series(clip.poses);
            const double ibi = 60.0 / tempo;
            const double last_mid = (static_cast<double>(energy.size()) - 0.5) / 12.0;
            for (double b : track.beat_times) {
                if (b < 1.5 / 12.0 || b > last_mid - 1.5 / 12.0) continue;  // needs a full window
                double peak = peak_near_beat(energy, b, 12.0, ibi);
                EXPECT_LE(std::abs(peak - b), 1.0 / 12.0)
                    << "style " << style << " tempo " << tempo << " beat " << b;
            }
        }
    }
}

TEST(Dance, StatueStyleIsExactlyConstant) {
    Rng rng(29);
    auto track = tactus::synth_track(120.0, 32.0 / 12.0, 12.0, rng);
    auto clip = tactus::synth_dance(track, tactus::kStatueStyle, rng);
    const int f = clip.poses.dim(0), cols = clip.poses.dim(1) * 2;
    for (int t = 1; t < f; ++t)
        for (int c = 0; c < cols; ++c) ASSERT_EQ((*clip.poses.data)[t * cols + c], (*clip.poses.data)[c]);
}

TEST(Dance, SeedsDiversifyTheMotion) {
    Rng rng(31);
    auto track = tactus::synth_track(120.0, 32.0 / 12.0, 12.0, rng);
    Rng a(100), b(200);
    auto ca = tactus::synth_dance(track, 2, a);
    auto cb = tactus::synth_dance(track, 2, b);
    double dist = 0;
    for (size_t i = 0; i < ca.poses.data->size(); ++i) {
        double d = (*ca.poses.data)[i] - (*cb.poses.data)[i];
        dist += d * d;
    }
    EXPECT_GT(std::sqrt(dist / ca.poses.numel()), 0.0);
}

TEST(Dance, PosesStayInBounds) {
    Rng rng(37);
    for (int style = 0; style <= tactus::kStatueStyle; ++style) {
        auto track = tactus::synth_track(rng.uniform(80.0, 160.0), 32.0 / 12.0, 12.0, rng);
        auto clip = tactus::synth_dance(track, style, rng);
        for (double v : *clip.poses.data) {
            ASSERT_LE(std::abs(v), 1.0);
            ASSERT_TRUE(std::isfinite(v));
        }
    }
}

TEST(Dance, RejectsUnknownStyles) {
    Rng rng(41);
    auto track = tactus::synth_track(120.0, 2.0, 12.0, rng);
    EXPECT_THROW(tactus::synth_dance(track, -1, rng), ConfigError);
    EXPECT_THROW(tactus::synth_dance(track, tactus::kStatueStyle + 1, rng), ConfigError);
}

DatasetSpec<double> small_spec() {
    DatasetSpec<double> s;
    s.n_structured = 24;
    s.n_wild = 24;
    s.seed = 77;
    return s;
}

TEST(Dataset, PoolsAndDeterminism) {
    auto ds = tactus::make_dataset(small_spec());
    EXPECT_EQ(ds.structured.size(), 24u);
    EXPECT_EQ(ds.wild.size(), 24u);
    EXPECT_GE(ds.test.size(), 4u);
    auto again = tactus::make_dataset(small_spec());
    for (size_t i = 0; i < ds.structured.size(); ++i) {
        ASSERT_EQ(*ds.structured[i].clip.poses.data, *again.structured[i].clip.poses.data);
        ASSERT_EQ(ds.structured[i].caption.ids, again.structured[i].caption.ids);
        ASSERT_EQ(ds.structured[i].track.beat_times, again.structured[i].track.beat_times);
    }
    auto spec2 = small_spec();
    spec2.seed = 78;
    auto other = tactus::make_dataset(spec2);
    bool differs = false;
    for (size_t i = 0; i < ds.structured.size() && !differs; ++i)
        differs = *ds.structured[i].clip.poses.data != *other.structured[i].clip.poses.data;
    EXPECT_TRUE(differs);
}

TEST(Dataset, HeldOutTemposNeverLeakIntoTraining) {
    auto ds = tactus::make_dataset(small_spec());
    EXPECT_EQ(ds.train_tempos.size() + ds.test_tempos.size(), 9u);
    EXPECT_EQ(ds.test_tempos.size(), 2u);
    std::set<double> test_set(ds.test_tempos.begin(), ds.test_tempos.end());
    for (double t : ds.train_tempos) EXPECT_EQ(test_set.count(t), 0u);
    for (const auto& e : ds.structured) EXPECT_EQ(test_set.count(e.track.tempo_bpm), 0u);
    for (const auto& e : ds.wild) EXPECT_EQ(test_set.count(e.track.tempo_bpm), 0u);
    for (const auto& e : ds.test) EXPECT_EQ(test_set.count(e.track.tempo_bpm), 1u);
}

TEST(Dataset, WildPoolIsCroppedNoisyAndStillBeatAligned) {
    auto ds = tactus::make_dataset(small_spec());
    bool envelope_escapes_unit_range = false;
    for (const auto& e : ds.wild) {
        EXPECT_EQ(e.clip.poses.dim(0), 32);
        EXPECT_EQ(e.clip.source_tag, tactus::kSourceWild);
        tactus::validate_track(e.track);  // beat grid survives the crop exactly
        auto energy = energy_series(e.clip.poses);
        const double ibi = 60.0 / e.track.tempo_bpm;
        const double last_mid = (static_cast<double>(energy.size()) - 0.5) / 12.0;
        for (double b : e.track.beat_times) {
            if (b < 1.5 / 12.0 || b > last_mid - 1.5 / 12.0) continue;
            double peak = peak_near_beat(energy, b, 12.0, ibi);
            EXPECT_LE(std::abs(peak - b), 2.0 / 12.0);
        }
        for (int t = 0; t < 32; ++t) {
            double env = (*e.track.features.data)[t * kAudioFeatureDim];
            if (env < 0.0 || env > 1.0) envelope_escapes_unit_range = true;
        }
    }
    // additive envelope noise must leave the clean [0, 1] range somewhere
    EXPECT_TRUE(envelope_escapes_unit_range);
    for (const auto& e : ds.structured)
        for (int t = 0; t < 32; ++t) {
            double env = (*e.track.features.data)[t * kAudioFeatureDim];
            ASSERT_GE(env, 0.0);
            ASSERT_LE(env, 1.0);
        }
}

TEST(Dataset, CaptionsFollowTheSourceRule) {
    auto ds = tactus::make_dataset(small_spec());
    for (const auto& e : ds.structured) {
        EXPECT_TRUE(e.caption.detailed);
        EXPECT_EQ(e.caption.ids, tactus::make_caption(e.clip.style_id, 0, 0).ids);
    }
    for (const auto& e : ds.wild)
        EXPECT_EQ(e.caption.ids, tactus::caption_for(e.clip.style_id, tactus::kSourceWild, true).ids);
}

TEST(Dataset, RejectsBadSpecs) {
    auto bad = [](auto mutate) {
        auto s = small_spec();
        mutate(s);
        EXPECT_THROW(tactus::make_dataset(s), ConfigError);
    };
    bad([](auto& s) { s.n_structured = 0; s.n_wild = 0; });
    bad([](auto& s) { s.styles = {}; });
    bad([](auto& s) { s.styles = {6}; });
    bad([](auto& s) { s.tempo_lo = 50; });
    bad([](auto& s) { s.tempo_hi = 210; });
    bad([](auto& s) { s.tempo_lo = 160; s.tempo_hi = 120; });
    bad([](auto& s) { s.p_base = 1.5; });
    bad([](auto& s) { s.frames = 2; });
}

std::string temp_path(const char* name) { return std::string(::testing::TempDir()) + name; }

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
}

TEST(ClipIo, RoundTripIsByteIdentical) {
    auto spec = small_spec();
    spec.n_structured = 6;
    spec.n_wild = 6;
    auto ds = tactus::make_dataset(spec);
    std::vector<Example<double>> clips = ds.structured;
    clips.insert(clips.end(), ds.wild.begin(), ds.wild.end());
    const std::string p1 = temp_path("clips_a.mids"), p2 = temp_path("clips_b.mids");
    tactus::save_clips(p1, clips);
    auto loaded = tactus::load_clips<double>(p1);
    ASSERT_EQ(loaded.size(), clips.size());
    tactus::save_clips(p2, loaded);
    EXPECT_EQ(slurp(p1), slurp(p2));
    for (size_t i = 0; i < clips.size(); ++i) {
        EXPECT_EQ(loaded[i].clip.style_id, clips[i].clip.style_id);
        EXPECT_EQ(loaded[i].clip.source_tag, clips[i].clip.source_tag);
        EXPECT_EQ(loaded[i].caption.ids, clips[i].caption.ids);
        for (size_t k = 0; k < clips[i].track.beat_times.size(); ++k)
            EXPECT_EQ(loaded[i].track.beat_times[k], static_cast<double>(static_cast<float>(clips[i].track.beat_times[k])));
        for (size_t k = 0; k < clips[i].clip.poses.data->size(); ++k)
            ASSERT_EQ((*loaded[i].clip.poses.data)[k],
                      static_cast<double>(static_cast<float>((*clips[i].clip.poses.data)[k])));
    }
}

TEST(ClipIo, RejectsCorruptFiles) {
    auto spec = small_spec();
    spec.n_structured = 2;
    spec.n_wild = 2;
    auto ds = tactus::make_dataset(spec);
    const std::string path = temp_path("clips_corrupt.mids");
    tactus::save_clips(path, ds.structured);
    std::string good = slurp(path);

    std::string bad_magic = good;
    bad_magic[7] = '9';
    std::ofstream(path, std::ios::binary).write(bad_magic.data(), static_cast<std::streamsize>(bad_magic.size()));
    EXPECT_THROW(tactus::load_clips<double>(path), IoError);

    std::string truncated = good.substr(0, good.size() - 10);
    std::ofstream(path, std::ios::binary | std::ios::trunc)
        .write(truncated.data(), static_cast<std::streamsize>(truncated.size()));
    EXPECT_THROW(tactus::load_clips<double>(path), IoError);

    std::string trailing = good + "xx";
    std::ofstream(path, std::ios::binary | std::ios::trunc)
        .write(trailing.data(), static_cast<std::streamsize>(trailing.size()));
    EXPECT_THROW(tactus::load_clips<double>(path), IoError);

    EXPECT_THROW(tactus::load_clips<double>(temp_path("does_not_exist.mids")), IoError);
    EXPECT_THROW(tactus::save_clips<double>(temp_path("empty.mids"), {}), ConfigError);
}

TEST(ClipIo, ManifestListsEveryClipWithItsSplit) {
    auto spec = small_spec();
    spec.n_structured = 5;
    spec.n_wild = 5;
    auto ds = tactus::make_dataset(spec);
    const std::string path = temp_path("manifest.csv");
    tactus::write_manifest(path, ds);
    std::ifstream in(path);
    std::string line;
    int lines = 0, tests = 0, wilds = 0;
    ASSERT_TRUE(std::getline(in, line));
    EXPECT_EQ(line, "id,style,tempo,source,split");
    while (std::getline(in, line)) {
        ++lines;
        if (line.find(",test") != std::string::npos) ++tests;
        if (line.find(",wild,") != std::string::npos) ++wilds;
    }
    EXPECT_EQ(lines, static_cast<int>(ds.structured.size() + ds.wild.size() + ds.test.size()));
    EXPECT_EQ(tests, static_cast<int>(ds.test.size()));
    EXPECT_EQ(wilds, 5);
}

}  // namespace
