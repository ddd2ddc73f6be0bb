#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "tactus/errors.hpp"
#include "tactus/rng.hpp"
#include "tactus/tensor.hpp"
#include "tactus/tokens.hpp"

namespace tactus {

inline constexpr int kAudioFeatureDim = 4;  // envelope, sin phase, cos phase, energy
inline constexpr int kStyleCount = 6;
// degenerate zero-amplitude style used only to exercise no-motion paths;
// it has no caption token and never appears in generated datasets
inline constexpr int kStatueStyle = 6;
inline constexpr int kSettingCount = 6;
inline constexpr int kCameraCount = 4;
inline constexpr int kVocabSize = 20;
inline constexpr double kEnvelopeWidth = 0.08;  // seconds

inline constexpr uint8_t kSourceStructured = 0;
inline constexpr uint8_t kSourceWild = 1;
inline constexpr uint8_t kSourceGenerated = 2;

// Token layout: 0 null, 1..3 base template, 4..9 styles, 10..15 settings,
// 16..19 cameras.
inline int style_token(int style) {
    if (style < 0 || style >= kStyleCount)
        throw ConfigError("style " + std::to_string(style) + " outside [0, " + std::to_string(kStyleCount) + ")");
    return 4 + style;
}

inline int setting_token(int setting) {
    if (setting < 0 || setting >= kSettingCount)
        throw ConfigError("setting " + std::to_string(setting) + " outside [0, " + std::to_string(kSettingCount) +
                          ")");
    return 10 + setting;
}

inline int camera_token(int camera) {
    if (camera < 0 || camera >= kCameraCount)
        throw ConfigError("camera " + std::to_string(camera) + " outside [0, " + std::to_string(kCameraCount) + ")");
    return 16 + camera;
}

inline ConditionTokens base_caption() { return ConditionTokens{{1, 2, 3}, false}; }

inline ConditionTokens make_caption(int style, int setting, int camera) {
    return ConditionTokens{{1, 2, 3, style_token(style), setting_token(setting), camera_token(camera)}, true};
}

// Captions are reconstructed from (style, source, detail) when loading the
// binary container, so the generation-time rule must be a pure function of
// those fields: studio clips get the fixed slots, wild clips get
// style-derived "auto-captioned" slots.
inline ConditionTokens caption_for(int style, uint8_t source, bool detailed) {
    if (!detailed) return base_caption();
    if (source == kSourceWild) return make_caption(style, 1 + style % (kSettingCount - 1), 1 + style % (kCameraCount - 1));
    return make_caption(style, 0, 0);
}

inline ConditionTokens diversify_caption(const ConditionTokens& c, double p_base, Rng& rng) {
    if (!(p_base >= 0.0 && p_base <= 1.0))
        throw ConfigError("p_base " + std::to_string(p_base) + " outside [0,1]");
    return rng.uniform() < p_base ? base_caption() : c;
}

template <typename Real>
struct AudioTrack {
    Real tempo_bpm = Real(120);
    Real duration_s = Real(0);
    Real fps = Real(12);
    std::vector<Real> beat_times;  // seconds, strictly increasing, in [0, duration)
    Tensor<Real> features;         // [frames, kAudioFeatureDim]
};

inline int frame_count(double duration_s, double fps) { return static_cast<int>(std::lround(duration_s * fps)); }

template <typename Real>
void validate_track(const AudioTrack<Real>& t, Real beat_tol = Real(1e-9)) {
    if (!(t.tempo_bpm > Real(0)) || !(t.duration_s > Real(0)) || !(t.fps > Real(0)))
        throw ConfigError("track: tempo, duration, and fps must be positive");
    const Real ibi = Real(60) / t.tempo_bpm;
    for (size_t i = 0; i < t.beat_times.size(); ++i) {
        Real b = t.beat_times[i];
        if (!(b >= Real(0)) || !(b < t.duration_s + beat_tol))
            throw ConfigError("track: beat " + std::to_string(i) + " outside [0, duration)");
        if (i > 0) {
            Real gap = b - t.beat_times[i - 1];
            if (!(gap > Real(0))) throw ConfigError("track: beat times must be strictly increasing");
            if (std::abs(gap - ibi) > beat_tol)
                throw ConfigError("track: inter-beat gap " + std::to_string(gap) + " deviates from 60/tempo");
        }
    }
    const int f = frame_count(t.duration_s, t.fps);
    if (t.features.shape != std::vector<int>{f, kAudioFeatureDim})
        throw ShapeError("track: features " + shape_str(t.features.shape) + " must be [" + std::to_string(f) + "," +
                         std::to_string(kAudioFeatureDim) + "]");
    check_finite("track features", t.features);
}

// Beats sit on the exact grid phase + k*(60/tempo) inside [0, duration).
// Feature columns: a Gaussian beat-proximity envelope peaking exactly at
// beats, unit-norm sin/cos of beat phase, and a tempo-scaled energy pulse.
template <typename Real>
AudioTrack<Real> make_track(Real tempo_bpm, Real duration_s, Real fps, Real phase) {
    if (!(tempo_bpm > Real(0))) throw ConfigError("make_track: tempo must be positive");
    if (!(duration_s > Real(0)) || !(fps > Real(0))) throw ConfigError("make_track: duration and fps must be positive");
    if (!(phase >= Real(0))) throw ConfigError("make_track: phase must be non-negative");
    AudioTrack<Real> t;
    t.tempo_bpm = tempo_bpm;
    t.duration_s = duration_s;
    t.fps = fps;
    const Real ibi = Real(60) / tempo_bpm;
    for (int k = 0;; ++k) {
        Real b = phase + Real(k) * ibi;
        if (!(b < duration_s - Real(1e-12))) break;
        t.beat_times.push_back(b);
    }
    const int f = frame_count(duration_s, fps);
    auto d = std::make_shared<std::vector<Real>>(static_cast<size_t>(f) * kAudioFeatureDim);
    const Real two_pi = Real(2) * static_cast<Real>(M_PI);
    for (int i = 0; i < f; ++i) {
        const Real time = Real(i) / fps;
        Real env = 0;
        for (Real b : t.beat_times) {
            Real z = (time - b) / Real(kEnvelopeWidth);
            env = std::max(env, std::exp(Real(-0.5) * z * z));
        }
        const Real ang = two_pi * (time - phase) / ibi;
        Real* row = d->data() + static_cast<size_t>(i) * kAudioFeatureDim;
        row[0] = env;
        row[1] = std::sin(ang);
        row[2] = std::cos(ang);
        row[3] = (tempo_bpm / Real(120)) * (Real(0.5) + Real(0.5) * std::cos(ang));
    }
    t.features = Tensor<Real>({f, kAudioFeatureDim}, std::move(d));
    return t;
}

template <typename Real>
AudioTrack<Real> synth_track(Real tempo_bpm, Real duration_s, Real fps, Rng& rng) {
    if (!(tempo_bpm >= Real(60) && tempo_bpm <= Real(200)))
        throw ConfigError("synth_track: tempo " + std::to_string(tempo_bpm) + " outside [60, 200] bpm");
    const Real phase = static_cast<Real>(rng.uniform()) * Real(60) / tempo_bpm;
    return make_track(tempo_bpm, duration_s, fps, phase);
}

// Playback speed change: tempo scales by the factor, every beat time by its
// inverse, duration and fps stay put.
template <typename Real>
AudioTrack<Real> resample_track(const AudioTrack<Real>& t, Real factor) {
    if (!(factor > Real(0))) throw ConfigError("resample_track: factor must be positive");
    const Real phase = t.beat_times.empty() ? Real(0) : t.beat_times.front() / factor;
    return make_track(t.tempo_bpm * factor, t.duration_s, t.fps, phase);
}

template <typename Real>
struct MotionClip {
    Tensor<Real> poses;  // [frames, joints, 2] in [-1, 1]
    Real fps = Real(12);
    int style_id = 0;
    uint8_t source_tag = kSourceStructured;
};

namespace detail {

template <typename Real>
struct StyleParams {
    std::vector<Real> base;   // [J][2] rest pose
    std::vector<Real> amp;    // [J] oscillation amplitude
    std::vector<Real> delta;  // [J] beat-phase offset, radians
    std::vector<Real> dir;    // [J][2] unit movement direction
};

// Style parameters are a pure function of (style, joints) so every caller
// sees the same choreography.
template <typename Real>
StyleParams<Real> style_params(int style, int joints) {
    Rng r(0x5EED0000ull + static_cast<uint64_t>(style));
    StyleParams<Real> p;
    p.base.resize(static_cast<size_t>(joints) * 2);
    p.amp.resize(joints);
    p.delta.resize(joints);
    p.dir.resize(static_cast<size_t>(joints) * 2);
    for (int j = 0; j < joints; ++j) {
        p.base[2 * j] = static_cast<Real>(r.uniform(-0.45, 0.45));
        p.base[2 * j + 1] = static_cast<Real>(r.uniform(-0.45, 0.45));
        p.amp[j] = style == kStatueStyle ? Real(0) : static_cast<Real>(r.uniform(0.25, 0.45));
        p.delta[j] = static_cast<Real>(r.uniform(-0.15, 0.15));
        const double a = r.uniform(0.0, 2.0 * M_PI);
        p.dir[2 * j] = static_cast<Real>(std::cos(a));
        p.dir[2 * j + 1] = static_cast<Real>(std::sin(a));
    }
    return p;
}

}  // namespace detail

// Each joint follows an integrated velocity pulse
//   v(theta) = cos(theta/2) * exp(kappa * (cos(theta) - 1)),
// where theta is beat phase. Frame-to-frame kinetic energy is then
// (1 + cos)/2 * exp(2 kappa (cos - 1)), monotone in cos(theta): one sharp
// peak per beat and no secondary maxima, so peak detection cannot drift off
// the beat. The half-angle factor flips the swing direction every beat,
// keeping the integral bounded. The statue style has zero amplitude and also
// drops the diversity noise so its pose is exactly constant.
template <typename Real>
MotionClip<Real> synth_dance(const AudioTrack<Real>& track, int style_id, Rng& rng, int joints = 8) {
    if (style_id < 0 || style_id > kStatueStyle)
        throw ConfigError("synth_dance: unknown style " + std::to_string(style_id));
    if (joints < 1) throw ConfigError("synth_dance: joints must be positive");
    const int f = frame_count(track.duration_s, track.fps);
    if (f < 2) throw ConfigError("synth_dance: track shorter than two frames");
    const auto p = detail::style_params<Real>(style_id, joints);
    const Real ibi = Real(60) / track.tempo_bpm;
    const Real phase = track.beat_times.empty() ? Real(0) : track.beat_times.front();
    const Real noise = style_id == kStatueStyle ? Real(0) : Real(0.01);
    const Real two_pi = Real(2) * static_cast<Real>(M_PI);
    const Real kappa = Real(2);
    const Real dtheta = two_pi / (ibi * track.fps);
    auto d = std::make_shared<std::vector<Real>>(static_cast<size_t>(f) * joints * 2);
    std::vector<Real> px(f), py(f);
    for (int j = 0; j < joints; ++j) {
        px[0] = 0;
        py[0] = 0;
        for (int t = 1; t < f; ++t) {
            const Real mid = (Real(t) - Real(0.5)) / track.fps;
            const Real theta = two_pi * (mid - phase) / ibi + p.delta[j];
            const Real v = std::cos(theta / Real(2)) * std::exp(kappa * (std::cos(theta) - Real(1)));
            const Real step = p.amp[j] * v * dtheta;
            px[t] = px[t - 1] + step * p.dir[2 * j];
            py[t] = py[t - 1] + step * p.dir[2 * j + 1];
        }
        Real mx = 0, my = 0;
        for (int t = 0; t < f; ++t) {
            mx += px[t];
            my += py[t];
        }
        mx /= Real(f);
        my /= Real(f);
        for (int t = 0; t < f; ++t) {
            (*d)[(static_cast<size_t>(t) * joints + j) * 2] = p.base[2 * j] + px[t] - mx;
            (*d)[(static_cast<size_t>(t) * joints + j) * 2 + 1] = p.base[2 * j + 1] + py[t] - my;
        }
    }
    for (auto& v : *d) v = std::clamp(v + noise * static_cast<Real>(rng.normal()), Real(-1), Real(1));
    MotionClip<Real> clip;
    clip.poses = Tensor<Real>({f, joints, 2}, std::move(d));
    clip.fps = track.fps;
    clip.style_id = style_id;
    return clip;
}

template <typename Real>
struct DatasetSpec {
    int n_structured = 64;
    int n_wild = 64;
    std::vector<int> styles{0, 1, 2, 3, 4, 5};
    Real tempo_lo = Real(80);
    Real tempo_hi = Real(160);
    uint64_t seed = 1;
    Real p_base = Real(0.1);
    int frames = 32;
    int joints = 8;
    Real fps = Real(12);

    void validate() const {
        if (n_structured < 0 || n_wild < 0 || n_structured + n_wild == 0)
            throw ConfigError("dataset spec: pools are empty");
        if (styles.empty()) throw ConfigError("dataset spec: styles list is empty");
        for (int s : styles)
            if (s < 0 || s >= kStyleCount) throw ConfigError("dataset spec: style " + std::to_string(s) + " unknown");
        if (!(Real(60) <= tempo_lo && tempo_lo < tempo_hi && tempo_hi <= Real(200)))
            throw ConfigError("dataset spec: need 60 <= tempo_lo < tempo_hi <= 200");
        if (!(p_base >= Real(0) && p_base <= Real(1))) throw ConfigError("dataset spec: p_base outside [0,1]");
        if (frames < 4 || joints < 1 || !(fps > Real(0)))
            throw ConfigError("dataset spec: need frames >= 4, joints >= 1, fps > 0");
    }
};

template <typename Real>
struct Example {
    AudioTrack<Real> track;
    MotionClip<Real> clip;
    ConditionTokens caption;
};

template <typename Real>
struct Dataset {
    DatasetSpec<Real> spec;
    std::vector<Example<Real>> structured, wild, test;
    std::vector<Real> train_tempos, test_tempos;
};

namespace detail {

// Cuts frames [start, start+frames) out of a longer generated pair, shifting
// beat times into the window.
template <typename Real>
Example<Real> crop_window(const AudioTrack<Real>& track, const MotionClip<Real>& clip, int start, int frames) {
    const int f_long = frame_count(track.duration_s, track.fps);
    const int joints = clip.poses.dim(1);
    if (start < 0 || start + frames > f_long) throw ConfigError("crop_window: window outside the clip");
    Example<Real> e;
    e.track.tempo_bpm = track.tempo_bpm;
    e.track.fps = track.fps;
    e.track.duration_s = Real(frames) / track.fps;
    const Real t0 = Real(start) / track.fps;
    for (Real b : track.beat_times) {
        Real shifted = b - t0;
        if (shifted >= Real(0) && shifted < e.track.duration_s - Real(1e-12)) e.track.beat_times.push_back(shifted);
    }
    auto feat = std::make_shared<std::vector<Real>>(static_cast<size_t>(frames) * kAudioFeatureDim);
    std::copy_n(track.features.data->begin() + static_cast<size_t>(start) * kAudioFeatureDim, feat->size(),
                feat->begin());
    e.track.features = Tensor<Real>({frames, kAudioFeatureDim}, std::move(feat));
    auto poses = std::make_shared<std::vector<Real>>(static_cast<size_t>(frames) * joints * 2);
    std::copy_n(clip.poses.data->begin() + static_cast<size_t>(start) * joints * 2, poses->size(), poses->begin());
    e.clip.poses = Tensor<Real>({frames, joints, 2}, std::move(poses));
    e.clip.fps = clip.fps;
    e.clip.style_id = clip.style_id;
    e.clip.source_tag = clip.source_tag;
    return e;
}

}  // namespace detail

// Two training pools plus a held-out test pool. Two of the nine grid tempos
// are reserved for the test pool, so no (tempo, style) pair is shared between
// train and test. Per-clip generators are derived streams, so generation
// order (or parallelism) cannot change the data.
template <typename Real>
Dataset<Real> make_dataset(const DatasetSpec<Real>& spec) {
    spec.validate();
    Dataset<Real> ds;
    ds.spec = spec;
    constexpr int kGrid = 9;
    Rng root(spec.seed);
    const int h1 = root.uniform_int(kGrid);
    int h2 = root.uniform_int(kGrid - 1);
    if (h2 >= h1) ++h2;
    for (int i = 0; i < kGrid; ++i) {
        const Real tempo = spec.tempo_lo + (spec.tempo_hi - spec.tempo_lo) * Real(i) / Real(kGrid - 1);
        if (i == h1 || i == h2)
            ds.test_tempos.push_back(tempo);
        else
            ds.train_tempos.push_back(tempo);
    }
    const Real duration = Real(spec.frames) / spec.fps;
    for (int i = 0; i < spec.n_structured; ++i) {
        Rng r = root.derive(1000000 + static_cast<uint64_t>(i));
        const Real tempo = ds.train_tempos[r.uniform_int(static_cast<int>(ds.train_tempos.size()))];
        const int style = spec.styles[r.uniform_int(static_cast<int>(spec.styles.size()))];
        Example<Real> e;
        e.track = synth_track(tempo, duration, spec.fps, r);
        e.clip = synth_dance(e.track, style, r, spec.joints);
        e.clip.source_tag = kSourceStructured;
        e.caption = caption_for(style, kSourceStructured, true);
        ds.structured.push_back(std::move(e));
    }
    const int f_long = spec.frames + std::max(1, spec.frames / 4);
    for (int i = 0; i < spec.n_wild; ++i) {
        Rng r = root.derive(2000000 + static_cast<uint64_t>(i));
        const Real tempo = ds.train_tempos[r.uniform_int(static_cast<int>(ds.train_tempos.size()))];
        const int style = spec.styles[r.uniform_int(static_cast<int>(spec.styles.size()))];
        AudioTrack<Real> track = synth_track(tempo, Real(f_long) / spec.fps, spec.fps, r);
        MotionClip<Real> clip = synth_dance(track, style, r, spec.joints);
        const int start = r.uniform_int(f_long - spec.frames + 1);
        Example<Real> e = detail::crop_window(track, clip, start, spec.frames);
        for (int t = 0; t < spec.frames; ++t)
            (*e.track.features.data)[static_cast<size_t>(t) * kAudioFeatureDim] +=
                Real(0.1) * static_cast<Real>(r.normal());
        e.clip.source_tag = kSourceWild;
        e.caption = caption_for(style, kSourceWild, true);
        ds.wild.push_back(std::move(e));
    }
    const int n_test = std::max(4, (spec.n_structured + spec.n_wild) / 10);
    for (int i = 0; i < n_test; ++i) {
        Rng r = root.derive(3000000 + static_cast<uint64_t>(i));
        const Real tempo = ds.test_tempos[r.uniform_int(static_cast<int>(ds.test_tempos.size()))];
        const int style = spec.styles[static_cast<size_t>(i) % spec.styles.size()];
        Example<Real> e;
        e.track = synth_track(tempo, duration, spec.fps, r);
        e.clip = synth_dance(e.track, style, r, spec.joints);
        e.clip.source_tag = kSourceStructured;
        e.caption = caption_for(style, kSourceStructured, true);
        ds.test.push_back(std::move(e));
    }
    return ds;
}

namespace detail {

inline void put_u16(std::string& out, uint16_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
}

inline void put_u32(std::string& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_f32(std::string& out, float v) { put_u32(out, std::bit_cast<uint32_t>(v)); }

inline void put_u64(std::string& out, uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline void put_f64(std::string& out, double v) { put_u64(out, std::bit_cast<uint64_t>(v)); }

struct ByteReader {
    const std::string& buf;
    size_t pos = 0;

    void need(size_t n) const {
        if (pos + n > buf.size()) throw IoError("truncated file: need " + std::to_string(n) + " more bytes");
    }
    uint8_t u8() {
        need(1);
        return static_cast<uint8_t>(buf[pos++]);
    }
    uint16_t u16() {
        need(2);
        uint16_t v = static_cast<uint16_t>(static_cast<uint8_t>(buf[pos]) |
                                           (static_cast<uint16_t>(static_cast<uint8_t>(buf[pos + 1])) << 8));
        pos += 2;
        return v;
    }
    uint32_t u32() {
        need(4);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<uint8_t>(buf[pos + i])) << (8 * i);
        pos += 4;
        return v;
    }
    float f32() { return std::bit_cast<float>(u32()); }
    uint64_t u64() {
        need(8);
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(static_cast<uint8_t>(buf[pos + i])) << (8 * i);
        pos += 8;
        return v;
    }
    double f64() { return std::bit_cast<double>(u64()); }
};

inline std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad()) throw IoError("read failed on " + path);
    return buf;
}

inline void write_file(const std::string& path, const std::string& buf) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    out.flush();
    if (!out) throw IoError("write failed on " + path);
}

}  // namespace detail

inline constexpr char kClipsMagic[9] = "MIDS0001";

// Versioned clip container: magic, u32 counts (clips, frames, joints,
// audio dim), then per clip u16 style, u8 source, u8 detail flag, f32 tempo,
// f32 pose block, f32 feature block, u16 beat count, f32 beat times.
// All integers and floats are little-endian.
template <typename Real>
void save_clips(const std::string& path, const std::vector<Example<Real>>& clips) {
    if (clips.empty()) throw ConfigError("save_clips: nothing to write");
    const int frames = clips.front().clip.poses.dim(0);
    const int joints = clips.front().clip.poses.dim(1);
    std::string buf;
    buf.append(kClipsMagic, 8);
    detail::put_u32(buf, static_cast<uint32_t>(clips.size()));
    detail::put_u32(buf, static_cast<uint32_t>(frames));
    detail::put_u32(buf, static_cast<uint32_t>(joints));
    detail::put_u32(buf, static_cast<uint32_t>(kAudioFeatureDim));
    for (const auto& e : clips) {
        if (e.clip.poses.shape != std::vector<int>{frames, joints, 2} ||
            e.track.features.shape != std::vector<int>{frames, kAudioFeatureDim})
            throw ShapeError("save_clips: all clips must share the container dimensions");
        detail::put_u16(buf, static_cast<uint16_t>(e.clip.style_id));
        buf.push_back(static_cast<char>(e.clip.source_tag));
        buf.push_back(static_cast<char>(e.caption.detailed ? 1 : 0));
        detail::put_f32(buf, static_cast<float>(e.track.tempo_bpm));
        for (Real v : *e.clip.poses.data) detail::put_f32(buf, static_cast<float>(v));
        for (Real v : *e.track.features.data) detail::put_f32(buf, static_cast<float>(v));
        detail::put_u16(buf, static_cast<uint16_t>(e.track.beat_times.size()));
        for (Real b : e.track.beat_times) detail::put_f32(buf, static_cast<float>(b));
    }
    detail::write_file(path, buf);
}

// The container does not carry fps; the caller supplies the rate the dataset
// was generated at (the desk default is 12).
template <typename Real>
std::vector<Example<Real>> load_clips(const std::string& path, Real fps = Real(12)) {
    if (!(fps > Real(0))) throw ConfigError("load_clips: fps must be positive");
    const std::string buf = detail::read_file(path);
    detail::ByteReader r{buf};
    r.need(8);
    if (buf.compare(0, 8, kClipsMagic, 8) != 0) throw IoError(path + ": bad magic, expected MIDS0001");
    r.pos = 8;
    const uint32_t n = r.u32(), frames = r.u32(), joints = r.u32(), d_audio = r.u32();
    if (d_audio != kAudioFeatureDim)
        throw IoError(path + ": audio feature dim " + std::to_string(d_audio) + " unsupported");
    if (frames == 0 || joints == 0) throw IoError(path + ": zero frames or joints");
    std::vector<Example<Real>> out;
    out.reserve(n);
    for (uint32_t c = 0; c < n; ++c) {
        Example<Real> e;
        const uint16_t style = r.u16();
        const uint8_t source = r.u8();
        const uint8_t detailed = r.u8();
        if (style > kStatueStyle) throw IoError(path + ": clip " + std::to_string(c) + " has unknown style");
        if (source > kSourceGenerated) throw IoError(path + ": clip " + std::to_string(c) + " has unknown source");
        e.track.tempo_bpm = static_cast<Real>(r.f32());
        if (!(e.track.tempo_bpm > Real(0))) throw IoError(path + ": clip " + std::to_string(c) + " has bad tempo");
        e.track.fps = fps;
        e.track.duration_s = Real(frames) / fps;
        auto poses = std::make_shared<std::vector<Real>>(static_cast<size_t>(frames) * joints * 2);
        for (auto& v : *poses) v = static_cast<Real>(r.f32());
        e.clip.poses = Tensor<Real>({static_cast<int>(frames), static_cast<int>(joints), 2}, std::move(poses));
        auto feats = std::make_shared<std::vector<Real>>(static_cast<size_t>(frames) * kAudioFeatureDim);
        for (auto& v : *feats) v = static_cast<Real>(r.f32());
        e.track.features = Tensor<Real>({static_cast<int>(frames), kAudioFeatureDim}, std::move(feats));
        const uint16_t beats = r.u16();
        e.track.beat_times.resize(beats);
        for (auto& b : e.track.beat_times) b = static_cast<Real>(r.f32());
        check_finite("loaded poses", e.clip.poses);
        check_finite("loaded features", e.track.features);
        e.clip.fps = fps;
        e.clip.style_id = style;
        e.clip.source_tag = source;
        e.caption = style == kStatueStyle ? base_caption() : caption_for(style, source, detailed != 0);
        out.push_back(std::move(e));
    }
    if (r.pos != buf.size()) throw IoError(path + ": trailing bytes after the last clip");
    return out;
}

inline const char* source_name(uint8_t tag) {
    switch (tag) {
        case kSourceStructured: return "structured";
        case kSourceWild: return "wild";
        case kSourceGenerated: return "generated";
        default: throw ConfigError("unknown source tag " + std::to_string(tag));
    }
}

// Headerless companion to a clips file: exactly one line per record, in
// container order, fields id, style, tempo, source, split.
template <typename Real>
void write_clips_manifest(const std::string& path, const std::vector<Example<Real>>& clips,
                          const std::string& split) {
    std::string buf;
    int id = 0;
    for (const auto& e : clips)
        buf += std::to_string(id++) + "," + std::to_string(e.clip.style_id) + "," +
               std::to_string(static_cast<double>(e.track.tempo_bpm)) + "," + source_name(e.clip.source_tag) +
               "," + split + "\n";
    detail::write_file(path, buf);
}

template <typename Real>
void write_manifest(const std::string& path, const Dataset<Real>& ds) {
    std::string buf = "id,style,tempo,source,split\n";
    int id = 0;
    auto emit = [&](const std::vector<Example<Real>>& pool, const char* source, const char* split) {
        for (const auto& e : pool) {
            buf += std::to_string(id++) + "," + std::to_string(e.clip.style_id) + "," +
                   std::to_string(static_cast<double>(e.track.tempo_bpm)) + "," + source + "," + split + "\n";
        }
    };
    emit(ds.structured, "structured", "train");
    emit(ds.wild, "wild", "train");
    emit(ds.test, "structured", "test");
    detail::write_file(path, buf);
}

}  // namespace tactus
