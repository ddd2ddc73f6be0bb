#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "tactus/data.hpp"
#include "tactus/model.hpp"

namespace tactus {

inline constexpr double kBeatMatchWidth = 0.1;  // seconds

// Total kinetic energy between consecutive frames. Entry t covers the
// midpoint time (t + 0.5) / fps.
template <typename Real>
std::vector<Real> kinetic_energy(const MotionClip<Real>& clip) {
    if (clip.poses.rank() != 3 || clip.poses.dim(2) != 2)
        throw ShapeError("kinetic_energy: poses " + shape_str(clip.poses.shape) + " must be [F, J, 2]");
    const int f = clip.poses.dim(0), cols = clip.poses.dim(1) * 2;
    if (f < 3) throw ConfigError("kinetic_energy: need at least three frames");
    std::vector<Real> e(static_cast<size_t>(f - 1), Real(0));
    const Real* p = clip.poses.ptr();
    for (int t = 0; t + 1 < f; ++t)
        for (int c = 0; c < cols; ++c) {
            const Real d = p[(t + 1) * cols + c] - p[t * cols + c];
            e[t] += d * d;
        }
    return e;
}

namespace detail {

// Prominence of a local maximum: height above the higher of the two valley
// floors separating it from taller neighbors (or the sequence edges).
template <typename Real>
Real peak_prominence(const std::vector<Real>& e, int idx) {
    Real left_min = e[idx];
    for (int t = idx - 1; t >= 0; --t) {
        if (e[t] > e[idx]) break;
        left_min = std::min(left_min, e[t]);
    }
    Real right_min = e[idx];
    for (int t = idx + 1; t < static_cast<int>(e.size()); ++t) {
        if (e[t] > e[idx]) break;
        right_min = std::min(right_min, e[t]);
    }
    return e[idx] - std::max(left_min, right_min);
}

}  // namespace detail

// Times (seconds) of kinetic-energy local maxima whose prominence reaches
// 10% of the global maximum. Constant motion yields none.
template <typename Real>
std::vector<Real> kinematic_peaks(const MotionClip<Real>& clip) {
    const auto e = kinetic_energy(clip);
    const Real top = *std::max_element(e.begin(), e.end());
    std::vector<Real> peaks;
    if (!(top > Real(0))) return peaks;
    const Real floor = Real(0.1) * top;
    for (int t = 1; t + 1 < static_cast<int>(e.size()); ++t) {
        if (!(e[t] > e[t - 1] && e[t] > e[t + 1])) continue;
        if (detail::peak_prominence(e, t) < floor) continue;
        peaks.push_back((Real(t) + Real(0.5)) / clip.fps);
    }
    return peaks;
}

// Mean Gaussian credit exp(-d^2 / (2 tau^2)) of each peak against its nearest
// beat; no peaks (or no beats) scores 0.
template <typename Real>
Real score_from_peak_times(const std::vector<Real>& peaks, const std::vector<Real>& beats,
                           Real tau = Real(kBeatMatchWidth)) {
    if (!(tau > Real(0))) throw ConfigError("score_from_peak_times: tau must be positive");
    if (peaks.empty() || beats.empty()) return Real(0);
    Real total = 0;
    for (Real p : peaks) {
        Real best = std::numeric_limits<Real>::infinity();
        for (Real b : beats) best = std::min(best, std::abs(p - b));
        total += std::exp(-(best * best) / (Real(2) * tau * tau));
    }
    return total / Real(peaks.size());
}

template <typename Real>
Real beat_alignment_score(const MotionClip<Real>& clip, const AudioTrack<Real>& track,
                          Real tau = Real(kBeatMatchWidth)) {
    if (clip.fps != track.fps)
        throw ConfigError("beat_alignment_score: clip fps " + std::to_string(static_cast<double>(clip.fps)) +
                          " != track fps " + std::to_string(static_cast<double>(track.fps)));
    return score_from_peak_times(kinematic_peaks(clip), track.beat_times, tau);
}

// Mean pairwise root-mean-square pose distance.
template <typename Real>
Real diversity_score(const std::vector<MotionClip<Real>>& clips) {
    if (clips.size() < 2) throw ConfigError("diversity_score: need at least two clips");
    for (const auto& c : clips)
        if (!c.poses.same_shape(clips.front().poses))
            throw ShapeError("diversity_score: clip shapes differ: " + shape_str(c.poses.shape) + " vs " +
                             shape_str(clips.front().poses.shape));
    const size_t n = clips.front().poses.data->size();
    Real total = 0;
    int pairs = 0;
    for (size_t i = 0; i < clips.size(); ++i)
        for (size_t j = i + 1; j < clips.size(); ++j) {
            Real ss = 0;
            const Real* a = clips[i].poses.ptr();
            const Real* b = clips[j].poses.ptr();
            for (size_t k = 0; k < n; ++k) {
                const Real d = a[k] - b[k];
                ss += d * d;
            }
            total += std::sqrt(ss / Real(n));
            ++pairs;
        }
    return total / Real(pairs);
}

// Mean RMS distance between the two models' generations under identical
// seeds and conditions, with no audio on either side.
template <typename Real>
Real prior_drift(const Model<Real>& base, const Model<Real>& adapted, const std::vector<ConditionTokens>& conds,
                 int n, int steps, const GuidanceConfig<Real>& g, uint64_t seed) {
    if (base.cfg.layers != adapted.cfg.layers || base.cfg.d_model != adapted.cfg.d_model ||
        base.cfg.frames != adapted.cfg.frames || base.cfg.joints != adapted.cfg.joints ||
        base.cfg.heads != adapted.cfg.heads || base.cfg.vocab != adapted.cfg.vocab)
        throw ConfigError("prior_drift: model configurations differ");
    if (conds.empty() || n < 1) throw ConfigError("prior_drift: need conditions and n >= 1");
    Rng root(seed);
    Real total = 0;
    for (int i = 0; i < n; ++i) {
        const ConditionTokens& c = conds[static_cast<size_t>(i) % conds.size()];
        Rng ra = root.derive(static_cast<uint64_t>(i));
        Rng rb = root.derive(static_cast<uint64_t>(i));
        Tensor<Real> xa = generate_clip<Real>(base, c, nullptr, g, steps, ra);
        Tensor<Real> xb = generate_clip<Real>(adapted, c, nullptr, g, steps, rb);
        Real ss = 0;
        for (size_t k = 0; k < xa.data->size(); ++k) {
            const Real d = (*xa.data)[k] - (*xb.data)[k];
            ss += d * d;
        }
        total += std::sqrt(ss / Real(xa.numel()));
    }
    return total / Real(n);
}

// Peak rate (peaks per second) of generated motion as the track is replayed
// at each speed factor, relative to factor 1. The generator callable maps
// (track, sample index) to a MotionClip, so the same harness serves the
// trained model and the ground-truth generator.
template <typename Real, typename Generator>
std::vector<Real> tempo_response(Generator&& generate, const AudioTrack<Real>& base_track,
                                 const std::vector<Real>& factors, int n) {
    if (factors.empty() || n < 1) throw ConfigError("tempo_response: need factors and n >= 1");
    for (Real f : factors)
        if (!(f > Real(0))) throw ConfigError("tempo_response: factors must be positive");
    auto mean_rate = [&](const AudioTrack<Real>& track) {
        Real total = 0;
        for (int i = 0; i < n; ++i) {
            MotionClip<Real> clip = generate(track, i);
            total += Real(kinematic_peaks(clip).size()) / track.duration_s;
        }
        return total / Real(n);
    };
    const Real base_rate = mean_rate(base_track);
    if (!(base_rate > Real(0)))
        throw NumericError("tempo_response: no peaks detected at the base tempo");
    std::vector<Real> ratios;
    ratios.reserve(factors.size());
    for (Real f : factors) {
        const AudioTrack<Real> scaled = resample_track(base_track, f);
        ratios.push_back(mean_rate(scaled) / base_rate);
    }
    return ratios;
}

template <typename Real>
struct MetricsReport {
    Real beat_alignment = Real(0);
    Real diversity = Real(0);
    Real prior_drift = Real(0);
    std::vector<std::pair<Real, Real>> tempo_response;  // (factor, ratio)
    std::vector<Real> per_clip_alignment;

    void validate() const {
        auto finite = [](Real v) { return std::isfinite(static_cast<double>(v)); };
        if (!finite(beat_alignment) || !finite(diversity) || !finite(prior_drift))
            throw NumericError("metrics report: non-finite field");
        if (beat_alignment < Real(0) || beat_alignment > Real(1))
            throw NumericError("metrics report: beat_alignment outside [0,1]");
    }
};

template <typename Real>
std::string metrics_to_json(const MetricsReport<Real>& r) {
    auto num = [](Real v) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.10g", static_cast<double>(v));
        return std::string(buf);
    };
    std::string s = "{\n  \"beat_alignment\": " + num(r.beat_alignment) + ",\n  \"diversity\": " + num(r.diversity) +
                    ",\n  \"prior_drift\": " + num(r.prior_drift) + ",\n  \"tempo_response\": {";
    for (size_t i = 0; i < r.tempo_response.size(); ++i) {
        if (i) s += ", ";
        s += "\"" + num(r.tempo_response[i].first) + "\": " + num(r.tempo_response[i].second);
    }
    s += "},\n  \"per_clip_alignment\": [";
    for (size_t i = 0; i < r.per_clip_alignment.size(); ++i) {
        if (i) s += ", ";
        s += num(r.per_clip_alignment[i]);
    }
    s += "]\n}\n";
    return s;
}

template <typename Real>
std::string metrics_to_csv(const MetricsReport<Real>& r) {
    std::string s = "clip,beat_alignment\n";
    for (size_t i = 0; i < r.per_clip_alignment.size(); ++i)
        s += std::to_string(i) + "," + std::to_string(static_cast<double>(r.per_clip_alignment[i])) + "\n";
    return s;
}

// Plot-ready energy trace with beat markers: time, energy, is_beat_frame.
template <typename Real>
std::string energy_series_csv(const MotionClip<Real>& clip, const AudioTrack<Real>& track) {
    const auto e = kinetic_energy(clip);
    std::string s = "time,energy,is_beat_frame\n";
    for (size_t t = 0; t < e.size(); ++t) {
        const Real mid = (Real(t) + Real(0.5)) / clip.fps;
        bool on_beat = false;
        for (Real b : track.beat_times)
            if (std::abs(mid - b) <= Real(0.5) / clip.fps) on_beat = true;
        s += std::to_string(static_cast<double>(mid)) + "," + std::to_string(static_cast<double>(e[t])) + "," +
             (on_beat ? "1" : "0") + "\n";
    }
    return s;
}

}  // namespace tactus
