#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "tactus/data.hpp"
#include "tactus/model.hpp"

namespace tactus {

template <typename Real>
struct QualityWeights {
    Real pose_validity = Real(0.5);
    Real smoothness = Real(0.5);

    void validate() const {
        if (!(pose_validity >= Real(0)) || !(smoothness >= Real(0)) || !(pose_validity + smoothness > Real(0)))
            throw ConfigError("quality weights: must be non-negative with a positive sum");
    }
};

// Fraction of coordinates inside [-1, 1], averaged with how steady the
// consecutive-joint bone lengths stay over time. A single-joint skeleton has
// no bones and scores consistency 1.
template <typename Real>
Real pose_validity(const Tensor<Real>& poses) {
    if (poses.rank() != 3 || poses.dim(2) != 2)
        throw ShapeError("pose_validity: poses " + shape_str(poses.shape) + " must be [F, J, 2]");
    const int f = poses.dim(0), j = poses.dim(1);
    const Real* p = poses.ptr();
    int64_t inside = 0;
    for (int64_t i = 0; i < poses.numel(); ++i)
        if (std::abs(p[i]) <= Real(1)) ++inside;
    const Real in_bounds = Real(inside) / Real(poses.numel());
    Real consistency = Real(1);
    if (j > 1 && f > 1) {
        Real acc = 0;
        for (int b = 0; b + 1 < j; ++b) {
            Real mean = 0, mean_sq = 0;
            for (int t = 0; t < f; ++t) {
                const Real* a = p + (static_cast<int64_t>(t) * j + b) * 2;
                const Real dx = a[2] - a[0], dy = a[3] - a[1];
                const Real len = std::sqrt(dx * dx + dy * dy);
                mean += len;
                mean_sq += len * len;
            }
            mean /= Real(f);
            mean_sq /= Real(f);
            acc += std::sqrt(std::max(Real(0), mean_sq - mean * mean));
        }
        consistency = std::exp(-(acc / Real(j - 1)) / Real(0.1));
    }
    return Real(0.5) * in_bounds + Real(0.5) * consistency;
}

// exp(-25 * mean squared jerk), jerk being the third temporal difference.
template <typename Real>
Real smoothness(const Tensor<Real>& poses) {
    if (poses.rank() != 3 || poses.dim(2) != 2)
        throw ShapeError("smoothness: poses " + shape_str(poses.shape) + " must be [F, J, 2]");
    const int f = poses.dim(0), cols = poses.dim(1) * 2;
    if (f < 4) throw ConfigError("smoothness: need at least four frames");
    const Real* p = poses.ptr();
    Real acc = 0;
    for (int t = 0; t + 3 < f; ++t)
        for (int c = 0; c < cols; ++c) {
            const Real d3 = p[(t + 3) * cols + c] - 3 * p[(t + 2) * cols + c] + 3 * p[(t + 1) * cols + c] -
                            p[t * cols + c];
            acc += d3 * d3;
        }
    return std::exp(Real(-25) * acc / (Real(f - 3) * Real(cols)));
}

template <typename Real>
Real quality_score(const Tensor<Real>& poses, const QualityWeights<Real>& w = {}) {
    w.validate();
    return (w.pose_validity * pose_validity(poses) + w.smoothness * smoothness(poses)) /
           (w.pose_validity + w.smoothness);
}

template <typename Real>
struct AdaptabilityReport {
    std::vector<Real> scores;    // scores[l]: mean quality with block l bypassed
    std::vector<int> ranking;    // layer indices, highest score first, ties by lower index
    std::vector<int> selected;   // top default_selection_count layers, ascending
    Real untrained_loss = Real(0);
    std::string warning;         // non-empty when the checkpoint looks untrained
};

inline int default_selection_count(int layers) {
    if (layers < 1) throw ConfigError("selection count: layers must be positive");
    return static_cast<int>(std::lround(layers / 3.0));
}

// Top-k of the report's ranking, returned in ascending layer order. Because
// every k slices the same ranking, selections nest as k grows.
template <typename Real>
std::vector<int> select_layers(const AdaptabilityReport<Real>& report, int k) {
    const int layers = static_cast<int>(report.ranking.size());
    if (k < 0 || k > layers)
        throw ConfigError("select_layers: k must be in [0, " + std::to_string(layers) + "], got " +
                          std::to_string(k));
    std::vector<int> out(report.ranking.begin(), report.ranking.begin() + k);
    std::sort(out.begin(), out.end());
    return out;
}

namespace detail {

template <typename Real>
std::vector<int> rank_by_score(const std::vector<Real>& scores) {
    std::vector<int> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return scores[a] > scores[b]; });
    return order;
}

}  // namespace detail

// Scores each transformer block by the quality of clips sampled with that
// block bypassed; dispensable blocks leave quality high and are the safest
// places to attach audio conditioning. Sample i reuses one derived seed
// across all layers so every layer sees identical initial noise. The model
// is never written; the untrained check reconstructs each example's clip
// from noise at sigma_data and reports mean per-element squared error.
template <typename Real>
AdaptabilityReport<Real> probe_layers(const Model<Real>& m, const std::vector<Example<Real>>& eval_set,
                                      int n_samples, int steps, const GuidanceConfig<Real>& g, uint64_t seed,
                                      const QualityWeights<Real>& w = {}, Real loss_threshold = Real(0.05)) {
    if (eval_set.empty()) throw ConfigError("probe_layers: eval set is empty");
    if (n_samples < 1 || steps < 1) throw ConfigError("probe_layers: n_samples and steps must be >= 1");
    if (!(loss_threshold > Real(0))) throw ConfigError("probe_layers: loss threshold must be positive");
    w.validate();
    Rng root(seed);
    AdaptabilityReport<Real> report;
    report.scores.resize(static_cast<size_t>(m.cfg.layers), Real(0));
    for (int l = 0; l < m.cfg.layers; ++l) {
        Real acc = 0;
        for (int i = 0; i < n_samples; ++i) {
            const Example<Real>& e = eval_set[static_cast<size_t>(i) % eval_set.size()];
            Rng rng = root.derive(static_cast<uint64_t>(i));
            Tensor<Real> x = generate_clip(m, e.caption, &e.track.features, g, steps, rng, l);
            acc += quality_score(x, w);
        }
        report.scores[static_cast<size_t>(l)] = acc / Real(n_samples);
    }
    report.ranking = detail::rank_by_score(report.scores);
    report.selected = select_layers(report, default_selection_count(m.cfg.layers));

    Real loss = 0;
    for (size_t i = 0; i < eval_set.size(); ++i) {
        const Example<Real>& e = eval_set[i];
        Rng rng = root.derive(1000000 + static_cast<uint64_t>(i));
        const Real sigma = m.cfg.sigma_data;
        Tensor<Real> noise = Tensor<Real>::randn(e.clip.poses.shape, rng, sigma);
        DenoiserInput<Real> in;
        in.x = Tensor<Real>(e.clip.poses.shape, std::make_shared<std::vector<Real>>(*e.clip.poses.data));
        for (size_t k = 0; k < in.x.data->size(); ++k) (*in.x.data)[k] += (*noise.data)[k];
        in.sigma = sigma;
        in.cond = e.caption.ids;
        in.audio = e.track.features;
        Tensor<Real> d = denoise(m, in);
        Real ss = 0;
        for (size_t k = 0; k < d.data->size(); ++k) {
            const Real r = (*d.data)[k] - (*e.clip.poses.data)[k];
            ss += r * r;
        }
        loss += ss / Real(d.numel());
    }
    report.untrained_loss = loss / Real(eval_set.size());
    if (report.untrained_loss > loss_threshold)
        report.warning = "denoising error " + std::to_string(static_cast<double>(report.untrained_loss)) +
                         " exceeds " + std::to_string(static_cast<double>(loss_threshold)) +
                         "; checkpoint looks untrained";
    return report;
}

// One row per layer: its score, its position in the ranking, and whether it
// made the selected set. Doubles as the plot-ready adaptability series.
template <typename Real>
std::string adaptability_csv(const AdaptabilityReport<Real>& r) {
    std::vector<int> rank_of(r.ranking.size(), 0);
    for (size_t pos = 0; pos < r.ranking.size(); ++pos) rank_of[static_cast<size_t>(r.ranking[pos])] = static_cast<int>(pos);
    std::string s = "layer,score,rank,selected\n";
    for (size_t l = 0; l < r.scores.size(); ++l) {
        const bool sel = std::find(r.selected.begin(), r.selected.end(), static_cast<int>(l)) != r.selected.end();
        s += std::to_string(l) + "," + std::to_string(static_cast<double>(r.scores[l])) + "," +
             std::to_string(rank_of[l]) + "," + (sel ? "1" : "0") + "\n";
    }
    return s;
}

}  // namespace tactus
