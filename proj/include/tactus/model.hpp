#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <type_traits>
#include <vector>

#include "tactus/adapters.hpp"
#include "tactus/autograd.hpp"
#include "tactus/diffusion.hpp"
#include "tactus/errors.hpp"
#include "tactus/rng.hpp"
#include "tactus/tensor.hpp"
#include "tactus/tokens.hpp"

namespace tactus {

template <typename Real>
struct ModelConfig {
    int layers = 8;
    int d_model = 64;
    int heads = 4;
    int frames = 32;
    int joints = 8;
    int d_audio = 4;
    int vocab = 20;
    SigmaRange<Real> sigma_range;
    std::vector<int> zica_layers;
    int lora_rank = 16;
    Real lora_alpha = 16;
    // fixed sinusoidal encodings concatenated to audio features so attention
    // can localize audio tokens in time; periods cover up to 2^(dims/2) frames
    int time_enc_dims = 12;
    bool windowed_audio = false;
    int audio_window = 4;
    // ablation: replace ZICA with a zero-initialized per-frame linear addition
    bool feature_addition = false;
    Real sigma_data = Real(0.5);

    int d_in() const { return joints * 2; }
    int d_audio_aug() const { return d_audio + time_enc_dims; }

    void validate() const {
        if (layers <= 0 || d_model <= 0 || heads <= 0 || frames <= 0 || joints <= 0 || d_audio <= 0 || vocab <= 1)
            throw ConfigError("model config: all dimensions must be positive (vocab > 1)");
        if (d_model % heads != 0)
            throw ConfigError("model config: d_model " + std::to_string(d_model) + " not divisible by heads " +
                              std::to_string(heads));
        if (lora_rank < 1 || lora_rank > d_model)
            throw ConfigError("model config: lora_rank " + std::to_string(lora_rank) + " outside [1, d_model]");
        if (lora_alpha <= Real(0)) throw ConfigError("model config: lora_alpha must be positive");
        if (time_enc_dims < 2 || time_enc_dims % 2 != 0)
            throw ConfigError("model config: time_enc_dims must be a positive even number");
        if (audio_window < 1) throw ConfigError("model config: audio_window must be >= 1");
        for (int l : zica_layers)
            if (l < 0 || l >= layers)
                throw ConfigError("model config: zica layer " + std::to_string(l) + " outside [0, " +
                                  std::to_string(layers) + ")");
        sigma_range.validate();
    }

    bool has_zica(int layer) const {
        return std::find(zica_layers.begin(), zica_layers.end(), layer) != zica_layers.end();
    }
};

template <typename Real>
struct Model {
    ModelConfig<Real> cfg;
    TensorMap<Real> params;
};

template <typename Real>
struct DenoiserInput {
    Tensor<Real> x;  // [F, J, 2] or [F, J*2]
    Real sigma = Real(1);
    std::vector<int> cond;
    std::optional<Tensor<Real>> audio;  // [T_a, d_audio]
};

namespace detail {

inline std::string blk(int l) { return "base.blk" + std::to_string(l); }
inline std::string lora_name(int l) { return "adpt.lora" + std::to_string(l); }
inline std::string zica_name(int l) { return "adpt.zica" + std::to_string(l); }
inline std::string fadd_name(int l) { return "adpt.fadd" + std::to_string(l); }

}  // namespace detail

template <typename Real>
Model<Real> build_model(const ModelConfig<Real>& cfg, Rng& rng) {
    cfg.validate();
    Model<Real> m;
    m.cfg = cfg;
    auto& p = m.params;
    const int d = cfg.d_model, din = cfg.d_in(), hid = 4 * cfg.d_model;
    const Real wstd = Real(1) / std::sqrt(static_cast<Real>(d));
    p.emplace("base.in.w", Tensor<Real>::randn({din, d}, rng, Real(1) / std::sqrt(static_cast<Real>(din))));
    p.emplace("base.in.b", Tensor<Real>::zeros({d}));
    p.emplace("base.pos", Tensor<Real>::randn({cfg.frames, d}, rng, Real(0.02)));
    p.emplace("base.cond.emb", Tensor<Real>::randn({cfg.vocab, d}, rng, Real(0.02)));
    p.emplace("base.sig.w", Tensor<Real>::randn({16, d}, rng, Real(0.125)));
    p.emplace("base.sig.b", Tensor<Real>::zeros({d}));
    for (int l = 0; l < cfg.layers; ++l) {
        for (const char* proj : {".attn.q.w", ".attn.k.w", ".attn.v.w", ".attn.o.w"})
            p.emplace(detail::blk(l) + proj, Tensor<Real>::randn({d, d}, rng, wstd));
        p.emplace(detail::blk(l) + ".mlp.w1", Tensor<Real>::randn({d, hid}, rng, wstd));
        p.emplace(detail::blk(l) + ".mlp.b1", Tensor<Real>::zeros({hid}));
        p.emplace(detail::blk(l) + ".mlp.w2",
                  Tensor<Real>::randn({hid, d}, rng, Real(1) / std::sqrt(static_cast<Real>(hid))));
        p.emplace(detail::blk(l) + ".mlp.b2", Tensor<Real>::zeros({d}));
    }
    p.emplace("base.out.w", Tensor<Real>::randn({d, din}, rng, Real(0.02)));
    p.emplace("base.out.b", Tensor<Real>::zeros({din}));
    for (int l = 0; l < cfg.layers; ++l) {
        for (const char* proj : {".q", ".k", ".v", ".o"}) {
            auto pair = lora_init<Real>(d, d, cfg.lora_rank, cfg.lora_alpha, rng);
            p.emplace(detail::lora_name(l) + proj + ".a", pair.a);
            p.emplace(detail::lora_name(l) + proj + ".b", pair.b);
        }
    }
    for (int l : cfg.zica_layers) {
        if (cfg.feature_addition) {
            p.emplace(detail::fadd_name(l) + ".w", Tensor<Real>::zeros({cfg.d_audio_aug(), d}));
        } else {
            auto zw = zica_init<Real>(d, cfg.d_audio_aug(), cfg.heads, rng);
            p.emplace(detail::zica_name(l) + ".wq", zw.wq);
            p.emplace(detail::zica_name(l) + ".wk", zw.wk);
            p.emplace(detail::zica_name(l) + ".wv", zw.wv);
            p.emplace(detail::zica_name(l) + ".wo", zw.wo);
        }
    }
    return m;
}

template <typename Real>
int64_t param_count(const Model<Real>& m) {
    int64_t n = 0;
    for (const auto& [name, t] : m.params) n += t.numel();
    return n;
}

// Fixed sinusoidal time encodings for audio tokens: pairs sin/cos at periods
// 2, 4, ..., 2^(dims/2) frames.
template <typename Real>
Tensor<Real> audio_time_encoding(int tokens, int dims) {
    if (tokens <= 0 || dims <= 0 || dims % 2 != 0)
        throw ConfigError("audio_time_encoding: need positive tokens and even dims");
    auto d = std::make_shared<std::vector<Real>>(static_cast<size_t>(tokens) * dims);
    for (int i = 0; i < tokens; ++i)
        for (int k = 0; k < dims / 2; ++k) {
            Real w = static_cast<Real>(M_PI) / static_cast<Real>(1 << k);
            (*d)[static_cast<size_t>(i) * dims + 2 * k] = std::sin(w * i);
            (*d)[static_cast<size_t>(i) * dims + 2 * k + 1] = std::cos(w * i);
        }
    return Tensor<Real>({tokens, dims}, std::move(d));
}

template <typename Real>
Tensor<Real> augment_audio(const ModelConfig<Real>& cfg, const Tensor<Real>& features) {
    if (features.rank() != 2 || features.dim(1) != cfg.d_audio)
        throw ShapeError("audio features " + shape_str(features.shape) + " must be [tokens, " +
                         std::to_string(cfg.d_audio) + "]");
    Var<Real> enc(audio_time_encoding<Real>(features.dim(0), cfg.time_enc_dims));
    return concat_last(Var<Real>(features), enc).value;
}

// Additive attention mask allowing frame i to see audio tokens within
// +/- window of its own time; requires token-per-frame alignment.
template <typename Real>
Tensor<Real> window_mask(int frames, int tokens, int window) {
    if (frames != tokens)
        throw ConfigError("window_mask: windowed audio attention needs one audio token per frame, got " +
                          std::to_string(tokens) + " tokens for " + std::to_string(frames) + " frames");
    Tensor<Real> m = Tensor<Real>::zeros({frames, tokens});
    for (int i = 0; i < frames; ++i)
        for (int j = 0; j < tokens; ++j)
            if (std::abs(i - j) > window) (*m.data)[static_cast<size_t>(i) * tokens + j] = Real(-1e9);
    return m;
}

// Binds every parameter as a constant Var except those the predicate marks
// trainable, which become tape leaves.
template <typename Real>
VarMap<Real> bind_params(GradTape<Real>& tape, const TensorMap<Real>& params,
                         const std::function<bool(const std::string&)>& trainable) {
    VarMap<Real> out;
    for (const auto& [name, t] : params)
        out.emplace(name, trainable && trainable(name) ? tape.leaf(t) : Var<Real>(t));
    return out;
}

// Raw-network-plus-preconditioning forward. x_flat is [F, J*2]; audio_aug, if
// present, is already time-encoded ([T_a, d_audio_aug]). skip_layer bypasses
// one whole block (attention, audio attachment, and MLP).
template <typename Real>
Var<Real> denoise_core(const ModelConfig<Real>& cfg, const VarMap<Real>& w, const Var<Real>& x_flat, Real sigma,
                       const std::vector<int>& cond, const Var<Real>* audio_aug, int skip_layer = -1) {
    if (sigma <= Real(0)) throw NumericError("denoise: sigma must be positive, got " + std::to_string(sigma));
    if (x_flat.value.shape != std::vector<int>{cfg.frames, cfg.d_in()})
        throw ShapeError("denoise: x " + shape_str(x_flat.value.shape) + " must be [" + std::to_string(cfg.frames) +
                         "," + std::to_string(cfg.d_in()) + "]");
    if (cond.empty()) throw ConfigError("denoise: condition token sequence is empty");
    for (int id : cond)
        if (id < 0 || id >= cfg.vocab)
            throw ConfigError("denoise: condition token " + std::to_string(id) + " outside vocab " +
                              std::to_string(cfg.vocab));
    check_finite("denoise input", x_flat.value);
    const int d = cfg.d_model, hd = d / cfg.heads;
    const Real sd2 = cfg.sigma_data * cfg.sigma_data, s2 = sigma * sigma;
    const Real c_in = Real(1) / std::sqrt(s2 + sd2);
    const Real c_skip = sd2 / (s2 + sd2);
    const Real c_out = sigma * cfg.sigma_data / std::sqrt(s2 + sd2);
    const Real c_noise = std::log(sigma) / Real(4);

    auto W = [&w](const std::string& name) -> const Var<Real>& {
        auto it = w.find(name);
        if (it == w.end()) throw ConfigError("denoise: model has no parameter '" + name + "'");
        return it->second;
    };

    Var<Real> h = add(matmul(scale(x_flat, c_in), W("base.in.w")), W("base.in.b"));
    h = add(h, W("base.pos"));
    // condition vector: mean token embedding plus Fourier-embedded noise level
    {
        Var<Real> emb = select_rows(W("base.cond.emb"), cond);
        Var<Real> ones(Tensor<Real>::full({1, static_cast<int>(cond.size())},
                                          Real(1) / static_cast<Real>(cond.size())));
        Var<Real> cvec = matmul(ones, emb);
        auto fd = std::make_shared<std::vector<Real>>(16);
        for (int k = 0; k < 8; ++k) {
            Real f = std::ldexp(c_noise, k);  // 2^k * c_noise
            (*fd)[static_cast<size_t>(2 * k)] = std::sin(f);
            (*fd)[static_cast<size_t>(2 * k + 1)] = std::cos(f);
        }
        Var<Real> sig = add(matmul(Var<Real>(Tensor<Real>({1, 16}, std::move(fd))), W("base.sig.w")),
                            W("base.sig.b"));
        h = add(h, add(cvec, sig));
    }

    Var<Real> mask;
    bool masked = false;
    if (audio_aug && cfg.windowed_audio && !cfg.feature_addition) {
        mask = Var<Real>(window_mask<Real>(cfg.frames, audio_aug->value.dim(0), cfg.audio_window));
        masked = true;
    }

    const Real inv_sqrt_hd = Real(1) / std::sqrt(static_cast<Real>(hd));
    for (int l = 0; l < cfg.layers; ++l) {
        if (l == skip_layer) continue;
        const std::string b = detail::blk(l), lo = detail::lora_name(l);
        // a checkpoint without adapter tensors runs on the plain base weights
        const bool has_lora = w.find(lo + ".q.a") != w.end();
        auto proj = [&](const Var<Real>& x, const std::string& p) {
            const std::string bw = b + ".attn." + p + ".w";
            if (!has_lora) return matmul(x, W(bw));
            return lora_forward(x, W(bw), W(lo + "." + p + ".a"), W(lo + "." + p + ".b"), cfg.lora_alpha);
        };
        Var<Real> hn = layer_norm_last(h);
        Var<Real> q = proj(hn, "q");
        Var<Real> k = proj(hn, "k");
        Var<Real> v = proj(hn, "v");
        Var<Real> cat;
        for (int hh = 0; hh < cfg.heads; ++hh) {
            Var<Real> qh = slice_last(q, hh * hd, hd);
            Var<Real> kh = slice_last(k, hh * hd, hd);
            Var<Real> vh = slice_last(v, hh * hd, hd);
            Var<Real> att = softmax_last_axis(scale(matmul(qh, kh, true), inv_sqrt_hd));
            Var<Real> oh = matmul(att, vh);
            cat = hh == 0 ? oh : concat_last(cat, oh);
        }
        h = add(h, proj(cat, "o"));
        if (audio_aug && cfg.has_zica(l)) {
            if (cfg.feature_addition) {
                if (audio_aug->value.dim(0) != cfg.frames)
                    throw ConfigError("denoise: feature addition needs one audio token per frame");
                h = add(h, matmul(*audio_aug, W(detail::fadd_name(l) + ".w")));
            } else {
                const std::string z = detail::zica_name(l);
                ZicaVars<Real> zw{W(z + ".wq"), W(z + ".wk"), W(z + ".wv"), W(z + ".wo"), cfg.heads};
                h = zica_forward(h, *audio_aug, zw, masked ? &mask : nullptr);
            }
        }
        Var<Real> mn = layer_norm_last(h);
        Var<Real> mid = tanh(add(matmul(mn, W(b + ".mlp.w1")), W(b + ".mlp.b1")));
        h = add(h, add(matmul(mid, W(b + ".mlp.w2")), W(b + ".mlp.b2")));
    }
    Var<Real> out = add(matmul(layer_norm_last(h), W("base.out.w")), W("base.out.b"));
    return add(scale(x_flat, c_skip), scale(out, c_out));
}

namespace detail {

template <typename Real>
Tensor<Real> flatten_motion(const ModelConfig<Real>& cfg, const Tensor<Real>& x) {
    const std::vector<int> full{cfg.frames, cfg.joints, 2};
    const std::vector<int> flat{cfg.frames, cfg.d_in()};
    if (x.shape == full) return Tensor<Real>(flat, x.data);
    if (x.shape == flat) return x;
    throw ShapeError("denoise: motion " + shape_str(x.shape) + " must be " + shape_str(full) + " or " +
                     shape_str(flat));
}

}  // namespace detail

template <typename Real>
Tensor<Real> denoise_with_skip(const Model<Real>& m, const DenoiserInput<Real>& in, int skip_layer) {
    if (skip_layer < -1 || skip_layer >= m.cfg.layers)
        throw ConfigError("denoise_with_skip: layer " + std::to_string(skip_layer) + " outside [0, " +
                          std::to_string(m.cfg.layers) + ")");
    GradTape<Real> tape;
    VarMap<Real> w = bind_params<Real>(tape, m.params, nullptr);
    Var<Real> x(detail::flatten_motion(m.cfg, in.x));
    Var<Real> out;
    if (in.audio.has_value()) {
        check_finite("denoise audio", *in.audio);
        Var<Real> aug(augment_audio(m.cfg, *in.audio));
        out = denoise_core<Real>(m.cfg, w, x, in.sigma, in.cond, &aug, skip_layer);
    } else {
        out = denoise_core<Real>(m.cfg, w, x, in.sigma, in.cond, nullptr, skip_layer);
    }
    return Tensor<Real>({m.cfg.frames, m.cfg.joints, 2}, out.value.data);
}

template <typename Real>
Tensor<Real> denoise(const Model<Real>& m, const DenoiserInput<Real>& in) {
    return denoise_with_skip(m, in, -1);
}

// FNV-1a over parameter names and value bits; the map is ordered, so the
// digest is stable across runs and platforms with the same float layout.
template <typename Real>
uint64_t param_fingerprint(const TensorMap<Real>& params) {
    uint64_t h = 1469598103934665603ull;
    auto mix = [&h](uint64_t v) {
        for (int i = 0; i < 8; ++i) {
            h ^= (v >> (8 * i)) & 0xff;
            h *= 1099511628211ull;
        }
    };
    for (const auto& [name, t] : params) {
        for (char c : name) {
            h ^= static_cast<unsigned char>(c);
            h *= 1099511628211ull;
        }
        for (Real v : *t.data) mix(std::bit_cast<uint64_t>(static_cast<double>(v)));
    }
    return h;
}

template <typename Real>
uint64_t param_fingerprint(const Model<Real>& m) {
    return param_fingerprint(m.params);
}

// Draws one clip with the deterministic ODE sampler. The unconditional
// guidance branch drops the caption and the audio together, so it is fully
// unconditional. skip_layer threads through to denoise_with_skip.
template <typename Real>
Tensor<Real> generate_clip(const Model<Real>& m, const ConditionTokens& cond,
                           std::type_identity_t<const Tensor<Real>*> audio, const GuidanceConfig<Real>& g,
                           int steps, Rng& rng, int skip_layer = -1) {
    const std::vector<Real> grid = sigma_grid<Real>(steps, m.cfg.sigma_range);
    auto denoiser = [&](const Tensor<Real>& x, Real sigma, bool conditioned) {
        DenoiserInput<Real> in;
        in.x = x;
        in.sigma = sigma;
        in.cond = conditioned ? cond.ids : null_condition().ids;
        if (conditioned && audio) in.audio = *audio;
        return denoise_with_skip(m, in, skip_layer);
    };
    return sample(denoiser, {m.cfg.frames, m.cfg.joints, 2}, grid, g, rng);
}

}  // namespace tactus
