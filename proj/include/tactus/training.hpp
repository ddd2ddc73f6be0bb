#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <map>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "tactus/data.hpp"
#include "tactus/diffusion.hpp"
#include "tactus/model.hpp"

namespace tactus {

enum class TrainStage : uint32_t { base = 0, adapter = 1 };

template <typename Real>
struct TrainConfig {
    TrainStage stage = TrainStage::base;
    int64_t steps = 2000;       // schedule horizon and default stop point
    int64_t stop_after = -1;    // pause here to save a resumable checkpoint; -1 runs to steps
    int batch = 8;
    Real lr = Real(1e-4);
    Real p_cond_drop = Real(0.1);
    Real p_base = Real(0.1);    // caption diversification rate, adapter stage only
    Real beta0 = Real(3);       // adapter stage; the base stage always trains log-uniform
    Real decay_rate = Real(6);
    uint64_t seed = 1;
    int64_t eval_every = 100;   // progress-reporting period for front ends
    std::string checkpoint_path;  // when non-empty the final checkpoint is written here

    void validate() const {
        if (steps < 1) throw ConfigError("train config: steps must be positive");
        if (stop_after >= 0 && stop_after > steps)
            throw ConfigError("train config: stop_after must not exceed steps");
        if (batch < 1) throw ConfigError("train config: batch must be positive");
        if (!(lr > Real(0))) throw ConfigError("train config: learning rate must be positive");
        if (!(p_cond_drop >= Real(0) && p_cond_drop <= Real(1)))
            throw ConfigError("train config: p_cond_drop must lie in [0,1]");
        if (!(p_base >= Real(0) && p_base <= Real(1)))
            throw ConfigError("train config: p_base must lie in [0,1]");
        if (beta0 < Real(1)) throw ConfigError("train config: beta0 must be >= 1");
        if (!(decay_rate > Real(0))) throw ConfigError("train config: decay_rate must be positive");
        if (eval_every < 1) throw ConfigError("train config: eval_every must be positive");
    }
};

template <typename Real>
struct AdamState {
    TensorMap<Real> m, v;
    int64_t t = 0;
};

template <typename Real>
struct Checkpoint {
    ModelConfig<Real> cfg;
    TrainStage stage = TrainStage::base;
    int64_t step = 0;
    uint64_t seed = 0;  // step s draws from Rng(seed).derive(s + 1), so (seed, step) is the full rng state
    TensorMap<Real> params;
    AdamState<Real> opt;
    ScheduleState<Real> schedule;

    Model<Real> model() const { return Model<Real>{cfg, params}; }
};

template <typename Real>
struct CurvePoint {
    int64_t step = 0;
    Real loss = Real(0);
    Real beta = Real(0);
    Real sigma_mean = Real(0);
};

template <typename Real>
struct TrainResult {
    Checkpoint<Real> ckpt;
    std::vector<CurvePoint<Real>> curve;
    Real uncond_fraction = Real(0);
    std::string warning;
};

namespace detail {

inline bool is_adapter_name(const std::string& n) { return n.rfind("adpt.", 0) == 0; }

template <typename Real>
Tensor<Real> deep_copy(const Tensor<Real>& t) {
    return Tensor<Real>(t.shape, std::make_shared<std::vector<Real>>(*t.data));
}

template <typename Real>
TensorMap<Real> deep_copy_params(const TensorMap<Real>& in) {
    TensorMap<Real> out;
    for (const auto& [n, t] : in) out.emplace(n, deep_copy(t));
    return out;
}

}  // namespace detail

// Shared two-stage loop. The checkpoint decides the stage: base trains every
// non-adapter tensor, adapter trains only "adpt." tensors with the base
// frozen (verified by fingerprint after the run). Each step draws its
// randomness from a stream derived from (seed, step), so a resumed run
// replays the exact sample sequence of an uninterrupted one.
template <typename Real>
TrainResult<Real> run_training(Checkpoint<Real> ckpt, const Dataset<Real>& data, const TrainConfig<Real>& tc) {
    tc.validate();
    ckpt.cfg.validate();
    if (data.structured.empty() || data.wild.empty())
        throw ConfigError("training: dataset needs non-empty structured and wild pools");
    const int64_t end = tc.stop_after >= 0 ? tc.stop_after : tc.steps;
    if (ckpt.step > end)
        throw ConfigError("training: checkpoint already at step " + std::to_string(ckpt.step));
    if (ckpt.schedule.total_steps != tc.steps)
        throw ConfigError("training: schedule horizon " + std::to_string(ckpt.schedule.total_steps) +
                          " != configured steps " + std::to_string(tc.steps));
    const bool adapter_stage = ckpt.stage == TrainStage::adapter;
    auto trainable = [adapter_stage](const std::string& n) {
        return detail::is_adapter_name(n) == adapter_stage;
    };
    std::vector<std::string> tnames;
    TensorMap<Real> frozen;
    for (const auto& [n, t] : ckpt.params) {
        if (trainable(n))
            tnames.push_back(n);
        else
            frozen.emplace(n, t);
    }
    if (tnames.empty()) throw ConfigError("training: no trainable parameters for this stage");
    const uint64_t frozen_before = param_fingerprint(frozen);

    if (ckpt.opt.m.empty() && ckpt.opt.v.empty()) {
        ckpt.opt.t = 0;
        for (const auto& n : tnames) {
            ckpt.opt.m.emplace(n, Tensor<Real>::zeros(ckpt.params.at(n).shape));
            ckpt.opt.v.emplace(n, Tensor<Real>::zeros(ckpt.params.at(n).shape));
        }
    } else {
        for (const auto& n : tnames)
            if (ckpt.opt.m.find(n) == ckpt.opt.m.end() || ckpt.opt.v.find(n) == ckpt.opt.v.end())
                throw ConfigError("training: optimizer state missing for '" + n + "'");
    }

    const Real b1 = Real(0.9), b2 = Real(0.999), eps = Real(1e-8);
    Rng root(ckpt.seed);
    TrainResult<Real> result;
    result.curve.reserve(static_cast<size_t>(end - ckpt.step));
    int64_t uncond = 0, samples = 0;

    for (int64_t step = ckpt.step; step < end; ++step) {
        Rng r = root.derive(static_cast<uint64_t>(step) + 1);
        const Real beta_used = ckpt.schedule.beta_current;
        TensorMap<Real> acc;
        for (const auto& n : tnames) acc.emplace(n, Tensor<Real>::zeros(ckpt.params.at(n).shape));
        Real loss_sum = 0, sigma_sum = 0;
        for (int i = 0; i < tc.batch; ++i) {
            // structured and wild pools mix 1:1
            const auto& pool = r.uniform() < 0.5 ? data.structured : data.wild;
            const Example<Real>& e = pool[static_cast<size_t>(r.uniform_int(static_cast<int>(pool.size())))];
            ConditionTokens cap = e.caption;
            if (adapter_stage) cap = diversify_caption(cap, tc.p_base, r);
            const bool drop = r.uniform() < tc.p_cond_drop;
            ++samples;
            if (drop) ++uncond;
            const Real sigma = sample_noise_level(ckpt.schedule, r);
            sigma_sum += sigma;
            Tensor<Real> y(std::vector<int>{ckpt.cfg.frames, ckpt.cfg.d_in()}, e.clip.poses.data);
            Tensor<Real> x = Tensor<Real>::randn(y.shape, r, sigma);
            for (size_t k = 0; k < x.data->size(); ++k) (*x.data)[k] += (*y.data)[k];

            GradTape<Real> tape;
            VarMap<Real> w = bind_params(tape, ckpt.params, trainable);
            std::optional<Var<Real>> audio;
            // audio rides only the conditional branch, dropped together with text
            if (adapter_stage && !drop) audio.emplace(augment_audio(ckpt.cfg, e.track.features));
            Var<Real> out = denoise_core(ckpt.cfg, w, Var<Real>(x), sigma,
                                         drop ? null_condition().ids : cap.ids,
                                         audio ? &*audio : nullptr);
            Var<Real> loss = sum_all(square(sub(out, Var<Real>(y))));
            tape.backward_from(loss);
            loss_sum += (*loss.value.data)[0];
            for (const auto& n : tnames) {
                Tensor<Real> g = tape.grad_tensor(w.at(n));
                auto& a = *acc.at(n).data;
                for (size_t k = 0; k < a.size(); ++k) a[k] += (*g.data)[k];
            }
        }
        const Real loss_step = loss_sum / Real(tc.batch);
        if (!std::isfinite(static_cast<double>(loss_step)))
            throw NumericError("training diverged at step " + std::to_string(step) + ": loss is not finite");

        ckpt.opt.t += 1;
        const Real c1 = Real(1) - std::pow(b1, Real(ckpt.opt.t));
        const Real c2 = Real(1) - std::pow(b2, Real(ckpt.opt.t));
        for (const auto& n : tnames) {
            auto& p = *ckpt.params.at(n).data;
            auto& m = *ckpt.opt.m.at(n).data;
            auto& v = *ckpt.opt.v.at(n).data;
            const auto& a = *acc.at(n).data;
            for (size_t k = 0; k < p.size(); ++k) {
                const Real g = a[k] / Real(tc.batch);
                m[k] = b1 * m[k] + (Real(1) - b1) * g;
                v[k] = b2 * v[k] + (Real(1) - b2) * g * g;
                p[k] -= tc.lr * (m[k] / c1) / (std::sqrt(v[k] / c2) + eps);
            }
        }
        ckpt.schedule = advance_schedule(ckpt.schedule);
        result.curve.push_back(CurvePoint<Real>{step, loss_step, beta_used, sigma_sum / Real(tc.batch)});
    }

    if (param_fingerprint(frozen) != frozen_before)
        throw std::logic_error("training: frozen parameters changed during the run");
    ckpt.step = end;
    result.uncond_fraction = samples > 0 ? Real(uncond) / Real(samples) : Real(0);
    if (tc.p_cond_drop == Real(0))
        result.warning = "p_cond_drop is 0: the unconditional branch is untrained and guided sampling is unreliable";
    result.ckpt = std::move(ckpt);
    if (!tc.checkpoint_path.empty()) save_checkpoint(result.ckpt, tc.checkpoint_path);
    return result;
}

// Stage 1. The result checkpoint carries only non-adapter tensors (adapters
// are attached after probing) and no audio attachment points; sigma is drawn
// log-uniform, which is the beta0 = 1 limit of the decaying-Beta schedule.
template <typename Real>
TrainResult<Real> train_base(const Model<Real>& init, const Dataset<Real>& data, const TrainConfig<Real>& tc) {
    if (tc.stage != TrainStage::base) throw ConfigError("train_base: config stage must be base");
    Checkpoint<Real> start;
    start.cfg = init.cfg;
    start.cfg.zica_layers.clear();
    start.stage = TrainStage::base;
    start.step = 0;
    start.seed = tc.seed;
    for (const auto& [n, t] : init.params)
        if (!detail::is_adapter_name(n)) start.params.emplace(n, detail::deep_copy(t));
    start.schedule = make_schedule(Real(1), tc.steps, tc.decay_rate, init.cfg.sigma_range);
    return run_training(std::move(start), data, tc);
}

// Freshly initialized adapters joined onto a trained base: random LoRA A with
// zero B, zero-initialized cross-attention output. cfg carries the adapter
// placement (zica_layers, rank, alpha, windowing, feature_addition); its
// architecture fields must match the checkpoint.
template <typename Real>
Checkpoint<Real> attach_adapters(const Checkpoint<Real>& base, const ModelConfig<Real>& cfg, uint64_t seed) {
    if (base.stage != TrainStage::base) throw ConfigError("attach_adapters: expected a base-stage checkpoint");
    const ModelConfig<Real>& b = base.cfg;
    if (cfg.layers != b.layers || cfg.d_model != b.d_model || cfg.heads != b.heads || cfg.frames != b.frames ||
        cfg.joints != b.joints || cfg.d_audio != b.d_audio || cfg.vocab != b.vocab ||
        cfg.time_enc_dims != b.time_enc_dims)
        throw ConfigError("attach_adapters: architecture fields differ from the base checkpoint");
    cfg.validate();
    Rng rng(seed);
    Model<Real> fresh = build_model(cfg, rng);
    Checkpoint<Real> out;
    out.cfg = cfg;
    out.stage = TrainStage::adapter;
    out.step = 0;
    out.seed = seed;
    out.params = detail::deep_copy_params(base.params);
    for (const auto& [n, t] : fresh.params) {
        if (detail::is_adapter_name(n)) {
            out.params.emplace(n, t);
        } else {
            auto it = out.params.find(n);
            if (it == out.params.end() || it->second.shape != t.shape)
                throw ConfigError("attach_adapters: base checkpoint is missing parameter '" + n + "'");
        }
    }
    return out;
}

// Stage 2: only adapter tensors move; the base fingerprint is asserted
// unchanged when the run finishes.
template <typename Real>
TrainResult<Real> train_adapters(const Checkpoint<Real>& attached, const Dataset<Real>& data,
                                 const TrainConfig<Real>& tc) {
    if (tc.stage != TrainStage::adapter) throw ConfigError("train_adapters: config stage must be adapter");
    if (attached.stage != TrainStage::adapter)
        throw ConfigError("train_adapters: attach adapters to the base checkpoint first");
    Checkpoint<Real> start;
    start.cfg = attached.cfg;
    start.stage = TrainStage::adapter;
    start.step = 0;
    start.seed = tc.seed;
    start.params = detail::deep_copy_params(attached.params);
    start.schedule = make_schedule(tc.beta0, tc.steps, tc.decay_rate, attached.cfg.sigma_range);
    return run_training(std::move(start), data, tc);
}

// Continues a paused run to tc.steps (or tc.stop_after). Stage, seed, and
// schedule horizon must match what the checkpoint recorded; the replayed
// steps equal an uninterrupted run bit for bit.
template <typename Real>
TrainResult<Real> resume_training(const Checkpoint<Real>& ckpt, const Dataset<Real>& data,
                                  const TrainConfig<Real>& tc) {
    if (tc.stage != ckpt.stage) throw ConfigError("resume: config stage differs from the checkpoint");
    if (tc.seed != ckpt.seed) throw ConfigError("resume: seed differs from the checkpoint");
    Checkpoint<Real> start = ckpt;
    start.params = detail::deep_copy_params(ckpt.params);
    start.opt.m = detail::deep_copy_params(ckpt.opt.m);
    start.opt.v = detail::deep_copy_params(ckpt.opt.v);
    return run_training(std::move(start), data, tc);
}

inline constexpr char kCheckpointMagic[] = "MICK0001";

namespace detail {

struct CkptEntry {
    uint8_t dtype = 0;  // 0: f64, 1: u64
    std::vector<int> dims;
    std::vector<double> f64;
    std::vector<uint64_t> u64;

    size_t count() const { return dtype == 0 ? f64.size() : u64.size(); }
};

inline void put_ckpt_entry(std::string& out, const std::string& name, const CkptEntry& e) {
    if (name.size() > 0xffff) throw ConfigError("checkpoint: entry name too long");
    put_u16(out, static_cast<uint16_t>(name.size()));
    out += name;
    out.push_back(static_cast<char>(e.dims.size()));
    int64_t numel = 1;
    for (int d : e.dims) {
        if (d <= 0) throw ConfigError("checkpoint: non-positive dimension");
        put_u32(out, static_cast<uint32_t>(d));
        numel *= d;
    }
    out.push_back(static_cast<char>(e.dtype));
    if (numel != static_cast<int64_t>(e.count())) throw ConfigError("checkpoint: entry size mismatch");
    if (e.dtype == 0)
        for (double v : e.f64) put_f64(out, v);
    else
        for (uint64_t v : e.u64) put_u64(out, v);
}

inline CkptEntry f64_entry(std::vector<double> values) {
    CkptEntry e;
    e.dtype = 0;
    e.dims = {static_cast<int>(values.size())};
    e.f64 = std::move(values);
    return e;
}

inline CkptEntry u64_entry(std::vector<uint64_t> values) {
    CkptEntry e;
    e.dtype = 1;
    e.dims = {static_cast<int>(values.size())};
    e.u64 = std::move(values);
    return e;
}

template <typename Real>
CkptEntry tensor_entry(const Tensor<Real>& t) {
    CkptEntry e;
    e.dtype = 0;
    e.dims = t.shape.empty() ? std::vector<int>{1} : t.shape;
    e.f64.reserve(t.data->size());
    for (Real v : *t.data) e.f64.push_back(static_cast<double>(v));
    return e;
}

}  // namespace detail

template <typename Real>
std::string encode_checkpoint(const Checkpoint<Real>& c) {
    std::map<std::string, detail::CkptEntry> dir;
    const ModelConfig<Real>& m = c.cfg;
    std::vector<double> cfgv = {static_cast<double>(m.layers),
                                static_cast<double>(m.d_model),
                                static_cast<double>(m.heads),
                                static_cast<double>(m.frames),
                                static_cast<double>(m.joints),
                                static_cast<double>(m.d_audio),
                                static_cast<double>(m.vocab),
                                static_cast<double>(m.lora_rank),
                                static_cast<double>(m.lora_alpha),
                                static_cast<double>(m.time_enc_dims),
                                m.windowed_audio ? 1.0 : 0.0,
                                static_cast<double>(m.audio_window),
                                m.feature_addition ? 1.0 : 0.0,
                                static_cast<double>(m.sigma_data),
                                static_cast<double>(m.sigma_range.sigma_min),
                                static_cast<double>(m.sigma_range.sigma_max),
                                static_cast<double>(m.zica_layers.size())};
    for (int z : m.zica_layers) cfgv.push_back(static_cast<double>(z));
    dir.emplace("meta.cfg", detail::f64_entry(std::move(cfgv)));
    dir.emplace("meta.ints",
                detail::u64_entry({static_cast<uint64_t>(c.stage), static_cast<uint64_t>(c.step),
                                   static_cast<uint64_t>(c.opt.t), static_cast<uint64_t>(c.schedule.step),
                                   static_cast<uint64_t>(c.schedule.total_steps), c.seed}));
    dir.emplace("meta.reals",
                detail::f64_entry({static_cast<double>(c.schedule.beta0),
                                   static_cast<double>(c.schedule.beta_current),
                                   static_cast<double>(c.schedule.decay_rate),
                                   static_cast<double>(c.schedule.sigma_range.sigma_min),
                                   static_cast<double>(c.schedule.sigma_range.sigma_max)}));
    for (const auto& [n, t] : c.params) dir.emplace("param." + n, detail::tensor_entry(t));
    for (const auto& [n, t] : c.opt.m) dir.emplace("adam.m." + n, detail::tensor_entry(t));
    for (const auto& [n, t] : c.opt.v) dir.emplace("adam.v." + n, detail::tensor_entry(t));

    std::string out(kCheckpointMagic, 8);
    detail::put_u32(out, static_cast<uint32_t>(dir.size()));
    for (const auto& [name, e] : dir) detail::put_ckpt_entry(out, name, e);
    return out;
}

template <typename Real>
Checkpoint<Real> decode_checkpoint(const std::string& buf) {
    if (buf.size() < 8 || buf.compare(0, 8, kCheckpointMagic, 8) != 0)
        throw IoError("checkpoint: bad magic or unsupported version");
    detail::ByteReader rd{buf, 8};
    const uint32_t count = rd.u32();
    std::map<std::string, detail::CkptEntry> dir;
    for (uint32_t i = 0; i < count; ++i) {
        const uint16_t len = rd.u16();
        rd.need(len);
        std::string name = buf.substr(rd.pos, len);
        rd.pos += len;
        detail::CkptEntry e;
        const uint8_t rank = rd.u8();
        if (rank > 4) throw IoError("checkpoint: entry '" + name + "' has rank " + std::to_string(rank));
        int64_t numel = 1;
        for (int d = 0; d < rank; ++d) {
            const uint32_t dim = rd.u32();
            if (dim == 0 || dim > (1u << 28)) throw IoError("checkpoint: bad dimension in '" + name + "'");
            e.dims.push_back(static_cast<int>(dim));
            numel *= dim;
        }
        if (numel > (int64_t(1) << 32)) throw IoError("checkpoint: entry '" + name + "' too large");
        e.dtype = rd.u8();
        if (e.dtype > 1) throw IoError("checkpoint: unknown dtype in '" + name + "'");
        if (e.dtype == 0) {
            e.f64.reserve(static_cast<size_t>(numel));
            for (int64_t k = 0; k < numel; ++k) e.f64.push_back(rd.f64());
        } else {
            e.u64.reserve(static_cast<size_t>(numel));
            for (int64_t k = 0; k < numel; ++k) e.u64.push_back(rd.u64());
        }
        if (!dir.emplace(std::move(name), std::move(e)).second)
            throw IoError("checkpoint: duplicate entry name");
    }
    if (rd.pos != buf.size()) throw IoError("checkpoint: trailing bytes");

    auto want = [&dir](const std::string& n) -> const detail::CkptEntry& {
        auto it = dir.find(n);
        if (it == dir.end()) throw IoError("checkpoint: missing entry '" + n + "'");
        return it->second;
    };
    const auto& cfgv = want("meta.cfg").f64;
    if (want("meta.cfg").dtype != 0 || cfgv.size() < 17) throw IoError("checkpoint: malformed meta.cfg");
    Checkpoint<Real> c;
    ModelConfig<Real>& m = c.cfg;
    m.layers = static_cast<int>(cfgv[0]);
    m.d_model = static_cast<int>(cfgv[1]);
    m.heads = static_cast<int>(cfgv[2]);
    m.frames = static_cast<int>(cfgv[3]);
    m.joints = static_cast<int>(cfgv[4]);
    m.d_audio = static_cast<int>(cfgv[5]);
    m.vocab = static_cast<int>(cfgv[6]);
    m.lora_rank = static_cast<int>(cfgv[7]);
    m.lora_alpha = static_cast<Real>(cfgv[8]);
    m.time_enc_dims = static_cast<int>(cfgv[9]);
    m.windowed_audio = cfgv[10] != 0.0;
    m.audio_window = static_cast<int>(cfgv[11]);
    m.feature_addition = cfgv[12] != 0.0;
    m.sigma_data = static_cast<Real>(cfgv[13]);
    m.sigma_range.sigma_min = static_cast<Real>(cfgv[14]);
    m.sigma_range.sigma_max = static_cast<Real>(cfgv[15]);
    const size_t nz = static_cast<size_t>(cfgv[16]);
    if (cfgv.size() != 17 + nz) throw IoError("checkpoint: malformed meta.cfg");
    for (size_t i = 0; i < nz; ++i) m.zica_layers.push_back(static_cast<int>(cfgv[17 + i]));
    try {
        m.validate();
    } catch (const ConfigError& e) {
        throw IoError(std::string("checkpoint: invalid model config: ") + e.what());
    }

    const auto& ints = want("meta.ints").u64;
    if (want("meta.ints").dtype != 1 || ints.size() != 6) throw IoError("checkpoint: malformed meta.ints");
    if (ints[0] > 1) throw IoError("checkpoint: unknown training stage");
    c.stage = static_cast<TrainStage>(ints[0]);
    c.step = static_cast<int64_t>(ints[1]);
    c.opt.t = static_cast<int64_t>(ints[2]);
    c.seed = ints[5];
    const auto& reals = want("meta.reals").f64;
    if (want("meta.reals").dtype != 0 || reals.size() != 5) throw IoError("checkpoint: malformed meta.reals");
    c.schedule.beta0 = static_cast<Real>(reals[0]);
    c.schedule.beta_current = static_cast<Real>(reals[1]);
    c.schedule.decay_rate = static_cast<Real>(reals[2]);
    c.schedule.sigma_range.sigma_min = static_cast<Real>(reals[3]);
    c.schedule.sigma_range.sigma_max = static_cast<Real>(reals[4]);
    c.schedule.step = static_cast<int64_t>(ints[3]);
    c.schedule.total_steps = static_cast<int64_t>(ints[4]);
    if (c.schedule.beta0 < Real(1) || c.schedule.beta_current < Real(1) || c.schedule.total_steps < 1 ||
        c.schedule.step < 0 || c.schedule.step > c.schedule.total_steps || c.step < 0)
        throw IoError("checkpoint: inconsistent schedule state");

    for (const auto& [name, e] : dir) {
        auto decode_tensor = [&]() {
            if (e.dtype != 0) throw IoError("checkpoint: tensor '" + name + "' must be f64");
            auto d = std::make_shared<std::vector<Real>>();
            d->reserve(e.f64.size());
            for (double v : e.f64) d->push_back(static_cast<Real>(v));
            return Tensor<Real>(e.dims, std::move(d));
        };
        if (name.rfind("param.", 0) == 0)
            c.params.emplace(name.substr(6), decode_tensor());
        else if (name.rfind("adam.m.", 0) == 0)
            c.opt.m.emplace(name.substr(7), decode_tensor());
        else if (name.rfind("adam.v.", 0) == 0)
            c.opt.v.emplace(name.substr(7), decode_tensor());
        else if (name != "meta.cfg" && name != "meta.ints" && name != "meta.reals")
            throw IoError("checkpoint: unrecognized entry '" + name + "'");
    }
    if (c.params.empty()) throw IoError("checkpoint: no parameters");
    if (c.opt.m.size() != c.opt.v.size()) throw IoError("checkpoint: optimizer moment maps disagree");
    for (const auto& [n, t] : c.opt.m) {
        auto it = c.opt.v.find(n);
        if (it == c.opt.v.end() || it->second.shape != t.shape)
            throw IoError("checkpoint: optimizer moment maps disagree on '" + n + "'");
        if (c.params.find(n) == c.params.end())
            throw IoError("checkpoint: optimizer state for unknown parameter '" + n + "'");
    }
    return c;
}

template <typename Real>
void save_checkpoint(const Checkpoint<Real>& c, const std::string& path) {
    detail::write_file(path, encode_checkpoint(c));
}

template <typename Real>
Checkpoint<Real> load_checkpoint(const std::string& path) {
    return decode_checkpoint<Real>(detail::read_file(path));
}

template <typename Real>
std::string curve_csv(const std::vector<CurvePoint<Real>>& curve) {
    auto num = [](Real v) {
        char b[32];
        std::snprintf(b, sizeof b, "%.10g", static_cast<double>(v));
        return std::string(b);
    };
    std::string s = "step,loss,beta,sigma_mean\n";
    for (const auto& p : curve)
        s += std::to_string(p.step) + "," + num(p.loss) + "," + num(p.beta) + "," + num(p.sigma_mean) + "\n";
    return s;
}

}  // namespace tactus
