#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "tactus/autograd.hpp"
#include "tactus/errors.hpp"
#include "tactus/rng.hpp"
#include "tactus/tensor.hpp"

namespace tactus {

// Cross-attention adapter weights. Row-vector convention throughout: queries
// are V[F,d] @ wq[d,d], keys/values project audio A[Ta,da] through wk/wv[da,d].
// wo starts all-zero, which makes the residual output exactly the input.
template <typename Real>
struct ZicaWeights {
    Tensor<Real> wq;  // [d, d]
    Tensor<Real> wk;  // [d_a, d]
    Tensor<Real> wv;  // [d_a, d]
    Tensor<Real> wo;  // [d, d]
    int heads = 1;

    int d_model() const { return wq.dim(0); }
    int d_audio() const { return wk.dim(0); }
    int head_dim() const { return d_model() / heads; }
};

template <typename Real>
struct ZicaVars {
    Var<Real> wq, wk, wv, wo;
    int heads = 1;
};

template <typename Real>
ZicaWeights<Real> zica_init(int d, int d_a, int heads, Rng& rng) {
    if (d <= 0 || d_a <= 0 || heads <= 0)
        throw ConfigError("zica_init: dimensions must be positive");
    if (d % heads != 0)
        throw ConfigError("zica_init: d " + std::to_string(d) + " not divisible by heads " + std::to_string(heads));
    ZicaWeights<Real> w;
    w.wq = Tensor<Real>::randn({d, d}, rng, Real(0.02));
    w.wk = Tensor<Real>::randn({d_a, d}, rng, Real(0.02));
    w.wv = Tensor<Real>::randn({d_a, d}, rng, Real(0.02));
    w.wo = Tensor<Real>::zeros({d, d});
    w.heads = heads;
    return w;
}

// Z = V + Attention(V, A) @ wo, multi-head, scaled by 1/sqrt(head_dim).
// An optional additive mask [F, T_a] (0 inside the window, large negative
// outside) restricts which audio tokens each frame may attend to.
template <typename Real>
Var<Real> zica_forward(const Var<Real>& v, const Var<Real>& a, const ZicaVars<Real>& w,
                       const Var<Real>* mask = nullptr) {
    if (v.value.rank() != 2 || a.value.rank() != 2)
        throw ShapeError("zica_forward: expects rank-2 V and A, got " + shape_str(v.value.shape) + " and " +
                         shape_str(a.value.shape));
    const int d = v.value.dim(1);
    if (w.wq.value.shape != std::vector<int>{d, d} || w.wo.value.shape != std::vector<int>{d, d})
        throw ShapeError("zica_forward: wq/wo must be [d,d] for d=" + std::to_string(d));
    if (w.wk.value.dim(0) != a.value.dim(1) || w.wv.value.dim(0) != a.value.dim(1))
        throw ShapeError("zica_forward: audio width " + std::to_string(a.value.dim(1)) + " vs wk " +
                         shape_str(w.wk.value.shape));
    if (w.heads <= 0 || d % w.heads != 0)
        throw ConfigError("zica_forward: d " + std::to_string(d) + " not divisible by heads " +
                          std::to_string(w.heads));
    if (mask && mask->value.shape != std::vector<int>{v.value.dim(0), a.value.dim(0)})
        throw ShapeError("zica_forward: mask " + shape_str(mask->value.shape) + " must be [frames, audio tokens]");
    const int hd = d / w.heads;
    Var<Real> q = matmul(v, w.wq);
    Var<Real> k = matmul(a, w.wk);
    Var<Real> val = matmul(a, w.wv);
    Var<Real> attn_out;
    for (int h = 0; h < w.heads; ++h) {
        Var<Real> qh = slice_last(q, h * hd, hd);
        Var<Real> kh = slice_last(k, h * hd, hd);
        Var<Real> vh = slice_last(val, h * hd, hd);
        Var<Real> scores = scale(matmul(qh, kh, true), Real(1) / std::sqrt(static_cast<Real>(hd)));
        if (mask) scores = add(scores, *mask);
        Var<Real> oh = matmul(softmax_last_axis(scores), vh);
        attn_out = h == 0 ? oh : concat_last(attn_out, oh);
    }
    return add(v, matmul(attn_out, w.wo));
}

template <typename Real>
Tensor<Real> zica_forward(const Tensor<Real>& v, const Tensor<Real>& a, const ZicaWeights<Real>& w) {
    ZicaVars<Real> wv{Var<Real>(w.wq), Var<Real>(w.wk), Var<Real>(w.wv), Var<Real>(w.wo), w.heads};
    return zica_forward(Var<Real>(v), Var<Real>(a), wv).value;
}

// Low-rank update pair. Column convention matches the update equation
// W + (alpha/r) B A with A[r, d_in], B[d_out, r]; B starts all-zero.
template <typename Real>
struct LoraPair {
    Tensor<Real> a;  // [r, d_in]
    Tensor<Real> b;  // [d_out, r]
    Real alpha = Real(1);

    int rank() const { return a.dim(0); }
    int d_in() const { return a.dim(1); }
    int d_out() const { return b.dim(0); }
};

template <typename Real>
LoraPair<Real> lora_init(int d_in, int d_out, int r, Real alpha, Rng& rng) {
    if (d_in <= 0 || d_out <= 0) throw ConfigError("lora_init: dimensions must be positive");
    if (r < 1 || r > std::min(d_in, d_out))
        throw ConfigError("lora_init: rank " + std::to_string(r) + " outside [1, min(" + std::to_string(d_in) +
                          "," + std::to_string(d_out) + ")]");
    if (alpha <= Real(0)) throw ConfigError("lora_init: alpha must be positive");
    LoraPair<Real> p;
    p.a = Tensor<Real>::randn({r, d_in}, rng, Real(1) / std::sqrt(static_cast<Real>(r)));
    p.b = Tensor<Real>::zeros({d_out, r});
    p.alpha = alpha;
    return p;
}

// (W + (alpha/r) B A) x for x a column vector [d_in] or matrix [d_in, n].
template <typename Real>
Tensor<Real> lora_apply(const Tensor<Real>& w, const LoraPair<Real>& p, const Tensor<Real>& x) {
    if (w.rank() != 2) throw ShapeError("lora_apply: W must be rank 2, got " + shape_str(w.shape));
    const int d_out = w.dim(0), d_in = w.dim(1);
    if (p.a.rank() != 2 || p.b.rank() != 2 || p.d_in() != d_in || p.d_out() != d_out)
        throw ShapeError("lora_apply: pair shapes " + shape_str(p.a.shape) + "/" + shape_str(p.b.shape) +
                         " do not fit W " + shape_str(w.shape));
    if (p.rank() > std::min(d_in, d_out) || p.b.dim(1) != p.rank())
        throw ConfigError("lora_apply: rank " + std::to_string(p.rank()) + " violates min(" + std::to_string(d_in) +
                          "," + std::to_string(d_out) + ")");
    bool vec = x.rank() == 1;
    if ((vec && x.dim(0) != d_in) || (!vec && (x.rank() != 2 || x.dim(0) != d_in)))
        throw ShapeError("lora_apply: x " + shape_str(x.shape) + " does not fit W " + shape_str(w.shape));
    Var<Real> xv = vec ? reshape(Var<Real>(x), {d_in, 1}) : Var<Real>(x);
    Var<Real> base = matmul(Var<Real>(w), xv);
    Var<Real> down = matmul(Var<Real>(p.a), xv);
    Var<Real> up = matmul(Var<Real>(p.b), down);
    Var<Real> out = add(base, scale(up, p.alpha / static_cast<Real>(p.rank())));
    return vec ? reshape(out, {d_out}).value : out.value;
}

// Model-side application in row convention: h[F,d_in] -> h@w + s*(h@A^T)@B^T.
// Same mathematics as lora_apply with everything transposed.
template <typename Real>
Var<Real> lora_forward(const Var<Real>& h, const Var<Real>& w_row, const Var<Real>& a, const Var<Real>& b,
                       Real alpha) {
    Var<Real> base = matmul(h, w_row);
    Var<Real> down = matmul(h, a, true);
    Var<Real> up = matmul(down, b, true);
    return add(base, scale(up, alpha / static_cast<Real>(a.value.dim(0))));
}

// Trainable adapter bundle: ZICA only at selected layers, LoRA on the q/k/v/o
// projections of every layer's self-attention.
template <typename Real>
struct LayerLora {
    LoraPair<Real> q, k, v, o;
};

template <typename Real>
struct AdapterSet {
    std::map<int, ZicaWeights<Real>> zica;
    std::vector<LayerLora<Real>> lora;
};

}  // namespace tactus
