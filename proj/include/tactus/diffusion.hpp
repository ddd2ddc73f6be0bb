#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "tactus/errors.hpp"
#include "tactus/rng.hpp"
#include "tactus/tensor.hpp"

namespace tactus {

template <typename Real>
struct SigmaRange {
    Real sigma_min = Real(0.002);
    Real sigma_max = Real(80);

    void validate() const {
        if (!(Real(0) < sigma_min && sigma_min < sigma_max))
            throw ConfigError("sigma range: need 0 < sigma_min < sigma_max, got [" + std::to_string(sigma_min) +
                              ", " + std::to_string(sigma_max) + "]");
    }
};

// Training-time noise-level distribution: starts as Beta(1, beta0) over the
// unit log-noise coordinate and decays exponentially toward Uniform(0,1).
template <typename Real>
struct ScheduleState {
    Real beta0 = Real(3);
    Real beta_current = Real(3);
    int64_t step = 0;
    int64_t total_steps = 1;
    Real decay_rate = Real(6);
    SigmaRange<Real> sigma_range;
};

template <typename Real>
Real schedule_beta(Real beta0, int64_t step, int64_t total_steps, Real decay_rate) {
    return Real(1) + (beta0 - Real(1)) * std::exp(-decay_rate * static_cast<Real>(step) / static_cast<Real>(total_steps));
}

template <typename Real>
ScheduleState<Real> make_schedule(Real beta0, int64_t total_steps, Real decay_rate = Real(6),
                                  SigmaRange<Real> range = {}) {
    if (beta0 < Real(1)) throw ConfigError("schedule: beta0 must be >= 1, got " + std::to_string(beta0));
    if (total_steps < 1) throw ConfigError("schedule: total_steps must be positive");
    if (decay_rate <= Real(0)) throw ConfigError("schedule: decay_rate must be positive");
    range.validate();
    ScheduleState<Real> st;
    st.beta0 = beta0;
    st.beta_current = beta0;
    st.step = 0;
    st.total_steps = total_steps;
    st.decay_rate = decay_rate;
    st.sigma_range = range;
    return st;
}

template <typename Real>
ScheduleState<Real> advance_schedule(const ScheduleState<Real>& st) {
    if (st.step >= st.total_steps)
        throw ConfigError("advance_schedule: step " + std::to_string(st.step) + " already at total_steps");
    ScheduleState<Real> out = st;
    out.step = st.step + 1;
    out.beta_current = schedule_beta(st.beta0, out.step, st.total_steps, st.decay_rate);
    return out;
}

// Density of Beta(1, beta): (1-x)^(beta-1) / B(1, beta) with B(1, beta) = 1/beta.
template <typename Real>
Real beta_pdf(Real x, Real beta) {
    if (!(x >= Real(0) && x <= Real(1)))
        throw NumericError("beta_pdf: x must lie in [0,1], got " + std::to_string(x));
    if (beta < Real(1)) throw NumericError("beta_pdf: beta must be >= 1, got " + std::to_string(beta));
    return beta * std::pow(Real(1) - x, beta - Real(1));
}

// Inverse CDF of Beta(1, beta): u = 1 - (1-v)^(1/beta).
template <typename Real>
Real beta_inverse_cdf(Real v, Real beta) {
    if (!(v >= Real(0) && v <= Real(1)))
        throw NumericError("beta_inverse_cdf: v must lie in [0,1], got " + std::to_string(v));
    return Real(1) - std::pow(Real(1) - v, Real(1) / beta);
}

// Log-linear map from the unit noise coordinate to sigma:
// u=0 -> sigma_min, u=1 -> sigma_max.
template <typename Real>
Real sigma_from_unit(const SigmaRange<Real>& range, Real u) {
    return range.sigma_min * std::pow(range.sigma_max / range.sigma_min, u);
}

template <typename Real>
Real sample_noise_level(const ScheduleState<Real>& st, Rng& rng) {
    Real u = beta_inverse_cdf(static_cast<Real>(rng.uniform()), st.beta_current);
    return sigma_from_unit(st.sigma_range, u);
}

// Sum of squared reconstruction error of the denoiser at one noise level.
// Batch averaging is the caller's concern.
template <typename Real, typename Denoiser>
Real edm_loss(Denoiser&& denoiser, const Tensor<Real>& y, Real sigma, const Tensor<Real>& noise) {
    if (!y.same_shape(noise))
        throw ShapeError("edm_loss: y " + shape_str(y.shape) + " vs noise " + shape_str(noise.shape));
    auto xd = std::make_shared<std::vector<Real>>(y.data->size());
    for (size_t i = 0; i < xd->size(); ++i) (*xd)[i] = (*y.data)[i] + (*noise.data)[i];
    Tensor<Real> den = denoiser(Tensor<Real>(y.shape, std::move(xd)), sigma);
    if (!den.same_shape(y))
        throw ShapeError("edm_loss: denoiser output " + shape_str(den.shape) + " vs y " + shape_str(y.shape));
    Real s = 0;
    for (size_t i = 0; i < y.data->size(); ++i) {
        Real d = (*den.data)[i] - (*y.data)[i];
        s += d * d;
    }
    return s;
}

// Probability-flow derivative dx/dsigma = -(D(x;sigma) - x)/sigma.
template <typename Real>
Tensor<Real> ode_derivative(const Tensor<Real>& denoised, const Tensor<Real>& x, Real sigma) {
    if (sigma <= Real(0)) throw NumericError("ode_derivative: sigma must be positive, got " + std::to_string(sigma));
    if (!denoised.same_shape(x))
        throw ShapeError("ode_derivative: denoised " + shape_str(denoised.shape) + " vs x " + shape_str(x.shape));
    auto out = std::make_shared<std::vector<Real>>(x.data->size());
    for (size_t i = 0; i < out->size(); ++i) (*out)[i] = -((*denoised.data)[i] - (*x.data)[i]) / sigma;
    return Tensor<Real>(x.shape, std::move(out));
}

template <typename Real>
struct GuidanceConfig {
    Real gamma = Real(6);

    void validate() const {
        if (gamma < Real(1)) throw ConfigError("guidance: gamma must be >= 1, got " + std::to_string(gamma));
    }
};

// Guided derivative -g(Dc - x)/sigma + (g-1)(Du - x)/sigma. At gamma == 1 this
// routes through ode_derivative so the collapse is bitwise, not approximate.
template <typename Real>
Tensor<Real> cfg_derivative(const Tensor<Real>& d_cond, const Tensor<Real>& d_uncond, const Tensor<Real>& x,
                            Real sigma, const GuidanceConfig<Real>& g) {
    g.validate();
    if (sigma <= Real(0)) throw NumericError("cfg_derivative: sigma must be positive, got " + std::to_string(sigma));
    if (!d_cond.same_shape(x) || !d_uncond.same_shape(x))
        throw ShapeError("cfg_derivative: shapes " + shape_str(d_cond.shape) + ", " + shape_str(d_uncond.shape) +
                         ", " + shape_str(x.shape) + " disagree");
    if (g.gamma == Real(1)) return ode_derivative(d_cond, x, sigma);
    auto out = std::make_shared<std::vector<Real>>(x.data->size());
    for (size_t i = 0; i < out->size(); ++i) {
        Real xc = (*x.data)[i];
        (*out)[i] = (-g.gamma * ((*d_cond.data)[i] - xc) + (g.gamma - Real(1)) * ((*d_uncond.data)[i] - xc)) / sigma;
    }
    return Tensor<Real>(x.shape, std::move(out));
}

// Karras-style power grid from sigma_max down to sigma_min, then 0 appended.
// Endpoints are pinned exactly.
template <typename Real>
std::vector<Real> sigma_grid(int n_steps, const SigmaRange<Real>& range, Real rho = Real(7)) {
    range.validate();
    if (n_steps < 1) throw ConfigError("sigma_grid: n_steps must be >= 1");
    if (rho <= Real(0)) throw ConfigError("sigma_grid: rho must be positive");
    std::vector<Real> out;
    out.reserve(static_cast<size_t>(n_steps) + 1);
    out.push_back(range.sigma_max);
    if (n_steps > 1) {
        Real a = std::pow(range.sigma_max, Real(1) / rho);
        Real b = std::pow(range.sigma_min, Real(1) / rho);
        for (int i = 1; i + 1 < n_steps; ++i) {
            Real t = static_cast<Real>(i) / static_cast<Real>(n_steps - 1);
            out.push_back(std::pow(a + t * (b - a), rho));
        }
        out.push_back(range.sigma_min);
    }
    out.push_back(Real(0));
    return out;
}

// Euler integration of the guided probability-flow ODE from x ~ N(0, sigma0^2 I)
// down the given grid. The denoiser pair is one callable with a conditional
// flag; at gamma == 1 the unconditional branch is never evaluated.
template <typename Real, typename DenoiserPair>
Tensor<Real> sample(DenoiserPair&& denoiser, std::vector<int> shape, const std::vector<Real>& sigmas,
                    const GuidanceConfig<Real>& g, Rng& rng) {
    g.validate();
    Tensor<Real>::validate_shape(shape);
    if (sigmas.size() < 2 || sigmas.back() != Real(0))
        throw ConfigError("sample: sigma grid must end at 0 and contain at least one step");
    for (size_t i = 0; i + 1 < sigmas.size(); ++i)
        if (!(sigmas[i] > sigmas[i + 1]))
            throw ConfigError("sample: sigma grid must be strictly decreasing at position " + std::to_string(i));
    Tensor<Real> x = Tensor<Real>::randn(shape, rng, sigmas[0]);
    for (size_t i = 0; i + 1 < sigmas.size(); ++i) {
        Real s = sigmas[i], s_next = sigmas[i + 1];
        Tensor<Real> dc = denoiser(x, s, true);
        if (!dc.same_shape(x))
            throw ShapeError("sample: denoiser output " + shape_str(dc.shape) + " vs state " + shape_str(x.shape));
        Tensor<Real> d;
        if (g.gamma == Real(1)) {
            d = ode_derivative(dc, x, s);
        } else {
            Tensor<Real> du = denoiser(x, s, false);
            if (!du.same_shape(x))
                throw ShapeError("sample: denoiser output " + shape_str(du.shape) + " vs state " +
                                 shape_str(x.shape));
            d = cfg_derivative(dc, du, x, s, g);
        }
        auto nx = std::make_shared<std::vector<Real>>(x.data->size());
        Real h = s_next - s;
        for (size_t j = 0; j < nx->size(); ++j) (*nx)[j] = (*x.data)[j] + h * (*d.data)[j];
        x = Tensor<Real>(x.shape, std::move(nx));
        check_finite("sample", x);
    }
    return x;
}

}  // namespace tactus
