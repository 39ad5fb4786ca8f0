#include "trajvid/diffusion.hpp"

#include <algorithm>
#include <cmath>

#include "trajvid/errors.hpp"

namespace trajvid {

namespace {

int64_t slice_stride(const Tensor& z) { return z.numel() / z.shape[0]; }

void clamp_slices(Tensor& z, const ImageCondition& cond) {
    const int64_t stride = slice_stride(z);
    for (int64_t idx : cond.mask.unmasked)
        std::copy(cond.values.data.begin() + idx * stride,
                  cond.values.data.begin() + (idx + 1) * stride, z.data.begin() + idx * stride);
}

}  // namespace

DiffusionSchedule make_linear_schedule(int64_t T, double beta_start, double beta_end) {
    if (T < 1) throw validation_error("schedule length must be positive");
    DiffusionSchedule s;
    s.T = T;
    s.sampler_steps = std::min<int64_t>(s.sampler_steps, T);
    s.beta.resize(static_cast<size_t>(T));
    s.alpha_bar.resize(static_cast<size_t>(T) + 1);
    s.alpha_bar[0] = 1.0;
    for (int64_t t = 1; t <= T; ++t) {
        const double frac = T == 1 ? 0.0 : static_cast<double>(t - 1) / static_cast<double>(T - 1);
        const double beta = beta_start + (beta_end - beta_start) * frac;
        s.beta[static_cast<size_t>(t - 1)] = beta;
        s.alpha_bar[static_cast<size_t>(t)] = s.alpha_bar[static_cast<size_t>(t - 1)] * (1.0 - beta);
    }
    validate_schedule(s);
    return s;
}

void validate_schedule(const DiffusionSchedule& s) {
    if (s.T < 1 || static_cast<int64_t>(s.beta.size()) != s.T ||
        static_cast<int64_t>(s.alpha_bar.size()) != s.T + 1)
        throw validation_error("schedule arrays must have length T and T+1");
    if (s.alpha_bar[0] != 1.0)
        throw validation_error("alpha_bar[0] must equal 1");
    for (int64_t t = 0; t < s.T; ++t) {
        const double b = s.beta[static_cast<size_t>(t)];
        if (!(b > 0.0 && b < 1.0))
            throw validation_error("beta must lie strictly inside (0, 1)");
        if (t > 0 && b <= s.beta[static_cast<size_t>(t - 1)])
            throw validation_error("beta must increase strictly");
        if (!(s.alpha_bar[static_cast<size_t>(t + 1)] < s.alpha_bar[static_cast<size_t>(t)]))
            throw validation_error("alpha_bar must decrease strictly");
    }
    if (s.sampler_steps < 1 || s.sampler_steps > s.T)
        throw validation_error("sampler steps must lie in [1, T]");
    if (s.guidance_scale < 0.0)
        throw validation_error("guidance scale must be nonnegative");
}

Tensor q_sample(const Tensor& z0, int64_t t, const Tensor& eps, const DiffusionSchedule& s) {
    if (t < 0 || t > s.T)
        throw validation_error("timestep " + std::to_string(t) + " outside [0, " +
                               std::to_string(s.T) + "]");
    if (eps.shape != z0.shape)
        throw validation_error("noise shape " + shape_str(eps.shape) +
                               " must match signal shape " + shape_str(z0.shape));
    const double ab = s.alpha_bar[static_cast<size_t>(t)];
    const double c0 = std::sqrt(ab), c1 = std::sqrt(1.0 - ab);
    Tensor out = z0;
    for (size_t i = 0; i < out.data.size(); ++i)
        out.data[i] = c0 * z0.data[i] + c1 * eps.data[i];
    return out;
}

void check_mask(const ConditionMask& mask, int64_t l) {
    for (int64_t idx : mask.unmasked)
        if (idx < 0 || idx >= l)
            throw validation_error("unmasked slice index " + std::to_string(idx) +
                                   " outside [0, " + std::to_string(l) + ")");
}

ad::Var training_loss_g(const Tensor& z0, const ConditionMask& mask, const DiffusionSchedule& s,
                        const EpsModelG& model, Rng& rng) {
    if (z0.ndim() != 4) throw validation_error("latent must be rank 4");
    const int64_t l = z0.shape[0];
    check_mask(mask, l);
    std::vector<bool> unmasked(static_cast<size_t>(l), false);
    for (int64_t idx : mask.unmasked) unmasked[static_cast<size_t>(idx)] = true;
    int64_t masked_count = 0;
    for (bool u : unmasked)
        if (!u) ++masked_count;
    if (masked_count == 0)
        throw validation_error("every latent slice is unmasked: nothing to supervise");

    const int64_t t = 1 + rng.randint(s.T);
    Tensor eps = randn(z0.shape, rng);
    const int64_t stride = slice_stride(z0);
    for (int64_t i = 0; i < l; ++i)
        if (unmasked[static_cast<size_t>(i)])
            std::fill(eps.data.begin() + i * stride, eps.data.begin() + (i + 1) * stride, 0.0);
    Tensor z_t = q_sample(z0, t, eps, s);

    ad::Var pred = model(z_t, t);
    if (pred->val.shape != z0.shape)
        throw validation_error("noise prediction shaped " + shape_str(pred->val.shape) +
                               " must match latent " + shape_str(z0.shape));
    Tensor weight = Tensor::zeros(z0.shape);
    for (int64_t i = 0; i < l; ++i)
        if (!unmasked[static_cast<size_t>(i)])
            std::fill(weight.data.begin() + i * stride, weight.data.begin() + (i + 1) * stride,
                      1.0);
    auto diff = ad::sub(pred, ad::constant(eps));
    auto sq = ad::mul(ad::mul(diff, diff), ad::constant(weight));
    return ad::scale(ad::sum_all(sq), 1.0 / static_cast<double>(masked_count * stride));
}

Tensor cfg_denoise(const Tensor& z_t, int64_t t, const std::vector<int64_t>& text_ids,
                   const MotionPatches* motion, const DiffusionSchedule& s,
                   const ParamMap& params, const BackboneConfig& cfg) {
    Tensor cond = denoise(z_t, t, text_ids, motion, params, cfg);
    if (text_ids.empty() || s.guidance_scale == 1.0) return cond;
    Tensor uncond = denoise(z_t, t, {}, motion, params, cfg);
    if (s.guidance_scale == 0.0) return uncond;
    Tensor out = uncond;
    for (size_t i = 0; i < out.data.size(); ++i)
        out.data[i] += s.guidance_scale * (cond.data[i] - uncond.data[i]);
    return out;
}

Tensor ddim_sample(const std::vector<int64_t>& latent_shape, const EpsFn& model,
                   const ImageCondition* cond, const DiffusionSchedule& s, uint64_t seed) {
    validate_schedule(s);
    if (latent_shape.size() != 4)
        throw validation_error("latent shape must be rank 4");
    if (cond) {
        check_mask(cond->mask, latent_shape[0]);
        require_shape(cond->values, latent_shape, "image-condition values");
    }
    Rng rng(Rng::derive(seed, Rng::hash_str("ddim_sample")));
    Tensor z = randn(latent_shape, rng);
    if (cond) clamp_slices(z, *cond);

    // timesteps round(k T / steps), k = steps..1, each paired with its successor
    const int64_t S = s.sampler_steps;
    for (int64_t k = S; k >= 1; --k) {
        const int64_t t = std::llround(static_cast<double>(k) * s.T / static_cast<double>(S));
        const int64_t t_prev =
            std::llround(static_cast<double>(k - 1) * s.T / static_cast<double>(S));
        const double ab = s.alpha_bar[static_cast<size_t>(t)];
        const double ab_prev = s.alpha_bar[static_cast<size_t>(t_prev)];
        Tensor eps_hat = model(z, t);
        require_shape(eps_hat, latent_shape, "noise prediction");
        const double c0 = std::sqrt(ab), c1 = std::sqrt(1.0 - ab);
        const double p0 = std::sqrt(ab_prev), p1 = std::sqrt(1.0 - ab_prev);
        for (size_t i = 0; i < z.data.size(); ++i) {
            const double x0 = (z.data[i] - c1 * eps_hat.data[i]) / c0;
            z.data[i] = p0 * x0 + p1 * eps_hat.data[i];
        }
        if (cond) clamp_slices(z, *cond);
    }
    return z;
}

Tensor sample_video_latent(const std::vector<int64_t>& latent_shape,
                           const std::vector<int64_t>& text_ids, const MotionPatches* motion,
                           const ImageCondition* cond, const DiffusionSchedule& s,
                           const ParamMap& params, const BackboneConfig& cfg, uint64_t seed) {
    return ddim_sample(
        latent_shape,
        [&](const Tensor& z_t, int64_t t) {
            return cfg_denoise(z_t, t, text_ids, motion, s, params, cfg);
        },
        cond, s, seed);
}

}  // namespace trajvid
