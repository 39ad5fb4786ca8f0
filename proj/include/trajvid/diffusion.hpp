#ifndef __TRAJVID_DIFFUSION_HPP__
#define __TRAJVID_DIFFUSION_HPP__

// Forward noising, masked noise-prediction loss, classifier-free guidance,
// and deterministic DDIM sampling with image-condition slice clamping.

#include <functional>
#include <vector>

#include "trajvid/backbone.hpp"
#include "trajvid/tensor.hpp"

namespace trajvid {

struct DiffusionSchedule {
    int64_t T = 1000;
    std::vector<double> beta;       // beta[t-1] = beta_t, size T
    std::vector<double> alpha_bar;  // alpha_bar[t], size T+1, alpha_bar[0] = 1
    int64_t sampler_steps = 30;
    double guidance_scale = 7.0;
};

DiffusionSchedule make_linear_schedule(int64_t T = 1000, double beta_start = 1e-4,
                                       double beta_end = 2e-2);
void validate_schedule(const DiffusionSchedule& s);

// z_t = sqrt(abar_t) z0 + sqrt(1 - abar_t) eps;  t in [0, T], t = 0 returns z0
Tensor q_sample(const Tensor& z0, int64_t t, const Tensor& eps, const DiffusionSchedule& s);

struct ConditionMask {
    std::vector<int64_t> unmasked;  // latent slice indices exempt from noise
};
void check_mask(const ConditionMask& mask, int64_t l);

struct ImageCondition {
    ConditionMask mask;
    Tensor values;  // [l, h, w, 4]; only unmasked slices are read
};

// model(z_t, t) -> predicted-noise graph node (lets tests stub the network)
using EpsModelG = std::function<ad::Var(const Tensor& z_t, int64_t t)>;

// Draws t and eps from rng, zeroes eps on unmasked slices, and returns the
// mean squared prediction error over masked positions only.
ad::Var training_loss_g(const Tensor& z0, const ConditionMask& mask,
                        const DiffusionSchedule& s, const EpsModelG& model, Rng& rng);

Tensor cfg_denoise(const Tensor& z_t, int64_t t, const std::vector<int64_t>& text_ids,
                   const MotionPatches* motion, const DiffusionSchedule& s,
                   const ParamMap& params, const BackboneConfig& cfg);

using EpsFn = std::function<Tensor(const Tensor& z_t, int64_t t)>;

// Deterministic DDIM (eta = 0) over sampler_steps evenly spaced timesteps.
// Unmasked slices are clamped to cond->values before the first step and
// after every update.
Tensor ddim_sample(const std::vector<int64_t>& latent_shape, const EpsFn& model,
                   const ImageCondition* cond, const DiffusionSchedule& s, uint64_t seed);

// Full pipeline: CFG noise prediction from the backbone.
Tensor sample_video_latent(const std::vector<int64_t>& latent_shape,
                           const std::vector<int64_t>& text_ids, const MotionPatches* motion,
                           const ImageCondition* cond, const DiffusionSchedule& s,
                           const ParamMap& params, const BackboneConfig& cfg, uint64_t seed);

}  // namespace trajvid

#endif
