#ifndef __TRAJVID_MOTION_VAE_HPP__
#define __TRAJVID_MOTION_VAE_HPP__

// 3D variational autoencoder over [frames, h, w, 3] volumes.
// Compression is fixed at 4x temporal, 8x spatial, 4 latent channels.

#include <string>
#include <vector>

#include "trajvid/params.hpp"
#include "trajvid/tensor.hpp"

namespace trajvid {

inline constexpr int64_t kLatentChannels = 4;
inline constexpr int64_t kSpatialFactor = 8;
inline constexpr int64_t kTemporalFactor = 4;

struct VaeConfig {
    int64_t c1 = 12;  // first conv width
    int64_t c2 = 24;  // trunk width
    double kl_weight = 1e-6;
};

ParamMap vae_init(const VaeConfig& cfg, uint64_t seed);

// Throws validation_error naming the offending axis when dims are illegal.
void check_encoder_dims(const std::vector<int64_t>& shape);

std::vector<int64_t> latent_shape_for(const std::vector<int64_t>& input_shape);

// Graph-level pieces (used by training; Tensor wrappers below bind frozen).
// encode_dist output: [l, h, w, 8] = mean || logvar along channels.
ad::Var vae_encode_dist(ParamBind& p, const ad::Var& x);
ad::Var vae_decode_g(ParamBind& p, const ad::Var& z);

Tensor vae_encode(const Tensor& x, const ParamMap& params, bool sample = false,
                  uint64_t seed = 0);
Tensor vae_decode(const Tensor& z, const ParamMap& params);

struct VaeLossValue {
    double total = 0.0;
    double recon = 0.0;
    double kl = 0.0;
};
VaeLossValue vae_loss(const Tensor& x, const ParamMap& params, double kl_weight,
                      uint64_t seed);

struct VaeTrainConfig {
    int64_t steps = 2000;
    double learning_rate = 2e-3;
    int64_t batch_size = 1;
    int64_t max_frames = 32;  // frame counts drawn from {4, 8, ..., max_frames}
    uint64_t seed = 0;
    double kl_weight = 1e-6;
    // optional early stop: every eval_every steps, reconstruct the corpus and
    // stop once mean PSNR exceeds target_psnr (0 disables)
    int64_t eval_every = 0;
    double target_psnr = 0.0;
};

struct VaeTrainResult {
    ParamMap params;
    std::vector<double> loss_history;
    int64_t steps_run = 0;
};

VaeTrainResult vae_train(const std::vector<Tensor>& corpus, const VaeTrainConfig& config,
                         const ParamMap* init = nullptr);

void save_vae_checkpoint(const std::string& path, const ParamMap& params,
                         const VaeConfig& cfg, const std::string& training_config_json);
ParamMap load_vae_checkpoint(const std::string& path, VaeConfig* cfg_out = nullptr);

}  // namespace trajvid

#endif
