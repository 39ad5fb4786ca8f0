#ifndef __TRAJVID_BACKBONE_HPP__
#define __TRAJVID_BACKBONE_HPP__

// Spatial-temporal diffusion transformer over patchified video latents.
// Blocks alternate spatial, temporal, spatial, ... (even index = spatial);
// every residual branch starts zeroed so the backbone is the identity on
// tokens at initialization.

#include <string>
#include <vector>

#include <json.hpp>

#include "trajvid/fuser.hpp"
#include "trajvid/params.hpp"
#include "trajvid/trajectory.hpp"

namespace trajvid {

struct BackboneConfig {
    int64_t d = 64;
    int64_t heads = 4;
    int64_t n_blocks = 4;  // must be even: equal spatial/temporal counts
    int patch_size = 2;
    int64_t d_prime = 32;  // motion feature width, default d/2
    int64_t vocab_size = 1024;
    int64_t t_max = 1000;
    bool use_positional = true;
    FuserKind fuser_kind = FuserKind::adaptive_norm;
    FuserPlacement placement = FuserPlacement::temporal;
};

void validate_backbone_config(const BackboneConfig& cfg);
bool is_spatial_block(int block_idx);  // even index = spatial
bool placement_covers(FuserPlacement placement, bool spatial_block);

ParamMap backbone_init(const BackboneConfig& cfg, uint64_t seed);

// whitespace tokens hashed into the embedding table
std::vector<int64_t> tokenize_text(const std::string& prompt, int64_t vocab_size);

// [1, T, d] from token ids; empty ids -> all-zero [1, 1, d] (null conditioning)
ad::Var text_embed_g(ParamBind& p, const BackboneConfig& cfg, const std::vector<int64_t>& ids);

Tensor sinusoidal_timestep_embedding(int64_t t, int64_t d);
Tensor positional_encoding(int64_t l, int64_t gh, int64_t gw, int64_t d);

// One transformer block over tokens [l, s, d]; motion may be null.
ad::Var dit_block(ParamBind& p, const BackboneConfig& cfg, int block_idx, const ad::Var& tokens,
                  const ad::Var& text, const ad::Var& t_vec, const ad::Var* motion);

// Full noise prediction; z_t [l, h, w, 4], 0 <= t <= t_max.
ad::Var denoise_g(ParamBind& p, const BackboneConfig& cfg, const Tensor& z_t, int64_t t,
                  const ad::Var& text, const std::vector<ad::Var>* motion_levels);

Tensor denoise(const Tensor& z_t, int64_t t, const std::vector<int64_t>& text_ids,
               const MotionPatches* motion, const ParamMap& params, const BackboneConfig& cfg);

void save_backbone_checkpoint(const std::string& path, const ParamMap& params,
                              const BackboneConfig& cfg, const nlohmann::json& extra_meta);
ParamMap load_backbone_checkpoint(const std::string& path, BackboneConfig* cfg_out,
                                  nlohmann::json* meta_out = nullptr);

}  // namespace trajvid

#endif
