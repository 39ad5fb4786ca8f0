#include "trajvid/backbone.hpp"

#include <cmath>
#include <sstream>

#include "trajvid/archive.hpp"
#include "trajvid/attention.hpp"
#include "trajvid/errors.hpp"
#include "trajvid/motion_vae.hpp"

namespace trajvid {

namespace {

std::string block_name(int i) { return "block" + std::to_string(i); }

// rows of sin/cos pairs over positions, standard transformer frequencies
void fill_sincos(double* out, int64_t pos, int64_t d) {
    for (int64_t i = 0; i < d / 2; ++i) {
        const double freq = std::exp(-std::log(10000.0) * (2.0 * i) / static_cast<double>(d));
        out[2 * i] = std::sin(pos * freq);
        out[2 * i + 1] = std::cos(pos * freq);
    }
}

ad::Var modulated_layernorm(const ad::Var& x, const ad::Var& scale, const ad::Var& shift) {
    auto ln = ad::layernorm_last(x);
    return ad::add_rowvec(ad::mul_rowvec(ln, ad::add_scalar(scale, 1.0)), shift);
}

ad::Var as_vector(const ad::Var& row) {  // [1, d] -> [d]
    return ad::reshape(row, {row->val.shape[1]});
}

}  // namespace

void validate_backbone_config(const BackboneConfig& cfg) {
    if (cfg.d < 4 || cfg.d % 4 != 0)
        throw validation_error("hidden width must be a positive multiple of 4");
    if (cfg.n_blocks < 2 || cfg.n_blocks % 2 != 0)
        throw validation_error("block count must be even (equal spatial and temporal counts)");
    if (cfg.heads < 1 || cfg.d % cfg.heads != 0)
        throw validation_error("head count must divide hidden width");
    if (cfg.patch_size < 1) throw validation_error("patch size must be positive");
    if (cfg.d_prime < 1) throw validation_error("motion feature width must be positive");
    if (cfg.vocab_size < 1) throw validation_error("vocabulary size must be positive");
    if (cfg.t_max < 1) throw validation_error("timestep range must be positive");
}

bool is_spatial_block(int block_idx) { return block_idx % 2 == 0; }

bool placement_covers(FuserPlacement placement, bool spatial_block) {
    if (placement == FuserPlacement::both) return true;
    return spatial_block ? placement == FuserPlacement::spatial
                         : placement == FuserPlacement::temporal;
}

ParamMap backbone_init(const BackboneConfig& cfg, uint64_t seed) {
    validate_backbone_config(cfg);
    ParamMap p;
    Rng rng(Rng::derive(seed, Rng::hash_str("backbone_init")));
    const int64_t d = cfg.d;
    const int64_t in_features =
        static_cast<int64_t>(cfg.patch_size) * cfg.patch_size * kLatentChannels;

    Tensor table({cfg.vocab_size, d});
    for (double& v : table.data) v = 0.02 * rng.normal();
    p["text.table"] = table;

    p["time.fc1.w"] = orthogonal(d, d, rng);
    p["time.fc1.b"] = Tensor::zeros({d});
    p["time.fc2.w"] = orthogonal(d, d, rng);
    p["time.fc2.b"] = Tensor::zeros({d});

    p["embed.w"] = orthogonal(d, in_features, rng);
    p["embed.b"] = Tensor::zeros({d});
    p["head.w"] = Tensor::zeros({in_features, d});  // silent head at init
    p["head.b"] = Tensor::zeros({in_features});

    for (int i = 0; i < cfg.n_blocks; ++i) {
        const std::string b = block_name(i);
        attention_init(p, b + ".attn", d, d, d, Rng::derive(seed, Rng::hash_str(b + ".attn")));
        attention_init(p, b + ".cross", d, d, d, Rng::derive(seed, Rng::hash_str(b + ".cross")));
        p[b + ".ffn.fc1.w"] = orthogonal(4 * d, d, rng);
        p[b + ".ffn.fc1.b"] = Tensor::zeros({4 * d});
        p[b + ".ffn.fc2.w"] = Tensor::zeros({d, 4 * d});
        p[b + ".ffn.fc2.b"] = Tensor::zeros({d});
        p[b + ".mod.w"] = Tensor::zeros({4 * d, d});  // zero: plain layernorm at init
        p[b + ".mod.b"] = Tensor::zeros({4 * d});
        fuser_init(p, b + ".fuse", cfg.fuser_kind, d, cfg.d_prime, cfg.heads,
                   Rng::derive(seed, Rng::hash_str(b + ".fuse")));
    }
    extractor_init(p, cfg.d_prime, cfg.patch_size, cfg.n_blocks, seed);
    return p;
}

std::vector<int64_t> tokenize_text(const std::string& prompt, int64_t vocab_size) {
    std::vector<int64_t> ids;
    std::istringstream is(prompt);
    std::string word;
    while (is >> word)
        ids.push_back(static_cast<int64_t>(Rng::hash_str(word) % static_cast<uint64_t>(vocab_size)));
    return ids;
}

ad::Var text_embed_g(ParamBind& p, const BackboneConfig& cfg, const std::vector<int64_t>& ids) {
    if (ids.empty()) return ad::constant(Tensor::zeros({1, 1, cfg.d}));
    auto rows = ad::embed_rows(p["text.table"], ids);
    return ad::reshape(rows, {1, static_cast<int64_t>(ids.size()), cfg.d});
}

Tensor sinusoidal_timestep_embedding(int64_t t, int64_t d) {
    Tensor e({d});
    fill_sincos(e.data.data(), t, d);
    return e;
}

Tensor positional_encoding(int64_t l, int64_t gh, int64_t gw, int64_t d) {
    // spatial: half the width encodes the row, half the column;
    // temporal: a full-width slice encoding added on top
    Tensor pos({l, gh * gw, d});
    std::vector<double> trow(static_cast<size_t>(d));
    for (int64_t li = 0; li < l; ++li) {
        fill_sincos(trow.data(), li, d);
        for (int64_t y = 0; y < gh; ++y)
            for (int64_t x = 0; x < gw; ++x) {
                double* row = pos.data.data() + ((li * gh * gw) + y * gw + x) * d;
                fill_sincos(row, y, d / 2);
                fill_sincos(row + d / 2, x, d / 2);
                for (int64_t k = 0; k < d; ++k) row[k] += trow[static_cast<size_t>(k)];
            }
    }
    return pos;
}

ad::Var dit_block(ParamBind& p, const BackboneConfig& cfg, int block_idx, const ad::Var& tokens,
                  const ad::Var& text, const ad::Var& t_vec, const ad::Var* motion) {
    const std::string b = block_name(block_idx);
    const bool spatial = is_spatial_block(block_idx);
    const int64_t l = tokens->val.shape[0], s = tokens->val.shape[1], d = tokens->val.shape[2];

    ad::Var h = tokens;
    if (motion) {
        if ((*motion)->val.shape[0] != l || (*motion)->val.shape[1] != s)
            throw validation_error("motion level " + shape_str((*motion)->val.shape) +
                                   " does not match token grid " + shape_str(tokens->val.shape));
        if (placement_covers(cfg.placement, spatial))
            h = fuse(p, b + ".fuse", cfg.fuser_kind, h, *motion, cfg.heads);
    }

    auto mod_in = ad::reshape(ad::silu(t_vec), {1, d});
    auto mod = ad::linear(mod_in, p[b + ".mod.w"], p[b + ".mod.b"]);  // [1, 4d]
    auto shift1 = as_vector(ad::slice_last(mod, 0, d));
    auto scale1 = as_vector(ad::slice_last(mod, d, 2 * d));
    auto shift2 = as_vector(ad::slice_last(mod, 2 * d, 3 * d));
    auto scale2 = as_vector(ad::slice_last(mod, 3 * d, 4 * d));

    // self-attention: spatial attends over s within a slice, temporal over l per token
    auto pre = modulated_layernorm(h, scale1, shift1);
    ad::Var attn;
    if (spatial) {
        attn = mha(p, b + ".attn", pre, pre, cfg.heads);
    } else {
        auto swapped = ad::permute(pre, {1, 0, 2});
        attn = ad::permute(mha(p, b + ".attn", swapped, swapped, cfg.heads), {1, 0, 2});
    }
    h = ad::add(h, attn);

    auto flat = ad::reshape(ad::layernorm_last(h), {1, l * s, d});
    auto cross = ad::reshape(mha(p, b + ".cross", flat, text, cfg.heads), {l, s, d});
    h = ad::add(h, cross);

    auto pre2 = modulated_layernorm(h, scale2, shift2);
    auto ff = ad::linear(ad::silu(ad::linear(pre2, p[b + ".ffn.fc1.w"], p[b + ".ffn.fc1.b"])),
                         p[b + ".ffn.fc2.w"], p[b + ".ffn.fc2.b"]);
    return ad::add(h, ff);
}

ad::Var denoise_g(ParamBind& p, const BackboneConfig& cfg, const Tensor& z_t, int64_t t,
                  const ad::Var& text, const std::vector<ad::Var>* motion_levels) {
    validate_backbone_config(cfg);
    if (z_t.ndim() != 4 || z_t.shape[3] != kLatentChannels)
        throw validation_error("latent must be [l, h, w, " + std::to_string(kLatentChannels) +
                               "], got " + shape_str(z_t.shape));
    require_finite(z_t, "denoise input");
    if (t < 0 || t > cfg.t_max)
        throw validation_error("timestep " + std::to_string(t) + " outside [0, " +
                               std::to_string(cfg.t_max) + "]");
    const int64_t l = z_t.shape[0], hh = z_t.shape[1], ww = z_t.shape[2];
    if (hh % cfg.patch_size != 0 || ww % cfg.patch_size != 0)
        throw validation_error("patch size " + std::to_string(cfg.patch_size) +
                               " does not divide latent dims " + shape_str(z_t.shape));
    const int64_t s = (hh / cfg.patch_size) * (ww / cfg.patch_size);
    if (motion_levels) {
        if (static_cast<int64_t>(motion_levels->size()) != cfg.n_blocks)
            throw validation_error("expected " + std::to_string(cfg.n_blocks) +
                                   " motion levels, got " +
                                   std::to_string(motion_levels->size()));
        for (const auto& lv : *motion_levels)
            if (lv->val.shape != std::vector<int64_t>{l, s, cfg.d_prime})
                throw validation_error("motion level shaped " + shape_str(lv->val.shape) +
                                       " does not match tokens (" + std::to_string(l) + ", " +
                                       std::to_string(s) + ", " + std::to_string(cfg.d_prime) +
                                       ")");
    }

    auto tokens = ad::linear(ad::patchify_op(ad::constant(z_t), cfg.patch_size), p["embed.w"],
                             p["embed.b"]);
    if (cfg.use_positional)
        tokens = ad::add(tokens, ad::constant(positional_encoding(
                                     l, hh / cfg.patch_size, ww / cfg.patch_size, cfg.d)));

    auto t_row = ad::reshape(ad::constant(sinusoidal_timestep_embedding(t, cfg.d)), {1, cfg.d});
    auto t_vec = as_vector(ad::linear(ad::silu(ad::linear(t_row, p["time.fc1.w"], p["time.fc1.b"])),
                                      p["time.fc2.w"], p["time.fc2.b"]));

    ad::Var h = tokens;
    for (int i = 0; i < cfg.n_blocks; ++i) {
        const ad::Var* motion =
            motion_levels ? &(*motion_levels)[static_cast<size_t>(i)] : nullptr;
        h = dit_block(p, cfg, i, h, text, t_vec, motion);
    }
    auto out_tokens = ad::linear(h, p["head.w"], p["head.b"]);
    return ad::unpatchify_op(out_tokens, cfg.patch_size, hh, ww, kLatentChannels);
}

Tensor denoise(const Tensor& z_t, int64_t t, const std::vector<int64_t>& text_ids,
               const MotionPatches* motion, const ParamMap& params, const BackboneConfig& cfg) {
    ParamMap local = params;
    ParamBind p(local, {});
    auto text = text_embed_g(p, cfg, text_ids);
    if (!motion) return denoise_g(p, cfg, z_t, t, text, nullptr)->val;
    std::vector<ad::Var> levels;
    levels.reserve(motion->levels.size());
    for (const auto& lv : motion->levels) levels.push_back(ad::constant(lv));
    return denoise_g(p, cfg, z_t, t, text, &levels)->val;
}

void save_backbone_checkpoint(const std::string& path, const ParamMap& params,
                              const BackboneConfig& cfg, const nlohmann::json& extra_meta) {
    Archive a;
    a.meta["kind"] = "backbone";
    a.meta["format_version"] = 1;
    a.meta["config"] = {{"d", cfg.d},
                        {"heads", cfg.heads},
                        {"n_blocks", cfg.n_blocks},
                        {"patch_size", cfg.patch_size},
                        {"d_prime", cfg.d_prime},
                        {"vocab_size", cfg.vocab_size},
                        {"t_max", cfg.t_max},
                        {"use_positional", cfg.use_positional},
                        {"fuser_kind", to_string(cfg.fuser_kind)},
                        {"placement", to_string(cfg.placement)}};
    if (!extra_meta.is_null()) a.meta["state"] = extra_meta;
    for (const auto& [name, t] : params) a.put_f64(name, t);
    a.save(path);
}

ParamMap load_backbone_checkpoint(const std::string& path, BackboneConfig* cfg_out,
                                  nlohmann::json* meta_out) {
    Archive a = Archive::load(path);
    if (!a.meta.contains("kind") || a.meta["kind"] != "backbone")
        throw io_error("'" + path + "' is not a backbone checkpoint");
    if (cfg_out) {
        const auto& c = a.meta["config"];
        cfg_out->d = c.value("d", cfg_out->d);
        cfg_out->heads = c.value("heads", cfg_out->heads);
        cfg_out->n_blocks = c.value("n_blocks", cfg_out->n_blocks);
        cfg_out->patch_size = c.value("patch_size", cfg_out->patch_size);
        cfg_out->d_prime = c.value("d_prime", cfg_out->d_prime);
        cfg_out->vocab_size = c.value("vocab_size", cfg_out->vocab_size);
        cfg_out->t_max = c.value("t_max", cfg_out->t_max);
        cfg_out->use_positional = c.value("use_positional", cfg_out->use_positional);
        cfg_out->fuser_kind =
            fuser_kind_from_string(c.value("fuser_kind", to_string(cfg_out->fuser_kind)));
        cfg_out->placement =
            fuser_placement_from_string(c.value("placement", to_string(cfg_out->placement)));
    }
    if (meta_out) *meta_out = a.meta.contains("state") ? a.meta["state"] : nlohmann::json();
    ParamMap p;
    for (const auto& [name, e] : a.tensors) p[name] = e.as_tensor();
    return p;
}

}  // namespace trajvid
