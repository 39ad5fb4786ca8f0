#include "trajvid/motion_vae.hpp"

#include <cmath>

#include "trajvid/archive.hpp"
#include "trajvid/errors.hpp"

namespace trajvid {

namespace {

struct ConvSpec {
    const char* name;
    int64_t cin, cout, kt, kh, kw;
    int st, sh, sw;
    bool act;
};

// encoder halves H,W three times and L twice; head emits mean||logvar
const ConvSpec kEncoder[] = {
    {"vae.e0", 3, 0, 1, 3, 3, 1, 2, 2, true},   // cout filled from config
    {"vae.e1", 0, 0, 1, 3, 3, 1, 2, 2, true},
    {"vae.e2", 0, 0, 3, 1, 1, 2, 1, 1, true},
    {"vae.e3", 0, 0, 1, 3, 3, 1, 2, 2, true},
    {"vae.e4", 0, 0, 3, 1, 1, 2, 1, 1, true},
    {"vae.e5", 0, 2 * kLatentChannels, 3, 3, 3, 1, 1, 1, false},
};

struct UpSpec {
    const char* name;
    int ft, fh, fw;  // nearest upsample factors before the conv
    int64_t cin, cout, kt, kh, kw;
    bool act;
};

const UpSpec kDecoder[] = {
    {"vae.d0", 1, 1, 1, kLatentChannels, 0, 3, 3, 3, true},
    {"vae.d1", 2, 1, 1, 0, 0, 3, 1, 1, true},
    {"vae.d2", 1, 2, 2, 0, 0, 1, 3, 3, true},
    {"vae.d3", 2, 1, 1, 0, 0, 3, 1, 1, true},
    {"vae.d4", 1, 2, 2, 0, 0, 1, 3, 3, true},
    {"vae.d5", 1, 2, 2, 0, 3, 1, 3, 3, false},  // sigmoid applied after
};

void fill_widths(std::vector<ConvSpec>& enc, std::vector<UpSpec>& dec, const VaeConfig& cfg) {
    enc.assign(std::begin(kEncoder), std::end(kEncoder));
    dec.assign(std::begin(kDecoder), std::end(kDecoder));
    enc[0].cout = cfg.c1;
    enc[1].cin = cfg.c1;
    for (size_t i = 1; i < enc.size(); ++i) {
        if (enc[i].cin == 0) enc[i].cin = cfg.c2;
        if (enc[i].cout == 0) enc[i].cout = cfg.c2;
    }
    dec[0].cout = cfg.c2;
    for (size_t i = 1; i < dec.size(); ++i) {
        if (dec[i].cin == 0) dec[i].cin = cfg.c2;
        if (dec[i].cout == 0) dec[i].cout = cfg.c2;
    }
    dec[4].cout = cfg.c1;
    dec[5].cin = cfg.c1;
}

Tensor conv_kernel(int64_t cout, int64_t kt, int64_t kh, int64_t kw, int64_t cin, Rng& rng) {
    Tensor flat = orthogonal(cout, kt * kh * kw * cin, rng);
    flat.shape = {cout, kt, kh, kw, cin};
    return flat;
}

double psnr_of_mse(double mse) {
    if (mse <= 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(1.0 / mse);
}

struct LossVars {
    ad::Var total, recon, kl;
};

LossVars vae_loss_graph(ParamBind& p, const Tensor& x, double kl_weight, Rng& rng) {
    auto dist = vae_encode_dist(p, ad::constant(x));
    auto mean = ad::slice_last(dist, 0, kLatentChannels);
    auto logvar = ad::slice_last(dist, kLatentChannels, 2 * kLatentChannels);
    Tensor eps = randn(mean->val.shape, rng);
    auto z = ad::add(mean, ad::mul(ad::exp_op(ad::scale(logvar, 0.5)), ad::constant(eps)));
    auto dec = vae_decode_g(p, z);
    auto diff = ad::sub(dec, ad::constant(x));
    auto recon = ad::mean_all(ad::mul(diff, diff));
    // 0.5 * mean(mu^2 + e^lv - 1 - lv), elementwise nonnegative
    auto kl_terms = ad::sub(ad::add_scalar(ad::add(ad::mul(mean, mean), ad::exp_op(logvar)), -1.0),
                            logvar);
    auto kl = ad::scale(ad::mean_all(kl_terms), 0.5);
    auto total = ad::add(recon, ad::scale(kl, kl_weight));
    return {total, recon, kl};
}

}  // namespace

void check_encoder_dims(const std::vector<int64_t>& shape) {
    if (shape.size() != 4)
        throw validation_error("encoder input must be [frames, height, width, 3], got " +
                               shape_str(shape));
    const int64_t L = shape[0], H = shape[1], W = shape[2], C = shape[3];
    if (C != 3) throw validation_error("channel axis must be 3, got " + std::to_string(C));
    if (L < 4 || L % kTemporalFactor != 0)
        throw validation_error("frame axis must be a positive multiple of " +
                               std::to_string(kTemporalFactor) + ", got " + std::to_string(L));
    if (H < kSpatialFactor || H % kSpatialFactor != 0)
        throw validation_error("height axis must be a positive multiple of " +
                               std::to_string(kSpatialFactor) + ", got " + std::to_string(H));
    if (W < kSpatialFactor || W % kSpatialFactor != 0)
        throw validation_error("width axis must be a positive multiple of " +
                               std::to_string(kSpatialFactor) + ", got " + std::to_string(W));
}

std::vector<int64_t> latent_shape_for(const std::vector<int64_t>& input_shape) {
    check_encoder_dims(input_shape);
    return {input_shape[0] / kTemporalFactor, input_shape[1] / kSpatialFactor,
            input_shape[2] / kSpatialFactor, kLatentChannels};
}

ParamMap vae_init(const VaeConfig& cfg, uint64_t seed) {
    std::vector<ConvSpec> enc;
    std::vector<UpSpec> dec;
    fill_widths(enc, dec, cfg);
    Rng rng(Rng::derive(seed, Rng::hash_str("vae_init")));
    ParamMap p;
    for (const auto& s : enc) {
        p[std::string(s.name) + ".w"] = conv_kernel(s.cout, s.kt, s.kh, s.kw, s.cin, rng);
        p[std::string(s.name) + ".b"] = Tensor::zeros({s.cout});
    }
    for (const auto& s : dec) {
        p[std::string(s.name) + ".w"] = conv_kernel(s.cout, s.kt, s.kh, s.kw, s.cin, rng);
        p[std::string(s.name) + ".b"] = Tensor::zeros({s.cout});
    }
    return p;
}

ad::Var vae_encode_dist(ParamBind& p, const ad::Var& x) {
    check_encoder_dims(x->val.shape);
    require_finite(x->val, "encoder input");
    ad::Var h = x;
    for (const auto& s : kEncoder) {
        h = ad::conv3d(h, p[std::string(s.name) + ".w"], p[std::string(s.name) + ".b"], s.st,
                       s.sh, s.sw);
        if (s.act) h = ad::silu(h);
    }
    return h;
}

ad::Var vae_decode_g(ParamBind& p, const ad::Var& z) {
    if (z->val.ndim() != 4 || z->val.shape[3] != kLatentChannels)
        throw validation_error("latent must be [l, h, w, " + std::to_string(kLatentChannels) +
                               "], got " + shape_str(z->val.shape));
    require_finite(z->val, "decoder input");
    ad::Var h = z;
    for (const auto& s : kDecoder) {
        if (s.ft > 1 || s.fh > 1 || s.fw > 1) h = ad::upsample_nearest(h, s.ft, s.fh, s.fw);
        h = ad::conv3d(h, p[std::string(s.name) + ".w"], p[std::string(s.name) + ".b"], 1, 1, 1);
        if (s.act) h = ad::silu(h);
    }
    return ad::sigmoid(h);  // output range [0,1] without a clamp kink
}

Tensor vae_encode(const Tensor& x, const ParamMap& params, bool sample, uint64_t seed) {
    ParamMap local = params;
    ParamBind p(local, {});
    auto dist = vae_encode_dist(p, ad::constant(x));
    const int64_t C = kLatentChannels;
    Tensor out(latent_shape_for(x.shape));
    const int64_t n = out.numel() / C;
    Rng rng(seed);
    for (int64_t i = 0; i < n; ++i)
        for (int64_t c = 0; c < C; ++c) {
            const double mean = dist->val.data[i * 2 * C + c];
            if (!sample) {
                out.data[i * C + c] = mean;
            } else {
                const double logvar = dist->val.data[i * 2 * C + C + c];
                out.data[i * C + c] = mean + std::exp(0.5 * logvar) * rng.normal();
            }
        }
    return out;
}

Tensor vae_decode(const Tensor& z, const ParamMap& params) {
    ParamMap local = params;
    ParamBind p(local, {});
    return vae_decode_g(p, ad::constant(z))->val;
}

VaeLossValue vae_loss(const Tensor& x, const ParamMap& params, double kl_weight, uint64_t seed) {
    ParamMap local = params;
    ParamBind p(local, {});
    Rng rng(seed);
    auto vars = vae_loss_graph(p, x, kl_weight, rng);
    return {vars.total->val.data[0], vars.recon->val.data[0], vars.kl->val.data[0]};
}

VaeTrainResult vae_train(const std::vector<Tensor>& corpus, const VaeTrainConfig& config,
                         const ParamMap* init) {
    if (corpus.empty()) throw validation_error("vae_train: empty corpus");
    if (config.max_frames < 4)
        throw validation_error("vae_train: max_frames must be at least 4");
    for (const auto& clip : corpus) check_encoder_dims(clip.shape);

    VaeTrainResult result;
    result.params = init ? *init : vae_init(VaeConfig{}, config.seed);
    Adam opt({config.learning_rate, 0.9, 0.999, 1e-8});
    Rng rng(Rng::derive(config.seed, Rng::hash_str("vae_train")));
    const int64_t bs = std::max<int64_t>(1, config.batch_size);

    for (int64_t step = 0; step < config.steps; ++step) {
        ParamMap grads;
        double loss_acc = 0.0;
        for (int64_t b = 0; b < bs; ++b) {
            const Tensor& clip = corpus[static_cast<size_t>(rng.randint(
                static_cast<int64_t>(corpus.size())))];
            const int64_t clip_frames = clip.shape[0];
            const int64_t max_mult = std::min(config.max_frames, clip_frames) / 4;
            const int64_t n = 4 * (1 + rng.randint(max_mult));
            const int64_t start = rng.randint(clip_frames - n + 1);
            Tensor window({n, clip.shape[1], clip.shape[2], clip.shape[3]});
            const int64_t stride = clip.numel() / clip_frames;
            std::copy(clip.data.begin() + start * stride,
                      clip.data.begin() + (start + n) * stride, window.data.begin());

            ParamBind bind(result.params);
            auto vars = vae_loss_graph(bind, window, config.kl_weight, rng);
            ad::backward(vars.total);
            loss_acc += vars.total->val.data[0];
            ParamMap g = bind.collect_grads();
            if (grads.empty()) {
                grads = std::move(g);
            } else {
                for (auto& [name, t] : grads) {
                    const Tensor& add = g.at(name);
                    for (size_t i = 0; i < t.data.size(); ++i) t.data[i] += add.data[i];
                }
            }
        }
        if (bs > 1)
            for (auto& [name, t] : grads)
                for (double& v : t.data) v /= static_cast<double>(bs);
        opt.step(result.params, grads);
        result.loss_history.push_back(loss_acc / static_cast<double>(bs));
        ++result.steps_run;

        if (config.eval_every > 0 && (step + 1) % config.eval_every == 0 &&
            config.target_psnr > 0.0) {
            double mse_sum = 0.0;
            int64_t count = 0;
            for (const auto& clip : corpus) {
                Tensor rec = vae_decode(vae_encode(clip, result.params), result.params);
                for (size_t i = 0; i < clip.data.size(); ++i) {
                    const double d = rec.data[i] - clip.data[i];
                    mse_sum += d * d;
                }
                count += clip.numel();
            }
            if (psnr_of_mse(mse_sum / static_cast<double>(count)) > config.target_psnr) break;
        }
    }
    return result;
}

void save_vae_checkpoint(const std::string& path, const ParamMap& params, const VaeConfig& cfg,
                         const std::string& training_config_json) {
    Archive a;
    a.meta["kind"] = "vae";
    a.meta["format_version"] = 1;
    a.meta["latent_channels"] = kLatentChannels;
    a.meta["spatial_factor"] = kSpatialFactor;
    a.meta["temporal_factor"] = kTemporalFactor;
    a.meta["config"] = {{"c1", cfg.c1}, {"c2", cfg.c2}, {"kl_weight", cfg.kl_weight}};
    if (!training_config_json.empty()) {
        auto parsed = nlohmann::json::parse(training_config_json, nullptr, false);
        a.meta["training_config"] =
            parsed.is_discarded() ? nlohmann::json(training_config_json) : parsed;
    }
    for (const auto& [name, t] : params) a.put_f64(name, t);
    a.save(path);
}

ParamMap load_vae_checkpoint(const std::string& path, VaeConfig* cfg_out) {
    Archive a = Archive::load(path);
    if (!a.meta.contains("kind") || a.meta["kind"] != "vae")
        throw io_error("'" + path + "' is not a vae checkpoint");
    if (cfg_out && a.meta.contains("config")) {
        cfg_out->c1 = a.meta["config"].value("c1", cfg_out->c1);
        cfg_out->c2 = a.meta["config"].value("c2", cfg_out->c2);
        cfg_out->kl_weight = a.meta["config"].value("kl_weight", cfg_out->kl_weight);
    }
    ParamMap p;
    for (const auto& [name, e] : a.tensors) p[name] = e.as_tensor();
    return p;
}

}  // namespace trajvid
