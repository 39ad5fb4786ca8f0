#include "trajvid/fuser.hpp"

#include "trajvid/attention.hpp"
#include "trajvid/errors.hpp"

namespace trajvid {

FuserKind fuser_kind_from_string(const std::string& s) {
    if (s == "extra_channel") return FuserKind::extra_channel;
    if (s == "adaptive_norm") return FuserKind::adaptive_norm;
    if (s == "cross_attention") return FuserKind::cross_attention;
    throw validation_error("unknown fuser kind '" + s +
                           "' (expected extra_channel, adaptive_norm, or cross_attention)");
}

std::string to_string(FuserKind k) {
    switch (k) {
        case FuserKind::extra_channel: return "extra_channel";
        case FuserKind::adaptive_norm: return "adaptive_norm";
        case FuserKind::cross_attention: return "cross_attention";
    }
    return "?";
}

FuserPlacement fuser_placement_from_string(const std::string& s) {
    if (s == "temporal") return FuserPlacement::temporal;
    if (s == "spatial") return FuserPlacement::spatial;
    if (s == "both") return FuserPlacement::both;
    throw validation_error("unknown fuser placement '" + s +
                           "' (expected temporal, spatial, or both)");
}

std::string to_string(FuserPlacement p) {
    switch (p) {
        case FuserPlacement::temporal: return "temporal";
        case FuserPlacement::spatial: return "spatial";
        case FuserPlacement::both: return "both";
    }
    return "?";
}

void fuser_init(ParamMap& params, const std::string& prefix, FuserKind kind, int64_t d,
                int64_t d_prime, int64_t heads, uint64_t seed) {
    Rng rng(Rng::derive(seed, Rng::hash_str(prefix)));
    switch (kind) {
        case FuserKind::extra_channel:
            params[prefix + ".fc1.w"] = orthogonal(d, d + d_prime, rng);
            params[prefix + ".fc1.b"] = Tensor::zeros({d});
            params[prefix + ".fc2.w"] = Tensor::zeros({d, d});
            params[prefix + ".fc2.b"] = Tensor::zeros({d});
            break;
        case FuserKind::adaptive_norm:
            // both pointwise projections start at zero so gamma = beta = 0
            params[prefix + ".gamma.w"] = Tensor::zeros({d, d_prime});
            params[prefix + ".gamma.b"] = Tensor::zeros({d});
            params[prefix + ".beta.w"] = Tensor::zeros({d, d_prime});
            params[prefix + ".beta.b"] = Tensor::zeros({d});
            break;
        case FuserKind::cross_attention:
            if (d % heads != 0)
                throw validation_error("fuser head count must divide hidden width");
            attention_init(params, prefix + ".attn", d, d, d_prime, seed, /*zero_out=*/true);
            break;
    }
}

ad::Var fuse(ParamBind& p, const std::string& prefix, FuserKind kind, const ad::Var& h,
             const ad::Var& f, int64_t heads) {
    if (h->val.ndim() != 3 || f->val.ndim() != 3)
        throw validation_error("fuse: h and f must be [slices, tokens, features]");
    if (h->val.shape[0] != f->val.shape[0] || h->val.shape[1] != f->val.shape[1])
        throw validation_error("fuse: h " + shape_str(h->val.shape) + " and f " +
                               shape_str(f->val.shape) + " must share slice/token dims");
    switch (kind) {
        case FuserKind::extra_channel: {
            auto cat = ad::concat_last(h, f);
            auto a1 = ad::linear(cat, p[prefix + ".fc1.w"], p[prefix + ".fc1.b"]);
            auto a2 = ad::linear(a1, p[prefix + ".fc2.w"], p[prefix + ".fc2.b"]);
            return ad::add(a2, h);
        }
        case FuserKind::adaptive_norm: {
            auto gamma = ad::linear(f, p[prefix + ".gamma.w"], p[prefix + ".gamma.b"]);
            auto beta = ad::linear(f, p[prefix + ".beta.w"], p[prefix + ".beta.b"]);
            return ad::add(ad::add(ad::mul(gamma, h), beta), h);
        }
        case FuserKind::cross_attention: {
            auto attn = mha(p, prefix + ".attn", h, f, heads);
            return ad::add(attn, h);
        }
    }
    throw validation_error("fuse: unreachable fuser kind");
}

Tensor fuse(ParamMap& params, const std::string& prefix, FuserKind kind, const Tensor& h,
            const Tensor& f, int64_t heads) {
    ParamBind p(params, {});
    return fuse(p, prefix, kind, ad::constant(h), ad::constant(f), heads)->val;
}

}  // namespace trajvid
