#include "trajvid/attention.hpp"

#include <cmath>

#include "trajvid/errors.hpp"

namespace trajvid {

namespace {

// [B, n, d] -> [B*heads, n, d/heads]
ad::Var split_heads(const ad::Var& x, int64_t heads) {
    const int64_t B = x->val.shape[0], n = x->val.shape[1], d = x->val.shape[2];
    auto r = ad::reshape(x, {B, n, heads, d / heads});
    r = ad::permute(r, {0, 2, 1, 3});
    return ad::reshape(r, {B * heads, n, d / heads});
}

ad::Var merge_heads(const ad::Var& x, int64_t B, int64_t heads) {
    const int64_t n = x->val.shape[1], dh = x->val.shape[2];
    auto r = ad::reshape(x, {B, heads, n, dh});
    r = ad::permute(r, {0, 2, 1, 3});
    return ad::reshape(r, {B, n, heads * dh});
}

}  // namespace

ad::Var attention(ParamBind& p, const std::string& prefix, const ad::Var& q_in,
                  const ad::Var& k_in, const ad::Var& v_in, int64_t heads) {
    if (q_in->val.ndim() != 3 || k_in->val.ndim() != 3 || v_in->val.ndim() != 3)
        throw validation_error("attention: inputs must be rank 3 [batch, tokens, features]");
    const int64_t B = q_in->val.shape[0];
    const int64_t Bk = k_in->val.shape[0];
    if (v_in->val.shape[0] != Bk || v_in->val.shape[1] != k_in->val.shape[1])
        throw validation_error("attention: key/value token counts disagree");
    if (Bk != B && Bk != 1)
        throw validation_error("attention: key batch must be 1 or match query batch");

    auto q = ad::linear(q_in, p[prefix + ".wq"], p[prefix + ".bq"]);
    auto k = ad::linear(k_in, p[prefix + ".wk"], p[prefix + ".bk"]);
    auto v = ad::linear(v_in, p[prefix + ".wv"], p[prefix + ".bv"]);
    const int64_t d = q->val.shape[2];
    if (heads < 1 || d % heads != 0)
        throw validation_error("attention: head count " + std::to_string(heads) +
                               " must divide width " + std::to_string(d));
    if (Bk == 1 && B > 1) {
        k = ad::tile_first(k, B);
        v = ad::tile_first(v, B);
    }
    auto qh = split_heads(q, heads);
    auto kh = split_heads(k, heads);
    auto vh = split_heads(v, heads);
    const double scale = 1.0 / std::sqrt(static_cast<double>(d / heads));
    auto scores = ad::scale(ad::bmm(qh, kh, /*trans_b=*/true), scale);
    auto probs = ad::softmax_last(scores);
    auto ctx = merge_heads(ad::bmm(probs, vh), B, heads);
    return ad::linear(ctx, p[prefix + ".wo"], p[prefix + ".bo"]);
}

ad::Var mha(ParamBind& p, const std::string& prefix, const ad::Var& q_in, const ad::Var& kv_in,
            int64_t heads) {
    return attention(p, prefix, q_in, kv_in, kv_in, heads);
}

void attention_init(ParamMap& params, const std::string& prefix, int64_t d, int64_t dq,
                    int64_t dkv, uint64_t seed, bool zero_out) {
    Rng rng(Rng::derive(seed, Rng::hash_str(prefix)));
    params[prefix + ".wq"] = orthogonal(d, dq, rng);
    params[prefix + ".bq"] = Tensor::zeros({d});
    params[prefix + ".wk"] = orthogonal(d, dkv, rng);
    params[prefix + ".bk"] = Tensor::zeros({d});
    params[prefix + ".wv"] = orthogonal(d, dkv, rng);
    params[prefix + ".bv"] = Tensor::zeros({d});
    params[prefix + ".wo"] = zero_out ? Tensor::zeros({d, d}) : orthogonal(d, d, rng);
    params[prefix + ".bo"] = Tensor::zeros({d});
}

}  // namespace trajvid
