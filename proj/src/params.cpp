#include "trajvid/params.hpp"

#include <cmath>

#include "trajvid/errors.hpp"

namespace trajvid {

ad::Var ParamBind::operator[](const std::string& name) {
    const bool trainable =
        all_trainable_ || (!prefixes_.empty() && name_has_prefix(name, prefixes_));
    auto& cache = trainable ? bound_ : consts_;
    auto it = cache.find(name);
    if (it != cache.end()) return it->second;
    auto pit = params_.find(name);
    if (pit == params_.end()) throw validation_error("unknown parameter '" + name + "'");
    ad::Var v = trainable ? ad::leaf(pit->second) : ad::constant(pit->second);
    cache[name] = v;
    return v;
}

ad::Var ParamBind::frozen(const std::string& name) {
    auto it = consts_.find(name);
    if (it != consts_.end()) return it->second;
    auto pit = params_.find(name);
    if (pit == params_.end()) throw validation_error("unknown parameter '" + name + "'");
    ad::Var v = ad::constant(pit->second);
    consts_[name] = v;
    return v;
}

ParamMap ParamBind::collect_grads() const {
    ParamMap grads;
    for (const auto& [name, var] : bound_) {
        if (var->grad.data.empty())
            grads[name] = Tensor::zeros(var->val.shape);
        else
            grads[name] = var->grad;
    }
    return grads;
}

bool name_has_prefix(const std::string& name, const std::vector<std::string>& prefixes) {
    if (prefixes.empty()) return true;
    for (const auto& p : prefixes)
        if (name.rfind(p, 0) == 0) return true;
    return false;
}

void Adam::step(ParamMap& params, const ParamMap& grads,
                const std::vector<std::string>& trainable) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (const auto& [name, g] : grads) {
        if (!name_has_prefix(name, trainable)) continue;
        auto pit = params.find(name);
        if (pit == params.end()) throw validation_error("gradient for unknown parameter '" + name + "'");
        Tensor& p = pit->second;
        if (p.shape != g.shape)
            throw validation_error("gradient shape mismatch for '" + name + "'");
        Tensor& m = m_.try_emplace(name, Tensor::zeros(p.shape)).first->second;
        Tensor& v = v_.try_emplace(name, Tensor::zeros(p.shape)).first->second;
        for (size_t i = 0; i < p.data.size(); ++i) {
            m.data[i] = cfg_.beta1 * m.data[i] + (1.0 - cfg_.beta1) * g.data[i];
            v.data[i] = cfg_.beta2 * v.data[i] + (1.0 - cfg_.beta2) * g.data[i] * g.data[i];
            const double mhat = m.data[i] / bc1;
            const double vhat = v.data[i] / bc2;
            p.data[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        }
    }
}

}  // namespace trajvid
