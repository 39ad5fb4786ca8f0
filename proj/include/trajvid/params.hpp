#ifndef __TRAJVID_PARAMS_HPP__
#define __TRAJVID_PARAMS_HPP__

// Named parameter store shared by the VAE, the backbone, and the trainer.
// ParamBind materializes autodiff leaves on demand so one forward pass sees
// a consistent graph; step() folds gradients back into the plain tensors.

#include <map>
#include <string>
#include <vector>

#include "trajvid/graph.hpp"
#include "trajvid/tensor.hpp"

namespace trajvid {

using ParamMap = std::map<std::string, Tensor>;

class ParamBind {
  public:
    // All parameters trainable.
    explicit ParamBind(ParamMap& params) : params_(params), all_trainable_(true) {}
    // Only names matching one of the prefixes become leaves; the rest are
    // bound as constants.  An empty prefix list freezes everything.
    ParamBind(ParamMap& params, std::vector<std::string> trainable_prefixes)
        : params_(params), all_trainable_(false), prefixes_(std::move(trainable_prefixes)) {}

    // Leaf (or frozen constant, per the prefix filter) for an existing parameter.
    ad::Var operator[](const std::string& name);

    // Constant view (no gradient) of an existing parameter.
    ad::Var frozen(const std::string& name);

    ParamMap& params() { return params_; }
    const std::map<std::string, ad::Var>& bound() const { return bound_; }

    // Gradients accumulated by backward(), keyed by parameter name.
    // Parameters whose leaves never received gradient get zeros.
    ParamMap collect_grads() const;

  private:
    ParamMap& params_;
    bool all_trainable_;
    std::vector<std::string> prefixes_;
    std::map<std::string, ad::Var> bound_;    // leaves only
    std::map<std::string, ad::Var> consts_;   // frozen views
};

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

class Adam {
  public:
    explicit Adam(AdamConfig cfg) : cfg_(cfg) {}

    // Applies one update to every entry of grads found in params.
    // `trainable` empty means all; otherwise a name passes if it starts
    // with any of the given prefixes.
    void step(ParamMap& params, const ParamMap& grads,
              const std::vector<std::string>& trainable = {});

    int64_t steps_taken() const { return t_; }
    AdamConfig& config() { return cfg_; }

    // moment access for checkpoint round-trips
    const std::map<std::string, Tensor>& moment_m() const { return m_; }
    const std::map<std::string, Tensor>& moment_v() const { return v_; }
    void restore(std::map<std::string, Tensor> m, std::map<std::string, Tensor> v, int64_t t) {
        m_ = std::move(m);
        v_ = std::move(v);
        t_ = t;
    }

  private:
    AdamConfig cfg_;
    int64_t t_ = 0;
    std::map<std::string, Tensor> m_, v_;
};

bool name_has_prefix(const std::string& name, const std::vector<std::string>& prefixes);

}  // namespace trajvid

#endif
