#ifndef __TRAJVID_ATTENTION_HPP__
#define __TRAJVID_ATTENTION_HPP__

// Multi-head attention with named projection weights:
//   prefix.wq [d, dq], prefix.wk [d, dk], prefix.wv [d, dv],
//   prefix.wo [d, d], prefix.bo [d]
// Query batch B attends within each batch row; key/value batch may be 1
// (broadcast across queries) or equal to B.

#include <string>

#include "trajvid/params.hpp"

namespace trajvid {

ad::Var attention(ParamBind& p, const std::string& prefix, const ad::Var& q_in,
                  const ad::Var& k_in, const ad::Var& v_in, int64_t heads);

// common case: keys and values from the same source
ad::Var mha(ParamBind& p, const std::string& prefix, const ad::Var& q_in, const ad::Var& kv_in,
            int64_t heads);

// zero_out zeroes the output projection so the residual branch starts silent
void attention_init(ParamMap& params, const std::string& prefix, int64_t d, int64_t dq,
                    int64_t dkv, uint64_t seed, bool zero_out = true);

}  // namespace trajvid

#endif
