#ifndef __TRAJVID_FUSER_HPP__
#define __TRAJVID_FUSER_HPP__

// Motion-guidance fusion: injects motion features f [l, s, d'] into hidden
// states h [l, s, d].  Every variant is exactly the identity on h at
// construction (final projection zeroed).

#include <string>

#include "trajvid/params.hpp"

namespace trajvid {

enum class FuserKind { extra_channel, adaptive_norm, cross_attention };
enum class FuserPlacement { temporal, spatial, both };

FuserKind fuser_kind_from_string(const std::string& s);
std::string to_string(FuserKind k);
FuserPlacement fuser_placement_from_string(const std::string& s);
std::string to_string(FuserPlacement p);

void fuser_init(ParamMap& params, const std::string& prefix, FuserKind kind, int64_t d,
                int64_t d_prime, int64_t heads, uint64_t seed);

ad::Var fuse(ParamBind& p, const std::string& prefix, FuserKind kind, const ad::Var& h,
             const ad::Var& f, int64_t heads);

// Tensor-level convenience for tests
Tensor fuse(ParamMap& params, const std::string& prefix, FuserKind kind, const Tensor& h,
            const Tensor& f, int64_t heads);

}  // namespace trajvid

#endif
