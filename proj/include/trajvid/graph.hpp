#ifndef __TRAJVID_GRAPH_HPP__
#define __TRAJVID_GRAPH_HPP__

// Reverse-mode autodiff over dense double tensors.  Every op builds a node
// holding its value and a closure that scatters gradients to its parents.

#include <functional>
#include <memory>
#include <vector>

#include "trajvid/tensor.hpp"

namespace trajvid::ad {

struct Node;
using Var = std::shared_ptr<Node>;

struct Node {
    Tensor val;
    Tensor grad;
    bool requires_grad = false;
    std::vector<Var> parents;
    std::function<void(Node&)> backfn;  // reads this->grad, accumulates into parents

    explicit Node(Tensor v) : val(std::move(v)) {}
};

Var constant(Tensor v);
Var leaf(Tensor v);  // requires_grad = true

// Runs backward from `root` (seed gradient of ones unless provided).
void backward(const Var& root);
void backward(const Var& root, const Tensor& seed);

// elementwise
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var silu(const Var& a);
Var sigmoid(const Var& a);
Var exp_op(const Var& a);

// reductions
Var sum_all(const Var& a);   // -> [1]
Var mean_all(const Var& a);  // -> [1]

// x: [..., K], w: [M, K], b: [M] -> [..., M]   (y = x w^T + b)
Var linear(const Var& x, const Var& w, const Var& b);

// a: [B, n, k], b: [B, k, m] or [1, k, m] -> [B, n, m].
// trans_b treats b as [B, m, k] (or [1, m, k]) and multiplies by its transpose.
Var bmm(const Var& a, const Var& b, bool trans_b = false);

Var softmax_last(const Var& a);
Var layernorm_last(const Var& a, double eps = 1e-6);  // no affine

// v: [d] broadcast over the last axis of a: [..., d]
Var mul_rowvec(const Var& a, const Var& v);
Var add_rowvec(const Var& a, const Var& v);

// x: [L, H, W, Cin], w: [Cout, kt, kh, kw, Cin], b: [Cout] -> [L', H', W', Cout]
// Zero padding of floor(k/2) per axis; stride per axis.
Var conv3d(const Var& x, const Var& w, const Var& b, int st, int sh, int sw);

// x: [L, H, W, C] -> [L*ft, H*fh, W*fw, C]
Var upsample_nearest(const Var& x, int ft, int fh, int fw);

// x: [B, n, Cin], w: [Cout, 3, Cin], b: [Cout] -> [B, n, Cout]; zero pad 1 on token axis
Var conv1d_rows(const Var& x, const Var& w, const Var& b);

// table: [V, d], ids: row indices -> [n, d]; backward scatter-adds
Var embed_rows(const Var& table, const std::vector<int64_t>& ids);

// z: [L, H, W, C] -> [L, (H/p)*(W/p), p*p*C]; inverse restores the layout.
Var patchify_op(const Var& z, int p);
Var unpatchify_op(const Var& tokens, int p, int64_t H, int64_t W, int64_t C);

Var reshape(const Var& a, std::vector<int64_t> shape);
Var permute(const Var& a, const std::vector<int>& perm);

// keeps [from, to) of the last axis
Var slice_last(const Var& a, int64_t from, int64_t to);
Var concat_last(const Var& a, const Var& b);

// [1, ...] -> [times, ...] by repetition; backward sums over copies
Var tile_first(const Var& a, int64_t times);

}  // namespace trajvid::ad

#endif
