#include "trajvid/graph.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace trajvid::ad {

namespace {

Var make(Tensor val, std::vector<Var> parents, std::function<void(Node&)> fn) {
    auto n = std::make_shared<Node>(std::move(val));
    n->parents = std::move(parents);
    for (const auto& p : n->parents)
        if (p->requires_grad) n->requires_grad = true;
    if (n->requires_grad) n->backfn = std::move(fn);
    return n;
}

Tensor& grad_of(Node& n) {
    if (n.grad.data.empty()) n.grad = Tensor::zeros(n.val.shape);
    return n.grad;
}

int64_t last_dim(const Tensor& t) {
    if (t.shape.empty()) throw validation_error("rank-0 tensor has no last axis");
    return t.shape.back();
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape != b.shape)
        throw validation_error(std::string(op) + ": shape mismatch " + shape_str(a.shape) +
                               " vs " + shape_str(b.shape));
}

// out[i] = in[idx[i]]; backward scatter-adds through the same map.
Var gather(const Var& a, std::vector<int64_t> out_shape, std::vector<int64_t> idx) {
    Tensor out(std::move(out_shape));
    for (size_t i = 0; i < idx.size(); ++i) out.data[i] = a->val.data[static_cast<size_t>(idx[i])];
    auto map = std::make_shared<std::vector<int64_t>>(std::move(idx));
    return make(std::move(out), {a}, [map](Node& n) {
        Node& p = *n.parents[0];
        if (!p.requires_grad) return;
        Tensor& g = grad_of(p);
        for (size_t i = 0; i < map->size(); ++i)
            g.data[static_cast<size_t>((*map)[i])] += n.grad.data[i];
    });
}

std::vector<int64_t> strides_of(const std::vector<int64_t>& shape) {
    std::vector<int64_t> st(shape.size(), 1);
    for (int i = static_cast<int>(shape.size()) - 2; i >= 0; --i) st[i] = st[i + 1] * shape[i + 1];
    return st;
}

}  // namespace

Var constant(Tensor v) { return std::make_shared<Node>(std::move(v)); }

Var leaf(Tensor v) {
    auto n = std::make_shared<Node>(std::move(v));
    n->requires_grad = true;
    return n;
}

void backward(const Var& root, const Tensor& seed) {
    require_same_shape(root->val, seed, "backward seed");
    // post-order DFS over parents; reversed list runs each node before its parents
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, size_t>> stack{{root.get(), 0}};
    seen.insert(root.get());
    while (!stack.empty()) {
        auto& [n, i] = stack.back();
        if (i < n->parents.size()) {
            Node* p = n->parents[i++].get();
            if (p->requires_grad && seen.insert(p).second) stack.push_back({p, 0});
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }
    Tensor& g = grad_of(*root);
    for (size_t i = 0; i < g.data.size(); ++i) g.data[i] += seed.data[i];
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backfn && !n->grad.data.empty()) n->backfn(*n);
    }
}

void backward(const Var& root) { backward(root, Tensor::full(root->val.shape, 1.0)); }

Var add(const Var& a, const Var& b) {
    require_same_shape(a->val, b->val, "add");
    Tensor out = a->val;
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += b->val.data[i];
    return make(std::move(out), {a, b}, [](Node& n) {
        for (int k = 0; k < 2; ++k) {
            Node& p = *n.parents[k];
            if (!p.requires_grad) continue;
            Tensor& g = grad_of(p);
            for (size_t i = 0; i < g.data.size(); ++i) g.data[i] += n.grad.data[i];
        }
    });
}

Var sub(const Var& a, const Var& b) {
    require_same_shape(a->val, b->val, "sub");
    Tensor out = a->val;
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] -= b->val.data[i];
    return make(std::move(out), {a, b}, [](Node& n) {
        Node& pa = *n.parents[0];
        if (pa.requires_grad) {
            Tensor& g = grad_of(pa);
            for (size_t i = 0; i < g.data.size(); ++i) g.data[i] += n.grad.data[i];
        }
        Node& pb = *n.parents[1];
        if (pb.requires_grad) {
            Tensor& g = grad_of(pb);
            for (size_t i = 0; i < g.data.size(); ++i) g.data[i] -= n.grad.data[i];
        }
    });
}

Var mul(const Var& a, const Var& b) {
    require_same_shape(a->val, b->val, "mul");
    Tensor out = a->val;
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] *= b->val.data[i];
    return make(std::move(out), {a, b}, [](Node& n) {
        Node& pa = *n.parents[0];
        Node& pb = *n.parents[1];
        if (pa.requires_grad) {
            Tensor& g = grad_of(pa);
            for (size_t i = 0; i < g.data.size(); ++i) g.data[i] += n.grad.data[i] * pb.val.data[i];
        }
        if (pb.requires_grad) {
            Tensor& g = grad_of(pb);
            for (size_t i = 0; i < g.data.size(); ++i) g.data[i] += n.grad.data[i] * pa.val.data[i];
        }
    });
}

Var scale(const Var& a, double s) {
    Tensor out = a->val;
    for (double& v : out.data) v *= s;
    return make(std::move(out), {a}, [s](Node& n) {
        Node& p = *n.parents[0];
        if (!p.requires_grad) return;
        Tensor& g = grad_of(p);
        for (size_t i = 0; i < g.data.size(); ++i) g.data[i] += n.grad.data[i] * s;
    });
}

Var add_scalar(const Var& a, double s) {
    Tensor out = a->val;
    for (double& v : out.data) v += s;
    return make(std::move(out), {a}, [](Node& n) {
        Node& p = *n.parents[0];
        if (!p.requires_grad) return;
        Tensor& g = grad_of(p);
        for (size_t i = 0; i < g.data.size(); ++i) g.data[i] += n.grad.data[i];
    });
}

Var silu(const Var& a) {
    Tensor out = a->val;
    for (double& v : out.data) v = v / (1.0 + std::exp(-v));
    return make(std::move(out), {a}, [](Node& n) {
        Node& p = *n.parents[0];
        if (!p.requires_grad) return;
        Tensor& g = grad_of(p);
        for (size_t i = 0; i < g.data.size(); ++i) {
            double x = p.val.data[i];
            double s = 1.0 / (1.0 + std::exp(-x));
            g.data[i] += n.grad.data[i] * s * (1.0 + x * (1.0 - s));
        }
    });
}

Var sigmoid(const Var& a) {
    Tensor out = a->val;
    for (double& v : out.data) v = 1.0 / (1.0 + std::exp(-v));
    return make(std::move(out), {a}, [](Node& n) {
        Node& p = *n.parents[0];
        if (!p.requires_grad) return;
        Tensor& g = grad_of(p);
        for (size_t i = 0; i < g.data.size(); ++i) {
            double y = n.val.data[i];
            g.data[i] += n.grad.data[i] * y * (1.0 - y);
        }
    });
}

Var exp_op(const Var& a) {
    Tensor out = a->val;
    for (double& v : out.data) v = std::exp(v);
    return make(std::move(out), {a}, [](Node& n) {
        Node& p = *n.parents[0];
        if (!p.requires_grad) return;
        Tensor& g = grad_of(p);
        for (size_t i = 0; i < g.data.size(); ++i) g.data[i] += n.grad.data[i] * n.val.data[i];
    });
}

Var sum_all(const Var& a) {
    double s = 0.0;
    for (double v : a->val.data) s += v;
    return make(Tensor::scalar(s), {a}, [](Node& n) {
        Node& p = *n.parents[0];
        if (!p.requires_grad) return;
        Tensor& g = grad_of(p);
        for (double& v : g.data) v += n.grad.data[0];
    });
}

Var mean_all(const Var& a) {
    if (a->val.data.empty()) throw validation_error("mean of empty tensor");
    return scale(sum_all(a), 1.0 / static_cast<double>(a->val.data.size()));
}

Var linear(const Var& x, const Var& w, const Var& b) {
    if (w->val.ndim() != 2 || b->val.ndim() != 1)
        throw validation_error("linear: weight must be [out, in], bias [out]");
    const int64_t K = last_dim(x->val);
    const int64_t M = w->val.shape[0];
    if (w->val.shape[1] != K)
        throw validation_error("linear: input features " + std::to_string(K) +
                               " vs weight columns " + std::to_string(w->val.shape[1]));
    if (b->val.shape[0] != M) throw validation_error("linear: bias length mismatch");
    const int64_t R = x->val.numel() / K;
    std::vector<int64_t> out_shape = x->val.shape;
    out_shape.back() = M;
    Tensor out(out_shape);
    const double* xp = x->val.data.data();
    const double* wp = w->val.data.data();
    const double* bp = b->val.data.data();
    for (int64_t r = 0; r < R; ++r) {
        const double* xr = xp + r * K;
        double* yr = out.data.data() + r * M;
        for (int64_t m = 0; m < M; ++m) {
            const double* wm = wp + m * K;
            double acc = bp[m];
            for (int64_t k = 0; k < K; ++k) acc += xr[k] * wm[k];
            yr[m] = acc;
        }
    }
    return make(std::move(out), {x, w, b}, [R, K, M](Node& n) {
        Node& px = *n.parents[0];
        Node& pw = *n.parents[1];
        Node& pb = *n.parents[2];
        const double* gy = n.grad.data.data();
        if (px.requires_grad) {
            Tensor& gx = grad_of(px);
            const double* wp = pw.val.data.data();
            for (int64_t r = 0; r < R; ++r) {
                double* gxr = gx.data.data() + r * K;
                const double* gyr = gy + r * M;
                for (int64_t m = 0; m < M; ++m) {
                    const double g = gyr[m];
                    if (g == 0.0) continue;
                    const double* wm = wp + m * K;
                    for (int64_t k = 0; k < K; ++k) gxr[k] += g * wm[k];
                }
            }
        }
        if (pw.requires_grad) {
            Tensor& gw = grad_of(pw);
            const double* xp = px.val.data.data();
            for (int64_t r = 0; r < R; ++r) {
                const double* xr = xp + r * K;
                const double* gyr = gy + r * M;
                for (int64_t m = 0; m < M; ++m) {
                    const double g = gyr[m];
                    if (g == 0.0) continue;
                    double* gwm = gw.data.data() + m * K;
                    for (int64_t k = 0; k < K; ++k) gwm[k] += g * xr[k];
                }
            }
        }
        if (pb.requires_grad) {
            Tensor& gb = grad_of(pb);
            for (int64_t r = 0; r < R; ++r)
                for (int64_t m = 0; m < M; ++m) gb.data[m] += gy[r * M + m];
        }
    });
}

Var bmm(const Var& a, const Var& b, bool trans_b) {
    if (a->val.ndim() != 3 || b->val.ndim() != 3)
        throw validation_error("bmm: both operands must be rank 3");
    const int64_t B = a->val.shape[0], N = a->val.shape[1], K = a->val.shape[2];
    const int64_t Bb = b->val.shape[0];
    const int64_t M = trans_b ? b->val.shape[1] : b->val.shape[2];
    const int64_t Kb = trans_b ? b->val.shape[2] : b->val.shape[1];
    if (Kb != K) throw validation_error("bmm: inner dimensions disagree");
    if (Bb != B && Bb != 1) throw validation_error("bmm: batch mismatch");
    Tensor out({B, N, M});
    for (int64_t bb = 0; bb < B; ++bb) {
        const double* ab = a->val.data.data() + bb * N * K;
        const double* bbp = b->val.data.data() + (Bb == 1 ? 0 : bb) * K * M;
        double* ob = out.data.data() + bb * N * M;
        for (int64_t i = 0; i < N; ++i) {
            for (int64_t j = 0; j < M; ++j) {
                double acc = 0.0;
                if (trans_b) {
                    const double* brow = bbp + j * K;
                    for (int64_t k = 0; k < K; ++k) acc += ab[i * K + k] * brow[k];
                } else {
                    for (int64_t k = 0; k < K; ++k) acc += ab[i * K + k] * bbp[k * M + j];
                }
                ob[i * M + j] = acc;
            }
        }
    }
    return make(std::move(out), {a, b}, [B, N, K, M, Bb, trans_b](Node& n) {
        Node& pa = *n.parents[0];
        Node& pb = *n.parents[1];
        const double* gy = n.grad.data.data();
        if (pa.requires_grad) {
            Tensor& ga = grad_of(pa);
            for (int64_t bb = 0; bb < B; ++bb) {
                const double* bbp = pb.val.data.data() + (Bb == 1 ? 0 : bb) * K * M;
                double* gab = ga.data.data() + bb * N * K;
                const double* gyb = gy + bb * N * M;
                for (int64_t i = 0; i < N; ++i)
                    for (int64_t j = 0; j < M; ++j) {
                        const double g = gyb[i * M + j];
                        if (g == 0.0) continue;
                        if (trans_b)
                            for (int64_t k = 0; k < K; ++k) gab[i * K + k] += g * bbp[j * K + k];
                        else
                            for (int64_t k = 0; k < K; ++k) gab[i * K + k] += g * bbp[k * M + j];
                    }
            }
        }
        if (pb.requires_grad) {
            Tensor& gb = grad_of(pb);
            for (int64_t bb = 0; bb < B; ++bb) {
                const double* ab = pa.val.data.data() + bb * N * K;
                double* gbb = gb.data.data() + (Bb == 1 ? 0 : bb) * K * M;
                const double* gyb = gy + bb * N * M;
                for (int64_t i = 0; i < N; ++i)
                    for (int64_t j = 0; j < M; ++j) {
                        const double g = gyb[i * M + j];
                        if (g == 0.0) continue;
                        if (trans_b)
                            for (int64_t k = 0; k < K; ++k) gbb[j * K + k] += g * ab[i * K + k];
                        else
                            for (int64_t k = 0; k < K; ++k) gbb[k * M + j] += g * ab[i * K + k];
                    }
            }
        }
    });
}

Var softmax_last(const Var& a) {
    const int64_t D = last_dim(a->val);
    const int64_t R = a->val.numel() / D;
    Tensor out = a->val;
    for (int64_t r = 0; r < R; ++r) {
        double* row = out.data.data() + r * D;
        double mx = row[0];
        for (int64_t j = 1; j < D; ++j) mx = std::max(mx, row[j]);
        double s = 0.0;
        for (int64_t j = 0; j < D; ++j) {
            row[j] = std::exp(row[j] - mx);
            s += row[j];
        }
        for (int64_t j = 0; j < D; ++j) row[j] /= s;
    }
    return make(std::move(out), {a}, [R, D](Node& n) {
        Node& p = *n.parents[0];
        if (!p.requires_grad) return;
        Tensor& g = grad_of(p);
        for (int64_t r = 0; r < R; ++r) {
            const double* y = n.val.data.data() + r * D;
            const double* gy = n.grad.data.data() + r * D;
            double dot = 0.0;
            for (int64_t j = 0; j < D; ++j) dot += gy[j] * y[j];
            double* gx = g.data.data() + r * D;
            for (int64_t j = 0; j < D; ++j) gx[j] += y[j] * (gy[j] - dot);
        }
    });
}

Var layernorm_last(const Var& a, double eps) {
    const int64_t D = last_dim(a->val);
    const int64_t R = a->val.numel() / D;
    Tensor out(a->val.shape);
    std::vector<double> rstd(static_cast<size_t>(R));
    for (int64_t r = 0; r < R; ++r) {
        const double* x = a->val.data.data() + r * D;
        double mu = 0.0;
        for (int64_t j = 0; j < D; ++j) mu += x[j];
        mu /= static_cast<double>(D);
        double var = 0.0;
        for (int64_t j = 0; j < D; ++j) var += (x[j] - mu) * (x[j] - mu);
        var /= static_cast<double>(D);
        const double rs = 1.0 / std::sqrt(var + eps);
        rstd[static_cast<size_t>(r)] = rs;
        double* y = out.data.data() + r * D;
        for (int64_t j = 0; j < D; ++j) y[j] = (x[j] - mu) * rs;
    }
    auto rstdp = std::make_shared<std::vector<double>>(std::move(rstd));
    return make(std::move(out), {a}, [R, D, rstdp](Node& n) {
        Node& p = *n.parents[0];
        if (!p.requires_grad) return;
        Tensor& g = grad_of(p);
        for (int64_t r = 0; r < R; ++r) {
            const double* xhat = n.val.data.data() + r * D;
            const double* gy = n.grad.data.data() + r * D;
            double m1 = 0.0, m2 = 0.0;
            for (int64_t j = 0; j < D; ++j) {
                m1 += gy[j];
                m2 += gy[j] * xhat[j];
            }
            m1 /= static_cast<double>(D);
            m2 /= static_cast<double>(D);
            const double rs = (*rstdp)[static_cast<size_t>(r)];
            double* gx = g.data.data() + r * D;
            for (int64_t j = 0; j < D; ++j) gx[j] += rs * (gy[j] - m1 - xhat[j] * m2);
        }
    });
}

Var mul_rowvec(const Var& a, const Var& v) {
    const int64_t D = last_dim(a->val);
    if (v->val.ndim() != 1 || v->val.shape[0] != D)
        throw validation_error("mul_rowvec: vector length must match last axis");
    const int64_t R = a->val.numel() / D;
    Tensor out = a->val;
    for (int64_t r = 0; r < R; ++r)
        for (int64_t j = 0; j < D; ++j) out.data[r * D + j] *= v->val.data[j];
    return make(std::move(out), {a, v}, [R, D](Node& n) {
        Node& pa = *n.parents[0];
        Node& pv = *n.parents[1];
        if (pa.requires_grad) {
            Tensor& g = grad_of(pa);
            for (int64_t r = 0; r < R; ++r)
                for (int64_t j = 0; j < D; ++j)
                    g.data[r * D + j] += n.grad.data[r * D + j] * pv.val.data[j];
        }
        if (pv.requires_grad) {
            Tensor& g = grad_of(pv);
            for (int64_t r = 0; r < R; ++r)
                for (int64_t j = 0; j < D; ++j)
                    g.data[j] += n.grad.data[r * D + j] * pa.val.data[r * D + j];
        }
    });
}

Var add_rowvec(const Var& a, const Var& v) {
    const int64_t D = last_dim(a->val);
    if (v->val.ndim() != 1 || v->val.shape[0] != D)
        throw validation_error("add_rowvec: vector length must match last axis");
    const int64_t R = a->val.numel() / D;
    Tensor out = a->val;
    for (int64_t r = 0; r < R; ++r)
        for (int64_t j = 0; j < D; ++j) out.data[r * D + j] += v->val.data[j];
    return make(std::move(out), {a, v}, [R, D](Node& n) {
        Node& pa = *n.parents[0];
        Node& pv = *n.parents[1];
        if (pa.requires_grad) {
            Tensor& g = grad_of(pa);
            for (size_t i = 0; i < g.data.size(); ++i) g.data[i] += n.grad.data[i];
        }
        if (pv.requires_grad) {
            Tensor& g = grad_of(pv);
            for (int64_t r = 0; r < R; ++r)
                for (int64_t j = 0; j < D; ++j) g.data[j] += n.grad.data[r * D + j];
        }
    });
}

Var conv3d(const Var& x, const Var& w, const Var& b, int st, int sh, int sw) {
    if (x->val.ndim() != 4) throw validation_error("conv3d: input must be [frames, h, w, ch]");
    if (w->val.ndim() != 5) throw validation_error("conv3d: kernel must be [out, kt, kh, kw, in]");
    const int64_t L = x->val.shape[0], H = x->val.shape[1], W = x->val.shape[2],
                  Ci = x->val.shape[3];
    const int64_t Co = w->val.shape[0], kt = w->val.shape[1], kh = w->val.shape[2],
                  kw = w->val.shape[3];
    if (w->val.shape[4] != Ci)
        throw validation_error("conv3d: kernel input channels " + std::to_string(w->val.shape[4]) +
                               " vs input channels " + std::to_string(Ci));
    if (b->val.ndim() != 1 || b->val.shape[0] != Co)
        throw validation_error("conv3d: bias length mismatch");
    const int64_t pt = kt / 2, ph = kh / 2, pw = kw / 2;
    const int64_t Lo = (L + 2 * pt - kt) / st + 1;
    const int64_t Ho = (H + 2 * ph - kh) / sh + 1;
    const int64_t Wo = (W + 2 * pw - kw) / sw + 1;
    if (Lo <= 0 || Ho <= 0 || Wo <= 0)
        throw validation_error("conv3d: input " + shape_str(x->val.shape) +
                               " too small for kernel");
    Tensor out({Lo, Ho, Wo, Co});
    const double* xp = x->val.data.data();
    const double* wp = w->val.data.data();
    for (int64_t lo = 0; lo < Lo; ++lo)
        for (int64_t ho = 0; ho < Ho; ++ho)
            for (int64_t wo = 0; wo < Wo; ++wo) {
                double* orow = out.data.data() + ((lo * Ho + ho) * Wo + wo) * Co;
                for (int64_t co = 0; co < Co; ++co) orow[co] = b->val.data[co];
                for (int64_t dt = 0; dt < kt; ++dt) {
                    const int64_t li = lo * st + dt - pt;
                    if (li < 0 || li >= L) continue;
                    for (int64_t dh = 0; dh < kh; ++dh) {
                        const int64_t hi = ho * sh + dh - ph;
                        if (hi < 0 || hi >= H) continue;
                        for (int64_t dw = 0; dw < kw; ++dw) {
                            const int64_t wi = wo * sw + dw - pw;
                            if (wi < 0 || wi >= W) continue;
                            const double* xrow = xp + ((li * H + hi) * W + wi) * Ci;
                            for (int64_t co = 0; co < Co; ++co) {
                                const double* wk =
                                    wp + (((co * kt + dt) * kh + dh) * kw + dw) * Ci;
                                double acc = 0.0;
                                for (int64_t ci = 0; ci < Ci; ++ci) acc += xrow[ci] * wk[ci];
                                orow[co] += acc;
                            }
                        }
                    }
                }
            }
    return make(std::move(out), {x, w, b},
                [L, H, W, Ci, Co, kt, kh, kw, pt, ph, pw, st, sh, sw, Lo, Ho, Wo](Node& n) {
                    Node& px = *n.parents[0];
                    Node& pw_ = *n.parents[1];
                    Node& pb = *n.parents[2];
                    const double* gy = n.grad.data.data();
                    const bool need_x = px.requires_grad, need_w = pw_.requires_grad;
                    double* gx = need_x ? grad_of(px).data.data() : nullptr;
                    double* gw = need_w ? grad_of(pw_).data.data() : nullptr;
                    const double* xp = px.val.data.data();
                    const double* wp = pw_.val.data.data();
                    if (pb.requires_grad) {
                        Tensor& gb = grad_of(pb);
                        for (int64_t i = 0; i < Lo * Ho * Wo; ++i)
                            for (int64_t co = 0; co < Co; ++co) gb.data[co] += gy[i * Co + co];
                    }
                    if (!need_x && !need_w) return;
                    for (int64_t lo = 0; lo < Lo; ++lo)
                        for (int64_t ho = 0; ho < Ho; ++ho)
                            for (int64_t wo = 0; wo < Wo; ++wo) {
                                const double* grow = gy + ((lo * Ho + ho) * Wo + wo) * Co;
                                for (int64_t dt = 0; dt < kt; ++dt) {
                                    const int64_t li = lo * st + dt - pt;
                                    if (li < 0 || li >= L) continue;
                                    for (int64_t dh = 0; dh < kh; ++dh) {
                                        const int64_t hi = ho * sh + dh - ph;
                                        if (hi < 0 || hi >= H) continue;
                                        for (int64_t dw = 0; dw < kw; ++dw) {
                                            const int64_t wi = wo * sw + dw - pw;
                                            if (wi < 0 || wi >= W) continue;
                                            const int64_t xoff = ((li * H + hi) * W + wi) * Ci;
                                            for (int64_t co = 0; co < Co; ++co) {
                                                const double g = grow[co];
                                                if (g == 0.0) continue;
                                                const int64_t woff =
                                                    (((co * kt + dt) * kh + dh) * kw + dw) * Ci;
                                                if (need_x)
                                                    for (int64_t ci = 0; ci < Ci; ++ci)
                                                        gx[xoff + ci] += g * wp[woff + ci];
                                                if (need_w)
                                                    for (int64_t ci = 0; ci < Ci; ++ci)
                                                        gw[woff + ci] += g * xp[xoff + ci];
                                            }
                                        }
                                    }
                                }
                            }
                });
}

Var upsample_nearest(const Var& x, int ft, int fh, int fw) {
    if (x->val.ndim() != 4) throw validation_error("upsample_nearest: input must be rank 4");
    if (ft < 1 || fh < 1 || fw < 1) throw validation_error("upsample factors must be >= 1");
    const int64_t L = x->val.shape[0], H = x->val.shape[1], W = x->val.shape[2],
                  C = x->val.shape[3];
    std::vector<int64_t> idx;
    idx.reserve(static_cast<size_t>(L * ft * H * fh * W * fw * C));
    for (int64_t l = 0; l < L * ft; ++l)
        for (int64_t h = 0; h < H * fh; ++h)
            for (int64_t w = 0; w < W * fw; ++w) {
                const int64_t base = (((l / ft) * H + h / fh) * W + w / fw) * C;
                for (int64_t c = 0; c < C; ++c) idx.push_back(base + c);
            }
    return gather(x, {L * ft, H * fh, W * fw, C}, std::move(idx));
}

Var conv1d_rows(const Var& x, const Var& w, const Var& b) {
    if (x->val.ndim() != 3) throw validation_error("conv1d_rows: input must be [batch, n, ch]");
    if (w->val.ndim() != 3 || w->val.shape[1] != 3)
        throw validation_error("conv1d_rows: kernel must be [out, 3, in]");
    const int64_t B = x->val.shape[0], N = x->val.shape[1], Ci = x->val.shape[2];
    const int64_t Co = w->val.shape[0];
    if (w->val.shape[2] != Ci) throw validation_error("conv1d_rows: channel mismatch");
    if (b->val.ndim() != 1 || b->val.shape[0] != Co)
        throw validation_error("conv1d_rows: bias length mismatch");
    Tensor out({B, N, Co});
    for (int64_t bb = 0; bb < B; ++bb)
        for (int64_t i = 0; i < N; ++i) {
            double* yrow = out.data.data() + (bb * N + i) * Co;
            for (int64_t co = 0; co < Co; ++co) yrow[co] = b->val.data[co];
            for (int64_t t = 0; t < 3; ++t) {
                const int64_t j = i + t - 1;
                if (j < 0 || j >= N) continue;
                const double* xrow = x->val.data.data() + (bb * N + j) * Ci;
                for (int64_t co = 0; co < Co; ++co) {
                    const double* wk = w->val.data.data() + (co * 3 + t) * Ci;
                    double acc = 0.0;
                    for (int64_t ci = 0; ci < Ci; ++ci) acc += xrow[ci] * wk[ci];
                    yrow[co] += acc;
                }
            }
        }
    return make(std::move(out), {x, w, b}, [B, N, Ci, Co](Node& n) {
        Node& px = *n.parents[0];
        Node& pw = *n.parents[1];
        Node& pb = *n.parents[2];
        const double* gy = n.grad.data.data();
        const bool need_x = px.requires_grad, need_w = pw.requires_grad;
        double* gx = need_x ? grad_of(px).data.data() : nullptr;
        double* gw = need_w ? grad_of(pw).data.data() : nullptr;
        if (pb.requires_grad) {
            Tensor& gb = grad_of(pb);
            for (int64_t i = 0; i < B * N; ++i)
                for (int64_t co = 0; co < Co; ++co) gb.data[co] += gy[i * Co + co];
        }
        if (!need_x && !need_w) return;
        for (int64_t bb = 0; bb < B; ++bb)
            for (int64_t i = 0; i < N; ++i) {
                const double* grow = gy + (bb * N + i) * Co;
                for (int64_t t = 0; t < 3; ++t) {
                    const int64_t j = i + t - 1;
                    if (j < 0 || j >= N) continue;
                    const int64_t xoff = (bb * N + j) * Ci;
                    for (int64_t co = 0; co < Co; ++co) {
                        const double g = grow[co];
                        if (g == 0.0) continue;
                        const int64_t woff = (co * 3 + t) * Ci;
                        if (need_x)
                            for (int64_t ci = 0; ci < Ci; ++ci)
                                gx[xoff + ci] += g * pw.val.data[woff + ci];
                        if (need_w)
                            for (int64_t ci = 0; ci < Ci; ++ci)
                                gw[woff + ci] += g * px.val.data[xoff + ci];
                    }
                }
            }
    });
}

Var embed_rows(const Var& table, const std::vector<int64_t>& ids) {
    if (table->val.ndim() != 2) throw validation_error("embed_rows: table must be [vocab, dim]");
    const int64_t V = table->val.shape[0], D = table->val.shape[1];
    for (int64_t id : ids)
        if (id < 0 || id >= V)
            throw validation_error("embed_rows: index " + std::to_string(id) +
                                   " outside vocabulary of " + std::to_string(V));
    std::vector<int64_t> idx;
    idx.reserve(ids.size() * static_cast<size_t>(D));
    for (int64_t id : ids)
        for (int64_t j = 0; j < D; ++j) idx.push_back(id * D + j);
    return gather(table, {static_cast<int64_t>(ids.size()), D}, std::move(idx));
}

Var patchify_op(const Var& z, int p) {
    if (z->val.ndim() != 4) throw validation_error("patchify: input must be [frames, h, w, ch]");
    const int64_t L = z->val.shape[0], H = z->val.shape[1], W = z->val.shape[2],
                  C = z->val.shape[3];
    if (p <= 0 || H % p != 0 || W % p != 0)
        throw validation_error("patchify: spatial dims " + shape_str(z->val.shape) +
                               " not divisible by patch size " + std::to_string(p));
    const int64_t Gh = H / p, Gw = W / p;
    std::vector<int64_t> idx;
    idx.reserve(static_cast<size_t>(z->val.numel()));
    for (int64_t l = 0; l < L; ++l)
        for (int64_t gy = 0; gy < Gh; ++gy)
            for (int64_t gx = 0; gx < Gw; ++gx)
                for (int64_t dy = 0; dy < p; ++dy)
                    for (int64_t dx = 0; dx < p; ++dx) {
                        const int64_t base =
                            ((l * H + gy * p + dy) * W + gx * p + dx) * C;
                        for (int64_t c = 0; c < C; ++c) idx.push_back(base + c);
                    }
    return gather(z, {L, Gh * Gw, static_cast<int64_t>(p) * p * C}, std::move(idx));
}

Var unpatchify_op(const Var& tokens, int p, int64_t H, int64_t W, int64_t C) {
    if (tokens->val.ndim() != 3)
        throw validation_error("unpatchify: input must be [frames, tokens, features]");
    const int64_t L = tokens->val.shape[0], S = tokens->val.shape[1], F = tokens->val.shape[2];
    if (p <= 0 || H % p != 0 || W % p != 0)
        throw validation_error("unpatchify: target dims not divisible by patch size");
    const int64_t Gh = H / p, Gw = W / p;
    if (S != Gh * Gw || F != static_cast<int64_t>(p) * p * C)
        throw validation_error("unpatchify: token grid " + shape_str(tokens->val.shape) +
                               " does not match target " + std::to_string(H) + "x" +
                               std::to_string(W) + "x" + std::to_string(C));
    std::vector<int64_t> idx(static_cast<size_t>(L * H * W * C));
    for (int64_t l = 0; l < L; ++l)
        for (int64_t gy = 0; gy < Gh; ++gy)
            for (int64_t gx = 0; gx < Gw; ++gx)
                for (int64_t dy = 0; dy < p; ++dy)
                    for (int64_t dx = 0; dx < p; ++dx)
                        for (int64_t c = 0; c < C; ++c) {
                            const int64_t src =
                                ((l * S + gy * Gw + gx) * F + (dy * p + dx) * C + c);
                            const int64_t dst = ((l * H + gy * p + dy) * W + gx * p + dx) * C + c;
                            idx[static_cast<size_t>(dst)] = src;
                        }
    return gather(tokens, {L, H, W, C}, std::move(idx));
}

Var reshape(const Var& a, std::vector<int64_t> shape) {
    if (numel_of(shape) != a->val.numel())
        throw validation_error("reshape: element count changes from " +
                               shape_str(a->val.shape) + " to " + shape_str(shape));
    Tensor out;
    out.shape = std::move(shape);
    out.data = a->val.data;
    return make(std::move(out), {a}, [](Node& n) {
        Node& p = *n.parents[0];
        if (!p.requires_grad) return;
        Tensor& g = grad_of(p);
        for (size_t i = 0; i < g.data.size(); ++i) g.data[i] += n.grad.data[i];
    });
}

Var permute(const Var& a, const std::vector<int>& perm) {
    const size_t nd = a->val.shape.size();
    if (perm.size() != nd) throw validation_error("permute: axis list length mismatch");
    std::vector<bool> used(nd, false);
    for (int ax : perm) {
        if (ax < 0 || static_cast<size_t>(ax) >= nd || used[static_cast<size_t>(ax)])
            throw validation_error("permute: invalid axis list");
        used[static_cast<size_t>(ax)] = true;
    }
    std::vector<int64_t> out_shape(nd);
    for (size_t i = 0; i < nd; ++i) out_shape[i] = a->val.shape[static_cast<size_t>(perm[i])];
    const auto in_strides = strides_of(a->val.shape);
    std::vector<int64_t> idx(static_cast<size_t>(a->val.numel()));
    std::vector<int64_t> counter(nd, 0);
    for (size_t i = 0; i < idx.size(); ++i) {
        int64_t src = 0;
        for (size_t d = 0; d < nd; ++d)
            src += counter[d] * in_strides[static_cast<size_t>(perm[d])];
        idx[i] = src;
        for (size_t d = nd; d-- > 0;) {
            if (++counter[d] < out_shape[d]) break;
            counter[d] = 0;
        }
    }
    return gather(a, std::move(out_shape), std::move(idx));
}

Var slice_last(const Var& a, int64_t from, int64_t to) {
    const int64_t D = last_dim(a->val);
    if (from < 0 || to > D || from >= to)
        throw validation_error("slice_last: range [" + std::to_string(from) + ", " +
                               std::to_string(to) + ") invalid for axis of " + std::to_string(D));
    const int64_t R = a->val.numel() / D;
    std::vector<int64_t> out_shape = a->val.shape;
    out_shape.back() = to - from;
    std::vector<int64_t> idx;
    idx.reserve(static_cast<size_t>(R * (to - from)));
    for (int64_t r = 0; r < R; ++r)
        for (int64_t j = from; j < to; ++j) idx.push_back(r * D + j);
    return gather(a, std::move(out_shape), std::move(idx));
}

Var concat_last(const Var& a, const Var& b) {
    if (a->val.shape.size() != b->val.shape.size())
        throw validation_error("concat_last: rank mismatch");
    for (size_t i = 0; i + 1 < a->val.shape.size(); ++i)
        if (a->val.shape[i] != b->val.shape[i])
            throw validation_error("concat_last: leading shapes differ: " +
                                   shape_str(a->val.shape) + " vs " + shape_str(b->val.shape));
    const int64_t Da = last_dim(a->val), Db = last_dim(b->val);
    const int64_t R = a->val.numel() / Da;
    std::vector<int64_t> out_shape = a->val.shape;
    out_shape.back() = Da + Db;
    Tensor out(out_shape);
    for (int64_t r = 0; r < R; ++r) {
        for (int64_t j = 0; j < Da; ++j) out.data[r * (Da + Db) + j] = a->val.data[r * Da + j];
        for (int64_t j = 0; j < Db; ++j)
            out.data[r * (Da + Db) + Da + j] = b->val.data[r * Db + j];
    }
    return make(std::move(out), {a, b}, [R, Da, Db](Node& n) {
        Node& pa = *n.parents[0];
        Node& pb = *n.parents[1];
        if (pa.requires_grad) {
            Tensor& g = grad_of(pa);
            for (int64_t r = 0; r < R; ++r)
                for (int64_t j = 0; j < Da; ++j)
                    g.data[r * Da + j] += n.grad.data[r * (Da + Db) + j];
        }
        if (pb.requires_grad) {
            Tensor& g = grad_of(pb);
            for (int64_t r = 0; r < R; ++r)
                for (int64_t j = 0; j < Db; ++j)
                    g.data[r * Db + j] += n.grad.data[r * (Da + Db) + Da + j];
        }
    });
}

Var tile_first(const Var& a, int64_t times) {
    if (a->val.shape.empty() || a->val.shape[0] != 1)
        throw validation_error("tile_first: leading axis must be 1, got " +
                               shape_str(a->val.shape));
    if (times < 1) throw validation_error("tile_first: repeat count must be positive");
    const int64_t n = a->val.numel();
    std::vector<int64_t> out_shape = a->val.shape;
    out_shape[0] = times;
    std::vector<int64_t> idx;
    idx.reserve(static_cast<size_t>(n * times));
    for (int64_t t = 0; t < times; ++t)
        for (int64_t i = 0; i < n; ++i) idx.push_back(i);
    return gather(a, std::move(out_shape), std::move(idx));
}

}  // namespace trajvid::ad
