#include <doctest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "oracles.hpp"
#include "trajvid/graph.hpp"
#include "trajvid/tensor.hpp"

using namespace trajvid;
using ad::Var;

namespace {

using Builder = std::function<Var(const std::vector<Var>&)>;

// Checks d(build(inputs))/d(input slot) against a central finite difference
// for every slot of every input.  build must produce a scalar.
void check_gradients(std::vector<Tensor> inputs, const Builder& build, double h = 1e-5,
                     double rtol = 1e-4) {
    std::vector<Var> leaves;
    for (const Tensor& t : inputs) leaves.push_back(ad::leaf(t));
    Var loss = build(leaves);
    REQUIRE(loss->val.numel() == 1);
    ad::backward(loss);
    const auto eval = [&]() {
        std::vector<Var> frozen;
        for (const Tensor& t : inputs) frozen.push_back(ad::constant(t));
        return build(frozen)->val.data[0];
    };
    for (size_t li = 0; li < inputs.size(); ++li) {
        for (int64_t i = 0; i < inputs[li].numel(); ++i) {
            const double fd = oracles::fd_slot(eval, inputs[li].data[static_cast<size_t>(i)], h);
            const double an = leaves[li]->grad.data[static_cast<size_t>(i)];
            INFO("input ", li, " slot ", i, " analytic ", an, " fd ", fd);
            CHECK(oracles::grad_close(an, fd, rtol, 1e-7));
        }
    }
}

Tensor randn_t(std::vector<int64_t> shape, uint64_t seed) {
    Rng rng(seed);
    return randn(std::move(shape), rng);
}

}  // namespace

TEST_CASE("elementwise ops match finite differences") {
    Tensor a = randn_t({2, 3}, 11);
    Tensor b = randn_t({2, 3}, 12);
    check_gradients({a, b}, [](const std::vector<Var>& v) {
        Var x = ad::mul(ad::add(v[0], v[1]), ad::sub(v[0], ad::scale(v[1], 0.5)));
        return ad::mean_all(ad::add_scalar(x, 0.25));
    });
}

TEST_CASE("activation ops match finite differences and closed forms") {
    Tensor a = randn_t({3, 4}, 21);
    check_gradients({a}, [](const std::vector<Var>& v) {
        return ad::mean_all(ad::silu(ad::sigmoid(ad::exp_op(ad::scale(v[0], 0.3)))));
    });

    Var x = ad::constant(Tensor::from_vector({3}, {-1.0, 0.0, 2.0}));
    Var s = ad::sigmoid(x);
    for (int64_t i = 0; i < 3; ++i)
        CHECK(s->val.data[static_cast<size_t>(i)] ==
              doctest::Approx(1.0 / (1.0 + std::exp(-x->val.data[static_cast<size_t>(i)])))
                  .epsilon(1e-12));
    Var si = ad::silu(x);
    for (int64_t i = 0; i < 3; ++i)
        CHECK(si->val.data[static_cast<size_t>(i)] ==
              doctest::Approx(x->val.data[static_cast<size_t>(i)] *
                              s->val.data[static_cast<size_t>(i)])
                  .epsilon(1e-12));
}

TEST_CASE("sum_all and mean_all agree up to numel") {
    Tensor a = randn_t({2, 5}, 31);
    Var l = ad::constant(a);
    CHECK(ad::mean_all(l)->val.data[0] ==
          doctest::Approx(ad::sum_all(l)->val.data[0] / 10.0).epsilon(1e-12));
    check_gradients({a}, [](const std::vector<Var>& v) { return ad::sum_all(v[0]); });
}

TEST_CASE("linear computes x*w^T + b") {
    Tensor x = randn_t({4, 3}, 41);
    Tensor w = randn_t({2, 3}, 42);
    Tensor b = randn_t({2}, 43);
    Var y = ad::linear(ad::constant(x), ad::constant(w), ad::constant(b));
    REQUIRE(y->val.shape == std::vector<int64_t>{4, 2});
    for (int64_t i = 0; i < 4; ++i)
        for (int64_t m = 0; m < 2; ++m) {
            double want = b.data[static_cast<size_t>(m)];
            for (int64_t k = 0; k < 3; ++k) want += x.at2(i, k) * w.at2(m, k);
            CHECK(y->val.at2(i, m) == doctest::Approx(want).epsilon(1e-12));
        }
    check_gradients({x, w, b}, [](const std::vector<Var>& v) {
        return ad::mean_all(ad::linear(v[0], v[1], v[2]));
    });
}

TEST_CASE("bmm matches explicit loops, both orientations") {
    Tensor a = randn_t({2, 3, 4}, 51);
    Tensor b = randn_t({2, 4, 5}, 52);
    Var y = ad::bmm(ad::constant(a), ad::constant(b));
    REQUIRE(y->val.shape == std::vector<int64_t>{2, 3, 5});
    for (int64_t bb = 0; bb < 2; ++bb)
        for (int64_t i = 0; i < 3; ++i)
            for (int64_t j = 0; j < 5; ++j) {
                double want = 0.0;
                for (int64_t k = 0; k < 4; ++k) want += a.at3(bb, i, k) * b.at3(bb, k, j);
                CHECK(y->val.at3(bb, i, j) == doctest::Approx(want).epsilon(1e-12));
            }
    Tensor bt = randn_t({2, 5, 4}, 53);
    Var yt = ad::bmm(ad::constant(a), ad::constant(bt), true);
    REQUIRE(yt->val.shape == std::vector<int64_t>{2, 3, 5});
    for (int64_t bb = 0; bb < 2; ++bb)
        for (int64_t i = 0; i < 3; ++i)
            for (int64_t j = 0; j < 5; ++j) {
                double want = 0.0;
                for (int64_t k = 0; k < 4; ++k) want += a.at3(bb, i, k) * bt.at3(bb, j, k);
                CHECK(yt->val.at3(bb, i, j) == doctest::Approx(want).epsilon(1e-12));
            }
    check_gradients({a, b}, [](const std::vector<Var>& v) {
        return ad::mean_all(ad::bmm(v[0], v[1]));
    });
    check_gradients({a, bt}, [](const std::vector<Var>& v) {
        return ad::mean_all(ad::bmm(v[0], v[1], true));
    });
}

TEST_CASE("softmax_last rows are simplex points") {
    Tensor a = randn_t({3, 5}, 61);
    Var y = ad::softmax_last(ad::constant(a));
    for (int64_t r = 0; r < 3; ++r) {
        double s = 0.0;
        for (int64_t j = 0; j < 5; ++j) {
            CHECK(y->val.at2(r, j) > 0.0);
            s += y->val.at2(r, j);
        }
        CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    }
    // weighted sum keeps the gradient non-trivial (plain mean of a softmax row
    // has an exactly zero gradient).
    Tensor wts = randn_t({3, 5}, 62);
    check_gradients({a}, [&](const std::vector<Var>& v) {
        return ad::mean_all(ad::mul(ad::softmax_last(v[0]), ad::constant(wts)));
    });
}

TEST_CASE("layernorm_last standardizes rows") {
    Tensor a = randn_t({4, 6}, 71);
    Var y = ad::layernorm_last(ad::constant(a));
    for (int64_t r = 0; r < 4; ++r) {
        double mu = 0.0, var = 0.0;
        for (int64_t j = 0; j < 6; ++j) mu += y->val.at2(r, j);
        mu /= 6.0;
        for (int64_t j = 0; j < 6; ++j)
            var += (y->val.at2(r, j) - mu) * (y->val.at2(r, j) - mu);
        var /= 6.0;
        CHECK(mu == doctest::Approx(0.0).epsilon(1e-10));
        CHECK(var == doctest::Approx(1.0).epsilon(1e-4));
    }
    Tensor wts = randn_t({4, 6}, 72);
    check_gradients({a}, [&](const std::vector<Var>& v) {
        return ad::mean_all(ad::mul(ad::layernorm_last(v[0]), ad::constant(wts)));
    });
}

TEST_CASE("rowvec broadcast ops") {
    Tensor a = randn_t({3, 4}, 81);
    Tensor v = randn_t({4}, 82);
    Var m = ad::mul_rowvec(ad::constant(a), ad::constant(v));
    Var s = ad::add_rowvec(ad::constant(a), ad::constant(v));
    for (int64_t r = 0; r < 3; ++r)
        for (int64_t j = 0; j < 4; ++j) {
            CHECK(m->val.at2(r, j) ==
                  doctest::Approx(a.at2(r, j) * v.data[static_cast<size_t>(j)]).epsilon(1e-12));
            CHECK(s->val.at2(r, j) ==
                  doctest::Approx(a.at2(r, j) + v.data[static_cast<size_t>(j)]).epsilon(1e-12));
        }
    check_gradients({a, v}, [](const std::vector<Var>& in) {
        return ad::mean_all(ad::mul_rowvec(ad::add_rowvec(in[0], in[1]), in[1]));
    });
}

TEST_CASE("conv3d matches a direct dense convolution") {
    Tensor x = randn_t({3, 4, 4, 2}, 91);
    Tensor w = randn_t({3, 3, 3, 3, 2}, 92);
    Tensor b = randn_t({3}, 93);
    const int st = 1, sh = 2, sw = 2;
    Var y = ad::conv3d(ad::constant(x), ad::constant(w), ad::constant(b), st, sh, sw);
    REQUIRE(y->val.shape == std::vector<int64_t>{3, 2, 2, 3});
    for (int64_t lo = 0; lo < 3; ++lo)
        for (int64_t ho = 0; ho < 2; ++ho)
            for (int64_t wo = 0; wo < 2; ++wo)
                for (int64_t co = 0; co < 3; ++co) {
                    double want = b.data[static_cast<size_t>(co)];
                    for (int64_t dt = 0; dt < 3; ++dt)
                        for (int64_t dh = 0; dh < 3; ++dh)
                            for (int64_t dw = 0; dw < 3; ++dw) {
                                const int64_t li = lo * st + dt - 1;
                                const int64_t hi = ho * sh + dh - 1;
                                const int64_t wi = wo * sw + dw - 1;
                                if (li < 0 || li >= 3 || hi < 0 || hi >= 4 || wi < 0 || wi >= 4)
                                    continue;
                                for (int64_t ci = 0; ci < 2; ++ci)
                                    want += x.at4(li, hi, wi, ci) *
                                            w.data[static_cast<size_t>(
                                                (((co * 3 + dt) * 3 + dh) * 3 + dw) * 2 + ci)];
                            }
                    CHECK(y->val.at4(lo, ho, wo, co) == doctest::Approx(want).epsilon(1e-10));
                }
    check_gradients({x, w, b}, [](const std::vector<Var>& v) {
        return ad::mean_all(ad::conv3d(v[0], v[1], v[2], 1, 2, 2));
    });
}

TEST_CASE("upsample_nearest replicates blocks") {
    Tensor x = randn_t({2, 2, 2, 3}, 101);
    Var y = ad::upsample_nearest(ad::constant(x), 2, 2, 2);
    REQUIRE(y->val.shape == std::vector<int64_t>{4, 4, 4, 3});
    for (int64_t l = 0; l < 4; ++l)
        for (int64_t h = 0; h < 4; ++h)
            for (int64_t w = 0; w < 4; ++w)
                for (int64_t c = 0; c < 3; ++c)
                    CHECK(y->val.at4(l, h, w, c) == x.at4(l / 2, h / 2, w / 2, c));
    check_gradients({x}, [](const std::vector<Var>& v) {
        return ad::mean_all(ad::upsample_nearest(v[0], 2, 1, 2));
    });
}

TEST_CASE("conv1d_rows convolves along the row axis with zero padding") {
    Tensor x = randn_t({2, 5, 3}, 111);
    Tensor w = randn_t({4, 3, 3}, 112);
    Tensor b = randn_t({4}, 113);
    Var y = ad::conv1d_rows(ad::constant(x), ad::constant(w), ad::constant(b));
    REQUIRE(y->val.shape == std::vector<int64_t>{2, 5, 4});
    for (int64_t bb = 0; bb < 2; ++bb)
        for (int64_t i = 0; i < 5; ++i)
            for (int64_t co = 0; co < 4; ++co) {
                double want = b.data[static_cast<size_t>(co)];
                for (int64_t t = 0; t < 3; ++t) {
                    const int64_t j = i + t - 1;
                    if (j < 0 || j >= 5) continue;
                    for (int64_t ci = 0; ci < 3; ++ci)
                        want += x.at3(bb, j, ci) *
                                w.data[static_cast<size_t>((co * 3 + t) * 3 + ci)];
                }
                CHECK(y->val.at3(bb, i, co) == doctest::Approx(want).epsilon(1e-10));
            }
    check_gradients({x, w, b}, [](const std::vector<Var>& v) {
        return ad::mean_all(ad::conv1d_rows(v[0], v[1], v[2]));
    });
}

TEST_CASE("embed_rows gathers and scatter-adds") {
    Tensor table = randn_t({5, 3}, 121);
    const std::vector<int64_t> ids{3, 0, 3};
    Var y = ad::embed_rows(ad::constant(table), ids);
    REQUIRE(y->val.shape == std::vector<int64_t>{3, 3});
    for (size_t i = 0; i < ids.size(); ++i)
        for (int64_t j = 0; j < 3; ++j)
            CHECK(y->val.at2(static_cast<int64_t>(i), j) == table.at2(ids[i], j));
    // duplicate index 3 must receive twice the gradient of index 0
    Var t = ad::leaf(table);
    ad::backward(ad::sum_all(ad::embed_rows(t, ids)));
    for (int64_t j = 0; j < 3; ++j) {
        CHECK(t->grad.at2(3, j) == doctest::Approx(2.0));
        CHECK(t->grad.at2(0, j) == doctest::Approx(1.0));
        CHECK(t->grad.at2(1, j) == doctest::Approx(0.0));
    }
    CHECK_THROWS_AS(ad::embed_rows(ad::constant(table), {5}), validation_error);
}

TEST_CASE("patchify and unpatchify are inverse bijections") {
    Tensor z = randn_t({2, 4, 6, 3}, 131);
    Var tokens = ad::patchify_op(ad::constant(z), 2);
    REQUIRE(tokens->val.shape == std::vector<int64_t>{2, 6, 12});
    // token (gy, gx) element (dy, dx, c) comes from pixel (gy*2+dy, gx*2+dx, c)
    for (int64_t l = 0; l < 2; ++l)
        for (int64_t gy = 0; gy < 2; ++gy)
            for (int64_t gx = 0; gx < 3; ++gx)
                for (int64_t dy = 0; dy < 2; ++dy)
                    for (int64_t dx = 0; dx < 2; ++dx)
                        for (int64_t c = 0; c < 3; ++c)
                            CHECK(tokens->val.at3(l, gy * 3 + gx, (dy * 2 + dx) * 3 + c) ==
                                  z.at4(l, gy * 2 + dy, gx * 2 + dx, c));
    Var back = ad::unpatchify_op(tokens, 2, 4, 6, 3);
    REQUIRE(back->val.shape == z.shape);
    for (int64_t i = 0; i < z.numel(); ++i)
        CHECK(back->val.data[static_cast<size_t>(i)] == z.data[static_cast<size_t>(i)]);
    check_gradients({z}, [](const std::vector<Var>& v) {
        return ad::mean_all(ad::silu(ad::patchify_op(v[0], 2)));
    });
    CHECK_THROWS_AS(ad::patchify_op(ad::constant(z), 5), validation_error);
}

TEST_CASE("reshape, permute, slice_last, concat_last, tile_first") {
    Tensor a = randn_t({2, 3, 4}, 141);
    Var r = ad::reshape(ad::constant(a), {6, 4});
    for (int64_t i = 0; i < a.numel(); ++i)
        CHECK(r->val.data[static_cast<size_t>(i)] == a.data[static_cast<size_t>(i)]);

    Var p = ad::permute(ad::constant(a), {1, 0, 2});
    REQUIRE(p->val.shape == std::vector<int64_t>{3, 2, 4});
    for (int64_t i = 0; i < 2; ++i)
        for (int64_t j = 0; j < 3; ++j)
            for (int64_t k = 0; k < 4; ++k) CHECK(p->val.at3(j, i, k) == a.at3(i, j, k));

    Var s = ad::slice_last(ad::constant(a), 1, 3);
    REQUIRE(s->val.shape == std::vector<int64_t>{2, 3, 2});
    for (int64_t i = 0; i < 2; ++i)
        for (int64_t j = 0; j < 3; ++j)
            for (int64_t k = 0; k < 2; ++k) CHECK(s->val.at3(i, j, k) == a.at3(i, j, k + 1));

    Tensor b = randn_t({2, 3, 2}, 142);
    Var cat = ad::concat_last(ad::constant(a), ad::constant(b));
    REQUIRE(cat->val.shape == std::vector<int64_t>{2, 3, 6});
    for (int64_t i = 0; i < 2; ++i)
        for (int64_t j = 0; j < 3; ++j) {
            for (int64_t k = 0; k < 4; ++k) CHECK(cat->val.at3(i, j, k) == a.at3(i, j, k));
            for (int64_t k = 0; k < 2; ++k) CHECK(cat->val.at3(i, j, k + 4) == b.at3(i, j, k));
        }

    Tensor one = randn_t({1, 2, 3}, 143);
    Var t = ad::tile_first(ad::constant(one), 3);
    REQUIRE(t->val.shape == std::vector<int64_t>{3, 2, 3});
    for (int64_t i = 0; i < 3; ++i)
        for (int64_t j = 0; j < 2; ++j)
            for (int64_t k = 0; k < 3; ++k) CHECK(t->val.at3(i, j, k) == one.at3(0, j, k));

    check_gradients({a, b, one}, [](const std::vector<Var>& v) {
        Var x = ad::concat_last(ad::permute(v[0], {1, 0, 2}), ad::permute(v[1], {1, 0, 2}));
        Var y = ad::slice_last(x, 0, 3);
        Var z = ad::mul(y, ad::tile_first(v[2], 3));
        return ad::mean_all(ad::reshape(z, {18, 1}));
    });
}

TEST_CASE("backward accumulates through shared subexpressions") {
    // loss = mean((x + x)^2): d/dx = 8x / numel, easy closed form
    Tensor x = randn_t({2, 2}, 151);
    Var v = ad::leaf(x);
    Var doubled = ad::add(v, v);
    ad::backward(ad::mean_all(ad::mul(doubled, doubled)));
    for (int64_t i = 0; i < 4; ++i)
        CHECK(v->grad.data[static_cast<size_t>(i)] ==
              doctest::Approx(8.0 * x.data[static_cast<size_t>(i)] / 4.0).epsilon(1e-10));
}

TEST_CASE("shape mismatches raise named-axis errors") {
    Tensor a = randn_t({2, 3}, 161);
    Tensor b = randn_t({3, 2}, 162);
    CHECK_THROWS_AS(ad::add(ad::constant(a), ad::constant(b)), validation_error);
    CHECK_THROWS_AS(
        ad::conv3d(ad::constant(randn_t({2, 4, 4, 3}, 163)),
                   ad::constant(randn_t({4, 3, 3, 3, 2}, 164)),
                   ad::constant(randn_t({4}, 165)), 1, 1, 1),
        validation_error);
    try {
        ad::conv3d(ad::constant(randn_t({2, 4, 4, 3}, 166)),
                   ad::constant(randn_t({4, 3, 3, 3, 2}, 167)),
                   ad::constant(randn_t({4}, 168)), 1, 1, 1);
        FAIL("expected validation_error");
    } catch (const validation_error& e) {
        // message names the offending channel counts
        CHECK(std::string(e.what()).find("channels") != std::string::npos);
    }
}
