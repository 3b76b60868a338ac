#include <catch2/catch_amalgamated.hpp>

#include <functional>

#include "shimforge/denoiser.hpp"

using namespace shimforge;

namespace {

using BuildFn = std::function<int(ad::Graph&, int)>;  // input node -> scalar loss node

double eval_loss(const Tensor& x0, const BuildFn& build) {
    ad::Graph g;
    const int x = g.input(x0, false);
    return g.val(build(g, x)).v[0];
}

void check_gradient(const Tensor& x0, const BuildFn& build, double tol = 2e-6) {
    ad::Graph g;
    const int x = g.input(x0, true);
    const int loss = build(g, x);
    g.backward(loss);
    const Tensor analytic = g.grad(x);
    REQUIRE(analytic.v.size() == x0.v.size());

    for (std::size_t i = 0; i < x0.v.size(); ++i) {
        const double h = 1e-5 * std::max(1.0, std::abs(x0.v[i]));
        Tensor xp = x0, xm = x0;
        xp.v[i] += h;
        xm.v[i] -= h;
        const double fd = (eval_loss(xp, build) - eval_loss(xm, build)) / (2.0 * h);
        const double scale = std::max({1e-8, std::abs(fd), std::abs(analytic.v[i])});
        CHECK(std::abs(analytic.v[i] - fd) / scale < tol);
    }
}

Tensor randt(std::vector<int> shape, std::uint64_t seed, double s = 1.0) {
    Rng rng(seed);
    return Tensor::randn(std::move(shape), rng, s);
}

}  // namespace

TEST_CASE("conv3x3 gradients (input, weight, bias; both strides)") {
    for (int stride : {1, 2}) {
        const Tensor w0 = randt({3, 2, 3, 3}, 10 + stride, 0.5);
        const Tensor b0 = randt({3}, 20 + stride, 0.5);
        const Tensor tgt = randt({3, 4 / stride, 4 / stride}, 30 + stride);

        check_gradient(randt({2, 4, 4}, 1), [&](ad::Graph& g, int x) {
            const int w = g.input(w0, false);
            const int b = g.input(b0, false);
            return g.mse(g.conv3x3(x, w, b, stride), g.input(tgt, false));
        });
        const Tensor x0 = randt({2, 4, 4}, 2);
        check_gradient(w0, [&](ad::Graph& g, int w) {
            const int x = g.input(x0, false);
            const int b = g.input(b0, false);
            return g.mse(g.conv3x3(x, w, b, stride), g.input(tgt, false));
        });
        check_gradient(b0, [&](ad::Graph& g, int b) {
            const int x = g.input(x0, false);
            const int w = g.input(w0, false);
            return g.mse(g.conv3x3(x, w, b, stride), g.input(tgt, false));
        });
    }
}

TEST_CASE("pointwise and shape op gradients") {
    const Tensor tgt = randt({2, 4, 4}, 40);
    check_gradient(randt({2, 4, 4}, 3), [&](ad::Graph& g, int x) {
        return g.mse(g.silu(x), g.input(tgt, false));
    });
    check_gradient(randt({2, 2, 2}, 4), [&](ad::Graph& g, int x) {
        return g.mse(g.upsample2(x), g.input(tgt, false));
    });
    check_gradient(randt({2, 4, 4}, 5), [&](ad::Graph& g, int x) {
        const int other = g.input(randt({2, 4, 4}, 50), false);
        return g.mse(g.add(x, other), g.input(tgt, false));
    });
    check_gradient(randt({2}, 6), [&](ad::Graph& g, int bias) {
        const int x = g.input(randt({2, 4, 4}, 60), false);
        return g.mse(g.add_channel_bias(x, bias), g.input(tgt, false));
    });
    const Tensor tgt34 = randt({3, 4}, 41);
    check_gradient(randt({3, 4}, 7), [&](ad::Graph& g, int x) {
        return g.mse(g.scale(g.reshape(g.transpose2d(g.transpose2d(x)), {3, 4}), 1.7),
                     g.input(tgt34, false));
    });
    check_gradient(randt({3, 4}, 8), [&](ad::Graph& g, int x) {
        const int other = g.input(randt({3, 4}, 70), false);
        return g.mse(g.affine2(x, 0.8, other, -1.3), g.input(tgt34, false));
    });
}

TEST_CASE("matmul family gradients") {
    const Tensor a0 = randt({3, 5}, 9);
    const Tensor b0 = randt({5, 2}, 90);
    const Tensor bt0 = randt({2, 5}, 91);
    const Tensor tgt = randt({3, 2}, 42);
    check_gradient(a0, [&](ad::Graph& g, int a) {
        return g.mse(g.matmul(a, g.input(b0, false)), g.input(tgt, false));
    });
    check_gradient(b0, [&](ad::Graph& g, int b) {
        return g.mse(g.matmul(g.input(a0, false), b), g.input(tgt, false));
    });
    check_gradient(a0, [&](ad::Graph& g, int a) {
        return g.mse(g.matmul_nt(a, g.input(bt0, false)), g.input(tgt, false));
    });
    check_gradient(bt0, [&](ad::Graph& g, int b) {
        return g.mse(g.matmul_nt(g.input(a0, false), b), g.input(tgt, false));
    });
}

TEST_CASE("row selection and vector linear gradients") {
    const Tensor table = randt({6, 4}, 11);
    const Tensor w0 = randt({4, 3}, 12);
    const Tensor b0 = randt({3}, 13);
    const Tensor tgt = randt({3}, 43);
    check_gradient(table, [&](ad::Graph& g, int t) {
        return g.mse(g.linear_vec(g.select_row(t, 2), g.input(w0, false), g.input(b0, false)),
                     g.input(tgt, false));
    });
    check_gradient(w0, [&](ad::Graph& g, int w) {
        return g.mse(g.linear_vec(g.select_row(g.input(table, false), 2), w, g.input(b0, false)),
                     g.input(tgt, false));
    });
}

TEST_CASE("softmax and mse gradients") {
    const Tensor tgt = randt({4, 3}, 44);
    check_gradient(randt({4, 3}, 14), [&](ad::Graph& g, int x) {
        return g.mse(g.softmax_rows(x), g.input(tgt, false));
    });
    check_gradient(randt({4, 3}, 15), [&](ad::Graph& g, int x) {
        return g.mse(g.input(tgt, false), x);  // second argument path
    });
}

TEST_CASE("softmax rows sum to one at every query position") {
    ad::Graph g;
    const int x = g.input(randt({64, 4}, 16, 3.0), false);
    const int s = g.softmax_rows(x);
    const Tensor& y = g.val(s);
    for (int r = 0; r < 64; ++r) {
        double sum = 0.0;
        for (int c = 0; c < 4; ++c) sum += y.v[r * 4 + c];
        CHECK(sum == Catch::Approx(1.0).margin(1e-12));
    }
}

TEST_CASE("attention output is exactly linear in V for fixed weights") {
    ad::Graph g;
    const Tensor attnw = [&] {
        ad::Graph tmp;
        return tmp.val(tmp.softmax_rows(tmp.input(randt({6, 4}, 17), false)));
    }();
    const Tensor v0 = randt({4, 5}, 18);
    Tensor v2 = v0;
    for (double& x : v2.v) x *= 2.0;
    const int a = g.input(attnw, false);
    const Tensor out1 = g.val(g.matmul(a, g.input(v0, false)));
    const Tensor out2 = g.val(g.matmul(a, g.input(v2, false)));
    for (std::size_t i = 0; i < out1.v.size(); ++i) CHECK(out2.v[i] == 2.0 * out1.v[i]);
}

TEST_CASE("denoiser gradient with respect to the context matches finite differences") {
    diffusion::DenoiserConfig cfg;
    cfg.image_size = 8;
    cfg.c1 = 2;
    cfg.c2 = 3;
    cfg.c3 = 4;
    cfg.ctx_tokens = 2;
    cfg.ctx_dim = 4;
    cfg.temb_dim = 4;
    cfg.T = 10;
    diffusion::DenoiserParams params = diffusion::init_denoiser(cfg, 123);
    params.out_w = randt(params.out_w.shape, 99, 0.3);  // the zero init would hide the ctx path
    const Tensor x0 = randt({3, 8, 8}, 19);
    const Tensor tgt = randt({3, 8, 8}, 45);

    check_gradient(randt({2, 4}, 20), [&](ad::Graph& g, int ctx) {
        const int x = g.input(x0, false);
        const auto nodes = diffusion::denoiser_forward(g, params, x, 3, ctx, false);
        return g.mse(nodes.eps, g.input(tgt, false));
    }, 1e-5);
}
