#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <fstream>

#include "shimforge/dataset.hpp"
#include "shimforge/metrics.hpp"
#include "shimforge/sampler.hpp"
#include "shimforge/weights_io.hpp"

using namespace shimforge;
using namespace shimforge::diffusion;

namespace {

DenoiserParams small_params(std::uint64_t seed = 7) {
    DenoiserParams p = init_denoiser({}, seed);
    Rng rng(derive_seed(seed, "outw"));
    // A nonzero output stage so sampling dynamics are not the trivial rescale.
    p.out_w = Tensor::randn(p.out_w.shape, rng, 0.05);
    return p;
}

Tensor random_latent(std::uint64_t seed) {
    Rng rng(seed);
    return Tensor::randn({3, 32, 32}, rng, 0.5);
}

}  // namespace

TEST_CASE("schedule endpoints and monotonicity") {
    const NoiseSchedule s2 = make_schedule(2);
    CHECK(s2.abar(2) == Catch::Approx((1.0 - 1e-4) * (1.0 - 0.02)).margin(1e-15));

    const NoiseSchedule s = make_schedule(1000);
    CHECK(s.abar(1) == Catch::Approx(1.0 - 1e-4).margin(1e-15));
    CHECK(s.abar(1) > 0.99);
    CHECK(s.abar(1000) < 0.01);
    for (int t = 1; t <= 1000; ++t) CHECK(s.abar(t) < s.abar(t - 1));

    CHECK_THROWS_AS(make_schedule(1), ConfigError);
}

TEST_CASE("forward diffuse closed forms and variance") {
    const NoiseSchedule s = make_schedule(1000);
    const Tensor x0 = random_latent(1);
    const Tensor zero(x0.shape);
    const Tensor at1 = forward_diffuse(s, x0, 1, zero);
    for (std::size_t i = 0; i < x0.v.size(); ++i)
        CHECK(at1.v[i] == Catch::Approx(std::sqrt(s.abar(1)) * x0.v[i]).margin(1e-12));

    CHECK_THROWS_AS(forward_diffuse(s, x0, 0, zero), ConfigError);
    CHECK_THROWS_AS(forward_diffuse(s, x0, 1001, zero), ConfigError);

    // Monte-Carlo: sample variance of x_t - sqrt(abar) x0 approaches 1 - abar.
    const int t = 500;
    Rng rng(99);
    double acc = 0.0;
    std::size_t count = 0;
    for (int draw = 0; draw < 16; ++draw) {
        const Tensor eps = Tensor::randn(x0.shape, rng);
        const Tensor xt = forward_diffuse(s, x0, t, eps);
        for (std::size_t i = 0; i < x0.v.size(); ++i) {
            const double d = xt.v[i] - std::sqrt(s.abar(t)) * x0.v[i];
            acc += d * d;
            ++count;
        }
    }
    const double var = acc / count;
    CHECK(var == Catch::Approx(1.0 - s.abar(t)).epsilon(0.03));
}

TEST_CASE("uniform grid over the diffusion range") {
    const TimeGrid g = make_grid(1000, {50});
    REQUIRE(g.steps.size() == 50);
    CHECK(g.steps.front() == 20);
    CHECK(g.steps.back() == 1000);
    for (std::size_t i = 0; i < g.steps.size(); ++i) CHECK(g.steps[i] == 20 * static_cast<int>(i + 1));
    CHECK(g.prev(20) == 0);
    CHECK(g.prev(140) == 120);
    CHECK(g.contains(600));
    CHECK_FALSE(g.contains(601));
    CHECK_THROWS_AS(g.index_of(601), GridError);
}

TEST_CASE("zeta rearrangement reproduces the DDIM update at every grid step") {
    const NoiseSchedule s = make_schedule(1000);
    const TimeGrid g = make_grid(1000, {50});
    Rng rng(3);
    for (int t : g.steps) {
        const int tp = g.prev(t);
        const StepCoeffs c = step_coeffs(s, t, tp);
        const double a = std::sqrt(s.abar(tp) / s.abar(t));
        const double b = std::sqrt(1.0 - s.abar(tp)) - a * std::sqrt(1.0 - s.abar(t));
        for (int trial = 0; trial < 4; ++trial) {
            const double x = rng.normal(), e = rng.normal();
            const double direct = a * x + b * e;
            const double rearranged = c.scale * (x - c.zeta * e);
            CHECK(std::abs(direct - rearranged) < 1e-10);
        }
    }
}

TEST_CASE("denoiser shape checks, determinism, and zero-shim context identity") {
    const DenoiserParams p = small_params();
    CHECK(p.parameter_count() <= 200000);

    const Tensor x = random_latent(2);
    const Tensor e1 = denoiser_predict(p, x, 140, p.null_ctx);
    const Tensor e2 = denoiser_predict(p, x, 140, p.null_ctx);
    CHECK(e1.v == e2.v);  // bit identical
    CHECK(e1.shape == x.shape);

    Tensor ctx_plus_zero = p.null_ctx;
    const Tensor e3 = denoiser_predict(p, x, 140, ctx_plus_zero + Tensor(p.null_ctx.shape));
    CHECK(e3.v == e1.v);

    Tensor bad({3, 16, 16});
    CHECK_THROWS_AS(denoiser_predict(p, bad, 140, p.null_ctx), ShapeError);
    Tensor badctx({2, 32});
    CHECK_THROWS_AS(denoiser_predict(p, x, 140, badctx), ShapeError);
    CHECK_THROWS_AS(denoiser_predict(p, x, 0, p.null_ctx), ConfigError);
}

TEST_CASE("sampler with zero noise prediction is the closed-form rescale") {
    DenoiserParams p = init_denoiser({}, 3);  // zero out_w and out_b: eps-hat is exactly 0
    const NoiseSchedule s = make_schedule(1000);
    const TimeGrid g = make_grid(1000, {50});
    const Tensor x = random_latent(4);
    const Tensor next = sampler_step(p, s, g, x, 140, p.null_ctx);
    const double a = std::sqrt(s.abar(120) / s.abar(140));
    for (std::size_t i = 0; i < x.v.size(); ++i)
        CHECK(next.v[i] == Catch::Approx(a * x.v[i]).margin(1e-12));

    // Bottom grid step with zero eps: x0 prediction = x / sqrt(abar).
    const Tensor x0 = sampler_step(p, s, g, x, 20, p.null_ctx);
    for (std::size_t i = 0; i < x.v.size(); ++i)
        CHECK(x0.v[i] == Catch::Approx(x.v[i] / std::sqrt(s.abar(20))).margin(1e-12));

    CHECK_THROWS_AS(sampler_step(p, s, g, x, 77, p.null_ctx), GridError);
}

TEST_CASE("one inversion step composed with one sampler step is the identity") {
    const DenoiserParams p = small_params();
    const NoiseSchedule s = make_schedule(1000);
    const TimeGrid g = make_grid(1000, {50});
    for (int t : {20, 140, 500, 1000}) {
        const Tensor x_prev = random_latent(100 + t);
        const Tensor x_t = invert_step(p, s, g, x_prev, t, p.null_ctx);
        const Tensor back = sampler_step(p, s, g, x_t, t, p.null_ctx);
        CHECK(max_abs_diff(back, x_prev) < 1e-6);
    }
}

TEST_CASE("full inversion round trip reconstructs the latent") {
    const DenoiserParams p = small_params();
    const NoiseSchedule s = make_schedule(1000);
    const TimeGrid g = make_grid(1000, {50});
    const Image img = dataset::make_scene(41);
    const Tensor x0 = encode(img);

    CallCounter calls;
    const LatentTrajectory traj = invert(p, s, g, x0, p.null_ctx, &calls);
    REQUIRE(traj.timesteps.size() == g.steps.size());
    CHECK(traj.timesteps == g.steps);
    CHECK(calls.calls > 0);
    for (const Tensor& a : traj.anchors) a.require_finite("anchor");

    const Tensor back = generate(p, s, g, traj.anchors.back(), p.null_ctx);
    const Image rec = decode(back);
    CHECK(metrics::psnr(rec, img) >= 30.0);

    // Anchors are deterministic per (weights, input).
    const LatentTrajectory traj2 = invert(p, s, g, x0, p.null_ctx);
    for (std::size_t i = 0; i < traj.anchors.size(); ++i)
        CHECK(traj.anchors[i].v == traj2.anchors[i].v);
}

TEST_CASE("inversion of the zero latent stays finite") {
    const DenoiserParams p = small_params();
    const NoiseSchedule s = make_schedule(1000);
    const TimeGrid g = make_grid(1000, {50});
    const Tensor zero({3, 32, 32});
    const LatentTrajectory traj = invert(p, s, g, zero, p.null_ctx);
    for (const Tensor& a : traj.anchors) a.require_finite("anchor");
}

TEST_CASE("identity codec") {
    const Image img = dataset::make_scene(8);
    const Tensor latent = encode(img);
    CHECK(latent.v.front() == Catch::Approx(2.0 * img.data.front() - 1.0).margin(1e-15));
    const Image back = decode(latent);
    // Exact to the last rounding: the rescale can cost one ulp below 0.25.
    double worst = 0.0;
    for (std::size_t i = 0; i < img.data.size(); ++i)
        worst = std::max(worst, std::abs(back.data[i] - img.data[i]));
    CHECK(worst < 1e-15);

    Image extremes(2, 2, 1);
    extremes.data = {0.0, 1.0, 0.25, 0.75};
    const Tensor l2 = encode(extremes);
    CHECK(l2.v[0] == -1.0);
    CHECK(l2.v[1] == 1.0);

    Tensor wild({1, 2, 2});
    wild.v = {-3.0, 3.0, 0.0, 0.5};
    const Image clamped = decode(wild);
    CHECK(clamped.data[0] == 0.0);
    CHECK(clamped.data[1] == 1.0);
}

TEST_CASE("weights save/load round trips bit-exactly and checksums") {
    DenoiserParams p = small_params(11);
    p.train_step = 1234;
    const std::string path = "weights_test.bin";
    save_weights(path, p);
    const DenoiserParams q = load_weights(path);
    CHECK(q.train_step == 1234);
    CHECK(q.cfg == p.cfg);
    const auto pn = p.named();
    const auto qn = q.named();
    for (std::size_t i = 0; i < pn.size(); ++i) {
        CHECK(pn[i].first == qn[i].first);
        CHECK(pn[i].second->v == qn[i].second->v);
    }

    // Flip one payload byte: the checksum must catch it.
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    char b;
    f.seekg(600);
    f.get(b);
    f.seekp(600);
    f.put(static_cast<char>(b ^ 0x40));
    f.close();
    CHECK_THROWS_AS(load_weights(path), IoError);
    std::remove(path.c_str());
    CHECK_THROWS_AS(load_weights("no_such_file.bin"), IoError);
}

TEST_CASE("procedural dataset is deterministic and diverse") {
    const std::vector<Image> a = dataset::gen_dataset(16, 5);
    const std::vector<Image> b = dataset::gen_dataset(16, 5);
    for (int i = 0; i < 16; ++i) CHECK(a[i].data == b[i].data);
    CHECK(dataset::gen_dataset(0, 5).empty());

    // Distinct 8-bit levels per channel across a modest set.
    const std::vector<Image> set = dataset::gen_dataset(64, 123);
    for (int c = 0; c < 3; ++c) {
        std::vector<bool> seen(256, false);
        int distinct = 0;
        for (const Image& im : set)
            for (int y = 0; y < im.height; ++y)
                for (int x = 0; x < im.width; ++x) {
                    const int level = static_cast<int>(std::lround(im.at(c, y, x) * 255.0));
                    if (!seen[level]) {
                        seen[level] = true;
                        ++distinct;
                    }
                }
        CHECK(distinct >= 64);
    }
}
