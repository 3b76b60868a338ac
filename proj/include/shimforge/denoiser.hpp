#pragma once

// Conditional noise-prediction network: three conv stages down and up with
// additive skips, a learned timestep table injected as per-channel bias, and
// one cross-attention block at the 8x8 bottleneck. The context (4 tokens x 32
// dims) enters through the attention K/V projections only, so gradients with
// respect to the conditioning flow through exactly that pathway.

#include "shimforge/autodiff.hpp"

namespace shimforge::diffusion {

struct DenoiserConfig {
    int in_channels = 3;
    int image_size = 32;
    int c1 = 8, c2 = 16, c3 = 32;
    int ctx_tokens = 4;
    int ctx_dim = 32;
    int temb_dim = 32;
    int T = 1000;

    bool operator==(const DenoiserConfig&) const = default;
};

/// Per-run tally of denoiser forward evaluations.
struct CallCounter {
    long calls = 0;
};

struct DenoiserParams {
    DenoiserConfig cfg;
    Tensor enc1_w, enc1_b;
    Tensor down1_w, down1_b;
    Tensor down2_w, down2_b;
    Tensor temb;                    // [T, temb_dim]
    Tensor tproj1_w, tproj1_b;      // temb -> c2 bias
    Tensor tproj2_w, tproj2_b;      // temb -> c3 bias
    Tensor attn_wq, attn_wk, attn_wv, attn_wo;
    Tensor up1_w, up1_b;
    Tensor up2_w, up2_b;
    Tensor out_w, out_b;
    Tensor null_ctx;                // learned unconditional context, [L, d]
    long train_step = 0;

    std::vector<std::pair<std::string, Tensor*>> named() {
        return {
            {"enc1_w", &enc1_w},      {"enc1_b", &enc1_b},
            {"down1_w", &down1_w},    {"down1_b", &down1_b},
            {"down2_w", &down2_w},    {"down2_b", &down2_b},
            {"temb", &temb},
            {"tproj1_w", &tproj1_w},  {"tproj1_b", &tproj1_b},
            {"tproj2_w", &tproj2_w},  {"tproj2_b", &tproj2_b},
            {"attn_wq", &attn_wq},    {"attn_wk", &attn_wk},
            {"attn_wv", &attn_wv},    {"attn_wo", &attn_wo},
            {"up1_w", &up1_w},        {"up1_b", &up1_b},
            {"up2_w", &up2_w},        {"up2_b", &up2_b},
            {"out_w", &out_w},        {"out_b", &out_b},
            {"null_ctx", &null_ctx},
        };
    }
    std::vector<std::pair<std::string, const Tensor*>> named() const {
        auto& self = const_cast<DenoiserParams&>(*this);
        std::vector<std::pair<std::string, const Tensor*>> out;
        for (auto& [n, t] : self.named()) out.emplace_back(n, t);
        return out;
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (auto& [name, t] : named()) n += t->size();
        return n;
    }

    void require_finite() const {
        for (auto& [name, t] : named()) t->require_finite(name.c_str());
    }
};

inline DenoiserParams init_denoiser(const DenoiserConfig& cfg, std::uint64_t seed) {
    Rng rng(seed);
    auto conv_init = [&](int cout, int cin) {
        return Tensor::randn({cout, cin, 3, 3}, rng, std::sqrt(2.0 / (cin * 9.0)));
    };
    auto mat_init = [&](int rows, int cols) {
        return Tensor::randn({rows, cols}, rng, 1.0 / std::sqrt(static_cast<double>(rows)));
    };
    DenoiserParams p;
    p.cfg = cfg;
    p.enc1_w = conv_init(cfg.c1, cfg.in_channels);
    p.enc1_b = Tensor({cfg.c1});
    p.down1_w = conv_init(cfg.c2, cfg.c1);
    p.down1_b = Tensor({cfg.c2});
    p.down2_w = conv_init(cfg.c3, cfg.c2);
    p.down2_b = Tensor({cfg.c3});
    p.temb = Tensor::randn({cfg.T, cfg.temb_dim}, rng, 0.1);
    p.tproj1_w = mat_init(cfg.temb_dim, cfg.c2);
    p.tproj1_b = Tensor({cfg.c2});
    p.tproj2_w = mat_init(cfg.temb_dim, cfg.c3);
    p.tproj2_b = Tensor({cfg.c3});
    p.attn_wq = mat_init(cfg.c3, cfg.ctx_dim);
    p.attn_wk = mat_init(cfg.ctx_dim, cfg.ctx_dim);
    p.attn_wv = mat_init(cfg.ctx_dim, cfg.ctx_dim);
    p.attn_wo = mat_init(cfg.ctx_dim, cfg.c3);
    p.up1_w = conv_init(cfg.c2, cfg.c3);
    p.up1_b = Tensor({cfg.c2});
    p.up2_w = conv_init(cfg.c1, cfg.c2);
    p.up2_b = Tensor({cfg.c1});
    p.out_w = Tensor({cfg.in_channels, cfg.c1, 3, 3});  // zero init keeps eps-hat small at start
    p.out_b = Tensor({cfg.in_channels});
    p.null_ctx = Tensor::randn({cfg.ctx_tokens, cfg.ctx_dim}, rng, 1.0);
    return p;
}

/// Node handles for one recorded forward pass.
struct DenoiserNodes {
    int eps = -1;  // prediction, same shape as x
    std::vector<std::pair<std::string, int>> params;  // present when params were inputs
};

namespace detail {

struct ParamIds {
    int enc1_w, enc1_b, down1_w, down1_b, down2_w, down2_b;
    int temb, tproj1_w, tproj1_b, tproj2_w, tproj2_b;
    int attn_wq, attn_wk, attn_wv, attn_wo;
    int up1_w, up1_b, up2_w, up2_b, out_w, out_b;
};

inline ParamIds register_params(ad::Graph& g, const DenoiserParams& p, bool rg,
                                std::vector<std::pair<std::string, int>>* out_ids) {
    ParamIds ids{};
    auto reg = [&](const char* name, const Tensor& t, int& slot) {
        slot = g.input(t, rg);
        if (out_ids) out_ids->emplace_back(name, slot);
    };
    reg("enc1_w", p.enc1_w, ids.enc1_w);
    reg("enc1_b", p.enc1_b, ids.enc1_b);
    reg("down1_w", p.down1_w, ids.down1_w);
    reg("down1_b", p.down1_b, ids.down1_b);
    reg("down2_w", p.down2_w, ids.down2_w);
    reg("down2_b", p.down2_b, ids.down2_b);
    reg("temb", p.temb, ids.temb);
    reg("tproj1_w", p.tproj1_w, ids.tproj1_w);
    reg("tproj1_b", p.tproj1_b, ids.tproj1_b);
    reg("tproj2_w", p.tproj2_w, ids.tproj2_w);
    reg("tproj2_b", p.tproj2_b, ids.tproj2_b);
    reg("attn_wq", p.attn_wq, ids.attn_wq);
    reg("attn_wk", p.attn_wk, ids.attn_wk);
    reg("attn_wv", p.attn_wv, ids.attn_wv);
    reg("attn_wo", p.attn_wo, ids.attn_wo);
    reg("up1_w", p.up1_w, ids.up1_w);
    reg("up1_b", p.up1_b, ids.up1_b);
    reg("up2_w", p.up2_w, ids.up2_w);
    reg("up2_b", p.up2_b, ids.up2_b);
    reg("out_w", p.out_w, ids.out_w);
    reg("out_b", p.out_b, ids.out_b);
    return ids;
}

}  // namespace detail

/// Records eps_theta(x_t, t, ctx) on the graph. `x` and `ctx` are existing
/// graph nodes; parameters are registered as inputs with `params_rg` deciding
/// whether they accumulate gradients.
inline DenoiserNodes denoiser_forward(ad::Graph& g, const DenoiserParams& p, int x, int t, int ctx,
                                      bool params_rg = false, CallCounter* counter = nullptr) {
    if (t < 1 || t > p.cfg.T) throw ConfigError("denoiser: timestep out of range");
    const auto& xs = g.val(x).shape;
    if (xs.size() != 3 || xs[0] != p.cfg.in_channels || xs[1] != p.cfg.image_size ||
        xs[2] != p.cfg.image_size)
        throw ShapeError("denoiser: latent shape mismatch");
    const auto& cs = g.val(ctx).shape;
    if (cs.size() != 2 || cs[0] != p.cfg.ctx_tokens || cs[1] != p.cfg.ctx_dim)
        throw ShapeError("denoiser: context shape mismatch");
    if (counter) ++counter->calls;

    DenoiserNodes out;
    detail::ParamIds ids =
        detail::register_params(g, p, params_rg, params_rg ? &out.params : nullptr);

    const int h1 = g.silu(g.conv3x3(x, ids.enc1_w, ids.enc1_b, 1));
    const int trow = g.select_row(ids.temb, t - 1);
    const int h2 = g.silu(g.add_channel_bias(g.conv3x3(h1, ids.down1_w, ids.down1_b, 2),
                                             g.linear_vec(trow, ids.tproj1_w, ids.tproj1_b)));
    const int h3 = g.silu(g.add_channel_bias(g.conv3x3(h2, ids.down2_w, ids.down2_b, 2),
                                             g.linear_vec(trow, ids.tproj2_w, ids.tproj2_b)));

    const int hw = (p.cfg.image_size / 4) * (p.cfg.image_size / 4);
    const int xf = g.transpose2d(g.reshape(h3, {p.cfg.c3, hw}));     // [HW, c3]
    const int q = g.matmul(xf, ids.attn_wq);                         // [HW, d]
    const int k = g.matmul(ctx, ids.attn_wk);                        // [L, d]
    const int v = g.matmul(ctx, ids.attn_wv);                        // [L, d]
    const int scores = g.scale(g.matmul_nt(q, k), 1.0 / std::sqrt(static_cast<double>(p.cfg.ctx_dim)));
    const int attnw = g.softmax_rows(scores);                        // [HW, L]
    const int attn_out = g.matmul(g.matmul(attnw, v), ids.attn_wo);  // [HW, c3]
    const int attn_sp = g.reshape(g.transpose2d(attn_out),
                                  {p.cfg.c3, p.cfg.image_size / 4, p.cfg.image_size / 4});
    const int h3b = g.add(h3, attn_sp);

    const int u1 = g.silu(g.add(g.conv3x3(g.upsample2(h3b), ids.up1_w, ids.up1_b, 1), h2));
    const int u2 = g.silu(g.add(g.conv3x3(g.upsample2(u1), ids.up2_w, ids.up2_b, 1), h1));
    out.eps = g.conv3x3(u2, ids.out_w, ids.out_b, 1);
    return out;
}

/// Plain evaluation; same kernels as the recorded path, so results are
/// bit-identical with and without gradient machinery.
inline Tensor denoiser_predict(const DenoiserParams& p, const Tensor& x_t, int t,
                               const Tensor& ctx, CallCounter* counter = nullptr) {
    ad::Graph g;
    const int xid = g.input(x_t, false);
    const int cid = g.input(ctx, false);
    const DenoiserNodes nodes = denoiser_forward(g, p, xid, t, cid, false, counter);
    return g.val(nodes.eps);
}

}  // namespace shimforge::diffusion
