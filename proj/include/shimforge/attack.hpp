#pragma once

// The anchors-and-shims attack. A target image is inverted into an anchor
// trajectory; from the start timestep downward the sampler runs
// unconditionally except at selected timesteps, where a context perturbation
// (the shim) is optimized against three losses:
//
//   norm      hinge pushing |delta| past a margin
//   semantic  negative cosine between the null context and its perturbation
//   align     mean squared distance of the next latent from its anchor
//
// Each optimizer iteration records exactly one denoiser forward on a fresh
// graph, so per-iteration state is independent of how many timesteps the
// schedule has. Regen/Rinse baselines and the two ambiguity attacks share the
// same sampler.

#include <chrono>
#include <map>
#include <sstream>

#include <json.hpp>

#include "shimforge/watermark.hpp"

namespace shimforge::attack {

using diffusion::CallCounter;
using diffusion::DenoiserParams;
using diffusion::LatentTrajectory;
using diffusion::NoiseSchedule;
using diffusion::TimeGrid;

enum class StartMode { InverseAnchor, Noisy };

struct AttackConfig {
    int start_timestep = 140;  // K
    std::vector<int> select = {100, 60};
    StartMode start_mode = StartMode::Noisy;
    double gamma1 = 1e5;
    double gamma2 = 0.1;
    double margin = 10.0;
    std::map<int, double> margin_overrides;  // per-timestep sweeps
    double lr = 0.01;
    double weight_decay = 1e-3;
    double clip_norm = 1.0;
    int max_iters = 100;
    double tol = 1e-4;
    int tol_window = 5;
    std::uint64_t seed = 0;

    double margin_at(int t) const {
        const auto it = margin_overrides.find(t);
        return it == margin_overrides.end() ? margin : it->second;
    }

    void validate(const TimeGrid& grid) const {
        if (!grid.contains(start_timestep))
            throw ConfigError("attack: start timestep not on sampler grid");
        for (int t : select) {
            if (!grid.contains(t)) throw ConfigError("attack: selected timestep not on grid");
            if (t > start_timestep)
                throw ConfigError("attack: selected timestep above start timestep");
        }
        if (gamma1 < 0.0 || gamma2 < 0.0) throw ConfigError("attack: loss weights must be >= 0");
        if (lr <= 0.0 || clip_norm <= 0.0) throw ConfigError("attack: lr and clip must be positive");
        if (max_iters < 0 || tol_window < 1) throw ConfigError("attack: bad iteration bounds");
    }

    static AttackConfig preset(const std::string& name) {
        AttackConfig c;
        if (name == "late-noisy") {
            c.start_timestep = 140;
            c.select = {100, 60};
            c.start_mode = StartMode::Noisy;
        } else if (name == "early-inverse") {
            c.start_timestep = 1000;
            c.select = {600, 200};
            c.start_mode = StartMode::InverseAnchor;
        } else {
            throw ConfigError("unknown attack preset: " + name);
        }
        return c;
    }
};

inline nlohmann::json config_to_json(const AttackConfig& c) {
    nlohmann::json j{{"start_timestep", c.start_timestep},
                     {"select", c.select},
                     {"start_mode", c.start_mode == StartMode::Noisy ? "noisy" : "inverse-anchor"},
                     {"gamma1", c.gamma1},
                     {"gamma2", c.gamma2},
                     {"margin", c.margin},
                     {"lr", c.lr},
                     {"weight_decay", c.weight_decay},
                     {"clip_norm", c.clip_norm},
                     {"max_iters", c.max_iters},
                     {"tol", c.tol},
                     {"tol_window", c.tol_window},
                     {"seed", c.seed}};
    if (!c.margin_overrides.empty()) {
        nlohmann::json m;
        for (auto& [t, v] : c.margin_overrides) m[std::to_string(t)] = v;
        j["margin_overrides"] = m;
    }
    return j;
}

inline AttackConfig config_from_json(const nlohmann::json& j) {
    AttackConfig c;
    c.start_timestep = j.value("start_timestep", c.start_timestep);
    if (j.contains("select")) c.select = j.at("select").get<std::vector<int>>();
    const std::string mode = j.value("start_mode", "noisy");
    if (mode == "noisy")
        c.start_mode = StartMode::Noisy;
    else if (mode == "inverse-anchor")
        c.start_mode = StartMode::InverseAnchor;
    else
        throw ConfigError("attack config: unknown start_mode " + mode);
    c.gamma1 = j.value("gamma1", c.gamma1);
    c.gamma2 = j.value("gamma2", c.gamma2);
    c.margin = j.value("margin", c.margin);
    c.lr = j.value("lr", c.lr);
    c.weight_decay = j.value("weight_decay", c.weight_decay);
    c.clip_norm = j.value("clip_norm", c.clip_norm);
    c.max_iters = j.value("max_iters", c.max_iters);
    c.tol = j.value("tol", c.tol);
    c.tol_window = j.value("tol_window", c.tol_window);
    c.seed = j.value("seed", static_cast<std::uint64_t>(0));
    if (j.contains("margin_overrides"))
        for (auto& [k, v] : j.at("margin_overrides").items())
            c.margin_overrides[std::stoi(k)] = v.get<double>();
    return c;
}

// ------------------------------------------------------------ losses

inline double loss_norm(const Tensor& delta, double margin) {
    return std::max(0.0, margin - frobenius_norm(delta));
}

inline double loss_semantic(const Tensor& delta, const Tensor& e0) {
    const double n0 = frobenius_norm(e0);
    if (n0 == 0.0) throw ConfigError("loss_semantic: null context is zero");
    const Tensor w = e0 + delta;
    const double nw = frobenius_norm(w);
    if (nw == 0.0) throw NumericError("loss_semantic: singular cosine (e0 + delta is zero)");
    return -dot(e0, w) / (n0 * nw);
}

inline double loss_align(const Tensor& x_prev, const Tensor& anchor_prev) {
    if (!x_prev.same_shape(anchor_prev)) throw ShapeError("loss_align: shapes differ");
    double acc = 0.0;
    for (std::size_t i = 0; i < x_prev.v.size(); ++i) {
        const double d = x_prev.v[i] - anchor_prev.v[i];
        acc += d * d;
    }
    return acc / static_cast<double>(x_prev.v.size());
}

struct LossParts {
    double norm_term = 0.0;
    double semantic = 0.0;
    double align = 0.0;
    double total = 0.0;
};

inline LossParts loss_total(int t, const Tensor& delta, const Tensor& x_prev,
                            const Tensor& anchor_prev, const Tensor& e0, const AttackConfig& cfg) {
    LossParts p;
    p.norm_term = loss_norm(delta, cfg.margin_at(t));
    p.semantic = loss_semantic(delta, e0);
    p.align = loss_align(x_prev, anchor_prev);
    p.total = p.norm_term + cfg.gamma1 * p.semantic + cfg.gamma2 * p.align;
    return p;
}

// ------------------------------------------------------------ gradient

namespace detail {

inline Tensor semantic_grad(const Tensor& delta, const Tensor& e0) {
    // d/d_delta of -cos(e0, e0+delta), flattened.
    const double n0 = frobenius_norm(e0);
    const Tensor w = e0 + delta;
    const double nw = frobenius_norm(w);
    if (n0 == 0.0 || nw == 0.0) throw NumericError("semantic_grad: singular cosine");
    const double d = dot(e0, w);
    Tensor g(delta.shape);
    const double c1 = -1.0 / (n0 * nw);
    const double c2 = d / (n0 * nw * nw * nw);
    for (std::size_t i = 0; i < g.v.size(); ++i) g.v[i] = c1 * e0.v[i] + c2 * w.v[i];
    return g;
}

inline Tensor hinge_grad(const Tensor& delta, double margin) {
    Tensor g(delta.shape);
    const double n = frobenius_norm(delta);
    if (n > 0.0 && n < margin)
        for (std::size_t i = 0; i < g.v.size(); ++i) g.v[i] = -delta.v[i] / n;
    return g;  // zero at the origin and on the saturated plateau
}

}  // namespace detail

struct ShimEval {
    Tensor x_prev;
    LossParts parts;
    Tensor grad;              // dL_total/d_delta, unclipped
    std::size_t tape_bytes = 0;
};

/// One loss (and optional gradient) evaluation: a single denoiser forward
/// recorded on its own graph, the DDIM update, and the three loss terms. The
/// align path backpropagates through the attention context; the norm and
/// semantic terms close in closed form.
inline ShimEval shim_eval(const DenoiserParams& params, const NoiseSchedule& sched,
                          const TimeGrid& grid, int t, const Tensor& x_t, const Tensor& delta,
                          const Tensor& anchor_prev, const AttackConfig& cfg, CallCounter& counter,
                          bool want_grad = true) {
    const int t_prev = grid.prev(t);
    const double at = sched.abar(t), ap = sched.abar(t_prev);
    const double a = std::sqrt(ap / at);
    const double b = std::sqrt(1.0 - ap) - a * std::sqrt(1.0 - at);

    ad::Graph g;
    const int did = g.input(delta, want_grad);
    const int e0id = g.input(params.null_ctx, false);
    const int ctx = g.add(e0id, did);
    const int xid = g.input(x_t, false);
    const diffusion::DenoiserNodes nodes = diffusion::denoiser_forward(g, params, xid, t, ctx, false, &counter);
    const int xprev = g.affine2(xid, a, nodes.eps, b);
    const int anchor = g.input(anchor_prev, false);
    const int align = g.mse(xprev, anchor);

    ShimEval out;
    out.x_prev = g.val(xprev);
    out.parts.align = g.val(align).v[0];
    out.parts.norm_term = loss_norm(delta, cfg.margin_at(t));
    out.parts.semantic = loss_semantic(delta, params.null_ctx);
    out.parts.total = out.parts.norm_term + cfg.gamma1 * out.parts.semantic + cfg.gamma2 * out.parts.align;
    if (!std::isfinite(out.parts.total))
        throw NumericError("shim_eval: non-finite loss at t=" + std::to_string(t));

    if (want_grad) {
        g.backward(align);
        out.grad = Tensor(delta.shape);
        const Tensor& ga = g.grad(did);
        const Tensor gs = detail::semantic_grad(delta, params.null_ctx);
        const Tensor gh = detail::hinge_grad(delta, cfg.margin_at(t));
        for (std::size_t i = 0; i < out.grad.v.size(); ++i)
            out.grad.v[i] = gh.v[i] + cfg.gamma1 * gs.v[i] + cfg.gamma2 * ga.v[i];
        for (double v : out.grad.v)
            if (!std::isfinite(v))
                throw NumericError("shim_eval: non-finite gradient at t=" + std::to_string(t));
    }
    out.tape_bytes = g.allocated_bytes();
    return out;
}

/// Exact gradient of the joint loss with respect to the shim, through one
/// sampler step (one denoiser forward per call).
inline Tensor shim_gradient(const DenoiserParams& params, const NoiseSchedule& sched,
                            const TimeGrid& grid, int t, const Tensor& delta, const Tensor& x_t,
                            const Tensor& anchor_prev, const AttackConfig& cfg,
                            CallCounter* counter = nullptr) {
    CallCounter local;
    ShimEval e = shim_eval(params, sched, grid, t, x_t, delta, anchor_prev, cfg,
                           counter ? *counter : local, true);
    return e.grad;
}

// ------------------------------------------------------------ optimizer

struct IterRecord {
    int iter = 0;
    int t = 0;
    double l_norm = 0.0, l_semantic = 0.0, l_align = 0.0, l_total = 0.0;
    double delta_norm = 0.0;
};

struct TimestepTrace {
    int t = 0;
    std::vector<IterRecord> iters;
    double final_delta_norm = 0.0;
    long denoiser_calls = 0;
};

struct ShimOptResult {
    Tensor delta;
    Tensor x_prev;
    TimestepTrace trace;
};

/// Called with the shim state at each optimizer iteration (observers only;
/// anything they evaluate stays off the attack's call counter).
using IterObserver = std::function<void(int iter, int t, const Tensor& delta)>;

/// Adam with decoupled weight decay and global-norm gradient clipping.
/// Every trace row is one denoiser forward; updates happen between rows, so
/// rows = updates + 1. Stops once the relative change of the total loss stays
/// under tol for tol_window consecutive iterations, or at max_iters updates.
inline ShimOptResult optimize_shim(const DenoiserParams& params, const NoiseSchedule& sched,
                                   const TimeGrid& grid, int t, const Tensor& x_t,
                                   const Tensor& anchor_prev, const AttackConfig& cfg,
                                   CallCounter& counter, const IterObserver* observer = nullptr) {
    const long calls_before = counter.calls;
    Tensor delta({params.cfg.ctx_tokens, params.cfg.ctx_dim});  // zeros
    Tensor m(delta.shape), v(delta.shape);
    const double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;

    ShimOptResult out;
    out.trace.t = t;
    double prev_total = 0.0;
    int consec = 0;

    for (int k = 0;; ++k) {
        ShimEval eval = shim_eval(params, sched, grid, t, x_t, delta, anchor_prev, cfg, counter, true);
        out.trace.iters.push_back({k, t, eval.parts.norm_term, eval.parts.semantic,
                                   eval.parts.align, eval.parts.total, frobenius_norm(delta)});
        if (observer) (*observer)(k, t, delta);
        bool stop = k >= cfg.max_iters;
        if (!stop && k > 0) {
            const double rel = std::abs(eval.parts.total - prev_total) /
                               std::max(std::abs(prev_total), 1e-12);
            consec = rel < cfg.tol ? consec + 1 : 0;
            if (consec >= cfg.tol_window) stop = true;
        }
        prev_total = eval.parts.total;
        if (stop) {
            out.delta = delta;
            out.x_prev = std::move(eval.x_prev);
            break;
        }

        Tensor grad = std::move(eval.grad);
        const double gnorm = frobenius_norm(grad);
        if (gnorm > cfg.clip_norm)
            for (double& x : grad.v) x *= cfg.clip_norm / gnorm;
        const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(k + 1));
        const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(k + 1));
        for (std::size_t i = 0; i < delta.v.size(); ++i) {
            m.v[i] = beta1 * m.v[i] + (1.0 - beta1) * grad.v[i];
            v.v[i] = beta2 * v.v[i] + (1.0 - beta2) * grad.v[i] * grad.v[i];
            delta.v[i] -= cfg.lr * (m.v[i] / bc1) / (std::sqrt(v.v[i] / bc2) + adam_eps);
            delta.v[i] -= cfg.lr * cfg.weight_decay * delta.v[i];
        }
    }
    out.trace.final_delta_norm = frobenius_norm(out.delta);
    out.trace.denoiser_calls = counter.calls - calls_before;
    return out;
}

// ------------------------------------------------------------ pipeline

struct AttackResult {
    Image attacked;
    std::vector<TimestepTrace> traces;
    long denoiser_calls = 0;
    double wall_seconds = 0.0;
};

inline const Tensor& anchor_at(const LatentTrajectory& traj, int t) {
    return t == 0 ? traj.x0 : traj.at(t);
}

/// Iterate snapshots taken at the largest selected timestep: each requested
/// optimizer iteration is completed down the chain and decoded.
struct IterDumps {
    std::vector<int> iters;                      // which optimizer iterations to dump
    std::vector<std::pair<int, Image>> frames;   // (iteration, completed image)
};

namespace detail {

inline Image complete_from(const DenoiserParams& params, const NoiseSchedule& sched,
                           const TimeGrid& grid, Tensor x, int t, const Tensor& delta) {
    CallCounter scratch;
    const Tensor ctx = params.null_ctx + delta;
    x = diffusion::sampler_step(params, sched, grid, x, t, ctx, &scratch);
    const int below = grid.prev(t);
    if (below > 0) x = diffusion::generate(params, sched, grid, x, params.null_ctx, &scratch, below);
    return diffusion::decode(x);
}

}  // namespace detail

inline AttackResult run_attack(const DenoiserParams& params, const NoiseSchedule& sched,
                               const TimeGrid& grid, const Image& image, const AttackConfig& cfg,
                               IterDumps* dumps = nullptr) {
    cfg.validate(grid);
    image.require_finite("run_attack");
    const auto t_start = std::chrono::steady_clock::now();
    CallCounter counter;
    AttackResult res;

    const Tensor x0 = diffusion::encode(image);
    const LatentTrajectory traj =
        diffusion::invert(params, sched, grid, x0, params.null_ctx, &counter, cfg.start_timestep);

    Tensor x;
    if (cfg.start_mode == StartMode::Noisy) {
        Rng rng(derive_seed(cfg.seed, "start-noise"));
        const Tensor eps = Tensor::randn(x0.shape, rng);
        x = diffusion::forward_diffuse(sched, x0, cfg.start_timestep, eps);
    } else {
        x = traj.at(cfg.start_timestep);
    }

    const int dump_t = cfg.select.empty() ? -1 : *std::max_element(cfg.select.begin(), cfg.select.end());
    for (int i = grid.index_of(cfg.start_timestep); i >= 0; --i) {
        const int t = grid.steps[i];
        const bool selected = std::find(cfg.select.begin(), cfg.select.end(), t) != cfg.select.end();
        if (selected) {
            IterObserver obs;
            if (dumps && t == dump_t) {
                const Tensor& x_here = x;
                obs = [&, x_here](int k, int tt, const Tensor& delta) {
                    if (std::find(dumps->iters.begin(), dumps->iters.end(), k) != dumps->iters.end())
                        dumps->frames.emplace_back(
                            k, detail::complete_from(params, sched, grid, x_here, tt, delta));
                };
            }
            ShimOptResult r = optimize_shim(params, sched, grid, t, x, anchor_at(traj, grid.prev(t)),
                                            cfg, counter, obs ? &obs : nullptr);
            res.traces.push_back(std::move(r.trace));
            x = std::move(r.x_prev);
        } else {
            x = diffusion::sampler_step(params, sched, grid, x, t, params.null_ctx, &counter);
        }
    }

    res.attacked = diffusion::decode(x);
    res.denoiser_calls = counter.calls;
    res.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    return res;
}

// ------------------------------------------------------------ baselines

inline Image regen(const DenoiserParams& params, const NoiseSchedule& sched, const TimeGrid& grid,
                   const Image& image, int t_star, std::uint64_t seed,
                   CallCounter* counter = nullptr) {
    if (!grid.contains(t_star)) throw diffusion::GridError("regen: t* not on sampler grid");
    const Tensor x0 = diffusion::encode(image);
    Rng rng(derive_seed(seed, "start-noise"));
    const Tensor eps = Tensor::randn(x0.shape, rng);
    Tensor x = diffusion::forward_diffuse(sched, x0, t_star, eps);
    x = diffusion::generate(params, sched, grid, x, params.null_ctx, counter, t_star);
    return diffusion::decode(x);
}

inline Image rinse(const DenoiserParams& params, const NoiseSchedule& sched, const TimeGrid& grid,
                   const Image& image, int t_star, int rounds, std::uint64_t seed,
                   CallCounter* counter = nullptr) {
    if (rounds < 1) throw ConfigError("rinse: rounds must be >= 1");
    Image img = image;
    for (int r = 0; r < rounds; ++r) {
        const std::uint64_t round_seed = r == 0 ? seed : derive_seed(seed, "rinse-round", r);
        img = regen(params, sched, grid, img, t_star, round_seed, counter);
    }
    return img;
}

// ------------------------------------------------------------ ambiguity

/// Remove the original bit watermark with the shim attack, then embed a new
/// key. `scheme` is "spread" or "blocksvd".
inline Image ambiguity_replace(const DenoiserParams& params, const NoiseSchedule& sched,
                               const TimeGrid& grid, const Image& image, const AttackConfig& cfg,
                               const watermark::BitKey& new_key, const std::string& scheme) {
    const AttackResult r = run_attack(params, sched, grid, image, cfg);
    if (scheme == "spread") return watermark::embed_spread(r.attacked, new_key);
    if (scheme == "blocksvd") return watermark::embed_blocksvd(r.attacked, new_key);
    throw ConfigError("ambiguity_replace: unknown bit scheme " + scheme);
}

/// Invert, write a second ring watermark on a different channel of x_T, and
/// regenerate so both keys detect.
inline Image ambiguity_coexist(const DenoiserParams& params, const NoiseSchedule& sched,
                               const TimeGrid& grid, const Image& image, int original_channel,
                               const watermark::TreeRingKey& new_key,
                               CallCounter* counter = nullptr) {
    if (new_key.channel == original_channel)
        throw ConfigError("ambiguity_coexist: new key must use a different channel");
    const Tensor x0 = diffusion::encode(image);
    const LatentTrajectory traj = diffusion::invert(params, sched, grid, x0, params.null_ctx, counter);
    const Tensor x_T = watermark::treering_write(traj.anchors.back(), new_key);
    const Tensor out = diffusion::generate(params, sched, grid, x_T, params.null_ctx, counter);
    return diffusion::decode(out);
}

// ------------------------------------------------------------ traces

inline std::string traces_to_csv(const std::vector<TimestepTrace>& traces) {
    std::ostringstream os;
    os << "iteration,t,L_norm,L_semantic,L_align,L_total,delta_norm\n";
    os.precision(17);
    for (const TimestepTrace& tr : traces)
        for (const IterRecord& r : tr.iters)
            os << r.iter << ',' << r.t << ',' << r.l_norm << ',' << r.l_semantic << ','
               << r.l_align << ',' << r.l_total << ',' << r.delta_norm << '\n';
    return os.str();
}

}  // namespace shimforge::attack
