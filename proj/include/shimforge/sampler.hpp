#pragma once

// Deterministic DDIM sampling over a uniform timestep grid, plus the exact
// inversion that produces anchor trajectories. Each inversion step solves the
// sampler update as a fixed-point equation, so one inversion step composed
// with one sampler step is the identity to solver tolerance.

#include "shimforge/denoiser.hpp"
#include "shimforge/schedule.hpp"

namespace shimforge::diffusion {

class GridError : public ConfigError {
public:
    explicit GridError(const std::string& m) : ConfigError(m) {}
};

struct SamplerConfig {
    int num_steps = 50;
};

struct TimeGrid {
    std::vector<int> steps;  // ascending diffusion timesteps

    int top() const { return steps.back(); }
    int bottom() const { return steps.front(); }

    bool contains(int t) const {
        return std::binary_search(steps.begin(), steps.end(), t);
    }
    int index_of(int t) const {
        const auto it = std::lower_bound(steps.begin(), steps.end(), t);
        if (it == steps.end() || *it != t) throw GridError("timestep not on sampler grid");
        return static_cast<int>(it - steps.begin());
    }
    /// Grid point below t, or 0 off the bottom.
    int prev(int t) const {
        const int i = index_of(t);
        return i == 0 ? 0 : steps[i - 1];
    }
    int next(int t) const {
        const int i = index_of(t);
        if (i + 1 >= static_cast<int>(steps.size())) throw GridError("no grid point above timestep");
        return steps[i + 1];
    }
};

inline TimeGrid make_grid(int T, const SamplerConfig& cfg = {}) {
    if (cfg.num_steps < 1 || cfg.num_steps > T)
        throw ConfigError("make_grid: num_steps must be in [1, T]");
    TimeGrid g;
    int last = 0;
    for (int i = 1; i <= cfg.num_steps; ++i) {
        const int t = static_cast<int>(std::lround(static_cast<double>(i) * T / cfg.num_steps));
        if (t > last) {
            g.steps.push_back(t);
            last = t;
        }
    }
    return g;
}

/// The DDIM update written as x_prev = scale * (x_t - zeta * eps_hat).
struct StepCoeffs {
    double scale = 1.0;  // sqrt(abar_prev / abar_t)
    double zeta = 0.0;
};

inline StepCoeffs step_coeffs(const NoiseSchedule& sched, int t, int t_prev) {
    const double at = sched.abar(t), ap = sched.abar(t_prev);
    StepCoeffs c;
    c.scale = std::sqrt(ap / at);
    c.zeta = std::sqrt(1.0 - at) - std::sqrt((1.0 - ap) * at / ap);
    return c;
}

namespace detail {

inline Tensor ddim_apply(const NoiseSchedule& sched, const Tensor& x_t, const Tensor& eps, int t,
                         int t_prev) {
    // Canonical form: x_prev = a x_t + b eps with a = sqrt(ap/at).
    const double at = sched.abar(t), ap = sched.abar(t_prev);
    const double a = std::sqrt(ap / at);
    const double b = std::sqrt(1.0 - ap) - a * std::sqrt(1.0 - at);
    Tensor out = x_t;
    for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] = a * x_t.v[i] + b * eps.v[i];
    return out;
}

}  // namespace detail

/// One deterministic step t -> prev grid point (or 0 at the bottom).
inline Tensor sampler_step(const DenoiserParams& p, const NoiseSchedule& sched, const TimeGrid& grid,
                           const Tensor& x_t, int t, const Tensor& ctx,
                           CallCounter* counter = nullptr) {
    const int t_prev = grid.prev(t);  // throws GridError if t off-grid
    const Tensor eps = denoiser_predict(p, x_t, t, ctx, counter);
    return detail::ddim_apply(sched, x_t, eps, t, t_prev);
}

/// Run the sampler from `from_t` (default: top of grid) down to x_0.
inline Tensor generate(const DenoiserParams& p, const NoiseSchedule& sched, const TimeGrid& grid,
                       const Tensor& x_start, const Tensor& ctx, CallCounter* counter = nullptr,
                       int from_t = -1) {
    int idx = from_t < 0 ? static_cast<int>(grid.steps.size()) - 1 : grid.index_of(from_t);
    Tensor x = x_start;
    for (int i = idx; i >= 0; --i) x = sampler_step(p, sched, grid, x, grid.steps[i], ctx, counter);
    return x;
}

/// Solve sampler_step(x_t) = x_prev for x_t by fixed-point iteration,
/// starting from the naive estimate that evaluates eps at x_prev.
inline Tensor invert_step(const DenoiserParams& p, const NoiseSchedule& sched, const TimeGrid& grid,
                          const Tensor& x_prev, int t, const Tensor& ctx,
                          CallCounter* counter = nullptr) {
    const int t_prev = grid.prev(t);
    const double at = sched.abar(t), ap = sched.abar(t_prev);
    const double a = std::sqrt(ap / at);
    const double b = std::sqrt(1.0 - ap) - a * std::sqrt(1.0 - at);
    auto solve = [&](const Tensor& eps) {
        Tensor x = x_prev;
        for (std::size_t i = 0; i < x.v.size(); ++i) x.v[i] = (x_prev.v[i] - b * eps.v[i]) / a;
        return x;
    };
    Tensor x = solve(denoiser_predict(p, x_prev, t, ctx, counter));
    for (int it = 0; it < 200; ++it) {
        Tensor next = solve(denoiser_predict(p, x, t, ctx, counter));
        for (double v : next.v)
            if (!std::isfinite(v))
                throw NumericError("invert_step: non-finite latent at t=" + std::to_string(t));
        const double delta = max_abs_diff(next, x);
        x = std::move(next);
        if (delta < 1e-11) break;
    }
    return x;
}

/// Anchor sequence from inversion.
struct LatentTrajectory {
    std::vector<int> timesteps;   // ascending grid timesteps
    std::vector<Tensor> anchors;  // matching latents
    Tensor x0;
    std::string origin;

    const Tensor& at(int t) const {
        const auto it = std::lower_bound(timesteps.begin(), timesteps.end(), t);
        if (it == timesteps.end() || *it != t)
            throw GridError("trajectory has no anchor at timestep " + std::to_string(t));
        return anchors[it - timesteps.begin()];
    }
};

/// Invert x0 up the grid, storing an anchor at every grid timestep <= up_to_t
/// (default: the whole grid).
inline LatentTrajectory invert(const DenoiserParams& p, const NoiseSchedule& sched,
                               const TimeGrid& grid, const Tensor& x0, const Tensor& ctx,
                               CallCounter* counter = nullptr, int up_to_t = -1,
                               std::string origin = {}) {
    LatentTrajectory traj;
    traj.x0 = x0;
    traj.origin = std::move(origin);
    const int top_idx =
        up_to_t < 0 ? static_cast<int>(grid.steps.size()) - 1 : grid.index_of(up_to_t);
    Tensor x = x0;
    for (int i = 0; i <= top_idx; ++i) {
        x = invert_step(p, sched, grid, x, grid.steps[i], ctx, counter);
        traj.timesteps.push_back(grid.steps[i]);
        traj.anchors.push_back(x);
    }
    return traj;
}

// ------------------------------------------------------------ identity codec

/// Latents are pixels rescaled to [-1,1].
inline Tensor encode(const Image& img) {
    Tensor t({img.channels, img.height, img.width});
    for (std::size_t i = 0; i < img.data.size(); ++i) t.v[i] = 2.0 * img.data[i] - 1.0;
    return t;
}

inline Image decode(const Tensor& latent) {
    if (latent.shape.size() != 3) throw ShapeError("decode: latent must be [C,H,W]");
    Image img(latent.shape[1], latent.shape[2], latent.shape[0]);
    for (std::size_t i = 0; i < img.data.size(); ++i)
        img.data[i] = clamp01(0.5 * (latent.v[i] + 1.0));
    return img;
}

}  // namespace shimforge::diffusion
