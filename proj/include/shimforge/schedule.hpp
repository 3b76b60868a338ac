#pragma once

// Linear-beta noise schedule and the closed-form forward diffusion.

#include "shimforge/tensor.hpp"

namespace shimforge::diffusion {

struct NoiseSchedule {
    int T = 0;
    std::vector<double> beta;       // [1..T], index 0 unused
    std::vector<double> alpha_bar;  // [0..T], alpha_bar[0] = 1

    double abar(int t) const { return alpha_bar[t]; }
};

inline NoiseSchedule make_schedule(int T) {
    if (T < 2) throw ConfigError("make_schedule: T must be >= 2");
    NoiseSchedule s;
    s.T = T;
    s.beta.assign(T + 1, 0.0);
    s.alpha_bar.assign(T + 1, 1.0);
    const double b0 = 1e-4, b1 = 0.02;
    double prod = 1.0;
    for (int t = 1; t <= T; ++t) {
        s.beta[t] = b0 + (b1 - b0) * (t - 1) / static_cast<double>(T - 1);
        prod *= 1.0 - s.beta[t];
        s.alpha_bar[t] = prod;
        if (!(s.alpha_bar[t] > 0.0 && s.alpha_bar[t] < 1.0 && s.alpha_bar[t] < s.alpha_bar[t - 1]))
            throw ConfigError("make_schedule: alpha_bar must be strictly decreasing in (0,1)");
    }
    return s;
}

/// x_t = sqrt(abar_t) x0 + sqrt(1 - abar_t) eps, with caller-supplied noise.
inline Tensor forward_diffuse(const NoiseSchedule& sched, const Tensor& x0, int t,
                              const Tensor& eps) {
    if (t < 1 || t > sched.T) throw ConfigError("forward_diffuse: timestep out of range");
    if (!x0.same_shape(eps)) throw ShapeError("forward_diffuse: noise shape mismatch");
    const double a = std::sqrt(sched.abar(t));
    const double b = std::sqrt(1.0 - sched.abar(t));
    Tensor out = x0;
    for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] = a * x0.v[i] + b * eps.v[i];
    return out;
}

}  // namespace shimforge::diffusion
