#pragma once

// Noise-prediction training with Adam. The batch is computed data-parallel
// into per-item gradient buffers and reduced in index order, so results do
// not depend on thread scheduling.

#include "shimforge/dataset.hpp"
#include "shimforge/sampler.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace shimforge::diffusion {

struct TrainConfig {
    long steps = 20000;
    int batch = 4;
    double lr = 1e-3;
    std::uint64_t seed = 0;
    int log_every = 100;
};

struct TrainStats {
    std::vector<std::pair<long, double>> loss_log;  // (step, mean loss since last row)
    double first_window_mean = 0.0;                 // first 100 steps
    double last_window_mean = 0.0;                  // last 100 steps
    long end_step = 0;
};

namespace detail {

struct Adam {
    double lr = 1e-3, beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    std::vector<Tensor> m, v;
    long t = 0;

    void init(const std::vector<Tensor*>& params) {
        m.clear();
        v.clear();
        for (const Tensor* p : params) {
            m.emplace_back(p->shape);
            v.emplace_back(p->shape);
        }
    }

    void step(std::vector<Tensor*>& params, const std::vector<Tensor>& grads) {
        ++t;
        const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
        const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
        for (std::size_t i = 0; i < params.size(); ++i) {
            Tensor& p = *params[i];
            const Tensor& g = grads[i];
            for (std::size_t j = 0; j < p.v.size(); ++j) {
                m[i].v[j] = beta1 * m[i].v[j] + (1.0 - beta1) * g.v[j];
                v[i].v[j] = beta2 * v[i].v[j] + (1.0 - beta2) * g.v[j] * g.v[j];
                const double mhat = m[i].v[j] / bc1;
                const double vhat = v[i].v[j] / bc2;
                p.v[j] -= lr * mhat / (std::sqrt(vhat) + eps);
            }
        }
    }
};

}  // namespace detail

inline TrainStats train_denoiser(DenoiserParams& params, const std::vector<Tensor>& latents,
                                 const TrainConfig& cfg) {
    if (latents.empty()) throw ConfigError("train_denoiser: dataset is empty");
    for (const Tensor& l : latents)
        if (!l.same_shape(latents.front()))
            throw ShapeError("train_denoiser: dataset latents must share one shape");

    const NoiseSchedule sched = make_schedule(params.cfg.T);
    auto named = params.named();
    std::vector<Tensor*> plist;
    plist.reserve(named.size());
    for (auto& [n, t] : named) plist.push_back(t);

    detail::Adam adam;
    adam.lr = cfg.lr;
    adam.init(plist);

    Rng rng(derive_seed(cfg.seed, "train"));
    TrainStats stats;
    std::vector<double> first_window, tail_window;
    double window_acc = 0.0;
    int window_n = 0;

    struct ItemDraw {
        int index;
        int t;
        Tensor eps;
    };

    for (long step = 1; step <= cfg.steps; ++step) {
        std::vector<ItemDraw> batch(cfg.batch);
        for (ItemDraw& it : batch) {
            it.index = static_cast<int>(rng.uniform_int(0, static_cast<std::int64_t>(latents.size()) - 1));
            it.t = static_cast<int>(rng.uniform_int(1, params.cfg.T));
            it.eps = Tensor::randn(latents.front().shape, rng);
        }

        std::vector<std::vector<Tensor>> item_grads(cfg.batch);
        std::vector<double> item_loss(cfg.batch, 0.0);

#ifdef _OPENMP
#pragma omp parallel for schedule(static)
#endif
        for (int bi = 0; bi < cfg.batch; ++bi) {
            const ItemDraw& it = batch[bi];
            const Tensor x_t = forward_diffuse(sched, latents[it.index], it.t, it.eps);
            ad::Graph g;
            const int xid = g.input(x_t, false);
            const int ctxid = g.input(params.null_ctx, true);
            const DenoiserNodes nodes = denoiser_forward(g, params, xid, it.t, ctxid, true);
            const int target = g.input(it.eps, false);
            const int loss = g.mse(nodes.eps, target);
            item_loss[bi] = g.val(loss).v[0];
            g.backward(loss);

            std::vector<Tensor>& grads = item_grads[bi];
            grads.reserve(named.size());
            for (auto& [pname, pid] : nodes.params) grads.push_back(g.grad(pid));
            grads.push_back(g.grad(ctxid));  // null_ctx, last in named() order
        }

        // Fixed-order reduction: sum item gradients by batch index.
        std::vector<Tensor> total(named.size());
        for (std::size_t pi = 0; pi < named.size(); ++pi) {
            total[pi] = Tensor(plist[pi]->shape);
            for (int bi = 0; bi < cfg.batch; ++bi) {
                const Tensor& g = item_grads[bi][pi];
                for (std::size_t j = 0; j < total[pi].v.size(); ++j) total[pi].v[j] += g.v[j];
            }
            const double inv = 1.0 / cfg.batch;
            for (double& v : total[pi].v) v *= inv;
        }

        double loss = 0.0;
        for (double l : item_loss) loss += l;
        loss /= cfg.batch;
        if (!std::isfinite(loss))
            throw NumericError("train_denoiser: loss diverged at step " + std::to_string(step));

        adam.step(plist, total);
        ++params.train_step;

        if (step <= 100) first_window.push_back(loss);
        tail_window.push_back(loss);
        if (tail_window.size() > 100) tail_window.erase(tail_window.begin());
        window_acc += loss;
        ++window_n;
        if (step % cfg.log_every == 0 || step == cfg.steps) {
            stats.loss_log.emplace_back(params.train_step, window_acc / window_n);
            window_acc = 0.0;
            window_n = 0;
        }
    }

    auto mean = [](const std::vector<double>& v) {
        double s = 0.0;
        for (double x : v) s += x;
        return v.empty() ? 0.0 : s / static_cast<double>(v.size());
    };
    stats.first_window_mean = mean(first_window);
    stats.last_window_mean = mean(tail_window);
    stats.end_step = params.train_step;
    params.require_finite();
    return stats;
}

inline TrainStats train_denoiser_images(DenoiserParams& params, const std::vector<Image>& images,
                                        const TrainConfig& cfg) {
    std::vector<Tensor> latents;
    latents.reserve(images.size());
    for (const Image& im : images) latents.push_back(encode(im));
    return train_denoiser(params, latents, cfg);
}

}  // namespace shimforge::diffusion
