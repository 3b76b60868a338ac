#pragma once

// Minimal reverse-mode tape over Tensor. One Graph records one forward
// evaluation; backward() walks the node list in reverse. Gradients only
// propagate along paths that lead to a requires-grad leaf, so evaluating a
// network with gradients disabled costs just the forward kernels.

#include <functional>

#include "shimforge/tensor.hpp"

namespace shimforge::ad {

class Graph {
public:
    int input(Tensor value, bool requires_grad = false) {
        return push(std::move(value), requires_grad, {});
    }

    const Tensor& val(int id) const { return nodes_[id].value; }
    Tensor& grad(int id) { return nodes_[id].grad; }
    bool requires_grad(int id) const { return nodes_[id].rg; }

    /// 3x3 convolution, zero padding 1, stride 1 or 2.
    /// x: [Cin,H,W], w: [Cout,Cin,3,3], b: [Cout] -> [Cout,H/s,W/s]
    int conv3x3(int x, int w, int b, int stride = 1) {
        const Tensor& xv = nodes_[x].value;
        const Tensor& wv = nodes_[w].value;
        const int cin = xv.shape[0], h = xv.shape[1], wid = xv.shape[2];
        const int cout = wv.shape[0];
        const int oh = h / stride, ow = wid / stride;
        Tensor out({cout, oh, ow});
        conv3x3_fwd(xv, wv, nodes_[b].value, stride, out);
        const int id = push(std::move(out), any_rg({x, w, b}), {x, w, b});
        nodes_[id].back = [=](Graph& g) {
            const Tensor& go = g.nodes_[id].grad;
            if (g.nodes_[x].rg) conv3x3_bwd_input(g.nodes_[w].value, go, stride, g.nodes_[x].grad);
            if (g.nodes_[w].rg) conv3x3_bwd_weight(g.nodes_[x].value, go, stride, g.nodes_[w].grad);
            if (g.nodes_[b].rg) {
                Tensor& gb = g.nodes_[b].grad;
                const int spatial = oh * ow;
                for (int oc = 0; oc < cout; ++oc) {
                    double acc = 0.0;
                    const double* p = go.data() + static_cast<std::size_t>(oc) * spatial;
                    for (int i = 0; i < spatial; ++i) acc += p[i];
                    gb.v[oc] += acc;
                }
            }
        };
        return id;
    }

    /// Nearest-neighbour 2x upsample: [C,H,W] -> [C,2H,2W]
    int upsample2(int x) {
        const Tensor& xv = nodes_[x].value;
        const int c = xv.shape[0], h = xv.shape[1], w = xv.shape[2];
        Tensor out({c, 2 * h, 2 * w});
        for (int ch = 0; ch < c; ++ch)
            for (int r = 0; r < h; ++r)
                for (int cc = 0; cc < w; ++cc) {
                    const double v = xv.v[(static_cast<std::size_t>(ch) * h + r) * w + cc];
                    const std::size_t base = (static_cast<std::size_t>(ch) * 2 * h + 2 * r) * 2 * w + 2 * cc;
                    out.v[base] = v;
                    out.v[base + 1] = v;
                    out.v[base + 2 * w] = v;
                    out.v[base + 2 * w + 1] = v;
                }
        const int id = push(std::move(out), nodes_[x].rg, {x});
        nodes_[id].back = [=](Graph& g) {
            if (!g.nodes_[x].rg) return;
            const Tensor& go = g.nodes_[id].grad;
            Tensor& gx = g.nodes_[x].grad;
            for (int ch = 0; ch < c; ++ch)
                for (int r = 0; r < h; ++r)
                    for (int cc = 0; cc < w; ++cc) {
                        const std::size_t base = (static_cast<std::size_t>(ch) * 2 * h + 2 * r) * 2 * w + 2 * cc;
                        gx.v[(static_cast<std::size_t>(ch) * h + r) * w + cc] +=
                            go.v[base] + go.v[base + 1] + go.v[base + 2 * w] + go.v[base + 2 * w + 1];
                    }
        };
        return id;
    }

    int silu(int x) {
        const Tensor& xv = nodes_[x].value;
        Tensor out = xv;
        for (double& v : out.v) v = v / (1.0 + std::exp(-v));
        const int id = push(std::move(out), nodes_[x].rg, {x});
        nodes_[id].back = [=](Graph& g) {
            if (!g.nodes_[x].rg) return;
            const Tensor& xin = g.nodes_[x].value;
            const Tensor& go = g.nodes_[id].grad;
            Tensor& gx = g.nodes_[x].grad;
            for (std::size_t i = 0; i < xin.v.size(); ++i) {
                const double s = 1.0 / (1.0 + std::exp(-xin.v[i]));
                gx.v[i] += go.v[i] * (s * (1.0 + xin.v[i] * (1.0 - s)));
            }
        };
        return id;
    }

    int add(int a, int b) {
        Tensor out = nodes_[a].value + nodes_[b].value;
        const int id = push(std::move(out), any_rg({a, b}), {a, b});
        nodes_[id].back = [=](Graph& g) {
            const Tensor& go = g.nodes_[id].grad;
            if (g.nodes_[a].rg)
                for (std::size_t i = 0; i < go.v.size(); ++i) g.nodes_[a].grad.v[i] += go.v[i];
            if (g.nodes_[b].rg)
                for (std::size_t i = 0; i < go.v.size(); ++i) g.nodes_[b].grad.v[i] += go.v[i];
        };
        return id;
    }

    /// x: [C,H,W] plus a per-channel bias vector [C].
    int add_channel_bias(int x, int bias) {
        const Tensor& xv = nodes_[x].value;
        const int c = xv.shape[0];
        const int spatial = xv.shape[1] * xv.shape[2];
        Tensor out = xv;
        for (int ch = 0; ch < c; ++ch) {
            const double bv = nodes_[bias].value.v[ch];
            double* p = out.data() + static_cast<std::size_t>(ch) * spatial;
            for (int i = 0; i < spatial; ++i) p[i] += bv;
        }
        const int id = push(std::move(out), any_rg({x, bias}), {x, bias});
        nodes_[id].back = [=](Graph& g) {
            const Tensor& go = g.nodes_[id].grad;
            if (g.nodes_[x].rg)
                for (std::size_t i = 0; i < go.v.size(); ++i) g.nodes_[x].grad.v[i] += go.v[i];
            if (g.nodes_[bias].rg)
                for (int ch = 0; ch < c; ++ch) {
                    double acc = 0.0;
                    const double* p = go.data() + static_cast<std::size_t>(ch) * spatial;
                    for (int i = 0; i < spatial; ++i) acc += p[i];
                    g.nodes_[bias].grad.v[ch] += acc;
                }
        };
        return id;
    }

    /// a: [M,K], b: [K,N] -> [M,N]
    int matmul(int a, int b) {
        const Tensor& av = nodes_[a].value;
        const Tensor& bv = nodes_[b].value;
        const int m = av.shape[0], k = av.shape[1], n = bv.shape[1];
        Tensor out({m, n});
        mm(av.data(), bv.data(), out.data(), m, k, n);
        const int id = push(std::move(out), any_rg({a, b}), {a, b});
        nodes_[id].back = [=](Graph& g) {
            const Tensor& go = g.nodes_[id].grad;
            if (g.nodes_[a].rg)  // dA = dOut * B^T
                mm_nt(go.data(), g.nodes_[b].value.data(), g.nodes_[a].grad.data(), m, n, k);
            if (g.nodes_[b].rg)  // dB = A^T * dOut
                mm_tn(g.nodes_[a].value.data(), go.data(), g.nodes_[b].grad.data(), k, m, n);
        };
        return id;
    }

    /// a: [M,K], b: [N,K] -> [M,N] = a * b^T
    int matmul_nt(int a, int b) {
        const Tensor& av = nodes_[a].value;
        const Tensor& bv = nodes_[b].value;
        const int m = av.shape[0], k = av.shape[1], n = bv.shape[0];
        Tensor out({m, n});
        mm_nt(av.data(), bv.data(), out.data(), m, k, n);
        const int id = push(std::move(out), any_rg({a, b}), {a, b});
        nodes_[id].back = [=](Graph& g) {
            const Tensor& go = g.nodes_[id].grad;
            if (g.nodes_[a].rg)  // dA = dOut * B
                mm(go.data(), g.nodes_[b].value.data(), g.nodes_[a].grad.data(), m, n, k);
            if (g.nodes_[b].rg)  // dB = dOut^T * A
                mm_tn(go.data(), g.nodes_[a].value.data(), g.nodes_[b].grad.data(), n, m, k);
        };
        return id;
    }

    int scale(int x, double s) {
        Tensor out = nodes_[x].value;
        for (double& v : out.v) v *= s;
        const int id = push(std::move(out), nodes_[x].rg, {x});
        nodes_[id].back = [=](Graph& g) {
            if (!g.nodes_[x].rg) return;
            const Tensor& go = g.nodes_[id].grad;
            for (std::size_t i = 0; i < go.v.size(); ++i) g.nodes_[x].grad.v[i] += s * go.v[i];
        };
        return id;
    }

    /// Row-wise softmax over the last axis of a [M,N] tensor.
    int softmax_rows(int x) {
        const Tensor& xv = nodes_[x].value;
        const int m = xv.shape[0], n = xv.shape[1];
        Tensor out = xv;
        for (int r = 0; r < m; ++r) {
            double* p = out.data() + static_cast<std::size_t>(r) * n;
            double mx = p[0];
            for (int j = 1; j < n; ++j) mx = std::max(mx, p[j]);
            double sum = 0.0;
            for (int j = 0; j < n; ++j) {
                p[j] = std::exp(p[j] - mx);
                sum += p[j];
            }
            for (int j = 0; j < n; ++j) p[j] /= sum;
        }
        const int id = push(std::move(out), nodes_[x].rg, {x});
        nodes_[id].back = [=](Graph& g) {
            if (!g.nodes_[x].rg) return;
            const Tensor& y = g.nodes_[id].value;
            const Tensor& go = g.nodes_[id].grad;
            Tensor& gx = g.nodes_[x].grad;
            for (int r = 0; r < m; ++r) {
                const double* yr = y.data() + static_cast<std::size_t>(r) * n;
                const double* gr = go.data() + static_cast<std::size_t>(r) * n;
                double dotv = 0.0;
                for (int j = 0; j < n; ++j) dotv += yr[j] * gr[j];
                double* gxr = gx.data() + static_cast<std::size_t>(r) * n;
                for (int j = 0; j < n; ++j) gxr[j] += yr[j] * (gr[j] - dotv);
            }
        };
        return id;
    }

    /// [M,N] -> [N,M]
    int transpose2d(int x) {
        const Tensor& xv = nodes_[x].value;
        const int m = xv.shape[0], n = xv.shape[1];
        Tensor out({n, m});
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j)
                out.v[static_cast<std::size_t>(j) * m + i] = xv.v[static_cast<std::size_t>(i) * n + j];
        const int id = push(std::move(out), nodes_[x].rg, {x});
        nodes_[id].back = [=](Graph& g) {
            if (!g.nodes_[x].rg) return;
            const Tensor& go = g.nodes_[id].grad;
            Tensor& gx = g.nodes_[x].grad;
            for (int i = 0; i < m; ++i)
                for (int j = 0; j < n; ++j)
                    gx.v[static_cast<std::size_t>(i) * n + j] +=
                        go.v[static_cast<std::size_t>(j) * m + i];
        };
        return id;
    }

    /// Row r of a [M,N] tensor -> [N]. Backward scatters into that row only.
    int select_row(int x, int r) {
        const Tensor& xv = nodes_[x].value;
        const int n = xv.shape[1];
        Tensor out({n});
        std::copy_n(xv.data() + static_cast<std::size_t>(r) * n, n, out.data());
        const int id = push(std::move(out), nodes_[x].rg, {x});
        nodes_[id].back = [=](Graph& g) {
            if (!g.nodes_[x].rg) return;
            const Tensor& go = g.nodes_[id].grad;
            double* dst = g.nodes_[x].grad.data() + static_cast<std::size_t>(r) * n;
            for (int j = 0; j < n; ++j) dst[j] += go.v[j];
        };
        return id;
    }

    /// x: [K], w: [K,N], b: [N] -> [N]
    int linear_vec(int x, int w, int b) {
        const Tensor& xv = nodes_[x].value;
        const Tensor& wv = nodes_[w].value;
        const int k = xv.shape[0], n = wv.shape[1];
        Tensor out = nodes_[b].value;
        for (int kk = 0; kk < k; ++kk) {
            const double xk = xv.v[kk];
            const double* wr = wv.data() + static_cast<std::size_t>(kk) * n;
            for (int j = 0; j < n; ++j) out.v[j] += xk * wr[j];
        }
        const int id = push(std::move(out), any_rg({x, w, b}), {x, w, b});
        nodes_[id].back = [=](Graph& g) {
            const Tensor& go = g.nodes_[id].grad;
            if (g.nodes_[x].rg) {
                const Tensor& wt = g.nodes_[w].value;
                for (int kk = 0; kk < k; ++kk) {
                    double acc = 0.0;
                    const double* wr = wt.data() + static_cast<std::size_t>(kk) * n;
                    for (int j = 0; j < n; ++j) acc += wr[j] * go.v[j];
                    g.nodes_[x].grad.v[kk] += acc;
                }
            }
            if (g.nodes_[w].rg) {
                const Tensor& xt = g.nodes_[x].value;
                for (int kk = 0; kk < k; ++kk) {
                    const double xk = xt.v[kk];
                    double* gw = g.nodes_[w].grad.data() + static_cast<std::size_t>(kk) * n;
                    for (int j = 0; j < n; ++j) gw[j] += xk * go.v[j];
                }
            }
            if (g.nodes_[b].rg)
                for (int j = 0; j < n; ++j) g.nodes_[b].grad.v[j] += go.v[j];
        };
        return id;
    }

    /// Copy with a new shape (element count must match).
    int reshape(int x, std::vector<int> shape) {
        Tensor out = nodes_[x].value;
        out.shape = std::move(shape);
        const int id = push(std::move(out), nodes_[x].rg, {x});
        nodes_[id].back = [=](Graph& g) {
            if (!g.nodes_[x].rg) return;
            const Tensor& go = g.nodes_[id].grad;
            for (std::size_t i = 0; i < go.v.size(); ++i) g.nodes_[x].grad.v[i] += go.v[i];
        };
        return id;
    }

    /// a*x + b*y with scalar coefficients; shapes must match.
    int affine2(int x, double a, int y, double b) {
        const Tensor& xv = nodes_[x].value;
        const Tensor& yv = nodes_[y].value;
        Tensor out = xv;
        for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] = a * xv.v[i] + b * yv.v[i];
        const int id = push(std::move(out), any_rg({x, y}), {x, y});
        nodes_[id].back = [=](Graph& g) {
            const Tensor& go = g.nodes_[id].grad;
            if (g.nodes_[x].rg)
                for (std::size_t i = 0; i < go.v.size(); ++i) g.nodes_[x].grad.v[i] += a * go.v[i];
            if (g.nodes_[y].rg)
                for (std::size_t i = 0; i < go.v.size(); ++i) g.nodes_[y].grad.v[i] += b * go.v[i];
        };
        return id;
    }

    /// Mean squared error between two same-shape tensors; scalar output [1].
    int mse(int a, int b) {
        const Tensor& av = nodes_[a].value;
        const Tensor& bv = nodes_[b].value;
        if (!av.same_shape(bv)) throw ShapeError("mse: shapes differ");
        double acc = 0.0;
        for (std::size_t i = 0; i < av.v.size(); ++i) {
            const double d = av.v[i] - bv.v[i];
            acc += d * d;
        }
        const double inv = 1.0 / static_cast<double>(av.v.size());
        Tensor out({1});
        out.v[0] = acc * inv;
        const int id = push(std::move(out), any_rg({a, b}), {a, b});
        nodes_[id].back = [=](Graph& g) {
            const double go = g.nodes_[id].grad.v[0];
            const Tensor& x = g.nodes_[a].value;
            const Tensor& y = g.nodes_[b].value;
            const double c = 2.0 * inv * go;
            if (g.nodes_[a].rg)
                for (std::size_t i = 0; i < x.v.size(); ++i)
                    g.nodes_[a].grad.v[i] += c * (x.v[i] - y.v[i]);
            if (g.nodes_[b].rg)
                for (std::size_t i = 0; i < x.v.size(); ++i)
                    g.nodes_[b].grad.v[i] -= c * (x.v[i] - y.v[i]);
        };
        return id;
    }

    /// Seeds d(loss)/d(loss) = 1 and accumulates into every requires-grad leaf.
    void backward(int loss) {
        for (Node& n : nodes_)
            if (n.rg && n.grad.v.empty()) n.grad = Tensor(n.value.shape);
        nodes_[loss].grad.v.assign(nodes_[loss].value.size(), 0.0);
        nodes_[loss].grad.v[0] = 1.0;
        for (int id = loss; id >= 0; --id)
            if (nodes_[id].rg && nodes_[id].back) nodes_[id].back(*this);
    }

    std::size_t node_count() const { return nodes_.size(); }

    /// Bytes held by all node values and gradients; the per-iteration state
    /// footprint of whatever was recorded on this graph.
    std::size_t allocated_bytes() const {
        std::size_t total = 0;
        for (const Node& n : nodes_) total += (n.value.v.size() + n.grad.v.size()) * sizeof(double);
        return total;
    }

private:
    struct Node {
        Tensor value;
        Tensor grad;
        bool rg = false;
        std::function<void(Graph&)> back;
    };

    std::vector<Node> nodes_;

    bool any_rg(std::initializer_list<int> ids) const {
        for (int i : ids)
            if (nodes_[i].rg) return true;
        return false;
    }

    int push(Tensor value, bool rg, std::initializer_list<int>) {
        Node n;
        n.value = std::move(value);
        n.rg = rg;
        nodes_.push_back(std::move(n));
        return static_cast<int>(nodes_.size()) - 1;
    }

    // ------------------------------------------------------------ kernels

    static void mm(const double* a, const double* b, double* out, int m, int k, int n) {
        for (int i = 0; i < m; ++i) {
            double* o = out + static_cast<std::size_t>(i) * n;
            for (int kk = 0; kk < k; ++kk) {
                const double av = a[static_cast<std::size_t>(i) * k + kk];
                const double* br = b + static_cast<std::size_t>(kk) * n;
                for (int j = 0; j < n; ++j) o[j] += av * br[j];
            }
        }
    }

    // out[m,n] += a[m,k] * b[n,k]^T
    static void mm_nt(const double* a, const double* b, double* out, int m, int k, int n) {
        for (int i = 0; i < m; ++i)
            for (int j = 0; j < n; ++j) {
                double acc = 0.0;
                const double* ar = a + static_cast<std::size_t>(i) * k;
                const double* br = b + static_cast<std::size_t>(j) * k;
                for (int kk = 0; kk < k; ++kk) acc += ar[kk] * br[kk];
                out[static_cast<std::size_t>(i) * n + j] += acc;
            }
    }

    // out[m,n] += a[k,m]^T * b[k,n]
    static void mm_tn(const double* a, const double* b, double* out, int m, int k, int n) {
        for (int kk = 0; kk < k; ++kk) {
            const double* ar = a + static_cast<std::size_t>(kk) * m;
            const double* br = b + static_cast<std::size_t>(kk) * n;
            for (int i = 0; i < m; ++i) {
                const double av = ar[i];
                double* o = out + static_cast<std::size_t>(i) * n;
                for (int j = 0; j < n; ++j) o[j] += av * br[j];
            }
        }
    }

    static void conv3x3_fwd(const Tensor& x, const Tensor& w, const Tensor& b, int stride,
                            Tensor& out) {
        const int cin = x.shape[0], h = x.shape[1], wid = x.shape[2];
        const int cout = out.shape[0], oh = out.shape[1], ow = out.shape[2];
        for (int oc = 0; oc < cout; ++oc) {
            double* op = out.data() + static_cast<std::size_t>(oc) * oh * ow;
            const double bias = b.v[oc];
            for (int i = 0; i < oh * ow; ++i) op[i] = bias;
            for (int ic = 0; ic < cin; ++ic) {
                const double* xp = x.data() + static_cast<std::size_t>(ic) * h * wid;
                const double* wp = w.data() + (static_cast<std::size_t>(oc) * cin + ic) * 9;
                for (int oy = 0; oy < oh; ++oy) {
                    const int iy0 = oy * stride - 1;
                    double* orow = op + static_cast<std::size_t>(oy) * ow;
                    for (int ky = 0; ky < 3; ++ky) {
                        const int iy = iy0 + ky;
                        if (iy < 0 || iy >= h) continue;
                        const double* xrow = xp + static_cast<std::size_t>(iy) * wid;
                        const double w0 = wp[ky * 3], w1 = wp[ky * 3 + 1], w2 = wp[ky * 3 + 2];
                        for (int ox = 0; ox < ow; ++ox) {
                            const int ix0 = ox * stride - 1;
                            double acc = 0.0;
                            if (ix0 >= 0) acc += w0 * xrow[ix0];
                            if (ix0 + 1 < wid) acc += w1 * xrow[ix0 + 1];
                            if (ix0 + 2 < wid) acc += w2 * xrow[ix0 + 2];
                            orow[ox] += acc;
                        }
                    }
                }
            }
        }
    }

    static void conv3x3_bwd_input(const Tensor& w, const Tensor& go, int stride, Tensor& gx) {
        const int cout = w.shape[0], cin = w.shape[1];
        const int oh = go.shape[1], ow = go.shape[2];
        const int h = gx.shape[1], wid = gx.shape[2];
        for (int oc = 0; oc < cout; ++oc) {
            const double* gop = go.data() + static_cast<std::size_t>(oc) * oh * ow;
            for (int ic = 0; ic < cin; ++ic) {
                double* gxp = gx.data() + static_cast<std::size_t>(ic) * h * wid;
                const double* wp = w.data() + (static_cast<std::size_t>(oc) * cin + ic) * 9;
                for (int oy = 0; oy < oh; ++oy) {
                    const int iy0 = oy * stride - 1;
                    const double* gorow = gop + static_cast<std::size_t>(oy) * ow;
                    for (int ky = 0; ky < 3; ++ky) {
                        const int iy = iy0 + ky;
                        if (iy < 0 || iy >= h) continue;
                        double* gxrow = gxp + static_cast<std::size_t>(iy) * wid;
                        for (int kx = 0; kx < 3; ++kx) {
                            const double wv = wp[ky * 3 + kx];
                            if (wv == 0.0) continue;
                            for (int ox = 0; ox < ow; ++ox) {
                                const int ix = ox * stride - 1 + kx;
                                if (ix < 0 || ix >= wid) continue;
                                gxrow[ix] += wv * gorow[ox];
                            }
                        }
                    }
                }
            }
        }
    }

    static void conv3x3_bwd_weight(const Tensor& x, const Tensor& go, int stride, Tensor& gw) {
        const int cin = x.shape[0], h = x.shape[1], wid = x.shape[2];
        const int cout = go.shape[0], oh = go.shape[1], ow = go.shape[2];
        for (int oc = 0; oc < cout; ++oc) {
            const double* gop = go.data() + static_cast<std::size_t>(oc) * oh * ow;
            for (int ic = 0; ic < cin; ++ic) {
                const double* xp = x.data() + static_cast<std::size_t>(ic) * h * wid;
                double* gwp = gw.data() + (static_cast<std::size_t>(oc) * cin + ic) * 9;
                for (int ky = 0; ky < 3; ++ky)
                    for (int kx = 0; kx < 3; ++kx) {
                        double acc = 0.0;
                        for (int oy = 0; oy < oh; ++oy) {
                            const int iy = oy * stride - 1 + ky;
                            if (iy < 0 || iy >= h) continue;
                            const double* xrow = xp + static_cast<std::size_t>(iy) * wid;
                            const double* gorow = gop + static_cast<std::size_t>(oy) * ow;
                            for (int ox = 0; ox < ow; ++ox) {
                                const int ix = ox * stride - 1 + kx;
                                if (ix < 0 || ix >= wid) continue;
                                acc += xrow[ix] * gorow[ox];
                            }
                        }
                        gwp[ky * 3 + kx] += acc;
                    }
            }
        }
    }
};

}  // namespace shimforge::ad
