#include "defront/autodiff.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace defront::ad {

namespace {

thread_local int g_no_grad_depth = 0;

using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<MatRM>;
using CMapRM = Eigen::Map<const MatRM>;

Var make_op(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backprop) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    bool req = false;
    if (g_no_grad_depth == 0) {
        for (const auto& v : inputs)
            if (v.defined() && v.requires_grad()) req = true;
    }
    n->requires_grad = req;
    if (req) {
        for (const auto& v : inputs) n->parents.push_back(v.node());
        n->backprop = std::move(backprop);
    }
    return Var::wrap(n);
}

void check_same_shape(const Var& a, const Var& b, const char* op) {
    if (!a.value().same_shape(b.value()))
        throw ShapeMismatch(std::string(op) + ": " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

}  // namespace

void Node::ensure_grad() {
    if (!has_grad) {
        grad = Tensor::zeros(value.shape());
        has_grad = true;
    }
}

void Node::accumulate(const Tensor& g) {
    ensure_grad();
    grad.add_(g);
}

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<Node>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
}

Var Var::wrap(NodePtr n) {
    Var v;
    v.node_ = std::move(n);
    return v;
}

void Var::zero_grad() {
    if (node_) {
        node_->has_grad = false;
        node_->grad = Tensor();
    }
}

NoGradGuard::NoGradGuard() { ++g_no_grad_depth; }
NoGradGuard::~NoGradGuard() { --g_no_grad_depth; }
bool grad_enabled() { return g_no_grad_depth == 0; }

Var constant(Tensor t) { return Var(std::move(t), false); }

void backward(const Var& root) {
    if (!root.defined() || root.value().size() != 1)
        throw ShapeMismatch("backward requires a defined scalar root");
    if (!root.requires_grad()) return;

    // iterative post-order DFS for a topological order
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, size_t>> stack;
    stack.push_back({root.node().get(), 0});
    visited.insert(root.node().get());
    while (!stack.empty()) {
        auto& [n, idx] = stack.back();
        if (idx < n->parents.size()) {
            Node* p = n->parents[idx++].get();
            if (p && p->requires_grad && !visited.count(p)) {
                visited.insert(p);
                stack.push_back({p, 0});
            }
        } else {
            order.push_back(n);
            stack.pop_back();
        }
    }

    root.node()->accumulate(Tensor::full({1}, 1.0));
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (n->backprop && n->has_grad) n->backprop(*n);
    }
}

// ---------------------------------------------------------------- elementwise

Var add(const Var& a, const Var& b) {
    check_same_shape(a, b, "add");
    Tensor out = a.value();
    out.add_(b.value());
    return make_op(std::move(out), {a, b}, [](Node& n) {
        if (n.parents[0]->requires_grad) n.parents[0]->accumulate(n.grad);
        if (n.parents[1]->requires_grad) n.parents[1]->accumulate(n.grad);
    });
}

Var sub(const Var& a, const Var& b) {
    check_same_shape(a, b, "sub");
    Tensor out = a.value();
    const double* bd = b.value().data();
    for (long i = 0; i < out.size(); ++i) out[i] -= bd[i];
    return make_op(std::move(out), {a, b}, [](Node& n) {
        if (n.parents[0]->requires_grad) n.parents[0]->accumulate(n.grad);
        if (n.parents[1]->requires_grad) {
            Tensor g = n.grad;
            g.scale_(-1.0);
            n.parents[1]->accumulate(g);
        }
    });
}

Var mul(const Var& a, const Var& b) {
    check_same_shape(a, b, "mul");
    Tensor out = a.value();
    const double* bd = b.value().data();
    for (long i = 0; i < out.size(); ++i) out[i] *= bd[i];
    return make_op(std::move(out), {a, b}, [](Node& n) {
        const Tensor& av = n.parents[0]->value;
        const Tensor& bv = n.parents[1]->value;
        if (n.parents[0]->requires_grad) {
            Tensor g = n.grad;
            for (long i = 0; i < g.size(); ++i) g[i] *= bv[i];
            n.parents[0]->accumulate(g);
        }
        if (n.parents[1]->requires_grad) {
            Tensor g = n.grad;
            for (long i = 0; i < g.size(); ++i) g[i] *= av[i];
            n.parents[1]->accumulate(g);
        }
    });
}

Var scale(const Var& a, double s) {
    Tensor out = a.value();
    out.scale_(s);
    return make_op(std::move(out), {a}, [s](Node& n) {
        Tensor g = n.grad;
        g.scale_(s);
        n.parents[0]->accumulate(g);
    });
}

Var add_scalar(const Var& a, double s) {
    Tensor out = a.value();
    for (long i = 0; i < out.size(); ++i) out[i] += s;
    return make_op(std::move(out), {a}, [](Node& n) { n.parents[0]->accumulate(n.grad); });
}

Var abs_(const Var& a) {
    Tensor out = a.value();
    for (long i = 0; i < out.size(); ++i) out[i] = std::fabs(out[i]);
    return make_op(std::move(out), {a}, [](Node& n) {
        const Tensor& x = n.parents[0]->value;
        Tensor g = n.grad;
        for (long i = 0; i < g.size(); ++i) g[i] *= (x[i] > 0 ? 1.0 : (x[i] < 0 ? -1.0 : 0.0));
        n.parents[0]->accumulate(g);
    });
}

Var log_(const Var& a) {
    Tensor out = a.value();
    for (long i = 0; i < out.size(); ++i) out[i] = std::log(out[i]);
    return make_op(std::move(out), {a}, [](Node& n) {
        const Tensor& x = n.parents[0]->value;
        Tensor g = n.grad;
        for (long i = 0; i < g.size(); ++i) g[i] /= x[i];
        n.parents[0]->accumulate(g);
    });
}

Var clamp(const Var& a, double lo, double hi) {
    Tensor out = a.value();
    for (long i = 0; i < out.size(); ++i) out[i] = std::min(std::max(out[i], lo), hi);
    return make_op(std::move(out), {a}, [lo, hi](Node& n) {
        const Tensor& x = n.parents[0]->value;
        Tensor g = n.grad;
        for (long i = 0; i < g.size(); ++i)
            if (x[i] < lo || x[i] > hi) g[i] = 0.0;
        n.parents[0]->accumulate(g);
    });
}

Var relu(const Var& a) {
    Tensor out = a.value();
    for (long i = 0; i < out.size(); ++i) out[i] = std::max(out[i], 0.0);
    return make_op(std::move(out), {a}, [](Node& n) {
        const Tensor& x = n.parents[0]->value;
        Tensor g = n.grad;
        for (long i = 0; i < g.size(); ++i)
            if (x[i] <= 0) g[i] = 0.0;
        n.parents[0]->accumulate(g);
    });
}

Var leaky_relu(const Var& a, double slope) {
    Tensor out = a.value();
    for (long i = 0; i < out.size(); ++i)
        if (out[i] < 0) out[i] *= slope;
    return make_op(std::move(out), {a}, [slope](Node& n) {
        const Tensor& x = n.parents[0]->value;
        Tensor g = n.grad;
        for (long i = 0; i < g.size(); ++i)
            if (x[i] < 0) g[i] *= slope;
        n.parents[0]->accumulate(g);
    });
}

Var tanh_(const Var& a) {
    Tensor out = a.value();
    for (long i = 0; i < out.size(); ++i) out[i] = std::tanh(out[i]);
    Tensor saved = out;
    return make_op(std::move(out), {a}, [saved](Node& n) {
        Tensor g = n.grad;
        for (long i = 0; i < g.size(); ++i) g[i] *= 1.0 - saved[i] * saved[i];
        n.parents[0]->accumulate(g);
    });
}

Var sigmoid_(const Var& a) {
    Tensor out = a.value();
    for (long i = 0; i < out.size(); ++i) out[i] = 1.0 / (1.0 + std::exp(-out[i]));
    Tensor saved = out;
    return make_op(std::move(out), {a}, [saved](Node& n) {
        Tensor g = n.grad;
        for (long i = 0; i < g.size(); ++i) g[i] *= saved[i] * (1.0 - saved[i]);
        n.parents[0]->accumulate(g);
    });
}

// ---------------------------------------------------------------- reductions

Var sum_all(const Var& a) {
    double s = 0;
    for (long i = 0; i < a.value().size(); ++i) s += a.value()[i];
    return make_op(Tensor::scalar(s), {a}, [](Node& n) {
        Tensor g(n.parents[0]->value.shape(), n.grad[0]);
        n.parents[0]->accumulate(g);
    });
}

Var mean_all(const Var& a) {
    long cnt = a.value().size();
    double s = 0;
    for (long i = 0; i < cnt; ++i) s += a.value()[i];
    return make_op(Tensor::scalar(s / static_cast<double>(cnt)), {a}, [cnt](Node& n) {
        Tensor g(n.parents[0]->value.shape(), n.grad[0] / static_cast<double>(cnt));
        n.parents[0]->accumulate(g);
    });
}

// ---------------------------------------------------------------- structure

Var detach(const Var& a) { return Var(a.value(), false); }

Var reshape(const Var& a, std::vector<long> shape) {
    Tensor out = a.value().reshaped(shape);
    return make_op(std::move(out), {a}, [](Node& n) {
        n.parents[0]->accumulate(n.grad.reshaped(n.parents[0]->value.shape()));
    });
}

Var concat_channels(const std::vector<Var>& xs) {
    if (xs.empty()) throw ShapeMismatch("concat_channels: empty input");
    long N = xs[0].value().dim(0), H = xs[0].value().dim(2), W = xs[0].value().dim(3);
    long Ctot = 0;
    for (const auto& x : xs) {
        if (x.value().ndim() != 4 || x.value().dim(0) != N || x.value().dim(2) != H || x.value().dim(3) != W)
            throw ShapeMismatch("concat_channels: incompatible shapes");
        Ctot += x.value().dim(1);
    }
    Tensor out({N, Ctot, H, W});
    long plane = H * W;
    long coff = 0;
    for (const auto& x : xs) {
        long C = x.value().dim(1);
        for (long n = 0; n < N; ++n)
            std::copy(x.value().data() + n * C * plane,
                      x.value().data() + (n + 1) * C * plane,
                      out.data() + (n * Ctot + coff) * plane);
        coff += C;
    }
    std::vector<long> channels;
    for (const auto& x : xs) channels.push_back(x.value().dim(1));
    return make_op(std::move(out), xs, [channels, N, plane, Ctot](Node& n) {
        long coff = 0;
        for (size_t k = 0; k < channels.size(); ++k) {
            long C = channels[k];
            if (n.parents[k]->requires_grad) {
                Tensor g({N, C, n.parents[k]->value.dim(2), n.parents[k]->value.dim(3)});
                for (long b = 0; b < N; ++b)
                    std::copy(n.grad.data() + (b * Ctot + coff) * plane,
                              n.grad.data() + (b * Ctot + coff + C) * plane,
                              g.data() + b * C * plane);
                n.parents[k]->accumulate(g);
            }
            coff += C;
        }
    });
}

// ---------------------------------------------------------------- linear

Var linear(const Var& x, const Var& w, const Var& b) {
    if (x.value().ndim() != 2 || w.value().ndim() != 2 || x.value().dim(1) != w.value().dim(1))
        throw ShapeMismatch("linear: x " + shape_str(x.shape()) + " w " + shape_str(w.shape()));
    long N = x.value().dim(0), K = x.value().dim(1), D = w.value().dim(0);
    Tensor out({N, D});
    {
        CMapRM xm(x.value().data(), N, K);
        CMapRM wm(w.value().data(), D, K);
        MapRM om(out.data(), N, D);
        om.noalias() = xm * wm.transpose();
    }
    if (b.defined()) {
        if (b.value().size() != D) throw ShapeMismatch("linear: bias size");
        for (long n = 0; n < N; ++n)
            for (long d = 0; d < D; ++d) out.at2(n, d) += b.value()[d];
    }
    std::vector<Var> inputs = {x, w};
    if (b.defined()) inputs.push_back(b);
    return make_op(std::move(out), std::move(inputs), [N, K, D](Node& n) {
        CMapRM gm(n.grad.data(), N, D);
        CMapRM xm(n.parents[0]->value.data(), N, K);
        CMapRM wm(n.parents[1]->value.data(), D, K);
        if (n.parents[0]->requires_grad) {
            Tensor gx({N, K});
            MapRM gxm(gx.data(), N, K);
            gxm.noalias() = gm * wm;
            n.parents[0]->accumulate(gx);
        }
        if (n.parents[1]->requires_grad) {
            Tensor gw({D, K});
            MapRM gwm(gw.data(), D, K);
            gwm.noalias() = gm.transpose() * xm;
            n.parents[1]->accumulate(gw);
        }
        if (n.parents.size() > 2 && n.parents[2]->requires_grad) {
            Tensor gb({D});
            for (long i = 0; i < N; ++i)
                for (long d = 0; d < D; ++d) gb[d] += n.grad.at2(i, d);
            n.parents[2]->accumulate(gb);
        }
    });
}

// ---------------------------------------------------------------- conv2d

namespace {

// im2col for one sample: out is [Ci*kh*kw, Ho*Wo]
void im2col(const double* x, long Ci, long H, long W, long kh, long kw,
            int stride, int pad, long Ho, long Wo, double* col) {
    for (long c = 0; c < Ci; ++c) {
        for (long ky = 0; ky < kh; ++ky) {
            for (long kx = 0; kx < kw; ++kx) {
                long row = (c * kh + ky) * kw + kx;
                double* dst = col + row * Ho * Wo;
                for (long oy = 0; oy < Ho; ++oy) {
                    long iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= H) {
                        std::fill(dst + oy * Wo, dst + (oy + 1) * Wo, 0.0);
                        continue;
                    }
                    const double* src = x + (c * H + iy) * W;
                    for (long ox = 0; ox < Wo; ++ox) {
                        long ix = ox * stride - pad + kx;
                        dst[oy * Wo + ox] = (ix >= 0 && ix < W) ? src[ix] : 0.0;
                    }
                }
            }
        }
    }
}

void col2im(const double* col, long Ci, long H, long W, long kh, long kw,
            int stride, int pad, long Ho, long Wo, double* x) {
    for (long c = 0; c < Ci; ++c) {
        for (long ky = 0; ky < kh; ++ky) {
            for (long kx = 0; kx < kw; ++kx) {
                long row = (c * kh + ky) * kw + kx;
                const double* src = col + row * Ho * Wo;
                for (long oy = 0; oy < Ho; ++oy) {
                    long iy = oy * stride - pad + ky;
                    if (iy < 0 || iy >= H) continue;
                    double* dst = x + (c * H + iy) * W;
                    for (long ox = 0; ox < Wo; ++ox) {
                        long ix = ox * stride - pad + kx;
                        if (ix >= 0 && ix < W) dst[ix] += src[oy * Wo + ox];
                    }
                }
            }
        }
    }
}

}  // namespace

Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad) {
    if (x.value().ndim() != 4 || w.value().ndim() != 4 || x.value().dim(1) != w.value().dim(1))
        throw ShapeMismatch("conv2d: x " + shape_str(x.shape()) + " w " + shape_str(w.shape()));
    long N = x.value().dim(0), Ci = x.value().dim(1), H = x.value().dim(2), W = x.value().dim(3);
    long Co = w.value().dim(0), kh = w.value().dim(2), kw = w.value().dim(3);
    long Ho = (H + 2 * pad - kh) / stride + 1;
    long Wo = (W + 2 * pad - kw) / stride + 1;
    if (Ho <= 0 || Wo <= 0) throw ShapeMismatch("conv2d: output would be empty");

    Tensor out({N, Co, Ho, Wo});
    long ckk = Ci * kh * kw;
    std::vector<double> col(static_cast<size_t>(ckk * Ho * Wo));
    CMapRM wm(w.value().data(), Co, ckk);
    for (long n = 0; n < N; ++n) {
        im2col(x.value().data() + n * Ci * H * W, Ci, H, W, kh, kw, stride, pad, Ho, Wo, col.data());
        CMapRM cm(col.data(), ckk, Ho * Wo);
        MapRM om(out.data() + n * Co * Ho * Wo, Co, Ho * Wo);
        om.noalias() = wm * cm;
    }
    if (b.defined()) {
        if (b.value().size() != Co) throw ShapeMismatch("conv2d: bias size");
        for (long n = 0; n < N; ++n)
            for (long c = 0; c < Co; ++c) {
                double bv = b.value()[c];
                double* p = out.data() + (n * Co + c) * Ho * Wo;
                for (long i = 0; i < Ho * Wo; ++i) p[i] += bv;
            }
    }

    std::vector<Var> inputs = {x, w};
    if (b.defined()) inputs.push_back(b);
    return make_op(std::move(out), std::move(inputs), [=](Node& n) {
        const Tensor& xv = n.parents[0]->value;
        const Tensor& wv = n.parents[1]->value;
        bool need_gx = n.parents[0]->requires_grad;
        bool need_gw = n.parents[1]->requires_grad;
        Tensor gx, gw;
        if (need_gx) gx = Tensor::zeros(xv.shape());
        if (need_gw) gw = Tensor::zeros(wv.shape());
        std::vector<double> col(static_cast<size_t>(ckk * Ho * Wo));
        std::vector<double> gcol(static_cast<size_t>(ckk * Ho * Wo));
        CMapRM wm2(wv.data(), Co, ckk);
        for (long i = 0; i < N; ++i) {
            CMapRM gm(n.grad.data() + i * Co * Ho * Wo, Co, Ho * Wo);
            if (need_gw) {
                im2col(xv.data() + i * Ci * H * W, Ci, H, W, kh, kw, stride, pad, Ho, Wo, col.data());
                CMapRM cm(col.data(), ckk, Ho * Wo);
                MapRM gwm(gw.data(), Co, ckk);
                gwm.noalias() += gm * cm.transpose();
            }
            if (need_gx) {
                MapRM gcm(gcol.data(), ckk, Ho * Wo);
                gcm.noalias() = wm2.transpose() * gm;
                col2im(gcol.data(), Ci, H, W, kh, kw, stride, pad, Ho, Wo, gx.data() + i * Ci * H * W);
            }
        }
        if (need_gx) n.parents[0]->accumulate(gx);
        if (need_gw) n.parents[1]->accumulate(gw);
        if (n.parents.size() > 2 && n.parents[2]->requires_grad) {
            Tensor gb({Co});
            for (long i = 0; i < N; ++i)
                for (long c = 0; c < Co; ++c) {
                    const double* p = n.grad.data() + (i * Co + c) * Ho * Wo;
                    for (long k = 0; k < Ho * Wo; ++k) gb[c] += p[k];
                }
            n.parents[2]->accumulate(gb);
        }
    });
}

// ---------------------------------------------------------------- pooling / resize

Var upsample_nearest2(const Var& x) {
    long N = x.value().dim(0), C = x.value().dim(1), H = x.value().dim(2), W = x.value().dim(3);
    Tensor out({N, C, 2 * H, 2 * W});
    for (long n = 0; n < N; ++n)
        for (long c = 0; c < C; ++c)
            for (long h = 0; h < 2 * H; ++h)
                for (long w = 0; w < 2 * W; ++w)
                    out.at4(n, c, h, w) = x.value().at4(n, c, h / 2, w / 2);
    return make_op(std::move(out), {x}, [N, C, H, W](Node& n) {
        Tensor g({N, C, H, W});
        for (long b = 0; b < N; ++b)
            for (long c = 0; c < C; ++c)
                for (long h = 0; h < 2 * H; ++h)
                    for (long w = 0; w < 2 * W; ++w)
                        g.at4(b, c, h / 2, w / 2) += n.grad.at4(b, c, h, w);
        n.parents[0]->accumulate(g);
    });
}

Var avg_pool2(const Var& x) {
    long N = x.value().dim(0), C = x.value().dim(1), H = x.value().dim(2), W = x.value().dim(3);
    if (H % 2 || W % 2) throw ShapeMismatch("avg_pool2: odd spatial size");
    Tensor out({N, C, H / 2, W / 2});
    for (long n = 0; n < N; ++n)
        for (long c = 0; c < C; ++c)
            for (long h = 0; h < H / 2; ++h)
                for (long w = 0; w < W / 2; ++w)
                    out.at4(n, c, h, w) = 0.25 * (x.value().at4(n, c, 2 * h, 2 * w) +
                                                  x.value().at4(n, c, 2 * h, 2 * w + 1) +
                                                  x.value().at4(n, c, 2 * h + 1, 2 * w) +
                                                  x.value().at4(n, c, 2 * h + 1, 2 * w + 1));
    return make_op(std::move(out), {x}, [N, C, H, W](Node& n) {
        Tensor g({N, C, H, W});
        for (long b = 0; b < N; ++b)
            for (long c = 0; c < C; ++c)
                for (long h = 0; h < H; ++h)
                    for (long w = 0; w < W; ++w)
                        g.at4(b, c, h, w) = 0.25 * n.grad.at4(b, c, h / 2, w / 2);
        n.parents[0]->accumulate(g);
    });
}

Var global_avg_pool(const Var& x) {
    long N = x.value().dim(0), C = x.value().dim(1), H = x.value().dim(2), W = x.value().dim(3);
    Tensor out({N, C});
    double inv = 1.0 / static_cast<double>(H * W);
    for (long n = 0; n < N; ++n)
        for (long c = 0; c < C; ++c) {
            const double* p = x.value().data() + (n * C + c) * H * W;
            double s = 0;
            for (long i = 0; i < H * W; ++i) s += p[i];
            out.at2(n, c) = s * inv;
        }
    return make_op(std::move(out), {x}, [N, C, H, W, inv](Node& n) {
        Tensor g({N, C, H, W});
        for (long b = 0; b < N; ++b)
            for (long c = 0; c < C; ++c) {
                double gv = n.grad.at2(b, c) * inv;
                double* p = g.data() + (b * C + c) * H * W;
                for (long i = 0; i < H * W; ++i) p[i] = gv;
            }
        n.parents[0]->accumulate(g);
    });
}

// ---------------------------------------------------------------- instance norm

Var instance_norm(const Var& x, const Var& gamma, const Var& beta, double eps) {
    long N = x.value().dim(0), C = x.value().dim(1), H = x.value().dim(2), W = x.value().dim(3);
    if (gamma.value().size() != C || beta.value().size() != C)
        throw ShapeMismatch("instance_norm: affine parameter size");
    long plane = H * W;
    Tensor out({N, C, H, W});
    Tensor mean({N, C}), rstd({N, C});
    for (long n = 0; n < N; ++n)
        for (long c = 0; c < C; ++c) {
            const double* p = x.value().data() + (n * C + c) * plane;
            double mu = 0;
            for (long i = 0; i < plane; ++i) mu += p[i];
            mu /= static_cast<double>(plane);
            double var = 0;
            for (long i = 0; i < plane; ++i) var += (p[i] - mu) * (p[i] - mu);
            var /= static_cast<double>(plane);
            double rs = 1.0 / std::sqrt(var + eps);
            mean.at2(n, c) = mu;
            rstd.at2(n, c) = rs;
            double g = gamma.value()[c], b = beta.value()[c];
            double* q = out.data() + (n * C + c) * plane;
            for (long i = 0; i < plane; ++i) q[i] = (p[i] - mu) * rs * g + b;
        }
    return make_op(std::move(out), {x, gamma, beta}, [N, C, plane, mean, rstd](Node& n) {
        const Tensor& xv = n.parents[0]->value;
        const Tensor& gv = n.parents[1]->value;
        bool need_gx = n.parents[0]->requires_grad;
        Tensor gx, ggamma({C}), gbeta({C});
        if (need_gx) gx = Tensor::zeros(xv.shape());
        for (long b = 0; b < N; ++b)
            for (long c = 0; c < C; ++c) {
                const double* xp = xv.data() + (b * C + c) * plane;
                const double* gp = n.grad.data() + (b * C + c) * plane;
                double mu = mean.at2(b, c), rs = rstd.at2(b, c);
                double sum_g = 0, sum_gxhat = 0;
                for (long i = 0; i < plane; ++i) {
                    double xhat = (xp[i] - mu) * rs;
                    sum_g += gp[i];
                    sum_gxhat += gp[i] * xhat;
                }
                ggamma[c] += sum_gxhat;
                gbeta[c] += sum_g;
                if (need_gx) {
                    double inv = 1.0 / static_cast<double>(plane);
                    double gam = gv[c];
                    double* gxp = gx.data() + (b * C + c) * plane;
                    for (long i = 0; i < plane; ++i) {
                        double xhat = (xp[i] - mu) * rs;
                        gxp[i] = gam * rs * (gp[i] - sum_g * inv - xhat * sum_gxhat * inv);
                    }
                }
            }
        if (need_gx) n.parents[0]->accumulate(gx);
        if (n.parents[1]->requires_grad) n.parents[1]->accumulate(ggamma);
        if (n.parents[2]->requires_grad) n.parents[2]->accumulate(gbeta);
    });
}

// ---------------------------------------------------------------- warp

Var warp_bilinear(const Var& img, const Var& flow) {
    long N = img.value().dim(0), C = img.value().dim(1), H = img.value().dim(2), W = img.value().dim(3);
    if (flow.value().ndim() != 4 || flow.value().dim(0) != N || flow.value().dim(1) != 2 ||
        flow.value().dim(2) != H || flow.value().dim(3) != W)
        throw ShapeMismatch("warp_bilinear: flow " + shape_str(flow.shape()) +
                            " does not match image " + shape_str(img.shape()));
    Tensor out({N, C, H, W});
    const Tensor& I = img.value();
    const Tensor& F = flow.value();
    for (long n = 0; n < N; ++n)
        for (long y = 0; y < H; ++y)
            for (long x = 0; x < W; ++x) {
                double sx = static_cast<double>(x) + F.at4(n, 0, y, x);
                double sy = static_cast<double>(y) + F.at4(n, 1, y, x);
                sx = std::min(std::max(sx, 0.0), static_cast<double>(W - 1));
                sy = std::min(std::max(sy, 0.0), static_cast<double>(H - 1));
                long x0 = static_cast<long>(std::floor(sx)), y0 = static_cast<long>(std::floor(sy));
                long x1 = std::min(x0 + 1, W - 1), y1 = std::min(y0 + 1, H - 1);
                double fx = sx - static_cast<double>(x0), fy = sy - static_cast<double>(y0);
                for (long c = 0; c < C; ++c) {
                    double v = (1 - fy) * ((1 - fx) * I.at4(n, c, y0, x0) + fx * I.at4(n, c, y0, x1)) +
                               fy * ((1 - fx) * I.at4(n, c, y1, x0) + fx * I.at4(n, c, y1, x1));
                    out.at4(n, c, y, x) = v;
                }
            }
    return make_op(std::move(out), {img, flow}, [N, C, H, W](Node& n) {
        const Tensor& I = n.parents[0]->value;
        const Tensor& F = n.parents[1]->value;
        bool need_gi = n.parents[0]->requires_grad;
        bool need_gf = n.parents[1]->requires_grad;
        Tensor gi, gf;
        if (need_gi) gi = Tensor::zeros(I.shape());
        if (need_gf) gf = Tensor::zeros(F.shape());
        for (long b = 0; b < N; ++b)
            for (long y = 0; y < H; ++y)
                for (long x = 0; x < W; ++x) {
                    double rx = static_cast<double>(x) + F.at4(b, 0, y, x);
                    double ry = static_cast<double>(y) + F.at4(b, 1, y, x);
                    bool in_x = rx > 0.0 && rx < static_cast<double>(W - 1);
                    bool in_y = ry > 0.0 && ry < static_cast<double>(H - 1);
                    double sx = std::min(std::max(rx, 0.0), static_cast<double>(W - 1));
                    double sy = std::min(std::max(ry, 0.0), static_cast<double>(H - 1));
                    long x0 = static_cast<long>(std::floor(sx)), y0 = static_cast<long>(std::floor(sy));
                    long x1 = std::min(x0 + 1, W - 1), y1 = std::min(y0 + 1, H - 1);
                    double fx = sx - static_cast<double>(x0), fy = sy - static_cast<double>(y0);
                    double gdx = 0, gdy = 0;
                    for (long c = 0; c < C; ++c) {
                        double g = n.grad.at4(b, c, y, x);
                        if (need_gi) {
                            gi.at4(b, c, y0, x0) += g * (1 - fy) * (1 - fx);
                            gi.at4(b, c, y0, x1) += g * (1 - fy) * fx;
                            gi.at4(b, c, y1, x0) += g * fy * (1 - fx);
                            gi.at4(b, c, y1, x1) += g * fy * fx;
                        }
                        if (need_gf) {
                            gdx += g * ((1 - fy) * (I.at4(b, c, y0, x1) - I.at4(b, c, y0, x0)) +
                                        fy * (I.at4(b, c, y1, x1) - I.at4(b, c, y1, x0)));
                            gdy += g * ((1 - fx) * (I.at4(b, c, y1, x0) - I.at4(b, c, y0, x0)) +
                                        fx * (I.at4(b, c, y1, x1) - I.at4(b, c, y0, x1)));
                        }
                    }
                    if (need_gf) {
                        gf.at4(b, 0, y, x) = in_x ? gdx : 0.0;
                        gf.at4(b, 1, y, x) = in_y ? gdy : 0.0;
                    }
                }
        if (need_gi) n.parents[0]->accumulate(gi);
        if (need_gf) n.parents[1]->accumulate(gf);
    });
}

// ---------------------------------------------------------------- composites with fused backward

Var first_diff_l1(const Var& x) {
    long N = x.value().dim(0), C = x.value().dim(1), H = x.value().dim(2), W = x.value().dim(3);
    long cnt = N * C * (H * (W - 1) + (H - 1) * W);
    if (cnt == 0) throw ShapeMismatch("first_diff_l1: degenerate shape");
    const Tensor& v = x.value();
    double s = 0;
    for (long n = 0; n < N; ++n)
        for (long c = 0; c < C; ++c)
            for (long h = 0; h < H; ++h)
                for (long w = 0; w < W; ++w) {
                    if (w + 1 < W) s += std::fabs(v.at4(n, c, h, w + 1) - v.at4(n, c, h, w));
                    if (h + 1 < H) s += std::fabs(v.at4(n, c, h + 1, w) - v.at4(n, c, h, w));
                }
    return make_op(Tensor::scalar(s / static_cast<double>(cnt)), {x}, [N, C, H, W, cnt](Node& n) {
        const Tensor& v = n.parents[0]->value;
        double g0 = n.grad[0] / static_cast<double>(cnt);
        Tensor g(v.shape());
        auto sgn = [](double d) { return d > 0 ? 1.0 : (d < 0 ? -1.0 : 0.0); };
        for (long b = 0; b < N; ++b)
            for (long c = 0; c < C; ++c)
                for (long h = 0; h < H; ++h)
                    for (long w = 0; w < W; ++w) {
                        if (w + 1 < W) {
                            double sg = sgn(v.at4(b, c, h, w + 1) - v.at4(b, c, h, w)) * g0;
                            g.at4(b, c, h, w + 1) += sg;
                            g.at4(b, c, h, w) -= sg;
                        }
                        if (h + 1 < H) {
                            double sg = sgn(v.at4(b, c, h + 1, w) - v.at4(b, c, h, w)) * g0;
                            g.at4(b, c, h + 1, w) += sg;
                            g.at4(b, c, h, w) -= sg;
                        }
                    }
        n.parents[0]->accumulate(g);
    });
}

Var l2_normalize_rows(const Var& x, double eps) {
    long N = x.value().dim(0), D = x.value().dim(1);
    Tensor out({N, D});
    Tensor norms({N});
    for (long n = 0; n < N; ++n) {
        double s = 0;
        for (long d = 0; d < D; ++d) s += x.value().at2(n, d) * x.value().at2(n, d);
        double r = std::sqrt(s + eps);
        norms[n] = r;
        for (long d = 0; d < D; ++d) out.at2(n, d) = x.value().at2(n, d) / r;
    }
    return make_op(std::move(out), {x}, [N, D, norms](Node& n) {
        const Tensor& xv = n.parents[0]->value;
        Tensor g({N, D});
        for (long b = 0; b < N; ++b) {
            double r = norms[b];
            double dot = 0;
            for (long d = 0; d < D; ++d) dot += xv.at2(b, d) * n.grad.at2(b, d);
            for (long d = 0; d < D; ++d)
                g.at2(b, d) = n.grad.at2(b, d) / r - xv.at2(b, d) * dot / (r * r * r);
        }
        n.parents[0]->accumulate(g);
    });
}

Var bce_mean(const Var& pred, const Var& target, double eps) {
    check_same_shape(pred, target, "bce_mean");
    long cnt = pred.value().size();
    double s = 0;
    for (long i = 0; i < cnt; ++i) {
        double p = std::min(std::max(pred.value()[i], eps), 1.0 - eps);
        double t = target.value()[i];
        s += -(t * std::log(p) + (1.0 - t) * std::log(1.0 - p));
    }
    return make_op(Tensor::scalar(s / static_cast<double>(cnt)), {pred, target}, [cnt, eps](Node& n) {
        const Tensor& pv = n.parents[0]->value;
        const Tensor& tv = n.parents[1]->value;
        double g0 = n.grad[0] / static_cast<double>(cnt);
        if (n.parents[0]->requires_grad) {
            Tensor g(pv.shape());
            for (long i = 0; i < cnt; ++i) {
                if (pv[i] < eps || pv[i] > 1.0 - eps) {
                    g[i] = 0.0;  // clamped region
                } else {
                    g[i] = g0 * (pv[i] - tv[i]) / (pv[i] * (1.0 - pv[i]));
                }
            }
            n.parents[0]->accumulate(g);
        }
        if (n.parents[1]->requires_grad) {
            Tensor g(tv.shape());
            for (long i = 0; i < cnt; ++i) {
                double p = std::min(std::max(pv[i], eps), 1.0 - eps);
                g[i] = g0 * (std::log(1.0 - p) - std::log(p));
            }
            n.parents[1]->accumulate(g);
        }
    });
}

Var margin_cos_logits(const Var& cosines, const std::vector<long>& labels, double s, double m) {
    long N = cosines.value().dim(0), K = cosines.value().dim(1);
    if (static_cast<long>(labels.size()) != N) throw ShapeMismatch("margin_cos_logits: label count");
    for (long lab : labels)
        if (lab < 0 || lab >= K) throw LabelOutOfRange("label " + std::to_string(lab) + " out of range");
    const double kClamp = 1.0 - 1e-7;
    double cm = std::cos(m), sm = std::sin(m);
    Tensor out = cosines.value();
    out.scale_(s);
    for (long n = 0; n < N; ++n) {
        double c = cosines.value().at2(n, labels[static_cast<size_t>(n)]);
        double cc = std::min(std::max(c, -kClamp), kClamp);
        out.at2(n, labels[static_cast<size_t>(n)]) = s * (cc * cm - std::sqrt(1.0 - cc * cc) * sm);
    }
    return make_op(std::move(out), {cosines}, [N, labels, s, cm, sm, kClamp](Node& n) {
        const Tensor& cv = n.parents[0]->value;
        Tensor g = n.grad;
        g.scale_(s);
        for (long b = 0; b < N; ++b) {
            long y = labels[static_cast<size_t>(b)];
            double c = cv.at2(b, y);
            if (c < -kClamp || c > kClamp) {
                g.at2(b, y) = 0.0;
            } else {
                double sin_t = std::sqrt(1.0 - c * c);
                g.at2(b, y) = n.grad.at2(b, y) * s * (cm + c * sm / sin_t);
            }
        }
        n.parents[0]->accumulate(g);
    });
}

Var softmax_xent(const Var& logits, const std::vector<long>& labels) {
    long N = logits.value().dim(0), K = logits.value().dim(1);
    if (static_cast<long>(labels.size()) != N) throw ShapeMismatch("softmax_xent: label count");
    for (long lab : labels)
        if (lab < 0 || lab >= K) throw LabelOutOfRange("label " + std::to_string(lab) + " out of range");
    Tensor probs({N, K});
    double loss = 0;
    for (long n = 0; n < N; ++n) {
        double mx = -1e300;
        for (long k = 0; k < K; ++k) mx = std::max(mx, logits.value().at2(n, k));
        double z = 0;
        for (long k = 0; k < K; ++k) z += std::exp(logits.value().at2(n, k) - mx);
        double logz = std::log(z) + mx;
        for (long k = 0; k < K; ++k) probs.at2(n, k) = std::exp(logits.value().at2(n, k) - logz);
        loss -= logits.value().at2(n, labels[static_cast<size_t>(n)]) - logz;
    }
    loss /= static_cast<double>(N);
    return make_op(Tensor::scalar(loss), {logits}, [N, K, labels, probs](Node& n) {
        double g0 = n.grad[0] / static_cast<double>(N);
        Tensor g({N, K});
        for (long b = 0; b < N; ++b)
            for (long k = 0; k < K; ++k)
                g.at2(b, k) = g0 * (probs.at2(b, k) - (labels[static_cast<size_t>(b)] == k ? 1.0 : 0.0));
        n.parents[0]->accumulate(g);
    });
}

Var mean_abs_diff(const Var& a, const Var& b) { return mean_all(abs_(sub(a, b))); }

}  // namespace defront::ad
