#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "defront/tensor.hpp"

namespace defront::ad {

struct Node;
using NodePtr = std::shared_ptr<Node>;

struct Node {
    Tensor value;
    Tensor grad;                // lazily allocated, same shape as value
    bool requires_grad = false;
    bool has_grad = false;
    std::vector<NodePtr> parents;
    std::function<void(Node&)> backprop;  // reads this->grad, accumulates into parents

    void accumulate(const Tensor& g);
    void ensure_grad();
};

// Differentiable handle over a Tensor. Copies share the node.
class Var {
public:
    Var() = default;
    explicit Var(Tensor value, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Tensor& value() const { return node_->value; }
    Tensor& value() { return node_->value; }
    const Tensor& grad() const { return node_->grad; }
    bool has_grad() const { return node_ && node_->has_grad; }
    bool requires_grad() const { return node_ && node_->requires_grad; }
    void zero_grad();

    const std::vector<long>& shape() const { return node_->value.shape(); }

    NodePtr node() const { return node_; }
    static Var wrap(NodePtr n);

private:
    NodePtr node_;
};

// Runs reverse-mode accumulation from a scalar (size-1) root. Gradients of
// leaf variables accumulate across calls until zero_grad.
void backward(const Var& root);

// While a guard is alive ops record no graph; forwards become plain math.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};
bool grad_enabled();

Var constant(Tensor t);

// --- elementwise ---
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var abs_(const Var& a);
Var log_(const Var& a);
Var clamp(const Var& a, double lo, double hi);
Var relu(const Var& a);
Var leaky_relu(const Var& a, double slope = 0.2);
Var tanh_(const Var& a);
Var sigmoid_(const Var& a);

// --- reductions ---
Var sum_all(const Var& a);
Var mean_all(const Var& a);

// --- shape / structure ---
Var detach(const Var& a);
Var reshape(const Var& a, std::vector<long> shape);
Var concat_channels(const std::vector<Var>& xs);  // NCHW along C

// --- linear algebra / nn ---
// y = x * W^T + b ; x:[N,K], w:[D,K], b:[D] (b may be undefined)
Var linear(const Var& x, const Var& w, const Var& b);
// x:[N,Ci,H,W], w:[Co,Ci,kh,kw], b:[Co] optional
Var conv2d(const Var& x, const Var& w, const Var& b, int stride, int pad);
Var upsample_nearest2(const Var& x);
Var avg_pool2(const Var& x);            // 2x2, stride 2, H and W must be even
Var global_avg_pool(const Var& x);      // NCHW -> [N,C]
Var instance_norm(const Var& x, const Var& gamma, const Var& beta, double eps = 1e-5);

// Bilinear warp with edge clamping. img:[N,C,H,W], flow:[N,2,H,W] as
// (dx, dy) pixel displacements; output(y,x) = img(y + dy, x + dx).
// Differentiable w.r.t. both inputs.
Var warp_bilinear(const Var& img, const Var& flow);

// Mean L1 of first-order spatial differences, used as flow regularizer.
Var first_diff_l1(const Var& x);

// Rows scaled to unit L2 norm. x:[N,D].
Var l2_normalize_rows(const Var& x, double eps = 1e-12);

// Mean binary cross-entropy with predictions clamped to [eps, 1-eps].
Var bce_mean(const Var& pred, const Var& target, double eps = 1e-7);

// ArcFace-style logits: out[n,j] = s*cos[n,j] except the label column,
// which becomes s*cos(theta + m). cosines clamped to keep sqrt stable.
Var margin_cos_logits(const Var& cosines, const std::vector<long>& labels, double s, double m);

// Mean softmax cross-entropy over the batch. logits:[N,K].
Var softmax_xent(const Var& logits, const std::vector<long>& labels);

Var mean_abs_diff(const Var& a, const Var& b);

}  // namespace defront::ad
