#pragma once

#include <Eigen/Dense>

#include <functional>
#include <memory>
#include <span>
#include <utility>
#include <vector>

namespace t1map::ad {

/// One node of the define-by-run differentiation graph: a dense value
/// (shape <= 2-D), its parents, a backward rule that maps this node's
/// gradient onto the parents, and the accumulated gradient slot.
struct Node {
    Eigen::MatrixXd value;
    Eigen::MatrixXd grad; // sized lazily; empty means all-zero
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_rule;

    void accumulate(const Eigen::MatrixXd& g) {
        if (grad.size() == 0)
            grad = g;
        else
            grad += g;
    }
    Eigen::MatrixXd& grad_ref() {
        if (grad.size() == 0) grad = Eigen::MatrixXd::Zero(value.rows(), value.cols());
        return grad;
    }
};

/// Value-semantic handle to a graph node. Graphs are rebuilt each forward
/// pass; a single graph instance is single-threaded.
class Var {
  public:
    Var() = default;
    explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

    static Var leaf(Eigen::MatrixXd value);
    static Var scalar(double value);

    bool empty() const { return node_ == nullptr; }
    const Eigen::MatrixXd& value() const { return node_->value; }
    double scalar_value() const { return node_->value(0, 0); }
    /// Accumulated gradient (zeros if backward never reached this node).
    Eigen::MatrixXd grad() const {
        if (node_->grad.size() == 0)
            return Eigen::MatrixXd::Zero(node_->value.rows(), node_->value.cols());
        return node_->grad;
    }
    void zero_grad() { node_->grad.resize(0, 0); }
    /// Overwrite a leaf's value in place (same shape required).
    void set_value(const Eigen::MatrixXd& v);

    std::shared_ptr<Node>& node() { return node_; }
    const std::shared_ptr<Node>& node() const { return node_; }

  private:
    std::shared_ptr<Node> node_;
};

/// While a guard is alive (per thread), newly created nodes record no
/// parents or backward rules; forward values are unaffected. Used for
/// inference where gradients are never requested.
struct NoGradGuard {
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;
};
bool grad_enabled();

// Elementwise binary ops; shapes must match, or either side may be 1x1
// (broadcast scalar).
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);

/// alpha * x with a constant alpha.
Var scale(const Var& x, double alpha);
/// sum_i coeff_i * x_i over equal-shaped terms (constant coefficients).
Var lincomb(std::span<const std::pair<double, Var>> terms);

Var neg(const Var& x);
Var exp(const Var& x);
Var tanh(const Var& x);
Var sigmoid(const Var& x);
Var softplus(const Var& x);
Var square(const Var& x);

Var sum(const Var& x);  // 1x1
Var mean(const Var& x); // 1x1

/// W * x + b for W (m x n), x (n x 1 or n x k), b (m x 1).
Var linear_map(const Var& W, const Var& x, const Var& b);

/// Stack two column blocks vertically (equal column counts).
Var concat(const Var& a, const Var& b);
/// Rows [row0, row0+rows) of x.
Var slice(const Var& x, int row0, int rows);

/// Reverse-mode sweep from a scalar root: seeds the root gradient with 1
/// and visits the root's ancestors exactly once in reverse topological
/// order. Gradients accumulate across calls; clear leaves with zero_grad().
void backward(const Var& root);

} // namespace t1map::ad
