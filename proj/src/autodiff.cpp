#include "t1map/autodiff.hpp"

#include <cmath>
#include <stdexcept>
#include <unordered_set>

namespace t1map::ad {

namespace {

thread_local int nograd_depth = 0;

std::shared_ptr<Node> make_node(Eigen::MatrixXd value, std::vector<std::shared_ptr<Node>> parents,
                                std::function<void(Node&)> rule) {
    auto node = std::make_shared<Node>();
    node->value = std::move(value);
    if (nograd_depth == 0) {
        node->parents = std::move(parents);
        node->backward_rule = std::move(rule);
    }
    return node;
}

void check_same_shape(const Var& a, const Var& b, const char* op) {
    if (a.value().rows() != b.value().rows() || a.value().cols() != b.value().cols())
        throw std::invalid_argument(std::string(op) + ": shape mismatch");
}

bool is_scalar(const Var& v) { return v.value().rows() == 1 && v.value().cols() == 1; }

// Accumulate g into a parent that may have been broadcast from 1x1.
void accumulate_maybe_broadcast(Node& parent, const Eigen::MatrixXd& g) {
    if (parent.value.size() == 1 && g.size() != 1) {
        Eigen::MatrixXd s(1, 1);
        s(0, 0) = g.sum();
        parent.accumulate(s);
    } else {
        parent.accumulate(g);
    }
}

using Binary = std::function<Eigen::MatrixXd(const Eigen::MatrixXd&, const Eigen::MatrixXd&)>;

Eigen::MatrixXd broadcast_apply(const Var& a, const Var& b, const char* op, const Binary& f) {
    if (a.value().rows() == b.value().rows() && a.value().cols() == b.value().cols())
        return f(a.value(), b.value());
    if (is_scalar(a)) {
        const Eigen::MatrixXd av =
            Eigen::MatrixXd::Constant(b.value().rows(), b.value().cols(), a.scalar_value());
        return f(av, b.value());
    }
    if (is_scalar(b)) {
        const Eigen::MatrixXd bv =
            Eigen::MatrixXd::Constant(a.value().rows(), a.value().cols(), b.scalar_value());
        return f(a.value(), bv);
    }
    throw std::invalid_argument(std::string(op) + ": shape mismatch");
}

} // namespace

NoGradGuard::NoGradGuard() { ++nograd_depth; }
NoGradGuard::~NoGradGuard() { --nograd_depth; }
bool grad_enabled() { return nograd_depth == 0; }

Var Var::leaf(Eigen::MatrixXd value) {
    return Var(make_node(std::move(value), {}, nullptr));
}

Var Var::scalar(double value) {
    Eigen::MatrixXd m(1, 1);
    m(0, 0) = value;
    return leaf(std::move(m));
}

void Var::set_value(const Eigen::MatrixXd& v) {
    if (v.rows() != node_->value.rows() || v.cols() != node_->value.cols())
        throw std::invalid_argument("set_value: shape mismatch");
    node_->value = v;
}

Var add(const Var& a, const Var& b) {
    Eigen::MatrixXd v = broadcast_apply(a, b, "add",
                                        [](const auto& x, const auto& y) { return x + y; });
    auto pa = a.node(), pb = b.node();
    return Var(make_node(std::move(v), {pa, pb}, [pa, pb](Node& self) {
        accumulate_maybe_broadcast(*pa, self.grad);
        accumulate_maybe_broadcast(*pb, self.grad);
    }));
}

Var sub(const Var& a, const Var& b) {
    Eigen::MatrixXd v = broadcast_apply(a, b, "sub",
                                        [](const auto& x, const auto& y) { return x - y; });
    auto pa = a.node(), pb = b.node();
    return Var(make_node(std::move(v), {pa, pb}, [pa, pb](Node& self) {
        accumulate_maybe_broadcast(*pa, self.grad);
        accumulate_maybe_broadcast(*pb, -self.grad);
    }));
}

Var mul(const Var& a, const Var& b) {
    Eigen::MatrixXd v = broadcast_apply(
        a, b, "mul", [](const auto& x, const auto& y) { return x.cwiseProduct(y); });
    auto pa = a.node(), pb = b.node();
    return Var(make_node(std::move(v), {pa, pb}, [pa, pb](Node& self) {
        const auto eval_side = [&](Node& target, Node& other) {
            if (other.value.size() == 1) {
                accumulate_maybe_broadcast(target, self.grad * other.value(0, 0));
            } else if (target.value.size() == 1) {
                Eigen::MatrixXd s(1, 1);
                s(0, 0) = self.grad.cwiseProduct(other.value).sum();
                target.accumulate(s);
            } else {
                target.accumulate(self.grad.cwiseProduct(other.value));
            }
        };
        eval_side(*pa, *pb);
        eval_side(*pb, *pa);
    }));
}

Var div(const Var& a, const Var& b) {
    Eigen::MatrixXd v = broadcast_apply(
        a, b, "div", [](const auto& x, const auto& y) { return x.cwiseQuotient(y); });
    auto pa = a.node(), pb = b.node();
    Eigen::MatrixXd out = v;
    return Var(make_node(std::move(v), {pa, pb}, [pa, pb, out](Node& self) {
        // da = g / b ; db = -g * (a/b) / b = -g * out / b
        const Eigen::ArrayXXd bb =
            pb->value.size() == 1
                ? Eigen::ArrayXXd::Constant(self.grad.rows(), self.grad.cols(),
                                            pb->value(0, 0))
                : Eigen::ArrayXXd(pb->value.array());
        const Eigen::MatrixXd ga = (self.grad.array() / bb).matrix();
        const Eigen::MatrixXd gb = (-self.grad.array() * out.array() / bb).matrix();
        accumulate_maybe_broadcast(*pa, ga);
        accumulate_maybe_broadcast(*pb, gb);
    }));
}

Var scale(const Var& x, double alpha) {
    auto px = x.node();
    return Var(make_node(alpha * x.value(), {px}, [px, alpha](Node& self) {
        px->accumulate(alpha * self.grad);
    }));
}

Var lincomb(std::span<const std::pair<double, Var>> terms) {
    if (terms.empty()) throw std::invalid_argument("lincomb: no terms");
    Eigen::MatrixXd v = terms[0].first * terms[0].second.value();
    std::vector<std::shared_ptr<Node>> parents;
    std::vector<double> coeffs;
    parents.reserve(terms.size());
    coeffs.reserve(terms.size());
    parents.push_back(terms[0].second.node());
    coeffs.push_back(terms[0].first);
    for (size_t i = 1; i < terms.size(); ++i) {
        check_same_shape(terms[0].second, terms[i].second, "lincomb");
        v += terms[i].first * terms[i].second.value();
        parents.push_back(terms[i].second.node());
        coeffs.push_back(terms[i].first);
    }
    auto ps = parents;
    return Var(make_node(std::move(v), std::move(parents), [ps, coeffs](Node& self) {
        for (size_t i = 0; i < ps.size(); ++i) ps[i]->accumulate(coeffs[i] * self.grad);
    }));
}

Var neg(const Var& x) {
    auto px = x.node();
    return Var(make_node(-x.value(), {px},
                         [px](Node& self) { px->accumulate(-self.grad); }));
}

Var exp(const Var& x) {
    Eigen::MatrixXd v = x.value().array().exp();
    auto px = x.node();
    Eigen::MatrixXd out = v;
    return Var(make_node(std::move(v), {px}, [px, out](Node& self) {
        px->accumulate(self.grad.cwiseProduct(out));
    }));
}

Var tanh(const Var& x) {
    Eigen::MatrixXd v = x.value().array().tanh();
    auto px = x.node();
    Eigen::MatrixXd out = v;
    return Var(make_node(std::move(v), {px}, [px, out](Node& self) {
        px->accumulate(
            (self.grad.array() * (1.0 - out.array().square())).matrix());
    }));
}

Var sigmoid(const Var& x) {
    Eigen::MatrixXd v = (1.0 + (-x.value().array()).exp()).inverse();
    auto px = x.node();
    Eigen::MatrixXd out = v;
    return Var(make_node(std::move(v), {px}, [px, out](Node& self) {
        px->accumulate(
            (self.grad.array() * out.array() * (1.0 - out.array())).matrix());
    }));
}

Var softplus(const Var& x) {
    // max(x,0) + log1p(exp(-|x|)) is overflow-safe
    Eigen::MatrixXd v = x.value().unaryExpr(
        [](double a) { return std::max(a, 0.0) + std::log1p(std::exp(-std::abs(a))); });
    auto px = x.node();
    Eigen::MatrixXd in = x.value();
    return Var(make_node(std::move(v), {px}, [px, in](Node& self) {
        const Eigen::MatrixXd sig =
            in.unaryExpr([](double a) { return 1.0 / (1.0 + std::exp(-a)); });
        px->accumulate(self.grad.cwiseProduct(sig));
    }));
}

Var square(const Var& x) {
    Eigen::MatrixXd v = x.value().array().square();
    auto px = x.node();
    Eigen::MatrixXd in = x.value();
    return Var(make_node(std::move(v), {px}, [px, in](Node& self) {
        px->accumulate(2.0 * self.grad.cwiseProduct(in));
    }));
}

Var sum(const Var& x) {
    Eigen::MatrixXd v(1, 1);
    v(0, 0) = x.value().sum();
    auto px = x.node();
    return Var(make_node(std::move(v), {px}, [px](Node& self) {
        px->accumulate(Eigen::MatrixXd::Constant(px->value.rows(), px->value.cols(),
                                                 self.grad(0, 0)));
    }));
}

Var mean(const Var& x) {
    Eigen::MatrixXd v(1, 1);
    v(0, 0) = x.value().mean();
    auto px = x.node();
    const double inv_n = 1.0 / static_cast<double>(x.value().size());
    return Var(make_node(std::move(v), {px}, [px, inv_n](Node& self) {
        px->accumulate(Eigen::MatrixXd::Constant(px->value.rows(), px->value.cols(),
                                                 self.grad(0, 0) * inv_n));
    }));
}

Var linear_map(const Var& W, const Var& x, const Var& b) {
    if (W.value().cols() != x.value().rows())
        throw std::invalid_argument("linear_map: W/x shape mismatch");
    if (b.value().rows() != W.value().rows() || b.value().cols() != 1)
        throw std::invalid_argument("linear_map: bias shape mismatch");
    Eigen::MatrixXd v = W.value() * x.value();
    v.colwise() += b.value().col(0);
    auto pw = W.node(), px = x.node(), pb = b.node();
    return Var(make_node(std::move(v), {pw, px, pb}, [pw, px, pb](Node& self) {
        pw->accumulate(self.grad * px->value.transpose());
        px->accumulate(pw->value.transpose() * self.grad);
        pb->accumulate(self.grad.rowwise().sum());
    }));
}

Var concat(const Var& a, const Var& b) {
    if (a.value().cols() != b.value().cols())
        throw std::invalid_argument("concat: column count mismatch");
    Eigen::MatrixXd v(a.value().rows() + b.value().rows(), a.value().cols());
    v.topRows(a.value().rows()) = a.value();
    v.bottomRows(b.value().rows()) = b.value();
    auto pa = a.node(), pb = b.node();
    const long na = a.value().rows();
    return Var(make_node(std::move(v), {pa, pb}, [pa, pb, na](Node& self) {
        pa->accumulate(self.grad.topRows(na));
        pb->accumulate(self.grad.bottomRows(self.grad.rows() - na));
    }));
}

Var slice(const Var& x, int row0, int rows) {
    if (row0 < 0 || rows < 0 || row0 + rows > x.value().rows())
        throw std::invalid_argument("slice: range out of bounds");
    Eigen::MatrixXd v = x.value().middleRows(row0, rows);
    auto px = x.node();
    return Var(make_node(std::move(v), {px}, [px, row0, rows](Node& self) {
        Eigen::MatrixXd g = Eigen::MatrixXd::Zero(px->value.rows(), px->value.cols());
        g.middleRows(row0, rows) = self.grad;
        px->accumulate(g);
    }));
}

void backward(const Var& root) {
    if (root.empty()) throw std::invalid_argument("backward: empty root");
    if (root.value().size() != 1)
        throw std::invalid_argument("backward: root must be scalar");

    // iterative DFS postorder = topological order of the root's ancestors
    std::vector<Node*> order;
    std::unordered_set<Node*> visited;
    std::vector<std::pair<Node*, size_t>> stack;
    stack.emplace_back(root.node().get(), 0);
    visited.insert(root.node().get());
    while (!stack.empty()) {
        auto& [node, next_child] = stack.back();
        if (next_child < node->parents.size()) {
            Node* child = node->parents[next_child++].get();
            if (visited.insert(child).second) stack.emplace_back(child, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    // Sweep on fresh gradient buffers, then fold previously accumulated
    // gradients back in, so repeated backward calls add cleanly instead of
    // re-propagating stale intermediate gradients.
    std::vector<Eigen::MatrixXd> saved(order.size());
    for (size_t i = 0; i < order.size(); ++i) {
        saved[i] = std::move(order[i]->grad);
        order[i]->grad.resize(0, 0);
    }
    root.node()->accumulate(Eigen::MatrixXd::Constant(1, 1, 1.0));
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* node = *it;
        if (node->backward_rule && node->grad.size() != 0) node->backward_rule(*node);
    }
    for (size_t i = 0; i < order.size(); ++i)
        if (saved[i].size() != 0) order[i]->accumulate(saved[i]);
}

} // namespace t1map::ad
