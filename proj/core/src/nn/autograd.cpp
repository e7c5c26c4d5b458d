#include "cfx/nn/autograd.hpp"

#include <stdexcept>
#include <unordered_set>
#include <utility>

namespace cfx::nn {

Tensor& Node::grad_buffer() {
    if (grad.empty() && value.numel() > 0) grad = Tensor(value.shape());
    return grad;
}

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<Node>()) {
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
}

void Var::zero_grad() {
    if (node_) node_->grad = Tensor();
}

double Var::item() const {
    if (value().numel() != 1) {
        throw std::logic_error("item() on tensor of shape " + shape().str());
    }
    return value()[0];
}

Var record(Tensor value, std::vector<Var> inputs,
           std::function<void(const Tensor& grad)> backward_fn) {
    Var out(std::move(value));
    bool any = false;
    for (const auto& in : inputs) any = any || in.requires_grad();
    if (!any) return out;
    Node* node = out.node();
    node->requires_grad = true;
    node->parents.reserve(inputs.size());
    // Constant inputs are kept alive too: backward closures read their values.
    for (auto& in : inputs) node->parents.push_back(in.shared());
    node->backward = std::move(backward_fn);
    return out;
}

void backward(const Var& root) {
    if (!root.requires_grad()) return;
    if (root.value().numel() != 1) {
        throw std::logic_error("backward() needs a scalar root, got " + root.shape().str());
    }

    // Iterative post-order DFS gives a topological order.
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack{{root.node(), 0}};
    seen.insert(root.node());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* p = node->parents[next++].get();
            if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    root.node()->grad_buffer()[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* node = *it;
        if (node->backward && !node->grad.empty()) {
            node->backward(node->grad);
            // Interior gradients are consumed; only leaves keep theirs.
            node->grad = Tensor();
        }
    }
}

Var detach(const Var& v) { return Var(v.value(), false); }

}  // namespace cfx::nn
