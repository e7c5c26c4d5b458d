#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "cfx/nn/tensor.hpp"

namespace cfx::nn {

/// One vertex of the reverse-mode tape. Parents are held by shared_ptr, so a
/// graph lives exactly as long as some Var refers to its output.
struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(const Tensor& grad)> backward;

    /// Zero-initialised on first use.
    Tensor& grad_buffer();
};

class Var {
public:
    Var() = default;
    explicit Var(Tensor value, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Tensor& value() const { return node_->value; }
    Tensor& mutable_value() { return node_->value; }
    const Shape& shape() const { return node_->value.shape(); }
    bool requires_grad() const { return node_ && node_->requires_grad; }
    void set_requires_grad(bool on) { node_->requires_grad = on; }

    /// Accumulated gradient; empty when backward never reached this node.
    const Tensor& grad() const { return node_->grad; }
    void zero_grad();

    /// Value of a one-element tensor.
    double item() const;

    Node* node() const { return node_.get(); }
    const std::shared_ptr<Node>& shared() const { return node_; }

private:
    std::shared_ptr<Node> node_;
};

/// Records an op result. When no input requires a gradient the result is a
/// plain constant and `backward_fn` is dropped.
Var record(Tensor value, std::vector<Var> inputs,
           std::function<void(const Tensor& grad)> backward_fn);

/// Seeds d(root)/d(root) = 1 and propagates through the tape.
void backward(const Var& root);

/// Same value, no tape connection.
Var detach(const Var& v);

}  // namespace cfx::nn
