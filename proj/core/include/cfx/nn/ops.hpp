#pragma once

#include <random>

#include "cfx/nn/autograd.hpp"

namespace cfx::nn {

// Convolutions. Weights: conv2d [out, in, k, k]; conv_transpose2d [in, out, k, k].
// Bias is [1, out, 1, 1] and may be an undefined Var.
Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride, int pad);
Var conv_transpose2d(const Var& x, const Var& weight, const Var& bias, int stride,
                     int pad, int output_pad);

Var reflection_pad(const Var& x, int pad);
Var max_pool2d(const Var& x, int kernel, int stride);

Var instance_norm(const Var& x, double eps);

struct BatchStats {
    std::vector<double> mean;
    std::vector<double> var;  // biased
};
/// Normalises with batch statistics and reports them through `stats`.
Var batch_norm_train(const Var& x, const Var& gamma, const Var& beta, double eps,
                     BatchStats* stats);
Var batch_norm_eval(const Var& x, const Var& gamma, const Var& beta,
                    const Tensor& running_mean, const Tensor& running_var, double eps);

/// x viewed as [N, c*h*w]; weight [out, in, 1, 1]; result [N, out, 1, 1].
Var dense(const Var& x, const Var& weight, const Var& bias);
Var reshape(const Var& x, Shape shape);

Var relu(const Var& x);
Var leaky_relu(const Var& x, double slope);
Var tanh(const Var& x);
Var sigmoid(const Var& x);
Var softplus(const Var& x);
/// Softmax over the channel axis at every (n, h, w).
Var softmax(const Var& x);
Var dropout(const Var& x, double p, std::mt19937_64& rng);

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& x, double s);
Var add_scalar(const Var& x, double s);
Var square(const Var& x);
Var abs(const Var& x);

/// Scalar [1,1,1,1] results.
Var mean(const Var& x);
Var sum(const Var& x);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(double s, const Var& x) { return scale(x, s); }

}  // namespace cfx::nn
