#pragma once

#include <vector>

#include "cfx/nn/network.hpp"

namespace cfx::nn {

/// SGD with classical momentum. `l2_factor` adds l2 * sum(w^2) to the loss of
/// every conv/dense weight and bias (normalisation parameters are exempt).
class Sgd {
public:
    Sgd(std::vector<Parameter> params, double learning_rate, double momentum,
        double l2_factor = 0.0);

    void step();
    void zero_grad();
    void set_learning_rate(double lr) { lr_ = lr; }
    /// l2 * sum(w^2) over the regularised parameters.
    double penalty() const;

private:
    std::vector<Parameter> params_;
    std::vector<bool> regularised_;
    std::vector<Tensor> velocity_;
    double lr_;
    double momentum_;
    double l2_;
};

class Adam {
public:
    Adam(std::vector<Parameter> params, double learning_rate, double beta1, double beta2,
         double eps = 1e-8);

    void step();
    void zero_grad();

private:
    std::vector<Parameter> params_;
    std::vector<Tensor> m_;
    std::vector<Tensor> v_;
    double lr_;
    double beta1_;
    double beta2_;
    double eps_;
    long t_ = 0;
};

}  // namespace cfx::nn
