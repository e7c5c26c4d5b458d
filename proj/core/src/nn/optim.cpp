#include "cfx/nn/optim.hpp"

#include <cmath>

namespace cfx::nn {
namespace {

bool ends_with(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

Sgd::Sgd(std::vector<Parameter> params, double learning_rate, double momentum,
         double l2_factor)
    : params_(std::move(params)), lr_(learning_rate), momentum_(momentum), l2_(l2_factor) {
    for (const auto& p : params_) {
        velocity_.emplace_back(p.var.shape());
        regularised_.push_back(ends_with(p.name, "weight") || ends_with(p.name, "bias"));
    }
}

void Sgd::step() {
    for (std::size_t i = 0; i < params_.size(); ++i) {
        Var& p = params_[i].var;
        const Tensor& g = p.grad();
        if (g.empty() && !(l2_ > 0.0 && regularised_[i])) continue;
        Tensor& w = p.mutable_value();
        Tensor& v = velocity_[i];
        const double decay = regularised_[i] ? 2.0 * l2_ : 0.0;
        for (std::size_t j = 0; j < w.numel(); ++j) {
            const double grad = (g.empty() ? 0.0 : g[j]) + decay * w[j];
            v[j] = momentum_ * v[j] - lr_ * grad;
            w[j] += v[j];
        }
    }
}

void Sgd::zero_grad() {
    for (auto& p : params_) p.var.zero_grad();
}

double Sgd::penalty() const {
    double s = 0.0;
    for (std::size_t i = 0; i < params_.size(); ++i) {
        if (!regularised_[i]) continue;
        for (double w : params_[i].var.value().values()) s += w * w;
    }
    return l2_ * s;
}

Adam::Adam(std::vector<Parameter> params, double learning_rate, double beta1, double beta2,
           double eps)
    : params_(std::move(params)), lr_(learning_rate), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const auto& p : params_) {
        m_.emplace_back(p.var.shape());
        v_.emplace_back(p.var.shape());
    }
}

void Adam::step() {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        Var& p = params_[i].var;
        const Tensor& g = p.grad();
        if (g.empty()) continue;
        Tensor& w = p.mutable_value();
        for (std::size_t j = 0; j < w.numel(); ++j) {
            m_[i][j] = beta1_ * m_[i][j] + (1.0 - beta1_) * g[j];
            v_[i][j] = beta2_ * v_[i][j] + (1.0 - beta2_) * g[j] * g[j];
            w[j] -= lr_ * (m_[i][j] / c1) / (std::sqrt(v_[i][j] / c2) + eps_);
        }
    }
}

void Adam::zero_grad() {
    for (auto& p : params_) p.var.zero_grad();
}

}  // namespace cfx::nn
