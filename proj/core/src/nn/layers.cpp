#include <cmath>
#include <stdexcept>

#include "cfx/nn/network.hpp"
#include "cfx/nn/ops.hpp"

namespace cfx::nn {
namespace {

using nlohmann::json;

enum class Activation { None, Relu, LeakyRelu, Tanh, Sigmoid };

Activation parse_activation(const std::string& name) {
    if (name == "none") return Activation::None;
    if (name == "relu") return Activation::Relu;
    if (name == "leaky_relu") return Activation::LeakyRelu;
    if (name == "tanh") return Activation::Tanh;
    if (name == "sigmoid") return Activation::Sigmoid;
    throw std::invalid_argument("unknown activation '" + name + "'");
}

const char* activation_name(Activation a) {
    switch (a) {
        case Activation::None: return "none";
        case Activation::Relu: return "relu";
        case Activation::LeakyRelu: return "leaky_relu";
        case Activation::Tanh: return "tanh";
        case Activation::Sigmoid: return "sigmoid";
    }
    return "none";
}

Var activate(Activation a, double slope, const Var& x) {
    switch (a) {
        case Activation::None: return x;
        case Activation::Relu: return relu(x);
        case Activation::LeakyRelu: return leaky_relu(x, slope);
        case Activation::Tanh: return tanh(x);
        case Activation::Sigmoid: return sigmoid(x);
    }
    return x;
}

void init_weight(Tensor& w, InitScheme scheme, double fan_in, double fan_out,
                 std::mt19937_64& rng) {
    switch (scheme) {
        case InitScheme::Normal002: {
            std::normal_distribution<double> d(0.0, 0.02);
            for (auto& v : w.values()) v = d(rng);
            break;
        }
        case InitScheme::HeNormal: {
            std::normal_distribution<double> d(0.0, std::sqrt(2.0 / fan_in));
            for (auto& v : w.values()) v = d(rng);
            break;
        }
        case InitScheme::GlorotUniform: {
            const double limit = std::sqrt(6.0 / (fan_in + fan_out));
            std::uniform_real_distribution<double> d(-limit, limit);
            for (auto& v : w.values()) v = d(rng);
            break;
        }
    }
}

class Conv2dLayer final : public Layer {
public:
    explicit Conv2dLayer(const json& s)
        : in_(s.at("in")), out_(s.at("out")), k_(s.at("kernel")),
          stride_(s.value("stride", 1)), pad_(s.value("pad", 0)),
          activation_(parse_activation(s.value("activation", "none"))),
          slope_(s.value("slope", 0.2)),
          weight_(Tensor(Shape{out_, in_, k_, k_}), true) {
        if (in_ <= 0 || out_ <= 0 || k_ <= 0 || stride_ <= 0 || pad_ < 0) {
            throw std::invalid_argument("conv: non-positive geometry");
        }
        if (s.value("bias", true)) bias_ = Var(Tensor(Shape{1, out_, 1, 1}), true);
    }

    Var forward(const Var& x, ForwardContext&) const override {
        return activate(activation_, slope_, conv2d(x, weight_, bias_, stride_, pad_));
    }

    Shape infer(const Shape& in) const override {
        if (in.c != in_) {
            throw std::invalid_argument("expects " + std::to_string(in_) + " channels, got " +
                                        std::to_string(in.c));
        }
        const int oh = (in.h + 2 * pad_ - k_) / stride_ + 1;
        const int ow = (in.w + 2 * pad_ - k_) / stride_ + 1;
        if (in.h + 2 * pad_ < k_ || in.w + 2 * pad_ < k_ || oh <= 0 || ow <= 0) {
            throw std::invalid_argument("feature map " + std::to_string(in.h) + "x" +
                                        std::to_string(in.w) + " collapses under a " +
                                        std::to_string(k_) + "x" + std::to_string(k_) +
                                        " kernel");
        }
        return Shape{in.n, out_, oh, ow};
    }

    json spec() const override {
        return {{"type", "conv"},        {"in", in_},          {"out", out_},
                {"kernel", k_},          {"stride", stride_},  {"pad", pad_},
                {"bias", bias_.defined()}, {"activation", activation_name(activation_)},
                {"slope", slope_}};
    }

    std::string describe() const override {
        return "Conv2D " + std::to_string(out_) + " " + std::to_string(k_) + "x" +
               std::to_string(k_) + " stride " + std::to_string(stride_) + " pad " +
               std::to_string(pad_);
    }

    void collect(const std::string& prefix, std::vector<Parameter>& params,
                 std::vector<Buffer>&) override {
        params.push_back({prefix + "weight", weight_});
        if (bias_.defined()) params.push_back({prefix + "bias", bias_});
    }

    void initialize(InitScheme scheme, std::mt19937_64& rng) override {
        init_weight(weight_.mutable_value(), scheme, in_ * k_ * k_, out_ * k_ * k_, rng);
        if (bias_.defined()) bias_.mutable_value().fill(0.0);
    }

private:
    int in_, out_, k_, stride_, pad_;
    Activation activation_;
    double slope_;
    Var weight_;
    Var bias_;
};

class ConvTranspose2dLayer final : public Layer {
public:
    explicit ConvTranspose2dLayer(const json& s)
        : in_(s.at("in")), out_(s.at("out")), k_(s.at("kernel")),
          stride_(s.value("stride", 1)), pad_(s.value("pad", 0)),
          output_pad_(s.value("output_pad", 0)),
          weight_(Tensor(Shape{in_, out_, k_, k_}), true),
          bias_(Tensor(Shape{1, out_, 1, 1}), true) {}

    Var forward(const Var& x, ForwardContext&) const override {
        return conv_transpose2d(x, weight_, bias_, stride_, pad_, output_pad_);
    }

    Shape infer(const Shape& in) const override {
        if (in.c != in_) {
            throw std::invalid_argument("expects " + std::to_string(in_) + " channels, got " +
                                        std::to_string(in.c));
        }
        const int oh = (in.h - 1) * stride_ - 2 * pad_ + k_ + output_pad_;
        const int ow = (in.w - 1) * stride_ - 2 * pad_ + k_ + output_pad_;
        if (oh <= 0 || ow <= 0) throw std::invalid_argument("empty transposed output");
        return Shape{in.n, out_, oh, ow};
    }

    json spec() const override {
        return {{"type", "conv_transpose"}, {"in", in_},         {"out", out_},
                {"kernel", k_},             {"stride", stride_}, {"pad", pad_},
                {"output_pad", output_pad_}};
    }

    std::string describe() const override {
        return "ConvTranspose2D " + std::to_string(out_) + " " + std::to_string(k_) + "x" +
               std::to_string(k_) + " stride " + std::to_string(stride_);
    }

    void collect(const std::string& prefix, std::vector<Parameter>& params,
                 std::vector<Buffer>&) override {
        params.push_back({prefix + "weight", weight_});
        params.push_back({prefix + "bias", bias_});
    }

    void initialize(InitScheme scheme, std::mt19937_64& rng) override {
        init_weight(weight_.mutable_value(), scheme, out_ * k_ * k_, in_ * k_ * k_, rng);
        bias_.mutable_value().fill(0.0);
    }

private:
    int in_, out_, k_, stride_, pad_, output_pad_;
    Var weight_;
    Var bias_;
};

class DenseLayer final : public Layer {
public:
    explicit DenseLayer(const json& s)
        : in_(s.at("in")), out_(s.at("out")),
          activation_(parse_activation(s.value("activation", "none"))),
          slope_(s.value("slope", 0.2)),
          weight_(Tensor(Shape{out_, in_, 1, 1}), true),
          bias_(Tensor(Shape{1, out_, 1, 1}), true) {
        if (in_ <= 0 || out_ <= 0) throw std::invalid_argument("dense: non-positive width");
    }

    Var forward(const Var& x, ForwardContext&) const override {
        return activate(activation_, slope_, dense(x, weight_, bias_));
    }

    Shape infer(const Shape& in) const override {
        if (static_cast<int>(in.item()) != in_) {
            throw std::invalid_argument("expects " + std::to_string(in_) + " inputs, got " +
                                        std::to_string(in.item()));
        }
        return Shape{in.n, out_, 1, 1};
    }

    json spec() const override {
        return {{"type", "dense"},
                {"in", in_},
                {"out", out_},
                {"activation", activation_name(activation_)},
                {"slope", slope_}};
    }

    std::string describe() const override { return "Dense " + std::to_string(out_); }

    void collect(const std::string& prefix, std::vector<Parameter>& params,
                 std::vector<Buffer>&) override {
        params.push_back({prefix + "weight", weight_});
        params.push_back({prefix + "bias", bias_});
    }

    void initialize(InitScheme scheme, std::mt19937_64& rng) override {
        init_weight(weight_.mutable_value(), scheme, in_, out_, rng);
        bias_.mutable_value().fill(0.0);
    }

private:
    int in_, out_;
    Activation activation_;
    double slope_;
    Var weight_;
    Var bias_;
};

class BatchNormLayer final : public Layer {
public:
    explicit BatchNormLayer(const json& s)
        : channels_(s.at("channels")), eps_(s.value("eps", 1e-3)),
          momentum_(s.value("momentum", 0.1)),
          gamma_(Tensor(Shape{1, channels_, 1, 1}, 1.0), true),
          beta_(Tensor(Shape{1, channels_, 1, 1}), true),
          running_mean_(Shape{1, channels_, 1, 1}, 0.0),
          running_var_(Shape{1, channels_, 1, 1}, 1.0) {}

    Var forward(const Var& x, ForwardContext& ctx) const override {
        if (!ctx.training) {
            return batch_norm_eval(x, gamma_, beta_, running_mean_, running_var_, eps_);
        }
        BatchStats stats;
        Var y = batch_norm_train(x, gamma_, beta_, eps_, &stats);
        // Running statistics change only in training mode.
        const double m = static_cast<double>(x.shape().n) * static_cast<double>(x.shape().plane());
        const double unbias = m > 1.0 ? m / (m - 1.0) : 1.0;
        for (int c = 0; c < channels_; ++c) {
            running_mean_[c] = (1.0 - momentum_) * running_mean_[c] + momentum_ * stats.mean[c];
            running_var_[c] =
                (1.0 - momentum_) * running_var_[c] + momentum_ * stats.var[c] * unbias;
        }
        return y;
    }

    Shape infer(const Shape& in) const override {
        if (in.c != channels_) {
            throw std::invalid_argument("expects " + std::to_string(channels_) +
                                        " channels, got " + std::to_string(in.c));
        }
        return in;
    }

    json spec() const override {
        return {{"type", "batch_norm"}, {"channels", channels_}, {"eps", eps_},
                {"momentum", momentum_}};
    }

    std::string describe() const override { return "Batch Normalization"; }

    void collect(const std::string& prefix, std::vector<Parameter>& params,
                 std::vector<Buffer>& buffers) override {
        params.push_back({prefix + "gamma", gamma_});
        params.push_back({prefix + "beta", beta_});
        buffers.push_back({prefix + "running_mean", &running_mean_});
        buffers.push_back({prefix + "running_var", &running_var_});
    }

    void initialize(InitScheme, std::mt19937_64&) override {
        gamma_.mutable_value().fill(1.0);
        beta_.mutable_value().fill(0.0);
        running_mean_.fill(0.0);
        running_var_.fill(1.0);
    }

private:
    int channels_;
    double eps_;
    double momentum_;
    Var gamma_;
    Var beta_;
    mutable Tensor running_mean_;
    mutable Tensor running_var_;
};

class InstanceNormLayer final : public Layer {
public:
    explicit InstanceNormLayer(const json& s) : eps_(s.value("eps", 1e-5)) {}
    Var forward(const Var& x, ForwardContext&) const override { return instance_norm(x, eps_); }
    Shape infer(const Shape& in) const override {
        if (in.plane() < 2) throw std::invalid_argument("instance norm over a 1x1 map");
        return in;
    }
    json spec() const override { return {{"type", "instance_norm"}, {"eps", eps_}}; }
    std::string describe() const override { return "Instance Normalization"; }

private:
    double eps_;
};

class ActivationLayer final : public Layer {
public:
    explicit ActivationLayer(const json& s)
        : kind_(parse_activation(s.at("type").get<std::string>())),
          slope_(s.value("slope", 0.2)) {}
    Var forward(const Var& x, ForwardContext&) const override {
        return activate(kind_, slope_, x);
    }
    Shape infer(const Shape& in) const override { return in; }
    json spec() const override {
        json j{{"type", activation_name(kind_)}};
        if (kind_ == Activation::LeakyRelu) j["slope"] = slope_;
        return j;
    }
    std::string describe() const override { return activation_name(kind_); }

private:
    Activation kind_;
    double slope_;
};

class MaxPoolLayer final : public Layer {
public:
    explicit MaxPoolLayer(const json& s)
        : kernel_(s.value("kernel", 2)), stride_(s.value("stride", 2)) {}
    Var forward(const Var& x, ForwardContext&) const override {
        return max_pool2d(x, kernel_, stride_);
    }
    Shape infer(const Shape& in) const override {
        if (in.h < kernel_ || in.w < kernel_) {
            throw std::invalid_argument("feature map " + std::to_string(in.h) + "x" +
                                        std::to_string(in.w) + " smaller than pool window");
        }
        return Shape{in.n, in.c, (in.h - kernel_) / stride_ + 1, (in.w - kernel_) / stride_ + 1};
    }
    json spec() const override {
        return {{"type", "max_pool"}, {"kernel", kernel_}, {"stride", stride_}};
    }
    std::string describe() const override {
        return "MaxPooling2D " + std::to_string(kernel_) + "x" + std::to_string(kernel_);
    }

private:
    int kernel_, stride_;
};

class DropoutLayer final : public Layer {
public:
    explicit DropoutLayer(const json& s) : p_(s.at("p")) {
        if (p_ < 0.0 || p_ >= 1.0) throw std::invalid_argument("dropout p outside [0,1)");
    }
    Var forward(const Var& x, ForwardContext& ctx) const override {
        if (!ctx.training || p_ == 0.0) return x;
        if (!ctx.rng) throw std::logic_error("dropout in training mode needs an rng");
        return dropout(x, p_, *ctx.rng);
    }
    Shape infer(const Shape& in) const override { return in; }
    json spec() const override { return {{"type", "dropout"}, {"p", p_}}; }
    std::string describe() const override { return "Dropout"; }

private:
    double p_;
};

class FlattenLayer final : public Layer {
public:
    Var forward(const Var& x, ForwardContext&) const override {
        return reshape(x, infer(x.shape()));
    }
    Shape infer(const Shape& in) const override {
        return Shape{in.n, static_cast<int>(in.item()), 1, 1};
    }
    json spec() const override { return {{"type", "flatten"}}; }
    std::string describe() const override { return "Flatten"; }
};

class ReflectionPadLayer final : public Layer {
public:
    explicit ReflectionPadLayer(const json& s) : pad_(s.at("pad")) {}
    Var forward(const Var& x, ForwardContext&) const override {
        return reflection_pad(x, pad_);
    }
    Shape infer(const Shape& in) const override {
        if (pad_ >= in.h || pad_ >= in.w) {
            throw std::invalid_argument("reflection pad wider than the feature map");
        }
        return Shape{in.n, in.c, in.h + 2 * pad_, in.w + 2 * pad_};
    }
    json spec() const override { return {{"type", "reflection_pad"}, {"pad", pad_}}; }
    std::string describe() const override { return "ReflectionPad " + std::to_string(pad_); }

private:
    int pad_;
};

class IdentityLayer final : public Layer {
public:
    Var forward(const Var& x, ForwardContext&) const override { return x; }
    Shape infer(const Shape& in) const override { return in; }
    json spec() const override { return {{"type", "identity"}}; }
    std::string describe() const override { return "Identity"; }
};

class ResidualLayer final : public Layer {
public:
    explicit ResidualLayer(const json& s) {
        for (const auto& l : s.at("body")) body_.push_back(make_layer(l));
    }
    Var forward(const Var& x, ForwardContext& ctx) const override {
        Var h = x;
        for (const auto& l : body_) h = l->forward(h, ctx);
        return add(x, h);
    }
    Shape infer(const Shape& in) const override {
        Shape s = in;
        for (const auto& l : body_) s = l->infer(s);
        if (s != in) {
            throw std::invalid_argument("residual body maps " + in.str() + " to " + s.str());
        }
        return in;
    }
    json spec() const override {
        json body = json::array();
        for (const auto& l : body_) body.push_back(l->spec());
        return {{"type", "residual"}, {"body", body}};
    }
    std::string describe() const override { return "Residual block"; }
    void collect(const std::string& prefix, std::vector<Parameter>& params,
                 std::vector<Buffer>& buffers) override {
        for (std::size_t i = 0; i < body_.size(); ++i) {
            body_[i]->collect(prefix + "body." + std::to_string(i) + ".", params, buffers);
        }
    }
    void initialize(InitScheme scheme, std::mt19937_64& rng) override {
        for (auto& l : body_) l->initialize(scheme, rng);
    }

private:
    std::vector<std::unique_ptr<Layer>> body_;
};

}  // namespace

std::unique_ptr<Layer> make_layer(const json& spec) {
    const std::string type = spec.at("type").get<std::string>();
    if (type == "conv") return std::make_unique<Conv2dLayer>(spec);
    if (type == "conv_transpose") return std::make_unique<ConvTranspose2dLayer>(spec);
    if (type == "dense") return std::make_unique<DenseLayer>(spec);
    if (type == "batch_norm") return std::make_unique<BatchNormLayer>(spec);
    if (type == "instance_norm") return std::make_unique<InstanceNormLayer>(spec);
    if (type == "max_pool") return std::make_unique<MaxPoolLayer>(spec);
    if (type == "dropout") return std::make_unique<DropoutLayer>(spec);
    if (type == "flatten") return std::make_unique<FlattenLayer>();
    if (type == "reflection_pad") return std::make_unique<ReflectionPadLayer>(spec);
    if (type == "identity") return std::make_unique<IdentityLayer>();
    if (type == "residual") return std::make_unique<ResidualLayer>(spec);
    if (type == "relu" || type == "leaky_relu" || type == "tanh" || type == "sigmoid") {
        return std::make_unique<ActivationLayer>(spec);
    }
    throw std::invalid_argument("unknown layer type '" + type + "'");
}

}  // namespace cfx::nn
