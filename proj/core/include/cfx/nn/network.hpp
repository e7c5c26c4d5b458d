#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cfx/nn/autograd.hpp"

namespace cfx::nn {

struct ForwardContext {
    bool training = false;
    std::mt19937_64* rng = nullptr;  // required when training with dropout
};

struct Parameter {
    std::string name;
    Var var;
};

struct Buffer {
    std::string name;
    Tensor* tensor;
};

enum class InitScheme {
    Normal002,  // N(0, 0.02), the usual image-translation initialisation
    HeNormal,
    GlorotUniform,
};

class Layer {
public:
    virtual ~Layer() = default;

    virtual Var forward(const Var& x, ForwardContext& ctx) const = 0;
    /// Throws std::invalid_argument when `in` cannot pass through the layer.
    virtual Shape infer(const Shape& in) const = 0;
    virtual nlohmann::json spec() const = 0;
    virtual std::string describe() const = 0;

    virtual void collect(const std::string& prefix, std::vector<Parameter>& params,
                         std::vector<Buffer>& buffers) {
        (void)prefix;
        (void)params;
        (void)buffers;
    }
    virtual void initialize(InitScheme scheme, std::mt19937_64& rng) {
        (void)scheme;
        (void)rng;
    }
};

std::unique_ptr<Layer> make_layer(const nlohmann::json& spec);

/// A feed-forward stack of layers built from a JSON description of the form
/// {"input": [c, h, w], "layers": [{"type": ...}, ...]}. Move-only.
class Network {
public:
    Network() = default;
    explicit Network(const nlohmann::json& spec);
    Network(Network&&) noexcept = default;
    Network& operator=(Network&&) noexcept = default;

    nlohmann::json spec() const;
    Shape input_shape(int batch = 1) const { return Shape{batch, in_c_, in_h_, in_w_}; }
    Shape output_shape(int batch = 1) const;
    /// One line per top-level layer: index, description, output shape.
    std::vector<std::string> summary() const;
    std::size_t layer_count() const { return layers_.size(); }

    Var forward(const Var& x, ForwardContext& ctx) const;
    /// Inference-mode forward.
    Var operator()(const Var& x) const;

    const std::vector<Parameter>& parameters() const { return params_; }
    const std::vector<Buffer>& buffers() const { return buffers_; }
    std::size_t parameter_count() const;

    void initialize(InitScheme scheme, std::uint64_t seed);
    void set_trainable(bool on);
    bool trainable() const { return trainable_; }
    void zero_grad();

    /// SHA-256 over every parameter and buffer value, hex encoded.
    std::string checksum() const;

    void save_weights(const std::filesystem::path& path) const;
    void load_weights(const std::filesystem::path& path);

private:
    void rebuild_index();

    int in_c_ = 0;
    int in_h_ = 0;
    int in_w_ = 0;
    std::vector<std::unique_ptr<Layer>> layers_;
    std::vector<Parameter> params_;
    std::vector<Buffer> buffers_;
    bool trainable_ = true;
};

}  // namespace cfx::nn
