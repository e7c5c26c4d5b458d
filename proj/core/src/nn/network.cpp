#include "cfx/nn/network.hpp"

#include <cstring>
#include <fstream>

#include "cfx/digest.hpp"
#include "cfx/error.hpp"

namespace cfx::nn {
namespace {

constexpr char kMagic[4] = {'C', 'F', 'X', 'W'};
constexpr std::uint32_t kVersion = 1;

template <class T>
void put(std::ostream& os, T v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class T>
T get(std::istream& is) {
    T v{};
    is.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!is) throw ValidationError("weights file truncated");
    return v;
}

struct NamedTensor {
    std::string name;
    const Tensor* tensor;
};

}  // namespace

Network::Network(const nlohmann::json& spec) {
    const auto& input = spec.at("input");
    in_c_ = input.at(0);
    in_h_ = input.at(1);
    in_w_ = input.at(2);
    Shape s = input_shape();
    int index = 0;
    for (const auto& l : spec.at("layers")) {
        ++index;
        std::unique_ptr<Layer> layer;
        try {
            layer = make_layer(l);
            s = layer->infer(s);
        } catch (const std::exception& e) {
            const std::string what = layer ? layer->describe() : l.value("type", "?");
            throw ValidationError("layer " + std::to_string(index) + " (" + what +
                                  "): " + e.what());
        }
        layers_.push_back(std::move(layer));
    }
    rebuild_index();
}

void Network::rebuild_index() {
    params_.clear();
    buffers_.clear();
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        layers_[i]->collect(std::to_string(i) + ".", params_, buffers_);
    }
}

nlohmann::json Network::spec() const {
    nlohmann::json layers = nlohmann::json::array();
    for (const auto& l : layers_) layers.push_back(l->spec());
    return {{"input", {in_c_, in_h_, in_w_}}, {"layers", layers}};
}

Shape Network::output_shape(int batch) const {
    Shape s = input_shape(batch);
    for (const auto& l : layers_) s = l->infer(s);
    return s;
}

std::vector<std::string> Network::summary() const {
    std::vector<std::string> lines;
    Shape s = input_shape();
    for (std::size_t i = 0; i < layers_.size(); ++i) {
        s = layers_[i]->infer(s);
        lines.push_back(std::to_string(i + 1) + " " + layers_[i]->describe() + " -> " + s.str());
    }
    return lines;
}

Var Network::forward(const Var& x, ForwardContext& ctx) const {
    const Shape& xs = x.shape();
    if (xs.c != in_c_ || xs.h != in_h_ || xs.w != in_w_) {
        throw ValidationError("network expects input " + input_shape(xs.n).str() + ", got " +
                              xs.str());
    }
    Var h = x;
    for (const auto& l : layers_) h = l->forward(h, ctx);
    return h;
}

Var Network::operator()(const Var& x) const {
    ForwardContext ctx;
    return forward(x, ctx);
}

std::size_t Network::parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.var.value().numel();
    return n;
}

void Network::initialize(InitScheme scheme, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    for (auto& l : layers_) l->initialize(scheme, rng);
}

void Network::set_trainable(bool on) {
    trainable_ = on;
    for (auto& p : params_) {
        p.var.set_requires_grad(on);
        if (!on) p.var.zero_grad();
    }
}

void Network::zero_grad() {
    for (auto& p : params_) p.var.zero_grad();
}

std::string Network::checksum() const {
    Sha256 h;
    auto feed = [&](const Tensor& t) {
        h.update(t.data(), t.numel() * sizeof(double));
    };
    for (const auto& p : params_) feed(p.var.value());
    for (const auto& b : buffers_) feed(*b.tensor);
    return h.hex();
}

void Network::save_weights(const std::filesystem::path& path) const {
    std::vector<NamedTensor> all;
    for (const auto& p : params_) all.push_back({p.name, &p.var.value()});
    for (const auto& b : buffers_) all.push_back({b.name, b.tensor});

    std::ofstream os(path, std::ios::binary);
    if (!os) throw RuntimeFailure("cannot write weights to " + path.string());
    os.write(kMagic, sizeof kMagic);
    put<std::uint32_t>(os, kVersion);
    put<std::uint32_t>(os, static_cast<std::uint32_t>(all.size()));
    for (const auto& t : all) {
        put<std::uint32_t>(os, static_cast<std::uint32_t>(t.name.size()));
        os.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
        const Shape s = t.tensor->shape();
        for (int d : {s.n, s.c, s.h, s.w}) put<std::int32_t>(os, d);
        os.write(reinterpret_cast<const char*>(t.tensor->data()),
                 static_cast<std::streamsize>(t.tensor->numel() * sizeof(double)));
    }
    if (!os) throw RuntimeFailure("failed writing weights to " + path.string());
}

void Network::load_weights(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ValidationError("cannot open weights file " + path.string());
    char magic[4];
    is.read(magic, sizeof magic);
    if (!is || std::memcmp(magic, kMagic, sizeof magic) != 0) {
        throw ValidationError(path.string() + " is not a weights file");
    }
    if (get<std::uint32_t>(is) != kVersion) {
        throw ValidationError("unsupported weights version in " + path.string());
    }
    const auto count = get<std::uint32_t>(is);
    if (count != params_.size() + buffers_.size()) {
        throw ValidationError("weights file " + path.string() + " holds " +
                              std::to_string(count) + " tensors, network has " +
                              std::to_string(params_.size() + buffers_.size()));
    }
    std::vector<Tensor*> targets;
    std::vector<std::string> names;
    for (auto& p : params_) {
        targets.push_back(&p.var.mutable_value());
        names.push_back(p.name);
    }
    for (auto& b : buffers_) {
        targets.push_back(b.tensor);
        names.push_back(b.name);
    }
    for (std::size_t i = 0; i < targets.size(); ++i) {
        const auto len = get<std::uint32_t>(is);
        std::string name(len, '\0');
        is.read(name.data(), len);
        Shape s;
        s.n = get<std::int32_t>(is);
        s.c = get<std::int32_t>(is);
        s.h = get<std::int32_t>(is);
        s.w = get<std::int32_t>(is);
        if (name != names[i] || s != targets[i]->shape()) {
            throw ValidationError("weights tensor " + name + s.str() + " does not match " +
                                  names[i] + targets[i]->shape().str());
        }
        is.read(reinterpret_cast<char*>(targets[i]->data()),
                static_cast<std::streamsize>(targets[i]->numel() * sizeof(double)));
        if (!is) throw ValidationError("weights file truncated: " + path.string());
    }
}

}  // namespace cfx::nn
