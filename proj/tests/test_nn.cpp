#include <random>

#include "cfx/error.hpp"
#include "cfx/nn/network.hpp"
#include "cfx/nn/ops.hpp"
#include "cfx/nn/optim.hpp"
#include "doctest.h"
#include "gradcheck.hpp"

using namespace cfx;
using namespace cfx::nn;
using cfx::testing::grad_check;
using cfx::testing::random_tensor;

namespace {

Var param(Shape s, std::mt19937_64& rng) { return Var(random_tensor(s, rng), true); }

// Weighted sum so every output element carries a distinct upstream gradient.
Var probe(const Var& y, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    Var w(random_tensor(y.shape(), rng));
    return sum(mul(y, w));
}

}  // namespace

TEST_CASE("op gradients match central differences") {
    std::mt19937_64 rng(11);

    SUBCASE("conv2d with stride and padding") {
        Var x = param({2, 3, 7, 6}, rng);
        Var w = param({4, 3, 3, 3}, rng);
        Var b = param({1, 4, 1, 1}, rng);
        auto r = grad_check({x, w, b}, [&] { return probe(conv2d(x, w, b, 2, 1), 1); });
        CHECK(r.max_rel_error < 1e-6);
    }
    SUBCASE("conv_transpose2d") {
        Var x = param({2, 3, 4, 4}, rng);
        Var w = param({3, 2, 3, 3}, rng);
        Var b = param({1, 2, 1, 1}, rng);
        auto r = grad_check({x, w, b},
                            [&] { return probe(conv_transpose2d(x, w, b, 2, 1, 1), 2); });
        CHECK(conv_transpose2d(x, w, b, 2, 1, 1).shape() == Shape{2, 2, 8, 8});
        CHECK(r.max_rel_error < 1e-6);
    }
    SUBCASE("reflection pad and max pool") {
        Var x = param({1, 2, 5, 6}, rng);
        auto r = grad_check({x}, [&] { return probe(max_pool2d(reflection_pad(x, 2), 2, 2), 3); });
        CHECK(r.max_rel_error < 1e-6);
    }
    SUBCASE("instance norm") {
        Var x = param({2, 2, 4, 4}, rng);
        auto r = grad_check({x}, [&] { return probe(instance_norm(x, 1e-5), 4); });
        CHECK(r.max_rel_error < 1e-5);
    }
    SUBCASE("batch norm, training statistics") {
        Var x = param({3, 2, 3, 3}, rng);
        Var g = param({1, 2, 1, 1}, rng);
        Var b = param({1, 2, 1, 1}, rng);
        auto r = grad_check({x, g, b},
                            [&] { return probe(batch_norm_train(x, g, b, 1e-3, nullptr), 5); });
        CHECK(r.max_rel_error < 1e-5);
    }
    SUBCASE("batch norm, running statistics") {
        Var x = param({3, 2, 3, 3}, rng);
        Var g = param({1, 2, 1, 1}, rng);
        Var b = param({1, 2, 1, 1}, rng);
        Tensor rm = random_tensor({1, 2, 1, 1}, rng);
        Tensor rv = random_tensor({1, 2, 1, 1}, rng, 0.5, 2.0);
        auto r = grad_check({x, g, b},
                            [&] { return probe(batch_norm_eval(x, g, b, rm, rv, 1e-3), 6); });
        CHECK(r.max_rel_error < 1e-6);
    }
    SUBCASE("dense and softmax") {
        Var x = param({3, 2, 2, 2}, rng);
        Var w = param({4, 8, 1, 1}, rng);
        Var b = param({1, 4, 1, 1}, rng);
        auto r = grad_check({x, w, b}, [&] { return probe(softmax(dense(x, w, b)), 7); });
        CHECK(r.max_rel_error < 1e-6);
    }
    SUBCASE("pointwise nonlinearities and reductions") {
        Var x = param({1, 3, 4, 4}, rng);
        Var y = param({1, 3, 4, 4}, rng);
        auto r = grad_check({x, y}, [&] {
            Var h = add(tanh(x), leaky_relu(y, 0.2));
            h = sub(h, mul(sigmoid(x), relu(y)));
            h = add(h, softplus(scale(x, 3.0)));
            return add(mean(abs(h)), sum(square(add_scalar(y, 0.5))));
        });
        CHECK(r.max_rel_error < 1e-6);
    }
}

TEST_CASE("constants do not join the tape") {
    Var a(Tensor({1, 1, 2, 2}, 1.0));
    Var b(Tensor({1, 1, 2, 2}, 2.0));
    Var c = add(a, b);
    CHECK_FALSE(c.requires_grad());
    CHECK(c.node()->parents.empty());
}

TEST_CASE("softmax rows are normalised") {
    std::mt19937_64 rng(3);
    Var x(random_tensor({5, 2, 1, 1}, rng, -20, 20));
    Var p = softmax(x);
    for (int n = 0; n < 5; ++n) {
        CHECK(p.value().at(n, 0, 0, 0) + p.value().at(n, 1, 0, 0) ==
              doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("network construction reports the failing layer") {
    nlohmann::json spec = {{"input", {1, 8, 8}},
                           {"layers",
                            {{{"type", "conv"}, {"in", 1}, {"out", 2}, {"kernel", 3}},
                             {{"type", "max_pool"}},
                             {{"type", "conv"}, {"in", 2}, {"out", 2}, {"kernel", 5}}}}};
    try {
        Network net(spec);
        FAIL("expected a validation error");
    } catch (const ValidationError& e) {
        CHECK(std::string(e.what()).find("layer 3") != std::string::npos);
    }
}

TEST_CASE("weights round-trip bit-exactly and checksums follow values") {
    nlohmann::json spec = {
        {"input", {1, 6, 6}},
        {"layers",
         {{{"type", "conv"}, {"in", 1}, {"out", 3}, {"kernel", 3}, {"activation", "relu"}},
          {{"type", "batch_norm"}, {"channels", 3}},
          {{"type", "residual"},
           {"body", {{{"type", "conv"}, {"in", 3}, {"out", 3}, {"kernel", 3}, {"pad", 1}}}}},
          {{"type", "flatten"}},
          {{"type", "dense"}, {"in", 48}, {"out", 2}}}}};
    Network a(spec);
    a.initialize(InitScheme::HeNormal, 5);
    // Move running statistics away from their defaults.
    std::mt19937_64 rng(1);
    ForwardContext ctx{true, &rng};
    a.forward(Var(random_tensor({4, 1, 6, 6}, rng)), ctx);

    const auto path = std::filesystem::temp_directory_path() / "cfx_test_weights.bin";
    a.save_weights(path);
    Network b(a.spec());
    CHECK(b.checksum() != a.checksum());
    b.load_weights(path);
    CHECK(b.checksum() == a.checksum());
    for (std::size_t i = 0; i < a.parameters().size(); ++i) {
        const auto& va = a.parameters()[i].var.value();
        const auto& vb = b.parameters()[i].var.value();
        CHECK(std::equal(va.values().begin(), va.values().end(), vb.values().begin()));
    }
    std::filesystem::remove(path);
}

TEST_CASE("frozen networks accumulate no gradients") {
    nlohmann::json spec = {{"input", {1, 4, 4}},
                           {"layers", {{{"type", "flatten"}}, {{"type", "dense"}, {"in", 16}, {"out", 2}}}}};
    Network net(spec);
    net.initialize(InitScheme::GlorotUniform, 2);
    net.set_trainable(false);
    std::mt19937_64 rng(2);
    Var x(random_tensor({1, 1, 4, 4}, rng), true);
    backward(sum(net(x)));
    CHECK_FALSE(x.grad().empty());
    for (const auto& p : net.parameters()) CHECK(p.var.grad().empty());
}

TEST_CASE("sgd and adam reduce a quadratic") {
    Var w(Tensor({1, 1, 1, 3}, 2.0), true);
    Sgd sgd({{"w.weight", w}}, 0.1, 0.3);
    double last = 1e9;
    for (int i = 0; i < 5; ++i) {
        sgd.zero_grad();
        Var l = sum(square(w));
        CHECK(l.item() < last);
        last = l.item();
        backward(l);
        sgd.step();
    }
    Var u(Tensor({1, 1, 1, 3}, 2.0), true);
    Adam adam({{"u", u}}, 0.1, 0.5, 0.999);
    last = 1e9;
    for (int i = 0; i < 5; ++i) {
        adam.zero_grad();
        Var l = sum(square(u));
        CHECK(l.item() < last);
        last = l.item();
        backward(l);
        adam.step();
    }
}
