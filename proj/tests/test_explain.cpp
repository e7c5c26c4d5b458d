#include <fstream>
#include <set>

#include "cfx/error.hpp"
#include "cfx/explain.hpp"
#include "cfx/image_io.hpp"
#include "doctest.h"
#include "fixtures.hpp"

using namespace cfx;
using namespace cfx::explain;
using cfx::testing::TempDir;
using cfx::testing::tiny_classifier;

namespace {

Image random_image(int side, std::mt19937_64& rng) {
    return Image::from_tensor(cfx::testing::random_tensor({1, 1, side, side}, rng));
}

gan::GanBundle trained_like(const clf::ClassifierModel& C, std::uint64_t seed) {
    auto b = gan::GanBundle::create(cfx::testing::micro_config(C.resolution()), C.checksum(), seed);
    for (const auto& p : b.G.parameters()) {
        nn::Var v = p.var;
        for (double& w : v.mutable_value().values()) w *= 40.0;
    }
    for (const auto& p : b.F.parameters()) {
        nn::Var v = p.var;
        for (double& w : v.mutable_value().values()) w *= 40.0;
    }
    b.freeze();
    return b;
}

}  // namespace

TEST_CASE("explain routes by the classifier decision") {
    const auto C = tiny_classifier(8, 2, 3.0);
    const auto b = trained_like(C, 4);
    const Explainer ex(b, C);
    std::mt19937_64 rng(5);
    int routed[2] = {0, 0};
    for (int i = 0; i < 40; ++i) {
        const Image img = random_image(8, rng);
        const auto r = ex.explain(img, "img" + std::to_string(i));
        const Label pre = C.predict(img).decision();
        CHECK(r.original_decision == pre);
        CHECK(r.generator_used == (pre == Label::Normal ? GeneratorUsed::G : GeneratorUsed::F));
        CHECK(r.counterfactual_pixels == ex.translate(img, pre));
        CHECK(r.flipped == (r.original_decision != r.counterfactual_decision));
        CHECK(r.original_pixels == img);
        CHECK(r.original_probs.valid());
        CHECK(r.counterfactual_probs == C.predict(r.counterfactual_pixels));
        CHECK(r.l1_proximity >= 0.0);
        CHECK(r.l1_proximity <= 2.0);

        double l1 = 0.0;
        for (int p = 0; p < 64; ++p) {
            l1 += std::abs(r.counterfactual_pixels.pixels()[p] - img.pixels()[p]);
        }
        CHECK(std::abs(r.l1_proximity - l1 / 64.0) <= 1e-12);
        ++routed[static_cast<int>(r.generator_used)];

        const auto again = ex.explain(img, "img" + std::to_string(i));
        CHECK(again.to_json() == r.to_json());
        CHECK(again.counterfactual_pixels == r.counterfactual_pixels);
    }
    CHECK(routed[0] > 0);
    CHECK(routed[1] > 0);
}

TEST_CASE("identity generators never flip") {
    const auto C = tiny_classifier(8, 2, 3.0);
    const auto b = cfx::testing::identity_bundle(C);
    std::mt19937_64 rng(6);
    for (int i = 0; i < 10; ++i) {
        const Image img = random_image(8, rng);
        const auto r = explain::explain(b, C, img);
        CHECK_FALSE(r.flipped);
        CHECK(r.l1_proximity == 0.0);
        CHECK(r.counterfactual_pixels == img);
    }
}

TEST_CASE("explain rejects mismatched models and images") {
    const auto C = tiny_classifier(8, 2);
    const auto b = trained_like(C, 1);
    CHECK_THROWS_AS(Explainer(b, tiny_classifier(8, 3)), ValidationError);
    const Explainer ex(b, C);
    CHECK_THROWS_AS(ex.explain(Image::filled(6, 0.0)), ValidationError);
}

TEST_CASE("interpolation is an exact linear blend") {
    std::mt19937_64 rng(7);
    const Image a = random_image(8, rng), b = random_image(8, rng);

    const auto two = interpolate(a, b, 2);
    REQUIRE(two.size() == 2);
    CHECK(two[0] == a);
    CHECK(two[1] == b);

    const auto mid = interpolate(Image::filled(4, 0.0), Image::filled(4, 1.0), 3);
    for (double v : mid[1].pixels()) CHECK(v == 0.5);

    const auto frames = interpolate(a, b, 11);
    REQUIRE(frames.size() == 11);
    CHECK(frames.front() == a);
    CHECK(frames.back() == b);
    double worst = 0.0;
    for (int i = 1; i + 1 < 11; ++i) {
        for (std::size_t p = 0; p < 64; ++p) {
            const double d2 = frames[i + 1].pixels()[p] - 2.0 * frames[i].pixels()[p] + frames[i - 1].pixels()[p];
            worst = std::max(worst, std::abs(d2));
        }
    }
    CHECK(worst <= 1e-7);

    for (const auto& f : interpolate(a, a, 5)) CHECK(f == a);
    CHECK_THROWS_AS(interpolate(a, b, 1), ValidationError);
    CHECK_THROWS_AS(interpolate(a, Image::filled(4, 0.0), 3), ValidationError);
}

TEST_CASE("pair planning enumerates unordered pairs") {
    for (int k = 2; k <= 8; ++k) {
        std::vector<std::string> names;
        for (int i = k - 1; i >= 0; --i) names.push_back(std::string(1, static_cast<char>('a' + i)));
        const auto plan = plan_pairs(names);
        std::size_t brute = 0;
        for (int i = 0; i < k; ++i) {
            for (int j = i + 1; j < k; ++j) ++brute;
        }
        CHECK(plan.pairs.size() == brute);
        CHECK(plan.pairs.size() == static_cast<std::size_t>(k * (k - 1) / 2));
        std::set<std::pair<std::string, std::string>> unique(plan.pairs.begin(), plan.pairs.end());
        CHECK(unique.size() == plan.pairs.size());
        CHECK(std::is_sorted(plan.pairs.begin(), plan.pairs.end()));
        for (const auto& [x, y] : plan.pairs) CHECK(x < y);
    }
    const auto four = plan_pairs({"d", "b", "c", "a"});
    CHECK(four.pairs.front() == std::pair<std::string, std::string>{"a", "b"});
    CHECK(four.to_json().at("model_count") == 6);

    CHECK_THROWS_AS(plan_pairs({"a"}), ValidationError);
    CHECK_THROWS_AS(plan_pairs({"a", "b", "a"}), ValidationError);
    CHECK_THROWS_AS(plan_pairs({"a", ""}), ValidationError);
}

TEST_CASE("explanations are written as JSON and PNGs") {
    TempDir dir("explain");
    const auto C = tiny_classifier(8, 2, 3.0);
    const auto b = trained_like(C, 4);
    std::mt19937_64 rng(8);
    const auto r = explain::explain(b, C, random_image(8, rng), "sample");
    write_explanation(r, dir / "sample", C, 5);

    const auto j = nlohmann::json::parse(std::ifstream(dir / "sample" / "result.json"));
    CHECK(j.at("original_id") == "sample");
    CHECK(j.at("flipped") == r.flipped);
    CHECK(j.at("generator_used") == std::string(to_string(r.generator_used)));
    REQUIRE(j.at("frames").size() == 5);
    CHECK(j.at("frames")[0].at("t") == 0.0);
    CHECK(j.at("frames")[4].at("t") == 1.0);
    CHECK(std::filesystem::exists(dir / "sample" / "original.png"));
    CHECK(std::filesystem::exists(dir / "sample" / "frames" / "frame_04.png"));
    const Image cf = io::read_image(dir / "sample" / "counterfactual.png");
    CHECK(mean_abs_diff(cf, r.counterfactual_pixels) <= 0.5 / 127.5 + 1e-12);
}
