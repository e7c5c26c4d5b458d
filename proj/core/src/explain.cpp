#include "cfx/explain.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <set>

#include "cfx/error.hpp"
#include "cfx/image_io.hpp"

namespace cfx::explain {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json probs_json(const clf::ProbPair& p) { return {{"p_normal", p.p_x}, {"p_opacity", p.p_y}}; }

}  // namespace

std::string_view to_string(GeneratorUsed g) { return g == GeneratorUsed::G ? "G" : "F"; }

json ExplanationResult::to_json() const {
    return {{"original_id", original_id},
            {"original_probs", probs_json(original_probs)},
            {"counterfactual_probs", probs_json(counterfactual_probs)},
            {"original_decision", std::string(cfx::to_string(original_decision))},
            {"counterfactual_decision", std::string(cfx::to_string(counterfactual_decision))},
            {"flipped", flipped},
            {"l1_proximity", l1_proximity},
            {"generator_used", std::string(explain::to_string(generator_used))}};
}

Explainer::Explainer(const gan::GanBundle& bundle, const clf::ClassifierModel& classifier)
    : bundle_(bundle), classifier_(classifier) {
    bundle.verify_classifier(classifier);
    if (bundle.config().resolution != classifier.resolution()) {
        throw ValidationError("bundle resolution " + std::to_string(bundle.config().resolution) +
                              " differs from classifier resolution " +
                              std::to_string(classifier.resolution()));
    }
}

Image Explainer::translate(const Image& pixels, Label decision) const {
    const nn::Network& gen = decision == Label::Normal ? bundle_.G : bundle_.F;
    return Image::from_tensor(gen(nn::Var(pixels.to_tensor())).value());
}

ExplanationResult Explainer::explain(const Image& pixels, std::string id) const {
    ExplanationResult r;
    r.original_id = std::move(id);
    r.original_probs = classifier_.predict(pixels);
    r.original_decision = r.original_probs.decision();
    r.generator_used = r.original_decision == Label::Normal ? GeneratorUsed::G : GeneratorUsed::F;
    r.counterfactual_pixels = translate(pixels, r.original_decision);
    r.counterfactual_probs = classifier_.predict(r.counterfactual_pixels);
    r.counterfactual_decision = r.counterfactual_probs.decision();
    r.flipped = r.original_decision != r.counterfactual_decision;
    r.l1_proximity = mean_abs_diff(pixels, r.counterfactual_pixels);
    r.original_pixels = pixels;
    return r;
}

ExplanationResult explain(const gan::GanBundle& bundle, const clf::ClassifierModel& classifier,
                          const Image& pixels, std::string id) {
    return Explainer(bundle, classifier).explain(pixels, std::move(id));
}

std::vector<Image> interpolate(const Image& original, const Image& counterfactual, int steps) {
    if (steps < 2) throw ValidationError("interpolation needs at least 2 steps, got " + std::to_string(steps));
    if (original.side() != counterfactual.side()) {
        throw ValidationError("cannot interpolate between " + std::to_string(original.side()) +
                              " px and " + std::to_string(counterfactual.side()) + " px images");
    }
    const auto a = original.pixels();
    const auto b = counterfactual.pixels();
    std::vector<Image> frames;
    frames.reserve(steps);
    for (int i = 0; i < steps; ++i) {
        const double t = static_cast<double>(i) / (steps - 1);
        std::vector<double> px(a.size());
        for (std::size_t k = 0; k < a.size(); ++k) {
            px[k] = std::clamp((1.0 - t) * a[k] + t * b[k], -1.0, 1.0);
        }
        frames.emplace_back(original.side(), std::move(px));
    }
    return frames;
}

json PairPlan::to_json() const {
    json p = json::array();
    for (const auto& [a, b] : pairs) p.push_back({a, b});
    return {{"class_names", class_names}, {"pairs", p}, {"model_count", pairs.size()}};
}

PairPlan plan_pairs(std::vector<std::string> class_names) {
    if (class_names.size() < 2) {
        throw ValidationError("plan_pairs needs at least 2 classes, got " +
                              std::to_string(class_names.size()));
    }
    std::set<std::string> seen;
    for (const auto& c : class_names) {
        if (c.empty()) throw ValidationError("class names must be nonempty");
        if (!seen.insert(c).second) throw ValidationError("duplicate class name '" + c + "'");
    }
    PairPlan plan;
    plan.class_names = class_names;
    std::sort(class_names.begin(), class_names.end());
    for (std::size_t i = 0; i < class_names.size(); ++i) {
        for (std::size_t j = i + 1; j < class_names.size(); ++j) {
            plan.pairs.emplace_back(class_names[i], class_names[j]);
        }
    }
    return plan;
}

void write_explanation(const ExplanationResult& result, const fs::path& dir,
                       const clf::ClassifierModel& classifier, int frames) {
    fs::create_directories(dir);
    io::write_png(dir / "original.png", result.original_pixels);
    io::write_png(dir / "counterfactual.png", result.counterfactual_pixels);
    json j = result.to_json();
    if (frames != 0) {
        const auto seq = interpolate(result.original_pixels, result.counterfactual_pixels, frames);
        json list = json::array();
        for (int i = 0; i < frames; ++i) {
            char name[32];
            std::snprintf(name, sizeof name, "frame_%02d.png", i);
            io::write_png(dir / "frames" / name, seq[i]);
            const auto p = classifier.predict(seq[i]);
            list.push_back({{"t", static_cast<double>(i) / (frames - 1)},
                            {"png", std::string("frames/") + name},
                            {"probs", probs_json(p)}});
        }
        j["frames"] = list;
    }
    std::ofstream(dir / "result.json") << j.dump(2) << "\n";
}

}  // namespace cfx::explain
