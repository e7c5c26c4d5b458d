#pragma once

#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "cfx/classifier.hpp"
#include "cfx/gan.hpp"
#include "cfx/image.hpp"

namespace cfx::explain {

enum class GeneratorUsed { G, F };

std::string_view to_string(GeneratorUsed g);

struct ExplanationResult {
    std::string original_id;
    Image original_pixels;
    Image counterfactual_pixels;
    clf::ProbPair original_probs;
    clf::ProbPair counterfactual_probs;
    Label original_decision = Label::Normal;
    Label counterfactual_decision = Label::Normal;
    bool flipped = false;
    double l1_proximity = 0.0;
    GeneratorUsed generator_used = GeneratorUsed::G;

    /// Probabilities, decisions, proximity and routing; no pixels.
    nlohmann::json to_json() const;
};

/// Binds a frozen bundle to the classifier it was trained against. The
/// checksum check happens once, here.
class Explainer {
public:
    Explainer(const gan::GanBundle& bundle, const clf::ClassifierModel& classifier);

    /// NORMAL decisions go through G, OPACITY decisions through F.
    ExplanationResult explain(const Image& pixels, std::string id = {}) const;
    /// The translation alone, routed by `decision`.
    Image translate(const Image& pixels, Label decision) const;

    const clf::ClassifierModel& classifier() const { return classifier_; }

private:
    const gan::GanBundle& bundle_;
    const clf::ClassifierModel& classifier_;
};

ExplanationResult explain(const gan::GanBundle& bundle, const clf::ClassifierModel& classifier,
                          const Image& pixels, std::string id = {});

/// frame_i = (1 - t_i) * original + t_i * counterfactual with t_i = i / (steps - 1).
std::vector<Image> interpolate(const Image& original, const Image& counterfactual, int steps);

struct PairPlan {
    std::vector<std::string> class_names;
    std::vector<std::pair<std::string, std::string>> pairs;

    nlohmann::json to_json() const;
};

/// Every unordered pair of classes, one translation bundle each, in
/// lexicographic order.
PairPlan plan_pairs(std::vector<std::string> class_names);

/// Writes result.json, original.png, counterfactual.png and, when `frames`
/// >= 2, frames/frame_<i>.png plus a per-frame entry in result.json.
void write_explanation(const ExplanationResult& result, const std::filesystem::path& dir,
                       const clf::ClassifierModel& classifier, int frames = 0);

}  // namespace cfx::explain
