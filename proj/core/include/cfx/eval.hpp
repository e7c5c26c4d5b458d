#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>

#include <nlohmann/json.hpp>

#include "cfx/classifier.hpp"
#include "cfx/dataset.hpp"
#include "cfx/gan.hpp"

namespace cfx::eval {

/// counts[pre][post], indexed by Label.
using FlipMatrix = std::array<std::array<std::size_t, 2>, 2>;

std::size_t matrix_total(const FlipMatrix& m);
/// Off-diagonal count.
std::size_t matrix_flipped(const FlipMatrix& m);

struct FlipReport {
    /// Keyed by the classifier's decision before translation.
    FlipMatrix normal{}, opacity{}, total{};
    double flip_accuracy_normal = 0.0;
    double flip_accuracy_opacity = 0.0;
    double flip_accuracy_total = 0.0;

    /// Keyed by ground-truth label instead, for comparison.
    FlipMatrix label_normal{}, label_opacity{};
    double label_flip_accuracy_normal = 0.0;
    double label_flip_accuracy_opacity = 0.0;

    double mean_l1_proximity = 0.0;
    std::size_t n_images = 0;
    std::string bundle_tag;
    std::string split;

    /// Throws std::logic_error when a matrix does not add up.
    void check_conservation() const;

    nlohmann::json to_json() const;
    /// Pre-decision rows, post-decision columns, one block per subset.
    std::string text_table() const;
};

/// Translates every image of `split` with the routed generator and counts
/// decision changes. An empty subset reports a flip accuracy of 0.
FlipReport evaluate_flips(const gan::GanBundle& bundle, const clf::ClassifierModel& classifier,
                          const data::DatasetManifest& manifest, Split split,
                          std::string bundle_tag = {});

/// Writes <stem>.json and <stem>.txt.
void write_report(const FlipReport& report, const std::filesystem::path& dir,
                  const std::string& stem);

struct AblationResult {
    FlipReport report_gamma_on;
    FlipReport report_gamma_off;

    nlohmann::json to_json() const;
    std::string summary() const;
};

struct AblationOptions {
    /// Bundles go to <dir>/gamma_on/gan and <dir>/gamma_off/gan, reports to
    /// <dir>/ablation.{json,txt}. Required: evaluation reloads checkpoints.
    std::filesystem::path dir;
    Split split = Split::Test;
    std::function<void(const std::string& tag, const gan::EpochLosses&)> on_epoch;
};

/// Trains two bundles that differ only in gamma (the configured value, or 1
/// when it is 0, against 0) with the same seed, and evaluates both from their
/// last checkpoint.
AblationResult ablation(const data::DatasetManifest& manifest, const clf::ClassifierModel& classifier,
                        const gan::GanConfig& config, std::uint64_t seed,
                        const AblationOptions& options);

}  // namespace cfx::eval
