#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cfx/dataset.hpp"
#include "cfx/image.hpp"
#include "cfx/nn/network.hpp"
#include "cfx/nn/optim.hpp"

namespace cfx::clf {

enum class Architecture { AlexNetVariant, SmallCnn };

std::string_view to_string(Architecture a);
Architecture parse_architecture(std::string_view text);

struct SgdSettings {
    double learning_rate = 0.0001;
    double momentum = 0.9;
    /// The learning rate ramps linearly from lr/warmup_steps to lr over this
    /// many steps; 0 disables the ramp.
    int warmup_steps = 0;
};

struct ClassifierConfig {
    int resolution = 64;
    Architecture architecture = Architecture::SmallCnn;
    double l2_factor = 0.0;
    double dropout_p = 0.0;
    SgdSettings optimizer;
    int batch_size = 32;
    int epochs = 30;

    /// Training defaults for an architecture. ALEXNET_VARIANT follows the
    /// reference configuration (SGD lr 1e-4, momentum 0.9, batch 32, L2 1e-3,
    /// dropout 0.4, 1000 epochs); SMALL_CNN is tuned for desk-scale runs.
    static ClassifierConfig defaults(Architecture arch, int resolution);

    void validate() const;
    nlohmann::json to_json() const;
    static ClassifierConfig from_json(const nlohmann::json& j);
};

/// Softmax output (p_x, p_y) of the binary classifier.
struct ProbPair {
    double p_x = 0.5;
    double p_y = 0.5;

    /// Argmax; an exact tie resolves to NORMAL (index 0).
    Label decision() const { return p_y > p_x ? Label::Opacity : Label::Normal; }
    bool valid(double tol = 1e-6) const;

    friend bool operator==(const ProbPair&, const ProbPair&) = default;
};

struct EpochRecord {
    int epoch = 0;
    double train_loss = 0.0;
    double train_accuracy = 0.0;
    double val_loss = 0.0;
    double val_accuracy = 0.0;
};

/// Layer stack for an architecture; the network emits logits [N, 2, 1, 1].
/// Throws ValidationError naming the offending layer when the resolution
/// collapses a feature map.
nlohmann::json architecture_spec(const ClassifierConfig& config);

class ClassifierModel {
public:
    ClassifierModel(ClassifierConfig config, nn::Network network);

    const ClassifierConfig& config() const { return config_; }
    const nn::Network& network() const { return network_; }
    nn::Network& network() { return network_; }
    int resolution() const { return config_.resolution; }

    /// Validates shape and range, then returns the softmax pair.
    ProbPair predict(const Image& image) const;
    std::vector<ProbPair> predict_batch(std::span<const Image> images) const;

    /// Differentiable probabilities [N, 2, 1, 1] in inference mode. Gradients
    /// reach the input; parameters receive none once frozen.
    nn::Var probabilities(const nn::Var& images) const;

    void freeze();
    bool frozen() const { return !network_.trainable(); }
    std::string checksum() const { return network_.checksum(); }

    const std::vector<EpochRecord>& training_log() const { return log_; }
    void set_training_log(std::vector<EpochRecord> log) { log_ = std::move(log); }

    /// Writes config.json, weights.bin and training_log.csv into `dir`.
    void save(const std::filesystem::path& dir) const;
    /// Loaded models are frozen.
    static ClassifierModel load(const std::filesystem::path& dir);

private:
    ClassifierConfig config_;
    nn::Network network_;
    std::vector<EpochRecord> log_;
};

/// Untrained model with initialised weights.
ClassifierModel build(const ClassifierConfig& config, std::uint64_t seed = 0);

/// Minibatch trainer: MSE between softmax output and one-hot targets, SGD
/// with momentum and L2 on conv/dense parameters.
class ClassifierTrainer {
public:
    ClassifierTrainer(ClassifierModel& model, const ClassifierConfig& config, std::uint64_t seed);

    /// One optimizer step in training mode; returns the batch loss before it.
    double step(const nn::Tensor& images, std::span<const Label> labels);
    /// Inference-mode MSE on a batch (no update).
    double loss(const nn::Tensor& images, std::span<const Label> labels) const;

private:
    ClassifierModel& model_;
    nn::Sgd sgd_;
    SgdSettings settings_;
    long steps_ = 0;
    std::mt19937_64 rng_;
};

struct TrainOptions {
    /// Receives every finished epoch.
    std::function<void(const EpochRecord&)> on_epoch;
};

/// Trains and returns the best-on-validation model (ties go to the later
/// epoch), frozen.
ClassifierModel train(ClassifierModel model, const data::DatasetManifest& manifest,
                      const ClassifierConfig& config, std::uint64_t seed,
                      const TrainOptions& options = {});

struct ClassifierMetrics {
    double accuracy = 0.0;
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
    double f2 = 0.0;
    std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
    /// confusion[label][decision]
    std::array<std::array<std::size_t, 2>, 2> confusion{};

    nlohmann::json to_json() const;
};

/// F-beta with OPACITY as the positive class; 0 when precision + recall is 0.
double f_beta(double precision, double recall, double beta);
ClassifierMetrics metrics_from_counts(std::size_t tp, std::size_t fp, std::size_t fn,
                                      std::size_t tn);

ClassifierMetrics evaluate_classifier(const ClassifierModel& model,
                                      const data::DatasetManifest& manifest, Split split);

}  // namespace cfx::clf
