#pragma once

#include <cstdint>
#include <deque>
#include <filesystem>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "cfx/classifier.hpp"
#include "cfx/dataset.hpp"
#include "cfx/nn/network.hpp"

namespace cfx::gan {

/// Weights of the composite objective and the counter-loss targets.
struct LossWeights {
    double lambda_cycle = 10.0;
    double mu_identity = 1.0;
    double gamma_counter = 1.0;
    clf::ProbPair target_y{0.0, 1.0};  // for G outputs
    clf::ProbPair target_x{1.0, 0.0};  // for F outputs

    void validate() const;
    nlohmann::json to_json() const;
    static LossWeights from_json(const nlohmann::json& j);
};

enum class AdversarialForm { LeastSquares, Log };

std::string_view to_string(AdversarialForm f);
AdversarialForm parse_adversarial_form(std::string_view text);

struct AdamSettings {
    double learning_rate = 0.0002;
    double beta1 = 0.5;
    double beta2 = 0.999;
};

struct GeneratorSettings {
    /// "resnet", "single_conv" or "identity".
    std::string architecture = "resnet";
    int filters = 64;
    /// 0 picks 6 blocks at resolution <= 128 and 9 above.
    int residual_blocks = 0;
};

struct PatchGanSettings {
    /// "patchgan" or "single_conv".
    std::string architecture = "patchgan";
    int filters = 64;
    /// Stride-2 convolutions; 0 derives it from the resolution.
    int n_downsample_layers = 0;
};

struct GanConfig {
    int resolution = 64;
    AdamSettings optimizer;
    int batch_size = 1;
    int epochs = 20;
    LossWeights weights;
    GeneratorSettings generator;
    PatchGanSettings patch_gan;
    AdversarialForm adversarial = AdversarialForm::LeastSquares;
    int pool_size = 50;
    /// Caps the steps of one epoch; 0 means one pass over the larger class.
    int max_steps_per_epoch = 0;

    /// Reduced filter counts and epochs for CPU-scale runs at 64 px.
    static GanConfig desk(int resolution = 64);

    int residual_blocks() const;
    int n_downsample_layers() const;

    void validate() const;
    nlohmann::json to_json() const;
    static GanConfig from_json(const nlohmann::json& j);
};

nlohmann::json generator_spec(const GanConfig& config);
nlohmann::json discriminator_spec(const GanConfig& config);

/// Per-epoch means of the loss components.
struct EpochLosses {
    int epoch = 0;
    std::map<std::string, double> components;
};

/// G: X -> Y, F: Y -> X, discriminators D_X and D_Y, and the checksum of the
/// classifier the counter loss was computed with.
class GanBundle {
public:
    GanBundle() = default;

    /// Fresh networks initialised from N(0, 0.02).
    static GanBundle create(const GanConfig& config, std::string classifier_ref,
                            std::uint64_t seed);

    const GanConfig& config() const { return config_; }
    const std::string& classifier_ref() const { return classifier_ref_; }

    nn::Network G;
    nn::Network F;
    nn::Network DX;
    nn::Network DY;
    std::vector<EpochLosses> training_log;

    /// Throws ValidationError unless `classifier` is the one recorded here.
    void verify_classifier(const clf::ClassifierModel& classifier) const;
    void freeze();
    std::string checksum() const;

    /// Writes {G,F,DX,DY}.bin, config.json and classifier_ref.txt into `dir`.
    void save(const std::filesystem::path& dir) const;
    /// Loaded bundles are frozen.
    static GanBundle load(const std::filesystem::path& dir);

private:
    GanConfig config_;
    std::string classifier_ref_;
};

/// Highest-numbered gan/epoch_<n> directory below `gan_dir`.
std::filesystem::path latest_epoch_dir(const std::filesystem::path& gan_dir);

// Loss terms. All return scalar Vars so they can be differentiated.

struct AdversarialTerms {
    nn::Var d_loss;
    nn::Var g_loss;
};

/// Least squares: d = mean((D(real) - 1)^2) + mean(D(fake)^2),
/// g = mean((D(fake) - 1)^2). Log form uses softplus of the raw scores.
AdversarialTerms adversarial_loss(const nn::Network& D, const nn::Var& real, const nn::Var& fake,
                                  AdversarialForm form = AdversarialForm::LeastSquares);

/// The same terms from precomputed score grids.
nn::Var discriminator_term(const nn::Var& real_scores, const nn::Var& fake_scores,
                           AdversarialForm form);
nn::Var generator_term(const nn::Var& fake_scores, AdversarialForm form);

/// mean|F(G(x)) - x| + mean|G(F(y)) - y|
nn::Var cycle_loss(const nn::Network& G, const nn::Network& F, const nn::Var& x,
                   const nn::Var& y);
/// mean|G(y) - y| + mean|F(x) - x|
nn::Var identity_loss(const nn::Network& G, const nn::Network& F, const nn::Var& x,
                      const nn::Var& y);
/// Batch mean of ||C(G(x)) - target_y||^2 plus the same for F(y) and target_x.
/// The classifier must be frozen; gradients reach G and F only.
nn::Var counter_loss(const nn::Network& G, const nn::Network& F,
                     const clf::ClassifierModel& C, const nn::Var& x, const nn::Var& y,
                     const LossWeights& weights);

/// Same as counter_loss on precomputed translations.
nn::Var counter_term(const clf::ClassifierModel& C, const nn::Var& fake_y, const nn::Var& fake_x,
                     const LossWeights& weights);

struct Objective {
    /// adv_g, adv_f, adv_dx, adv_dy, cycle, identity, counter.
    std::map<std::string, nn::Var> components;
    nn::Var generator_total;
    nn::Var discriminator_total;

    std::map<std::string, double> values() const;
};

/// generator_total = adv_g + adv_f + lambda*cycle + mu*identity + gamma*counter;
/// discriminator_total = adv_dx + adv_dy.
Objective total_objective(const GanBundle& bundle, const clf::ClassifierModel& C,
                          const nn::Var& x, const nn::Var& y, const LossWeights& weights);

/// History of generated images; once full, each query swaps the incoming
/// image for a stored one with probability 1/2.
class ImagePool {
public:
    explicit ImagePool(int capacity) : capacity_(capacity) {}

    nn::Tensor query(const nn::Tensor& images, std::mt19937_64& rng);
    std::size_t size() const { return images_.size(); }

private:
    int capacity_;
    std::vector<nn::Tensor> images_;
};

struct GanTrainOptions {
    /// Receives gan/epoch_<n>/ checkpoints and gan/losses.csv when set.
    std::filesystem::path gan_dir;
    std::function<void(const EpochLosses&)> on_epoch;
};

/// Alternating training: per step D_X and D_Y are updated on pooled fakes,
/// then G and F jointly on the generator total with the discriminators fixed.
GanBundle train_gan(const data::DatasetManifest& manifest, const clf::ClassifierModel& C,
                    const GanConfig& config, std::uint64_t seed,
                    const GanTrainOptions& options = {});

}  // namespace cfx::gan
