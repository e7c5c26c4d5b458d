#include "cfx/gan.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "cfx/digest.hpp"
#include "cfx/error.hpp"
#include "cfx/nn/ops.hpp"
#include "cfx/nn/optim.hpp"

namespace cfx::gan {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
    std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
}

json conv(int in, int out, int k, int stride, int pad) {
    return {{"type", "conv"}, {"in", in}, {"out", out}, {"kernel", k}, {"stride", stride}, {"pad", pad}};
}
json norm() { return {{"type", "instance_norm"}, {"eps", 1e-5}}; }
json relu() { return {{"type", "relu"}}; }
json leaky() { return {{"type", "leaky_relu"}, {"slope", 0.2}}; }
json rpad(int p) { return {{"type", "reflection_pad"}, {"pad", p}}; }

json pair_json(const clf::ProbPair& p) { return json::array({p.p_x, p.p_y}); }
clf::ProbPair pair_from(const json& j) { return {j.at(0).get<double>(), j.at(1).get<double>()}; }

void check_batch(const nn::Var& a, const nn::Var& b, const char* what) {
    if (a.shape() != b.shape()) {
        throw ValidationError(std::string(what) + ": shape " + a.shape().str() + " vs " +
                              b.shape().str());
    }
}

nn::Var l1(const nn::Var& a, const nn::Var& b) { return nn::mean(nn::abs(nn::sub(a, b))); }

nn::Var target_distance(const nn::Var& probs, const clf::ProbPair& target) {
    const int n = probs.shape().n;
    nn::Tensor t(probs.shape());
    for (int i = 0; i < n; ++i) {
        t[2 * i] = target.p_x;
        t[2 * i + 1] = target.p_y;
    }
    // Sum over the two classes, mean over the batch.
    return nn::scale(nn::sum(nn::square(nn::sub(probs, nn::Var(t)))), 1.0 / n);
}

}  // namespace

void LossWeights::validate() const {
    if (lambda_cycle < 0 || mu_identity < 0 || gamma_counter < 0) {
        throw ValidationError("loss weights must be nonnegative");
    }
    if (!target_x.valid() || !target_y.valid()) {
        throw ValidationError("counter-loss targets must be probability pairs");
    }
}

json LossWeights::to_json() const {
    return {{"lambda_cycle", lambda_cycle},
            {"mu_identity", mu_identity},
            {"gamma_counter", gamma_counter},
            {"target_y", pair_json(target_y)},
            {"target_x", pair_json(target_x)}};
}

LossWeights LossWeights::from_json(const json& j) {
    LossWeights w;
    w.lambda_cycle = j.at("lambda_cycle");
    w.mu_identity = j.at("mu_identity");
    w.gamma_counter = j.at("gamma_counter");
    w.target_y = pair_from(j.at("target_y"));
    w.target_x = pair_from(j.at("target_x"));
    w.validate();
    return w;
}

std::string_view to_string(AdversarialForm f) {
    return f == AdversarialForm::LeastSquares ? "least_squares" : "log";
}

AdversarialForm parse_adversarial_form(std::string_view text) {
    if (text == "least_squares") return AdversarialForm::LeastSquares;
    if (text == "log") return AdversarialForm::Log;
    throw ValidationError("unknown adversarial loss form '" + std::string(text) + "'");
}

GanConfig GanConfig::desk(int resolution) {
    GanConfig c;
    c.resolution = resolution;
    c.generator.filters = 8;
    c.patch_gan.filters = 16;
    c.epochs = 2;
    return c;
}

int GanConfig::residual_blocks() const {
    if (generator.residual_blocks > 0) return generator.residual_blocks;
    return resolution <= 128 ? 6 : 9;
}

int GanConfig::n_downsample_layers() const {
    if (patch_gan.n_downsample_layers > 0) return patch_gan.n_downsample_layers;
    // 3 at 256 px, the 70x70 receptive-field configuration; one fewer per halving.
    const int log2 = static_cast<int>(std::floor(std::log2(std::max(resolution, 1))));
    return std::max(1, log2 - 5);
}

void GanConfig::validate() const {
    if (resolution <= 0) throw ValidationError("gan resolution must be positive");
    if (!(optimizer.learning_rate > 0)) throw ValidationError("gan learning_rate must be positive");
    if (optimizer.beta1 < 0 || optimizer.beta1 >= 1 || optimizer.beta2 < 0 || optimizer.beta2 >= 1) {
        throw ValidationError("adam betas must lie in [0, 1)");
    }
    if (batch_size <= 0) throw ValidationError("gan batch_size must be positive");
    if (epochs <= 0) throw ValidationError("gan epochs must be positive");
    if (pool_size < 0) throw ValidationError("pool_size must be nonnegative");
    if (max_steps_per_epoch < 0) throw ValidationError("max_steps_per_epoch must be nonnegative");
    if (generator.filters <= 0 || patch_gan.filters <= 0) {
        throw ValidationError("filter counts must be positive");
    }
    if (generator.residual_blocks < 0 || patch_gan.n_downsample_layers < 0) {
        throw ValidationError("layer counts must be nonnegative");
    }
    weights.validate();
}

json GanConfig::to_json() const {
    return {{"resolution", resolution},
            {"optimizer",
             {{"learning_rate", optimizer.learning_rate},
              {"beta1", optimizer.beta1},
              {"beta2", optimizer.beta2}}},
            {"batch_size", batch_size},
            {"epochs", epochs},
            {"weights", weights.to_json()},
            {"generator",
             {{"architecture", generator.architecture},
              {"filters", generator.filters},
              {"residual_blocks", residual_blocks()}}},
            {"patch_gan",
             {{"architecture", patch_gan.architecture},
              {"filters", patch_gan.filters},
              {"n_downsample_layers", n_downsample_layers()}}},
            {"adversarial_loss", std::string(to_string(adversarial))},
            {"pool_size", pool_size},
            {"max_steps_per_epoch", max_steps_per_epoch}};
}

GanConfig GanConfig::from_json(const json& j) {
    GanConfig c;
    c.resolution = j.at("resolution");
    c.optimizer.learning_rate = j.at("optimizer").at("learning_rate");
    c.optimizer.beta1 = j.at("optimizer").at("beta1");
    c.optimizer.beta2 = j.at("optimizer").at("beta2");
    c.batch_size = j.at("batch_size");
    c.epochs = j.at("epochs");
    c.weights = LossWeights::from_json(j.at("weights"));
    c.generator.architecture = j.at("generator").at("architecture");
    c.generator.filters = j.at("generator").at("filters");
    c.generator.residual_blocks = j.at("generator").at("residual_blocks");
    c.patch_gan.architecture = j.at("patch_gan").at("architecture");
    c.patch_gan.filters = j.at("patch_gan").at("filters");
    c.patch_gan.n_downsample_layers = j.at("patch_gan").at("n_downsample_layers");
    c.adversarial = parse_adversarial_form(j.value("adversarial_loss", "least_squares"));
    c.pool_size = j.value("pool_size", 50);
    c.max_steps_per_epoch = j.value("max_steps_per_epoch", 0);
    c.validate();
    return c;
}

json generator_spec(const GanConfig& c) {
    const int r = c.resolution;
    const std::string& arch = c.generator.architecture;
    json layers = json::array();
    if (arch == "identity") {
        layers.push_back({{"type", "identity"}});
    } else if (arch == "single_conv") {
        layers.push_back(conv(1, 1, 3, 1, 1));
        layers.push_back({{"type", "tanh"}});
    } else if (arch == "resnet") {
        const int f = c.generator.filters;
        layers = {rpad(3), conv(1, f, 7, 1, 0), norm(), relu(),
                  conv(f, 2 * f, 3, 2, 1), norm(), relu(),
                  conv(2 * f, 4 * f, 3, 2, 1), norm(), relu()};
        for (int b = 0; b < c.residual_blocks(); ++b) {
            layers.push_back({{"type", "residual"},
                              {"body", {rpad(1), conv(4 * f, 4 * f, 3, 1, 0), norm(), relu(),
                                        rpad(1), conv(4 * f, 4 * f, 3, 1, 0), norm()}}});
        }
        for (int in : {4 * f, 2 * f}) {
            layers.push_back({{"type", "conv_transpose"}, {"in", in}, {"out", in / 2},
                              {"kernel", 3}, {"stride", 2}, {"pad", 1}, {"output_pad", 1}});
            layers.push_back(norm());
            layers.push_back(relu());
        }
        layers.push_back(rpad(3));
        layers.push_back(conv(f, 1, 7, 1, 0));
        layers.push_back({{"type", "tanh"}});
    } else {
        throw ValidationError("unknown generator architecture '" + arch + "'");
    }
    return {{"input", {1, r, r}}, {"layers", layers}};
}

json discriminator_spec(const GanConfig& c) {
    const int r = c.resolution;
    const std::string& arch = c.patch_gan.architecture;
    json layers = json::array();
    if (arch == "single_conv") {
        layers.push_back(conv(1, 1, 3, 2, 1));
    } else if (arch == "patchgan") {
        const int f = c.patch_gan.filters;
        const int n = c.n_downsample_layers();
        layers.push_back(conv(1, f, 4, 2, 1));
        layers.push_back(leaky());
        int width = f;
        for (int i = 1; i < n; ++i) {
            const int next = f * std::min(1 << i, 8);
            layers.push_back(conv(width, next, 4, 2, 1));
            layers.push_back(norm());
            layers.push_back(leaky());
            width = next;
        }
        const int next = f * std::min(1 << n, 8);
        layers.push_back(conv(width, next, 4, 1, 1));
        layers.push_back(norm());
        layers.push_back(leaky());
        layers.push_back(conv(next, 1, 4, 1, 1));
    } else {
        throw ValidationError("unknown discriminator architecture '" + arch + "'");
    }
    return {{"input", {1, r, r}}, {"layers", layers}};
}

GanBundle GanBundle::create(const GanConfig& config, std::string classifier_ref,
                            std::uint64_t seed) {
    config.validate();
    GanBundle b;
    b.config_ = config;
    b.classifier_ref_ = std::move(classifier_ref);
    b.G = nn::Network(generator_spec(config));
    b.F = nn::Network(generator_spec(config));
    b.DX = nn::Network(discriminator_spec(config));
    b.DY = nn::Network(discriminator_spec(config));
    b.G.initialize(nn::InitScheme::Normal002, derive_seed(seed, 1));
    b.F.initialize(nn::InitScheme::Normal002, derive_seed(seed, 2));
    b.DX.initialize(nn::InitScheme::Normal002, derive_seed(seed, 3));
    b.DY.initialize(nn::InitScheme::Normal002, derive_seed(seed, 4));
    return b;
}

void GanBundle::verify_classifier(const clf::ClassifierModel& classifier) const {
    const std::string actual = classifier.checksum();
    if (actual != classifier_ref_) {
        throw ValidationError("classifier checksum " + actual.substr(0, 12) +
                              "... does not match the bundle's reference " +
                              classifier_ref_.substr(0, 12) + "...");
    }
}

void GanBundle::freeze() {
    for (auto* n : {&G, &F, &DX, &DY}) n->set_trainable(false);
}

std::string GanBundle::checksum() const {
    Sha256 h;
    for (const auto* n : {&G, &F, &DX, &DY}) {
        const std::string c = n->checksum();
        h.update(c.data(), c.size());
    }
    return h.hex();
}

void GanBundle::save(const fs::path& dir) const {
    fs::create_directories(dir);
    G.save_weights(dir / "G.bin");
    F.save_weights(dir / "F.bin");
    DX.save_weights(dir / "DX.bin");
    DY.save_weights(dir / "DY.bin");
    json cfg = config_.to_json();
    json log = json::array();
    for (const auto& e : training_log) log.push_back({{"epoch", e.epoch}, {"losses", e.components}});
    cfg["training_log"] = log;
    std::ofstream(dir / "config.json") << cfg.dump(2) << "\n";
    std::ofstream(dir / "classifier_ref.txt") << classifier_ref_ << "\n";
}

GanBundle GanBundle::load(const fs::path& dir) {
    for (const char* f : {"config.json", "classifier_ref.txt", "G.bin", "F.bin", "DX.bin", "DY.bin"}) {
        if (!fs::exists(dir / f)) {
            throw ValidationError("gan checkpoint " + dir.string() + " is missing " + f);
        }
    }
    json cfg;
    try {
        cfg = json::parse(std::ifstream(dir / "config.json"));
    } catch (const json::exception& e) {
        throw ValidationError("malformed " + (dir / "config.json").string() + ": " + e.what());
    }
    GanBundle b;
    b.config_ = GanConfig::from_json(cfg);
    std::ifstream ref(dir / "classifier_ref.txt");
    ref >> b.classifier_ref_;
    b.G = nn::Network(generator_spec(b.config_));
    b.F = nn::Network(generator_spec(b.config_));
    b.DX = nn::Network(discriminator_spec(b.config_));
    b.DY = nn::Network(discriminator_spec(b.config_));
    b.G.load_weights(dir / "G.bin");
    b.F.load_weights(dir / "F.bin");
    b.DX.load_weights(dir / "DX.bin");
    b.DY.load_weights(dir / "DY.bin");
    for (const auto& e : cfg.value("training_log", json::array())) {
        b.training_log.push_back({e.at("epoch"), e.at("losses").get<std::map<std::string, double>>()});
    }
    b.freeze();
    return b;
}

fs::path latest_epoch_dir(const fs::path& gan_dir) {
    if (!fs::is_directory(gan_dir)) {
        throw ValidationError("gan directory not found: " + gan_dir.string());
    }
    int best = -1;
    fs::path found;
    for (const auto& entry : fs::directory_iterator(gan_dir)) {
        const std::string name = entry.path().filename().string();
        if (!entry.is_directory() || name.rfind("epoch_", 0) != 0) continue;
        try {
            std::size_t used = 0;
            const int n = std::stoi(name.substr(6), &used);
            if (used == name.size() - 6 && n > best) {
                best = n;
                found = entry.path();
            }
        } catch (const std::exception&) {
        }
    }
    if (best < 0) throw ValidationError("no epoch_<n> checkpoint under " + gan_dir.string());
    return found;
}

nn::Var discriminator_term(const nn::Var& real_scores, const nn::Var& fake_scores,
                           AdversarialForm form) {
    if (form == AdversarialForm::LeastSquares) {
        return nn::mean(nn::square(nn::add_scalar(real_scores, -1.0))) +
               nn::mean(nn::square(fake_scores));
    }
    // -log sigmoid(r) - log(1 - sigmoid(f))
    return nn::mean(nn::softplus(nn::scale(real_scores, -1.0))) +
           nn::mean(nn::softplus(fake_scores));
}

nn::Var generator_term(const nn::Var& fake_scores, AdversarialForm form) {
    if (form == AdversarialForm::LeastSquares) {
        return nn::mean(nn::square(nn::add_scalar(fake_scores, -1.0)));
    }
    return nn::mean(nn::softplus(nn::scale(fake_scores, -1.0)));
}

AdversarialTerms adversarial_loss(const nn::Network& D, const nn::Var& real, const nn::Var& fake,
                                  AdversarialForm form) {
    if (real.shape().n == 0 || fake.shape().n == 0) {
        throw ValidationError("adversarial loss needs nonempty batches");
    }
    check_batch(real, fake, "adversarial loss");
    nn::ForwardContext ctx;
    const nn::Var fake_scores = D.forward(fake, ctx);
    return {discriminator_term(D.forward(real, ctx), nn::detach(fake_scores), form),
            generator_term(fake_scores, form)};
}

nn::Var cycle_loss(const nn::Network& G, const nn::Network& F, const nn::Var& x,
                   const nn::Var& y) {
    check_batch(x, y, "cycle loss");
    return l1(F(G(x)), x) + l1(G(F(y)), y);
}

nn::Var identity_loss(const nn::Network& G, const nn::Network& F, const nn::Var& x,
                      const nn::Var& y) {
    check_batch(x, y, "identity loss");
    return l1(G(y), y) + l1(F(x), x);
}

nn::Var counter_term(const clf::ClassifierModel& C, const nn::Var& fake_y, const nn::Var& fake_x,
                     const LossWeights& weights) {
    if (!C.frozen()) throw ValidationError("the counter loss needs a frozen classifier");
    return target_distance(C.probabilities(fake_y), weights.target_y) +
           target_distance(C.probabilities(fake_x), weights.target_x);
}

nn::Var counter_loss(const nn::Network& G, const nn::Network& F, const clf::ClassifierModel& C,
                     const nn::Var& x, const nn::Var& y, const LossWeights& weights) {
    check_batch(x, y, "counter loss");
    return counter_term(C, G(x), F(y), weights);
}

std::map<std::string, double> Objective::values() const {
    std::map<std::string, double> out;
    for (const auto& [name, v] : components) out[name] = v.item();
    out["gen_total"] = generator_total.item();
    out["disc_total"] = discriminator_total.item();
    return out;
}

namespace {

struct Translations {
    nn::Var fake_y, fake_x;
};

Objective compose(const GanBundle& b, const clf::ClassifierModel& C, const nn::Var& x,
                  const nn::Var& y, const Translations& t, const LossWeights& w,
                  nn::ForwardContext& ctx, bool with_disc) {
    const AdversarialForm form = b.config().adversarial;
    Objective o;
    o.components["adv_g"] = generator_term(b.DY.forward(t.fake_y, ctx), form);
    o.components["adv_f"] = generator_term(b.DX.forward(t.fake_x, ctx), form);
    o.components["cycle"] = l1(b.F.forward(t.fake_y, ctx), x) + l1(b.G.forward(t.fake_x, ctx), y);
    o.components["identity"] = l1(b.G.forward(y, ctx), y) + l1(b.F.forward(x, ctx), x);
    o.components["counter"] = counter_term(C, t.fake_y, t.fake_x, w);
    o.generator_total = o.components["adv_g"] + o.components["adv_f"] +
                        w.lambda_cycle * o.components["cycle"] +
                        w.mu_identity * o.components["identity"] +
                        w.gamma_counter * o.components["counter"];
    if (with_disc) {
        o.components["adv_dx"] = discriminator_term(b.DX.forward(x, ctx),
                                                    b.DX.forward(nn::detach(t.fake_x), ctx), form);
        o.components["adv_dy"] = discriminator_term(b.DY.forward(y, ctx),
                                                    b.DY.forward(nn::detach(t.fake_y), ctx), form);
        o.discriminator_total = o.components["adv_dx"] + o.components["adv_dy"];
    }
    return o;
}

}  // namespace

Objective total_objective(const GanBundle& bundle, const clf::ClassifierModel& C,
                          const nn::Var& x, const nn::Var& y, const LossWeights& weights) {
    check_batch(x, y, "total objective");
    weights.validate();
    bundle.verify_classifier(C);
    nn::ForwardContext ctx;
    const Translations t{bundle.G.forward(x, ctx), bundle.F.forward(y, ctx)};
    return compose(bundle, C, x, y, t, weights, ctx, true);
}

nn::Tensor ImagePool::query(const nn::Tensor& images, std::mt19937_64& rng) {
    if (capacity_ == 0) return images;
    const int n = images.shape().n;
    std::vector<nn::Tensor> out;
    std::uniform_real_distribution<double> coin(0.0, 1.0);
    for (int i = 0; i < n; ++i) {
        nn::Tensor item = images.batch_item(i);
        if (static_cast<int>(images_.size()) < capacity_) {
            images_.push_back(item);
            out.push_back(std::move(item));
        } else if (coin(rng) > 0.5) {
            std::uniform_int_distribution<std::size_t> pick(0, images_.size() - 1);
            const std::size_t k = pick(rng);
            out.push_back(images_[k]);
            images_[k] = std::move(item);
        } else {
            out.push_back(std::move(item));
        }
    }
    return nn::Tensor::stack(out);
}

namespace {

const std::vector<std::string> kColumns = {"adv_g", "adv_f", "adv_dx", "adv_dy", "cycle",
                                           "identity", "counter", "gen_total", "disc_total"};

std::vector<Image> train_images(const data::DatasetManifest& m, Label label) {
    std::vector<Image> out;
    for (const auto& e : m.entries) {
        if (e.split == Split::Train && e.label == label) out.push_back(data::load_sample(m, e).pixels);
    }
    return out;
}

nn::Tensor gather(const std::vector<Image>& images, const std::vector<std::size_t>& order,
                  std::size_t start, int batch) {
    std::vector<Image> picked;
    for (int i = 0; i < batch; ++i) picked.push_back(images[order[(start + i) % order.size()]]);
    return Image::batch(picked);
}

}  // namespace

GanBundle train_gan(const data::DatasetManifest& manifest, const clf::ClassifierModel& C,
                    const GanConfig& config, std::uint64_t seed, const GanTrainOptions& options) {
    config.validate();
    if (!C.frozen()) throw ValidationError("train_gan needs a frozen classifier");
    if (C.resolution() != config.resolution || manifest.resolution != config.resolution) {
        throw ValidationError("resolution mismatch: gan " + std::to_string(config.resolution) +
                              ", classifier " + std::to_string(C.resolution()) + ", manifest " +
                              std::to_string(manifest.resolution));
    }
    const std::vector<Image> xs = train_images(manifest, Label::Normal);
    const std::vector<Image> ys = train_images(manifest, Label::Opacity);
    if (xs.empty() || ys.empty()) {
        throw ValidationError("TRAIN split needs images of both classes (NORMAL " +
                              std::to_string(xs.size()) + ", OPACITY " + std::to_string(ys.size()) +
                              ")");
    }

    const std::string classifier_ref = C.checksum();
    GanBundle b = GanBundle::create(config, classifier_ref, seed);
    const LossWeights& w = config.weights;

    std::vector<nn::Parameter> gen_params = b.G.parameters();
    for (const auto& p : b.F.parameters()) gen_params.push_back(p);
    std::vector<nn::Parameter> disc_params = b.DX.parameters();
    for (const auto& p : b.DY.parameters()) disc_params.push_back(p);
    const auto& o = config.optimizer;
    nn::Adam gen_opt(gen_params, o.learning_rate, o.beta1, o.beta2);
    nn::Adam disc_opt(disc_params, o.learning_rate, o.beta1, o.beta2);

    ImagePool pool_x(config.pool_size), pool_y(config.pool_size);
    std::mt19937_64 data_rng(derive_seed(seed, 5));
    std::mt19937_64 pool_rng(derive_seed(seed, 6));
    nn::ForwardContext ctx{true, &pool_rng};

    std::ofstream csv;
    if (!options.gan_dir.empty()) {
        fs::create_directories(options.gan_dir);
        csv.open(options.gan_dir / "losses.csv");
        if (!csv) throw RuntimeFailure("cannot write " + (options.gan_dir / "losses.csv").string());
        csv << "epoch,step";
        for (const auto& c : kColumns) csv << ',' << c;
        csv << '\n';
        csv.precision(10);
    }

    std::vector<std::size_t> ox(xs.size()), oy(ys.size());
    std::size_t steps = (std::max(xs.size(), ys.size()) + config.batch_size - 1) / config.batch_size;
    if (config.max_steps_per_epoch > 0) {
        steps = std::min<std::size_t>(steps, config.max_steps_per_epoch);
    }

    auto set_disc = [&](bool on) {
        b.DX.set_trainable(on);
        b.DY.set_trainable(on);
    };

    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        std::iota(ox.begin(), ox.end(), 0);
        std::iota(oy.begin(), oy.end(), 0);
        std::shuffle(ox.begin(), ox.end(), data_rng);
        std::shuffle(oy.begin(), oy.end(), data_rng);
        std::map<std::string, double> sums;

        for (std::size_t step = 0; step < steps; ++step) {
            const nn::Var x(gather(xs, ox, step * config.batch_size, config.batch_size));
            const nn::Var y(gather(ys, oy, step * config.batch_size, config.batch_size));

            set_disc(false);
            const Translations t{b.G.forward(x, ctx), b.F.forward(y, ctx)};

            // Discriminators first, on pooled (detached) translations.
            set_disc(true);
            disc_opt.zero_grad();
            const nn::Var pooled_y(pool_y.query(t.fake_y.value(), pool_rng));
            const nn::Var pooled_x(pool_x.query(t.fake_x.value(), pool_rng));
            const nn::Var adv_dx = discriminator_term(b.DX.forward(x, ctx),
                                                      b.DX.forward(pooled_x, ctx), config.adversarial);
            const nn::Var adv_dy = discriminator_term(b.DY.forward(y, ctx),
                                                      b.DY.forward(pooled_y, ctx), config.adversarial);
            const nn::Var disc_total = adv_dx + adv_dy;
            nn::backward(disc_total);
            disc_opt.step();

            // Then both generators on the shared total, discriminators fixed.
            set_disc(false);
            gen_opt.zero_grad();
            Objective obj = compose(b, C, x, y, t, w, ctx, false);
            obj.components["adv_dx"] = adv_dx;
            obj.components["adv_dy"] = adv_dy;
            obj.discriminator_total = disc_total;
            const auto values = obj.values();

            for (const auto& [name, v] : values) {
                if (!std::isfinite(v)) {
                    std::ostringstream msg;
                    msg << "non-finite loss in epoch " << epoch << " step " << step + 1 << ":";
                    for (const auto& c : kColumns) msg << ' ' << c << '=' << values.at(c);
                    throw RuntimeFailure(msg.str());
                }
                if (v < 0.0 && name != "gen_total" && name != "disc_total") {
                    throw std::logic_error("negative loss component " + name);
                }
            }
            nn::backward(obj.generator_total);
            gen_opt.step();

            for (const auto& [name, v] : values) sums[name] += v;
            if (csv.is_open()) {
                csv << epoch << ',' << step + 1;
                for (const auto& c : kColumns) csv << ',' << values.at(c);
                csv << '\n';
            }
        }

        EpochLosses record{epoch, {}};
        for (const auto& [name, v] : sums) record.components[name] = v / static_cast<double>(steps);
        b.training_log.push_back(record);
        if (csv.is_open()) {
            csv.flush();
            b.save(options.gan_dir / ("epoch_" + std::to_string(epoch)));
        }
        if (options.on_epoch) options.on_epoch(record);
    }

    if (C.checksum() != classifier_ref) {
        throw std::logic_error("classifier parameters changed during GAN training");
    }
    b.freeze();
    return b;
}

}  // namespace cfx::gan
