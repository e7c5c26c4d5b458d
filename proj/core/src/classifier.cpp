#include "cfx/classifier.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "cfx/error.hpp"
#include "cfx/nn/ops.hpp"

namespace cfx::clf {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kPredictChunk = 32;

json conv(int in, int out, int k, int stride, int pad, const char* act = "relu") {
    return {{"type", "conv"}, {"in", in},   {"out", out},
            {"kernel", k},    {"stride", stride}, {"pad", pad}, {"activation", act}};
}

json dense(int in, int out, const char* act = "relu") {
    return {{"type", "dense"}, {"in", in}, {"out", out}, {"activation", act}};
}

json pool() { return {{"type", "max_pool"}, {"kernel", 2}, {"stride", 2}}; }
json bn(int c) { return {{"type", "batch_norm"}, {"channels", c}, {"eps", 1e-3}}; }
json drop(double p) { return {{"type", "dropout"}, {"p", p}}; }

// Conv stack of the AlexNet variant, padding "valid" throughout.
json alexnet(const ClassifierConfig& c) {
    json layers = json::array();
    const int r = c.resolution;
    layers.push_back(conv(1, 96, 11, 4, 0));
    layers.push_back(pool());
    layers.push_back(bn(96));
    layers.push_back(conv(96, 256, 11, 1, 0));
    layers.push_back(pool());
    layers.push_back(bn(256));
    layers.push_back(conv(256, 384, 3, 1, 0));
    layers.push_back(bn(384));
    layers.push_back(conv(384, 384, 3, 1, 0));
    layers.push_back(bn(384));
    layers.push_back(conv(384, 256, 3, 1, 0));
    layers.push_back(pool());
    layers.push_back(bn(256));
    layers.push_back({{"type", "flatten"}});

    // The flattened width depends on the resolution; trace it through the
    // conv stack (the network constructor re-validates every layer).
    nn::Network probe(json{{"input", {1, r, r}}, {"layers", layers}});
    const int flat = static_cast<int>(probe.output_shape().item());

    layers.push_back(dense(flat, 4096));
    layers.push_back(drop(c.dropout_p));
    layers.push_back(bn(4096));
    layers.push_back(dense(4096, 4096));
    layers.push_back(drop(c.dropout_p));
    layers.push_back(bn(4096));
    layers.push_back(dense(4096, 1000));
    layers.push_back(drop(c.dropout_p));
    layers.push_back(bn(1000));
    layers.push_back(dense(1000, 2, "none"));
    return {{"input", {1, r, r}}, {"layers", layers}};
}

// Three conv/pool blocks and two dense layers (~100k parameters at 64 px).
json small_cnn(const ClassifierConfig& c) {
    const int r = c.resolution;
    json layers = json::array({conv(1, 8, 3, 1, 1), pool(), conv(8, 16, 3, 1, 1), pool(),
                               conv(16, 32, 3, 1, 1), pool(), json{{"type", "flatten"}}});
    nn::Network probe(json{{"input", {1, r, r}}, {"layers", layers}});
    const int flat = static_cast<int>(probe.output_shape().item());
    layers.push_back(dense(flat, 48));
    layers.push_back(drop(c.dropout_p));
    layers.push_back(dense(48, 2, "none"));
    return {{"input", {1, r, r}}, {"layers", layers}};
}

nn::Tensor one_hot(std::span<const Label> labels) {
    nn::Tensor t(nn::Shape{static_cast<int>(labels.size()), 2, 1, 1});
    for (std::size_t i = 0; i < labels.size(); ++i) {
        t[2 * i + static_cast<std::size_t>(labels[i])] = 1.0;
    }
    return t;
}

void check_image(const Image& image, int resolution) {
    if (image.side() != resolution) {
        throw ValidationError("classifier expects " + std::to_string(resolution) + "x" +
                              std::to_string(resolution) + " input, got " +
                              std::to_string(image.side()) + "x" + std::to_string(image.side()));
    }
}

ProbPair pair_at(const nn::Tensor& probs, std::size_t i) {
    ProbPair p{probs[2 * i], probs[2 * i + 1]};
    if (!p.valid()) {
        throw std::logic_error("softmax output not normalised: " + std::to_string(p.p_x) + " + " +
                               std::to_string(p.p_y));
    }
    return p;
}

}  // namespace

std::string_view to_string(Architecture a) {
    return a == Architecture::AlexNetVariant ? "ALEXNET_VARIANT" : "SMALL_CNN";
}

Architecture parse_architecture(std::string_view text) {
    if (text == "ALEXNET_VARIANT" || text == "alexnet") return Architecture::AlexNetVariant;
    if (text == "SMALL_CNN" || text == "small_cnn") return Architecture::SmallCnn;
    throw ValidationError("unknown architecture '" + std::string(text) + "'");
}

ClassifierConfig ClassifierConfig::defaults(Architecture arch, int resolution) {
    ClassifierConfig c;
    c.resolution = resolution;
    c.architecture = arch;
    if (arch == Architecture::AlexNetVariant) {
        c.l2_factor = 0.001;
        c.dropout_p = 0.4;
        c.optimizer = {0.0001, 0.9, 0};
        c.batch_size = 32;
        c.epochs = 1000;
    } else {
        c.l2_factor = 0.0;
        c.dropout_p = 0.25;
        c.optimizer = {0.05, 0.9, 50};
        c.batch_size = 32;
        c.epochs = 30;
    }
    return c;
}

void ClassifierConfig::validate() const {
    if (resolution <= 0) throw ValidationError("classifier resolution must be positive");
    if (l2_factor < 0) throw ValidationError("l2_factor must be nonnegative");
    if (!(dropout_p >= 0.0 && dropout_p < 1.0)) throw ValidationError("dropout_p must lie in [0, 1)");
    if (!(optimizer.learning_rate > 0)) throw ValidationError("learning_rate must be positive");
    if (optimizer.momentum < 0 || optimizer.momentum >= 1) {
        throw ValidationError("momentum must lie in [0, 1)");
    }
    if (optimizer.warmup_steps < 0) throw ValidationError("warmup_steps must be nonnegative");
    if (batch_size <= 0) throw ValidationError("batch_size must be positive");
    if (epochs <= 0) throw ValidationError("epochs must be positive");
}

json ClassifierConfig::to_json() const {
    return {{"resolution", resolution},
            {"architecture", std::string(clf::to_string(architecture))},
            {"l2_factor", l2_factor},
            {"dropout_p", dropout_p},
            {"optimizer",
             {{"learning_rate", optimizer.learning_rate},
              {"momentum", optimizer.momentum},
              {"warmup_steps", optimizer.warmup_steps}}},
            {"batch_size", batch_size},
            {"epochs", epochs}};
}

ClassifierConfig ClassifierConfig::from_json(const json& j) {
    ClassifierConfig c;
    c.resolution = j.at("resolution");
    c.architecture = parse_architecture(j.at("architecture").get<std::string>());
    c.l2_factor = j.at("l2_factor");
    c.dropout_p = j.at("dropout_p");
    c.optimizer.learning_rate = j.at("optimizer").at("learning_rate");
    c.optimizer.momentum = j.at("optimizer").at("momentum");
    c.optimizer.warmup_steps = j.at("optimizer").value("warmup_steps", 0);
    c.batch_size = j.at("batch_size");
    c.epochs = j.at("epochs");
    c.validate();
    return c;
}

bool ProbPair::valid(double tol) const {
    return p_x >= 0.0 && p_y >= 0.0 && std::abs(p_x + p_y - 1.0) <= tol;
}

json architecture_spec(const ClassifierConfig& config) {
    config.validate();
    try {
        return config.architecture == Architecture::AlexNetVariant ? alexnet(config)
                                                                   : small_cnn(config);
    } catch (const ValidationError& e) {
        throw ValidationError(std::string(to_string(config.architecture)) + " at " +
                              std::to_string(config.resolution) + " px: " + e.what());
    }
}

ClassifierModel::ClassifierModel(ClassifierConfig config, nn::Network network)
    : config_(std::move(config)), network_(std::move(network)) {
    const auto out = network_.output_shape();
    if (out.c != 2 || out.h != 1 || out.w != 1) {
        throw ValidationError("classifier network must emit 2 logits, emits " + out.str());
    }
    const auto in = network_.input_shape();
    if (in.c != 1 || in.h != config_.resolution || in.w != config_.resolution) {
        throw ValidationError("classifier network input " + in.str() +
                              " does not match resolution " + std::to_string(config_.resolution));
    }
}

ProbPair ClassifierModel::predict(const Image& image) const {
    check_image(image, config_.resolution);
    const nn::Var probs = probabilities(nn::Var(image.to_tensor()));
    return pair_at(probs.value(), 0);
}

std::vector<ProbPair> ClassifierModel::predict_batch(std::span<const Image> images) const {
    std::vector<ProbPair> out;
    out.reserve(images.size());
    for (std::size_t start = 0; start < images.size(); start += kPredictChunk) {
        const auto chunk = images.subspan(start, std::min<std::size_t>(kPredictChunk, images.size() - start));
        for (const auto& im : chunk) check_image(im, config_.resolution);
        const nn::Var probs = probabilities(nn::Var(Image::batch(chunk)));
        for (std::size_t i = 0; i < chunk.size(); ++i) out.push_back(pair_at(probs.value(), i));
    }
    return out;
}

nn::Var ClassifierModel::probabilities(const nn::Var& images) const {
    nn::ForwardContext ctx;
    return nn::softmax(network_.forward(images, ctx));
}

void ClassifierModel::freeze() { network_.set_trainable(false); }

void ClassifierModel::save(const fs::path& dir) const {
    fs::create_directories(dir);
    json cfg = config_.to_json();
    cfg["network"] = network_.spec();
    std::ofstream(dir / "config.json") << cfg.dump(2) << "\n";
    network_.save_weights(dir / "weights.bin");
    std::ofstream log(dir / "training_log.csv");
    log << "epoch,train_loss,train_accuracy,val_loss,val_accuracy\n";
    log.precision(10);
    for (const auto& r : log_) {
        log << r.epoch << ',' << r.train_loss << ',' << r.train_accuracy << ',' << r.val_loss << ','
            << r.val_accuracy << '\n';
    }
}

ClassifierModel ClassifierModel::load(const fs::path& dir) {
    std::ifstream is(dir / "config.json");
    if (!is) throw ValidationError("classifier checkpoint missing config.json: " + dir.string());
    json cfg;
    try {
        cfg = json::parse(is);
    } catch (const json::exception& e) {
        throw ValidationError("malformed " + (dir / "config.json").string() + ": " + e.what());
    }
    ClassifierConfig config = ClassifierConfig::from_json(cfg);
    nn::Network net(cfg.contains("network") ? cfg.at("network") : architecture_spec(config));
    net.load_weights(dir / "weights.bin");
    ClassifierModel model(config, std::move(net));
    model.freeze();

    std::ifstream log(dir / "training_log.csv");
    std::string line;
    if (log && std::getline(log, line)) {
        std::vector<EpochRecord> records;
        while (std::getline(log, line)) {
            EpochRecord r;
            if (std::sscanf(line.c_str(), "%d,%lf,%lf,%lf,%lf", &r.epoch, &r.train_loss,
                            &r.train_accuracy, &r.val_loss, &r.val_accuracy) == 5) {
                records.push_back(r);
            }
        }
        model.set_training_log(std::move(records));
    }
    return model;
}

ClassifierModel build(const ClassifierConfig& config, std::uint64_t seed) {
    nn::Network net(architecture_spec(config));
    net.initialize(nn::InitScheme::HeNormal, seed);
    return ClassifierModel(config, std::move(net));
}

ClassifierTrainer::ClassifierTrainer(ClassifierModel& model, const ClassifierConfig& config,
                                     std::uint64_t seed)
    : model_(model),
      sgd_(model.network().parameters(), config.optimizer.learning_rate, config.optimizer.momentum,
           config.l2_factor),
      settings_(config.optimizer),
      rng_(seed) {
    if (model.frozen()) throw ValidationError("cannot train a frozen classifier");
}

double ClassifierTrainer::step(const nn::Tensor& images, std::span<const Label> labels) {
    ++steps_;
    if (settings_.warmup_steps > 0) {
        const double ramp = std::min(1.0, static_cast<double>(steps_) / settings_.warmup_steps);
        sgd_.set_learning_rate(settings_.learning_rate * ramp);
    }
    sgd_.zero_grad();
    nn::ForwardContext ctx{true, &rng_};
    nn::Var probs = nn::softmax(model_.network().forward(nn::Var(images), ctx));
    nn::Var loss = nn::mean(nn::square(nn::sub(probs, nn::Var(one_hot(labels)))));
    const double value = loss.item();
    nn::backward(loss);
    sgd_.step();
    return value + sgd_.penalty();
}

double ClassifierTrainer::loss(const nn::Tensor& images, std::span<const Label> labels) const {
    nn::Var probs = model_.probabilities(nn::Var(images));
    return nn::mean(nn::square(nn::sub(probs, nn::Var(one_hot(labels))))).item() + sgd_.penalty();
}

namespace {

struct LoadedSplit {
    std::vector<Image> images;
    std::vector<Label> labels;
};

LoadedSplit load(const data::DatasetManifest& manifest, Split split) {
    LoadedSplit out;
    for (auto& s : data::load_split(manifest, split)) {
        out.images.push_back(std::move(s.pixels));
        out.labels.push_back(s.label);
    }
    return out;
}

std::pair<double, double> loss_and_accuracy(const ClassifierModel& model, const LoadedSplit& data) {
    const auto probs = model.predict_batch(data.images);
    double loss = 0.0;
    std::size_t correct = 0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        const double tx = data.labels[i] == Label::Normal ? 1.0 : 0.0;
        loss += 0.5 * ((probs[i].p_x - tx) * (probs[i].p_x - tx) +
                       (probs[i].p_y - (1.0 - tx)) * (probs[i].p_y - (1.0 - tx)));
        correct += probs[i].decision() == data.labels[i];
    }
    const double n = static_cast<double>(probs.size());
    return {loss / n, static_cast<double>(correct) / n};
}

}  // namespace

ClassifierModel train(ClassifierModel model, const data::DatasetManifest& manifest,
                      const ClassifierConfig& config, std::uint64_t seed,
                      const TrainOptions& options) {
    config.validate();
    if (config.resolution != manifest.resolution || model.resolution() != manifest.resolution) {
        throw ValidationError("classifier resolution does not match the manifest's " +
                              std::to_string(manifest.resolution));
    }
    const LoadedSplit train_set = load(manifest, Split::Train);
    const LoadedSplit val_set = load(manifest, Split::Val);
    if (train_set.images.empty()) throw ValidationError("manifest has an empty TRAIN split");
    if (val_set.images.empty()) throw ValidationError("manifest has an empty VAL split");

    ClassifierTrainer trainer(model, config, seed);
    std::mt19937_64 order_rng(seed ^ 0x9e3779b97f4a7c15ULL);
    std::vector<std::size_t> order(train_set.images.size());
    std::iota(order.begin(), order.end(), 0);

    std::vector<EpochRecord> log;
    std::vector<nn::Tensor> best;
    double best_acc = -1.0;
    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), order_rng);
        double loss_sum = 0.0;
        std::size_t batches = 0;
        for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
            const std::size_t end = std::min(order.size(), start + config.batch_size);
            std::vector<Image> images;
            std::vector<Label> labels;
            for (std::size_t i = start; i < end; ++i) {
                images.push_back(train_set.images[order[i]]);
                labels.push_back(train_set.labels[order[i]]);
            }
            const double l = trainer.step(Image::batch(images), labels);
            if (!std::isfinite(l)) {
                throw RuntimeFailure("classifier training diverged in epoch " +
                                     std::to_string(epoch) + " (loss " + std::to_string(l) + ")");
            }
            loss_sum += l;
            ++batches;
        }
        EpochRecord rec;
        rec.epoch = epoch;
        rec.train_loss = loss_sum / static_cast<double>(batches);
        std::tie(std::ignore, rec.train_accuracy) = loss_and_accuracy(model, train_set);
        std::tie(rec.val_loss, rec.val_accuracy) = loss_and_accuracy(model, val_set);
        if (!std::isfinite(rec.val_loss)) {
            throw RuntimeFailure("classifier training diverged in epoch " + std::to_string(epoch));
        }
        log.push_back(rec);
        if (options.on_epoch) options.on_epoch(rec);
        if (rec.val_accuracy >= best_acc) {
            best_acc = rec.val_accuracy;
            best.clear();
            for (const auto& p : model.network().parameters()) best.push_back(p.var.value());
            for (const auto& b : model.network().buffers()) best.push_back(*b.tensor);
        }
    }

    std::size_t k = 0;
    for (const auto& p : model.network().parameters()) {
        nn::Var v = p.var;
        v.mutable_value() = best[k++];
    }
    for (const auto& b : model.network().buffers()) *b.tensor = best[k++];
    model.set_training_log(std::move(log));
    model.freeze();
    return model;
}

double f_beta(double precision, double recall, double beta) {
    const double b2 = beta * beta;
    const double denom = b2 * precision + recall;
    return denom > 0.0 ? (1.0 + b2) * precision * recall / denom : 0.0;
}

ClassifierMetrics metrics_from_counts(std::size_t tp, std::size_t fp, std::size_t fn,
                                      std::size_t tn) {
    ClassifierMetrics m;
    m.tp = tp;
    m.fp = fp;
    m.fn = fn;
    m.tn = tn;
    const double total = static_cast<double>(tp + fp + fn + tn);
    m.accuracy = total > 0 ? static_cast<double>(tp + tn) / total : 0.0;
    m.precision = tp + fp > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fp) : 0.0;
    m.recall = tp + fn > 0 ? static_cast<double>(tp) / static_cast<double>(tp + fn) : 0.0;
    m.f1 = f_beta(m.precision, m.recall, 1.0);
    m.f2 = f_beta(m.precision, m.recall, 2.0);
    m.confusion = {{{tn, fp}, {fn, tp}}};
    return m;
}

json ClassifierMetrics::to_json() const {
    return {{"accuracy", accuracy}, {"precision", precision}, {"recall", recall},
            {"f1", f1},             {"f2", f2},               {"tp", tp},
            {"fp", fp},             {"fn", fn},               {"tn", tn},
            {"confusion", confusion}};
}

ClassifierMetrics evaluate_classifier(const ClassifierModel& model,
                                      const data::DatasetManifest& manifest, Split split) {
    const LoadedSplit set = load(manifest, split);
    if (set.images.empty()) {
        throw ValidationError("split " + std::string(to_string(split)) + " is empty");
    }
    const auto probs = model.predict_batch(set.images);
    std::size_t tp = 0, fp = 0, fn = 0, tn = 0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
        const bool predicted_pos = probs[i].decision() == Label::Opacity;
        const bool actual_pos = set.labels[i] == Label::Opacity;
        if (predicted_pos && actual_pos) ++tp;
        else if (predicted_pos) ++fp;
        else if (actual_pos) ++fn;
        else ++tn;
    }
    return metrics_from_counts(tp, fp, fn, tn);
}

}  // namespace cfx::clf
