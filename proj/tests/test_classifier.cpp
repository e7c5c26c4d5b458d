#include <cmath>

#include "cfx/classifier.hpp"
#include "cfx/error.hpp"
#include "cfx/nn/ops.hpp"
#include "doctest.h"
#include "fixtures.hpp"

using namespace cfx;
using namespace cfx::clf;
using cfx::testing::TempDir;

namespace {

Image random_image(int side, std::mt19937_64& rng) {
    return Image::from_tensor(cfx::testing::random_tensor({1, 1, side, side}, rng));
}

}  // namespace

TEST_CASE("architectures build with the documented shapes") {
    const auto small = build(ClassifierConfig::defaults(Architecture::SmallCnn, 64), 1);
    CHECK(small.network().output_shape() == nn::Shape{1, 2, 1, 1});
    CHECK(small.network().parameter_count() > 80000);
    CHECK(small.network().parameter_count() < 130000);

    const auto alex = architecture_spec(ClassifierConfig::defaults(Architecture::AlexNetVariant, 512));
    const auto& layers = alex.at("layers");
    CHECK(layers.size() == 24);
    CHECK(layers.back().at("out") == 2);
    std::vector<int> convs, denses;
    for (const auto& l : layers) {
        if (l.at("type") == "conv") convs.push_back(l.at("out"));
        if (l.at("type") == "dense") denses.push_back(l.at("out"));
    }
    CHECK(convs == std::vector<int>{96, 256, 384, 384, 256});
    CHECK(denses == std::vector<int>{4096, 4096, 1000, 2});

    CHECK_THROWS_AS(architecture_spec(ClassifierConfig::defaults(Architecture::AlexNetVariant, 16)),
                    ValidationError);
}

TEST_CASE("configuration defaults and validation") {
    const auto a = ClassifierConfig::defaults(Architecture::AlexNetVariant, 512);
    CHECK(a.optimizer.learning_rate == doctest::Approx(1e-4));
    CHECK(a.optimizer.momentum == doctest::Approx(0.9));
    CHECK(a.batch_size == 32);
    CHECK(a.l2_factor == doctest::Approx(1e-3));
    CHECK(a.dropout_p == doctest::Approx(0.4));
    CHECK(a.optimizer.warmup_steps == 0);
    CHECK(ClassifierConfig::from_json(a.to_json()).to_json() == a.to_json());

    const auto s = ClassifierConfig::defaults(Architecture::SmallCnn, 64);
    CHECK(s.optimizer.warmup_steps == 50);
    CHECK(ClassifierConfig::from_json(s.to_json()).optimizer.warmup_steps == 50);
    auto legacy = s.to_json();
    legacy["optimizer"].erase("warmup_steps");
    CHECK(ClassifierConfig::from_json(legacy).optimizer.warmup_steps == 0);

    auto bad = a;
    bad.dropout_p = 1.0;
    CHECK_THROWS_AS(bad.validate(), ValidationError);
    bad = s;
    bad.optimizer.warmup_steps = -1;
    CHECK_THROWS_AS(bad.validate(), ValidationError);
    CHECK_THROWS_AS(parse_architecture("VGG"), ValidationError);
}

TEST_CASE("predictions are normalised and tie-break to NORMAL") {
    std::mt19937_64 rng(2);
    const auto m = build(ClassifierConfig::defaults(Architecture::SmallCnn, 32), 4);
    for (int i = 0; i < 8; ++i) CHECK(m.predict(random_image(32, rng)).valid(1e-6));
    CHECK(ProbPair{0.5, 0.5}.decision() == Label::Normal);
    CHECK(ProbPair{0.49, 0.51}.decision() == Label::Opacity);

    CHECK_THROWS_AS(m.predict(Image::filled(16, 0.0)), ValidationError);

    // A zero-weight classifier outputs an exact tie.
    auto zero = cfx::testing::tiny_classifier(8, 1, 0.0);
    const auto p = zero.predict(Image::filled(8, 0.3));
    CHECK(p.p_x == 0.5);
    CHECK(p.decision() == Label::Normal);
}

TEST_CASE("argmax is invariant under doubling the logits") {
    std::mt19937_64 rng(9);
    for (int i = 0; i < 20; ++i) {
        nn::Var logits(cfx::testing::random_tensor({1, 2, 1, 1}, rng, -3, 3));
        const auto p = nn::softmax(logits).value();
        const auto q = nn::softmax(2.0 * logits).value();
        CHECK(ProbPair{p[0], p[1]}.decision() == ProbPair{q[0], q[1]}.decision());
    }
}

TEST_CASE("batch prediction equals single prediction") {
    std::mt19937_64 rng(5);
    const auto m = build(ClassifierConfig::defaults(Architecture::SmallCnn, 32), 3);
    std::vector<Image> images;
    for (int i = 0; i < 37; ++i) images.push_back(random_image(32, rng));
    const auto batch = m.predict_batch(images);
    REQUIRE(batch.size() == images.size());
    for (std::size_t i = 0; i < images.size(); ++i) {
        const auto single = m.predict(images[i]);
        CHECK(batch[i].p_x == doctest::Approx(single.p_x).epsilon(1e-12));
    }
}

TEST_CASE("f-scores from a hand-built confusion") {
    const auto m = metrics_from_counts(2, 1, 1, 2);
    CHECK(m.precision == doctest::Approx(2.0 / 3.0));
    CHECK(m.recall == doctest::Approx(2.0 / 3.0));
    CHECK(m.f1 == doctest::Approx(2.0 / 3.0));
    CHECK(m.f2 == doctest::Approx(2.0 / 3.0));
    CHECK(m.accuracy == doctest::Approx(4.0 / 6.0));

    const auto perfect = metrics_from_counts(5, 0, 0, 5);
    CHECK(perfect.accuracy == 1.0);
    CHECK(perfect.f1 == 1.0);
    CHECK(perfect.f2 == 1.0);
    CHECK(f_beta(0.0, 0.0, 1.0) == 0.0);
    CHECK(f_beta(0.5, 1.0, 2.0) == doctest::Approx(5.0 * 0.5 / (4.0 * 0.5 + 1.0)));
}

TEST_CASE("checkpoints round-trip bit-exactly") {
    TempDir dir("clf_ckpt");
    auto m = build(ClassifierConfig::defaults(Architecture::SmallCnn, 32), 8);
    m.set_training_log({{1, 0.2, 0.6, 0.21, 0.55}, {2, 0.1, 0.8, 0.12, 0.75}});
    m.save(dir.path());
    const auto back = ClassifierModel::load(dir.path());
    CHECK(back.checksum() == m.checksum());
    CHECK(back.frozen());
    REQUIRE(back.training_log().size() == 2);
    CHECK(back.training_log()[1].val_accuracy == doctest::Approx(0.75));
    std::mt19937_64 rng(1);
    const Image img = random_image(32, rng);
    CHECK(back.predict(img) == m.predict(img));
    CHECK_THROWS_AS(ClassifierModel::load(dir / "nope"), ValidationError);
}

TEST_CASE("training loss decreases on a fixed micro-batch") {
    TempDir dir("clf_micro");
    data::SynthSpec spec{8, 32, 0.6, 1};
    const auto manifest = data::synthesize(spec, dir.path());
    const auto samples = data::load_split(manifest, Split::Train);
    std::vector<Image> images;
    std::vector<Label> labels;
    for (const auto& s : samples) {
        images.push_back(s.pixels);
        labels.push_back(s.label);
    }
    const nn::Tensor batch = Image::batch(images);

    auto config = ClassifierConfig::defaults(Architecture::SmallCnn, 32);
    config.dropout_p = 0.0;
    auto model = build(config, 2);
    ClassifierTrainer trainer(model, config, 2);
    std::vector<double> losses;
    for (int i = 0; i < 4; ++i) {
        trainer.step(batch, labels);
        losses.push_back(trainer.loss(batch, labels));
    }
    CHECK(losses[1] < losses[0]);
    CHECK(losses[2] < losses[1]);
    CHECK(losses[3] < losses[2]);
}

TEST_CASE("warmup scales the first steps") {
    // One step of plain SGD moves each weight by -lr * grad, so with momentum 0
    // the update size tracks the ramped rate exactly.
    auto config = ClassifierConfig::defaults(Architecture::SmallCnn, 16);
    config.dropout_p = 0.0;
    config.optimizer.momentum = 0.0;
    std::mt19937_64 rng(3);
    const nn::Tensor images = cfx::testing::random_tensor({4, 1, 16, 16}, rng);
    const std::vector<Label> labels{Label::Normal, Label::Opacity, Label::Normal, Label::Opacity};

    auto delta = [&](int warmup) {
        auto c = config;
        c.optimizer.warmup_steps = warmup;
        auto model = build(c, 5);
        const auto before = model.network().parameters()[0].var.value();
        ClassifierTrainer trainer(model, c, 5);
        trainer.step(images, labels);
        const auto& after = model.network().parameters()[0].var.value();
        double d = 0.0;
        for (std::size_t i = 0; i < before.numel(); ++i) d += std::abs(after[i] - before[i]);
        return d;
    };
    CHECK(delta(10) == doctest::Approx(delta(0) / 10.0).epsilon(1e-9));
    CHECK(delta(1) == doctest::Approx(delta(0)).epsilon(1e-12));
}

TEST_CASE("training needs a validation split and returns a frozen model") {
    TempDir dir("clf_train");
    data::SynthSpec spec{12, 32, 0.6, 3};
    auto manifest = data::synthesize(spec, dir.path());
    auto config = ClassifierConfig::defaults(Architecture::SmallCnn, 32);
    config.epochs = 2;

    std::vector<EpochRecord> seen;
    TrainOptions opts;
    opts.on_epoch = [&](const EpochRecord& r) { seen.push_back(r); };
    const auto a = train(build(config, 1), manifest, config, 1, opts);
    const auto b = train(build(config, 1), manifest, config, 1);
    CHECK(a.frozen());
    CHECK(seen.size() == 2);
    CHECK(a.training_log().size() == 2);
    CHECK(a.checksum() == b.checksum());

    const auto metrics = evaluate_classifier(a, manifest, Split::Test);
    CHECK(metrics.tp + metrics.fp + metrics.fn + metrics.tn == manifest.select(Split::Test).size());

    for (auto& e : manifest.entries) {
        if (e.split == Split::Val) e.split = Split::Train;
    }
    CHECK_THROWS_AS(train(build(config, 1), manifest, config, 1), ValidationError);
}
