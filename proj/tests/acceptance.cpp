// Acceptance run: one PASS/FAIL line per criterion. Exits non-zero if any fail.
#include <httplib.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <sstream>

#include "cfx/digest.hpp"
#include "cfx/eval.hpp"
#include "cfx/explain.hpp"
#include "cfx/image_io.hpp"
#include "cfx/service.hpp"
#include "fixtures.hpp"
#include "oracles.hpp"

using namespace cfx;
using namespace cfx::testing::oracle;
using cfx::testing::random_images;
using cfx::testing::tiny_classifier;
using nlohmann::json;

namespace {

constexpr double kLossTol = 1e-6;
constexpr double kTwoPTol = 1e-9;
constexpr double kGradTol = 1e-3;
constexpr double kReductionTol = 1e-6;
constexpr double kClassifierAccuracy = 0.95;
constexpr double kFlipGammaOn = 0.90;
constexpr double kFlipMargin = 0.25;
constexpr double kSecondDiffTol = 1e-7;
constexpr double kDriftTol = 0.02;

constexpr double kLossSeconds = 10.0;
constexpr double kGradSeconds = 60.0;
constexpr double kClassifierSeconds = 300.0;
constexpr double kAblationSeconds = 7200.0;

constexpr std::uint64_t kSeed = 0;
constexpr int kDeskResolution = 64;
constexpr int kDeskPerClass = 200;
constexpr std::size_t kServiceSamples = 50;

struct Outcome {
    bool pass = true;
    std::ostringstream detail;

    void require(bool ok, const std::string& what) {
        if (!ok) {
            pass = false;
            detail << " [failed: " << what << "]";
        }
    }
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
    return std::chrono::duration<double>(Clock::now() - t0).count();
}

int failures = 0;

void criterion(const std::string& name, const std::function<void(Outcome&)>& body) {
    Outcome o;
    const auto t0 = Clock::now();
    try {
        body(o);
    } catch (const std::exception& e) {
        o.pass = false;
        o.detail << " [exception: " << e.what() << "]";
    }
    if (!o.pass) ++failures;
    std::printf("%s %s:%s (%.1f s)\n", o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.str().c_str(),
                seconds_since(t0));
    std::fflush(stdout);
}

// State shared by the desk-scale criteria.
struct Desk {
    cfx::testing::TempDir dir{"acceptance"};
    std::optional<data::DatasetManifest> manifest;
    std::optional<clf::ClassifierModel> classifier;
    std::optional<eval::AblationResult> ablation;

    std::filesystem::path classifier_dir() const { return dir / "classifier"; }
    std::filesystem::path gamma_on_dir() const { return dir / "ablation" / "gamma_on" / "gan"; }
};

void loss_algebra(Outcome& o) {
    const auto t0 = Clock::now();
    const auto C = tiny_classifier(8, 5);
    std::mt19937_64 rng(21);
    double worst = 0.0, worst_two_p = 0.0;
    for (int trial = 0; trial < 10; ++trial) {
        const auto b = micro_bundle(C, 100 + trial, 30.0);
        const nn::Var x = random_images(2, 8, rng), y = random_images(2, 8, rng);
        const nn::Tensor gx = run(b.G, x.value()), fy = run(b.F, y.value());
        const gan::LossWeights w;

        const auto adv_y = gan::adversarial_loss(b.DY, y, nn::Var(gx));
        const auto adv_x = gan::adversarial_loss(b.DX, x, nn::Var(fy));
        const nn::Tensor ry = run(b.DY, y.value()), sy = run(b.DY, gx);
        const nn::Tensor rx = run(b.DX, x.value()), sx = run(b.DX, fy);
        const double cyc = mean_abs(run(b.F, gx), x.value()) + mean_abs(run(b.G, fy), y.value());
        const double idt = mean_abs(run(b.G, y.value()), y.value()) + mean_abs(run(b.F, x.value()), x.value());
        const double cnt = counter_oracle(C, gx, w.target_y) + counter_oracle(C, fy, w.target_x);
        const double counter = gan::counter_loss(b.G, b.F, C, x, y, w).item();

        for (double d : {adv_y.d_loss.item() - ls_real(ry) - ls_fake(sy), adv_y.g_loss.item() - ls_real(sy),
                         adv_x.d_loss.item() - ls_real(rx) - ls_fake(sx), adv_x.g_loss.item() - ls_real(sx),
                         gan::cycle_loss(b.G, b.F, x, y).item() - cyc,
                         gan::identity_loss(b.G, b.F, x, y).item() - idt, counter - cnt}) {
            worst = std::max(worst, std::abs(d));
        }

        double two_p = 0.0;
        for (int n = 0; n < 2; ++n) {
            const auto pg = C.predict(Image::from_tensor(gx, n));
            const auto pf = C.predict(Image::from_tensor(fy, n));
            two_p += (2.0 * pg.p_x * pg.p_x + 2.0 * pf.p_y * pf.p_y) / 2.0;
        }
        worst_two_p = std::max(worst_two_p, std::abs(counter - two_p));
    }

    const auto ib = cfx::testing::identity_bundle(C);
    const nn::Var x = random_images(2, 8, rng), y = random_images(2, 8, rng);
    const bool zeros = gan::cycle_loss(ib.G, ib.F, x, y).item() == 0.0 &&
                       gan::identity_loss(ib.G, ib.F, x, y).item() == 0.0;
    const double elapsed = seconds_since(t0);

    o.detail << " max oracle error " << worst << ", max 2p^2 error " << worst_two_p;
    o.require(worst <= kLossTol, "oracle error <= 1e-6");
    o.require(worst_two_p <= kTwoPTol, "2p^2 identity <= 1e-9");
    o.require(zeros, "identity generators give exact zeros");
    o.require(elapsed < kLossSeconds, "runtime < 10 s");
}

void gradient_check(Outcome& o) {
    const auto t0 = Clock::now();
    const auto C = tiny_classifier(8, 3);
    auto b = micro_bundle(C, 9, 30.0);
    std::mt19937_64 rng(14);
    const nn::Var x = random_images(1, 8, rng), y = random_images(1, 8, rng);
    std::vector<nn::Var> params;
    for (const auto& p : b.G.parameters()) params.push_back(p.var);
    for (const auto& p : b.F.parameters()) params.push_back(p.var);
    const auto r = cfx::testing::grad_check(
        params, [&] { return gan::total_objective(b, C, x, y, gan::LossWeights{}).generator_total; });
    o.detail << " " << r.checked << " parameters, max relative error " << r.max_rel_error;
    o.require(r.max_rel_error <= kGradTol, "relative error <= 1e-3");
    o.require(seconds_since(t0) < kGradSeconds, "runtime < 60 s");
}

void plain_reduction(Outcome& o) {
    const auto C = tiny_classifier(8, 2);
    std::mt19937_64 rng(12);
    const auto b = micro_bundle(C, 5, 30.0);
    gan::LossWeights w;
    w.gamma_counter = 0.0;
    w.mu_identity = 0.0;
    double worst = 0.0;
    for (int i = 0; i < 20; ++i) {
        const nn::Var x = random_images(1, 8, rng), y = random_images(1, 8, rng);
        const double total = gan::total_objective(b, C, x, y, w).generator_total.item();
        worst = std::max(worst, std::abs(total - plain_cyclegan(b, x.value(), y.value(), w.lambda_cycle)));
    }
    o.detail << " 20 batches, max difference " << worst;
    o.require(worst <= kReductionTol, "difference <= 1e-6");
}

void classifier_run(Outcome& o, Desk& desk) {
    const auto t0 = Clock::now();
    data::SynthSpec spec;
    spec.n_per_class = kDeskPerClass;
    spec.resolution = kDeskResolution;
    spec.noise_seed = static_cast<std::int64_t>(kSeed);
    desk.manifest = data::synthesize(spec, desk.dir / "dataset");

    const auto config = clf::ClassifierConfig::defaults(clf::Architecture::SmallCnn, kDeskResolution);

    // Inference-mode loss on one balanced training batch around three steps.
    auto probe = clf::build(config, kSeed);
    clf::ClassifierTrainer trainer(probe, config, kSeed);
    std::vector<Image> by_label[2];
    for (const auto& s : data::load_split(*desk.manifest, Split::Train)) {
        by_label[static_cast<int>(s.label)].push_back(s.pixels);
    }
    std::vector<Image> images;
    std::vector<Label> labels;
    for (int i = 0; i < config.batch_size / 2; ++i) {
        for (Label l : {Label::Normal, Label::Opacity}) {
            images.push_back(by_label[static_cast<int>(l)].at(i));
            labels.push_back(l);
        }
    }
    const nn::Tensor batch = Image::batch(images);
    std::vector<double> losses{trainer.loss(batch, labels)};
    for (int i = 0; i < 3; ++i) {
        trainer.step(batch, labels);
        losses.push_back(trainer.loss(batch, labels));
    }
    const bool decreasing = losses[1] < losses[0] && losses[2] < losses[1] && losses[3] < losses[2];

    desk.classifier = clf::train(clf::build(config, kSeed), *desk.manifest, config, kSeed);
    desk.classifier->save(desk.classifier_dir());
    const auto m = clf::evaluate_classifier(*desk.classifier, *desk.manifest, Split::Test);
    const double elapsed = seconds_since(t0);

    o.detail << " TEST accuracy " << m.accuracy << ", first-step losses " << losses[0] << " > " << losses[1]
             << " > " << losses[2] << " > " << losses[3];
    o.require(m.accuracy >= kClassifierAccuracy, "TEST accuracy >= 0.95");
    o.require(decreasing, "loss decreases over the first 3 steps");
    o.require(elapsed < kClassifierSeconds, "runtime < 5 min");
}

void ablation_run(Outcome& o, Desk& desk) {
    if (!desk.classifier) throw std::runtime_error("classifier stage did not finish");
    const auto t0 = Clock::now();
    const std::string before = desk.classifier->checksum();
    eval::AblationOptions opts;
    opts.dir = desk.dir / "ablation";
    desk.ablation = eval::ablation(*desk.manifest, *desk.classifier, gan::GanConfig::desk(kDeskResolution),
                                   kSeed, opts);
    const std::string after = desk.classifier->checksum();
    const bool reloaded_same = clf::ClassifierModel::load(desk.classifier_dir()).checksum() == before;
    const double elapsed = seconds_since(t0);

    const auto& on = desk.ablation->report_gamma_on;
    const auto& off = desk.ablation->report_gamma_off;
    bool conserved = true;
    try {
        on.check_conservation();
        off.check_conservation();
    } catch (const std::logic_error&) {
        conserved = false;
    }
    o.detail << " gamma=1 flip " << on.flip_accuracy_total << " (NORMAL " << on.flip_accuracy_normal
             << ", OPACITY " << on.flip_accuracy_opacity << "), gamma=0 flip " << off.flip_accuracy_total
             << " (NORMAL " << off.flip_accuracy_normal << ", OPACITY " << off.flip_accuracy_opacity << ")";
    o.require(on.flip_accuracy_total >= kFlipGammaOn, "gamma=1 flip >= 0.90");
    o.require(on.flip_accuracy_total - off.flip_accuracy_total >= kFlipMargin, "gamma=0 at least 0.25 lower");
    o.require(conserved, "confusion matrices conserve counts");
    o.require(before == after && reloaded_same, "classifier parameters bit-identical");
    o.require(elapsed < kAblationSeconds, "runtime < 2 h");
}

void flip_oracle(Outcome& o, Desk& desk) {
    if (!desk.ablation) throw std::runtime_error("ablation stage did not finish");
    const auto bundle = gan::GanBundle::load(gan::latest_epoch_dir(desk.gamma_on_dir()));
    const auto& C = *desk.classifier;
    const auto r = eval::evaluate_flips(bundle, C, *desk.manifest, Split::Test, "gamma_on");

    eval::FlipMatrix by_decision[2]{}, by_label[2]{};
    std::size_t n = 0;
    for (const auto& e : desk.manifest->entries) {
        if (e.split != Split::Test) continue;
        const Image img = data::load_sample(*desk.manifest, e).pixels;
        const auto p0 = C.predict(img);
        const int pre = p0.p_y > p0.p_x ? 1 : 0;
        const nn::Network& gen = pre == 0 ? bundle.G : bundle.F;
        const Image cf = Image::from_tensor(gen(nn::Var(img.to_tensor())).value());
        const auto p1 = C.predict(cf);
        const int post = p1.p_y > p1.p_x ? 1 : 0;
        by_decision[pre][pre][post]++;
        by_label[static_cast<int>(e.label)][pre][post]++;
        ++n;
    }
    eval::FlipMatrix total{};
    for (int a = 0; a < 2; ++a) {
        for (int b = 0; b < 2; ++b) total[a][b] = by_decision[0][a][b] + by_decision[1][a][b];
    }
    o.detail << " " << n << " TEST images, " << eval::matrix_flipped(total) << " flipped";
    o.require(r.n_images == n, "image count");
    o.require(r.normal == by_decision[0] && r.opacity == by_decision[1] && r.total == total,
              "decision-keyed matrices equal the recount");
    o.require(r.label_normal == by_label[0] && r.label_opacity == by_label[1],
              "label-keyed matrices equal the recount");
}

void pair_planning(Outcome& o) {
    for (int k = 2; k <= 8; ++k) {
        std::vector<std::string> names;
        for (int i = 0; i < k; ++i) names.push_back("class" + std::to_string(i));
        const auto plan = explain::plan_pairs(names);
        o.require(plan.pairs.size() == static_cast<std::size_t>(k * (k - 1) / 2), "k=" + std::to_string(k));
    }
    o.detail << " k = 2..8";
}

void interpolation(Outcome& o) {
    std::mt19937_64 rng(7);
    const Image a = Image::from_tensor(cfx::testing::random_tensor({1, 1, 64, 64}, rng));
    const Image b = Image::from_tensor(cfx::testing::random_tensor({1, 1, 64, 64}, rng));
    const auto frames = explain::interpolate(a, b, 11);
    double worst = 0.0;
    for (int i = 1; i + 1 < 11; ++i) {
        for (std::size_t p = 0; p < a.pixels().size(); ++p) {
            worst = std::max(worst, std::abs(frames[i + 1].pixels()[p] - 2.0 * frames[i].pixels()[p] +
                                             frames[i - 1].pixels()[p]));
        }
    }
    o.detail << " max second difference " << worst;
    o.require(frames.size() == 11 && frames.front() == a && frames.back() == b, "endpoints exact");
    o.require(worst <= kSecondDiffTol, "second differences <= 1e-7");
}

void service_round_trip(Outcome& o, Desk& desk) {
    if (!desk.ablation) throw std::runtime_error("ablation stage did not finish");
    auto state = std::make_shared<service::ServiceState>(
        service::load_state(desk.classifier_dir(), desk.gamma_on_dir(), desk.dir / "dataset"));
    service::ServiceOptions options;
    options.port = 0;
    service::Server server(state, options);
    httplib::Client client("127.0.0.1", server.start());

    // Alternate classes so both generators are exercised.
    std::vector<const data::ManifestEntry*> picked[2];
    for (const auto& e : desk.manifest->entries) {
        if (e.split == Split::Test) picked[static_cast<int>(e.label)].push_back(&e);
    }
    std::vector<const data::ManifestEntry*> samples;
    for (std::size_t i = 0; samples.size() < kServiceSamples; ++i) {
        if (i >= picked[0].size() && i >= picked[1].size()) break;
        for (const auto& list : picked) {
            if (i < list.size() && samples.size() < kServiceSamples) samples.push_back(list[i]);
        }
    }

    std::size_t agree = 0;
    double drift = 0.0;
    for (const auto* e : samples) {
        const auto png = io::encode_png(data::load_sample(*desk.manifest, *e).pixels);
        auto ex = client.Post("/explain", std::string(png.begin(), png.end()), "image/png");
        if (!ex || ex->status != 200) throw std::runtime_error("/explain failed for " + e->id);
        const auto j = json::parse(ex->body);
        const auto cf = base64_decode(j.at("counterfactual_png").get<std::string>());
        auto cl = client.Post("/classify", std::string(cf.begin(), cf.end()), "image/png");
        if (!cl || cl->status != 200) throw std::runtime_error("/classify failed for " + e->id);
        const auto c = json::parse(cl->body);
        agree += c.at("decision") == j.at("decision_post");
        drift = std::max(drift, std::abs(c.at("p_opacity").get<double>() -
                                         j.at("counterfactual_probs").at("p_opacity").get<double>()));
    }
    server.stop();
    o.detail << " " << agree << "/" << samples.size() << " decisions reproduced, max drift " << drift;
    o.require(samples.size() == kServiceSamples, "50 TEST samples");
    o.require(agree == samples.size(), "all decisions reproduced");
    o.require(drift <= kDriftTol, "probability drift <= 0.02");
}

}  // namespace

int main() {
    Desk desk;
    criterion("loss algebra", loss_algebra);
    criterion("gradient check", gradient_check);
    criterion("plain CycleGAN reduction", plain_reduction);
    criterion("classifier desk run", [&](Outcome& o) { classifier_run(o, desk); });
    criterion("desk ablation", [&](Outcome& o) { ablation_run(o, desk); });
    criterion("flip-metric oracle", [&](Outcome& o) { flip_oracle(o, desk); });
    criterion("pair planning", pair_planning);
    criterion("interpolation", interpolation);
    criterion("service round-trip", [&](Outcome& o) { service_round_trip(o, desk); });
    return failures == 0 ? 0 : 1;
}
