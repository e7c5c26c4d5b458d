#include "cfx/eval.hpp"

#include <fstream>
#include <iomanip>
#include <sstream>

#include "cfx/error.hpp"
#include "cfx/explain.hpp"

namespace cfx::eval {
namespace fs = std::filesystem;
using nlohmann::json;

std::size_t matrix_total(const FlipMatrix& m) { return m[0][0] + m[0][1] + m[1][0] + m[1][1]; }
std::size_t matrix_flipped(const FlipMatrix& m) { return m[0][1] + m[1][0]; }

namespace {

double rate(const FlipMatrix& m) {
    const std::size_t n = matrix_total(m);
    return n == 0 ? 0.0 : static_cast<double>(matrix_flipped(m)) / static_cast<double>(n);
}

json matrix_json(const FlipMatrix& m) {
    return {{"NORMAL", {{"NORMAL", m[0][0]}, {"OPACITY", m[0][1]}}},
            {"OPACITY", {{"NORMAL", m[1][0]}, {"OPACITY", m[1][1]}}}};
}

void table(std::ostringstream& os, const std::string& title, const FlipMatrix& m, double acc) {
    os << title << " (n=" << matrix_total(m) << ", flip accuracy " << std::fixed << std::setprecision(2)
       << 100.0 * acc << "%)\n";
    os << "  pre \\ post     NORMAL   OPACITY\n";
    os << "  NORMAL     " << std::setw(9) << m[0][0] << std::setw(10) << m[0][1] << "\n";
    os << "  OPACITY    " << std::setw(9) << m[1][0] << std::setw(10) << m[1][1] << "\n";
}

}  // namespace

void FlipReport::check_conservation() const {
    auto fail = [](const std::string& what) { throw std::logic_error("flip report: " + what); };
    if (matrix_total(normal) + matrix_total(opacity) != n_images) fail("decision subsets do not sum to n_images");
    if (matrix_total(label_normal) + matrix_total(label_opacity) != n_images) fail("label subsets do not sum to n_images");
    for (int i = 0; i < 2; ++i) {
        for (int j = 0; j < 2; ++j) {
            if (total[i][j] != normal[i][j] + opacity[i][j]) fail("TOTAL is not the sum of the classes");
        }
    }
    // Decision-keyed subsets only populate their own row.
    if (normal[1][0] + normal[1][1] != 0 || opacity[0][0] + opacity[0][1] != 0) {
        fail("a decision subset holds rows of the other decision");
    }
}

json FlipReport::to_json() const {
    return {{"bundle_tag", bundle_tag},
            {"split", split},
            {"n_images", n_images},
            {"keyed_by", "pre_decision"},
            {"subset_matrices",
             {{"NORMAL", matrix_json(normal)}, {"OPACITY", matrix_json(opacity)}, {"TOTAL", matrix_json(total)}}},
            {"flip_accuracy_normal", flip_accuracy_normal},
            {"flip_accuracy_opacity", flip_accuracy_opacity},
            {"flip_accuracy_total", flip_accuracy_total},
            {"label_keyed",
             {{"subset_matrices", {{"NORMAL", matrix_json(label_normal)}, {"OPACITY", matrix_json(label_opacity)}}},
              {"flip_accuracy_normal", label_flip_accuracy_normal},
              {"flip_accuracy_opacity", label_flip_accuracy_opacity}}},
            {"mean_l1_proximity", mean_l1_proximity}};
}

std::string FlipReport::text_table() const {
    std::ostringstream os;
    os << "Flip report";
    if (!bundle_tag.empty()) os << " [" << bundle_tag << "]";
    os << " on " << split << ", " << n_images << " images\n\n";
    os << "Subsets by classifier decision before translation:\n";
    table(os, "NORMAL", normal, flip_accuracy_normal);
    table(os, "OPACITY", opacity, flip_accuracy_opacity);
    table(os, "TOTAL", total, flip_accuracy_total);
    os << "\nSubsets by ground-truth label:\n";
    table(os, "NORMAL", label_normal, label_flip_accuracy_normal);
    table(os, "OPACITY", label_opacity, label_flip_accuracy_opacity);
    os << "\nMean L1 proximity: " << std::setprecision(4) << mean_l1_proximity << "\n";
    return os.str();
}

FlipReport evaluate_flips(const gan::GanBundle& bundle, const clf::ClassifierModel& classifier,
                          const data::DatasetManifest& manifest, Split split, std::string bundle_tag) {
    const explain::Explainer explainer(bundle, classifier);
    FlipReport r;
    r.bundle_tag = std::move(bundle_tag);
    r.split = std::string(to_string(split));
    double l1 = 0.0;
    for (const auto& entry : manifest.entries) {
        if (entry.split != split) continue;
        const data::ImageSample s = data::load_sample(manifest, entry);
        const explain::ExplanationResult e = explainer.explain(s.pixels, s.id);
        const auto pre = static_cast<std::size_t>(e.original_decision);
        const auto post = static_cast<std::size_t>(e.counterfactual_decision);
        (e.original_decision == Label::Normal ? r.normal : r.opacity)[pre][post]++;
        r.total[pre][post]++;
        (s.label == Label::Normal ? r.label_normal : r.label_opacity)[pre][post]++;
        l1 += e.l1_proximity;
        ++r.n_images;
    }
    if (r.n_images == 0) {
        throw ValidationError("split " + r.split + " is empty; nothing to evaluate");
    }
    r.flip_accuracy_normal = rate(r.normal);
    r.flip_accuracy_opacity = rate(r.opacity);
    r.flip_accuracy_total = rate(r.total);
    r.label_flip_accuracy_normal = rate(r.label_normal);
    r.label_flip_accuracy_opacity = rate(r.label_opacity);
    r.mean_l1_proximity = l1 / static_cast<double>(r.n_images);
    r.check_conservation();
    return r;
}

void write_report(const FlipReport& report, const fs::path& dir, const std::string& stem) {
    fs::create_directories(dir);
    std::ofstream(dir / (stem + ".json")) << report.to_json().dump(2) << "\n";
    std::ofstream(dir / (stem + ".txt")) << report.text_table();
}

json AblationResult::to_json() const {
    return {{"report_gamma_on", report_gamma_on.to_json()},
            {"report_gamma_off", report_gamma_off.to_json()},
            {"flip_accuracy_gap", report_gamma_on.flip_accuracy_total - report_gamma_off.flip_accuracy_total}};
}

std::string AblationResult::summary() const {
    std::ostringstream os;
    os << std::fixed << std::setprecision(2);
    os << "                 counterfactual   plain CycleGAN\n";
    auto row = [&](const char* name, double a, double b) {
        os << std::left << std::setw(17) << name << std::right << std::setw(13) << 100.0 * a << "%"
           << std::setw(16) << 100.0 * b << "%\n";
    };
    row("flip NORMAL", report_gamma_on.flip_accuracy_normal, report_gamma_off.flip_accuracy_normal);
    row("flip OPACITY", report_gamma_on.flip_accuracy_opacity, report_gamma_off.flip_accuracy_opacity);
    row("flip TOTAL", report_gamma_on.flip_accuracy_total, report_gamma_off.flip_accuracy_total);
    os << std::left << std::setw(17) << "mean L1" << std::right << std::setprecision(4) << std::setw(14)
       << report_gamma_on.mean_l1_proximity << std::setw(17) << report_gamma_off.mean_l1_proximity << "\n";
    os << "\n" << report_gamma_on.text_table() << "\n" << report_gamma_off.text_table();
    return os.str();
}

AblationResult ablation(const data::DatasetManifest& manifest, const clf::ClassifierModel& classifier,
                        const gan::GanConfig& config, std::uint64_t seed,
                        const AblationOptions& options) {
    if (options.dir.empty()) throw ValidationError("ablation needs an output directory");
    gan::GanConfig on = config;
    if (on.weights.gamma_counter == 0.0) on.weights.gamma_counter = 1.0;
    gan::GanConfig off = config;
    off.weights.gamma_counter = 0.0;

    AblationResult result;
    for (const auto& [tag, cfg, out] :
         {std::tuple{std::string("gamma_on"), on, &result.report_gamma_on},
          std::tuple{std::string("gamma_off"), off, &result.report_gamma_off}}) {
        gan::GanTrainOptions opts;
        opts.gan_dir = options.dir / tag / "gan";
        if (options.on_epoch) {
            opts.on_epoch = [&, tag = tag](const gan::EpochLosses& e) { options.on_epoch(tag, e); };
        }
        gan::train_gan(manifest, classifier, cfg, seed, opts);
        const gan::GanBundle bundle = gan::GanBundle::load(gan::latest_epoch_dir(opts.gan_dir));
        *out = evaluate_flips(bundle, classifier, manifest, options.split, tag);
        write_report(*out, options.dir, "flips_" + tag);
    }
    std::ofstream(options.dir / "ablation.json") << result.to_json().dump(2) << "\n";
    std::ofstream(options.dir / "ablation.txt") << result.summary();
    return result;
}

}  // namespace cfx::eval
