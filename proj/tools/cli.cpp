#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <csignal>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>

#include "cfx/classifier.hpp"
#include "cfx/dataset.hpp"
#include "cfx/error.hpp"
#include "cfx/eval.hpp"
#include "cfx/explain.hpp"
#include "cfx/gan.hpp"
#include "cfx/image_io.hpp"
#include "cfx/service.hpp"

namespace cfx::cli {
namespace fs = std::filesystem;

namespace {

struct Globals {
    std::int64_t seed = 0;
    fs::path out = "runs";
    std::string run = "default";

    fs::path root() const { return out / run; }
    fs::path dataset() const { return root() / "dataset"; }
    fs::path classifier() const { return root() / "classifier"; }
    fs::path gan() const { return root() / "gan"; }
    fs::path reports() const { return root() / "reports"; }
    fs::path explanations() const { return root() / "explanations"; }
};

// Optional overrides on top of an architecture's or preset's defaults.
struct ClassifierFlags {
    std::string arch = "SMALL_CNN";
    std::optional<int> epochs, batch;
    std::optional<double> lr, momentum, l2, dropout;
    std::optional<int> warmup;
};

struct GanFlags {
    std::string preset = "desk";
    bool plain = false;
    std::optional<int> epochs, batch, gen_filters, disc_filters, res_blocks, patch_layers, pool, max_steps;
    double lr = 0.0002, beta1 = 0.5, beta2 = 0.999;
    double lambda = 10.0, mu = 1.0, gamma = 1.0;
    std::vector<double> target_y{0.0, 1.0}, target_x{1.0, 0.0};
    std::string adversarial = "least_squares";
};

data::DatasetManifest load_manifest(const Globals& g) {
    const fs::path file = g.dataset() / data::kManifestFile;
    if (!fs::exists(file)) {
        throw ValidationError("missing dataset manifest " + file.string() +
                              " (run `synth` or `ingest` first)");
    }
    return data::read_manifest(file);
}

clf::ClassifierModel load_classifier(const Globals& g) {
    if (!fs::exists(g.classifier() / "weights.bin")) {
        throw ValidationError("missing classifier checkpoint " + g.classifier().string() +
                              " (run `train-classifier` first)");
    }
    return clf::ClassifierModel::load(g.classifier());
}

fs::path bundle_dir(const fs::path& gan_dir, std::optional<int> epoch) {
    if (!epoch) return gan::latest_epoch_dir(gan_dir);
    const fs::path dir = gan_dir / ("epoch_" + std::to_string(*epoch));
    if (!fs::is_directory(dir)) throw ValidationError("missing gan checkpoint " + dir.string());
    return dir;
}

void write_options(std::ostream& os, const CLI::App& app) {
    for (const CLI::Option* opt : app.get_options()) {
        if (opt->get_lnames().empty() || opt == app.get_help_ptr() || opt == app.get_config_ptr()) continue;
        const std::string& name = opt->get_lnames().front();
        const auto& results = opt->results();
        if (results.size() > 1) {
            os << name << "=[";
            for (std::size_t i = 0; i < results.size(); ++i) os << (i ? "," : "") << '"' << results[i] << '"';
            os << "]\n";
        } else if (results.size() == 1) {
            os << name << "=\"" << results.front() << "\"\n";
        } else if (!opt->get_default_str().empty() && opt->get_type_size() != 0) {
            os << name << "=" << opt->get_default_str() << "\n";
        }
    }
}

// Global options plus the active subcommand, readable again through --config.
void write_resolved(const CLI::App& app, const fs::path& dir, const std::string& name) {
    fs::create_directories(dir);
    std::ofstream os(dir / (name + ".ini"));
    write_options(os, app);
    for (const CLI::App* sub : app.get_subcommands()) {
        os << "\n[" << sub->get_name() << "]\n";
        write_options(os, *sub);
    }
}

clf::ClassifierConfig classifier_config(const ClassifierFlags& f, int resolution) {
    auto c = clf::ClassifierConfig::defaults(clf::parse_architecture(f.arch), resolution);
    if (f.epochs) c.epochs = *f.epochs;
    if (f.batch) c.batch_size = *f.batch;
    if (f.lr) c.optimizer.learning_rate = *f.lr;
    if (f.momentum) c.optimizer.momentum = *f.momentum;
    if (f.warmup) c.optimizer.warmup_steps = *f.warmup;
    if (f.l2) c.l2_factor = *f.l2;
    if (f.dropout) c.dropout_p = *f.dropout;
    c.validate();
    return c;
}

clf::ProbPair pair_flag(const std::vector<double>& v, const char* name) {
    if (v.size() != 2) throw ValidationError(std::string(name) + " needs two comma-separated values");
    return {v[0], v[1]};
}

gan::GanConfig gan_config(const GanFlags& f, int resolution) {
    gan::GanConfig c;
    if (f.preset == "desk") {
        c = gan::GanConfig::desk(resolution);
    } else if (f.preset == "full") {
        c.resolution = resolution;
    } else {
        throw ValidationError("unknown preset '" + f.preset + "' (desk or full)");
    }
    if (f.epochs) c.epochs = *f.epochs;
    if (f.batch) c.batch_size = *f.batch;
    if (f.gen_filters) c.generator.filters = *f.gen_filters;
    if (f.disc_filters) c.patch_gan.filters = *f.disc_filters;
    if (f.res_blocks) c.generator.residual_blocks = *f.res_blocks;
    if (f.patch_layers) c.patch_gan.n_downsample_layers = *f.patch_layers;
    if (f.pool) c.pool_size = *f.pool;
    if (f.max_steps) c.max_steps_per_epoch = *f.max_steps;
    c.optimizer = {f.lr, f.beta1, f.beta2};
    c.weights.lambda_cycle = f.lambda;
    c.weights.mu_identity = f.mu;
    c.weights.gamma_counter = f.plain ? 0.0 : f.gamma;
    c.weights.target_y = pair_flag(f.target_y, "--target-y");
    c.weights.target_x = pair_flag(f.target_x, "--target-x");
    c.adversarial = gan::parse_adversarial_form(f.adversarial);
    c.validate();
    return c;
}

void add_gan_flags(CLI::App* cmd, GanFlags& f) {
    cmd->add_option("--preset", f.preset, "Filter counts and epochs: desk (8/16 filters, 2 epochs) or full (64/64, 20)")
        ->capture_default_str();
    cmd->add_option("--epochs", f.epochs, "Training epochs [full 20, desk 2]");
    cmd->add_option("--batch", f.batch, "Batch size [1]");
    cmd->add_option("--lr", f.lr, "Adam learning rate")->capture_default_str();
    cmd->add_option("--beta1", f.beta1, "Adam beta1")->capture_default_str();
    cmd->add_option("--beta2", f.beta2, "Adam beta2")->capture_default_str();
    cmd->add_option("--lambda", f.lambda, "Cycle-consistency weight")->capture_default_str();
    cmd->add_option("--mu", f.mu, "Identity weight")->capture_default_str();
    cmd->add_option("--gamma", f.gamma, "Counterfactual weight")->capture_default_str();
    cmd->add_option("--target-y", f.target_y, "Classifier target for G outputs")
        ->delimiter(',')->expected(2)->capture_default_str();
    cmd->add_option("--target-x", f.target_x, "Classifier target for F outputs")
        ->delimiter(',')->expected(2)->capture_default_str();
    cmd->add_option("--gen-filters", f.gen_filters, "Generator base filters [full 64, desk 8]");
    cmd->add_option("--disc-filters", f.disc_filters, "PatchGAN base filters [full 64, desk 16]");
    cmd->add_option("--res-blocks", f.res_blocks, "Residual blocks [6 up to 128 px, else 9]");
    cmd->add_option("--patch-layers", f.patch_layers, "PatchGAN stride-2 layers [from resolution]");
    cmd->add_option("--pool", f.pool, "Image history size [50]");
    cmd->add_option("--max-steps", f.max_steps, "Cap on steps per epoch [0 = full pass]");
    cmd->add_option("--adversarial", f.adversarial, "least_squares or log")->capture_default_str();
}

int execute(const std::vector<std::string>& args) {
    CLI::App app{"Counterfactual explanations for a binary image classifier"};
    app.set_config("--config", "", "Flat INI/TOML config file; command-line flags override it");
    app.allow_config_extras(CLI::config_extras_mode::error);
    app.require_subcommand(1);

    Globals g;
    app.add_option("--seed", g.seed, "Global seed for all randomness")->capture_default_str();
    app.add_option("--out", g.out, "Output root")->capture_default_str();
    app.add_option("--run", g.run, "Run name; outputs go to <out>/<run>/")->capture_default_str();

    // synth
    data::SynthSpec synth;
    auto* synth_cmd = app.add_subcommand("synth", "Write the synthetic two-class dataset");
    synth_cmd->add_option("--n", synth.n_per_class, "Images per class")->capture_default_str();
    synth_cmd->add_option("--res", synth.resolution, "Resolution in pixels")->capture_default_str();
    synth_cmd->add_option("--strength", synth.opacity_strength, "Opacity strength in (0, 1]")->capture_default_str();

    // ingest
    fs::path source;
    int ingest_res = 64;
    std::vector<std::string> class_dirs{"NORMAL:NORMAL", "OPACITY:OPACITY"};
    auto* ingest_cmd = app.add_subcommand("ingest", "Import a labeled image folder");
    ingest_cmd->add_option("--source", source, "Folder holding one subfolder per class")->required();
    ingest_cmd->add_option("--res", ingest_res, "Resolution in pixels")->capture_default_str();
    ingest_cmd->add_option("--class-dir", class_dirs, "subfolder:LABEL pairs")->delimiter(',')->capture_default_str();

    // split
    data::SplitRatios ratios;
    auto* split_cmd = app.add_subcommand("split", "Reassign train/val/test splits of the dataset");
    split_cmd->add_option("--train", ratios.train, "Train fraction")->capture_default_str();
    split_cmd->add_option("--val", ratios.val, "Validation fraction")->capture_default_str();
    split_cmd->add_option("--test", ratios.test, "Test fraction")->capture_default_str();

    // train-classifier
    ClassifierFlags cf;
    auto* clf_cmd = app.add_subcommand("train-classifier", "Train the classifier on the dataset");
    clf_cmd->add_option("--arch", cf.arch, "SMALL_CNN or ALEXNET_VARIANT")->capture_default_str();
    clf_cmd->add_option("--epochs", cf.epochs, "Epochs [ALEXNET_VARIANT 1000, SMALL_CNN 30]");
    clf_cmd->add_option("--batch", cf.batch, "Batch size [32]");
    clf_cmd->add_option("--lr", cf.lr, "SGD learning rate [ALEXNET_VARIANT 0.0001, SMALL_CNN 0.05]");
    clf_cmd->add_option("--momentum", cf.momentum, "SGD momentum [0.9]");
    clf_cmd->add_option("--warmup", cf.warmup, "Linear learning-rate warmup steps [ALEXNET_VARIANT 0, SMALL_CNN 50]");
    clf_cmd->add_option("--l2", cf.l2, "L2 regularisation factor [ALEXNET_VARIANT 0.001, SMALL_CNN 0]");
    clf_cmd->add_option("--dropout", cf.dropout, "Dropout probability [ALEXNET_VARIANT 0.4, SMALL_CNN 0.25]");

    // train-cf
    GanFlags gf;
    auto* cf_cmd = app.add_subcommand("train-cf", "Train the counterfactual CycleGAN");
    add_gan_flags(cf_cmd, gf);
    cf_cmd->add_flag("--plain", gf.plain, "Plain CycleGAN: sets gamma to 0");

    // explain
    fs::path image_path;
    std::string explain_id;
    int frames = 0;
    std::optional<int> explain_epoch;
    auto* explain_cmd = app.add_subcommand("explain", "Explain one image");
    explain_cmd->add_option("--image", image_path, "Input image")->required();
    explain_cmd->add_option("--id", explain_id, "Name of the output folder [image stem]");
    explain_cmd->add_option("--frames", frames, "Interpolation frames, 2..33 (0 = none)")->capture_default_str();
    explain_cmd->add_option("--epoch", explain_epoch, "GAN checkpoint epoch [latest]");

    // evaluate
    std::string eval_split = "TEST";
    std::optional<int> eval_epoch;
    fs::path eval_gan;
    auto* eval_cmd = app.add_subcommand("evaluate", "Flip-accuracy report for a trained bundle");
    eval_cmd->add_option("--split", eval_split, "TRAIN, VAL or TEST")->capture_default_str();
    eval_cmd->add_option("--epoch", eval_epoch, "GAN checkpoint epoch [latest]");
    eval_cmd->add_option("--gan-dir", eval_gan, "GAN directory [<out>/<run>/gan]");

    // ablation
    GanFlags af;
    std::string ablation_split = "TEST";
    auto* ablation_cmd = app.add_subcommand("ablation", "Train with gamma on and off and compare flip accuracy");
    add_gan_flags(ablation_cmd, af);
    ablation_cmd->add_option("--split", ablation_split, "Evaluation split")->capture_default_str();

    // plan-pairs
    std::vector<std::string> classes;
    bool pairs_json = false;
    auto* pairs_cmd = app.add_subcommand("plan-pairs", "List the pairwise models a k-class problem needs");
    pairs_cmd->add_option("--classes", classes, "Comma-separated class names")->delimiter(',')->required();
    pairs_cmd->add_flag("--json", pairs_json, "Print JSON");

    // serve
    service::ServiceOptions so;
    bool expose = false;
    auto* serve_cmd = app.add_subcommand("serve", "HTTP inference service over the run's checkpoints");
    serve_cmd->add_option("--host", so.host, "Bind address")->capture_default_str();
    serve_cmd->add_option("--port", so.port, "Port (0 picks a free one)")->capture_default_str();
    serve_cmd->add_option("--max-bytes", so.max_body_bytes, "Request body limit")->capture_default_str();
    serve_cmd->add_flag("--expose", expose, "Bind 0.0.0.0 instead of the loopback address");

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kOk : kValidation;
    }

    if (*synth_cmd) {
        synth.noise_seed = g.seed;
        data::synthesize(synth, g.dataset());
        write_resolved(app, g.dataset(), "synth");
        std::cout << "wrote " << 2 * synth.n_per_class << " images to " << g.dataset().string() << "\n";
    } else if (*ingest_cmd) {
        if (!fs::is_directory(source)) throw ValidationError("source folder not found: " + source.string());
        std::map<std::string, Label> map;
        for (const auto& pair : class_dirs) {
            const auto colon = pair.find(':');
            if (colon == std::string::npos) throw ValidationError("--class-dir expects subfolder:LABEL, got '" + pair + "'");
            map[pair.substr(0, colon)] = parse_label(pair.substr(colon + 1));
        }
        const auto r = data::ingest(source, map, ingest_res, g.dataset(), g.seed);
        write_resolved(app, g.dataset(), "ingest");
        std::cout << "ingested " << r.manifest.entries.size() << " images (" << r.report.duplicates
                  << " duplicates, " << r.report.skipped.size() << " skipped)\n";
    } else if (*split_cmd) {
        auto m = data::split(load_manifest(g), ratios, g.seed);
        data::write_manifest(m, g.dataset() / data::kManifestFile);
        write_resolved(app, g.dataset(), "split");
        for (Split s : {Split::Train, Split::Val, Split::Test}) {
            std::cout << to_string(s) << ' ' << m.select(s).size() << "\n";
        }
    } else if (*clf_cmd) {
        const auto m = load_manifest(g);
        const auto config = classifier_config(cf, m.resolution);
        clf::TrainOptions opts;
        opts.on_epoch = [](const clf::EpochRecord& r) {
            std::cout << "epoch " << r.epoch << " loss " << r.train_loss << " train_acc " << r.train_accuracy
                      << " val_acc " << r.val_accuracy << std::endl;
        };
        auto model = clf::train(clf::build(config, g.seed), m, config, g.seed, opts);
        model.save(g.classifier());
        const auto metrics = clf::evaluate_classifier(model, m, Split::Test);
        std::ofstream(g.classifier() / "test_metrics.json") << metrics.to_json().dump(2) << "\n";
        write_resolved(app, g.classifier(), "train-classifier");
        std::cout << "TEST accuracy " << metrics.accuracy << " f1 " << metrics.f1 << " f2 " << metrics.f2 << "\n";
    } else if (*cf_cmd) {
        const auto m = load_manifest(g);
        const auto c = load_classifier(g);
        const auto config = gan_config(gf, m.resolution);
        gan::GanTrainOptions opts;
        opts.gan_dir = g.gan();
        opts.on_epoch = [](const gan::EpochLosses& e) {
            std::cout << "epoch " << e.epoch;
            for (const auto& [k, v] : e.components) std::cout << ' ' << k << ' ' << v;
            std::cout << std::endl;
        };
        gan::train_gan(m, c, config, g.seed, opts);
        write_resolved(app, g.gan(), "train-cf");
    } else if (*explain_cmd) {
        if (!fs::exists(image_path)) throw ValidationError("image not found: " + image_path.string());
        if (frames != 0 && (frames < 2 || frames > 33)) throw ValidationError("--frames must lie in [2, 33]");
        const auto c = load_classifier(g);
        const auto bundle = gan::GanBundle::load(bundle_dir(g.gan(), explain_epoch));
        const Image image = io::read_image(image_path, c.resolution());
        const std::string id = explain_id.empty() ? image_path.stem().string() : explain_id;
        const auto result = explain::explain(bundle, c, image, id);
        const fs::path dir = g.explanations() / id;
        explain::write_explanation(result, dir, c, frames);
        write_resolved(app, dir, "explain");
        std::cout << result.to_json().dump(2) << "\n";
    } else if (*eval_cmd) {
        const auto m = load_manifest(g);
        const auto c = load_classifier(g);
        const fs::path gan_dir = eval_gan.empty() ? g.gan() : eval_gan;
        const fs::path dir = bundle_dir(gan_dir, eval_epoch);
        const auto bundle = gan::GanBundle::load(dir);
        const std::string tag = dir.parent_path().filename().string() + "/" + dir.filename().string();
        const auto report = eval::evaluate_flips(bundle, c, m, parse_split(eval_split), tag);
        eval::write_report(report, g.reports(), "flips");
        write_resolved(app, g.reports(), "evaluate");
        std::cout << report.text_table();
    } else if (*ablation_cmd) {
        const auto m = load_manifest(g);
        const auto c = load_classifier(g);
        const auto config = gan_config(af, m.resolution);
        eval::AblationOptions opts;
        opts.dir = g.root() / "ablation";
        opts.split = parse_split(ablation_split);
        opts.on_epoch = [](const std::string& tag, const gan::EpochLosses& e) {
            std::cout << tag << " epoch " << e.epoch << " gen_total " << e.components.at("gen_total")
                      << " counter " << e.components.at("counter") << std::endl;
        };
        const auto result = eval::ablation(m, c, config, g.seed, opts);
        fs::create_directories(g.reports());
        std::ofstream(g.reports() / "ablation.json") << result.to_json().dump(2) << "\n";
        std::ofstream(g.reports() / "ablation.txt") << result.summary();
        write_resolved(app, opts.dir, "ablation");
        std::cout << result.summary();
    } else if (*pairs_cmd) {
        const auto plan = explain::plan_pairs(classes);
        if (pairs_json) {
            std::cout << plan.to_json().dump(2) << "\n";
        } else {
            std::cout << plan.class_names.size() << " classes need " << plan.pairs.size() << " models\n";
            for (const auto& [a, b] : plan.pairs) std::cout << a << " <-> " << b << "\n";
        }
    } else if (*serve_cmd) {
        if (expose) so.host = "0.0.0.0";
        auto state = std::make_shared<const service::ServiceState>(
            service::load_state(g.classifier(), g.gan(), g.dataset()));
        service::Server server(state, so);
        server.bind();
        server.listen();
    }
    return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args) {
    try {
        return execute(args);
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kValidation;
    } catch (const nlohmann::json::exception& e) {
        std::cerr << "error: malformed file: " << e.what() << "\n";
        return kValidation;
    } catch (const std::exception& e) {
        std::cerr << "failure: " << e.what() << "\n";
        return kRuntime;
    }
}

int run(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return run(args);
}

}  // namespace cfx::cli
