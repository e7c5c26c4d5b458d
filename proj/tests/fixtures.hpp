#pragma once

#include <filesystem>
#include <random>
#include <string>

#include "cfx/classifier.hpp"
#include "cfx/dataset.hpp"
#include "cfx/gan.hpp"
#include "cfx/image_io.hpp"
#include "gradcheck.hpp"

namespace cfx::testing {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path() /
                ("cfx_" + tag + "_" + std::to_string(rd()) + std::to_string(rd()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

private:
    std::filesystem::path path_;
};

/// Flatten plus one dense layer to two logits. Frozen.
inline clf::ClassifierModel tiny_classifier(int resolution, std::uint64_t seed = 1,
                                            double scale = 1.0) {
    clf::ClassifierConfig c = clf::ClassifierConfig::defaults(clf::Architecture::SmallCnn, resolution);
    nn::Network net(nlohmann::json{
        {"input", {1, resolution, resolution}},
        {"layers",
         {{{"type", "flatten"}},
          {{"type", "dense"}, {"in", resolution * resolution}, {"out", 2}, {"activation", "none"}}}}});
    net.initialize(nn::InitScheme::GlorotUniform, seed);
    for (const auto& p : net.parameters()) {
        nn::Var v = p.var;
        for (double& x : v.mutable_value().values()) x *= scale;
    }
    clf::ClassifierModel m(c, std::move(net));
    m.freeze();
    return m;
}

/// Single-conv generators and discriminators at `resolution`.
inline gan::GanConfig micro_config(int resolution = 8) {
    gan::GanConfig c;
    c.resolution = resolution;
    c.generator.architecture = "single_conv";
    c.patch_gan.architecture = "single_conv";
    c.epochs = 1;
    c.pool_size = 4;
    return c;
}

inline gan::GanBundle identity_bundle(const clf::ClassifierModel& classifier) {
    gan::GanConfig c = micro_config(classifier.resolution());
    c.generator.architecture = "identity";
    auto b = gan::GanBundle::create(c, classifier.checksum(), 3);
    b.freeze();
    return b;
}

inline nn::Var random_images(int n, int side, std::mt19937_64& rng) {
    return nn::Var(random_tensor({n, 1, side, side}, rng, -0.9, 0.9));
}

/// n_per_class random PNGs per label, split train/val/test in the ratio
/// 2:1:1 by index, written with a manifest under `dir`.
inline data::DatasetManifest random_dataset(const std::filesystem::path& dir, int n_per_class,
                                            int side, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    data::DatasetManifest m;
    m.resolution = side;
    m.seed = static_cast<std::int64_t>(seed);
    std::filesystem::create_directories(dir / "images");
    for (Label label : {Label::Normal, Label::Opacity}) {
        for (int i = 0; i < n_per_class; ++i) {
            std::vector<double> px(static_cast<std::size_t>(side) * side);
            for (double& v : px) v = io::from_byte(io::to_byte(u(rng)));
            const std::string id = std::string(to_string(label)) + "_" + std::to_string(i);
            io::write_png(dir / "images" / (id + ".png"), Image(side, std::move(px)));
            const Split split = i % 4 < 2 ? Split::Train : (i % 4 == 2 ? Split::Val : Split::Test);
            m.entries.push_back({id, "images/" + id + ".png", label, split});
        }
    }
    data::write_manifest(m, dir / data::kManifestFile);
    return data::read_manifest(dir / data::kManifestFile);
}

}  // namespace cfx::testing
