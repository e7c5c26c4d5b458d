#include "cfx/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numbers>
#include <random>
#include <set>
#include <sstream>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "cfx/digest.hpp"
#include "cfx/error.hpp"
#include "cfx/image_io.hpp"

namespace cfx::data {
namespace fs = std::filesystem;

namespace {

std::size_t split_index(Split s) { return static_cast<std::size_t>(s); }
std::size_t label_index(Label l) { return static_cast<std::size_t>(l); }

std::vector<std::string> split_csv_row(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream ss(line);
    std::string field;
    while (std::getline(ss, field, ',')) out.push_back(field);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

std::string sanitize(std::string s) {
    for (char& c : s) {
        const bool ok = std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.';
        if (!ok) c = '_';
    }
    return s;
}

std::string lower(std::string_view s) {
    std::string out(s);
    for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

}  // namespace

CountTable DatasetManifest::counts() const {
    CountTable t{};
    for (const auto& e : entries) ++t[label_index(e.label)][split_index(e.split)];
    return t;
}

std::size_t DatasetManifest::count(Label label, Split split) const {
    return counts()[label_index(label)][split_index(split)];
}

std::vector<const ManifestEntry*> DatasetManifest::select(Split split) const {
    std::vector<const ManifestEntry*> out;
    for (const auto& e : entries) {
        if (e.split == split) out.push_back(&e);
    }
    return out;
}

void DatasetManifest::validate() const {
    if (resolution <= 0) throw ValidationError("manifest resolution must be positive");
    std::unordered_set<std::string> ids;
    for (const auto& e : entries) {
        if (!ids.insert(e.id).second) throw ValidationError("duplicate id '" + e.id + "' in manifest");
        if (e.id.find_first_of(",\n") != std::string::npos ||
            e.path.find_first_of(",\n") != std::string::npos) {
            throw ValidationError("id/path may not contain commas or newlines: " + e.id);
        }
    }
}

void write_manifest(const DatasetManifest& manifest, const fs::path& file) {
    manifest.validate();
    if (file.has_parent_path()) fs::create_directories(file.parent_path());
    std::ofstream os(file);
    if (!os) throw RuntimeFailure("cannot write manifest " + file.string());
    os << "#resolution=" << manifest.resolution << " seed=" << manifest.seed << "\n";
    os << "id,path,label,split\n";
    for (const auto& e : manifest.entries) {
        os << e.id << ',' << e.path << ',' << to_string(e.label) << ',' << to_string(e.split)
           << '\n';
    }
    if (!os) throw RuntimeFailure("failed writing manifest " + file.string());
}

DatasetManifest read_manifest(const fs::path& file) {
    std::ifstream is(file);
    if (!is) throw ValidationError("manifest not found: " + file.string());
    DatasetManifest m;
    m.root = file.parent_path();
    std::string line;
    if (!std::getline(is, line) ||
        std::sscanf(line.c_str(), "#resolution=%d seed=%ld", &m.resolution, &m.seed) != 2) {
        throw ValidationError(file.string() + ": bad metadata line '" + line + "'");
    }
    if (!std::getline(is, line) || line != "id,path,label,split") {
        throw ValidationError(file.string() + ": expected header 'id,path,label,split'");
    }
    std::size_t row = 2;
    while (std::getline(is, line)) {
        ++row;
        if (line.empty()) continue;
        const auto f = split_csv_row(line);
        if (f.size() != 4) {
            throw ValidationError(file.string() + ":" + std::to_string(row) +
                                  ": expected 4 fields");
        }
        m.entries.push_back({f[0], f[1], parse_label(f[2]), parse_split(f[3])});
    }
    m.validate();
    return m;
}

ImageSample load_sample(const DatasetManifest& manifest, const ManifestEntry& entry) {
    Image img = io::read_image(manifest.root / entry.path);
    if (img.side() != manifest.resolution) {
        throw ValidationError(entry.path + " is " + std::to_string(img.side()) +
                              " px, manifest declares " + std::to_string(manifest.resolution));
    }
    return {entry.id, std::move(img), entry.label, entry.split};
}

std::vector<ImageSample> load_split(const DatasetManifest& manifest, Split split) {
    std::vector<ImageSample> out;
    for (const auto* e : manifest.select(split)) out.push_back(load_sample(manifest, *e));
    return out;
}

std::array<std::size_t, 3> split_sizes(std::size_t n, const SplitRatios& r) {
    const double total = static_cast<double>(n);
    const double want_train = r.train * total;
    const double want_test = r.test * total;
    std::size_t train = static_cast<std::size_t>(std::floor(want_train + 1e-9));
    std::size_t test = static_cast<std::size_t>(std::floor(want_test + 1e-9));
    std::size_t val = n - train - test;
    if (static_cast<double>(val) > r.val * total + 1.0 + 1e-9) {
        if (want_train - static_cast<double>(train) >= want_test - static_cast<double>(test)) {
            ++train;
        } else {
            ++test;
        }
        --val;
    }
    // Every split gets at least one sample; borrow from the largest.
    std::array<std::size_t, 3> sizes{train, val, test};
    for (auto& s : sizes) {
        if (s == 0) {
            auto largest = std::max_element(sizes.begin(), sizes.end());
            --*largest;
            ++s;
        }
    }
    return sizes;
}

DatasetManifest split(const DatasetManifest& manifest, const SplitRatios& r, std::int64_t seed) {
    const double total = r.train + r.val + r.test;
    if (r.train <= 0 || r.val <= 0 || r.test <= 0 || std::abs(total - 1.0) > 1e-9) {
        throw ValidationError("split ratios must be positive and sum to 1");
    }
    DatasetManifest out = manifest;
    out.seed = seed;
    for (Label label : {Label::Normal, Label::Opacity}) {
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < out.entries.size(); ++i) {
            if (out.entries[i].label == label) idx.push_back(i);
        }
        if (idx.empty()) continue;
        if (idx.size() < 3) {
            throw ValidationError("class " + std::string(to_string(label)) + " has " +
                                  std::to_string(idx.size()) +
                                  " samples; at least 3 are needed to populate every split");
        }
        std::sort(idx.begin(), idx.end(),
                  [&](std::size_t a, std::size_t b) { return out.entries[a].id < out.entries[b].id; });
        std::seed_seq seq{static_cast<std::uint64_t>(seed), static_cast<std::uint64_t>(label)};
        std::mt19937_64 rng(seq);
        std::shuffle(idx.begin(), idx.end(), rng);
        const auto sizes = split_sizes(idx.size(), r);
        std::size_t k = 0;
        for (std::size_t s = 0; s < 3; ++s) {
            for (std::size_t j = 0; j < sizes[s]; ++j) {
                out.entries[idx[k++]].split = static_cast<Split>(s);
            }
        }
    }
    return out;
}

IngestResult ingest(const fs::path& source_dir, const std::map<std::string, Label>& class_map,
                    int resolution, const fs::path& out_dir, std::int64_t seed,
                    const SplitRatios& ratios) {
    if (resolution <= 0) throw ValidationError("resolution must be positive");
    if (!fs::is_directory(source_dir)) {
        throw ValidationError("source directory not found: " + source_dir.string());
    }
    if (class_map.empty()) throw ValidationError("class map is empty");

    IngestResult result;
    DatasetManifest& m = result.manifest;
    m.resolution = resolution;
    m.seed = seed;
    m.root = out_dir;
    std::unordered_set<std::string> hashes;
    std::unordered_set<std::string> ids;

    for (const auto& [subdir, label] : class_map) {
        const fs::path dir = source_dir / subdir;
        std::vector<fs::path> files;
        if (fs::is_directory(dir)) {
            for (const auto& f : fs::directory_iterator(dir)) {
                if (f.is_regular_file()) files.push_back(f.path());
            }
        }
        std::sort(files.begin(), files.end());
        std::size_t kept = 0;
        for (const auto& file : files) {
            const auto bytes = io::read_file(file);
            if (!hashes.insert(sha256_hex(bytes)).second) {
                ++result.report.duplicates;
                continue;
            }
            Image img;
            try {
                img = io::decode_image(bytes, resolution);
            } catch (const ValidationError& e) {
                result.report.skipped.push_back({file.string(), e.what()});
                continue;
            }
            std::string id = lower(to_string(label)) + "_" + sanitize(file.stem().string());
            for (int suffix = 1; !ids.insert(id).second; ++suffix) {
                id = lower(to_string(label)) + "_" + sanitize(file.stem().string()) + "_" +
                     std::to_string(suffix);
            }
            const std::string rel = "images/" + id + ".png";
            io::write_png(out_dir / rel, img);
            m.entries.push_back({id, rel, label, Split::Train});
            ++kept;
        }
        if (kept == 0) {
            throw ValidationError("class '" + subdir + "' (" + std::string(to_string(label)) +
                                  ") has no decodable images under " + dir.string());
        }
        result.report.per_class[subdir] = kept;
    }
    if (result.report.duplicates > 0) {
        std::cerr << "warning: dropped " << result.report.duplicates
                  << " duplicate image(s) by content hash\n";
    }

    m = split(m, ratios, seed);
    m.root = out_dir;
    write_manifest(m, out_dir / kManifestFile);

    nlohmann::json report{{"duplicates", result.report.duplicates},
                          {"per_class", result.report.per_class},
                          {"skipped", nlohmann::json::array()}};
    for (const auto& s : result.report.skipped) {
        report["skipped"].push_back({{"path", s.path}, {"reason", s.reason}});
    }
    std::ofstream(out_dir / "ingest_report.json") << report.dump(2) << "\n";
    return result;
}

void SynthSpec::validate() const {
    if (n_per_class < 1) throw ValidationError("n_per_class must be at least 1");
    if (resolution < 16) {
        throw ValidationError("synthetic resolution must be at least 16 (got " +
                              std::to_string(resolution) + ")");
    }
    if (!(opacity_strength > 0.0 && opacity_strength <= 1.0)) {
        throw ValidationError("opacity_strength must lie in (0, 1]");
    }
}

Image synthesize_image(const SynthSpec& spec, Label label, int index) {
    spec.validate();
    std::seed_seq anatomy_seq{static_cast<std::uint64_t>(spec.noise_seed),
                              static_cast<std::uint64_t>(index), std::uint64_t{0x5eed},
                              static_cast<std::uint64_t>(label)};
    std::mt19937_64 rng(anatomy_seq);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    auto uni = [&](double lo, double hi) { return lo + (hi - lo) * u01(rng); };

    const int n = spec.resolution;
    const double background = uni(0.37, 0.43);
    const double tilt = uni(-0.12, 0.12);
    struct Wave {
        double fx, fy, phase, amp;
    };
    std::array<Wave, 3> waves{};
    for (auto& w : waves) w = {uni(0.5, 2.0), uni(0.5, 2.0), uni(0.0, 2 * std::numbers::pi), uni(0.015, 0.04)};

    struct Lung {
        double cx, cy, rx, ry;
    };
    const double spread = uni(0.17, 0.22);
    const double cy = 0.5 + uni(-0.04, 0.04);
    std::array<Lung, 2> lungs{Lung{0.5 - spread, cy, uni(0.13, 0.15), uni(0.26, 0.29)},
                              Lung{0.5 + spread, cy, uni(0.13, 0.15), uni(0.26, 0.29)}};
    const double depth = uni(1.0, 1.1);

    struct Blob {
        double x, y, sigma, amp;
    };
    std::vector<Blob> blobs;
    // Opacities range from faint to dense.
    const double severity = uni(0.25, 1.0);
    if (label == Label::Opacity) {
        const int count = 5 + static_cast<int>(rng() % 4);
        for (int b = 0; b < count; ++b) {
            const Lung& lung = lungs[rng() % 2];
            const double r = std::sqrt(u01(rng)) * 0.8;
            const double t = uni(0.0, 2 * std::numbers::pi);
            blobs.push_back({lung.cx + r * lung.rx * std::cos(t), lung.cy + r * lung.ry * std::sin(t),
                             uni(0.06, 0.1), severity * uni(0.6, 1.0)});
        }
    }
    std::array<Wave, 4> texture{};
    for (auto& w : texture) {
        const double f = uni(30.0, 45.0), th = uni(0.0, std::numbers::pi);
        w = {f * std::cos(th), f * std::sin(th), uni(0.0, 2 * std::numbers::pi), 0.0};
    }
    std::normal_distribution<double> grain(0.0, 0.03);

    std::vector<double> px(static_cast<std::size_t>(n) * n);
    for (int i = 0; i < n; ++i) {
        const double y = (i + 0.5) / n;
        for (int j = 0; j < n; ++j) {
            const double x = (j + 0.5) / n;
            double v = background + tilt * (y - 0.5);
            for (const auto& w : waves) {
                v += w.amp * std::cos(2 * std::numbers::pi * (w.fx * x + w.fy * y) + w.phase);
            }
            double mask = 0.0;
            for (const auto& l : lungs) {
                const double dx = (x - l.cx) / l.rx;
                const double dy = (y - l.cy) / l.ry;
                const double r = std::sqrt(dx * dx + dy * dy);
                mask = std::max(mask, 1.0 / (1.0 + std::exp((r - 1.0) * 12.0)));
            }
            v -= depth * mask;
            if (!blobs.empty()) {
                double cloud = 0.0;
                for (const auto& b : blobs) {
                    const double d2 = (x - b.x) * (x - b.x) + (y - b.y) * (y - b.y);
                    cloud += b.amp * std::exp(-d2 / (2 * b.sigma * b.sigma));
                }
                // Mottled texture inside the cloud, different for every image.
                double tex = 0.0;
                for (const auto& w : texture) tex += std::cos(w.fx * x + w.fy * y + w.phase);
                const double mottle = 0.5 + 0.25 * tex;
                v += spec.opacity_strength * std::min(cloud, 1.0) * mottle * mask * 1.5;
            }
            v += grain(rng);
            px[static_cast<std::size_t>(i) * n + j] = std::clamp(v, -1.0, 1.0);
        }
    }
    return Image(n, std::move(px));
}

DatasetManifest synthesize(const SynthSpec& spec, const fs::path& out_dir) {
    spec.validate();
    DatasetManifest m;
    m.resolution = spec.resolution;
    m.seed = spec.noise_seed;
    m.root = out_dir;
    for (Label label : {Label::Normal, Label::Opacity}) {
        for (int i = 0; i < spec.n_per_class; ++i) {
            char name[64];
            std::snprintf(name, sizeof name, "%s_%05d", lower(to_string(label)).c_str(), i);
            const std::string rel = std::string("images/") + name + ".png";
            io::write_png(out_dir / rel, synthesize_image(spec, label, i));
            m.entries.push_back({name, rel, label, Split::Train});
        }
    }
    if (spec.n_per_class >= 3) m = split(m, SplitRatios{}, spec.noise_seed);
    m.root = out_dir;
    write_manifest(m, out_dir / kManifestFile);
    return m;
}

}  // namespace cfx::data
