#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "cfx/image.hpp"

namespace cfx::data {

struct ManifestEntry {
    std::string id;
    std::string path;  // relative to DatasetManifest::root
    Label label = Label::Normal;
    Split split = Split::Train;

    friend bool operator==(const ManifestEntry&, const ManifestEntry&) = default;
};

/// counts[label][split]
using CountTable = std::array<std::array<std::size_t, 3>, 2>;

struct DatasetManifest {
    int resolution = 64;
    std::int64_t seed = 0;
    std::vector<ManifestEntry> entries;
    /// Directory the entry paths resolve against. Not serialised.
    std::filesystem::path root;

    CountTable counts() const;
    std::size_t count(Label label, Split split) const;
    std::vector<const ManifestEntry*> select(Split split) const;
    /// Throws ValidationError on duplicate ids or a non-positive resolution.
    void validate() const;

    friend bool operator==(const DatasetManifest& a, const DatasetManifest& b) {
        return a.resolution == b.resolution && a.seed == b.seed && a.entries == b.entries;
    }
};

inline constexpr const char* kManifestFile = "manifest.csv";

void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& file);
/// `root` of the result is the file's directory.
DatasetManifest read_manifest(const std::filesystem::path& file);

struct ImageSample {
    std::string id;
    Image pixels;
    Label label = Label::Normal;
    Split split = Split::Train;
};

ImageSample load_sample(const DatasetManifest& manifest, const ManifestEntry& entry);
std::vector<ImageSample> load_split(const DatasetManifest& manifest, Split split);

struct SplitRatios {
    double train = 0.7;
    double val = 0.1;
    double test = 0.2;
};

/// Per-class sample counts for one class of size `n`: train and test are
/// floored and validation takes the remainder, then one sample moves back
/// out of validation when it would exceed its share by more than one.
std::array<std::size_t, 3> split_sizes(std::size_t n, const SplitRatios& ratios);

/// Stratified, seed-deterministic reassignment of every entry's split.
DatasetManifest split(const DatasetManifest& manifest, const SplitRatios& ratios,
                      std::int64_t seed);

struct IngestReport {
    struct Skip {
        std::string path;
        std::string reason;
    };
    std::vector<Skip> skipped;
    std::size_t duplicates = 0;
    std::map<std::string, std::size_t> per_class;
};

struct IngestResult {
    DatasetManifest manifest;
    IngestReport report;
};

/// Reads `source_dir/<subdir>/*` for every subdir in `class_map`, writes
/// normalised PNGs plus manifest.csv and ingest_report.json under `out_dir`.
IngestResult ingest(const std::filesystem::path& source_dir,
                    const std::map<std::string, Label>& class_map, int resolution,
                    const std::filesystem::path& out_dir, std::int64_t seed = 0,
                    const SplitRatios& ratios = {});

struct SynthSpec {
    int n_per_class = 200;
    int resolution = 64;
    double opacity_strength = 0.6;
    std::int64_t noise_seed = 0;

    void validate() const;
};

/// One synthetic image; a pure function of (spec, label, index).
Image synthesize_image(const SynthSpec& spec, Label label, int index);

/// Writes n_per_class images of each class plus a manifest under `out_dir`,
/// split with the default ratios using noise_seed.
DatasetManifest synthesize(const SynthSpec& spec, const std::filesystem::path& out_dir);

}  // namespace cfx::data
