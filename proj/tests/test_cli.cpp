#include <fstream>
#include <sstream>

#include "cfx/eval.hpp"
#include "cli.hpp"
#include "doctest.h"
#include "fixtures.hpp"

using namespace cfx;
using cfx::testing::TempDir;

namespace {

int run_cli(std::vector<std::string> args) { return cfx::cli::run(args); }

std::string slurp(const std::filesystem::path& p) {
    std::ifstream is(p, std::ios::binary);
    std::ostringstream os;
    os << is.rdbuf();
    return os.str();
}

// Relative path -> contents for every file under `root`.
std::map<std::string, std::string> tree(const std::filesystem::path& root) {
    std::map<std::string, std::string> out;
    for (const auto& e : std::filesystem::recursive_directory_iterator(root)) {
        if (e.is_regular_file()) out[std::filesystem::relative(e.path(), root).string()] = slurp(e.path());
    }
    return out;
}

}  // namespace

TEST_CASE("exit codes") {
    TempDir dir("cli_codes");
    const std::string out = dir.path().string();
    CHECK(run_cli({"--help"}) == cfx::cli::kOk);
    CHECK(run_cli({"train-cf", "--help"}) == cfx::cli::kOk);
    CHECK(run_cli({}) == cfx::cli::kValidation);
    CHECK(run_cli({"frobnicate"}) == cfx::cli::kValidation);
    CHECK(run_cli({"synth", "--bogus"}) == cfx::cli::kValidation);
    CHECK(run_cli({"--out", out, "synth", "--n", "2", "--res", "8"}) == cfx::cli::kValidation);
    CHECK(run_cli({"--out", out, "evaluate"}) == cfx::cli::kValidation);
    CHECK(run_cli({"--out", out, "train-classifier"}) == cfx::cli::kValidation);
    CHECK(run_cli({"--out", out, "explain", "--image", (dir / "none.png").string()}) == cfx::cli::kValidation);
    CHECK(run_cli({"plan-pairs", "--classes", "a,b,a"}) == cfx::cli::kValidation);
    CHECK(run_cli({"plan-pairs", "--classes", "a,b,c,d"}) == cfx::cli::kOk);

    std::ofstream(dir / "typo.ini") << "sed=3\n";
    CHECK(run_cli({"--config", (dir / "typo.ini").string(), "--out", out, "synth"}) == cfx::cli::kValidation);

    // An unwritable output root is a runtime failure.
    std::ofstream(dir / "blocker") << "x";
    CHECK(run_cli({"--out", (dir / "blocker").string(), "synth", "--n", "3", "--res", "16"}) == cfx::cli::kRuntime);
}

TEST_CASE("synth is reproducible and records its resolved config") {
    TempDir dir("cli_synth");
    const std::string a = (dir / "a").string(), b = (dir / "b").string();
    REQUIRE(run_cli({"--seed", "7", "--out", a, "synth", "--n", "10", "--res", "16"}) == 0);
    REQUIRE(run_cli({"--seed", "7", "--out", b, "synth", "--n", "10", "--res", "16"}) == 0);
    auto ta = tree(dir / "a"), tb = tree(dir / "b");
    const std::string ini_key = (std::filesystem::path("default") / "dataset" / "synth.ini").string();
    CHECK(ta.at(ini_key).find("out=") != std::string::npos);
    ta.erase(ini_key);
    tb.erase(ini_key);  // differs only in the recorded --out
    CHECK(ta == tb);

    const std::string ini = slurp(dir / "a" / "default" / "dataset" / "synth.ini");
    CHECK(ini.find("seed=\"7\"") != std::string::npos);
    CHECK(ini.find("[synth]") != std::string::npos);
    CHECK(ini.find("n=\"10\"") != std::string::npos);

    // The recorded config reproduces the run.
    const std::string c = (dir / "c").string();
    REQUIRE(run_cli({"--config", (dir / "a" / "default" / "dataset" / "synth.ini").string(), "--out", c, "synth"}) == 0);
    CHECK(tree(dir / "c" / "default" / "dataset" / "images") == tree(dir / "a" / "default" / "dataset" / "images"));

    // Flags win over the config file.
    std::ofstream(dir / "cfg.ini") << "seed=7\n[synth]\nn=4\nres=16\n";
    const std::string d = (dir / "d").string();
    REQUIRE(run_cli({"--config", (dir / "cfg.ini").string(), "--out", d, "synth", "--n", "5"}) == 0);
    CHECK(data::read_manifest(dir / "d" / "default" / "dataset" / "manifest.csv").entries.size() == 10);
}

TEST_CASE("split reassigns the manifest in place") {
    TempDir dir("cli_split");
    const std::string out = dir.path().string();
    REQUIRE(run_cli({"--out", out, "synth", "--n", "20", "--res", "16"}) == 0);
    REQUIRE(run_cli({"--out", out, "--seed", "3", "split", "--train", "0.5", "--val", "0.25", "--test", "0.25"}) == 0);
    const auto m = data::read_manifest(dir / "default" / "dataset" / "manifest.csv");
    CHECK(m.seed == 3);
    CHECK(m.select(Split::Test).size() == 10);
}

TEST_CASE("evaluate on an identity fixture bundle reports zero flips") {
    TempDir dir("cli_eval");
    const auto run = dir / "default";
    cfx::testing::random_dataset(run / "dataset", 8, 8, 2);
    const auto C = cfx::testing::tiny_classifier(8, 3, 3.0);
    C.save(run / "classifier");
    cfx::testing::identity_bundle(C).save(run / "gan" / "epoch_1");

    REQUIRE(run_cli({"--out", dir.path().string(), "evaluate"}) == 0);
    const auto j = nlohmann::json::parse(slurp(run / "reports" / "flips.json"));
    CHECK(j.at("flip_accuracy_total") == 0.0);
    CHECK(j.at("flip_accuracy_normal") == 0.0);
    CHECK(j.at("flip_accuracy_opacity") == 0.0);
    CHECK(j.at("n_images") == 4);
    CHECK(std::filesystem::exists(run / "reports" / "evaluate.ini"));

    CHECK(run_cli({"--out", dir.path().string(), "evaluate", "--epoch", "2"}) == cfx::cli::kValidation);

    const auto image = run / "dataset" / "images" / "NORMAL_0.png";
    REQUIRE(run_cli({"--out", dir.path().string(), "explain", "--image", image.string(), "--frames", "3"}) == 0);
    const auto e = nlohmann::json::parse(slurp(run / "explanations" / "NORMAL_0" / "result.json"));
    CHECK(e.at("flipped") == false);
    CHECK(e.at("frames").size() == 3);
    CHECK(run_cli({"--out", dir.path().string(), "explain", "--image", image.string(), "--frames", "40"}) ==
          cfx::cli::kValidation);
}

TEST_CASE("training commands write their checkpoints") {
    TempDir dir("cli_train");
    const std::string out = dir.path().string();
    REQUIRE(run_cli({"--out", out, "synth", "--n", "12", "--res", "16"}) == 0);
    REQUIRE(run_cli({"--out", out, "train-classifier", "--epochs", "1"}) == 0);
    CHECK(std::filesystem::exists(dir / "default" / "classifier" / "weights.bin"));
    CHECK(std::filesystem::exists(dir / "default" / "classifier" / "test_metrics.json"));
    CHECK(run_cli({"--out", out, "train-classifier", "--arch", "LENET"}) == cfx::cli::kValidation);

    REQUIRE(run_cli({"--out", out, "train-cf", "--plain", "--epochs", "1", "--max-steps", "2", "--gen-filters", "2",
                 "--disc-filters", "2", "--res-blocks", "1"}) == 0);
    const auto b = gan::GanBundle::load(dir / "default" / "gan" / "epoch_1");
    CHECK(b.config().weights.gamma_counter == 0.0);
    CHECK(b.config().generator.filters == 2);
    CHECK(std::filesystem::exists(dir / "default" / "gan" / "losses.csv"));
    CHECK(run_cli({"--out", out, "train-cf", "--preset", "huge"}) == cfx::cli::kValidation);
    CHECK(run_cli({"--out", out, "train-cf", "--target-y", "0.7,0.7"}) == cfx::cli::kValidation);
}
