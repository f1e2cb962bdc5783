#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "t1map/evaluation.hpp"
#include "t1map/io.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

namespace fs = std::filesystem;

namespace {

const fs::path kWork = fs::temp_directory_path() / "t1map_cli_test";

std::string binary() {
    const char* bin = std::getenv("T1MAP_BIN");
    REQUIRE(bin != nullptr);
    return bin;
}

int run(const std::string& args) {
    const std::string cmd =
        binary() + " " + args + " >> " + (kWork / "cli.log").string() + " 2>&1";
    const int status = std::system(cmd.c_str());
    return WEXITSTATUS(status);
}

std::string slurp(const fs::path& path) {
    std::ifstream in(path);
    REQUIRE(in.good());
    return std::string((std::istreambuf_iterator<char>(in)),
                       std::istreambuf_iterator<char>());
}

size_t count_occurrences(const std::string& text, const std::string& needle) {
    size_t count = 0, pos = 0;
    while ((pos = text.find(needle, pos)) != std::string::npos) {
        ++count;
        pos += needle.size();
    }
    return count;
}

struct Setup {
    Setup() {
        fs::remove_all(kWork);
        fs::create_directories(kWork);
        std::ofstream phantom(kWork / "phantom.json");
        phantom << R"({"dims": [16, 16, 1], "regime": "native", "noise_sigma": 0.0})";
        phantom.close();
        std::ofstream train(kWork / "train.json");
        train << R"({"lambda": 0.01, "grid_points": 128, "grid_knee_ms": 2000.0,
                     "grid_frac": 0.75, "t_max_ms": 5000.0, "s_ref": 0.0,
                     "t_ref": 1000.0, "lr": 0.02, "epochs_pretrain": 0,
                     "epochs_finetune": 25, "subset_sizes": [3], "seed": 5,
                     "model": {"arity": 3, "hidden": [8]}})";
    }
};

const Setup& setup() {
    static Setup s;
    return s;
}

} // namespace

TEST_CASE("simulate is reproducible from seed and config") {
    setup();
    REQUIRE(run("simulate --config " + (kWork / "phantom.json").string() + " --seed 11 --out " +
                (kWork / "vol").string()) == 0);
    REQUIRE(run("simulate --config " + (kWork / "phantom.json").string() + " --seed 11 --out " +
                (kWork / "vol_again").string()) == 0);
    CHECK(fs::exists(kWork / "vol" / "run_manifest.json"));
    for (const char* file : {"signed.f32", "magnitude.f32", "truth_c.f32", "roi_mask.u8"})
        CHECK(slurp(kWork / "vol" / file) == slurp(kWork / "vol_again" / file));
}

TEST_CASE("noiseless simulate -> fit -> evaluate pipeline reports near-zero bias") {
    setup();
    REQUIRE(run("fit --volume " + (kWork / "vol").string() + " --method lm --out " +
                (kWork / "fit_lm").string() + " --threads 2") == 0);
    REQUIRE(run("evaluate --volume " + (kWork / "vol").string() +
                " --methods lm --n-runs 3 --subset-sizes 5 --seed 3 --out " +
                (kWork / "eval").string() + " --threads 2") == 0);

    const t1map::EvalReport report =
        t1map::read_report_csv(kWork / "eval" / "report.csv");
    REQUIRE(report.rows.size() == 1);
    CHECK(std::abs(report.rows[0].mean_bias_ms) < 1e-4);
    CHECK(report.rows[0].n_runs == 3);
    CHECK(fs::exists(kWork / "eval" / "report.txt"));
}

TEST_CASE("map rejects a subset size larger than the schedule") {
    setup();
    // needs some checkpoint to get past argument parsing; train a tiny one
    REQUIRE(run("labels --volume " + (kWork / "vol").string() + " --out " +
                (kWork / "labels").string() + " --threads 2") == 0);
    REQUIRE(run("train --volume " + (kWork / "vol").string() + " --labels " +
                (kWork / "labels").string() + " --config " + (kWork / "train.json").string() +
                " --model fcnn_physics --out " + (kWork / "ckpt").string() +
                " --threads 2") == 0);
    CHECK(run("map --checkpoint " + (kWork / "ckpt").string() + " --volume " +
              (kWork / "vol").string() + " --subset-size 20 --out " +
              (kWork / "map_bad").string()) != 0);
    // and an in-range subset works
    CHECK(run("map --checkpoint " + (kWork / "ckpt").string() + " --volume " +
              (kWork / "vol").string() + " --subset-size 3 --seed 2 --out " +
              (kWork / "map_ok").string() + " --threads 2") == 0);
    CHECK(fs::exists(kWork / "map_ok" / "t1_map.f32"));
    CHECK(fs::exists(kWork / "map_ok" / "t1_map_z0.ppm"));
}

TEST_CASE("plot emits one SVG per voxel with one marker per sample") {
    setup();
    // voxel (8, 3) sits in the myocardial ring of the 16x16 slice
    const int voxel = 8 + 16 * 3;
    REQUIRE(run("plot --fit " + (kWork / "fit_lm").string() + " --volume " +
                (kWork / "vol").string() + " --voxels " + std::to_string(voxel) +
                " --out " + (kWork / "plots").string()) == 0);
    const std::string svg = slurp(kWork / "plots" / ("voxel_" + std::to_string(voxel) + ".svg"));
    CHECK(count_occurrences(svg, "<circle") == 11);

    CHECK(run("plot --out " + (kWork / "plots_empty").string()) != 0);
}

TEST_CASE("unknown inputs exit nonzero with a diagnostic") {
    setup();
    CHECK(run("fit --volume " + (kWork / "does_not_exist").string() + " --out " +
              (kWork / "fit_bad").string()) != 0);
    CHECK(run("evaluate --volume " + (kWork / "vol").string() +
              " --methods lm --n-runs 2 --subset-sizes 2 --seed 1 --out " +
              (kWork / "eval_bad").string()) != 0);
}
