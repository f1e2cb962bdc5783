#include "t1map/inference.hpp"

#include "t1map/fit.hpp"
#include "t1map/rng.hpp"
#include "t1map/training.hpp"

#include <doctest.h>

#include <cmath>

using namespace t1map;

namespace {

const MolliSchedule kSchedule = build_schedule("3(3)3(3)5", 1000.0, {100.0, 180.0, 260.0});

struct Fixture {
    PhantomVolume volume;
    LstmOdeModel model;
};

// one lightly trained model shared by the inference tests
const Fixture& fixture() {
    static const Fixture fx = [] {
        PhantomSpec spec = PhantomSpec::with_regime("native");
        spec.dims = {12, 12, 1};
        spec.noise_sigma = 0.0;
        spec.schedule = kSchedule;
        Fixture out;
        out.volume = synthesize_phantom(spec, 31);
        const LabelSet labels = fit_labels(out.volume, 4);

        LstmOdeConfig mc;
        mc.d_emb = 4;
        mc.hidden = 8;
        mc.dyn_hidden = 8;
        mc.dec_hidden = 8;
        out.model = LstmOdeModel::init(mc, 17);
        TrainConfig config;
        config.epochs_pretrain = 60;
        config.epochs_finetune = 60;
        config.lr = 0.02;
        config.grid_points = 200;
        config.seed = 13;
        train(out.model, out.volume, labels, config, 4);
        return out;
    }();
    return fx;
}

} // namespace

TEST_CASE("reconstruction_mse is zero for a perfect model curve") {
    const RelaxationParams p{0.9, 1.9, 1.1};
    VoxelSeries s;
    s.times_ms = Eigen::Vector4d(0.1, 0.5, 1.2, 3.0);
    s.signals = signal(p, s.times_ms);
    s.normalized = true;
    CHECK(reconstruction_mse(p, s) == doctest::Approx(0.0).epsilon(1e-15));
}

TEST_CASE("polarity search returns the argmin candidate") {
    const Fixture& fx = fixture();
    const ParamVars vars = ParamVars::bind(fx.model.params);
    int checked = 0;
    for (int v = 0; v < fx.volume.voxel_count() && checked < 10; ++v) {
        if (!fx.volume.roi_mask[v]) continue;
        ++checked;
        const VoxelSeries mag = fx.volume.voxel_series(v, Polarity::Magnitude);
        const VoxelInference inf = polarity_corrected_infer(fx.model, vars, mag);
        REQUIRE(inf.valid);
        CHECK(inf.candidates == mag.size() + 1);

        // recompute every candidate independently
        ad::NoGradGuard guard;
        double best = std::numeric_limits<double>::infinity();
        int best_j = -1;
        for (int j = 0; j <= mag.size(); ++j) {
            const VoxelSeries trial =
                normalize(apply_polarity(mag, j), fx.model.s_ref, fx.model.t_ref);
            const RelaxationParams params = lstm_ode_forward(fx.model, vars, trial).values();
            const double residual = reconstruction_mse(params, trial);
            if (residual < best) {
                best = residual;
                best_j = j;
            }
        }
        CHECK(inf.null_index == best_j);
        CHECK(inf.residual == doctest::Approx(best).epsilon(1e-12));
    }
}

TEST_CASE("map_volume equals per-voxel inference bit-exactly for any thread count") {
    const Fixture& fx = fixture();
    const io::ModelCheckpoint ckpt = fx.model;
    const MapResult serial = map_volume(ckpt, fx.volume, {}, 1);
    const MapResult parallel = map_volume(ckpt, fx.volume, {}, 4);
    CHECK(serial.t1_map == parallel.t1_map);
    CHECK(serial.null_index_map == parallel.null_index_map);
    CHECK(serial.residual_map == parallel.residual_map);

    const ParamVars vars = ParamVars::bind(fx.model.params);
    for (int v = 0; v < fx.volume.voxel_count(); ++v) {
        if (fx.volume.tissue[v] == Tissue::Background) {
            CHECK(serial.t1_map[v] == 0.0);
            CHECK(!serial.valid_mask[v]);
            continue;
        }
        const VoxelInference inf = polarity_corrected_infer(
            fx.model, vars, fx.volume.voxel_series(v, Polarity::Magnitude));
        CHECK(serial.t1_map[v] == inf.t1_ms);
        CHECK(serial.null_index_map[v] == inf.null_index);
    }
}

TEST_CASE("subset inference runs N+1 trials and respects the subset") {
    const Fixture& fx = fixture();
    const ParamVars vars = ParamVars::bind(fx.model.params);
    int v = 0;
    while (!fx.volume.roi_mask[v]) ++v;
    VoxelSeries mag = fx.volume.voxel_series(v, Polarity::Magnitude);
    VoxelSeries sub;
    sub.polarity = Polarity::Magnitude;
    sub.signals = Eigen::Vector3d(mag.signals[0], mag.signals[4], mag.signals[9]);
    sub.times_ms = Eigen::Vector3d(mag.times_ms[0], mag.times_ms[4], mag.times_ms[9]);
    const VoxelInference inf = polarity_corrected_infer(fx.model, vars, sub);
    CHECK(inf.candidates == 4);

    const MapResult result = map_volume(fx.model, fx.volume, {0, 4, 9}, 2);
    CHECK(result.t1_map[v] == inf.t1_ms);
    CHECK(result.null_index_map[v] == inf.null_index);
}

TEST_CASE("trained model null indices mostly agree with the classical restorer") {
    const Fixture& fx = fixture();
    const MapResult result = map_volume(fx.model, fx.volume, {}, 4);
    int total = 0, agree = 0;
    for (int v = 0; v < fx.volume.voxel_count(); ++v) {
        if (!fx.volume.roi_mask[v]) continue;
        const FitResult classical =
            polarity_restore_fit(fx.volume.voxel_series(v, Polarity::Magnitude));
        ++total;
        if (classical.null_index == result.null_index_map[v]) ++agree;
    }
    REQUIRE(total > 0);
    CHECK(static_cast<double>(agree) / total >= 0.9);
}

TEST_CASE("map_volume input validation") {
    const Fixture& fx = fixture();
    CHECK_THROWS_AS(map_volume(fx.model, fx.volume, {0, 99}, 1), std::invalid_argument);
    CHECK_THROWS_AS(map_volume(fx.model, fx.volume, {3, 3}, 1), std::invalid_argument);

    PhantomVolume empty = fx.volume;
    std::fill(empty.tissue.begin(), empty.tissue.end(), Tissue::Background);
    CHECK_THROWS_AS(map_volume(fx.model, empty, {}, 1), std::invalid_argument);
}

TEST_CASE("classical mapping recovers a noiseless volume") {
    const Fixture& fx = fixture();
    for (const char* method : {"lm", "trf"}) {
        const io::VolumeMaps maps = classical_map_volume(fx.volume, method, {}, 4);
        for (int v = 0; v < fx.volume.voxel_count(); ++v) {
            if (fx.volume.tissue[v] == Tissue::Background) continue;
            REQUIRE(maps.valid_mask[v]);
            const double truth = t1_from_params(fx.volume.truth[v]);
            CHECK(std::abs(maps.t1_map[v] - truth) < 1e-4 * truth);
        }
    }
    CHECK_THROWS_AS(classical_map_volume(fx.volume, "nope", {}, 1), std::invalid_argument);
}

TEST_CASE("direct-head FCNN maps produce T1 without polarity trials") {
    const Fixture& fx = fixture();
    const LabelSet labels = fit_labels(fx.volume, 4);
    FcnnConfig fc;
    fc.arity = 11;
    fc.hidden = {8};
    FcnnModel direct = FcnnModel::init(fc, FcnnHead::DirectT1, 9);
    TrainConfig config;
    config.epochs_pretrain = 0;
    config.epochs_finetune = 30;
    config.lr = 0.02;
    config.grid_points = 32;
    config.subset_sizes = {11};
    config.seed = 5;
    train(direct, fx.volume, labels, config, 4);

    const MapResult result = map_volume(io::ModelCheckpoint(direct), fx.volume, {}, 2);
    for (int v = 0; v < fx.volume.voxel_count(); ++v) {
        if (!fx.volume.roi_mask[v]) continue; // direct model is trained on the ROI
        CHECK(result.valid_mask[v]);
        CHECK(result.t1_map[v] > 0.0);
        CHECK(result.null_index_map[v] == 0);
    }
}
