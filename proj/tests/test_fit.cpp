#include "t1map/fit.hpp"

#include "t1map/rng.hpp"
#include "t1map/stats.hpp"

#include <doctest.h>

#include <cmath>

using namespace t1map;

namespace {

const MolliSchedule kSchedule = build_schedule("3(3)3(3)5", 1000.0, {100.0, 180.0, 260.0});

VoxelSeries noiseless_series(const RelaxationParams& p) {
    VoxelSeries s;
    s.times_ms = kSchedule.times();
    s.signals = signal(p, s.times_ms);
    return s;
}

double rel_err(double a, double b) { return std::abs(a - b) / std::abs(b); }

bool params_close(const RelaxationParams& got, const RelaxationParams& want, double tol) {
    return rel_err(got.c, want.c) < tol && rel_err(got.k, want.k) < tol &&
           rel_err(got.t1_star, want.t1_star) < tol;
}

} // namespace

TEST_CASE("lm_fit recovers noiseless params from the default init") {
    const RelaxationParams truth{1.0, 1.9, 800.0};
    const FitResult fit = lm_fit(noiseless_series(truth));
    CHECK(fit.converged);
    CHECK(params_close(fit.params, truth, 1e-6));
    CHECK(fit.rss < 1e-12);
}

TEST_CASE("lm_fit at the truth converges immediately") {
    const RelaxationParams truth{1.0, 1.9, 800.0};
    const FitResult fit = lm_fit(noiseless_series(truth), truth);
    CHECK(fit.converged);
    CHECK(fit.iterations <= 2);
    CHECK(fit.rss < 1e-16);
}

TEST_CASE("lm_fit flags a constant series as degenerate") {
    VoxelSeries s;
    s.times_ms = kSchedule.times();
    s.signals = Eigen::VectorXd::Constant(11, 0.5);
    const FitResult fit = lm_fit(s);
    CHECK((fit.rank_deficient || !fit.converged));
}

TEST_CASE("lm_fit recovers from perturbed inits on noiseless data") {
    Rng rng(17);
    const RelaxationParams truth{1.0, 1.9, 800.0};
    const VoxelSeries series = noiseless_series(truth);
    for (int i = 0; i < 100; ++i) {
        RelaxationParams init;
        init.c = truth.c * rng.uniform(0.5, 1.5);
        init.k = truth.k * rng.uniform(0.5, 1.5);
        init.t1_star = truth.t1_star * rng.uniform(0.5, 1.5);
        const FitResult fit = lm_fit(series, init);
        CHECK(fit.converged);
        CHECK(params_close(fit.params, truth, 1e-6));
    }
}

TEST_CASE("lm_fit input validation") {
    VoxelSeries s;
    s.times_ms = Eigen::Vector2d(100.0, 200.0);
    s.signals = Eigen::Vector2d(0.1, 0.2);
    CHECK_THROWS_AS(lm_fit(s), std::invalid_argument);

    VoxelSeries mag = noiseless_series({1.0, 2.0, 1000.0});
    mag.polarity = Polarity::Magnitude;
    CHECK_THROWS_AS(lm_fit(mag), std::invalid_argument);
}

TEST_CASE("trf_fit with wide bounds matches lm_fit") {
    const RelaxationParams truth{0.9, 2.05, 1200.0};
    const VoxelSeries series = noiseless_series(truth);
    const FitResult lm = lm_fit(series);
    FitBounds bounds;
    bounds.lo = {1e-6, 1.0 + 1e-9, 1.0};
    bounds.hi = {100.0, 10.0, 50000.0};
    const FitResult trf = trf_fit(series, default_init(series), bounds);
    CHECK(trf.converged);
    CHECK(params_close(trf.params, lm.params, 1e-6));
}

TEST_CASE("trf_fit pins an out-of-range t1_star to the boundary") {
    const RelaxationParams truth{1.0, 2.0, 800.0};
    const VoxelSeries series = noiseless_series(truth);
    FitBounds bounds;
    bounds.lo = {1e-6, 1.0 + 1e-9, 900.0};
    bounds.hi = {100.0, 10.0, 1100.0};
    RelaxationParams init{1.0, 2.0, 1000.0};
    const FitResult fit = trf_fit(series, init, bounds);
    CHECK(fit.params.t1_star == doctest::Approx(900.0).epsilon(1e-9));
    // never outside the box
    CHECK(fit.params.c >= bounds.lo[0]);
    CHECK(fit.params.c <= bounds.hi[0]);
    CHECK(fit.params.k >= bounds.lo[1]);
    CHECK(fit.params.k <= bounds.hi[1]);
    CHECK(fit.params.t1_star >= bounds.lo[2]);
    CHECK(fit.params.t1_star <= bounds.hi[2]);
}

TEST_CASE("trf_fit rejects boundary inits and infeasible bounds") {
    const VoxelSeries series = noiseless_series({1.0, 2.0, 1000.0});
    FitBounds bounds;
    bounds.lo = {1e-6, 1.0, 900.0};
    bounds.hi = {100.0, 10.0, 1100.0};
    CHECK_THROWS_AS(trf_fit(series, {1.0, 2.0, 900.0}, bounds), std::invalid_argument);
    FitBounds bad = bounds;
    bad.lo[2] = 1200.0;
    CHECK_THROWS_AS(trf_fit(series, {1.0, 2.0, 1000.0}, bad), std::invalid_argument);
}

TEST_CASE("trf_fit stays in bounds on noisy draws") {
    Rng rng(23);
    for (int i = 0; i < 20; ++i) {
        const RelaxationParams truth{rng.uniform(0.7, 1.3), rng.uniform(1.7, 2.1),
                                     rng.uniform(600.0, 1500.0)};
        VoxelSeries series = noiseless_series(truth);
        for (int j = 0; j < series.size(); ++j) series.signals[j] += 0.02 * rng.normal();
        const FitBounds bounds = FitBounds::defaults(series);
        const FitResult fit = trf_fit(series, default_init(series), bounds);
        CHECK(fit.params.c >= bounds.lo[0]);
        CHECK(fit.params.c <= bounds.hi[0]);
        CHECK(fit.params.k >= bounds.lo[1]);
        CHECK(fit.params.k <= bounds.hi[1]);
        CHECK(fit.params.t1_star >= bounds.lo[2]);
        CHECK(fit.params.t1_star <= bounds.hi[2]);
    }
}

TEST_CASE("polarity restoration finds the true null index on noiseless data") {
    const RelaxationParams truth{1.0, 2.0, 1000.0};
    const VoxelSeries mag = magnitude_view(noiseless_series(truth));
    const FitResult fit = polarity_restore_fit(mag);
    // t_null = 1000*ln2 = 693.1 ms; default schedule has 3 earlier times
    CHECK(fit.null_index == 3);
    CHECK(params_close(fit.params, truth, 1e-6));
}

TEST_CASE("polarity restoration yields null index 0 when all samples are late") {
    const RelaxationParams truth{1.0, 2.0, 120.0}; // t_null = 83 ms < first TI
    const VoxelSeries mag = magnitude_view(noiseless_series(truth));
    const FitResult fit = polarity_restore_fit(mag);
    CHECK(fit.null_index == 0);
    CHECK(params_close(fit.params, truth, 1e-6));
}

TEST_CASE("polarity restoration matches the signed fit away from zero crossings") {
    Rng rng(31);
    for (int i = 0; i < 25; ++i) {
        const RelaxationParams truth{rng.uniform(0.7, 1.3), rng.uniform(1.7, 2.1),
                                     rng.uniform(600.0, 1500.0)};
        const VoxelSeries series = noiseless_series(truth);
        if (series.signals.cwiseAbs().minCoeff() < 1e-6 * truth.c) continue;
        const FitResult direct = lm_fit(series);
        const FitResult restored = polarity_restore_fit(magnitude_view(series));
        CHECK(params_close(restored.params, direct.params, 1e-9));
    }
}

TEST_CASE("fitting SD is zero on noiseless fits and scales with noise") {
    const RelaxationParams truth{1.0, 1.9, 1000.0};
    const VoxelSeries series = noiseless_series(truth);
    const FitResult fit = lm_fit(series);
    const auto sd = fitting_sd(fit, series.size());
    REQUIRE(sd.has_value());
    CHECK(*sd < 1e-6);

    // doubling sigma doubles the SD (Monte Carlo average)
    Rng rng(5);
    auto mean_sd = [&](double sigma, int reps) {
        double acc = 0.0;
        int count = 0;
        for (int i = 0; i < reps; ++i) {
            VoxelSeries noisy = series;
            for (int j = 0; j < noisy.size(); ++j) noisy.signals[j] += sigma * rng.normal();
            const FitResult f = lm_fit(noisy);
            if (const auto s = fitting_sd(f, noisy.size())) {
                acc += *s;
                ++count;
            }
        }
        REQUIRE(count > 0);
        return acc / count;
    };
    const double sd1 = mean_sd(0.01, 200);
    const double sd2 = mean_sd(0.02, 200);
    CHECK(sd2 / sd1 == doctest::Approx(2.0).epsilon(0.10));
}

TEST_CASE("fitting SD predicts the refit scatter at SNR 50") {
    const RelaxationParams truth{1.0, 1.9, 1000.0};
    const VoxelSeries series = noiseless_series(truth);
    const double sigma = 0.02;
    Rng rng(9);
    std::vector<double> t1s;
    double sd_acc = 0.0;
    int sd_count = 0;
    for (int i = 0; i < 1000; ++i) {
        VoxelSeries noisy = series;
        for (int j = 0; j < noisy.size(); ++j) noisy.signals[j] += sigma * rng.normal();
        const FitResult fit = lm_fit(noisy);
        if (!fit.converged) continue;
        t1s.push_back(t1_from_params(fit.params));
        if (const auto sd = fitting_sd(fit, noisy.size())) {
            sd_acc += *sd;
            ++sd_count;
        }
    }
    REQUIRE(t1s.size() > 900);
    REQUIRE(sd_count > 900);
    const auto [mean, scatter] = mean_and_sample_std(t1s);
    const double predicted = sd_acc / sd_count;
    CHECK(std::abs(predicted - scatter) / scatter < 0.15);
}

TEST_CASE("fitting SD is unavailable for 3 samples") {
    const RelaxationParams truth{1.0, 1.9, 1000.0};
    Eigen::Vector3d t(100.0, 1100.0, 3260.0);
    VoxelSeries s;
    s.times_ms = t;
    s.signals = signal(truth, t);
    const FitResult fit = lm_fit(s);
    CHECK(!fitting_sd(fit, 3).has_value());
}
