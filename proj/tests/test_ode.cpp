#include "t1map/ode.hpp"

#include "t1map/rng.hpp"

#include <doctest.h>

#include <cmath>

using namespace t1map;
namespace adx = t1map::ad;

namespace {

const OdeDynamics kDecay = [](const adx::Var& h, double) { return adx::neg(h); };

adx::Var scalar_state(double v) { return adx::Var::scalar(v); }

} // namespace

TEST_CASE("zero dynamics and empty intervals return the state unchanged") {
    const OdeDynamics zero = [](const adx::Var& h, double) { return adx::scale(h, 0.0); };
    adx::Var h0 = adx::Var::leaf(Eigen::Vector3d(0.3, -0.7, 1.1));
    const adx::Var out = dopri5_integrate(zero, h0, 0.0, 2.0, 1e-3, 1e-3);
    CHECK(out.value() == h0.value());

    const adx::Var same = dopri5_integrate(kDecay, h0, 1.5, 1.5, 1e-3, 1e-3);
    CHECK(same.value() == h0.value());
}

TEST_CASE("exponential decay reaches the closed form at both tolerances") {
    {
        const adx::Var y = dopri5_integrate(kDecay, scalar_state(1.0), 0.0, 1.0, 1e-3, 1e-3);
        CHECK(std::abs(y.scalar_value() - std::exp(-1.0)) < 1e-3);
    }
    {
        const adx::Var y = dopri5_integrate(kDecay, scalar_state(1.0), 0.0, 1.0, 1e-8, 1e-8);
        CHECK(std::abs(y.scalar_value() - std::exp(-1.0)) < 1e-5);
    }
}

TEST_CASE("global error tracks the tolerance and never grows when halving it") {
    const double exact = std::exp(-5.0);
    auto error_at = [&](double tol) {
        const adx::Var y = dopri5_integrate(kDecay, scalar_state(1.0), 0.0, 5.0, tol, tol);
        return std::abs(y.scalar_value() - exact);
    };
    for (double tol : {1e-3, 1e-5, 1e-8}) CHECK(error_at(tol) <= 50.0 * tol);

    double prev = error_at(1e-3);
    for (double tol = 5e-4; tol >= 1e-8; tol *= 0.5) {
        const double err = error_at(tol);
        CHECK(err <= prev);
        prev = err;
    }
}

TEST_CASE("accepted steps are differentiable: linear dynamics") {
    // y(t) = h0 * exp(-t), so dy/dh0 = exp(-t)
    adx::Var h0 = scalar_state(1.3);
    const adx::Var y = dopri5_integrate(kDecay, h0, 0.0, 2.0, 1e-8, 1e-8);
    adx::backward(y);
    CHECK(h0.grad()(0, 0) == doctest::Approx(std::exp(-2.0)).epsilon(1e-6));
}

TEST_CASE("accepted steps are differentiable: nonlinear dynamics vs finite differences") {
    Rng rng(6);
    for (int instance = 0; instance < 5; ++instance) {
        Eigen::MatrixXd w(2, 2), h0v(2, 1);
        for (int i = 0; i < 4; ++i) w.data()[i] = rng.uniform(-0.8, 0.8);
        for (int i = 0; i < 2; ++i) h0v.data()[i] = rng.uniform(-1.0, 1.0);

        auto value_of = [&](const Eigen::MatrixXd& wv, const Eigen::MatrixXd& hv) {
            adx::Var wvar = adx::Var::leaf(wv);
            adx::Var hvar = adx::Var::leaf(hv);
            const OdeDynamics f = [&wvar](const adx::Var& h, double) {
                return adx::tanh(ad::linear_map(wvar, h, adx::Var::leaf(Eigen::MatrixXd::Zero(2, 1))));
            };
            const adx::Var y = dopri5_integrate(f, hvar, 0.0, 1.0, 1e-6, 1e-6);
            return std::tuple(adx::sum(y), wvar, hvar);
        };

        auto [root, wvar, hvar] = value_of(w, h0v);
        adx::backward(root);
        const Eigen::MatrixXd gw = wvar.grad();

        const double h = 1e-6;
        for (int idx = 0; idx < 4; ++idx) {
            Eigen::MatrixXd wp = w, wm = w;
            wp.data()[idx] += h;
            wm.data()[idx] -= h;
            const double fp = std::get<0>(value_of(wp, h0v)).scalar_value();
            const double fm = std::get<0>(value_of(wm, h0v)).scalar_value();
            const double fd = (fp - fm) / (2.0 * h);
            const double denom = std::max({std::abs(fd), std::abs(gw.data()[idx]), 1e-6});
            CHECK(std::abs(fd - gw.data()[idx]) / denom < 1e-4);
        }
    }
}

TEST_CASE("solver input validation and failure modes") {
    CHECK_THROWS_AS(dopri5_integrate(kDecay, scalar_state(1.0), 1.0, 0.5, 1e-3, 1e-3),
                    std::invalid_argument);
    CHECK_THROWS_AS(dopri5_integrate(kDecay, scalar_state(1.0), 0.0, 1.0, 0.0, 1e-3),
                    std::invalid_argument);

    const OdeDynamics blowup = [](const adx::Var& h, double t) {
        if (t > 0.5) {
            Eigen::MatrixXd nan(1, 1);
            nan(0, 0) = std::numeric_limits<double>::quiet_NaN();
            return adx::Var::leaf(nan);
        }
        return adx::scale(h, 1.0);
    };
    CHECK_THROWS_AS(dopri5_integrate(blowup, scalar_state(1.0), 0.0, 1.0, 1e-3, 1e-3),
                    std::runtime_error);
}

TEST_CASE("solver statistics count accepted and rejected steps") {
    Dopri5Stats stats;
    dopri5_integrate(kDecay, scalar_state(1.0), 0.0, 5.0, 1e-5, 1e-5, &stats);
    CHECK(stats.accepted > 0);
    CHECK(stats.evaluations >= 6 * stats.accepted);
}
