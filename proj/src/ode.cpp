#include "t1map/ode.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace t1map {

namespace {

// Dormand-Prince 5(4) tableau
constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
constexpr double a21 = 1.0 / 5;
constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561,
                 a54 = -212.0 / 729;
constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247,
                 a64 = 49.0 / 176, a65 = -5103.0 / 18656;
constexpr double b1 = 35.0 / 384, b3 = 500.0 / 1113, b4 = 125.0 / 192,
                 b5 = -2187.0 / 6784, b6 = 11.0 / 84;
// 5th-order minus embedded 4th-order weights
constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920,
                 e5 = -17253.0 / 339200, e6 = 22.0 / 525, e7 = -1.0 / 40;

constexpr double kSafety = 0.9;
constexpr double kFacMin = 0.2;
constexpr double kFacMax = 5.0;

double error_norm(const Eigen::MatrixXd& err, const Eigen::MatrixXd& y0,
                  const Eigen::MatrixXd& y1, double rtol, double atol) {
    double acc = 0.0;
    for (long i = 0; i < err.size(); ++i) {
        const double sc =
            atol + rtol * std::max(std::abs(y0.data()[i]), std::abs(y1.data()[i]));
        const double q = err.data()[i] / sc;
        acc += q * q;
    }
    return std::sqrt(acc / static_cast<double>(err.size()));
}

ad::Var eval_rhs(const OdeDynamics& f, const ad::Var& y, double t) {
    ad::Var k = f(y, t);
    if (!k.value().allFinite()) throw std::runtime_error("ODE dynamics returned non-finite values");
    if (k.value().rows() != y.value().rows() || k.value().cols() != y.value().cols())
        throw std::invalid_argument("ODE dynamics changed the state shape");
    return k;
}

} // namespace

ad::Var dopri5_integrate(const OdeDynamics& f, const ad::Var& h0, double t0, double t1,
                         double rtol, double atol, Dopri5Stats* stats) {
    if (t1 < t0) throw std::invalid_argument("dopri5: t1 must be >= t0");
    if (!(rtol > 0.0) || !(atol > 0.0)) throw std::invalid_argument("dopri5: tolerances must be positive");
    if (t1 == t0) return h0;

    const double span = t1 - t0;
    double t = t0;
    ad::Var y = h0;
    ad::Var k1 = eval_rhs(f, y, t);
    if (stats) ++stats->evaluations;

    // initial step from the scaled magnitudes of y and f(y)
    double h;
    {
        const double d0 = error_norm(y.value(), y.value(), y.value(), rtol, atol);
        const double d1 = error_norm(k1.value(), y.value(), y.value(), rtol, atol);
        h = (d0 < 1e-10 || d1 < 1e-10) ? 1e-3 * span : 0.01 * d0 / d1;
        h = std::min(h, span);
    }

    using Term = std::pair<double, ad::Var>;
    auto combine = [](std::initializer_list<Term> terms) {
        return ad::lincomb(std::span<const Term>(terms.begin(), terms.size()));
    };

    while (t < t1) {
        if (h < 1e-12 * span) throw std::runtime_error("dopri5: step size underflow");
        bool last = false;
        if (t + h >= t1) {
            h = t1 - t;
            last = true;
        }

        const ad::Var y2 = combine({{1.0, y}, {h * a21, k1}});
        const ad::Var k2 = eval_rhs(f, y2, t + c2 * h);
        const ad::Var y3 = combine({{1.0, y}, {h * a31, k1}, {h * a32, k2}});
        const ad::Var k3 = eval_rhs(f, y3, t + c3 * h);
        const ad::Var y4 = combine({{1.0, y}, {h * a41, k1}, {h * a42, k2}, {h * a43, k3}});
        const ad::Var k4 = eval_rhs(f, y4, t + c4 * h);
        const ad::Var y5 = combine(
            {{1.0, y}, {h * a51, k1}, {h * a52, k2}, {h * a53, k3}, {h * a54, k4}});
        const ad::Var k5 = eval_rhs(f, y5, t + c5 * h);
        const ad::Var y6 = combine({{1.0, y},
                                    {h * a61, k1},
                                    {h * a62, k2},
                                    {h * a63, k3},
                                    {h * a64, k4},
                                    {h * a65, k5}});
        const ad::Var k6 = eval_rhs(f, y6, t + h);
        const ad::Var y_next = combine(
            {{1.0, y}, {h * b1, k1}, {h * b3, k3}, {h * b4, k4}, {h * b5, k5}, {h * b6, k6}});
        const ad::Var k7 = eval_rhs(f, y_next, t + h); // FSAL stage
        if (stats) stats->evaluations += 6;

        const Eigen::MatrixXd err_vec =
            h * (e1 * k1.value() + e3 * k3.value() + e4 * k4.value() + e5 * k5.value() +
                 e6 * k6.value() + e7 * k7.value());
        const double err = error_norm(err_vec, y.value(), y_next.value(), rtol, atol);

        double factor =
            err > 0.0 ? kSafety * std::pow(err, -0.2) : kFacMax;
        factor = std::clamp(factor, kFacMin, kFacMax);
        if (err <= 1.0) {
            t = last ? t1 : t + h;
            y = y_next;
            k1 = k7;
            if (stats) ++stats->accepted;
        } else {
            factor = std::min(factor, 1.0);
            if (stats) ++stats->rejected;
        }
        h *= factor;
    }
    return y;
}

} // namespace t1map
