#include "t1map/models.hpp"

#include "t1map/rng.hpp"

#include <doctest.h>

#include <cmath>

using namespace t1map;
namespace adx = t1map::ad;

namespace {

LstmOdeConfig tiny_config() {
    LstmOdeConfig config;
    config.d_emb = 4;
    config.hidden = 6;
    config.dyn_hidden = 5;
    config.dec_hidden = 5;
    return config;
}

VoxelSeries normalized_series(int n, Rng& rng) {
    VoxelSeries s;
    s.signals.resize(n);
    s.times_ms.resize(n);
    double t = 0.1;
    for (int i = 0; i < n; ++i) {
        s.signals[i] = rng.uniform(-1.0, 1.0);
        s.times_ms[i] = t;
        t += rng.uniform(0.05, 1.0);
    }
    s.normalized = true;
    return s;
}

void zero_store(ParamStore& store) {
    for (auto& [name, m] : store.entries) m.setZero();
}

} // namespace

TEST_CASE("lstm_cell gate algebra at zero weights") {
    const int h = 4, in = 3;
    adx::Var w = adx::Var::leaf(Eigen::MatrixXd::Zero(4 * h, in + h));
    adx::Var b = adx::Var::leaf(Eigen::MatrixXd::Zero(4 * h, 1));
    adx::Var x = adx::Var::leaf(Eigen::MatrixXd::Zero(in, 1));
    adx::Var h_prev = adx::Var::leaf(Eigen::MatrixXd::Zero(h, 1));

    Eigen::MatrixXd v(h, 1);
    v << 0.4, -0.8, 1.2, 0.0;
    adx::Var c_prev = adx::Var::leaf(v);

    const auto [h_cand, c_new] = lstm_cell(w, b, x, h_prev, c_prev);
    for (int i = 0; i < h; ++i) {
        CHECK(c_new.value()(i, 0) == doctest::Approx(0.5 * v(i, 0)).epsilon(1e-12));
        CHECK(h_cand.value()(i, 0) ==
              doctest::Approx(0.5 * std::tanh(0.5 * v(i, 0))).epsilon(1e-12));
    }

    // all-zero inputs and states stay zero
    adx::Var c_zero = adx::Var::leaf(Eigen::MatrixXd::Zero(h, 1));
    const auto [h2, c2] = lstm_cell(w, b, x, h_prev, c_zero);
    CHECK(h2.value().cwiseAbs().maxCoeff() == 0.0);
    CHECK(c2.value().cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("lstm_cell gradients match finite differences") {
    Rng rng(11);
    const int h = 3, in = 2;
    Eigen::MatrixXd wv(4 * h, in + h), bv(4 * h, 1), xv(in, 1), hv(h, 1), cv(h, 1);
    for (auto* m : {&wv, &bv})
        for (long i = 0; i < m->size(); ++i) m->data()[i] = rng.uniform(-0.7, 0.7);
    for (auto* m : {&xv, &hv, &cv})
        for (long i = 0; i < m->size(); ++i) m->data()[i] = rng.uniform(-1.0, 1.0);

    auto eval = [&](const Eigen::MatrixXd& w_in) {
        adx::Var w = adx::Var::leaf(w_in), b = adx::Var::leaf(bv);
        adx::Var x = adx::Var::leaf(xv), hp = adx::Var::leaf(hv), cp = adx::Var::leaf(cv);
        auto [h_cand, c_new] = lstm_cell(w, b, x, hp, cp);
        return std::tuple(adx::sum(h_cand), w);
    };

    auto [root, w] = eval(wv);
    adx::backward(root);
    const Eigen::MatrixXd grad = w.grad();
    const double step = 1e-5;
    double worst = 0.0;
    for (long i = 0; i < wv.size(); ++i) {
        Eigen::MatrixXd wp = wv, wm = wv;
        wp.data()[i] += step;
        wm.data()[i] -= step;
        const double fd =
            (std::get<0>(eval(wp)).scalar_value() - std::get<0>(eval(wm)).scalar_value()) /
            (2.0 * step);
        const double denom = std::max({std::abs(fd), std::abs(grad.data()[i]), 1e-6});
        worst = std::max(worst, std::abs(fd - grad.data()[i]) / denom);
    }
    CHECK(worst < 1e-4);
}

TEST_CASE("encode_sequence equals a plain LSTM pass when the vector field is zero") {
    Rng rng(21);
    LstmOdeModel model = LstmOdeModel::init(tiny_config(), 42);
    model.params.at("dyn2_w").setZero();
    model.params.at("dyn2_b").setZero();

    const VoxelSeries series = normalized_series(5, rng);
    const ParamVars vars = ParamVars::bind(model.params);
    const Eigen::MatrixXd encoded = encode_sequence(model, vars, series).value();

    // plain LSTM oracle: identical recurrence without the integrator
    adx::Var hidden = adx::Var::leaf(Eigen::MatrixXd::Zero(model.config.hidden, 1));
    adx::Var cell = adx::Var::leaf(Eigen::MatrixXd::Zero(model.config.hidden, 1));
    for (int i = 0; i < series.size(); ++i) {
        Eigen::MatrixXd pair(2, 1);
        pair << series.signals[i], series.times_ms[i];
        const adx::Var x =
            adx::linear_map(vars.at("embed_w"), adx::Var::leaf(pair), vars.at("embed_b"));
        auto [h_cand, c_new] = lstm_cell(vars.at("lstm_w"), vars.at("lstm_b"), x, hidden, cell);
        hidden = h_cand;
        cell = c_new;
    }
    CHECK((encoded - hidden.value()).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("encode_sequence validates its input") {
    Rng rng(22);
    LstmOdeModel model = LstmOdeModel::init(tiny_config(), 1);
    const ParamVars vars = ParamVars::bind(model.params);

    VoxelSeries bad = normalized_series(4, rng);
    std::swap(bad.times_ms[1], bad.times_ms[2]); // breaks monotonicity
    CHECK_THROWS_AS(encode_sequence(model, vars, bad), std::invalid_argument);

    VoxelSeries raw = normalized_series(4, rng);
    raw.normalized = false;
    CHECK_THROWS_AS(encode_sequence(model, vars, raw), std::invalid_argument);

    VoxelSeries magnitude = normalized_series(4, rng);
    magnitude.polarity = Polarity::Magnitude;
    CHECK_THROWS_AS(encode_sequence(model, vars, magnitude), std::invalid_argument);

    VoxelSeries single = normalized_series(1, rng);
    CHECK_THROWS_AS(encode_sequence(model, vars, single), std::invalid_argument);
}

TEST_CASE("repeating samples with zero-length gaps only adds discrete updates") {
    Rng rng(23);
    LstmOdeModel model = LstmOdeModel::init(tiny_config(), 7);
    const ParamVars vars = ParamVars::bind(model.params);
    const VoxelSeries series = normalized_series(4, rng);

    VoxelSeries doubled;
    doubled.normalized = true;
    doubled.signals.resize(2 * series.size());
    doubled.times_ms.resize(2 * series.size());
    for (int i = 0; i < series.size(); ++i) {
        doubled.signals[2 * i] = doubled.signals[2 * i + 1] = series.signals[i];
        doubled.times_ms[2 * i] = doubled.times_ms[2 * i + 1] = series.times_ms[i];
    }
    const Eigen::MatrixXd enc_doubled = encode_sequence(model, vars, doubled).value();

    // oracle: cell update, integrate the gap, then a second cell update
    // whose zero-length integration is the identity
    const OdeDynamics dynamics = [&](const adx::Var& h, double t) {
        return adx::linear_map(
            vars.at("dyn2_w"),
            adx::tanh(adx::linear_map(vars.at("dyn1_w"), adx::concat(h, adx::Var::scalar(t)),
                                      vars.at("dyn1_b"))),
            vars.at("dyn2_b"));
    };
    adx::Var hidden = adx::Var::leaf(Eigen::MatrixXd::Zero(model.config.hidden, 1));
    adx::Var cell = adx::Var::leaf(Eigen::MatrixXd::Zero(model.config.hidden, 1));
    double t_prev = 0.0;
    for (int i = 0; i < series.size(); ++i) {
        Eigen::MatrixXd pair(2, 1);
        pair << series.signals[i], series.times_ms[i];
        for (int rep = 0; rep < 2; ++rep) {
            const adx::Var x =
                adx::linear_map(vars.at("embed_w"), adx::Var::leaf(pair), vars.at("embed_b"));
            auto [h_cand, c_new] =
                lstm_cell(vars.at("lstm_w"), vars.at("lstm_b"), x, hidden, cell);
            cell = c_new;
            hidden = dopri5_integrate(dynamics, h_cand, t_prev, series.times_ms[i],
                                      model.config.rtol, model.config.atol);
            t_prev = series.times_ms[i];
        }
    }
    CHECK((enc_doubled - hidden.value()).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("decode_params applies the softplus constraint mapping") {
    LstmOdeModel model = LstmOdeModel::init(tiny_config(), 3);
    zero_store(model.params); // decoder raw output = dec2_b
    const double ln2 = std::log(2.0);

    {
        const ParamVars vars = ParamVars::bind(model.params);
        const adx::Var h = adx::Var::leaf(Eigen::MatrixXd::Zero(model.config.hidden, 1));
        const RelaxationParams p = decode_params(model, vars, h).values();
        CHECK(p.c == doctest::Approx(ln2).epsilon(1e-12));
        CHECK(p.k == doctest::Approx(1.0 + ln2).epsilon(1e-12));
        CHECK(p.t1_star == doctest::Approx(ln2).epsilon(1e-12));
    }
    {
        model.params.at("dec2_b").setConstant(30.0); // softplus asymptote
        const ParamVars vars = ParamVars::bind(model.params);
        const adx::Var h = adx::Var::leaf(Eigen::MatrixXd::Zero(model.config.hidden, 1));
        const RelaxationParams p = decode_params(model, vars, h).values();
        CHECK(std::abs(p.c - 30.0) / 30.0 < 1e-6);
        CHECK(std::abs(p.t1_star - 30.0) / 30.0 < 1e-6);
    }

    Eigen::MatrixXd bad(model.config.hidden, 1);
    bad.setConstant(std::numeric_limits<double>::infinity());
    const ParamVars vars = ParamVars::bind(model.params);
    CHECK_THROWS_AS(decode_params(model, vars, adx::Var::leaf(bad)), std::invalid_argument);
}

TEST_CASE("decoded params satisfy the constraints for random inits") {
    Rng rng(31);
    adx::NoGradGuard guard;
    for (int i = 0; i < 1000; ++i) {
        const LstmOdeModel model = LstmOdeModel::init(tiny_config(), 1000 + i);
        const ParamVars vars = ParamVars::bind(model.params);
        const VoxelSeries series = normalized_series(3, rng);
        const RelaxationParams p = lstm_ode_forward(model, vars, series).values();
        CHECK(std::isfinite(p.c));
        CHECK(std::isfinite(p.k));
        CHECK(std::isfinite(p.t1_star));
        CHECK(p.c > 0.0);
        CHECK(p.k > 1.0);
        CHECK(p.t1_star > 0.0);
    }
}

TEST_CASE("gradients with a frozen vector field match a plain LSTM+decoder") {
    Rng rng(41);
    LstmOdeModel model = LstmOdeModel::init(tiny_config(), 99);
    model.params.at("dyn2_w").setZero();
    model.params.at("dyn2_b").setZero();
    const VoxelSeries series = normalized_series(4, rng);

    // full model gradients
    const ParamVars vars_full = ParamVars::bind(model.params);
    {
        const DecodedVars pred = lstm_ode_forward(model, vars_full, series);
        const adx::Var loss =
            adx::add(adx::add(pred.c, pred.k), adx::square(pred.t1_star));
        adx::backward(loss);
    }

    // plain recurrence with the same weights, no integrator
    const ParamVars vars_plain = ParamVars::bind(model.params);
    {
        adx::Var hidden = adx::Var::leaf(Eigen::MatrixXd::Zero(model.config.hidden, 1));
        adx::Var cell = adx::Var::leaf(Eigen::MatrixXd::Zero(model.config.hidden, 1));
        for (int i = 0; i < series.size(); ++i) {
            Eigen::MatrixXd pair(2, 1);
            pair << series.signals[i], series.times_ms[i];
            const adx::Var x = adx::linear_map(vars_plain.at("embed_w"),
                                               adx::Var::leaf(pair), vars_plain.at("embed_b"));
            auto [h_cand, c_new] =
                lstm_cell(vars_plain.at("lstm_w"), vars_plain.at("lstm_b"), x, hidden, cell);
            hidden = h_cand;
            cell = c_new;
        }
        const DecodedVars pred = decode_params(model, vars_plain, hidden);
        const adx::Var loss =
            adx::add(adx::add(pred.c, pred.k), adx::square(pred.t1_star));
        adx::backward(loss);
    }

    for (const char* name : {"embed_w", "embed_b", "lstm_w", "lstm_b", "dec1_w", "dec1_b",
                             "dec2_w", "dec2_b"}) {
        const Eigen::MatrixXd gf = vars_full.at(name).grad();
        const Eigen::MatrixXd gp = vars_plain.at(name).grad();
        const double scale = std::max(gp.cwiseAbs().maxCoeff(), 1e-12);
        CHECK((gf - gp).cwiseAbs().maxCoeff() / scale < 1e-10);
    }
}

TEST_CASE("fcnn heads: zero-weight direct output and physics constraints") {
    FcnnConfig config;
    config.arity = 3;
    config.hidden = {5, 4};
    Rng rng(55);

    FcnnModel direct = FcnnModel::init(config, FcnnHead::DirectT1, 2);
    zero_store(direct.params);
    direct.params.at("out_b").setConstant(1.7);
    const ParamVars dv = ParamVars::bind(direct.params);
    const VoxelSeries series = normalized_series(3, rng);
    const double t1 = fcnn_forward_t1(direct, dv, series).scalar_value();
    CHECK(t1 == doctest::Approx(std::log1p(std::exp(1.7))).epsilon(1e-12));
    CHECK_THROWS_AS(fcnn_forward_params(direct, dv, series), std::invalid_argument);

    const FcnnModel physics = FcnnModel::init(config, FcnnHead::PhysicsParams, 3);
    const ParamVars pv = ParamVars::bind(physics.params);
    for (int i = 0; i < 50; ++i) {
        const VoxelSeries s = normalized_series(3, rng);
        const RelaxationParams p = fcnn_forward_params(physics, pv, s).values();
        CHECK(p.c > 0.0);
        CHECK(p.k > 1.0);
        CHECK(p.t1_star > 0.0);
    }

    const VoxelSeries wrong = normalized_series(4, rng);
    CHECK_THROWS_AS(fcnn_forward_t1(direct, dv, wrong), std::invalid_argument);
}

TEST_CASE("fcnn gradients match finite differences") {
    FcnnConfig config;
    config.arity = 3;
    config.hidden = {4};
    Rng rng(66);
    FcnnModel model = FcnnModel::init(config, FcnnHead::PhysicsParams, 4);
    const VoxelSeries series = normalized_series(3, rng);

    auto eval = [&](const ParamStore& store) {
        const ParamVars vars = ParamVars::bind(store);
        const DecodedVars pred = fcnn_forward_params(model, vars, series);
        return std::pair(adx::add(adx::mul(pred.c, pred.k), pred.t1_star), vars);
    };

    auto [root, vars] = eval(model.params);
    adx::backward(root);

    const double h = 1e-5;
    double worst = 0.0;
    for (size_t e = 0; e < model.params.entries.size(); ++e) {
        const Eigen::MatrixXd grad = vars.entries[e].second.grad();
        for (long i = 0; i < model.params.entries[e].second.size(); ++i) {
            ParamStore plus = model.params, minus = model.params;
            plus.entries[e].second.data()[i] += h;
            minus.entries[e].second.data()[i] -= h;
            const double fd =
                (eval(plus).first.scalar_value() - eval(minus).first.scalar_value()) /
                (2.0 * h);
            const double denom = std::max({std::abs(fd), std::abs(grad.data()[i]), 1e-6});
            worst = std::max(worst, std::abs(fd - grad.data()[i]) / denom);
        }
    }
    CHECK(worst < 1e-4);
}
