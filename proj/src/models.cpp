#include "t1map/models.hpp"

#include "t1map/rng.hpp"

#include <cmath>
#include <stdexcept>

namespace t1map {

Eigen::MatrixXd& ParamStore::at(const std::string& name) {
    for (auto& [n, m] : entries)
        if (n == name) return m;
    throw std::out_of_range("no parameter named '" + name + "'");
}

const Eigen::MatrixXd& ParamStore::at(const std::string& name) const {
    for (const auto& [n, m] : entries)
        if (n == name) return m;
    throw std::out_of_range("no parameter named '" + name + "'");
}

long ParamStore::total_size() const {
    long n = 0;
    for (const auto& [name, m] : entries) n += m.size();
    return n;
}

const ad::Var& ParamVars::at(const std::string& name) const {
    for (const auto& [n, v] : entries)
        if (n == name) return v;
    throw std::out_of_range("no parameter named '" + name + "'");
}

ParamVars ParamVars::bind(const ParamStore& store) {
    ParamVars vars;
    vars.entries.reserve(store.entries.size());
    for (const auto& [name, m] : store.entries)
        vars.entries.emplace_back(name, ad::Var::leaf(m));
    return vars;
}

namespace {

// uniform +-1/sqrt(fan_in)
void init_uniform(Eigen::MatrixXd& m, long fan_in, Rng& rng) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(std::max(fan_in, 1L)));
    for (long c = 0; c < m.cols(); ++c)
        for (long r = 0; r < m.rows(); ++r) m(r, c) = rng.uniform(-bound, bound);
}

void add_linear(ParamStore& store, const std::string& prefix, int out, int in, Rng& rng) {
    Eigen::MatrixXd w(out, in), b(out, 1);
    init_uniform(w, in, rng);
    init_uniform(b, in, rng);
    store.entries.emplace_back(prefix + "_w", std::move(w));
    store.entries.emplace_back(prefix + "_b", std::move(b));
}

} // namespace

LstmOdeModel LstmOdeModel::init(const LstmOdeConfig& config, std::uint64_t seed) {
    LstmOdeModel m;
    m.config = config;
    m.seed = seed;
    Rng rng = Rng::derive(seed, 0x6d6f64656cULL); // "model" stream
    const int h = config.hidden;
    add_linear(m.params, "embed", config.d_emb, 2, rng);
    add_linear(m.params, "lstm", 4 * h, config.d_emb + h, rng);
    add_linear(m.params, "dyn1", config.dyn_hidden, h + 1, rng);
    add_linear(m.params, "dyn2", h, config.dyn_hidden, rng);
    add_linear(m.params, "dec1", config.dec_hidden, h, rng);
    add_linear(m.params, "dec2", 3, config.dec_hidden, rng);
    return m;
}

FcnnModel FcnnModel::init(const FcnnConfig& config, FcnnHead head, std::uint64_t seed) {
    if (config.arity < 1) throw std::invalid_argument("fcnn arity must be >= 1");
    FcnnModel m;
    m.config = config;
    m.head = head;
    m.seed = seed;
    Rng rng = Rng::derive(seed, 0x66636e6eULL); // "fcnn" stream
    int in = 2 * config.arity;
    int layer = 0;
    for (int width : config.hidden) {
        add_linear(m.params, "fc" + std::to_string(layer++), width, in, rng);
        in = width;
    }
    add_linear(m.params, "out", head == FcnnHead::DirectT1 ? 1 : 3, in, rng);
    return m;
}

std::pair<ad::Var, ad::Var> lstm_cell(const ad::Var& w, const ad::Var& b, const ad::Var& x,
                                      const ad::Var& h_prev, const ad::Var& c_prev) {
    const long hsize = h_prev.value().rows();
    if (w.value().rows() != 4 * hsize ||
        w.value().cols() != x.value().rows() + hsize)
        throw std::invalid_argument("lstm_cell: weight shape mismatch");
    const ad::Var z = ad::concat(x, h_prev);
    const ad::Var gates = ad::linear_map(w, z, b);
    const int h = static_cast<int>(hsize);
    const ad::Var gi = ad::sigmoid(ad::slice(gates, 0, h));
    const ad::Var gf = ad::sigmoid(ad::slice(gates, h, h));
    const ad::Var go = ad::sigmoid(ad::slice(gates, 2 * h, h));
    const ad::Var gg = ad::tanh(ad::slice(gates, 3 * h, h));
    const ad::Var c_new = ad::add(ad::mul(gf, c_prev), ad::mul(gi, gg));
    const ad::Var h_cand = ad::mul(go, ad::tanh(c_new));
    return {h_cand, c_new};
}

namespace {

OdeDynamics make_dynamics(const ParamVars& vars) {
    const ad::Var w1 = vars.at("dyn1_w"), b1 = vars.at("dyn1_b");
    const ad::Var w2 = vars.at("dyn2_w"), b2 = vars.at("dyn2_b");
    return [w1, b1, w2, b2](const ad::Var& h, double t) {
        const ad::Var ht = ad::concat(h, ad::Var::scalar(t));
        return ad::linear_map(w2, ad::tanh(ad::linear_map(w1, ht, b1)), b2);
    };
}

} // namespace

ad::Var encode_sequence(const LstmOdeModel& model, const ParamVars& vars,
                        const VoxelSeries& series, Dopri5Stats* stats) {
    if (!series.normalized)
        throw std::invalid_argument("encode_sequence expects a normalized series");
    if (series.polarity != Polarity::Signed)
        throw std::invalid_argument("encode_sequence expects a signed series");
    const int n = series.size();
    if (n < 2) throw std::invalid_argument("encode_sequence needs at least 2 samples");
    for (int i = 1; i < n; ++i)
        if (series.times_ms[i] < series.times_ms[i - 1])
            throw std::invalid_argument("inversion times must be non-decreasing");
    if (series.times_ms[0] < 0.0)
        throw std::invalid_argument("inversion times must be non-negative");

    const int h = model.config.hidden;
    const ad::Var embed_w = vars.at("embed_w"), embed_b = vars.at("embed_b");
    const ad::Var lstm_w = vars.at("lstm_w"), lstm_b = vars.at("lstm_b");
    const OdeDynamics dynamics = make_dynamics(vars);

    ad::Var hidden = ad::Var::leaf(Eigen::MatrixXd::Zero(h, 1));
    ad::Var cell = ad::Var::leaf(Eigen::MatrixXd::Zero(h, 1));
    double t_prev = 0.0;
    for (int i = 0; i < n; ++i) {
        Eigen::MatrixXd pair(2, 1);
        pair << series.signals[i], series.times_ms[i];
        const ad::Var x = ad::linear_map(embed_w, ad::Var::leaf(pair), embed_b);
        auto [h_cand, c_new] = lstm_cell(lstm_w, lstm_b, x, hidden, cell);
        cell = c_new; // cell states stay discrete across the gap
        hidden = dopri5_integrate(dynamics, h_cand, t_prev, series.times_ms[i],
                                  model.config.rtol, model.config.atol, stats);
        t_prev = series.times_ms[i];
    }
    return hidden;
}

namespace {

DecodedVars raw_to_params(const ad::Var& raw) {
    DecodedVars out;
    out.c = ad::softplus(ad::slice(raw, 0, 1));
    out.k = ad::add(ad::Var::scalar(1.0), ad::softplus(ad::slice(raw, 1, 1)));
    out.t1_star = ad::softplus(ad::slice(raw, 2, 1));
    return out;
}

} // namespace

DecodedVars decode_params(const LstmOdeModel& model, const ParamVars& vars, const ad::Var& h) {
    (void)model;
    if (!h.value().allFinite())
        throw std::invalid_argument("decode_params: non-finite hidden state");
    const ad::Var z = ad::tanh(ad::linear_map(vars.at("dec1_w"), h, vars.at("dec1_b")));
    return raw_to_params(ad::linear_map(vars.at("dec2_w"), z, vars.at("dec2_b")));
}

DecodedVars lstm_ode_forward(const LstmOdeModel& model, const ParamVars& vars,
                             const VoxelSeries& series) {
    return decode_params(model, vars, encode_sequence(model, vars, series));
}

namespace {

ad::Var fcnn_raw(const FcnnModel& model, const ParamVars& vars, const VoxelSeries& series) {
    if (series.size() != model.config.arity)
        throw std::invalid_argument("fcnn input arity mismatch: expected " +
                                    std::to_string(model.config.arity) + ", got " +
                                    std::to_string(series.size()));
    if (!series.normalized)
        throw std::invalid_argument("fcnn expects a normalized series");
    Eigen::MatrixXd flat(2 * series.size(), 1);
    for (int i = 0; i < series.size(); ++i) {
        flat(2 * i, 0) = series.signals[i];
        flat(2 * i + 1, 0) = series.times_ms[i];
    }
    ad::Var x = ad::Var::leaf(flat);
    for (size_t layer = 0; layer < model.config.hidden.size(); ++layer) {
        const std::string p = "fc" + std::to_string(layer);
        x = ad::tanh(ad::linear_map(vars.at(p + "_w"), x, vars.at(p + "_b")));
    }
    return ad::linear_map(vars.at("out_w"), x, vars.at("out_b"));
}

} // namespace

DecodedVars fcnn_forward_params(const FcnnModel& model, const ParamVars& vars,
                                const VoxelSeries& series) {
    if (model.head != FcnnHead::PhysicsParams)
        throw std::invalid_argument("model has no physics head");
    return raw_to_params(fcnn_raw(model, vars, series));
}

ad::Var fcnn_forward_t1(const FcnnModel& model, const ParamVars& vars,
                        const VoxelSeries& series) {
    if (model.head != FcnnHead::DirectT1)
        throw std::invalid_argument("model has no direct-T1 head");
    return ad::softplus(fcnn_raw(model, vars, series));
}

} // namespace t1map
