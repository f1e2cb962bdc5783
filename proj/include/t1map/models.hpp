#pragma once

#include "t1map/autodiff.hpp"
#include "t1map/ode.hpp"
#include "t1map/relaxometry.hpp"

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace t1map {

/// Named parameter arrays in a fixed order; the order defines gradient
/// reduction and serialization layout.
struct ParamStore {
    std::vector<std::pair<std::string, Eigen::MatrixXd>> entries;

    Eigen::MatrixXd& at(const std::string& name);
    const Eigen::MatrixXd& at(const std::string& name) const;
    long total_size() const;
};

/// Graph leaves bound to a ParamStore, one Var per entry, same order.
struct ParamVars {
    std::vector<std::pair<std::string, ad::Var>> entries;

    const ad::Var& at(const std::string& name) const;
    static ParamVars bind(const ParamStore& store);
};

/// Standard LSTM gate update. `w` is the stacked (4H x (in+H)) gate
/// matrix in row-block order [input; forget; output; cell], `b` the
/// stacked bias. Returns (candidate hidden state, new cell state).
std::pair<ad::Var, ad::Var> lstm_cell(const ad::Var& w, const ad::Var& b, const ad::Var& x,
                                      const ad::Var& h_prev, const ad::Var& c_prev);

struct LstmOdeConfig {
    int d_emb = 16;
    int hidden = 32;
    int dyn_hidden = 32;
    int dec_hidden = 32;
    double rtol = 1e-3;
    double atol = 1e-3;
};

/// Continuous-time LSTM-ODE estimator: (S, t) pairs are embedded, gated
/// through an LSTM cell, and the candidate hidden state is evolved across
/// each inter-acquisition gap by a learned vector field integrated with
/// dopri5. A decoder maps the final hidden state to {c, k, t1_star}.
struct LstmOdeModel {
    LstmOdeConfig config;
    ParamStore params;
    double s_ref = 1.0; // normalization the model was trained with
    double t_ref = 1.0;
    std::uint64_t seed = 0;

    static LstmOdeModel init(const LstmOdeConfig& config, std::uint64_t seed);
};

enum class FcnnHead { DirectT1, PhysicsParams };

struct FcnnConfig {
    int arity = 5;                       // number of (S, t) input pairs
    std::vector<int> hidden = {64, 64};
};

/// Fully connected baseline over the flattened (S1,t1,...,SN,tN) vector,
/// with either a direct-T1 head or a physics head emitting {c, k, t1_star}.
struct FcnnModel {
    FcnnConfig config;
    FcnnHead head = FcnnHead::DirectT1;
    ParamStore params;
    double s_ref = 1.0;
    double t_ref = 1.0;
    std::uint64_t seed = 0;

    static FcnnModel init(const FcnnConfig& config, FcnnHead head, std::uint64_t seed);
};

/// Decoded parameter triple as graph variables (normalized units).
struct DecodedVars {
    ad::Var c, k, t1_star;

    RelaxationParams values() const {
        return RelaxationParams{c.scalar_value(), k.scalar_value(), t1_star.scalar_value()};
    }
};

/// Run the recurrent encoder over a normalized signed series and return
/// the final hidden state. Times must be non-decreasing; the first
/// integration interval starts at t = 0.
ad::Var encode_sequence(const LstmOdeModel& model, const ParamVars& vars,
                        const VoxelSeries& series, Dopri5Stats* stats = nullptr);

/// Map a hidden state to {c, k, t1_star} via the decoder head:
/// c = softplus(r0), k = 1 + softplus(r1), t1_star = softplus(r2).
DecodedVars decode_params(const LstmOdeModel& model, const ParamVars& vars, const ad::Var& h);

/// Convenience: full forward pass to normalized params.
DecodedVars lstm_ode_forward(const LstmOdeModel& model, const ParamVars& vars,
                             const VoxelSeries& series);

/// FCNN forward pass. Physics head returns the same softplus mapping as
/// decode_params; the direct head is exposed via fcnn_forward_t1.
DecodedVars fcnn_forward_params(const FcnnModel& model, const ParamVars& vars,
                                const VoxelSeries& series);
ad::Var fcnn_forward_t1(const FcnnModel& model, const ParamVars& vars,
                        const VoxelSeries& series);

} // namespace t1map
