#pragma once

#include "t1map/autodiff.hpp"

#include <functional>

namespace t1map {

/// Right-hand side of dh/dt = f(h, t). The state is a graph variable so
/// accepted solver steps stay differentiable; t is plain data.
using OdeDynamics = std::function<ad::Var(const ad::Var&, double)>;

struct Dopri5Stats {
    int accepted = 0;
    int rejected = 0;
    int evaluations = 0;
};

/// Adaptive embedded Dormand-Prince 5(4) integration of h over [t0, t1].
/// Per-step error is controlled against atol + rtol*max(|y0|,|y1|) with a
/// classical controller (safety 0.9, growth factor clamped to [0.2, 5]).
/// Accepted steps are built from graph ops, so backward() differentiates
/// the exact computed trajectory; rejected trials leave no trace.
/// Throws on step underflow (dt < 1e-12*(t1-t0)) and non-finite dynamics.
ad::Var dopri5_integrate(const OdeDynamics& f, const ad::Var& h0, double t0, double t1,
                         double rtol, double atol, Dopri5Stats* stats = nullptr);

} // namespace t1map
