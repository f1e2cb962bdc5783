#include "t1map/inference.hpp"

#include "t1map/fit.hpp"
#include "t1map/parallel.hpp"
#include "t1map/training.hpp"

#include <cmath>
#include <functional>
#include <stdexcept>

namespace t1map {

double reconstruction_mse(const RelaxationParams& params_norm, const VoxelSeries& normalized) {
    const Eigen::VectorXd model = signal(params_norm, normalized.times_ms);
    return (model - normalized.signals).squaredNorm() /
           static_cast<double>(normalized.size());
}

namespace {

using ForwardFn = std::function<RelaxationParams(const VoxelSeries& normalized)>;

VoxelInference polarity_search(const ForwardFn& forward, const VoxelSeries& magnitude_raw,
                               double s_ref, double t_ref) {
    if (magnitude_raw.polarity != Polarity::Magnitude)
        throw std::invalid_argument("inference expects a magnitude series");
    const int n = magnitude_raw.size();
    VoxelInference best;
    for (int j = 0; j <= n; ++j) {
        VoxelSeries trial = normalize(apply_polarity(magnitude_raw, j), s_ref, t_ref);
        RelaxationParams params;
        try {
            params = forward(trial);
        } catch (const std::exception&) {
            continue;
        }
        const double residual = reconstruction_mse(params, trial);
        if (!std::isfinite(residual)) continue;
        ++best.candidates;
        if (!best.valid || residual < best.residual) {
            best.valid = true;
            best.null_index = j;
            best.params_norm = params;
            best.params_raw = denormalize_params(params, s_ref, t_ref);
            best.t1_ms = t1_from_params(best.params_raw);
            best.residual = residual;
        }
    }
    return best;
}

} // namespace

VoxelInference polarity_corrected_infer(const LstmOdeModel& model, const ParamVars& vars,
                                        const VoxelSeries& magnitude_raw) {
    ad::NoGradGuard guard;
    return polarity_search(
        [&](const VoxelSeries& trial) { return lstm_ode_forward(model, vars, trial).values(); },
        magnitude_raw, model.s_ref, model.t_ref);
}

VoxelInference polarity_corrected_infer(const FcnnModel& model, const ParamVars& vars,
                                        const VoxelSeries& magnitude_raw) {
    ad::NoGradGuard guard;
    return polarity_search(
        [&](const VoxelSeries& trial) {
            return fcnn_forward_params(model, vars, trial).values();
        },
        magnitude_raw, model.s_ref, model.t_ref);
}

VoxelInference direct_infer(const FcnnModel& model, const ParamVars& vars,
                            const VoxelSeries& magnitude_raw) {
    ad::NoGradGuard guard;
    if (magnitude_raw.polarity != Polarity::Magnitude)
        throw std::invalid_argument("inference expects a magnitude series");
    VoxelInference out;
    const VoxelSeries norm = normalize(magnitude_raw, model.s_ref, model.t_ref);
    const double t1_norm = fcnn_forward_t1(model, vars, norm).scalar_value();
    if (!std::isfinite(t1_norm)) return out;
    out.valid = true;
    out.t1_ms = t1_norm * model.t_ref;
    out.candidates = 1;
    return out;
}

io::VolumeMaps MapResult::to_maps(const std::string& source) const {
    io::VolumeMaps maps;
    maps.dims = dims;
    maps.t1_map = t1_map;
    maps.null_index_map = null_index_map;
    maps.residual_map = residual_map;
    maps.c_map = c_map;
    maps.k_map = k_map;
    maps.t1_star_map = t1_star_map;
    maps.valid_mask = valid_mask;
    maps.source = source;
    return maps;
}

namespace {

VoxelSeries subset_series(const PhantomVolume& volume, int voxel, Polarity polarity,
                          const std::vector<int>& subset) {
    const VoxelSeries full = volume.voxel_series(voxel, polarity);
    if (subset.empty()) return full;
    VoxelSeries out;
    out.polarity = polarity;
    out.signals.resize(static_cast<long>(subset.size()));
    out.times_ms.resize(static_cast<long>(subset.size()));
    for (size_t i = 0; i < subset.size(); ++i) {
        out.signals[static_cast<long>(i)] = full.signals[subset[i]];
        out.times_ms[static_cast<long>(i)] = full.times_ms[subset[i]];
    }
    return out;
}

void check_subset(const PhantomVolume& volume, const std::vector<int>& subset) {
    for (size_t i = 0; i < subset.size(); ++i) {
        if (subset[i] < 0 || subset[i] >= volume.schedule.size())
            throw std::invalid_argument("subset index out of schedule range");
        if (i > 0 && subset[i] <= subset[i - 1])
            throw std::invalid_argument("subset indices must be strictly increasing");
    }
}

} // namespace

MapResult map_volume(const io::ModelCheckpoint& ckpt, const PhantomVolume& volume,
                     const std::vector<int>& subset, int threads) {
    check_subset(volume, subset);
    if (volume.tissue_count() == 0) throw std::invalid_argument("map_volume: empty ROI");

    const int nvox = volume.voxel_count();
    MapResult result;
    result.dims = volume.dims;
    result.t1_map.assign(nvox, 0.0);
    result.null_index_map.assign(nvox, 0);
    result.residual_map.assign(nvox, 0.0);
    result.c_map.assign(nvox, 0.0);
    result.k_map.assign(nvox, 0.0);
    result.t1_star_map.assign(nvox, 0.0);
    result.valid_mask.assign(nvox, 0);

    parallel_chunks(nvox, threads, [&](int, int begin, int end) {
        // worker-local parameter leaves
        std::visit(
            [&](const auto& model) {
                const ParamVars vars = ParamVars::bind(model.params);
                for (int v = begin; v < end; ++v) {
                    if (volume.tissue[v] == Tissue::Background) continue;
                    const VoxelSeries series =
                        subset_series(volume, v, Polarity::Magnitude, subset);
                    VoxelInference inf;
                    using M = std::decay_t<decltype(model)>;
                    if constexpr (std::is_same_v<M, FcnnModel>) {
                        inf = model.head == FcnnHead::DirectT1
                                  ? direct_infer(model, vars, series)
                                  : polarity_corrected_infer(model, vars, series);
                    } else {
                        inf = polarity_corrected_infer(model, vars, series);
                    }
                    if (!inf.valid) continue;
                    result.t1_map[v] = inf.t1_ms;
                    result.null_index_map[v] = inf.null_index;
                    result.residual_map[v] = inf.residual;
                    result.c_map[v] = inf.params_raw.c;
                    result.k_map[v] = inf.params_raw.k;
                    result.t1_star_map[v] = inf.params_raw.t1_star;
                    result.valid_mask[v] = 1;
                }
            },
            ckpt);
    });
    return result;
}

io::VolumeMaps classical_map_volume(const PhantomVolume& volume, const std::string& method,
                                    const std::vector<int>& subset, int threads) {
    check_subset(volume, subset);
    if (method != "lm" && method != "trf")
        throw std::invalid_argument("unknown classical method '" + method + "'");
    const int nvox = volume.voxel_count();
    const int n = subset.empty() ? volume.schedule.size() : static_cast<int>(subset.size());

    io::VolumeMaps maps;
    maps.dims = volume.dims;
    maps.source = method;
    maps.t1_map.assign(nvox, 0.0);
    maps.null_index_map.assign(nvox, 0);
    maps.residual_map.assign(nvox, 0.0);
    maps.c_map.assign(nvox, 0.0);
    maps.k_map.assign(nvox, 0.0);
    maps.t1_star_map.assign(nvox, 0.0);
    maps.valid_mask.assign(nvox, 0);
    maps.sd_map.assign(nvox, 0.0);

    parallel_chunks(nvox, threads, [&](int, int begin, int end) {
        for (int v = begin; v < end; ++v) {
            if (volume.tissue[v] == Tissue::Background) continue;
            const VoxelSeries series = subset_series(volume, v, Polarity::Magnitude, subset);
            FitResult best;
            try {
                if (method == "lm") {
                    best = polarity_restore_fit(series);
                } else {
                    // polarity search with bounded fits per candidate
                    const FitBounds bounds = FitBounds::defaults(series);
                    bool have = false;
                    int best_j = 0;
                    for (int j = 0; j <= series.size(); ++j) {
                        FitResult fit;
                        try {
                            VoxelSeries trial = apply_polarity(series, j);
                            fit = trf_fit(trial, default_init(trial), bounds);
                        } catch (const std::exception&) {
                            continue;
                        }
                        if (!std::isfinite(fit.rss)) continue;
                        if (!have || fit.rss < best.rss - 1e-15 * std::max(1.0, best.rss)) {
                            best = fit;
                            best_j = j;
                            have = true;
                        }
                    }
                    if (!have) continue;
                    best.null_index = best_j;
                }
            } catch (const std::exception&) {
                continue;
            }
            maps.t1_map[v] = t1_from_params(best.params);
            maps.null_index_map[v] = best.null_index;
            maps.residual_map[v] = best.rss;
            maps.c_map[v] = best.params.c;
            maps.k_map[v] = best.params.k;
            maps.t1_star_map[v] = best.params.t1_star;
            maps.valid_mask[v] = best.converged ? 1 : 0;
            maps.sd_map[v] = fitting_sd(best, n).value_or(0.0);
        }
    });
    return maps;
}

} // namespace t1map
