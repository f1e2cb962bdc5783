#include "t1map/training.hpp"

#include "t1map/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace t1map {

VoxelSeries normalize(const VoxelSeries& series, double s_ref, double t_ref) {
    if (!(s_ref > 0.0) || !(t_ref > 0.0))
        throw std::invalid_argument("normalization scales must be positive");
    if (series.normalized) throw std::invalid_argument("series is already normalized");
    VoxelSeries out = series;
    out.signals = series.signals / s_ref;
    out.times_ms = series.times_ms / t_ref;
    out.s_ref = s_ref;
    out.t_ref = t_ref;
    out.normalized = true;
    return out;
}

VoxelSeries denormalize(const VoxelSeries& series) {
    if (!series.normalized) throw std::invalid_argument("series is not normalized");
    VoxelSeries out = series;
    out.signals = series.signals * series.s_ref;
    out.times_ms = series.times_ms * series.t_ref;
    out.s_ref = 1.0;
    out.t_ref = 1.0;
    out.normalized = false;
    return out;
}

RelaxationParams normalize_params(const RelaxationParams& p, double s_ref, double t_ref) {
    return RelaxationParams{p.c / s_ref, p.k, p.t1_star / t_ref};
}

RelaxationParams denormalize_params(const RelaxationParams& p, double s_ref, double t_ref) {
    return RelaxationParams{p.c * s_ref, p.k, p.t1_star * t_ref};
}

double gamma_factor(double s_ref, double t_ref) {
    if (!(s_ref > 0.0) || !(t_ref > 0.0))
        throw std::invalid_argument("normalization scales must be positive");
    return t_ref / s_ref;
}

std::vector<double> dense_time_grid(const TrainConfig& config) {
    if (config.grid_points < 1 || !(config.grid_frac > 0.0 && config.grid_frac < 1.0) ||
        !(config.grid_knee_ms < config.t_max_ms) || !(config.grid_knee_ms > 0.0))
        throw std::invalid_argument("invalid dense-grid configuration");
    const int total = config.grid_points;
    const int n_low = std::clamp(static_cast<int>(std::floor(config.grid_frac * total)), 0, total);
    const int n_high = total - n_low;

    std::vector<double> grid;
    grid.reserve(total);
    for (int j = 0; j < n_low; ++j)
        grid.push_back(n_low == 1 ? 0.0
                                  : config.grid_knee_ms * j / static_cast<double>(n_low - 1));
    for (int j = 1; j <= n_high; ++j)
        grid.push_back(config.grid_knee_ms +
                       (config.t_max_ms - config.grid_knee_ms) * j /
                           static_cast<double>(n_high));
    // enforce strict monotonicity (the knee can coincide across regions)
    std::vector<double> out;
    out.reserve(grid.size());
    for (double t : grid)
        if (out.empty() || t > out.back()) out.push_back(t);
    return out;
}

double t1_loss(std::span<const RelaxationParams> pred,
               std::span<const RelaxationParams> truth) {
    if (pred.size() != truth.size() || pred.empty())
        throw std::invalid_argument("t1_loss: batch size mismatch");
    double acc = 0.0;
    for (size_t i = 0; i < pred.size(); ++i) {
        const double d = t1_from_params(pred[i]) - t1_from_params(truth[i]);
        acc += d * d;
    }
    return acc / static_cast<double>(pred.size());
}

double physics_loss(std::span<const RelaxationParams> pred_norm,
                    std::span<const RelaxationParams> truth_raw,
                    std::span<const double> grid_ms, double lambda, double s_ref,
                    double t_ref) {
    if (pred_norm.size() != truth_raw.size() || pred_norm.empty())
        throw std::invalid_argument("physics_loss: batch size mismatch");
    if (grid_ms.empty()) throw std::invalid_argument("physics_loss: empty grid");
    const double gamma = gamma_factor(s_ref, t_ref);
    double acc = 0.0;
    for (size_t v = 0; v < pred_norm.size(); ++v) {
        const RelaxationParams& pn = pred_norm[v];
        const RelaxationParams& tr = truth_raw[v];
        for (double t : grid_ms) {
            const double t_hat = t / t_ref;
            const double ds = signal(tr, t) / s_ref - signal(pn, t_hat);
            const double dd = gamma * signal_derivative(tr, t) - signal_derivative(pn, t_hat);
            acc += ds * ds + lambda * dd * dd;
        }
    }
    return acc / (static_cast<double>(pred_norm.size()) * static_cast<double>(grid_ms.size()));
}

double total_loss(std::span<const RelaxationParams> pred_norm,
                  std::span<const RelaxationParams> truth_raw,
                  std::span<const double> grid_ms, double lambda, double s_ref,
                  double t_ref) {
    std::vector<RelaxationParams> truth_norm(truth_raw.size());
    for (size_t i = 0; i < truth_raw.size(); ++i)
        truth_norm[i] = normalize_params(truth_raw[i], s_ref, t_ref);
    return t1_loss(pred_norm, truth_norm) +
           physics_loss(pred_norm, truth_raw, grid_ms, lambda, s_ref, t_ref);
}

VoxelLossTerms voxel_loss_graph(const DecodedVars& pred_norm, const RelaxationParams& truth_raw,
                                const Eigen::VectorXd& grid_ms, double lambda, double s_ref,
                                double t_ref) {
    using namespace ad;
    if (grid_ms.size() == 0) throw std::invalid_argument("voxel_loss_graph: empty grid");
    const double gamma = gamma_factor(s_ref, t_ref);
    const RelaxationParams truth_norm = normalize_params(truth_raw, s_ref, t_ref);

    // T1 consistency term in normalized units
    const Var t1_pred = mul(pred_norm.t1_star, sub(pred_norm.k, Var::scalar(1.0)));
    const Var t1_err = sub(t1_pred, Var::scalar(t1_from_params(truth_norm)));
    VoxelLossTerms terms;
    terms.t1 = square(t1_err);

    // Model-implied curve and slope on the grid, normalized units
    const Eigen::VectorXd t_hat = grid_ms / t_ref;
    const Var grid = Var::leaf(t_hat);
    const Var e = exp(neg(div(grid, pred_norm.t1_star)));
    const Var s_pred = mul(pred_norm.c, sub(Var::scalar(1.0), mul(pred_norm.k, e)));
    const Var d_pred = mul(div(mul(pred_norm.c, pred_norm.k), pred_norm.t1_star), e);

    // Targets from the raw-unit labels; gamma converts the derivative
    Eigen::VectorXd s_target(grid_ms.size()), d_target(grid_ms.size());
    for (long i = 0; i < grid_ms.size(); ++i) {
        s_target[i] = signal(truth_raw, grid_ms[i]) / s_ref;
        d_target[i] = gamma * signal_derivative(truth_raw, grid_ms[i]);
    }
    const Var sig_term = mean(square(sub(Var::leaf(s_target), s_pred)));
    const Var der_term = mean(square(sub(Var::leaf(d_target), d_pred)));
    terms.physics = add(sig_term, scale(der_term, lambda));
    return terms;
}

std::vector<int> sample_subset(const MolliSchedule& schedule, int n, Rng& rng) {
    const int total = schedule.size();
    if (n < 3) throw std::invalid_argument("subset must cover all three phases (n >= 3)");
    if (n > total) throw std::invalid_argument("subset larger than schedule");
    // phase boundaries proportional to the 3/5/3 split of an 11-image scheme
    int mid_end = std::min(static_cast<int>(std::ceil(8.0 * total / 11.0)), total - 1);
    int early_end = std::min(static_cast<int>(std::ceil(3.0 * total / 11.0)), mid_end - 1);
    early_end = std::max(early_end, 1);
    mid_end = std::max(mid_end, early_end + 1);

    std::vector<int> chosen;
    chosen.reserve(n);
    chosen.push_back(static_cast<int>(rng.below(early_end)));
    chosen.push_back(early_end + static_cast<int>(rng.below(mid_end - early_end)));
    chosen.push_back(mid_end + static_cast<int>(rng.below(total - mid_end)));

    std::vector<int> pool;
    pool.reserve(total - 3);
    for (int i = 0; i < total; ++i)
        if (i != chosen[0] && i != chosen[1] && i != chosen[2]) pool.push_back(i);
    for (int need = n - 3; need > 0; --need) {
        const size_t pick = rng.below(pool.size());
        chosen.push_back(pool[pick]);
        pool.erase(pool.begin() + static_cast<long>(pick));
    }
    std::sort(chosen.begin(), chosen.end());
    return chosen;
}

int LabelSet::valid_count() const {
    return static_cast<int>(std::count(valid.begin(), valid.end(), std::uint8_t{1}));
}

LabelSet fit_labels(const PhantomVolume& volume, int threads) {
    const int nvox = volume.voxel_count();
    LabelSet labels;
    labels.params.resize(nvox);
    labels.valid.assign(nvox, 0);
    parallel_chunks(nvox, threads, [&](int, int begin, int end) {
        for (int v = begin; v < end; ++v) {
            if (!volume.roi_mask[v]) continue;
            const FitResult fit = lm_fit(volume.voxel_series(v, Polarity::Signed));
            labels.params[v] = fit.params;
            labels.valid[v] = fit.converged ? 1 : 0;
        }
    });
    return labels;
}

double auto_s_ref(const PhantomVolume& volume) {
    double smax = 0.0;
    for (int v = 0; v < volume.voxel_count(); ++v)
        if (volume.roi_mask[v])
            smax = std::max(smax, volume.signed_signals.row(v).cwiseAbs().maxCoeff());
    return smax > 0.0 ? smax : 1.0;
}

void adam_step(ParamStore& params, const std::vector<Eigen::MatrixXd>& grads,
               AdamState& state, double lr, double beta1, double beta2, double eps) {
    const size_t n = params.entries.size();
    if (grads.size() != n) throw std::invalid_argument("adam_step: gradient count mismatch");
    if (state.m.empty()) {
        state.m.resize(n);
        state.v.resize(n);
        for (size_t i = 0; i < n; ++i) {
            state.m[i] = Eigen::MatrixXd::Zero(params.entries[i].second.rows(),
                                               params.entries[i].second.cols());
            state.v[i] = state.m[i];
        }
    }
    ++state.step;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
    for (size_t i = 0; i < n; ++i) {
        Eigen::MatrixXd& p = params.entries[i].second;
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * grads[i];
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * grads[i].array().square().matrix();
        const Eigen::ArrayXXd mhat = state.m[i].array() / bc1;
        const Eigen::ArrayXXd vhat = state.v[i].array() / bc2;
        p.array() -= lr * mhat / (vhat.sqrt() + eps);
    }
}

namespace {

struct EpochPlan {
    bool pretrain = true;
    int epoch = 0;
};

// Per-voxel forward + loss builder; returns (t1 value, physics value) and
// leaves gradients accumulated on `vars`.
using VoxelPass = std::function<std::pair<double, double>(const ParamVars& vars, int voxel,
                                                          const EpochPlan& plan)>;

std::vector<TraceRow> run_training(ParamStore& params, const PhantomVolume& volume,
                                   const LabelSet& labels, const TrainConfig& config,
                                   int threads, const VoxelPass& pass) {
    std::vector<int> roi;
    for (int v = 0; v < volume.voxel_count(); ++v)
        if (volume.roi_mask[v] && labels.valid[v]) roi.push_back(v);
    if (roi.empty()) throw std::invalid_argument("train: no valid labelled voxels");
    const int nvox = static_cast<int>(roi.size());
    const int nchunks = chunk_count(nvox);
    const int total_epochs = config.epochs_pretrain + config.epochs_finetune;

    AdamState adam;
    std::vector<TraceRow> trace;
    trace.reserve(total_epochs);

    for (int epoch = 0; epoch < total_epochs; ++epoch) {
        EpochPlan plan{epoch < config.epochs_pretrain, epoch};
        std::vector<std::vector<Eigen::MatrixXd>> chunk_grads(nchunks);
        std::vector<std::pair<double, double>> chunk_loss(nchunks, {0.0, 0.0});

        parallel_chunks(nvox, threads, [&](int ci, int begin, int end) {
            ParamVars vars = ParamVars::bind(params); // worker-local leaves
            double t1_acc = 0.0, phys_acc = 0.0;
            for (int i = begin; i < end; ++i) {
                const auto [t1_val, phys_val] = pass(vars, roi[i], plan);
                t1_acc += t1_val;
                phys_acc += phys_val;
            }
            chunk_loss[ci] = {t1_acc, phys_acc};
            auto& grads = chunk_grads[ci];
            grads.reserve(vars.entries.size());
            for (auto& [name, var] : vars.entries) grads.push_back(var.grad());
        });

        // deterministic reduction in chunk order
        std::vector<Eigen::MatrixXd> grads;
        grads.reserve(params.entries.size());
        for (size_t p = 0; p < params.entries.size(); ++p) {
            Eigen::MatrixXd g = chunk_grads[0][p];
            for (int ci = 1; ci < nchunks; ++ci) g += chunk_grads[ci][p];
            grads.push_back(std::move(g));
        }
        double l_t1 = 0.0, l_phys = 0.0;
        for (int ci = 0; ci < nchunks; ++ci) {
            l_t1 += chunk_loss[ci].first;
            l_phys += chunk_loss[ci].second;
        }
        l_t1 /= nvox;
        l_phys /= nvox;
        const double l_total = l_t1 + l_phys;
        if (!std::isfinite(l_total))
            throw std::runtime_error("training diverged at epoch " + std::to_string(epoch) +
                                     " (non-finite loss)");
        trace.push_back({epoch, l_t1, l_phys, l_total});
        adam_step(params, grads, adam, config.lr);
    }
    return trace;
}

} // namespace

std::vector<TraceRow> train(LstmOdeModel& model, const PhantomVolume& volume,
                            const LabelSet& labels, const TrainConfig& config,
                            int threads) {
    model.s_ref = config.s_ref > 0.0 ? config.s_ref : auto_s_ref(volume);
    model.t_ref = config.t_ref;
    const std::vector<double> grid_ms = dense_time_grid(config);
    const Eigen::VectorXd grid =
        Eigen::Map<const Eigen::VectorXd>(grid_ms.data(), static_cast<long>(grid_ms.size()));
    const int nvalid = labels.valid_count();
    const double inv_v = 1.0 / static_cast<double>(nvalid > 0 ? nvalid : 1);

    VoxelPass pass = [&, inv_v](const ParamVars& vars, int voxel, const EpochPlan& plan) {
        VoxelSeries series = volume.voxel_series(voxel, Polarity::Signed);
        if (!plan.pretrain) {
            Rng rng = Rng::derive(config.seed, static_cast<std::uint64_t>(plan.epoch),
                                  static_cast<std::uint64_t>(voxel));
            const int size =
                config.subset_sizes[rng.below(config.subset_sizes.size())];
            const std::vector<int> subset = sample_subset(volume.schedule, size, rng);
            VoxelSeries sub;
            sub.signals.resize(subset.size());
            sub.times_ms.resize(subset.size());
            for (size_t i = 0; i < subset.size(); ++i) {
                sub.signals[i] = series.signals[subset[i]];
                sub.times_ms[i] = series.times_ms[subset[i]];
            }
            series = sub;
        }
        const VoxelSeries norm = normalize(series, model.s_ref, model.t_ref);
        const DecodedVars pred = lstm_ode_forward(model, vars, norm);
        const VoxelLossTerms terms = voxel_loss_graph(pred, labels.params[voxel], grid,
                                                      config.lambda, model.s_ref, model.t_ref);
        const ad::Var loss = ad::scale(ad::add(terms.t1, terms.physics), inv_v);
        ad::backward(loss);
        return std::make_pair(terms.t1.scalar_value(), terms.physics.scalar_value());
    };
    return run_training(model.params, volume, labels, config, threads, pass);
}

std::vector<TraceRow> train(FcnnModel& model, const PhantomVolume& volume,
                            const LabelSet& labels, const TrainConfig& config,
                            int threads) {
    model.s_ref = config.s_ref > 0.0 ? config.s_ref : auto_s_ref(volume);
    model.t_ref = config.t_ref;
    const std::vector<double> grid_ms = dense_time_grid(config);
    const Eigen::VectorXd grid =
        Eigen::Map<const Eigen::VectorXd>(grid_ms.data(), static_cast<long>(grid_ms.size()));
    const int nvalid = labels.valid_count();
    const double inv_v = 1.0 / static_cast<double>(nvalid > 0 ? nvalid : 1);
    const bool direct = model.head == FcnnHead::DirectT1;

    VoxelPass pass = [&, inv_v, direct](const ParamVars& vars, int voxel,
                                        const EpochPlan& plan) {
        const VoxelSeries full = volume.voxel_series(
            voxel, direct ? Polarity::Magnitude : Polarity::Signed);
        Rng rng = Rng::derive(config.seed, static_cast<std::uint64_t>(plan.epoch),
                              static_cast<std::uint64_t>(voxel));
        const std::vector<int> subset =
            sample_subset(volume.schedule, model.config.arity, rng);
        VoxelSeries sub;
        sub.polarity = full.polarity;
        sub.signals.resize(subset.size());
        sub.times_ms.resize(subset.size());
        for (size_t i = 0; i < subset.size(); ++i) {
            sub.signals[i] = full.signals[subset[i]];
            sub.times_ms[i] = full.times_ms[subset[i]];
        }
        const VoxelSeries norm = normalize(sub, model.s_ref, model.t_ref);
        const RelaxationParams truth_norm =
            normalize_params(labels.params[voxel], model.s_ref, model.t_ref);

        ad::Var t1_term, loss;
        double phys_val = 0.0;
        if (direct) {
            const ad::Var t1_pred = fcnn_forward_t1(model, vars, norm);
            t1_term = ad::square(
                ad::sub(t1_pred, ad::Var::scalar(t1_from_params(truth_norm))));
            loss = ad::scale(t1_term, inv_v);
        } else {
            const DecodedVars pred = fcnn_forward_params(model, vars, norm);
            const VoxelLossTerms terms =
                voxel_loss_graph(pred, labels.params[voxel], grid, config.lambda,
                                 model.s_ref, model.t_ref);
            t1_term = terms.t1;
            phys_val = terms.physics.scalar_value();
            loss = ad::scale(ad::add(terms.t1, terms.physics), inv_v);
        }
        ad::backward(loss);
        return std::make_pair(t1_term.scalar_value(), phys_val);
    };
    return run_training(model.params, volume, labels, config, threads, pass);
}

} // namespace t1map
