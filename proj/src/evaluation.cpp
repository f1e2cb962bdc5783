#include "t1map/evaluation.hpp"

#include "t1map/fit.hpp"
#include "t1map/parallel.hpp"
#include "t1map/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>

namespace t1map {

namespace {

double rss_at(const RelaxationParams& params, const VoxelSeries& signed_raw) {
    return (signal(params, signed_raw.times_ms) - signed_raw.signals).squaredNorm();
}

} // namespace

Estimator make_lm_estimator() {
    return [](const VoxelSeries& magnitude_raw) {
        VoxelEstimate est;
        FitResult fit;
        try {
            fit = polarity_restore_fit(magnitude_raw);
        } catch (const std::exception&) {
            return est;
        }
        est.valid = std::isfinite(fit.rss);
        est.t1_ms = t1_from_params(fit.params);
        est.params_raw = fit.params;
        est.null_index = fit.null_index;
        est.sd_ms = fitting_sd(fit, magnitude_raw.size());
        return est;
    };
}

Estimator make_trf_estimator() {
    return [](const VoxelSeries& magnitude_raw) {
        VoxelEstimate est;
        const FitBounds bounds = FitBounds::defaults(magnitude_raw);
        bool have = false;
        FitResult best;
        int best_j = 0;
        for (int j = 0; j <= magnitude_raw.size(); ++j) {
            FitResult fit;
            try {
                VoxelSeries trial = apply_polarity(magnitude_raw, j);
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
        if (!have) return est;
        est.valid = true;
        est.t1_ms = t1_from_params(best.params);
        est.params_raw = best.params;
        est.null_index = best_j;
        est.sd_ms = fitting_sd(best, magnitude_raw.size());
        return est;
    };
}

Estimator make_model_estimator(const io::ModelCheckpoint& ckpt) {
    // one shared copy of the checkpoint; leaves are bound per call
    auto shared = std::make_shared<io::ModelCheckpoint>(ckpt);
    return [shared](const VoxelSeries& magnitude_raw) {
        VoxelEstimate est;
        std::visit(
            [&](const auto& model) {
                const ParamVars vars = ParamVars::bind(model.params);
                VoxelInference inf;
                using M = std::decay_t<decltype(model)>;
                if constexpr (std::is_same_v<M, FcnnModel>) {
                    inf = model.head == FcnnHead::DirectT1
                              ? direct_infer(model, vars, magnitude_raw)
                              : polarity_corrected_infer(model, vars, magnitude_raw);
                } else {
                    inf = polarity_corrected_infer(model, vars, magnitude_raw);
                }
                if (!inf.valid) return;
                est.valid = true;
                est.t1_ms = inf.t1_ms;
                est.params_raw = inf.params_raw;
                est.null_index = inf.null_index;
                bool direct_head = false;
                if constexpr (std::is_same_v<M, FcnnModel>)
                    direct_head = model.head == FcnnHead::DirectT1;
                if (!direct_head) {
                    // residuals of the model-implied curve against the
                    // polarity-restored measurements, raw units
                    const VoxelSeries restored =
                        apply_polarity(magnitude_raw, inf.null_index);
                    est.sd_ms = fitting_sd(inf.params_raw, restored.times_ms,
                                           rss_at(inf.params_raw, restored),
                                           magnitude_raw.size());
                }
            },
            *shared);
        return est;
    };
}

MonteCarloResult monte_carlo(const Estimator& method, const PhantomVolume& volume,
                             int n_runs, int subset_size, std::uint64_t seed, int threads) {
    if (n_runs < 1) throw std::invalid_argument("monte_carlo: n_runs >= 1");
    if (subset_size < 3 || subset_size > volume.schedule.size())
        throw std::invalid_argument("monte_carlo: subset_size out of range");
    const int nvox = volume.voxel_count();
    MonteCarloResult result;
    result.t1 = Eigen::MatrixXd::Constant(n_runs, nvox,
                                          std::numeric_limits<double>::quiet_NaN());
    result.sd = Eigen::MatrixXd::Constant(n_runs, nvox,
                                          std::numeric_limits<double>::quiet_NaN());
    result.subsets.resize(n_runs);
    for (int run = 0; run < n_runs; ++run) {
        Rng rng = Rng::derive(seed, static_cast<std::uint64_t>(run));
        result.subsets[run] = sample_subset(volume.schedule, subset_size, rng);
    }

    // flatten (run, voxel) work items into deterministic chunks
    std::vector<int> roi;
    for (int v = 0; v < nvox; ++v)
        if (volume.roi_mask[v]) roi.push_back(v);
    const int items = n_runs * static_cast<int>(roi.size());
    parallel_chunks(items, threads, [&](int, int begin, int end) {
        for (int item = begin; item < end; ++item) {
            const int run = item / static_cast<int>(roi.size());
            const int v = roi[item % roi.size()];
            const std::vector<int>& subset = result.subsets[run];
            const VoxelSeries full = volume.voxel_series(v, Polarity::Magnitude);
            VoxelSeries series;
            series.polarity = Polarity::Magnitude;
            series.signals.resize(static_cast<long>(subset.size()));
            series.times_ms.resize(static_cast<long>(subset.size()));
            for (size_t i = 0; i < subset.size(); ++i) {
                series.signals[static_cast<long>(i)] = full.signals[subset[i]];
                series.times_ms[static_cast<long>(i)] = full.times_ms[subset[i]];
            }
            const VoxelEstimate est = method(series);
            if (est.valid) {
                result.t1(run, v) = est.t1_ms;
                if (est.sd_ms) result.sd(run, v) = *est.sd_ms;
            }
        }
    });
    return result;
}

std::pair<double, double> mean_bias(std::span<const double> estimates,
                                    std::span<const double> truth_t1,
                                    std::span<const std::uint8_t> roi_mask) {
    if (estimates.size() != truth_t1.size() || estimates.size() != roi_mask.size())
        throw std::invalid_argument("mean_bias: size mismatch");
    std::vector<double> biases;
    biases.reserve(estimates.size());
    for (std::size_t v = 0; v < estimates.size(); ++v)
        if (roi_mask[v] && std::isfinite(estimates[v]))
            biases.push_back(estimates[v] - truth_t1[v]);
    if (biases.empty()) throw std::invalid_argument("mean_bias: empty ROI");
    return mean_and_sample_std(biases);
}

std::vector<std::optional<double>> fitting_sd_map(const Estimator& method,
                                                  const PhantomVolume& volume,
                                                  const std::vector<int>& subset,
                                                  int threads) {
    const int nvox = volume.voxel_count();
    std::vector<std::optional<double>> out(nvox);
    parallel_chunks(nvox, threads, [&](int, int begin, int end) {
        for (int v = begin; v < end; ++v) {
            if (!volume.roi_mask[v]) continue;
            const VoxelSeries full = volume.voxel_series(v, Polarity::Magnitude);
            VoxelSeries series = full;
            if (!subset.empty()) {
                series.signals.resize(static_cast<long>(subset.size()));
                series.times_ms.resize(static_cast<long>(subset.size()));
                for (size_t i = 0; i < subset.size(); ++i) {
                    series.signals[static_cast<long>(i)] = full.signals[subset[i]];
                    series.times_ms[static_cast<long>(i)] = full.times_ms[subset[i]];
                }
            }
            const VoxelEstimate est = method(series);
            if (est.valid) out[v] = est.sd_ms;
        }
    });
    return out;
}

ReportRow evaluate_method(const std::string& name, const Estimator& method,
                          const PhantomVolume& volume, int n_runs, int subset_size,
                          std::uint64_t seed, int threads) {
    const MonteCarloResult mc = monte_carlo(method, volume, n_runs, subset_size, seed, threads);
    const int nvox = volume.voxel_count();

    // per-voxel averages over valid runs
    std::vector<double> mean_est(nvox, std::numeric_limits<double>::quiet_NaN());
    std::vector<double> truth_t1(nvox, 0.0);
    std::vector<double> sd_values;
    for (int v = 0; v < nvox; ++v) {
        truth_t1[v] = t1_from_params(volume.truth[v]);
        if (!volume.roi_mask[v]) continue;
        double acc = 0.0;
        int count = 0;
        double sd_acc = 0.0;
        int sd_count = 0;
        for (int run = 0; run < n_runs; ++run) {
            if (std::isfinite(mc.t1(run, v))) {
                acc += mc.t1(run, v);
                ++count;
            }
            if (std::isfinite(mc.sd(run, v))) {
                sd_acc += mc.sd(run, v);
                ++sd_count;
            }
        }
        if (count > 0) mean_est[v] = acc / count;
        if (sd_count > 0) sd_values.push_back(sd_acc / sd_count);
    }

    ReportRow row;
    row.method = name;
    row.regime = volume.regime;
    row.subset_size = subset_size;
    row.n_runs = n_runs;
    std::tie(row.mean_bias_ms, row.bias_std_ms) =
        mean_bias(mean_est, truth_t1, volume.roi_mask);

    if (!sd_values.empty()) {
        std::tie(row.mean_sd_ms, row.sd_std_ms) = mean_and_sample_std(sd_values);
        row.sd_available = true;
    }

    std::vector<double> a, b;
    for (int v = 0; v < nvox; ++v)
        if (volume.roi_mask[v] && std::isfinite(mean_est[v])) {
            a.push_back(mean_est[v]);
            b.push_back(truth_t1[v]);
        }
    const TTestResult tt = paired_t_test(a, b);
    row.t_stat = tt.t;
    row.p_value = tt.p;
    row.significant = tt.p <= 0.05;
    return row;
}

std::string format_cell(double mean, double std) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.2f(%.2f)", mean, std);
    return buf;
}

std::string render_report_table(const EvalReport& report) {
    // collect regimes, methods (insertion order) and subset sizes
    std::vector<std::string> regimes;
    std::vector<std::string> methods;
    std::vector<int> sizes;
    for (const ReportRow& row : report.rows) {
        if (std::find(regimes.begin(), regimes.end(), row.regime) == regimes.end())
            regimes.push_back(row.regime);
        if (std::find(methods.begin(), methods.end(), row.method) == methods.end())
            methods.push_back(row.method);
        if (std::find(sizes.begin(), sizes.end(), row.subset_size) == sizes.end())
            sizes.push_back(row.subset_size);
    }
    std::sort(sizes.begin(), sizes.end());

    auto find_row = [&](const std::string& regime, const std::string& method,
                        int size) -> const ReportRow* {
        for (const ReportRow& row : report.rows)
            if (row.regime == regime && row.method == method && row.subset_size == size)
                return &row;
        return nullptr;
    };

    std::ostringstream out;
    constexpr int kw = 18;
    for (const std::string& regime : regimes) {
        out << "== " << regime << " ==\n";
        out << std::left;
        out.width(12);
        out << "method";
        for (int s : sizes) {
            out.width(kw);
            out << ("bias LL" + std::to_string(s));
        }
        for (int s : sizes) {
            out.width(kw);
            out << ("SD LL" + std::to_string(s));
        }
        out << '\n';

        // best per column: smallest |mean bias| / smallest mean SD
        std::map<int, const ReportRow*> best_bias, best_sd;
        for (int s : sizes)
            for (const std::string& m : methods)
                if (const ReportRow* row = find_row(regime, m, s)) {
                    if (!best_bias[s] ||
                        std::abs(row->mean_bias_ms) < std::abs(best_bias[s]->mean_bias_ms))
                        best_bias[s] = row;
                    if (row->sd_available &&
                        (!best_sd[s] || row->mean_sd_ms < best_sd[s]->mean_sd_ms))
                        best_sd[s] = row;
                }

        for (const std::string& m : methods) {
            bool any = false;
            for (int s : sizes)
                if (find_row(regime, m, s)) any = true;
            if (!any) continue;
            out.width(12);
            out << m;
            for (int s : sizes) {
                std::string cell = "-";
                if (const ReportRow* row = find_row(regime, m, s)) {
                    cell = format_cell(row->mean_bias_ms, row->bias_std_ms);
                    if (!row->significant) cell.insert(cell.find('('), "*");
                    if (best_bias[s] == row) cell = "[" + cell + "]";
                }
                out.width(kw);
                out << cell;
            }
            for (int s : sizes) {
                std::string cell = "-";
                if (const ReportRow* row = find_row(regime, m, s)) {
                    cell = row->sd_available
                               ? format_cell(row->mean_sd_ms, row->sd_std_ms)
                               : "NA";
                    if (row->sd_available && best_sd[s] == row) cell = "[" + cell + "]";
                }
                out.width(kw);
                out << cell;
            }
            out << '\n';
        }
        out << '\n';
    }
    return out.str();
}

void write_report_csv(const io::fs::path& path, const EvalReport& report) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << "method,regime,subset_size,n_runs,mean_bias_ms,bias_std_ms,mean_sd_ms,"
           "sd_std_ms,t_stat,p_value,significant\n";
    for (const ReportRow& row : report.rows) {
        out << row.method << ',' << row.regime << ',' << row.subset_size << ','
            << row.n_runs << ',' << io::format_double(row.mean_bias_ms) << ','
            << io::format_double(row.bias_std_ms) << ','
            << (row.sd_available ? io::format_double(row.mean_sd_ms) : "NA") << ','
            << (row.sd_available ? io::format_double(row.sd_std_ms) : "NA") << ','
            << io::format_double(row.t_stat) << ',' << io::format_double(row.p_value)
            << ',' << (row.significant ? 1 : 0) << '\n';
    }
}

EvalReport read_report_csv(const io::fs::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());
    std::string line;
    std::getline(in, line); // header
    EvalReport report;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::istringstream ss(line);
        std::string field;
        ReportRow row;
        std::getline(ss, row.method, ',');
        std::getline(ss, row.regime, ',');
        std::getline(ss, field, ',');
        row.subset_size = std::stoi(field);
        std::getline(ss, field, ',');
        row.n_runs = std::stoi(field);
        std::getline(ss, field, ',');
        row.mean_bias_ms = std::stod(field);
        std::getline(ss, field, ',');
        row.bias_std_ms = std::stod(field);
        std::getline(ss, field, ',');
        row.sd_available = field != "NA";
        if (row.sd_available) row.mean_sd_ms = std::stod(field);
        std::getline(ss, field, ',');
        if (field != "NA") row.sd_std_ms = std::stod(field);
        std::getline(ss, field, ',');
        row.t_stat = std::stod(field);
        std::getline(ss, field, ',');
        row.p_value = std::stod(field);
        std::getline(ss, field, ',');
        row.significant = field == "1";
        report.rows.push_back(row);
    }
    return report;
}

} // namespace t1map
