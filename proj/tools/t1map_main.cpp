#include "t1map/evaluation.hpp"
#include "t1map/fit.hpp"
#include "t1map/inference.hpp"
#include "t1map/io.hpp"
#include "t1map/parallel.hpp"
#include "t1map/relaxometry.hpp"
#include "t1map/render.hpp"
#include "t1map/training.hpp"

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using nlohmann::json;
using namespace t1map;

namespace {

constexpr const char* kVersion = "0.1.0";

json load_json_file(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config " + path.string());
    json j;
    in >> j;
    return j;
}

struct ManifestWriter {
    std::string command;
    fs::path out_dir;
    json fields = json::object();
    std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();

    void finish() const {
        const double wall =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        json manifest = fields;
        manifest["command"] = command;
        manifest["toolkit_version"] = kVersion;
        manifest["wall_time_s"] = wall;
        fs::create_directories(out_dir);
        std::ofstream out(out_dir / "run_manifest.json", std::ios::trunc);
        out << manifest.dump(2) << '\n';
    }
};

MolliSchedule schedule_from_config(const json& config) {
    const std::string scheme = config.value("scheme", "3(3)3(3)5");
    const double rr_ms = config.value("rr_ms", 1000.0);
    std::vector<double> offsets = {100.0, 180.0, 260.0};
    if (config.contains("ti_offsets_ms"))
        offsets = config.at("ti_offsets_ms").get<std::vector<double>>();
    return build_schedule(scheme, rr_ms, offsets);
}

TissueRange range_from_config(const json& j, const TissueRange& fallback) {
    TissueRange r = fallback;
    r.t1_lo = j.value("t1_lo", r.t1_lo);
    r.t1_hi = j.value("t1_hi", r.t1_hi);
    r.k_lo = j.value("k_lo", r.k_lo);
    r.k_hi = j.value("k_hi", r.k_hi);
    r.c_lo = j.value("c_lo", r.c_lo);
    r.c_hi = j.value("c_hi", r.c_hi);
    return r;
}

TrainConfig train_config_from_json(const json& j) {
    TrainConfig c;
    c.lambda = j.value("lambda", c.lambda);
    c.grid_points = j.value("grid_points", c.grid_points);
    c.grid_knee_ms = j.value("grid_knee_ms", c.grid_knee_ms);
    c.grid_frac = j.value("grid_frac", c.grid_frac);
    c.t_max_ms = j.value("t_max_ms", c.t_max_ms);
    c.s_ref = j.value("s_ref", c.s_ref);
    c.t_ref = j.value("t_ref", c.t_ref);
    c.lr = j.value("lr", c.lr);
    c.epochs_pretrain = j.value("epochs_pretrain", c.epochs_pretrain);
    c.epochs_finetune = j.value("epochs_finetune", c.epochs_finetune);
    if (j.contains("subset_sizes"))
        c.subset_sizes = j.at("subset_sizes").get<std::vector<int>>();
    c.seed = j.value("seed", c.seed);
    return c;
}

std::vector<int> parse_subset(const std::string& csv) {
    std::vector<int> subset;
    std::istringstream ss(csv);
    std::string field;
    while (std::getline(ss, field, ',')) subset.push_back(std::stoi(field));
    return subset;
}

void write_map_outputs(const fs::path& out, const io::VolumeMaps& maps,
                       const std::string& regime) {
    io::write_maps(out, maps);
    const double hi = render::default_window_hi(regime);
    for (int z = 0; z < maps.dims[2]; ++z) {
        render::ppm_t1_map(out / ("t1_map_z" + std::to_string(z) + ".ppm"), maps.t1_map,
                           maps.valid_mask, maps.dims, z, 0.0, hi);
        if (!maps.sd_map.empty())
            render::pgm_scalar_map(out / ("sd_map_z" + std::to_string(z) + ".pgm"),
                                   maps.sd_map, maps.dims, z, 0.0, 200.0);
    }
}

int run_simulate(const fs::path& config_path, std::uint64_t seed, const fs::path& out) {
    const json config = load_json_file(config_path);
    const std::string regime = config.value("regime", "native");
    PhantomSpec spec = PhantomSpec::with_regime(regime);
    if (config.contains("dims")) spec.dims = config.at("dims").get<std::array<int, 3>>();
    spec.noise_sigma = config.value("noise_sigma", 0.0);
    spec.noise_relative = config.value("noise_relative", false);
    spec.blood_radius_frac = config.value("blood_radius_frac", spec.blood_radius_frac);
    spec.myo_radius_frac = config.value("myo_radius_frac", spec.myo_radius_frac);
    if (config.contains("myocardium"))
        spec.myocardium = range_from_config(config.at("myocardium"), spec.myocardium);
    if (config.contains("blood")) spec.blood = range_from_config(config.at("blood"), spec.blood);
    spec.schedule = schedule_from_config(config);

    const PhantomVolume volume = synthesize_phantom(spec, seed);
    io::write_volume(out, volume, spec);

    ManifestWriter manifest{"simulate", out};
    manifest.fields["config"] = config_path.string();
    manifest.fields["seed"] = seed;
    manifest.fields["outputs"] = {"manifest.json"};
    manifest.finish();
    std::cout << "simulated " << volume.voxel_count() << " voxels (" << volume.roi_count()
              << " in ROI) -> " << out.string() << '\n';
    return 0;
}

int run_labels(const fs::path& volume_dir, int threads, const fs::path& out) {
    const io::LoadedVolume loaded = io::read_volume(volume_dir);
    const LabelSet labels = fit_labels(loaded.volume, threads);
    io::write_labels(out, loaded.volume, labels);
    ManifestWriter manifest{"labels", out};
    manifest.fields["volume"] = volume_dir.string();
    manifest.finish();
    std::cout << "labelled " << labels.valid_count() << " voxels -> " << out.string() << '\n';
    return 0;
}

int run_fit(const fs::path& volume_dir, const std::string& method,
            const std::string& subset_csv, int threads, const fs::path& out) {
    const io::LoadedVolume loaded = io::read_volume(volume_dir);
    const std::vector<int> subset =
        subset_csv.empty() ? std::vector<int>{} : parse_subset(subset_csv);
    const io::VolumeMaps maps = classical_map_volume(loaded.volume, method, subset, threads);
    write_map_outputs(out, maps, loaded.volume.regime);
    ManifestWriter manifest{"fit", out};
    manifest.fields["volume"] = volume_dir.string();
    manifest.fields["method"] = method;
    manifest.finish();
    std::cout << "fit (" << method << ") -> " << out.string() << '\n';
    return 0;
}

int run_train(const fs::path& volume_dir, const fs::path& labels_dir,
              const fs::path& config_path, const std::string& model_kind,
              std::optional<std::uint64_t> seed_flag, int threads, const fs::path& out) {
    const io::LoadedVolume loaded = io::read_volume(volume_dir);
    const LabelSet labels = io::read_labels(labels_dir, loaded.volume);
    json config_json = config_path.empty() ? json::object() : load_json_file(config_path);
    TrainConfig config = train_config_from_json(config_json);
    if (seed_flag) config.seed = *seed_flag;

    io::ModelCheckpoint ckpt;
    std::vector<TraceRow> trace;
    if (model_kind == "lstm_ode") {
        LstmOdeConfig mc;
        if (config_json.contains("model")) {
            const json& jm = config_json.at("model");
            mc.d_emb = jm.value("d_emb", mc.d_emb);
            mc.hidden = jm.value("hidden", mc.hidden);
            mc.dyn_hidden = jm.value("dyn_hidden", mc.dyn_hidden);
            mc.dec_hidden = jm.value("dec_hidden", mc.dec_hidden);
            mc.rtol = jm.value("rtol", mc.rtol);
            mc.atol = jm.value("atol", mc.atol);
        }
        LstmOdeModel model = LstmOdeModel::init(mc, config.seed);
        trace = train(model, loaded.volume, labels, config, threads);
        ckpt = std::move(model);
    } else if (model_kind == "fcnn_direct" || model_kind == "fcnn_physics") {
        FcnnConfig fc;
        fc.arity = config.subset_sizes.empty() ? 5 : config.subset_sizes.front();
        if (config_json.contains("model")) {
            const json& jm = config_json.at("model");
            fc.arity = jm.value("arity", fc.arity);
            if (jm.contains("hidden")) fc.hidden = jm.at("hidden").get<std::vector<int>>();
        }
        FcnnModel model = FcnnModel::init(
            fc, model_kind == "fcnn_direct" ? FcnnHead::DirectT1 : FcnnHead::PhysicsParams,
            config.seed);
        trace = train(model, loaded.volume, labels, config, threads);
        ckpt = std::move(model);
    } else {
        throw std::runtime_error("unknown model kind '" + model_kind + "'");
    }

    const json meta = {{"lambda", config.lambda},     {"lr", config.lr},
                       {"epochs_pretrain", config.epochs_pretrain},
                       {"epochs_finetune", config.epochs_finetune},
                       {"subset_sizes", config.subset_sizes},
                       {"seed", config.seed}};
    io::write_checkpoint(out, ckpt, meta.dump());
    io::write_loss_csv(out / "loss.csv", trace);
    render::svg_loss_trace(out / "loss.svg", trace);

    ManifestWriter manifest{"train", out};
    manifest.fields["volume"] = volume_dir.string();
    manifest.fields["labels"] = labels_dir.string();
    manifest.fields["config"] = config_path.string();
    manifest.fields["model"] = model_kind;
    manifest.fields["seed"] = config.seed;
    manifest.finish();
    std::cout << "trained " << model_kind << " for " << trace.size() << " epochs, final loss "
              << (trace.empty() ? 0.0 : trace.back().l_total) << " -> " << out.string()
              << '\n';
    return 0;
}

int run_map(const fs::path& ckpt_dir, const fs::path& volume_dir, int subset_size,
            const std::string& subset_csv, std::uint64_t seed, int threads,
            const fs::path& out) {
    const io::LoadedVolume loaded = io::read_volume(volume_dir);
    const io::ModelCheckpoint ckpt = io::read_checkpoint(ckpt_dir);

    std::vector<int> subset;
    if (!subset_csv.empty()) {
        subset = parse_subset(subset_csv);
    } else if (subset_size > 0) {
        if (subset_size > loaded.volume.schedule.size())
            throw std::runtime_error("subset size exceeds the schedule length");
        Rng rng = Rng::derive(seed, 0x6d6170ULL);
        subset = sample_subset(loaded.volume.schedule, subset_size, rng);
    }
    const MapResult result = map_volume(ckpt, loaded.volume, subset, threads);

    io::VolumeMaps maps = result.to_maps(io::model_kind(ckpt));
    // residual-based SD maps need more samples than parameters
    const int n = subset.empty() ? loaded.volume.schedule.size()
                                 : static_cast<int>(subset.size());
    if (n > 3 && io::model_kind(ckpt) != "fcnn_direct") {
        maps.sd_map.assign(maps.t1_map.size(), 0.0);
        const Eigen::VectorXd times = loaded.volume.schedule.times();
        for (size_t v = 0; v < maps.t1_map.size(); ++v) {
            if (!maps.valid_mask[v]) continue;
            Eigen::VectorXd t(n);
            Eigen::VectorXd s(n);
            for (int i = 0; i < n; ++i) {
                const int idx = subset.empty() ? i : subset[i];
                t[i] = times[idx];
                const double mag =
                    loaded.volume.magnitude_signals(static_cast<long>(v), idx);
                s[i] = i < maps.null_index_map[v] ? -mag : mag;
            }
            const RelaxationParams params{maps.c_map[v], maps.k_map[v], maps.t1_star_map[v]};
            const double rss = (signal(params, t) - s).squaredNorm();
            maps.sd_map[v] = fitting_sd(params, t, rss, n).value_or(0.0);
        }
    }
    write_map_outputs(out, maps, loaded.volume.regime);

    ManifestWriter manifest{"map", out};
    manifest.fields["checkpoint"] = ckpt_dir.string();
    manifest.fields["volume"] = volume_dir.string();
    manifest.fields["subset"] = subset;
    manifest.fields["seed"] = seed;
    manifest.finish();
    std::cout << "mapped " << loaded.volume.tissue_count() << " tissue voxels -> " << out.string()
              << '\n';
    return 0;
}

int run_evaluate(const fs::path& volume_dir, const std::vector<std::string>& methods,
                 int n_runs, const std::string& sizes_csv, std::uint64_t seed, int threads,
                 const fs::path& out) {
    const io::LoadedVolume loaded = io::read_volume(volume_dir);
    const std::vector<int> sizes = parse_subset(sizes_csv);
    if (sizes.empty()) throw std::runtime_error("no subset sizes given");

    EvalReport report;
    for (const std::string& spec : methods) {
        std::string name = spec;
        Estimator estimator;
        if (spec == "lm") {
            estimator = make_lm_estimator();
        } else if (spec == "trf") {
            estimator = make_trf_estimator();
        } else {
            const io::ModelCheckpoint ckpt = io::read_checkpoint(spec);
            name = io::model_kind(ckpt);
            estimator = make_model_estimator(ckpt);
        }
        for (int size : sizes)
            report.rows.push_back(
                evaluate_method(name, estimator, loaded.volume, n_runs, size, seed, threads));
    }

    fs::create_directories(out);
    write_report_csv(out / "report.csv", report);
    const std::string table = render_report_table(report);
    std::ofstream table_file(out / "report.txt", std::ios::trunc);
    table_file << table;
    std::cout << table;

    ManifestWriter manifest{"evaluate", out};
    manifest.fields["volume"] = volume_dir.string();
    manifest.fields["methods"] = methods;
    manifest.fields["n_runs"] = n_runs;
    manifest.fields["subset_sizes"] = sizes;
    manifest.fields["seed"] = seed;
    manifest.finish();
    return 0;
}

int run_plot(const fs::path& fit_dir, const fs::path& volume_dir,
             const std::string& voxels_csv, const fs::path& loss_csv, const fs::path& out) {
    fs::create_directories(out);
    int emitted = 0;
    if (!loss_csv.empty()) {
        const auto trace = io::read_loss_csv(loss_csv);
        render::svg_loss_trace(out / "loss.svg", trace);
        ++emitted;
    }
    if (!fit_dir.empty()) {
        if (volume_dir.empty())
            throw std::runtime_error("--volume is required with --fit");
        const io::LoadedVolume loaded = io::read_volume(volume_dir);
        const io::VolumeMaps maps = io::read_maps(fit_dir);
        for (const std::string& field : {std::string(voxels_csv)}) {
            if (field.empty()) break;
            for (int v : parse_subset(field)) {
                if (v < 0 || v >= loaded.volume.voxel_count())
                    throw std::runtime_error("voxel index out of range");
                const RelaxationParams params{maps.c_map[v], maps.k_map[v],
                                              maps.t1_star_map[v]};
                VoxelSeries series = loaded.volume.voxel_series(v, Polarity::Magnitude);
                series = apply_polarity(series, maps.null_index_map[v]);
                render::svg_relaxation_curve(
                    out / ("voxel_" + std::to_string(v) + ".svg"), series, params,
                    "voxel " + std::to_string(v) + "  T1 = " +
                        std::to_string(maps.t1_map[v]) + " ms");
                ++emitted;
            }
        }
    }
    if (emitted == 0) throw std::runtime_error("nothing to plot (pass --fit or --loss)");

    ManifestWriter manifest{"plot", out};
    manifest.fields["fit"] = fit_dir.string();
    manifest.fields["volume"] = volume_dir.string();
    manifest.fields["loss"] = loss_csv.string();
    manifest.finish();
    std::cout << "wrote " << emitted << " plots -> " << out.string() << '\n';
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"voxel-wise cardiac T1 mapping toolkit"};
    app.require_subcommand(1);
    app.fallthrough();

    std::uint64_t seed = 0;
    int threads = hardware_threads();
    app.add_option("--seed", seed, "root RNG seed")->capture_default_str();
    app.add_option("--threads", threads, "worker threads (1 = serial reference)")
        ->capture_default_str();

    std::string config_path, volume_dir, labels_dir, ckpt_dir, out_dir;
    std::string method = "lm", model_kind = "lstm_ode", subset_csv, sizes_csv = "3,4,5";
    std::string methods_csv = "lm", voxels_csv, fit_dir, loss_csv;
    int subset_size = 0, n_runs = 100;
    bool seed_given = false;

    CLI::App* simulate = app.add_subcommand("simulate", "synthesize a phantom volume");
    simulate->add_option("--config", config_path, "phantom config (json)")->required();
    simulate->add_option("--out", out_dir, "output directory")->required();

    CLI::App* labels = app.add_subcommand("labels", "fit LM ground-truth labels");
    labels->add_option("--volume", volume_dir)->required();
    labels->add_option("--out", out_dir)->required();

    CLI::App* fit = app.add_subcommand("fit", "classical voxel-wise mapping");
    fit->add_option("--volume", volume_dir)->required();
    fit->add_option("--method", method, "lm | trf")->capture_default_str();
    fit->add_option("--subset", subset_csv, "schedule indices, e.g. 0,3,8");
    fit->add_option("--out", out_dir)->required();

    CLI::App* train_cmd = app.add_subcommand("train", "pretrain + fine-tune an estimator");
    train_cmd->add_option("--volume", volume_dir)->required();
    train_cmd->add_option("--labels", labels_dir)->required();
    train_cmd->add_option("--config", config_path, "train config (json)");
    train_cmd->add_option("--model", model_kind, "lstm_ode | fcnn_direct | fcnn_physics")
        ->capture_default_str();
    train_cmd->add_option("--out", out_dir)->required();
    train_cmd->add_flag("--seed-override", seed_given,
                        "override the config seed with --seed");

    CLI::App* map_cmd = app.add_subcommand("map", "polarity-corrected inference");
    map_cmd->add_option("--checkpoint", ckpt_dir)->required();
    map_cmd->add_option("--volume", volume_dir)->required();
    map_cmd->add_option("--subset-size", subset_size, "random phase-covering subset size");
    map_cmd->add_option("--subset", subset_csv, "explicit schedule indices");
    map_cmd->add_option("--out", out_dir)->required();

    CLI::App* evaluate = app.add_subcommand("evaluate", "Monte Carlo bias/SD evaluation");
    evaluate->add_option("--volume", volume_dir)->required();
    evaluate->add_option("--methods", methods_csv,
                         "comma list: lm, trf, or checkpoint dirs");
    evaluate->add_option("--n-runs", n_runs)->capture_default_str();
    evaluate->add_option("--subset-sizes", sizes_csv)->capture_default_str();
    evaluate->add_option("--out", out_dir)->required();

    CLI::App* plot = app.add_subcommand("plot", "relaxation-curve and loss-trace SVGs");
    plot->add_option("--fit", fit_dir, "fit/map output directory");
    plot->add_option("--volume", volume_dir);
    plot->add_option("--voxels", voxels_csv, "voxel indices, e.g. 12,40");
    plot->add_option("--loss", loss_csv, "loss csv to plot");
    plot->add_option("--out", out_dir)->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (simulate->parsed()) return run_simulate(config_path, seed, out_dir);
        if (labels->parsed()) return run_labels(volume_dir, threads, out_dir);
        if (fit->parsed()) return run_fit(volume_dir, method, subset_csv, threads, out_dir);
        if (train_cmd->parsed())
            return run_train(volume_dir, labels_dir, config_path, model_kind,
                             seed_given ? std::optional<std::uint64_t>(seed) : std::nullopt,
                             threads, out_dir);
        if (map_cmd->parsed())
            return run_map(ckpt_dir, volume_dir, subset_size, subset_csv, seed, threads,
                           out_dir);
        if (evaluate->parsed()) {
            std::vector<std::string> methods;
            std::istringstream ss(methods_csv);
            std::string field;
            while (std::getline(ss, field, ',')) methods.push_back(field);
            return run_evaluate(volume_dir, methods, n_runs, sizes_csv, seed, threads,
                                out_dir);
        }
        if (plot->parsed()) return run_plot(fit_dir, volume_dir, voxels_csv, loss_csv, out_dir);
    } catch (const std::exception& e) {
        std::cerr << "t1map: " << e.what() << '\n';
        return 1;
    }
    return 1;
}
