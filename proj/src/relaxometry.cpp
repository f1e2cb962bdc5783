#include "t1map/relaxometry.hpp"

#include "t1map/rng.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace t1map {

double signal(const RelaxationParams& p, double t_ms) {
    return p.c * (1.0 - p.k * std::exp(-t_ms / p.t1_star));
}

Eigen::VectorXd signal(const RelaxationParams& p,
                       const Eigen::Ref<const Eigen::VectorXd>& t_ms) {
    return p.c * (1.0 - p.k * (-t_ms.array() / p.t1_star).exp());
}

double signal_derivative(const RelaxationParams& p, double t_ms) {
    return p.c * p.k / p.t1_star * std::exp(-t_ms / p.t1_star);
}

Eigen::VectorXd signal_derivative(const RelaxationParams& p,
                                  const Eigen::Ref<const Eigen::VectorXd>& t_ms) {
    return p.c * p.k / p.t1_star * (-t_ms.array() / p.t1_star).exp();
}

double t1_from_params(const RelaxationParams& p) { return p.t1_star * (p.k - 1.0); }

double null_time(const RelaxationParams& p) { return p.t1_star * std::log(p.k); }

namespace {

struct SchemeGroup {
    int count = 0;
    int rest_beats = 0; // heartbeats of rest after this group (0 for last)
};

// Grammar: COUNT ( '(' REST ')' COUNT )*
std::vector<SchemeGroup> parse_scheme(const std::string& scheme) {
    std::vector<SchemeGroup> groups;
    size_t i = 0;
    auto read_int = [&](const char* what) {
        size_t start = i;
        while (i < scheme.size() && std::isdigit(static_cast<unsigned char>(scheme[i]))) ++i;
        if (i == start)
            throw std::invalid_argument("malformed scheme '" + scheme + "': expected " +
                                        std::string(what));
        return std::stoi(scheme.substr(start, i - start));
    };
    while (true) {
        SchemeGroup g;
        g.count = read_int("image count");
        if (g.count <= 0)
            throw std::invalid_argument("malformed scheme '" + scheme + "': zero image count");
        if (i < scheme.size() && scheme[i] == '(') {
            ++i;
            g.rest_beats = read_int("rest count");
            if (i >= scheme.size() || scheme[i] != ')')
                throw std::invalid_argument("malformed scheme '" + scheme + "': missing ')'");
            ++i;
            groups.push_back(g);
            continue; // another group must follow
        }
        groups.push_back(g);
        break;
    }
    if (i != scheme.size())
        throw std::invalid_argument("malformed scheme '" + scheme + "': trailing characters");
    return groups;
}

} // namespace

MolliSchedule build_schedule(const std::string& scheme, double rr_ms,
                             const std::vector<double>& ti_offsets_ms) {
    if (!(rr_ms > 0.0)) throw std::invalid_argument("rr_ms must be positive");
    const auto groups = parse_scheme(scheme);
    if (ti_offsets_ms.size() != groups.size())
        throw std::invalid_argument("expected one TI offset per experiment (" +
                                    std::to_string(groups.size()) + ")");

    std::vector<std::pair<double, int>> entries; // (time, experiment)
    for (size_t g = 0; g < groups.size(); ++g)
        for (int j = 0; j < groups[g].count; ++j)
            entries.emplace_back(ti_offsets_ms[g] + j * rr_ms, static_cast<int>(g));
    std::stable_sort(entries.begin(), entries.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });
    for (size_t i = 1; i < entries.size(); ++i)
        if (entries[i].first - entries[i - 1].first < 1e-9)
            throw std::invalid_argument("duplicate inversion time " +
                                        std::to_string(entries[i].first) + " ms");

    MolliSchedule sched;
    sched.scheme = scheme;
    sched.rr_ms = rr_ms;
    sched.ti_offsets_ms = ti_offsets_ms;
    sched.times_ms.reserve(entries.size());
    sched.ll_labels.reserve(entries.size());
    for (const auto& [t, g] : entries) {
        sched.times_ms.push_back(t);
        sched.ll_labels.push_back(g);
    }
    return sched;
}

VoxelSeries magnitude_view(const VoxelSeries& series) {
    if (series.polarity == Polarity::Magnitude)
        throw std::invalid_argument("series is already a magnitude view");
    VoxelSeries out = series;
    out.signals = series.signals.cwiseAbs();
    out.polarity = Polarity::Magnitude;
    return out;
}

VoxelSeries apply_polarity(const VoxelSeries& magnitude, int null_index) {
    if (magnitude.polarity != Polarity::Magnitude)
        throw std::invalid_argument("apply_polarity expects a magnitude series");
    if (null_index < 0 || null_index > magnitude.size())
        throw std::invalid_argument("null_index out of range");
    VoxelSeries out = magnitude;
    out.signals.head(null_index) = -magnitude.signals.head(null_index);
    out.polarity = Polarity::Signed;
    return out;
}

PhantomSpec PhantomSpec::with_regime(const std::string& regime) {
    PhantomSpec spec;
    spec.regime = regime;
    if (regime == "native") {
        spec.myocardium = TissueRange{1100.0, 1400.0, 1.7, 2.1, 0.7, 1.3};
        spec.blood = TissueRange{1700.0, 2000.0, 1.7, 2.1, 0.7, 1.3};
    } else if (regime == "post_gd") {
        spec.myocardium = TissueRange{350.0, 650.0, 1.7, 2.1, 0.7, 1.3};
        spec.blood = TissueRange{200.0, 400.0, 1.7, 2.1, 0.7, 1.3};
    } else {
        throw std::invalid_argument("unknown regime '" + regime + "'");
    }
    return spec;
}

int PhantomVolume::roi_count() const {
    return static_cast<int>(std::count(roi_mask.begin(), roi_mask.end(), std::uint8_t{1}));
}

int PhantomVolume::tissue_count() const {
    return static_cast<int>(std::count_if(tissue.begin(), tissue.end(),
                                          [](Tissue t) { return t != Tissue::Background; }));
}

VoxelSeries PhantomVolume::voxel_series(int voxel, Polarity polarity) const {
    VoxelSeries s;
    s.times_ms = schedule.times();
    s.polarity = polarity;
    s.signals = (polarity == Polarity::Signed) ? signed_signals.row(voxel).transpose()
                                               : magnitude_signals.row(voxel).transpose();
    return s;
}

namespace {

Tissue layout_tissue(const PhantomSpec& spec, int x, int y) {
    const double cx = 0.5 * (spec.dims[0] - 1);
    const double cy = 0.5 * (spec.dims[1] - 1);
    const double half = 0.5 * std::max(spec.dims[0], spec.dims[1]);
    const double r = std::hypot(x - cx, y - cy) / half;
    if (r < spec.blood_radius_frac) return Tissue::Blood;
    if (r < spec.myo_radius_frac) return Tissue::Myocardium;
    return Tissue::Background;
}

RelaxationParams draw_params(const TissueRange& range, Rng& rng) {
    RelaxationParams p;
    const double t1 = rng.uniform(range.t1_lo, range.t1_hi);
    p.k = rng.uniform(range.k_lo, range.k_hi);
    p.c = rng.uniform(range.c_lo, range.c_hi);
    p.t1_star = t1 / (p.k - 1.0);
    return p;
}

} // namespace

PhantomVolume synthesize_phantom(const PhantomSpec& spec, std::uint64_t seed) {
    if (spec.dims[0] < 1 || spec.dims[1] < 1 || spec.dims[2] < 1)
        throw std::invalid_argument("phantom dims must be >= 1");
    if (spec.noise_sigma < 0.0) throw std::invalid_argument("noise_sigma must be >= 0");
    if (spec.schedule.size() == 0) throw std::invalid_argument("phantom needs a schedule");

    PhantomVolume vol;
    vol.dims = spec.dims;
    vol.schedule = spec.schedule;
    vol.noise_sigma = spec.noise_sigma;
    vol.seed = seed;
    vol.regime = spec.regime;

    const int nvox = vol.voxel_count();
    const int ntime = spec.schedule.size();
    vol.truth.resize(nvox);
    vol.tissue.resize(nvox);
    vol.roi_mask.resize(nvox);
    vol.signed_signals.resize(nvox, ntime);
    vol.magnitude_signals.resize(nvox, ntime);

    const Eigen::VectorXd times = spec.schedule.times();
    bool any_tissue = false;
    for (int z = 0; z < spec.dims[2]; ++z) {
        for (int y = 0; y < spec.dims[1]; ++y) {
            for (int x = 0; x < spec.dims[0]; ++x) {
                const int v = x + spec.dims[0] * (y + spec.dims[1] * z);
                const Tissue tissue = layout_tissue(spec, x, y);
                vol.tissue[v] = tissue;
                // metrics follow the myocardial ROI; blood stays in the FoV
                vol.roi_mask[v] = tissue == Tissue::Myocardium ? 1 : 0;
                Rng rng = Rng::derive(seed, static_cast<std::uint64_t>(v));
                if (tissue == Tissue::Background) {
                    vol.truth[v] = RelaxationParams{};
                    vol.signed_signals.row(v).setZero();
                    vol.magnitude_signals.row(v).setZero();
                    continue;
                }
                any_tissue = true;
                const TissueRange& range =
                    tissue == Tissue::Blood ? spec.blood : spec.myocardium;
                const RelaxationParams p = draw_params(range, rng);
                vol.truth[v] = p;
                Eigen::VectorXd s = signal(p, times);
                const double sigma =
                    spec.noise_relative ? spec.noise_sigma * p.c : spec.noise_sigma;
                if (sigma > 0.0)
                    for (int i = 0; i < ntime; ++i) s[i] += sigma * rng.normal();
                vol.signed_signals.row(v) = s.transpose();
                vol.magnitude_signals.row(v) = s.cwiseAbs().transpose();
            }
        }
    }
    if (!any_tissue) throw std::invalid_argument("phantom layout contains no tissue voxels");
    return vol;
}

} // namespace t1map
