#include "t1map/render.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace t1map::render {

namespace {

constexpr int kWidth = 640;
constexpr int kHeight = 420;
constexpr int kMarginLeft = 60, kMarginRight = 20, kMarginTop = 30, kMarginBottom = 45;

struct Axes {
    double x_lo, x_hi, y_lo, y_hi;

    double px(double x) const {
        return kMarginLeft + (x - x_lo) / (x_hi - x_lo) * (kWidth - kMarginLeft - kMarginRight);
    }
    double py(double y) const {
        return kHeight - kMarginBottom -
               (y - y_lo) / (y_hi - y_lo) * (kHeight - kMarginTop - kMarginBottom);
    }
};

void svg_header(std::ostream& out) {
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\""
        << kHeight << "\" viewBox=\"0 0 " << kWidth << ' ' << kHeight << "\">\n"
        << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
}

void svg_axes(std::ostream& out, const Axes& ax, const std::string& x_label,
              const std::string& y_label) {
    out << "<line x1=\"" << ax.px(ax.x_lo) << "\" y1=\"" << ax.py(ax.y_lo) << "\" x2=\""
        << ax.px(ax.x_hi) << "\" y2=\"" << ax.py(ax.y_lo)
        << "\" stroke=\"black\" stroke-width=\"1\"/>\n";
    out << "<line x1=\"" << ax.px(ax.x_lo) << "\" y1=\"" << ax.py(ax.y_lo) << "\" x2=\""
        << ax.px(ax.x_lo) << "\" y2=\"" << ax.py(ax.y_hi)
        << "\" stroke=\"black\" stroke-width=\"1\"/>\n";
    out << "<text x=\"" << (kWidth / 2) << "\" y=\"" << (kHeight - 10)
        << "\" font-size=\"13\" text-anchor=\"middle\">" << x_label << "</text>\n";
    out << "<text x=\"15\" y=\"" << (kHeight / 2)
        << "\" font-size=\"13\" text-anchor=\"middle\" transform=\"rotate(-90 15 "
        << (kHeight / 2) << ")\">" << y_label << "</text>\n";
    for (int i = 0; i <= 4; ++i) {
        const double x = ax.x_lo + (ax.x_hi - ax.x_lo) * i / 4.0;
        const double y = ax.y_lo + (ax.y_hi - ax.y_lo) * i / 4.0;
        out << "<text x=\"" << ax.px(x) << "\" y=\"" << (ax.py(ax.y_lo) + 16)
            << "\" font-size=\"11\" text-anchor=\"middle\">" << std::round(x * 100) / 100
            << "</text>\n";
        out << "<text x=\"" << (ax.px(ax.x_lo) - 6) << "\" y=\"" << (ax.py(y) + 4)
            << "\" font-size=\"11\" text-anchor=\"end\">" << std::round(y * 100) / 100
            << "</text>\n";
    }
}

} // namespace

void svg_relaxation_curve(const fs::path& path, const VoxelSeries& series,
                          const RelaxationParams& params, const std::string& title) {
    if (series.size() == 0) throw std::invalid_argument("empty series");
    const double t_max = series.times_ms.maxCoeff() * 1.05;
    double y_lo = std::min(series.signals.minCoeff(), -params.c * (params.k - 1.0));
    double y_hi = std::max(series.signals.maxCoeff(), params.c);
    const double pad = 0.1 * (y_hi - y_lo + 1e-12);
    Axes ax{0.0, t_max, y_lo - pad, y_hi + pad};

    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    svg_header(out);
    svg_axes(out, ax, "inversion time (ms)", "signal");
    out << "<text x=\"" << (kWidth / 2)
        << "\" y=\"18\" font-size=\"14\" text-anchor=\"middle\">" << title << "</text>\n";

    // zero line and null-crossing marker
    out << "<line x1=\"" << ax.px(0) << "\" y1=\"" << ax.py(0) << "\" x2=\"" << ax.px(t_max)
        << "\" y2=\"" << ax.py(0)
        << "\" stroke=\"#bbbbbb\" stroke-width=\"0.7\" stroke-dasharray=\"2,3\"/>\n";
    const double t_null = null_time(params);
    if (t_null > 0.0 && t_null < t_max)
        out << "<line x1=\"" << ax.px(t_null) << "\" y1=\"" << ax.py(ax.y_lo) << "\" x2=\""
            << ax.px(t_null) << "\" y2=\"" << ax.py(ax.y_hi)
            << "\" stroke=\"#cc3333\" stroke-width=\"1\" stroke-dasharray=\"5,4\"/>\n";

    // fitted curve
    out << "<path fill=\"none\" stroke=\"#2266cc\" stroke-width=\"1.5\" d=\"";
    const int samples = 200;
    for (int i = 0; i <= samples; ++i) {
        const double t = t_max * i / samples;
        out << (i == 0 ? 'M' : 'L') << ax.px(t) << ' ' << ax.py(signal(params, t)) << ' ';
    }
    out << "\"/>\n";

    for (int i = 0; i < series.size(); ++i)
        out << "<circle cx=\"" << ax.px(series.times_ms[i]) << "\" cy=\""
            << ax.py(series.signals[i]) << "\" r=\"3.5\" fill=\"#222222\"/>\n";
    out << "</svg>\n";
}

void svg_loss_trace(const fs::path& path, std::span<const TraceRow> trace) {
    if (trace.empty()) throw std::invalid_argument("empty loss trace");
    double y_hi = 0.0;
    for (const TraceRow& row : trace) y_hi = std::max({y_hi, row.l_total});
    Axes ax{0.0, static_cast<double>(trace.back().epoch) + 1e-9, 0.0, y_hi * 1.05 + 1e-12};

    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    svg_header(out);
    svg_axes(out, ax, "epoch", "loss");

    const std::array<std::pair<const char*, double TraceRow::*>, 3> lines = {
        std::pair{"#cc3333", &TraceRow::l_t1},
        std::pair{"#33aa55", &TraceRow::l_physics},
        std::pair{"#2266cc", &TraceRow::l_total}};
    const std::array<const char*, 3> names = {"l_t1", "l_physics", "l_total"};
    for (size_t li = 0; li < lines.size(); ++li) {
        out << "<polyline fill=\"none\" stroke=\"" << lines[li].first
            << "\" stroke-width=\"1.5\" points=\"";
        for (const TraceRow& row : trace)
            out << ax.px(row.epoch) << ',' << ax.py(row.*(lines[li].second)) << ' ';
        out << "\"/>\n";
        out << "<text x=\"" << (kWidth - 110) << "\" y=\"" << (40 + 16 * li)
            << "\" font-size=\"12\" fill=\"" << lines[li].first << "\">" << names[li]
            << "</text>\n";
    }
    out << "</svg>\n";
}

namespace {

std::array<std::uint8_t, 3> colormap(double u) {
    // dark blue -> cyan -> yellow -> red
    static const std::array<std::array<double, 3>, 5> stops = {{{0.05, 0.03, 0.35},
                                                                {0.05, 0.35, 0.85},
                                                                {0.05, 0.85, 0.85},
                                                                {0.95, 0.85, 0.10},
                                                                {0.85, 0.10, 0.10}}};
    u = std::clamp(u, 0.0, 1.0);
    const double pos = u * (stops.size() - 1);
    const int i = std::min(static_cast<int>(pos), static_cast<int>(stops.size()) - 2);
    const double f = pos - i;
    std::array<std::uint8_t, 3> rgb;
    for (int ch = 0; ch < 3; ++ch)
        rgb[ch] = static_cast<std::uint8_t>(
            std::round(255.0 * (stops[i][ch] * (1.0 - f) + stops[i + 1][ch] * f)));
    return rgb;
}

void check_slice(const std::array<int, 3>& dims, int z) {
    if (z < 0 || z >= dims[2]) throw std::invalid_argument("z slice out of range");
}

} // namespace

void ppm_t1_map(const fs::path& path, std::span<const double> t1_map,
                std::span<const std::uint8_t> valid_mask, const std::array<int, 3>& dims,
                int z_slice, double window_lo, double window_hi) {
    check_slice(dims, z_slice);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << "P6\n" << dims[0] << ' ' << dims[1] << "\n255\n";
    for (int y = 0; y < dims[1]; ++y)
        for (int x = 0; x < dims[0]; ++x) {
            const std::size_t v = x + static_cast<std::size_t>(dims[0]) * (y + dims[1] * z_slice);
            std::array<std::uint8_t, 3> rgb = {0, 0, 0};
            if (valid_mask[v])
                rgb = colormap((t1_map[v] - window_lo) / (window_hi - window_lo));
            out.write(reinterpret_cast<const char*>(rgb.data()), 3);
        }
}

void pgm_scalar_map(const fs::path& path, std::span<const double> values,
                    const std::array<int, 3>& dims, int z_slice, double lo, double hi) {
    check_slice(dims, z_slice);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << "P5\n" << dims[0] << ' ' << dims[1] << "\n255\n";
    for (int y = 0; y < dims[1]; ++y)
        for (int x = 0; x < dims[0]; ++x) {
            const std::size_t v = x + static_cast<std::size_t>(dims[0]) * (y + dims[1] * z_slice);
            const double u = std::clamp((values[v] - lo) / (hi - lo + 1e-300), 0.0, 1.0);
            const std::uint8_t g = static_cast<std::uint8_t>(std::round(255.0 * u));
            out.write(reinterpret_cast<const char*>(&g), 1);
        }
}

double default_window_hi(const std::string& regime) {
    return regime == "post_gd" ? 800.0 : 2000.0;
}

} // namespace t1map::render
