#include "icedepth/modes.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "icedepth/error.hpp"
#include "parallel.hpp"
#include "text_util.hpp"
#include "tridiag.hpp"

namespace icedepth {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

std::string fmt(double v) { return detail::format_double(v); }

// Samples with |psi| below this fraction of the peak carry no sign information.
constexpr double kSignFloor = 1e-8;

int count_sign_changes(const std::vector<double>& psi) {
    double peak = 0.0;
    for (double v : psi) peak = std::max(peak, std::abs(v));
    const double floor = kSignFloor * peak;
    int changes = 0;
    int last = 0;
    for (double v : psi) {
        if (std::abs(v) <= floor) continue;
        const int s = v > 0.0 ? 1 : -1;
        if (last != 0 && s != last) ++changes;
        last = s;
    }
    return changes;
}

std::size_t band_size(double f_lo, double f_hi, double df) {
    if (!(f_lo > 0.0) || !(f_hi > f_lo) || !(df > 0.0)) {
        throw InvalidInput("band must satisfy 0 < fLo < fHi and df > 0 (got " + fmt(f_lo) + ", " + fmt(f_hi) +
                           ", " + fmt(df) + ")");
    }
    return static_cast<std::size_t>(std::floor((f_hi - f_lo) / df + 1e-9)) + 1;
}

}  // namespace

double Mode::phase_speed() const { return kTwoPi * frequency / k; }

double Mode::value_at(double z) const {
    if (eigenfunction.empty() || z < 0.0) return 0.0;
    const double u = z / dz;
    const auto last = eigenfunction.size() - 1;
    if (u >= static_cast<double>(last)) return u == static_cast<double>(last) ? eigenfunction[last] : 0.0;
    const auto i = static_cast<std::size_t>(u);
    const double w = u - static_cast<double>(i);
    return (1.0 - w) * eigenfunction[i] + w * eigenfunction[i + 1];
}

int Mode::zero_crossings() const { return count_sign_changes(eigenfunction); }

const Mode* ModeSet::find(int index) const {
    if (index < 1 || static_cast<std::size_t>(index) > modes.size()) return nullptr;
    return &modes[static_cast<std::size_t>(index - 1)];
}

ModeSet solve_modes(const Environment& env, double frequency, const ModeSolverConfig& config) {
    if (!(frequency > 0.0) || !std::isfinite(frequency)) {
        throw InvalidInput("solve_modes: frequency must be positive (got " + fmt(frequency) + ")");
    }
    if (config.nz < 200) throw InvalidInput("solve_modes: nz must be >= 200 (got " + std::to_string(config.nz) + ")");
    if (config.max_modes < 1) throw InvalidInput("solve_modes: maxModes must be >= 1");

    const double depth = env.depth_at(config.receiver_range);
    const auto nz = static_cast<std::size_t>(config.nz);
    const double h = depth / static_cast<double>(nz);
    const double omega = kTwoPi * frequency;
    const double rho = env.water_density();

    ModeSet out;
    out.frequency = frequency;
    out.grid.resize(nz + 1);
    for (std::size_t i = 0; i <= nz; ++i) out.grid[i] = h * static_cast<double>(i);

    // Interior unknowns z_1 .. z_{nz-1}; psi(0) = psi(D) = 0.
    const std::size_t n = nz - 1;
    detail::SymTridiag t;
    t.off = 1.0 / (h * h);
    t.diag.resize(n);
    std::vector<double> inv_c2(n);
    double c_min = env.speed_at(0.0);
    for (std::size_t j = 0; j < n; ++j) {
        const double c = env.speed_at(out.grid[j + 1]);
        c_min = std::min(c_min, c);
        inv_c2[j] = 1.0 / (c * c);
        t.diag[j] = -2.0 * t.off + omega * omega * inv_c2[j];
    }
    c_min = std::min(c_min, env.speed_at(depth));

    // Trapped window in lambda = k^2.
    double c_hi = config.max_phase_speed;
    if (c_hi <= 0.0) {
        const double c_bottom = env.speed_at(depth);
        c_hi = c_bottom > c_min ? c_bottom : 0.0;
    }
    const double lam_lo = c_hi > 0.0 ? (omega / c_hi) * (omega / c_hi) : 0.0;
    double lam_hi = -1e300;
    for (double d : t.diag) lam_hi = std::max(lam_hi, d);
    lam_hi += 2.0 * t.off + 1e-12 * std::abs(lam_hi);

    const std::size_t below = detail::sturm_count(t, lam_lo);
    const std::size_t available = n - below;
    const std::size_t count = std::min<std::size_t>(available, static_cast<std::size_t>(config.max_modes));
    if (count == 0) return out;

    std::vector<std::vector<double>> vecs;
    vecs.reserve(count);
    for (std::size_t m = 0; m < count; ++m) {
        const std::size_t j = n - 1 - m;  // ascending index of the m-th largest eigenvalue
        const double lambda = detail::bisect_eigenvalue(t, j, lam_lo, lam_hi);
        if (!(lambda > 0.0)) {
            throw NumericalError("solve_modes: non-positive eigenvalue for mode " + std::to_string(m + 1) + " at " +
                                 fmt(frequency) + " Hz");
        }
        std::vector<double> v = detail::inverse_iteration(t, lambda, vecs);

        Mode mode;
        mode.index = static_cast<int>(m) + 1;
        mode.frequency = frequency;
        mode.k = std::sqrt(lambda);
        mode.dz = h;
        mode.eigenfunction.assign(nz + 1, 0.0);

        double peak = 0.0;
        for (double x : v) peak = std::max(peak, std::abs(x));
        double sign = 1.0;
        for (double x : v) {
            if (std::abs(x) > 1e-3 * peak) {
                sign = x > 0.0 ? 1.0 : -1.0;
                break;
            }
        }
        double s2 = 0.0;
        double s2c = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            s2 += v[i] * v[i];
            s2c += v[i] * v[i] * inv_c2[i];
        }
        const double scale = sign / std::sqrt(s2 * h / rho);
        for (std::size_t i = 0; i < n; ++i) mode.eigenfunction[i + 1] = scale * v[i];

        // d(k^2)/d(omega) = 2 omega <v, v/c^2> for a unit vector (first-order perturbation).
        mode.group_speed = mode.k * s2 / (omega * s2c);

        if (mode.zero_crossings() != mode.index - 1) {
            throw NumericalError("solve_modes: mode " + std::to_string(mode.index) + " at " + fmt(frequency) +
                                 " Hz has " + std::to_string(mode.zero_crossings()) +
                                 " zero crossings; increase nz");
        }
        mode.turning_depth = eigenfunction_extent(mode, kDefaultExtentThreshold);
        vecs.push_back(std::move(v));
        out.modes.push_back(std::move(mode));
    }
    return out;
}

ModeSet solve_modes(const Environment& env, double frequency, int nz, int max_modes) {
    ModeSolverConfig cfg;
    cfg.nz = nz;
    cfg.max_modes = max_modes;
    return solve_modes(env, frequency, cfg);
}

double group_speed(const Environment& env, int mode_index, double frequency, double df,
                   const ModeSolverConfig& config) {
    if (!(df > 0.0) || !(frequency - df > 0.0)) {
        throw InvalidInput("group_speed: need 0 < df < f (got f=" + fmt(frequency) + ", df=" + fmt(df) + ")");
    }
    if (mode_index < 1) throw InvalidInput("group_speed: mode index must be >= 1");
    ModeSolverConfig cfg = config;
    cfg.max_modes = std::max(cfg.max_modes, mode_index);
    const ModeSet lo = solve_modes(env, frequency - df, cfg);
    const ModeSet hi = solve_modes(env, frequency + df, cfg);
    const Mode* a = lo.find(mode_index);
    const Mode* b = hi.find(mode_index);
    if (a == nullptr || b == nullptr) {
        throw InvalidInput("group_speed: mode " + std::to_string(mode_index) + " not trapped at " +
                           fmt(a == nullptr ? frequency - df : frequency + df) + " Hz");
    }
    return kTwoPi * 2.0 * df / (b->k - a->k);
}

DispersionTable dispersion_table(const Environment& env, double f_lo, double f_hi, double df, int max_modes,
                                 const DispersionOptions& options) {
    const std::size_t nf = band_size(f_lo, f_hi, df);
    if (max_modes < 1) throw InvalidInput("dispersion_table: maxModes must be >= 1");
    if (!(options.group_df > 0.0) || !(f_lo - options.group_df > 0.0)) {
        throw InvalidInput("dispersion_table: group-speed step must lie in (0, fLo)");
    }
    DispersionTable table;
    table.max_modes = max_modes;
    table.frequencies.resize(nf);
    for (std::size_t i = 0; i < nf; ++i) table.frequencies[i] = f_lo + df * static_cast<double>(i);
    table.cells.assign(static_cast<std::size_t>(max_modes), std::vector<DispersionCell>(nf));

    ModeSolverConfig cfg = options.solver;
    cfg.max_modes = max_modes;
    const double gdf = options.group_df;
    detail::parallel_for(nf, options.threads, [&](std::size_t i) {
        const double f = table.frequencies[i];
        ModeSet mid;
        ModeSet lo;
        ModeSet hi;
        try {
            mid = solve_modes(env, f, cfg);
            lo = solve_modes(env, f - gdf, cfg);
            hi = solve_modes(env, f + gdf, cfg);
        } catch (const Error& e) {
            throw NumericalError("dispersion_table at " + fmt(f) + " Hz: " + e.what());
        }
        for (const Mode& m : mid.modes) {
            auto& cell = table.cells[static_cast<std::size_t>(m.index - 1)][i];
            cell.present = true;
            cell.k = m.k;
            const Mode* a = lo.find(m.index);
            const Mode* b = hi.find(m.index);
            // Centred difference where both brackets are trapped, perturbation value next to cutoff.
            cell.group_speed = (a != nullptr && b != nullptr) ? kTwoPi * 2.0 * gdf / (b->k - a->k) : m.group_speed;
        }
    });
    return table;
}

double eigenfunction_extent(const Mode& mode, double threshold) {
    const auto& psi = mode.eigenfunction;
    if (psi.empty()) return 0.0;
    double peak = 0.0;
    for (double v : psi) peak = std::max(peak, std::abs(v));
    if (peak == 0.0) return 0.0;
    const double level = threshold * peak;
    std::size_t i = psi.size() - 1;
    while (i > 0 && std::abs(psi[i]) < level) --i;
    if (i + 1 >= psi.size()) return mode.dz * static_cast<double>(i);
    const double a = std::abs(psi[i]);
    const double b = std::abs(psi[i + 1]);
    const double w = a > b ? (a - level) / (a - b) : 0.0;
    return mode.dz * (static_cast<double>(i) + std::clamp(w, 0.0, 1.0));
}

std::optional<double> CutoffCurve::depth_for_upper_limit(int mode, double frequency) const {
    if (mode < 1 || mode > mode_count()) return std::nullopt;
    const auto& pts = modes[static_cast<std::size_t>(mode - 1)];
    if (pts.empty() || frequency < pts.front().frequency || frequency > pts.back().frequency) return std::nullopt;
    auto it = std::lower_bound(pts.begin(), pts.end(), frequency,
                               [](const CutoffPoint& p, double f) { return p.frequency < f; });
    if (it == pts.begin()) return it->max_depth;
    const auto& b = *it;
    const auto& a = *(it - 1);
    const double w = (frequency - a.frequency) / (b.frequency - a.frequency);
    return a.max_depth + w * (b.max_depth - a.max_depth);
}

std::optional<double> CutoffCurve::upper_limit_for_depth(int mode, double depth) const {
    if (mode < 1 || mode > mode_count()) return std::nullopt;
    const auto& pts = modes[static_cast<std::size_t>(mode - 1)];
    if (pts.empty() || pts.back().max_depth >= depth) return std::nullopt;
    if (pts.front().max_depth < depth) return pts.front().frequency;
    for (std::size_t i = 1; i < pts.size(); ++i) {
        if (pts[i].max_depth < depth) {
            const auto& a = pts[i - 1];
            const auto& b = pts[i];
            const double w = (a.max_depth - depth) / (a.max_depth - b.max_depth);
            return a.frequency + w * (b.frequency - a.frequency);
        }
    }
    return std::nullopt;
}

CutoffCurve cutoff_curve(const Environment& env, double f_lo, double f_hi, double df, int modes, double threshold,
                         const CutoffOptions& options) {
    const std::size_t nf = band_size(f_lo, f_hi, df);
    if (modes < 1) throw InvalidInput("cutoff_curve: modes must be >= 1");
    if (!(threshold > 0.0) || !(threshold < 1.0)) {
        throw InvalidInput("cutoff_curve: threshold must lie in (0, 1) (got " + fmt(threshold) + ")");
    }
    ModeSolverConfig cfg = options.solver;
    cfg.max_modes = modes;

    // raw[mode][freq], NaN when the mode is not trapped.
    std::vector<std::vector<double>> raw(static_cast<std::size_t>(modes), std::vector<double>(nf, std::nan("")));
    std::vector<double> freqs(nf);
    for (std::size_t i = 0; i < nf; ++i) freqs[i] = f_lo + df * static_cast<double>(i);
    detail::parallel_for(nf, options.threads, [&](std::size_t i) {
        const ModeSet set = solve_modes(env, freqs[i], cfg);
        for (const Mode& m : set.modes) raw[static_cast<std::size_t>(m.index - 1)][i] = eigenfunction_extent(m, threshold);
    });

    CutoffCurve curve;
    curve.threshold = threshold;
    curve.modes.resize(static_cast<std::size_t>(modes));
    const int half = std::max(0, options.median_window / 2);
    for (int m = 0; m < modes; ++m) {
        std::vector<CutoffPoint> pts;
        for (std::size_t i = 0; i < nf; ++i) {
            if (!std::isnan(raw[static_cast<std::size_t>(m)][i])) pts.push_back({freqs[i], raw[static_cast<std::size_t>(m)][i]});
        }
        std::vector<CutoffPoint> smooth = pts;
        for (std::size_t i = 0; i < pts.size(); ++i) {
            const std::size_t a = i >= static_cast<std::size_t>(half) ? i - static_cast<std::size_t>(half) : 0;
            const std::size_t b = std::min(pts.size() - 1, i + static_cast<std::size_t>(half));
            std::vector<double> w;
            for (std::size_t j = a; j <= b; ++j) w.push_back(pts[j].max_depth);
            std::nth_element(w.begin(), w.begin() + static_cast<std::ptrdiff_t>(w.size() / 2), w.end());
            smooth[i].max_depth = w[w.size() / 2];
        }
        double running = smooth.empty() ? 0.0 : smooth.front().max_depth;
        for (auto& p : smooth) {
            const double tol = std::max(options.tolerance_abs, options.tolerance_rel * running);
            if (p.max_depth > running + tol) {
                throw NumericalError("cutoff_curve: mode " + std::to_string(m + 1) + " extent rises from " +
                                     fmt(running) + " m to " + fmt(p.max_depth) + " m at " + fmt(p.frequency) +
                                     " Hz; use a finer df");
            }
            running = std::min(running, p.max_depth);
            p.max_depth = running;
        }
        curve.modes[static_cast<std::size_t>(m)] = std::move(smooth);
    }
    return curve;
}

FieldSynthesis synthesize_field(const Environment& env, double source_depth, double receiver_depth, double range,
                                const SourceSpectrum& spectrum, const TimeAxis& axis, int max_modes,
                                const FieldSynthesisOptions& options) {
    const double depth = env.depth_at(options.solver.receiver_range);
    if (!(source_depth > 0.0 && source_depth < depth) || !(receiver_depth > 0.0 && receiver_depth < depth)) {
        throw InvalidInput("synthesize_field: source and receiver must lie inside the water column (0, " +
                           fmt(depth) + ") m");
    }
    if (!(range > 0.0)) throw InvalidInput("synthesize_field: range must be positive");
    if (spectrum.values.size() != axis.bins()) {
        throw InvalidInput("synthesize_field: spectrum has " + std::to_string(spectrum.values.size()) +
                           " bins, axis needs " + std::to_string(axis.bins()));
    }
    if (max_modes < 1) throw InvalidInput("synthesize_field: maxModes must be >= 1");

    double peak = 0.0;
    for (const auto& s : spectrum.values) peak = std::max(peak, std::abs(s));
    std::vector<std::size_t> bins;
    // DC and Nyquist are never rendered.
    for (std::size_t k = 1; k + 1 < spectrum.values.size(); ++k) {
        if (std::abs(spectrum.values[k]) > options.spectrum_floor * peak) bins.push_back(k);
    }
    if (bins.empty()) throw InvalidInput("synthesize_field: spectrum is empty");
    const double f_a = spectrum.frequency(bins.front());
    const double f_b = spectrum.frequency(bins.back());

    ModeSolverConfig cfg = options.solver;
    cfg.max_modes = max_modes;
    FieldSynthesis out;
    out.transfer.assign(axis.bins(), {0.0, 0.0});
    std::vector<int> found(bins.size(), 0);
    std::vector<char> near_field(bins.size(), 0);
    detail::parallel_for(bins.size(), options.threads, [&](std::size_t b) {
        const std::size_t k = bins[b];
        const double f = spectrum.frequency(k);
        const ModeSet set = solve_modes(env, f, cfg);
        std::complex<double> g{0.0, 0.0};
        for (const Mode& m : set.modes) {
            const double kr = m.k * range;
            g += m.value_at(source_depth) * m.value_at(receiver_depth) * std::polar(1.0 / std::sqrt(kr), kr);
        }
        if (!set.modes.empty() && set.modes.front().k * range < 10.0 * std::numbers::pi) near_field[b] = 1;
        double w = 1.0;
        if (options.edge_taper > 0.0) {
            const double e = std::min(f - f_a, f_b - f);
            if (e < options.edge_taper) w = 0.5 * (1.0 - std::cos(std::numbers::pi * (e + 0.5 * spectrum.df) /
                                                              (options.edge_taper + spectrum.df)));
        }
        out.transfer[k] = w * g;
        found[b] = static_cast<int>(set.modes.size());
    });
    out.max_modes_found = *std::max_element(found.begin(), found.end());
    if (out.max_modes_found == 0) throw InvalidInput("synthesize_field: no trapped modes anywhere in the band");
    out.far_field_warning = std::any_of(near_field.begin(), near_field.end(), [](char c) { return c != 0; });
    out.signal = render_signal(spectrum, out.transfer, axis);
    return out;
}

}  // namespace icedepth
