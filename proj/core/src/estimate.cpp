#include "icedepth/estimate.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "icedepth/error.hpp"
#include "parallel.hpp"
#include "text_util.hpp"

namespace icedepth {

namespace {

std::string fmt(double v) { return detail::format_double(v); }

}  // namespace

void locate_peaks(AmbiguitySurface& s, double min_prominence) {
    s.secondary_peaks.clear();
    const std::size_t n = s.score.size();
    if (n == 0) return;
    std::size_t best = 0;
    for (std::size_t i = 1; i < n; ++i) {
        if (s.score[i] > s.score[best]) best = i;
    }
    s.argmax = s.depths[best];
    for (std::size_t i = 0; i < n; ++i) {
        if (i == best) continue;
        const double v = s.score[i];
        const bool left_ok = i == 0 || v > s.score[i - 1];
        const bool right_ok = i + 1 == n || v >= s.score[i + 1];
        if (!left_ok || !right_ok) continue;
        // Prominence: drop to the lowest point before reaching higher ground on each side.
        double lmin = v;
        bool lhigher = false;
        for (std::size_t j = i; j-- > 0;) {
            if (s.score[j] > v) {
                lhigher = true;
                break;
            }
            lmin = std::min(lmin, s.score[j]);
        }
        double rmin = v;
        bool rhigher = false;
        for (std::size_t j = i + 1; j < n; ++j) {
            if (s.score[j] > v) {
                rhigher = true;
                break;
            }
            rmin = std::min(rmin, s.score[j]);
        }
        double base = 0.0;
        if (lhigher && rhigher) {
            base = std::max(lmin, rmin);
        } else if (lhigher) {
            base = lmin;
        } else if (rhigher) {
            base = rmin;
        } else {
            base = std::min(lmin, rmin);
        }
        if (v - base >= min_prominence) s.secondary_peaks.push_back({s.depths[i], v});
    }
}

std::string to_string(Method m) {
    switch (m) {
        case Method::Amplitude: return "amplitude";
        case Method::Cutoff: return "cutoff";
        case Method::Tdoa: return "tdoa";
    }
    return "amplitude";
}

Method method_from_string(const std::string& s) {
    if (s == "amplitude") return Method::Amplitude;
    if (s == "cutoff") return Method::Cutoff;
    if (s == "tdoa") return Method::Tdoa;
    throw ParseError("unknown method '" + s + "'");
}

std::vector<double> depth_grid(double lo, double hi, double step) {
    if (!(hi >= lo) || !(step > 0.0)) throw InvalidInput("depth_grid: need hi >= lo and step > 0");
    std::vector<double> out;
    const auto n = static_cast<std::size_t>(std::floor((hi - lo) / step + 1e-9)) + 1;
    for (std::size_t i = 0; i < n; ++i) out.push_back(lo + step * static_cast<double>(i));
    return out;
}

ModeAmplitudeMatrix predicted_amplitudes(const Environment& env, const std::vector<int>& mode_indices,
                                         const std::vector<double>& frequencies, double depth, double receiver_depth,
                                         const ModeSolverConfig& solver) {
    ModeAmplitudeMatrix m;
    m.frequencies = frequencies;
    m.mode_indices = mode_indices;
    m.values.assign(mode_indices.size(), std::vector<double>(frequencies.size(), 0.0));
    ModeSolverConfig cfg = solver;
    cfg.max_modes = std::max(1, *std::max_element(mode_indices.begin(), mode_indices.end()));
    for (std::size_t j = 0; j < frequencies.size(); ++j) {
        const ModeSet set = solve_modes(env, frequencies[j], cfg);
        for (std::size_t r = 0; r < mode_indices.size(); ++r) {
            if (const Mode* md = set.find(mode_indices[r])) {
                m.values[r][j] = std::abs(md->value_at(depth) * md->value_at(receiver_depth));
            }
        }
    }
    normalize_columns(m);
    return m;
}

DepthEstimate estimate_depth_amplitude(const ModeAmplitudeMatrix& measured, const Environment& env,
                                       const std::vector<double>& depths, double f_lo, double f_hi,
                                       double receiver_depth, const AmplitudeOptions& options) {
    if (measured.modes() < 2) throw InvalidInput("estimate_depth_amplitude: fewer than two usable modes");
    if (depths.empty()) throw InvalidInput("estimate_depth_amplitude: empty depth grid");
    const double water = env.depth_at(options.solver.receiver_range);
    for (double z : depths) {
        if (!(z > 0.0 && z < water)) throw InvalidInput("estimate_depth_amplitude: depth " + fmt(z) + " m outside the water column");
    }
    std::vector<std::size_t> cols;
    for (std::size_t j = 0; j < measured.frequencies.size(); ++j) {
        const double f = measured.frequencies[j];
        if (f >= f_lo && f <= f_hi && j < measured.usable.size() && measured.usable[j]) cols.push_back(j);
    }
    if (cols.empty()) throw InvalidInput("estimate_depth_amplitude: no usable frequency bins in the band");

    ModeSolverConfig cfg = options.solver;
    cfg.max_modes = std::max(1, *std::max_element(measured.mode_indices.begin(), measured.mode_indices.end()));
    const std::size_t nr = measured.modes();
    // psi products per (column, candidate depth, row), solved once per frequency.
    std::vector<std::vector<double>> col_scores(cols.size(), std::vector<double>(depths.size(), 0.0));
    detail::parallel_for(cols.size(), options.threads, [&](std::size_t c) {
        const std::size_t j = cols[c];
        const ModeSet set = solve_modes(env, measured.frequencies[j], cfg);
        std::vector<const Mode*> rows(nr, nullptr);
        for (std::size_t r = 0; r < nr; ++r) rows[r] = set.find(measured.mode_indices[r]);
        std::vector<double> p(nr);
        double mnorm = 0.0;
        for (std::size_t r = 0; r < nr; ++r) mnorm += measured.values[r][j] * measured.values[r][j];
        if (!(mnorm > 0.0)) return;
        for (std::size_t d = 0; d < depths.size(); ++d) {
            double norm = 0.0;
            for (std::size_t r = 0; r < nr; ++r) {
                p[r] = rows[r] != nullptr ? std::abs(rows[r]->value_at(depths[d]) * rows[r]->value_at(receiver_depth)) : 0.0;
                norm += p[r] * p[r];
            }
            if (!(norm > 0.0)) continue;
            double dot = 0.0;
            for (std::size_t r = 0; r < nr; ++r) dot += measured.values[r][j] * p[r];
            col_scores[c][d] = dot * dot / (norm * mnorm);
        }
    });

    AmbiguitySurface surf;
    surf.depths = depths;
    surf.score.assign(depths.size(), 0.0);
    for (std::size_t d = 0; d < depths.size(); ++d) {
        double s = 0.0;
        for (std::size_t c = 0; c < cols.size(); ++c) s += col_scores[c][d];
        surf.score[d] = std::clamp(s / static_cast<double>(cols.size()), 0.0, 1.0);
    }
    locate_peaks(surf, options.min_prominence);

    DepthEstimate est;
    est.method = Method::Amplitude;
    est.depth = surf.argmax;
    est.quality = *std::max_element(surf.score.begin(), surf.score.end());
    est.quality_name = "score";
    if (cols.size() < measured.frequencies.size()) {
        est.caveats.push_back(std::to_string(measured.frequencies.size() - cols.size()) +
                              " frequency bins excluded (outside band or zero amplitude)");
    }
    est.caveats.push_back("mode-dependent attenuation over range neglected");
    if (!surf.secondary_peaks.empty()) {
        est.caveats.push_back(std::to_string(surf.secondary_peaks.size()) + " secondary peaks in the ambiguity surface");
    }
    est.ambiguity = std::move(surf);
    return est;
}

DepthEstimate estimate_depth_cutoff(const std::vector<UpperLimit>& limits, const CutoffCurve& curve,
                                    double receiver_depth, const CutoffEstimateOptions& options) {
    DepthEstimate est;
    est.method = Method::Cutoff;
    est.quality_name = "spread_m";
    double bound = std::numeric_limits<double>::infinity();
    for (const UpperLimit& u : limits) {
        if (u.mode_index < 1 || u.mode_index > curve.mode_count()) {
            est.caveats.push_back("mode " + std::to_string(u.mode_index) + " not covered by the cutoff curve");
            continue;
        }
        const auto& pts = curve.modes[static_cast<std::size_t>(u.mode_index - 1)];
        if (u.at_band_edge) {
            if (!pts.empty()) {
                bound = std::min(bound, pts.back().max_depth);
                est.caveats.push_back("mode " + std::to_string(u.mode_index) + " excited across the band: depth <= " +
                                      fmt(pts.back().max_depth) + " m");
            }
            continue;
        }
        const auto d = curve.depth_for_upper_limit(u.mode_index, u.frequency);
        if (!d) {
            est.caveats.push_back("mode " + std::to_string(u.mode_index) + " upper limit " + fmt(u.frequency) +
                                  " Hz outside the cutoff curve");
            continue;
        }
        est.candidates.push_back({u.mode_index, *d});
    }
    if (est.candidates.empty()) {
        throw NotApplicable("estimate_depth_cutoff: no finite upper limits inside the curve (band insufficient)");
    }
    std::vector<double> v;
    for (const auto& c : est.candidates) v.push_back(c.depth);
    std::sort(v.begin(), v.end());
    const std::size_t n = v.size();
    est.depth = n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
    est.quality = v.back() - v.front();
    if (est.quality > options.tolerance) {
        est.caveats.push_back("mode candidates disagree by " + fmt(est.quality) + " m (tolerance " +
                              fmt(options.tolerance) + " m); a receiver near a mode node can lower that mode's limit");
    }
    if (est.depth > bound) {
        est.caveats.push_back("estimate deeper than the bound from modes excited across the band");
    }
    // The observed limit belongs to the deeper of source and receiver.
    if (est.depth - receiver_depth < options.tolerance) {
        est.caveats.push_back("receiver-depth floor: estimate " + fmt(est.depth) + " m is within " + fmt(options.tolerance) +
                              " m of the receiver (" + fmt(receiver_depth) +
                              " m); the method cannot resolve sources above the receiver");
    }
    return est;
}

DepthEstimate estimate_depth_tdoa(const std::array<double, 3>& measured_gaps, const Environment& env,
                                  double receiver_depth, double range, const std::vector<double>& depths,
                                  const TdoaOptions& options) {
    if (depths.empty()) throw InvalidInput("estimate_depth_tdoa: empty depth grid");
    const std::vector<double> angles = options.angles.empty() ? default_angle_grid() : options.angles;
    const std::size_t nd = depths.size();
    std::vector<double> resid(nd, std::nan(""));
    EigenrayOptions ropt = options.rays;
    ropt.threads = 1;
    detail::parallel_for(nd, options.threads, [&](std::size_t i) {
        const ArrivalStructure a =
            find_eigenrays(env, depths[i], receiver_depth, range, angles, options.max_bottom_bounces, ropt);
        try {
            const auto sig = tdoa_signature(four_ray_cluster(a));
            double r = 0.0;
            for (int k = 0; k < 3; ++k) r += (sig[k] - measured_gaps[k]) * (sig[k] - measured_gaps[k]);
            resid[i] = r;
        } catch (const NotApplicable&) {
        }
    });
    std::size_t excluded = 0;
    std::size_t best = nd;
    for (std::size_t i = 0; i < nd; ++i) {
        if (std::isnan(resid[i])) {
            ++excluded;
            continue;
        }
        if (best == nd || resid[i] < resid[best]) best = i;
    }
    if (best == nd) {
        throw NotApplicable("estimate_depth_tdoa: four-ray cluster absent at every candidate depth (deep path blocked)");
    }
    AmbiguitySurface surf;
    surf.depths = depths;
    surf.score.assign(nd, 0.0);
    for (std::size_t i = 0; i < nd; ++i) {
        if (!std::isnan(resid[i])) surf.score[i] = options.epsilon / (resid[i] + options.epsilon);
    }
    locate_peaks(surf, options.min_prominence);
    DepthEstimate est;
    est.method = Method::Tdoa;
    est.depth = depths[best];
    est.quality = resid[best];
    est.quality_name = "residual_s2";
    if (excluded > 0) {
        est.caveats.push_back(std::to_string(excluded) + " candidate depths without a four-ray cluster excluded");
    }
    est.ambiguity = std::move(surf);
    return est;
}

ApplicabilityReport applicability_report(const Environment& env, double zs_lo, double zs_hi, double receiver_depth,
                                         double range, double f_lo, double f_hi, const ApplicabilityOptions& options) {
    ApplicabilityReport rep;
    const std::vector<double> angles = options.angles.empty() ? default_angle_grid() : options.angles;
    const double zs_mid = 0.5 * (zs_lo + zs_hi);
    try {
        const ArrivalStructure a = find_eigenrays(env, zs_mid, receiver_depth, range, angles, 0);
        const auto c = four_ray_cluster(a);
        rep.ray_applicable = true;
        rep.ray_reason = std::to_string(c.deep_inversions) + "-inversion four-ray cluster present";
    } catch (const NotApplicable& e) {
        rep.ray_applicable = false;
        rep.ray_reason = e.what();
    } catch (const InvalidInput& e) {
        rep.ray_applicable = false;
        rep.ray_reason = e.what();
    }
    ModeSolverConfig cfg = options.solver;
    cfg.max_modes = options.max_modes;
    int fewest = options.max_modes;
    for (double f : {f_lo, f_hi}) {
        fewest = std::min(fewest, static_cast<int>(solve_modes(env, f, cfg).size()));
    }
    rep.trapped_modes = fewest;
    rep.modes_applicable = fewest >= 2;
    if (!rep.modes_applicable) rep.notes.push_back("fewer than two trapped modes at a band edge");
    if (receiver_depth > zs_lo) {
        rep.cutoff_receiver_floor = true;
        rep.notes.push_back("receiver at " + fmt(receiver_depth) + " m is below hypothesised sources from " +
                            fmt(zs_lo) + " m; cutoff estimates floor at the receiver depth");
    }
    return rep;
}

}  // namespace icedepth
