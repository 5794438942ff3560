// Acceptance suite: one PASS/FAIL line per criterion.
//
//   icedepth_acceptance --cli <icedepth binary> --data <tests/data> --work <scratch dir>
//
// Criteria 1-4 exercise the library against closed-form oracles.  Criteria 5-10
// drive the command-line tool end to end on the fixture scenarios and read back
// the files it writes.

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numbers>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "icedepth/env.hpp"
#include "icedepth/io.hpp"
#include "icedepth/modes.hpp"
#include "icedepth/pipeline.hpp"
#include "icedepth/rays.hpp"
#include "icedepth/signal.hpp"
#include "icedepth/warping.hpp"

using namespace icedepth;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr double kPi = std::numbers::pi;

struct Paths {
    fs::path cli;
    fs::path data;
    fs::path work;
};

struct Verdict {
    bool pass = true;
    std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string num(double v, int prec = 4) {
    std::ostringstream s;
    s.precision(prec);
    s << v;
    return s.str();
}

Environment ideal_waveguide(double c, double D) {
    return Environment(SoundSpeedProfile({{0.0, c}, {D, c}}), Bathymetry::flat(D), {});
}

Environment linear_gradient(double c0, double g, double D) {
    return Environment(SoundSpeedProfile({{0.0, c0}, {D, c0 + g * D}}), Bathymetry::flat(D), {});
}

// ---- command-line runs ---------------------------------------------------------

std::string quote(const fs::path& p) { return "'" + p.string() + "'"; }

// Runs simulate, analyze and estimate into dir/{sim,ana,est}; returns wall time.
double run_pipeline(const Paths& p, const fs::path& cfg, const fs::path& dir, const std::string& overrides) {
    fs::remove_all(dir);
    fs::create_directories(dir);
    const std::string cli = quote(p.cli);
    const std::string log = " >>" + quote(dir / "log.txt") + " 2>&1";
    const std::vector<std::string> cmds{
        cli + " simulate -c " + quote(cfg) + " -o " + quote(dir / "sim") + " " + overrides + log,
        cli + " analyze " + quote(dir / "sim" / "signal.txt") + " -c " + quote(cfg) + " -o " + quote(dir / "ana") + " " +
            overrides + log,
        cli + " estimate " + quote(dir / "ana") + " -c " + quote(cfg) + " -o " + quote(dir / "est") + " " + overrides + log,
    };
    const auto t0 = std::chrono::steady_clock::now();
    for (const auto& c : cmds) {
        if (std::system(c.c_str()) != 0) throw std::runtime_error("command failed (see " + (dir / "log.txt").string() + ")");
    }
    return seconds_since(t0);
}

json estimate_report(const fs::path& dir) { return json::parse(read_text_file(dir / "est" / "estimate_report.json")); }

std::optional<json> estimate_of(const json& report, const std::string& method) {
    for (const auto& e : report.at("estimates")) {
        if (e.at("method") == method) return e;
    }
    return std::nullopt;
}

std::string reason_inapplicable(const json& report, const std::string& method) {
    for (const auto& e : report.at("inapplicable")) {
        if (e.at("method") == method) return e.at("reason").get<std::string>();
    }
    return {};
}

// (mode, frequency) -> arrival time from dispersion_curves.tsv
std::map<std::pair<int, double>, double> read_curves(const fs::path& path) {
    std::map<std::pair<int, double>, double> out;
    std::istringstream in(read_text_file(path));
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#' || !std::isdigit(static_cast<unsigned char>(line[0]))) continue;
        std::istringstream row(line);
        int m = 0;
        double f = 0, t = 0;
        if (row >> m >> f >> t) out[{m, f}] = t;
    }
    return out;
}

std::vector<fs::path> files_under(const fs::path& root) {
    std::vector<fs::path> out;
    for (const auto& e : fs::recursive_directory_iterator(root)) {
        if (e.is_regular_file()) out.push_back(fs::relative(e.path(), root));
    }
    std::sort(out.begin(), out.end());
    return out;
}

// ---- criteria ------------------------------------------------------------------

Verdict ideal_eigenvalues() {
    const double c = 1500, D = 1000;
    const auto env = ideal_waveguide(c, D);
    double worst = 0, slowest = 0;
    int count = 0;
    for (double f = 20; f <= 100; f += 10) {
        const auto t0 = std::chrono::steady_clock::now();
        const auto set = solve_modes(env, f, 4000, 10);
        slowest = std::max(slowest, seconds_since(t0));
        for (int m = 1; m <= 10; ++m) {
            const Mode* mode = set.find(m);
            if (mode == nullptr) return {false, "mode " + std::to_string(m) + " missing at " + num(f) + " Hz"};
            const double kw = 2 * kPi * f / c;
            const double k = std::sqrt(kw * kw - std::pow(m * kPi / D, 2));
            worst = std::max(worst, std::abs(mode->k - k) / k);
            ++count;
        }
    }
    return {worst < 1e-4 && slowest < 5.0, std::to_string(count) + " eigenvalues, max rel err " + num(worst) +
                                               ", slowest solve " + num(slowest, 3) + " s"};
}

Verdict ideal_group_speed() {
    const double c = 1500, D = 1000;
    const auto env = ideal_waveguide(c, D);
    double worst = 0;
    for (double f = 20; f <= 100; f += 10) {
        const auto set = solve_modes(env, f, 4000, 10);
        for (const Mode& mode : set.modes) {
            const double fc = mode.index * c / (2 * D);
            const double vg = c * std::sqrt(1 - (fc / f) * (fc / f));
            worst = std::max(worst, std::abs(mode.group_speed - vg) / vg);
        }
    }
    return {worst < 5e-3, "max rel err " + num(worst)};
}

Verdict ray_oracles(const Environment& dual) {
    // Arc in a constant gradient.
    const double c0 = 1450, g = 0.016, th = 0.2;
    const auto grad = linear_gradient(c0, g, 6000);
    const auto path = trace_ray(grad, 0.0, th, 2 * c0 / (g * std::cos(th)) * std::sin(th));
    double deepest = 0;
    for (const auto& w : path.waypoints) deepest = std::max(deepest, w.depth);
    const double arc_err = std::abs(deepest - (c0 / std::cos(th) - c0) / g);

    // Direct path in isovelocity water.
    const auto iso = find_eigenrays(ideal_waveguide(1500, 5000), 100, 342, 1000, default_angle_grid(), 0);
    const double t_exact = std::hypot(1000.0, 242.0) / 1500.0;
    const double direct_err = iso.empty() ? 1.0 : std::abs(iso.arrivals.front().time - t_exact) / t_exact;

    // Four-ray cluster at 105 km against a grid ten times denser.
    const EigenrayOptions opt{.ray = {.deep_turn_depth = 1000, .record_waypoints = false}};
    const auto a = four_ray_cluster(find_eigenrays(dual, 300, 342, 105000, default_angle_grid(), 0, opt)).sorted();
    const auto b = four_ray_cluster(find_eigenrays(dual, 300, 342, 105000, default_angle_grid(30.0, 500.0), 0, opt)).sorted();
    double conv = 0;
    for (int i = 0; i < 4; ++i) conv = std::max(conv, std::abs(a[i] - b[i]));

    return {arc_err < 0.1 && direct_err < 1e-9 && conv < 1e-4,
            "turning depth err " + num(arc_err) + " m, direct time rel err " + num(direct_err) + ", 10x grid shift " +
                num(conv * 1e3) + " ms"};
}

Verdict warping() {
    const auto pulse = make_pulse(PulseKind::Impulse, 20, 100, 1000, 2.0);
    double trip = 0, energy = 0;
    for (auto fam : {WarpFamily::Reflective, WarpFamily::Exponential}) {
        PulseSignal x{std::vector<double>(8000, 0.0), 1000.0, 66.0};
        for (std::size_t i = 0; i < pulse.size(); ++i) x.samples[3000 + i] = pulse.samples[i];
        const WarpingSpec spec{fam, fam == WarpFamily::Reflective ? 60.0 : 72.0};
        const auto w = warp(x, spec);
        energy = std::max(energy, std::abs(w.signal.energy() + w.cropped_energy - x.energy()) / x.energy());
        const auto back = unwarp(w, spec);
        double err = 0;
        for (std::size_t i = 0; i < x.size(); ++i) err += std::pow(back.samples[i] - x.samples[i], 2);
        trip = std::max(trip, std::sqrt(err / x.energy()));
    }

    // Mode 1 of a 1000 m ideal guide at 30 km, tr = r / c.
    const double r = 30000, fs = 500, fc = 0.75;
    const TimeAxis axis{r / 1500.0 - 0.5, fs, 8192};
    const auto S = source_spectrum(make_pulse(PulseKind::Impulse, 20, 100, fs, 1.0), axis);
    FieldSynthesisOptions fopt;
    fopt.solver.nz = 2000;
    fopt.spectrum_floor = 2e-3;
    const auto x = synthesize_field(ideal_waveguide(1500, 1000), 500, 500, r, S, axis, 1, fopt).signal;
    const auto w = warp(x, {WarpFamily::Reflective, r / 1500.0});
    std::vector<double> f;
    for (double v = 0.01; v < 25.0; v += 0.01) f.push_back(v);
    const auto mag = spectrum_magnitude(w.signal, f);
    double total = 0, near = 0, peak = 0, peak_f = 0;
    for (std::size_t i = 0; i < f.size(); ++i) {
        total += mag[i] * mag[i];
        if (std::abs(f[i] - fc) <= 1.0) near += mag[i] * mag[i];
        if (mag[i] > peak) {
            peak = mag[i];
            peak_f = f[i];
        }
    }
    const double frac = near / total;
    return {trip < 1e-6 && energy < 1e-6 && frac >= 0.8 && std::abs(peak_f - fc) <= 1.0,
            "round trip " + num(trip) + ", energy " + num(energy) + ", tone at " + num(peak_f, 3) + " Hz holds " +
                num(100 * frac, 3) + "% within 1 Hz of " + num(fc) + " Hz"};
}

Verdict node_null(const Paths& p) {
    const fs::path cfg = p.data / "ideal_300.cfg";
    double e[2] = {0, 0};
    const double depths[2] = {50, 100};
    for (int i = 0; i < 2; ++i) {
        const fs::path dir = p.work / ("node_" + std::to_string(static_cast<int>(depths[i])));
        run_pipeline(p, cfg, dir, "--source-depth-m " + num(depths[i]));
        e[i] = read_signal(dir / "ana" / "modes" / "mode_03.txt").energy();
    }
    const double db = 10 * std::log10(e[0] / e[1]);
    return {db >= 30.0, "mode 3 energy at the 100 m node is " + num(db, 3) + " dB below the 50 m antinode"};
}

struct DualRun {
    double zs;
    fs::path dir;
    double seconds;
    json report;
};

Verdict amplitude_method(const std::vector<DualRun>& runs) {
    Verdict v;
    for (const auto& r : runs) {
        const auto e = estimate_of(r.report, "amplitude");
        if (!e) return {false, "zs " + num(r.zs) + ": amplitude inapplicable (" + reason_inapplicable(r.report, "amplitude") + ")"};
        const double d = e->at("depth_m").get<double>();
        const auto peaks = e->at("secondary_peaks").size();
        bool ok = std::abs(d - r.zs) <= 15.0 && r.seconds < 180.0;
        if (r.zs == 100.0) ok = ok && peaks >= 1;
        v.pass = v.pass && ok;
        v.detail += (v.detail.empty() ? "" : "; ") + std::string("zs ") + num(r.zs) + " -> " + num(d) + " m, " +
                    std::to_string(peaks) + " secondary peaks, pipeline " + num(r.seconds, 3) + " s";
    }
    return v;
}

Verdict cutoff_method(const Paths& p) {
    Verdict v;
    const fs::path cfg = p.data / "dual_duct_300.cfg";
    std::map<int, std::vector<double>> limits;  // mode -> limit per depth, band edge as +inf
    for (double zs : {200.0, 300.0, 400.0}) {
        const fs::path dir = p.work / ("cutoff_" + num(zs));
        // Shallow receiver above the mode extents, rays not needed for this method.
        run_pipeline(p, cfg, dir, "--source-depth-m " + num(zs) + " --receiver-depth-m 50 --rays false");
        const auto report = estimate_report(dir);
        const auto e = estimate_of(report, "cutoff");
        if (!e) return {false, "zs " + num(zs) + ": cutoff inapplicable (" + reason_inapplicable(report, "cutoff") + ")"};
        const double d = e->at("depth_m").get<double>();
        v.pass = v.pass && std::abs(d - zs) <= 50.0;
        v.detail += (v.detail.empty() ? "" : "; ") + std::string("zs ") + num(zs) + " -> " + num(d) + " m";
        for (const auto& u : read_upper_limits(dir / "ana" / "upper_limits.tsv")) {
            limits[u.mode_index].push_back(u.at_band_edge ? std::numeric_limits<double>::infinity() : u.frequency);
        }
    }
    // A limit at the band edge only says "above f_hi": two of them in a row are
    // censored, not equal.  Finite limits must fall strictly, and a mode may not
    // return to the band edge once it has been cut off.
    std::string trend;
    int compared = 0;
    for (const auto& [m, f] : limits) {
        if (f.size() != 3) continue;
        bool dec = true, censored = false;
        for (std::size_t i = 1; i < f.size(); ++i) {
            if (std::isinf(f[i - 1]) && std::isinf(f[i])) {
                censored = true;
            } else {
                dec = dec && f[i] < f[i - 1];
            }
        }
        if (!censored) ++compared;
        v.pass = v.pass && dec;
        trend += " mode " + std::to_string(m) + ":";
        for (double x : f) trend += " " + (std::isinf(x) ? std::string("edge") : num(x, 3));
        if (!dec) trend += " (not decreasing)";
        if (censored) trend += " (above band at consecutive depths)";
    }
    v.pass = v.pass && compared > 0;
    v.detail += "; limits (Hz) by depth" + trend;
    return v;
}

Verdict tdoa_method(const Paths& p, const std::vector<DualRun>& runs, const Environment& dual) {
    Verdict v;
    const EigenrayOptions opt{.ray = {.deep_turn_depth = 1000, .record_waypoints = false}};
    for (const auto& r : runs) {
        const auto model = tdoa_signature(four_ray_cluster(find_eigenrays(dual, r.zs, 342, 105000, default_angle_grid(), 0, opt)));
        const auto gaps = detection_gaps(read_detections(r.dir / "ana" / "detections.tsv"));
        double worst = 0;
        for (int i = 0; i < 3; ++i) worst = std::max(worst, std::abs(gaps[i] - model[i]));
        const auto e = estimate_of(r.report, "tdoa");
        const double d = e ? e->at("depth_m").get<double>() : std::nan("");
        v.pass = v.pass && worst < 1e-3 && e && std::abs(d - r.zs) <= 25.0;
        v.detail += (v.detail.empty() ? "" : "; ") + std::string("zs ") + num(r.zs) + " -> " +
                    (e ? num(d) + " m" : "inapplicable") + ", gap err " + num(worst * 1e3, 3) + " ms";
    }
    const fs::path dir = p.work / "sill";
    run_pipeline(p, p.data / "dual_duct_300.cfg", dir,
                 "--environment " + quote(p.data / "dual_duct_sill.env") + " --source-depth-m 300");
    const auto report = estimate_report(dir);
    const bool blocked = !estimate_of(report, "tdoa").has_value();
    v.pass = v.pass && blocked;
    v.detail += "; sill: " + (blocked ? "inapplicable (" + reason_inapplicable(report, "tdoa") + ")" : std::string("estimated"));
    return v;
}

Verdict dispersion_invariance(const std::vector<DualRun>& runs) {
    const auto a = read_curves(runs[0].dir / "ana" / "dispersion_curves.tsv");
    const auto b = read_curves(runs[1].dir / "ana" / "dispersion_curves.tsv");
    const double hop = 0.1;
    int shared = 0;
    double worst = 0;
    for (const auto& [key, t] : a) {
        const auto it = b.find(key);
        if (it == b.end()) continue;
        ++shared;
        worst = std::max(worst, std::abs(t - it->second));
    }
    return {shared > 0 && worst <= hop, std::to_string(shared) + " shared (mode, bin) points, max difference " +
                                            num(worst * 1e3, 3) + " ms"};
}

Verdict determinism(const Paths& p) {
    const fs::path cfg = p.data / "ideal_300.cfg";
    const fs::path run = p.work / "det" / "run";
    const fs::path first = p.work / "det" / "first";
    run_pipeline(p, cfg, run, "");
    fs::remove_all(first);
    fs::rename(run, first);
    run_pipeline(p, cfg, run, "");
    const auto fa = files_under(first);
    const auto fb = files_under(run);
    if (fa != fb) return {false, "file sets differ"};
    for (const auto& f : fa) {
        if (read_text_file(first / f) != read_text_file(run / f)) return {false, f.string() + " differs"};
    }
    return {true, std::to_string(fa.size()) + " files identical across two runs"};
}

}  // namespace

int main(int argc, char** argv) {
    Paths p;
    for (int i = 1; i + 1 < argc; i += 2) {
        const std::string k = argv[i];
        if (k == "--cli") p.cli = argv[i + 1];
        if (k == "--data") p.data = argv[i + 1];
        if (k == "--work") p.work = argv[i + 1];
    }
    if (p.cli.empty() || p.data.empty() || p.work.empty()) {
        std::cerr << "usage: icedepth_acceptance --cli <icedepth> --data <dir> --work <dir>\n";
        return 2;
    }
    fs::create_directories(p.work);
    const Environment dual = load_environment(p.data / "dual_duct.env");

    int failed = 0;
    auto check = [&](int id, const std::string& name, const std::function<Verdict()>& fn) {
        Verdict v;
        const auto t0 = std::chrono::steady_clock::now();
        try {
            v = fn();
        } catch (const std::exception& e) {
            v = {false, std::string("error: ") + e.what()};
        }
        if (!v.pass) ++failed;
        std::printf("%s %2d %-26s %s [%.1f s]\n", v.pass ? "PASS" : "FAIL", id, name.c_str(), v.detail.c_str(),
                    seconds_since(t0));
        std::fflush(stdout);
    };

    check(1, "mode eigenvalues", ideal_eigenvalues);
    check(2, "group speed", ideal_group_speed);
    check(3, "ray oracles", [&] { return ray_oracles(dual); });
    check(4, "warping", warping);
    check(5, "node null", [&] { return node_null(p); });

    std::vector<DualRun> runs;
    std::string run_error;
    try {
        for (double zs : {100.0, 300.0}) {
            const fs::path dir = p.work / ("dual_" + num(zs));
            const double s = run_pipeline(p, p.data / "dual_duct_300.cfg", dir, "--source-depth-m " + num(zs));
            runs.push_back({zs, dir, s, estimate_report(dir)});
        }
    } catch (const std::exception& e) {
        run_error = e.what();
    }
    auto needs_runs = [&](const std::function<Verdict()>& fn) {
        return [&, fn] { return run_error.empty() ? fn() : Verdict{false, "pipeline: " + run_error}; };
    };
    check(6, "amplitude method", needs_runs([&] { return amplitude_method(runs); }));
    check(7, "cutoff method", [&] { return cutoff_method(p); });
    check(8, "tdoa method", needs_runs([&] { return tdoa_method(p, runs, dual); }));
    check(9, "dispersion invariance", needs_runs([&] { return dispersion_invariance(runs); }));
    check(10, "determinism", [&] { return determinism(p); });

    std::printf("%d of 10 criteria met\n", 10 - failed);
    return failed == 0 ? 0 : 1;
}
