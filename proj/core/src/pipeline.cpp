#include "icedepth/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <random>
#include <sstream>

#include <json.hpp>

#include "fft.hpp"
#include "parallel.hpp"
#include "icedepth/error.hpp"
#include "text_util.hpp"

namespace icedepth {

namespace fs = std::filesystem;
using nlohmann::json;
using detail::format_double;

namespace {

double to_double(const std::string& v, const std::string& key) { return detail::parse_double(detail::trim(v), key); }

int to_int(const std::string& v, const std::string& key) {
    const double d = to_double(v, key);
    if (d != std::floor(d) || std::abs(d) > 1e9) throw ParseError(key + ": expected an integer, got '" + v + "'");
    return static_cast<int>(d);
}

bool to_bool(const std::string& v, const std::string& key) {
    const std::string s = detail::trim(v);
    if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
    if (s == "false" || s == "0" || s == "no" || s == "off") return false;
    throw ParseError(key + ": expected true or false, got '" + v + "'");
}

ConfigField real(const std::string& key, double ScenarioConfig::*m, const std::string& help) {
    return {key, help, [key, m](ScenarioConfig& c, const std::string& v) { c.*m = to_double(v, key); },
            [m](const ScenarioConfig& c) { return format_double(c.*m); }};
}

ConfigField integer(const std::string& key, int ScenarioConfig::*m, const std::string& help) {
    return {key, help, [key, m](ScenarioConfig& c, const std::string& v) { c.*m = to_int(v, key); },
            [m](const ScenarioConfig& c) { return std::to_string(c.*m); }};
}

ConfigField boolean(const std::string& key, bool ScenarioConfig::*m, const std::string& help) {
    return {key, help, [key, m](ScenarioConfig& c, const std::string& v) { c.*m = to_bool(v, key); },
            [m](const ScenarioConfig& c) { return std::string(c.*m ? "true" : "false"); }};
}

std::vector<ConfigField> make_fields() {
    using C = ScenarioConfig;
    std::vector<ConfigField> f;
    f.push_back({"environment", "environment file (text or JSON)",
                 [](C& c, const std::string& v) { c.environment = detail::trim(v); },
                 [](const C& c) { return c.environment.string(); }});
    f.push_back(real("source_depth_m", &C::source_depth, "source depth, m"));
    f.push_back(real("receiver_depth_m", &C::receiver_depth, "receiver depth, m"));
    f.push_back(real("range_m", &C::range, "source-receiver range, m"));
    f.push_back(real("f_lo_hz", &C::f_lo, "band lower edge, Hz"));
    f.push_back(real("f_hi_hz", &C::f_hi, "band upper edge, Hz"));
    f.push_back(real("sample_rate_hz", &C::sample_rate, "sample rate, Hz"));
    f.push_back({"pulse", "pulse kind: gaussian, chirp or impulse",
                 [](C& c, const std::string& v) { c.pulse = pulse_kind_from_string(detail::trim(v)); },
                 [](const C& c) { return to_string(c.pulse); }});
    f.push_back(real("pulse_duration_s", &C::pulse_duration, "pulse length, s"));
    f.push_back({"seed", "noise seed",
                 [](C& c, const std::string& v) {
                     const std::string s = detail::trim(v);
                     std::uint64_t x = 0;
                     auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), x);
                     if (ec != std::errc() || p != s.data() + s.size()) throw ParseError("seed: expected an unsigned integer");
                     c.seed = x;
                 },
                 [](const C& c) { return std::to_string(c.seed); }});
    f.push_back({"snr_db", "additive white-noise SNR, dB; none disables noise",
                 [](C& c, const std::string& v) {
                     const std::string s = detail::trim(v);
                     if (s == "none" || s.empty()) {
                         c.snr_db.reset();
                     } else {
                         c.snr_db = to_double(s, "snr_db");
                     }
                 },
                 [](const C& c) { return c.snr_db ? format_double(*c.snr_db) : std::string("none"); }});
    f.push_back(integer("modes", &C::modes, "modes to synthesise and separate"));
    f.push_back(integer("nz", &C::nz, "mode-solver grid intervals"));
    f.push_back(real("synthesis_floor", &C::synthesis_floor,
                     "source-spectrum level, relative to its peak, below which bins are not modelled"));
    f.push_back(boolean("rays", &C::rays, "add the ray multipath component"));
    f.push_back(integer("max_bottom_bounces", &C::max_bottom_bounces, "bottom bounces allowed on eigenrays"));
    f.push_back(real("deep_turn_depth_m", &C::deep_turn_depth, "turning depth separating deep inversions, m"));
    f.push_back(real("window_start_s", &C::window_start, "signal window start after emission, s; 0 = automatic"));
    f.push_back(real("window_length_s", &C::window_length, "signal window length, s; 0 = automatic"));
    f.push_back({"signal_format", "simulated signal file: txt or wav",
                 [](C& c, const std::string& v) { c.signal_format = detail::trim(v); },
                 [](const C& c) { return c.signal_format; }});
    f.push_back({"warp_family", "warping family: reflective, exponential or refractive",
                 [](C& c, const std::string& v) { c.warp_family = warp_family_from_string(detail::trim(v)); },
                 [](const C& c) { return to_string(c.warp_family); }});
    f.push_back(real("warp_tr_s", &C::warp_tr, "warping reference time, s; 0 = range / c_ref"));
    f.push_back(real("c_ref_mps", &C::c_ref, "reference speed, m/s; 0 = minimum profile speed"));
    f.push_back(real("emission_time_s", &C::emission_time, "emission time on the signal clock, s"));
    f.push_back(real("warp_rate_hz", &C::warp_rate, "warped-domain sample rate, Hz; 0 = automatic"));
    f.push_back(real("floor_db", &C::floor_db, "warped peak threshold above the median floor, dB"));
    f.push_back(real("peak_local_width_hz", &C::peak_local_width, "half-width of the neighbourhood a warped peak must also clear, Hz"));
    f.push_back(integer("separation_modes", &C::separation_modes, "modes to separate; 0 = modes"));
    f.push_back(boolean("tone_hints", &C::tone_hints, "label warped tones with model predictions"));
    f.push_back(real("hint_tolerance", &C::hint_tolerance, "hint match tolerance, fraction of tone spacing"));
    f.push_back(real("stft_window_s", &C::stft_window, "spectrogram window, s"));
    f.push_back(real("stft_hop_s", &C::stft_hop, "spectrogram hop, s"));
    f.push_back(real("ridge_floor_db", &C::ridge_floor_db, "dispersion ridge floor below the peak, dB"));
    f.push_back(real("amp_df_hz", &C::amp_df, "amplitude-matrix frequency step, Hz"));
    f.push_back(real("amp_edge_hz", &C::amp_edge, "band-edge margin for amplitudes and upper limits, Hz"));
    f.push_back(real("drop_db", &C::drop_db, "upper-limit spectral drop, dB"));
    f.push_back(real("upper_df_hz", &C::upper_df, "upper-limit frequency grid, Hz"));
    f.push_back(boolean("upper_reference", &C::upper_reference,
                        "divide mode spectra by max|psi| |psi(zr)| |S| / sqrt(k) before measuring the drop"));
    f.push_back(real("detect_threshold", &C::detect_threshold, "detection threshold relative to the strongest"));
    f.push_back(integer("detect_max", &C::detect_max, "maximum detected arrivals"));
    f.push_back(real("detect_t_min_s", &C::detect_t_min, "detection window start after emission, s; 0 = signal start"));
    f.push_back(real("detect_t_max_s", &C::detect_t_max, "detection window end after emission, s; 0 = first modal arrival - guard"));
    f.push_back(real("detect_guard_s", &C::detect_guard, "gap before the earliest analysed mode kept free of detections, s"));
    f.push_back(boolean("detect_common_phase", &C::detect_common_phase, "fit every arrival with one shared phase"));
    f.push_back(real("grid_lo_m", &C::grid_lo, "depth grid start, m"));
    f.push_back(real("grid_hi_m", &C::grid_hi, "depth grid end, m"));
    f.push_back(real("grid_step_m", &C::grid_step, "depth grid step, m"));
    f.push_back(real("cutoff_threshold", &C::cutoff_threshold, "eigenfunction extent threshold; 0 = from drop_db"));
    f.push_back(real("cutoff_df_hz", &C::cutoff_df, "cutoff-curve frequency step, Hz"));
    f.push_back(real("cutoff_tolerance_m", &C::cutoff_tolerance, "allowed spread of per-mode cutoff candidates, m"));
    f.push_back(real("tdoa_epsilon_s2", &C::tdoa_epsilon, "TDOA residual scale, s^2"));
    f.push_back(real("min_prominence", &C::min_prominence, "secondary-peak prominence"));
    f.push_back({"threads", "worker threads; 0 = hardware concurrency",
                 [](C& c, const std::string& v) {
                     const int n = to_int(v, "threads");
                     if (n < 0) throw ParseError("threads: must be >= 0");
                     c.threads = static_cast<unsigned>(n);
                 },
                 [](const C& c) { return std::to_string(c.threads); }});
    f.push_back({"emit", "table format: tsv or json",
                 [](C& c, const std::string& v) { c.emit = table_format_from_string(detail::trim(v)); },
                 [](const C& c) { return std::string(c.emit == TableFormat::Json ? "json" : "tsv"); }});
    return f;
}

std::string json_scalar(const json& v) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_null()) return "none";
    return v.dump();
}

ModeSolverConfig solver_config(const ScenarioConfig& cfg) {
    ModeSolverConfig s;
    s.nz = cfg.nz;
    s.max_modes = cfg.modes;
    s.receiver_range = cfg.range;
    return s;
}

double reference_speed(const ScenarioConfig& cfg, const Environment& env) {
    return cfg.c_ref > 0.0 ? cfg.c_ref : env.profile().min_speed();
}

// Files written by one command; removed again unless the command completes.
class OutputSet {
public:
    OutputSet(fs::path dir, bool force) : dir_(std::move(dir)), force_(force) {
        if (dir_.empty()) throw InvalidInput("output directory is required");
        if (fs::exists(dir_) && !fs::is_directory(dir_)) throw InvalidInput(dir_.string() + " is not a directory");
        if (!fs::exists(dir_)) {
            fs::create_directories(dir_);
            created_dirs_.push_back(dir_);
        }
    }
    OutputSet(const OutputSet&) = delete;
    OutputSet& operator=(const OutputSet&) = delete;
    ~OutputSet() {
        if (committed_) return;
        std::error_code ec;
        for (auto it = written_.rbegin(); it != written_.rend(); ++it) fs::remove(*it, ec);
        for (auto it = created_dirs_.rbegin(); it != created_dirs_.rend(); ++it) {
            if (fs::is_empty(*it, ec)) fs::remove(*it, ec);
        }
    }

    void check(const std::vector<std::string>& names) const {
        if (force_) return;
        for (const auto& n : names) {
            if (fs::exists(dir_ / n)) {
                throw InvalidInput((dir_ / n).string() + " exists; pass --force to overwrite");
            }
        }
    }

    fs::path claim(const std::string& name) {
        const fs::path p = dir_ / name;
        if (!force_ && fs::exists(p)) throw InvalidInput(p.string() + " exists; pass --force to overwrite");
        const fs::path parent = p.parent_path();
        if (!fs::exists(parent)) {
            fs::create_directories(parent);
            created_dirs_.push_back(parent);
        }
        written_.push_back(p);
        names_.push_back(name);
        return p;
    }

    void text(const std::string& name, const std::string& content) { write_text_file(claim(name), content); }

    void signal(const std::string& name, const PulseSignal& s, const SignalMeta& meta) {
        const fs::path p = claim(name);
        if (p.extension() == ".wav") {
            written_.push_back(p.string() + ".json");
            names_.push_back(name + ".json");
        }
        write_signal(s, p, meta);
    }

    const std::vector<std::string>& names() const { return names_; }
    const fs::path& dir() const { return dir_; }
    void commit() { committed_ = true; }

private:
    fs::path dir_;
    bool force_;
    bool committed_ = false;
    std::vector<fs::path> written_;
    std::vector<std::string> names_;
    std::vector<fs::path> created_dirs_;
};

class Stopwatch {
public:
    double lap() {
        const auto now = std::chrono::steady_clock::now();
        const double s = std::chrono::duration<double>(now - last_).count();
        last_ = now;
        return s;
    }

private:
    std::chrono::steady_clock::time_point last_ = std::chrono::steady_clock::now();
};

template <typename F>
auto stage(const std::string& name, F&& fn) -> decltype(fn()) {
    try {
        return fn();
    } catch (const NotApplicable&) {
        throw;
    } catch (const InvalidInput& e) {
        throw InvalidInput(name + ": " + e.what());
    } catch (const ParseError& e) {
        throw ParseError(name + ": " + e.what());
    } catch (const std::exception& e) {
        throw Error(name + ": " + e.what());
    }
}

std::string mode_file(int index) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "modes/mode_%02d.txt", index);
    return buf;
}

// Per-mode source-depth-independent spectrum: the level a source at the
// eigenfunction maximum would produce at the receiver.  Dividing by it leaves
// |psi(zs)| / max|psi|, the quantity the cutoff curve thresholds.
std::vector<std::vector<double>> upper_limit_references(const Environment& env, const ScenarioConfig& cfg,
                                                        const std::vector<int>& modes, const std::vector<double>& f) {
    ModeSolverConfig scfg = solver_config(cfg);
    scfg.max_modes = *std::max_element(modes.begin(), modes.end());
    const auto source = spectrum_magnitude(scenario_pulse(cfg), f);
    std::vector<std::vector<double>> ref(modes.size(), std::vector<double>(f.size(), 0.0));
    detail::parallel_for(f.size(), cfg.threads, [&](std::size_t j) {
        const ModeSet set = solve_modes(env, f[j], scfg);
        for (std::size_t r = 0; r < modes.size(); ++r) {
            const Mode* m = set.find(modes[r]);
            if (m == nullptr) continue;
            double peak = 0.0;
            for (double v : m->eigenfunction) peak = std::max(peak, std::abs(v));
            ref[r][j] = peak * std::abs(m->value_at(cfg.receiver_depth)) * source[j] / std::sqrt(m->k);
        }
    });
    return ref;
}

}  // namespace

// ---- configuration ---------------------------------------------------------------

const std::vector<ConfigField>& config_fields() {
    static const std::vector<ConfigField> fields = make_fields();
    return fields;
}

void set_config_value(ScenarioConfig& cfg, const std::string& key, const std::string& value) {
    for (const auto& f : config_fields()) {
        if (f.key == key) {
            f.set(cfg, value);
            return;
        }
    }
    throw ParseError("unknown config key '" + key + "'");
}

double ScenarioConfig::cutoff_level() const {
    return cutoff_threshold > 0.0 ? cutoff_threshold : std::pow(10.0, -drop_db / 20.0);
}

void ScenarioConfig::validate() const {
    auto need = [](bool ok, const std::string& msg) {
        if (!ok) throw InvalidInput("config: " + msg);
    };
    need(!environment.empty(), "environment is required");
    need(source_depth > 0.0 && receiver_depth > 0.0, "source and receiver depths must be positive");
    need(range > 0.0, "range_m must be positive");
    need(sample_rate > 0.0, "sample_rate_hz must be positive");
    need(f_lo > 0.0 && f_hi > f_lo && f_hi < 0.5 * sample_rate, "need 0 < f_lo_hz < f_hi_hz < sample_rate_hz / 2");
    need(pulse_duration > 0.0, "pulse_duration_s must be positive");
    need(modes >= 1, "modes must be >= 1");
    need(nz >= 200, "nz must be >= 200");
    need(synthesis_floor >= 0.0 && synthesis_floor < 1.0, "synthesis_floor must lie in [0, 1)");
    need(max_bottom_bounces >= 0, "max_bottom_bounces must be >= 0");
    need(window_start >= 0.0 && window_length >= 0.0, "window values must be non-negative");
    need(signal_format == "txt" || signal_format == "wav", "signal_format must be txt or wav");
    need(separation_modes >= 0, "separation_modes must be >= 0");
    need(stft_window > 0.0 && stft_hop > 0.0, "STFT window and hop must be positive");
    need(amp_df > 0.0 && upper_df > 0.0 && cutoff_df > 0.0, "frequency steps must be positive");
    need(amp_edge >= 0.0 && f_lo + amp_edge < f_hi - amp_edge, "amp_edge_hz leaves no band");
    need(drop_db > 0.0, "drop_db must be positive");
    need(peak_local_width > 0.0, "peak_local_width_hz must be positive");
    need(detect_max >= 1 && detect_threshold > 0.0, "detection needs detect_max >= 1 and a positive threshold");
    need(grid_lo > 0.0 && grid_hi >= grid_lo && grid_step > 0.0, "depth grid needs 0 < grid_lo_m <= grid_hi_m, step > 0");
    need(cutoff_threshold >= 0.0 && cutoff_threshold < 1.0, "cutoff_threshold must lie in [0, 1)");
    need(tdoa_epsilon > 0.0, "tdoa_epsilon_s2 must be positive");
}

ScenarioConfig parse_scenario(const std::string& text, const fs::path& base_dir) {
    ScenarioConfig cfg;
    const std::string t = detail::trim(text);
    if (!t.empty() && t.front() == '{') {
        json j;
        try {
            j = json::parse(t);
        } catch (const json::exception& e) {
            throw ParseError(std::string("config JSON: ") + e.what());
        }
        const json& obj = j.contains("config") ? j["config"] : j;
        if (!obj.is_object()) throw ParseError("config JSON: expected an object");
        for (const auto& [k, v] : obj.items()) set_config_value(cfg, k, json_scalar(v));
    } else {
        std::istringstream in(text);
        std::string line;
        int n = 0;
        while (std::getline(in, line)) {
            ++n;
            const auto hash = line.find('#');
            if (hash != std::string::npos) line.erase(hash);
            line = detail::trim(line);
            if (line.empty()) continue;
            const auto eq = line.find('=');
            if (eq == std::string::npos) throw ParseError("config line " + std::to_string(n) + ": expected key = value");
            set_config_value(cfg, detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
        }
    }
    if (!cfg.environment.empty() && cfg.environment.is_relative() && !base_dir.empty()) {
        cfg.environment = (base_dir / cfg.environment).lexically_normal();
    }
    return cfg;
}

ScenarioConfig load_scenario(const fs::path& path) {
    return parse_scenario(read_text_file(path), path.parent_path());
}

std::string format_scenario(const ScenarioConfig& cfg) {
    std::string out;
    for (const auto& f : config_fields()) out += f.key + " = " + f.get(cfg) + "\n";
    return out;
}

Environment scenario_environment(const ScenarioConfig& cfg, LoadReport* report) {
    if (cfg.environment.empty()) throw InvalidInput("config: environment is required");
    return load_environment(cfg.environment, report);
}

WarpingSpec scenario_warping(const ScenarioConfig& cfg, const Environment& env) {
    WarpingSpec w;
    w.family = cfg.warp_family;
    w.tr = cfg.warp_tr > 0.0 ? cfg.warp_tr : cfg.range / reference_speed(cfg, env);
    w.resampling_rate = cfg.warp_rate;
    w.validate();
    return w;
}

PulseSignal scenario_pulse(const ScenarioConfig& cfg) {
    return make_pulse(cfg.pulse, cfg.f_lo, cfg.f_hi, cfg.sample_rate, cfg.pulse_duration);
}

// ---- simulate ----------------------------------------------------------------------

void add_noise(PulseSignal& signal, double snr_db, std::uint64_t seed) {
    if (signal.size() == 0) return;
    double power = 0.0;
    for (double v : signal.samples) power += v * v;
    power /= static_cast<double>(signal.size());
    const double sigma = std::sqrt(power / std::pow(10.0, snr_db / 10.0));
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> gauss(0.0, sigma);
    for (double& v : signal.samples) v += gauss(rng);
}

SimulationResult simulate(const ScenarioConfig& cfg, const Environment& env) {
    cfg.validate();
    SimulationResult out;
    const double water = env.depth_at(cfg.range);
    if (!(cfg.source_depth < env.depth_at(0.0)) || !(cfg.receiver_depth < water)) {
        throw InvalidInput("simulate: source or receiver below the seabed");
    }
    const PulseSignal pulse = scenario_pulse(cfg);
    const double fs = cfg.sample_rate;

    // Window covering the fastest ray (at c_max) to the slowest mode (group
    // speed >= c_min^2 / c_max).
    const double c_max = env.profile().max_speed();
    const double c_min = env.profile().min_speed();
    const double margin = 0.5 + 0.5 * cfg.pulse_duration;
    double t_start = cfg.window_start > 0.0 ? cfg.window_start : cfg.range / c_max - margin;
    double t_end = cfg.window_length > 0.0 ? t_start + cfg.window_length : cfg.range * c_max / (c_min * c_min) + margin;
    t_start = std::floor(t_start * fs) / fs;
    TimeAxis axis;
    axis.t0 = t_start;
    axis.sample_rate = fs;
    axis.count = detail::good_fft_size(static_cast<std::size_t>(std::ceil((t_end - t_start) * fs)));

    const SourceSpectrum spectrum = stage("source spectrum", [&] { return source_spectrum(pulse, axis); });

    FieldSynthesisOptions fopt;
    fopt.solver = solver_config(cfg);
    fopt.threads = cfg.threads;
    fopt.spectrum_floor = cfg.synthesis_floor;
    const FieldSynthesis field = stage("mode synthesis", [&] {
        return synthesize_field(env, cfg.source_depth, cfg.receiver_depth, cfg.range, spectrum, axis, cfg.modes, fopt);
    });
    out.far_field_warning = field.far_field_warning;
    if (field.far_field_warning) out.warnings.push_back("k1 r < 10 pi somewhere in band: far-field approximation is marginal");
    std::vector<std::complex<double>> transfer = field.transfer;

    out.arrivals.source_depth = cfg.source_depth;
    out.arrivals.receiver_depth = cfg.receiver_depth;
    out.arrivals.range = cfg.range;
    if (cfg.rays) {
        EigenrayOptions eopt;
        eopt.ray.deep_turn_depth = cfg.deep_turn_depth;
        eopt.threads = cfg.threads;
        const ArrivalStructure all = stage("eigenrays", [&] {
            return find_eigenrays(env, cfg.source_depth, cfg.receiver_depth, cfg.range, default_angle_grid(),
                                  cfg.max_bottom_bounces, eopt);
        });
        // Paths confined to the surface duct are carried by the modes.
        for (const Arrival& a : all.arrivals) {
            if (a.deep_inversions > 0 || a.bottom_bounces > 0) out.arrivals.arrivals.push_back(a);
        }
        out.arrivals.skipped_brackets = all.skipped_brackets;
        out.ray_arrivals_used = static_cast<int>(out.arrivals.arrivals.size());
        if (!out.arrivals.arrivals.empty()) {
            const auto rays = ray_transfer(out.arrivals, env.water_density(), axis);
            for (std::size_t k = 0; k < transfer.size(); ++k) transfer[k] += rays[k];
        }
        if (out.arrivals.arrivals.empty()) out.warnings.push_back("no deep or bottom-interacting eigenrays: signal carries modes only");
    }
    out.signal = render_signal(spectrum, transfer, axis);
    if (cfg.snr_db) add_noise(out.signal, *cfg.snr_db, cfg.seed);

    DispersionOptions dopt;
    dopt.solver = solver_config(cfg);
    dopt.threads = cfg.threads;
    out.table = stage("dispersion table", [&] { return dispersion_table(env, cfg.f_lo, cfg.f_hi, 1.0, cfg.modes, dopt); });
    return out;
}

// ---- analyze -----------------------------------------------------------------------

AnalysisResult analyze(const PulseSignal& input, const ScenarioConfig& cfg, const Environment& env) {
    cfg.validate();
    input.validate();
    AnalysisResult out;
    PulseSignal signal = input;
    signal.t0 -= cfg.emission_time;
    if (std::abs(signal.sample_rate - cfg.sample_rate) > 1e-9 * cfg.sample_rate) {
        out.warnings.push_back("signal sample rate " + format_double(signal.sample_rate) + " Hz differs from the config");
    }

    out.warping = scenario_warping(cfg, env);
    const int n_modes = cfg.analysis_modes();

    DispersionOptions table_opt;
    table_opt.solver = solver_config(cfg);
    table_opt.threads = cfg.threads;
    const DispersionTable table =
        stage("model dispersion", [&] { return dispersion_table(env, cfg.f_lo, cfg.f_hi, 1.0, n_modes, table_opt); });
    double vg_max = 0.0;
    for (int m = 1; m <= table.max_modes; ++m) {
        for (std::size_t i = 0; i < table.frequencies.size(); ++i) {
            const auto& c = table.at(m, i);
            if (c.present) vg_max = std::max(vg_max, c.group_speed);
        }
    }

    SeparationOptions sopt;
    sopt.floor_db = cfg.floor_db;
    sopt.local_width_hz = cfg.peak_local_width;
    sopt.hint_tolerance = cfg.hint_tolerance;
    if (cfg.tone_hints) sopt.tone_hints = predict_warped_tones(table, out.warping, cfg.range);
    out.separation = stage("mode separation", [&] { return separate_modes(signal, out.warping, n_modes, sopt); });
    if (out.separation.modes.empty()) {
        out.warnings.push_back("no modes resolved in the warped spectrum");
    } else if (out.separation.missing > 0) {
        out.warnings.push_back(std::to_string(out.separation.missing) + " of " + std::to_string(n_modes) +
                               " requested modes had no warped peak");
    }
    if (!cfg.tone_hints && !out.separation.modes.empty()) {
        out.warnings.push_back("modes labelled by warped-tone order; a missing low mode shifts every label");
    }

    out.spectrogram = stage("spectrogram", [&] { return stft_spectrogram(signal, cfg.stft_window, cfg.stft_hop); });

    const double a_lo = cfg.f_lo + cfg.amp_edge;
    const double a_hi = cfg.f_hi - cfg.amp_edge;
    if (!out.separation.modes.empty()) {
        RidgeOptions ropt;
        ropt.window_length = cfg.stft_window;
        ropt.hop = cfg.stft_hop;
        ropt.floor_db = cfg.ridge_floor_db;
        out.curves = stage("dispersion curves", [&] { return extract_dispersion(out.separation.modes, cfg.f_lo, cfg.f_hi, ropt); });
        out.amplitudes = stage("mode amplitudes", [&] { return extract_mode_amplitudes(out.separation.modes, a_lo, a_hi, cfg.amp_df); });
        stage("upper limits", [&] {
            std::vector<const ModeSignal*> det;
            std::vector<int> idx;
            for (const ModeSignal& m : out.separation.modes) {
                if (!m.detected) continue;
                det.push_back(&m);
                idx.push_back(m.mode_index);
            }
            if (det.empty()) return 0;
            std::vector<std::vector<double>> ref(det.size());
            if (cfg.upper_reference) ref = upper_limit_references(env, cfg, idx, upper_limit_grid(a_lo, a_hi, cfg.upper_df));
            for (std::size_t i = 0; i < det.size(); ++i) {
                if (cfg.upper_reference && std::none_of(ref[i].begin(), ref[i].end(), [](double v) { return v > 0.0; })) {
                    out.warnings.push_back("mode " + std::to_string(idx[i]) + " absent from the model band: no upper limit");
                    continue;
                }
                out.upper_limits.push_back(mode_upper_limit(*det[i], a_lo, a_hi, cfg.drop_db, cfg.upper_df, ref[i]));
            }
            return 0;
        });
    }

    const PulseSignal tmpl = scenario_pulse(cfg);
    DetectionOptions dopt;
    dopt.threshold = cfg.detect_threshold;
    dopt.common_phase = cfg.detect_common_phase;
    dopt.t_min = cfg.detect_t_min > 0.0 ? cfg.detect_t_min : signal.t0;
    // Default window closes before the earliest analysed mode arrives.
    double t_modes = cfg.range / reference_speed(cfg, env);
    if (vg_max > 0.0) t_modes = std::min(t_modes, cfg.range / vg_max);
    dopt.t_max = cfg.detect_t_max > 0.0 ? cfg.detect_t_max : t_modes - cfg.detect_guard;
    out.detections = stage("multipath detection", [&] { return detect_multipath(signal, tmpl, cfg.detect_max, dopt); });
    return out;
}

// ---- estimate ----------------------------------------------------------------------

std::array<double, 3> detection_gaps(const std::vector<DetectedArrival>& detections) {
    if (detections.size() < 4) {
        throw NotApplicable("fewer than four arrivals detected (" + std::to_string(detections.size()) + ")");
    }
    std::vector<double> t;
    for (const auto& d : detections) t.push_back(d.time);
    std::sort(t.begin(), t.end());
    return {t[1] - t[0], t[2] - t[1], t[3] - t[2]};
}

ApplicabilityReport scenario_applicability(const ScenarioConfig& cfg, const Environment& env) {
    ApplicabilityOptions aopt;
    aopt.solver = solver_config(cfg);
    aopt.max_modes = cfg.modes;
    return applicability_report(env, cfg.grid_lo, cfg.grid_hi, cfg.receiver_depth, cfg.range, cfg.f_lo, cfg.f_hi, aopt);
}

std::vector<MethodOutcome> estimate(const EstimationInputs& inputs, const std::vector<Method>& methods,
                                    const ScenarioConfig& cfg, const Environment& env) {
    cfg.validate();
    const double water = std::min(env.depth_at(0.0), env.depth_at(cfg.range));
    std::vector<double> grid;
    for (double z : depth_grid(cfg.grid_lo, cfg.grid_hi, cfg.grid_step)) {
        if (z < water) grid.push_back(z);
    }
    if (grid.empty()) throw InvalidInput("depth grid lies entirely below the " + format_double(water) + " m water column");
    const bool clipped = grid.back() < cfg.grid_hi - 0.5 * cfg.grid_step;
    std::vector<MethodOutcome> out;
    for (Method m : methods) {
        MethodOutcome o{m, std::nullopt, {}};
        try {
            switch (m) {
                case Method::Amplitude: {
                    if (!inputs.amplitudes) throw InvalidInput("amplitude: mode-amplitude matrix missing");
                    if (inputs.amplitudes->modes() < 2) throw NotApplicable("fewer than two separated modes");
                    AmplitudeOptions aopt;
                    aopt.solver = solver_config(cfg);
                    aopt.min_prominence = cfg.min_prominence;
                    aopt.threads = cfg.threads;
                    o.estimate = estimate_depth_amplitude(*inputs.amplitudes, env, grid, cfg.f_lo, cfg.f_hi,
                                                          cfg.receiver_depth, aopt);
                    break;
                }
                case Method::Cutoff: {
                    if (!inputs.upper_limits) throw InvalidInput("cutoff: upper limits missing");
                    if (inputs.upper_limits->empty()) throw NotApplicable("no separated modes with an upper limit");
                    int n = 1;
                    for (const auto& u : *inputs.upper_limits) n = std::max(n, u.mode_index);
                    CutoffOptions copt;
                    copt.solver = solver_config(cfg);
                    copt.threads = cfg.threads;
                    const CutoffCurve curve = cutoff_curve(env, cfg.f_lo, cfg.f_hi, cfg.cutoff_df, n, cfg.cutoff_level(), copt);
                    CutoffEstimateOptions eopt;
                    eopt.tolerance = cfg.cutoff_tolerance;
                    o.estimate = estimate_depth_cutoff(*inputs.upper_limits, curve, cfg.receiver_depth, eopt);
                    break;
                }
                case Method::Tdoa: {
                    if (!inputs.detections) throw InvalidInput("tdoa: detected arrivals missing");
                    const auto gaps = detection_gaps(*inputs.detections);
                    TdoaOptions topt;
                    topt.rays.ray.deep_turn_depth = cfg.deep_turn_depth;
                    topt.max_bottom_bounces = cfg.max_bottom_bounces;
                    topt.epsilon = cfg.tdoa_epsilon;
                    topt.min_prominence = cfg.min_prominence;
                    topt.threads = cfg.threads;
                    o.estimate = estimate_depth_tdoa(gaps, env, cfg.receiver_depth, cfg.range, grid, topt);
                    break;
                }
            }
        } catch (const NotApplicable& e) {
            o.inapplicable = e.what();
        }
        if (o.estimate && clipped) o.estimate->caveats.push_back("depth grid clipped at the " + format_double(water) + " m water column");
        out.push_back(std::move(o));
    }
    return out;
}

// ---- reports and commands ------------------------------------------------------------

std::string format_report(const RunReport& r, bool with_timings) {
    json j;
    j["command"] = r.command;
    json c = json::object();
    for (const auto& f : config_fields()) c[f.key] = f.get(r.config);
    j["config"] = c;
    j["outputs"] = r.outputs;
    j["warnings"] = r.warnings;
    if (!r.outcomes.empty()) {
        json est = json::array();
        json na = json::array();
        for (const auto& o : r.outcomes) {
            if (o.estimate) {
                est.push_back(json::parse(format_estimate_json(*o.estimate)));
            } else {
                na.push_back({{"method", to_string(o.method)}, {"reason", o.inapplicable}});
            }
        }
        j["estimates"] = est;
        j["inapplicable"] = na;
    }
    if (r.applicability) j["applicability"] = json::parse(format_applicability_json(*r.applicability));
    if (with_timings) {
        json t = json::object();
        for (const auto& [k, v] : r.timings) t[k] = v;
        j["timings_s"] = t;
    }
    return j.dump(2) + "\n";
}

RunReport cmd_simulate(const ScenarioConfig& cfg, const CommandOptions& opts) {
    cfg.validate();
    const std::string ext = extension(cfg.emit);
    const std::string signal_name = "signal." + cfg.signal_format;
    OutputSet out(opts.out_dir, opts.force);
    out.check({signal_name, "arrivals" + ext, "dispersion" + ext, "simulate_report.json"});

    RunReport rep;
    rep.command = "simulate";
    rep.config = cfg;
    Stopwatch sw;
    LoadReport load;
    const Environment env = stage("environment", [&] { return scenario_environment(cfg, &load); });
    rep.warnings = load.warnings;
    rep.timings.emplace_back("environment", sw.lap());
    const SimulationResult sim = simulate(cfg, env);
    rep.timings.emplace_back("simulate", sw.lap());
    rep.warnings.insert(rep.warnings.end(), sim.warnings.begin(), sim.warnings.end());

    out.signal(signal_name, sim.signal, {cfg.f_lo, cfg.f_hi});
    out.text("arrivals" + ext, format_arrivals(sim.arrivals, cfg.emit));
    out.text("dispersion" + ext, format_dispersion_table(sim.table, cfg.emit));
    rep.timings.emplace_back("write", sw.lap());
    rep.outputs = out.names();
    rep.outputs.push_back("simulate_report.json");
    out.text("simulate_report.json", format_report(rep, opts.timings));
    out.commit();
    return rep;
}

RunReport cmd_analyze(const ScenarioConfig& cfg, const fs::path& signal_path, const CommandOptions& opts) {
    cfg.validate();
    const std::string ext = extension(cfg.emit);
    OutputSet out(opts.out_dir, opts.force);
    out.check({"spectrogram" + ext, "dispersion_curves" + ext, "amplitudes" + ext, "upper_limits" + ext,
               "detections" + ext, "analyze_report.json"});

    RunReport rep;
    rep.command = "analyze";
    rep.config = cfg;
    Stopwatch sw;
    LoadReport load;
    const Environment env = stage("environment", [&] { return scenario_environment(cfg, &load); });
    rep.warnings = load.warnings;
    const PulseSignal signal = stage("read signal", [&] { return read_signal(signal_path); });
    rep.timings.emplace_back("load", sw.lap());
    const AnalysisResult res = analyze(signal, cfg, env);
    rep.timings.emplace_back("analyze", sw.lap());
    rep.warnings.insert(rep.warnings.end(), res.warnings.begin(), res.warnings.end());

    if (opts.force && fs::is_directory(opts.out_dir / "modes")) {
        for (const auto& e : fs::directory_iterator(opts.out_dir / "modes")) {
            if (e.path().filename().string().rfind("mode_", 0) == 0) fs::remove(e.path());
        }
    }
    out.text("spectrogram" + ext, format_spectrogram(res.spectrogram, cfg.emit));
    for (const ModeSignal& m : res.separation.modes) out.signal(mode_file(m.mode_index), m.signal, {cfg.f_lo, cfg.f_hi});
    if (!res.separation.modes.empty()) {
        out.text("dispersion_curves" + ext, format_dispersion_curves(res.curves, cfg.emit));
        out.text("amplitudes" + ext, format_amplitude_matrix(res.amplitudes, cfg.emit));
        out.text("upper_limits" + ext, format_upper_limits(res.upper_limits, cfg.emit));
    }
    out.text("detections" + ext, format_detections(res.detections, cfg.emit));
    rep.timings.emplace_back("write", sw.lap());
    rep.outputs = out.names();
    rep.outputs.push_back("analyze_report.json");
    out.text("analyze_report.json", format_report(rep, opts.timings));
    out.commit();
    return rep;
}

namespace {

// Analysis product in either table format, preferring `preferred`.
std::optional<fs::path> find_product(const fs::path& dir, const std::string& stem, TableFormat preferred) {
    const TableFormat other = preferred == TableFormat::Tsv ? TableFormat::Json : TableFormat::Tsv;
    for (TableFormat f : {preferred, other}) {
        const fs::path p = dir / (stem + extension(f));
        if (fs::exists(p)) return p;
    }
    return std::nullopt;
}

}  // namespace

RunReport cmd_estimate(const ScenarioConfig& cfg, const fs::path& analysis_dir, const std::vector<Method>& methods,
                       const CommandOptions& opts) {
    cfg.validate();
    if (methods.empty()) throw InvalidInput("estimate: no methods requested");
    const std::string ext = extension(cfg.emit);

    EstimationInputs in;
    for (Method m : methods) {
        const std::string stem = m == Method::Amplitude ? "amplitudes" : (m == Method::Cutoff ? "upper_limits" : "detections");
        const auto p = find_product(analysis_dir, stem, cfg.emit);
        if (!p) throw InvalidInput("estimate " + to_string(m) + ": " + (analysis_dir / (stem + ext)).string() + " not found");
        stage("read " + stem, [&] {
            if (m == Method::Amplitude) in.amplitudes = read_amplitude_matrix(*p);
            if (m == Method::Cutoff) in.upper_limits = read_upper_limits(*p);
            if (m == Method::Tdoa) in.detections = read_detections(*p);
            return 0;
        });
    }

    OutputSet out(opts.out_dir, opts.force);
    std::vector<std::string> planned{"estimate_report.json"};
    for (Method m : methods) {
        if (m != Method::Cutoff) planned.push_back("surface_" + to_string(m) + ext);
    }
    out.check(planned);

    RunReport rep;
    rep.command = "estimate";
    rep.config = cfg;
    Stopwatch sw;
    LoadReport load;
    const Environment env = stage("environment", [&] { return scenario_environment(cfg, &load); });
    rep.warnings = load.warnings;
    rep.outcomes = stage("estimate", [&] { return estimate(in, methods, cfg, env); });
    rep.timings.emplace_back("estimate", sw.lap());
    rep.applicability = stage("applicability", [&] { return scenario_applicability(cfg, env); });
    rep.timings.emplace_back("applicability", sw.lap());

    for (const auto& o : rep.outcomes) {
        if (o.estimate && o.estimate->ambiguity) {
            out.text("surface_" + to_string(o.method) + ext, format_surface(*o.estimate->ambiguity, cfg.emit));
        }
    }
    rep.outputs = out.names();
    rep.outputs.push_back("estimate_report.json");
    out.text("estimate_report.json", format_report(rep, opts.timings));
    out.commit();
    return rep;
}

}  // namespace icedepth
