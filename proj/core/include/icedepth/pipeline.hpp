#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "icedepth/env.hpp"
#include "icedepth/estimate.hpp"
#include "icedepth/io.hpp"
#include "icedepth/modes.hpp"
#include "icedepth/rays.hpp"
#include "icedepth/signal.hpp"
#include "icedepth/warping.hpp"

namespace icedepth {

// Every knob of a run.  The text form is one `key = value` per line (blank
// lines and `#` comments ignored); a JSON object with the same keys, or a run
// report carrying them under "config", is accepted too.  Defaults describe the
// experimental geometry: zr = 342 m, r = 105 km, 20-100 Hz.
struct ScenarioConfig {
    std::filesystem::path environment;  // relative paths resolve against the config file
    double source_depth = 300.0;
    double receiver_depth = 342.0;
    double range = 105000.0;
    double f_lo = 20.0;
    double f_hi = 100.0;
    double sample_rate = 1000.0;
    PulseKind pulse = PulseKind::Impulse;
    double pulse_duration = 2.0;
    std::uint64_t seed = 1;
    std::optional<double> snr_db;  // additive white noise when set

    // simulate
    int modes = 10;
    int nz = 2000;
    double synthesis_floor = 2e-3;  // bins with |S| below this fraction of the peak are not modelled
    bool rays = true;
    int max_bottom_bounces = 0;
    double deep_turn_depth = 500.0;
    double window_start = 0.0;   // s after emission; 0 = automatic
    double window_length = 0.0;  // s; 0 = automatic
    std::string signal_format = "txt";  // txt | wav

    // analyze
    WarpFamily warp_family = WarpFamily::Refractive;
    double warp_tr = 0.0;          // s; 0 = range / c_ref
    double c_ref = 0.0;            // m/s; 0 = minimum profile speed
    double emission_time = 0.0;    // s on the signal clock
    double warp_rate = 0.0;        // Hz; 0 = automatic
    double floor_db = 10.0;
    double peak_local_width = 1.0;
    int separation_modes = 0;      // 0 = modes
    bool tone_hints = true;
    double hint_tolerance = 0.35;
    double stft_window = 1.0;
    double stft_hop = 0.1;
    double ridge_floor_db = 15.0;
    double amp_df = 1.0;
    double amp_edge = 2.0;         // Hz trimmed from each band edge for amplitudes
    double drop_db = 20.0;
    double upper_df = 0.5;
    bool upper_reference = true;   // divide mode spectra by the receiver-side model before the drop
    double detect_threshold = 0.1;
    int detect_max = 8;
    double detect_t_min = 0.0;     // s after emission; 0 = window start
    double detect_t_max = 0.0;     // s after emission; 0 = earliest analysed mode - detect_guard
    double detect_guard = 0.5;
    bool detect_common_phase = false;

    // estimate
    double grid_lo = 10.0;
    double grid_hi = 600.0;
    double grid_step = 5.0;
    double cutoff_threshold = 0.0;  // 0 = 10^(-drop_db / 20)
    double cutoff_df = 1.0;
    double cutoff_tolerance = 50.0;
    double tdoa_epsilon = 1e-8;
    double min_prominence = 0.01;
    unsigned threads = 0;

    TableFormat emit = TableFormat::Tsv;

    int analysis_modes() const { return separation_modes > 0 ? separation_modes : modes; }
    double cutoff_level() const;
    void validate() const;
};

struct ConfigField {
    std::string key;
    std::string help;
    std::function<void(ScenarioConfig&, const std::string&)> set;
    std::function<std::string(const ScenarioConfig&)> get;
};

const std::vector<ConfigField>& config_fields();
void set_config_value(ScenarioConfig& cfg, const std::string& key, const std::string& value);

// `base_dir` anchors a relative environment path.
ScenarioConfig parse_scenario(const std::string& text, const std::filesystem::path& base_dir = {});
ScenarioConfig load_scenario(const std::filesystem::path& path);
// Canonical `key = value` text; parse_scenario(format_scenario(c)) == c.
std::string format_scenario(const ScenarioConfig& cfg);

Environment scenario_environment(const ScenarioConfig& cfg, LoadReport* report = nullptr);
WarpingSpec scenario_warping(const ScenarioConfig& cfg, const Environment& env);
PulseSignal scenario_pulse(const ScenarioConfig& cfg);

struct SimulationResult {
    PulseSignal signal;
    ArrivalStructure arrivals;   // all eigenrays
    int ray_arrivals_used = 0;   // deep or bottom-interacting arrivals in the signal
    DispersionTable table;
    bool far_field_warning = false;
    std::vector<std::string> warnings;
};

SimulationResult simulate(const ScenarioConfig& cfg, const Environment& env);

// Seeded white noise at cfg.snr_db relative to the mean signal power.
void add_noise(PulseSignal& signal, double snr_db, std::uint64_t seed);

struct AnalysisResult {
    WarpingSpec warping;
    Spectrogram spectrogram;
    ModeSeparation separation;
    std::vector<DispersionCurve> curves;
    ModeAmplitudeMatrix amplitudes;
    std::vector<UpperLimit> upper_limits;
    std::vector<DetectedArrival> detections;
    std::vector<std::string> warnings;
};

AnalysisResult analyze(const PulseSignal& signal, const ScenarioConfig& cfg, const Environment& env);

struct MethodOutcome {
    Method method;
    std::optional<DepthEstimate> estimate;
    std::string inapplicable;  // reason when no estimate
};

struct EstimationInputs {
    std::optional<ModeAmplitudeMatrix> amplitudes;
    std::optional<std::vector<UpperLimit>> upper_limits;
    std::optional<std::vector<DetectedArrival>> detections;
};

// Gaps between the first four detections in time.
std::array<double, 3> detection_gaps(const std::vector<DetectedArrival>& detections);

std::vector<MethodOutcome> estimate(const EstimationInputs& inputs, const std::vector<Method>& methods,
                                    const ScenarioConfig& cfg, const Environment& env);

ApplicabilityReport scenario_applicability(const ScenarioConfig& cfg, const Environment& env);

// ---- commands -----------------------------------------------------------------

struct CommandOptions {
    std::filesystem::path out_dir;
    bool force = false;
    bool timings = false;
};

struct RunReport {
    std::string command;
    ScenarioConfig config;
    std::vector<std::string> outputs;  // file names inside the output directory
    std::vector<MethodOutcome> outcomes;
    std::optional<ApplicabilityReport> applicability;
    std::vector<std::string> warnings;
    std::vector<std::pair<std::string, double>> timings;  // stage, s
};

std::string format_report(const RunReport& report, bool with_timings);

// Each command writes stage-named files plus `<command>_report.json` into
// out_dir and returns the report.  Failures remove everything the command wrote.
RunReport cmd_simulate(const ScenarioConfig& cfg, const CommandOptions& opts);
RunReport cmd_analyze(const ScenarioConfig& cfg, const std::filesystem::path& signal_path, const CommandOptions& opts);
RunReport cmd_estimate(const ScenarioConfig& cfg, const std::filesystem::path& analysis_dir,
                       const std::vector<Method>& methods, const CommandOptions& opts);

}  // namespace icedepth
