#pragma once

#include <optional>
#include <string>
#include <vector>

#include "icedepth/modes.hpp"
#include "icedepth/series.hpp"
#include "icedepth/warping.hpp"

namespace icedepth {

enum class PulseKind { Gaussian, Chirp, Impulse };

std::string to_string(PulseKind kind);
PulseKind pulse_kind_from_string(const std::string& s);

// Unit-energy pulse centred on emission (t0 = -duration / 2).
//   gaussian  cosine at the band centre under a Gaussian envelope
//   chirp     linear sweep fLo -> fHi with 10 % cosine end tapers
//   impulse   zero-phase flat band [fLo, fHi] with raised-cosine skirts
PulseSignal make_pulse(PulseKind kind, double f_lo, double f_hi, double sample_rate, double duration);

// Energy of `signal` inside [f_lo, f_hi] as a fraction of the total.
double band_energy_fraction(const PulseSignal& signal, double f_lo, double f_hi);

struct Spectrogram {
    std::vector<double> times;        // frame centres, s (signal time base)
    std::vector<double> frequencies;  // Hz
    std::vector<double> magnitude;    // row-major [frame][frequency]
    double window_length = 0.0;       // s
    double hop = 0.0;                 // s
    std::string window = "hann";
    double sample_rate = 0.0;
    double window_power = 0.0;        // sum of squared window samples

    std::size_t frames() const { return times.size(); }
    std::size_t bins() const { return frequencies.size(); }
    double at(std::size_t frame, std::size_t bin) const { return magnitude[frame * frequencies.size() + bin]; }
    // Sum of frame energies scaled by hop / window power; equals the signal
    // energy when the frames cover its support.
    double compensated_energy() const;
};

Spectrogram stft_spectrogram(const PulseSignal& signal, double window_length, double hop);

// Spectrum magnitude |sum x(t) e^{i 2 pi f t} / fs| at arbitrary frequencies.
std::vector<double> spectrum_magnitude(const PulseSignal& signal, const std::vector<double>& frequencies);

struct ModeSignal {
    int mode_index = 0;
    double warped_tone = 0.0;  // Hz in the warped domain
    bool detected = true;      // false when the mask came from a model hint with no peak
    PulseSignal signal;
};

struct SeparationOptions {
    double floor_db = 10.0;        // peaks must exceed the median spectrum by this
    double local_width_hz = 1.0;   // ... and the median within +-this of the peak
    int min_separation_bins = 2;
    // Expected warped tones by mode index (index 0 = mode 1).  Detected peaks
    // are labelled by the nearest hint; modes with no peak keep a mask at the hint.
    std::vector<double> tone_hints;
    double hint_tolerance = 0.35;  // fraction of the local hint spacing
};

struct ModeSeparation {
    std::vector<ModeSignal> modes;
    int missing = 0;               // requested modes that could not be resolved
    std::vector<double> peaks;     // all accepted warped-domain peaks, Hz
    WarpedSignal warped;
};

ModeSeparation separate_modes(const PulseSignal& signal, const WarpingSpec& spec, int n_modes,
                              const SeparationOptions& options = {});

// Warped-domain tone each mode should produce, from the model dispersion: the
// median over the band of f h'(h^{-1}(r / v_g(f))).
std::vector<double> predict_warped_tones(const DispersionTable& table, const WarpingSpec& spec, double range);

struct DispersionPoint {
    double frequency;
    double time;
};

struct DispersionCurve {
    int mode_index = 0;
    std::vector<DispersionPoint> points;
};

struct RidgeOptions {
    double window_length = 1.0;  // s
    double hop = 0.1;            // s
    double floor_db = 15.0;      // bins weaker than the mode's ridge peak by more are gaps
};

std::vector<DispersionCurve> extract_dispersion(const std::vector<ModeSignal>& modes, double f_lo, double f_hi,
                                                const RidgeOptions& options = {});

struct ModeAmplitudeMatrix {
    std::vector<double> frequencies;
    std::vector<int> mode_indices;
    std::vector<std::vector<double>> values;  // [row][frequency], unit vectors per column
    std::vector<bool> usable;                 // per frequency; false for all-zero columns

    std::size_t modes() const { return mode_indices.size(); }
    std::size_t usable_count() const;
};

ModeAmplitudeMatrix extract_mode_amplitudes(const std::vector<ModeSignal>& modes, double f_lo, double f_hi, double df);

// Normalises each column to unit length; zero columns are flagged unusable.
void normalize_columns(ModeAmplitudeMatrix& m);

struct UpperLimit {
    int mode_index = 0;
    bool at_band_edge = false;  // spectrum never dropped: the limit is >= f_hi
    double frequency = 0.0;
};

// Frequencies f_lo, f_lo + df, ... up to f_hi.
std::vector<double> upper_limit_grid(double f_lo, double f_hi, double df);

// When `reference` is given (one value per grid frequency) the mode spectrum is
// divided by it before the drop is measured; zero reference bins are skipped.
UpperLimit mode_upper_limit(const ModeSignal& mode, double f_lo, double f_hi, double drop_db = 20.0,
                            double df = 0.5, const std::vector<double>& reference = {});

struct DetectedArrival {
    double time;      // s, relative to emission (template time base)
    double strength;  // relative to the strongest detection
};

struct DetectionOptions {
    double threshold = 0.1;  // relative to the strongest correlation envelope
    double t_min = -1e300;   // search window, s
    double t_max = 1e300;
    // Joint refinement of overlapping arrivals: sweeps stop once no lag moves
    // by more than refine_tolerance samples.
    int refine_sweeps = 500;
    double refine_tolerance = 1e-3;
    // Constrain every gain to a real multiple of one shared phase, taken from
    // the strongest arrival.  A free phase per arrival trades off against
    // delay when arrivals overlap; paths whose reflections are all sign flips
    // share their phase.
    bool common_phase = false;
};

std::vector<DetectedArrival> detect_multipath(const PulseSignal& signal, const PulseSignal& pulse_template,
                                              int max_arrivals, const DetectionOptions& options = {});

// Full width at half maximum of the template's autocorrelation envelope, s.
double template_width(const PulseSignal& pulse_template);

}  // namespace icedepth
