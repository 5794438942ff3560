#pragma once

#include <complex>
#include <optional>
#include <vector>

#include "icedepth/env.hpp"
#include "icedepth/series.hpp"

namespace icedepth {

// Normal mode of the depth-separated Helmholtz equation on a uniform grid from
// the surface to the water depth.  Eigenfunctions satisfy sum psi^2 dz / rho = 1.
struct Mode {
    int index = 0;            // 1-based, decreasing wavenumber
    double frequency = 0.0;   // Hz
    double k = 0.0;           // horizontal wavenumber, rad/m
    double dz = 0.0;          // grid step of `eigenfunction`, m
    std::vector<double> eigenfunction;  // samples at z = i * dz, i = 0..nz
    double group_speed = 0.0;   // d omega / dk of the discrete problem, m/s
    double turning_depth = 0.0; // eigenfunction_extent at the default threshold, m

    double phase_speed() const;
    double water_depth() const { return dz * static_cast<double>(eigenfunction.size() - 1); }
    // Linear interpolation on the solver grid; 0 outside the water column.
    double value_at(double z) const;
    int zero_crossings() const;
};

struct ModeSet {
    double frequency = 0.0;
    std::vector<double> grid;
    std::vector<Mode> modes;

    bool empty() const { return modes.empty(); }
    std::size_t size() const { return modes.size(); }
    const Mode* find(int index) const;
};

struct ModeSolverConfig {
    int nz = 2000;
    int max_modes = 10;
    // Water depth is taken from the bathymetry at this range (the receiver).
    double receiver_range = 0.0;
    // Upper phase-speed bound of the trapped-mode window.  0 selects c(D) when
    // the profile increases to the bottom, otherwise every mode with k^2 > 0.
    double max_phase_speed = 0.0;
};

inline constexpr double kDefaultExtentThreshold = 1e-2;

ModeSet solve_modes(const Environment& env, double frequency, const ModeSolverConfig& config);
ModeSet solve_modes(const Environment& env, double frequency, int nz, int max_modes);

// Centred difference 2 pi (2 df) / (k(f + df) - k(f - df)).
double group_speed(const Environment& env, int mode_index, double frequency, double df,
                   const ModeSolverConfig& config = {});

struct DispersionCell {
    bool present = false;
    double k = 0.0;
    double group_speed = 0.0;
};

struct DispersionTable {
    std::vector<double> frequencies;
    int max_modes = 0;
    std::vector<std::vector<DispersionCell>> cells;  // [mode - 1][frequency]

    const DispersionCell& at(int mode, std::size_t fi) const { return cells.at(mode - 1).at(fi); }
};

struct DispersionOptions {
    ModeSolverConfig solver;
    double group_df = 0.1;  // Hz, centred-difference step
    unsigned threads = 0;   // 0 = hardware concurrency
};

DispersionTable dispersion_table(const Environment& env, double f_lo, double f_hi, double df, int max_modes,
                                 const DispersionOptions& options = {});

// Deepest depth where |psi| >= threshold * max |psi|, linearly interpolated to
// the crossing.  This is the deepest source that can excite the mode.
double eigenfunction_extent(const Mode& mode, double threshold = kDefaultExtentThreshold);

struct CutoffPoint {
    double frequency;
    double max_depth;
};

// Per mode, the depth extent of the eigenfunction versus frequency (smoothed and
// non-increasing).  A source at depth z excites mode m only below the frequency
// where the extent falls under z.
struct CutoffCurve {
    double threshold = kDefaultExtentThreshold;
    std::vector<std::vector<CutoffPoint>> modes;  // [mode - 1]

    int mode_count() const { return static_cast<int>(modes.size()); }
    // Source depth corresponding to an observed upper-limit frequency; nullopt
    // when the frequency lies outside the computed band for that mode.
    std::optional<double> depth_for_upper_limit(int mode, double frequency) const;
    // Highest frequency at which a source at depth z still excites the mode;
    // nullopt when the mode reaches z over the whole band.
    std::optional<double> upper_limit_for_depth(int mode, double depth) const;
};

struct CutoffOptions {
    ModeSolverConfig solver;
    int median_window = 3;
    // Allowed rise after smoothing, max(abs, rel * depth).
    double tolerance_abs = 5.0;
    double tolerance_rel = 0.02;
    unsigned threads = 0;
};

CutoffCurve cutoff_curve(const Environment& env, double f_lo, double f_hi, double df, int modes,
                         double threshold = kDefaultExtentThreshold, const CutoffOptions& options = {});

struct FieldSynthesisOptions {
    ModeSolverConfig solver;
    // Bins with |S| below this fraction of the peak are not solved.
    double spectrum_floor = 1e-6;
    // Cosine taper applied to the outermost width of the solved band, Hz.
    double edge_taper = 2.0;
    unsigned threads = 0;
};

struct FieldSynthesis {
    PulseSignal signal;
    std::vector<std::complex<double>> transfer;  // modal transfer function on the axis bins
    bool far_field_warning = false;              // k1 r < 10 pi somewhere in band
    int max_modes_found = 0;
};

// Modal transfer sum_m psi_m(zs) psi_m(zr) e^{i k_m r} / sqrt(k_m r) on the bins
// of `axis` where the spectrum is significant (zero elsewhere), tapered at the band edges.
FieldSynthesis synthesize_field(const Environment& env, double source_depth, double receiver_depth, double range,
                                const SourceSpectrum& spectrum, const TimeAxis& axis, int max_modes,
                                const FieldSynthesisOptions& options = {});

}  // namespace icedepth
