#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "icedepth/env.hpp"
#include "icedepth/modes.hpp"
#include "icedepth/rays.hpp"
#include "icedepth/signal.hpp"

namespace icedepth {

struct ScorePeak {
    double depth;
    double score;
};

struct AmbiguitySurface {
    std::vector<double> depths;
    std::vector<double> score;  // in [0, 1]
    double argmax = 0.0;
    std::vector<ScorePeak> secondary_peaks;  // local maxima other than the global one, by depth
};

// Fills argmax and the secondary peaks (local maxima with at least
// `min_prominence` topographic prominence) from depths and scores.
void locate_peaks(AmbiguitySurface& surface, double min_prominence = 0.01);

enum class Method { Amplitude, Cutoff, Tdoa };

std::string to_string(Method m);
Method method_from_string(const std::string& s);

struct DepthCandidate {
    int mode;
    double depth;
};

struct DepthEstimate {
    Method method = Method::Amplitude;
    double depth = 0.0;
    // Amplitude: peak score.  Cutoff: spread of the mode candidates, m.
    // TDOA: residual sum of squares at the minimum, s^2.
    double quality = 0.0;
    std::string quality_name;
    std::optional<AmbiguitySurface> ambiguity;
    std::vector<DepthCandidate> candidates;  // cutoff only
    std::vector<std::string> caveats;
};

std::vector<double> depth_grid(double lo = 10.0, double hi = 600.0, double step = 5.0);

struct AmplitudeOptions {
    ModeSolverConfig solver;
    double min_prominence = 0.01;
    unsigned threads = 0;
};

// Scores each candidate depth by the mean squared inner product between the
// measured per-frequency mode-amplitude vectors and |psi_m(z) psi_m(zr)|,
// normalised the same way.
DepthEstimate estimate_depth_amplitude(const ModeAmplitudeMatrix& measured, const Environment& env,
                                       const std::vector<double>& depths, double f_lo, double f_hi,
                                       double receiver_depth, const AmplitudeOptions& options = {});

// Predicted mode-amplitude matrix for a source at `depth` on the measured grid.
ModeAmplitudeMatrix predicted_amplitudes(const Environment& env, const std::vector<int>& mode_indices,
                                         const std::vector<double>& frequencies, double depth, double receiver_depth,
                                         const ModeSolverConfig& solver = {});

struct CutoffEstimateOptions {
    double tolerance = 50.0;  // m, allowed spread of the per-mode candidates
};

DepthEstimate estimate_depth_cutoff(const std::vector<UpperLimit>& limits, const CutoffCurve& curve,
                                    double receiver_depth, const CutoffEstimateOptions& options = {});

struct TdoaOptions {
    EigenrayOptions rays;
    std::vector<double> angles;  // empty = default_angle_grid()
    int max_bottom_bounces = 0;
    double epsilon = 1e-8;       // s^2, residual scale of the score
    double min_prominence = 0.01;
    unsigned threads = 0;
};

DepthEstimate estimate_depth_tdoa(const std::array<double, 3>& measured_gaps, const Environment& env,
                                  double receiver_depth, double range, const std::vector<double>& depths,
                                  const TdoaOptions& options = {});

struct ApplicabilityReport {
    bool ray_applicable = false;
    std::string ray_reason;
    bool modes_applicable = false;
    int trapped_modes = 0;  // fewest over the band edges
    bool cutoff_receiver_floor = false;
    std::vector<std::string> notes;
};

struct ApplicabilityOptions {
    ModeSolverConfig solver;
    std::vector<double> angles;  // empty = default_angle_grid()
    int max_modes = 10;
};

ApplicabilityReport applicability_report(const Environment& env, double zs_lo, double zs_hi, double receiver_depth,
                                         double range, double f_lo, double f_hi,
                                         const ApplicabilityOptions& options = {});

}  // namespace icedepth
