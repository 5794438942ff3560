#pragma once

#include <array>
#include <complex>
#include <string>
#include <vector>

#include "icedepth/env.hpp"
#include "icedepth/series.hpp"

namespace icedepth {

struct RayPoint {
    double range;  // m
    double depth;  // m
    double time;   // s
    double angle;  // rad, positive downward
};

struct RayPath {
    double launch_angle = 0.0;
    std::vector<RayPoint> waypoints;
    int surface_bounces = 0;
    int bottom_bounces = 0;
    int deep_inversions = 0;     // lower turning points below the deep-turn depth
    int shallow_inversions = 0;  // lower turning points above it
    int upper_turns = 0;
    std::vector<double> bottom_grazing;  // grazing angle at each bottom reflection, rad
    std::vector<double> bottom_speed;    // water sound speed at each bottom reflection, m/s
    bool reached_range = false;
    bool reversed = false;  // turned back towards the source at a steep facet
    double end_range = 0.0;
    double end_depth = 0.0;
    double end_time = 0.0;
    double end_angle = 0.0;
};

struct RayOptions {
    double deep_turn_depth = 500.0;  // m
    bool record_waypoints = true;
    int max_bottom_bounces = 1000;   // tracing stops after this many
    long max_steps = 2'000'000;
};

// Traces a ray with exact circular arcs inside each linear layer of the profile,
// reflecting at the surface and at the piecewise-linear bathymetry.
RayPath trace_ray(const Environment& env, double z0, double angle, double max_range, const RayOptions& options = {});

enum class EndTag { RR, SR, RS, SS };

std::string to_string(EndTag tag);
EndTag end_tag_from_string(const std::string& s);

struct Arrival {
    double time = 0.0;
    double amplitude = 0.0;  // |pressure| relative to 1 m from the source
    double launch_angle = 0.0;
    int surface_bounces = 0;
    int bottom_bounces = 0;
    int deep_inversions = 0;
    EndTag end_tag = EndTag::RR;
    // Surface sign times bottom reflection coefficients.
    std::complex<double> coefficient{1.0, 0.0};
};

struct ArrivalStructure {
    std::vector<Arrival> arrivals;
    double source_depth = 0.0;
    double receiver_depth = 0.0;
    double range = 0.0;
    int skipped_brackets = 0;  // brackets whose bisection did not converge

    bool empty() const { return arrivals.empty(); }
};

struct EigenrayOptions {
    RayOptions ray;
    double merge_tolerance = 1e-4;  // s
    double angle_tolerance = 1e-12; // rad
    double depth_tolerance = 1e-7;  // m
    double tube_step = 1e-6;        // rad, launch-angle step for the spreading derivative
    unsigned threads = 0;
};

// Uniform launch-angle grid in radians, both ends included.
std::vector<double> angle_grid(double lo, double hi, std::size_t count);
// Grid of `count` angles per degree over [-max_deg, max_deg].
std::vector<double> default_angle_grid(double max_deg = 30.0, double per_degree = 50.0);

ArrivalStructure find_eigenrays(const Environment& env, double zs, double zr, double range,
                                const std::vector<double>& angles, int max_bottom_bounces,
                                const EigenrayOptions& options = {});

struct FourRayCluster {
    double t_rr = 0.0;
    double t_sr = 0.0;
    double t_rs = 0.0;
    double t_ss = 0.0;
    int deep_inversions = 0;

    // The four times in ascending order.
    std::array<double, 4> sorted() const;
};

// Earliest zero-bottom-bounce family with at least one deep inversion; throws
// NotApplicable naming the first missing end tag.
FourRayCluster four_ray_cluster(const ArrivalStructure& arrivals);

std::array<double, 3> tdoa_signature(const FourRayCluster& cluster);

// Plane-wave reflection coefficient of the fluid halfspace at grazing angle
// `grazing` from water of the given speed and density.
std::complex<double> bottom_reflection(const BottomHalfspace& bottom, double water_speed, double water_density,
                                       double grazing);

// Ray transfer function on the bins of `axis`, in the units of the modal
// transfer (pressure times rho sqrt(8 pi) e^{-i pi / 4}).
std::vector<std::complex<double>> ray_transfer(const ArrivalStructure& arrivals, double water_density,
                                               const TimeAxis& axis);

}  // namespace icedepth
