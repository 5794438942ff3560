#pragma once

#include <string>

#include "icedepth/series.hpp"

namespace icedepth {

// Warping families.  Each is a map h from warped time u to physical time t.
//   reflective   h(u) = sqrt(u^2 + tr^2),        u >= 0, t >= tr
//   exponential  h(u) = tr exp(u / tr),           t > 0
//   refractive   h(u) = tr - tr / (1 + u/tr)^2,   u >= 0, 0 <= t < tr
// The refractive map turns modes whose arrival times approach tr from below as
// tr - t ~ f^(-2/3) (surface-duct dispersion) into tones.
enum class WarpFamily { Reflective, Exponential, Refractive };

std::string to_string(WarpFamily family);
WarpFamily warp_family_from_string(const std::string& s);

struct WarpingSpec {
    WarpFamily family = WarpFamily::Reflective;
    double tr = 1.0;              // reference time, s
    double resampling_rate = 0.0; // warped-domain rate, Hz; 0 = chosen from the signal bandwidth
    double oversampling = 2.0;    // margin over the warped Nyquist rate when automatic

    void validate() const;
    double h(double u) const;
    double h_prime(double u) const;
    double h_inverse(double t) const;
    // Physical-time interval [lo, hi) the family can represent.
    double domain_lo() const;
    double domain_hi() const;
};

struct WarpedSignal {
    PulseSignal signal;     // samples in warped time u (t0 = first u)
    TimeAxis source_axis;   // physical time axis of the input, for unwarp
    double cropped_energy = 0.0;  // input energy outside the family domain
};

// Unitary warping y(u) = sqrt(h'(u)) x(h(u)), sampled uniformly in u.  The
// input is cropped to the family domain.
WarpedSignal warp(const PulseSignal& signal, const WarpingSpec& spec);

// Inverse of warp, evaluated on `target`; zero outside the warped support.
PulseSignal unwarp(const PulseSignal& warped, const WarpingSpec& spec, const TimeAxis& target);
PulseSignal unwarp(const WarpedSignal& warped, const WarpingSpec& spec);

}  // namespace icedepth
