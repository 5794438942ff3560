#pragma once

#include <filesystem>
#include <string>

#include "icedepth/env.hpp"

namespace icedepth::test {

inline std::filesystem::path data_path(const std::string& name) {
    return std::filesystem::path(ICEDEPTH_TEST_DATA) / name;
}

// Isovelocity water of depth D over a flat bottom.
inline Environment ideal_waveguide(double c, double D) {
    return Environment(SoundSpeedProfile({{0.0, c}, {D, c}}), Bathymetry::flat(D), {});
}

// Constant gradient c0 + g z down to D.
inline Environment linear_gradient(double c0, double g, double D) {
    return Environment(SoundSpeedProfile({{0.0, c0}, {D, c0 + g * D}}), Bathymetry::flat(D), {});
}

inline const Environment& dual_duct() {
    static const Environment env = load_environment(data_path("dual_duct.env"));
    return env;
}

inline const Environment& dual_duct_sill() {
    static const Environment env = load_environment(data_path("dual_duct_sill.env"));
    return env;
}

}  // namespace icedepth::test
