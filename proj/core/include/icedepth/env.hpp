#pragma once

#include <filesystem>
#include <string>
#include <vector>

namespace icedepth {

struct ProfileSample {
    double depth;  // m
    double speed;  // m/s
};

// Range-independent sound-speed profile, piecewise linear between samples and
// constant below the deepest sample.
class SoundSpeedProfile {
public:
    static constexpr double kMinSpeed = 1300.0;
    static constexpr double kMaxSpeed = 1700.0;

    SoundSpeedProfile() = default;
    explicit SoundSpeedProfile(std::vector<ProfileSample> samples);

    const std::vector<ProfileSample>& samples() const { return samples_; }
    std::size_t size() const { return samples_.size(); }
    double max_depth() const { return samples_.back().depth; }
    double min_speed() const;
    double max_speed() const;
    // Largest |dc/dz| over all segments, 1/s.
    double max_gradient() const;

    double speed_at(double z) const;

private:
    std::vector<ProfileSample> samples_;
};

struct BathymetrySample {
    double range;  // m
    double depth;  // m
};

class Bathymetry {
public:
    Bathymetry() = default;
    explicit Bathymetry(std::vector<BathymetrySample> samples);
    static Bathymetry flat(double depth) { return Bathymetry({{0.0, depth}}); }

    const std::vector<BathymetrySample>& samples() const { return samples_; }
    double depth_at(double r) const;
    // dD/dr of the facet containing r (0 beyond the last sample).
    double slope_at(double r) const;
    double max_depth() const;
    double min_depth() const;

private:
    std::vector<BathymetrySample> samples_;
};

struct BottomHalfspace {
    double speed = 1600.0;       // m/s
    double density = 1800.0;     // kg/m^3
    double attenuation = 0.5;    // dB/wavelength

    void validate() const;
};

struct LoadReport {
    bool profile_extended = false;
    std::vector<std::string> warnings;
};

class Environment {
public:
    Environment() = default;
    // Extends the profile with a constant-speed sample when it ends above the
    // deepest bathymetry point; the extension is noted in `report` when given.
    Environment(SoundSpeedProfile profile, Bathymetry bathymetry, BottomHalfspace bottom,
                double water_density = 1000.0, LoadReport* report = nullptr);

    const SoundSpeedProfile& profile() const { return profile_; }
    const Bathymetry& bathymetry() const { return bathymetry_; }
    const BottomHalfspace& bottom() const { return bottom_; }
    double water_density() const { return water_density_; }

    double speed_at(double z) const { return profile_.speed_at(z); }
    double depth_at(double r) const { return bathymetry_.depth_at(r); }

private:
    SoundSpeedProfile profile_;
    Bathymetry bathymetry_;
    BottomHalfspace bottom_;
    double water_density_ = 1000.0;
};

double ssp_at(const SoundSpeedProfile& profile, double z);

enum class ArcticProfileKind { HalfChannel, DualDuct };

// Shape parameters for the canonical Arctic profiles.  The half-channel is a
// surface minimum followed by a monotone increase, optionally steeper above
// `knee_depth`.  The dual-duct rises linearly from the surface to a warm core
// at `warm_depth` (at `upper_gradient`, or `gradient` when that is 0), falls to
// a secondary minimum at `duct_depth` and increases at `gradient` below it.
struct ArcticProfileParams {
    double surface_speed = 1435.0;
    double gradient = 0.016;          // 1/s, below the knee or the secondary minimum
    double upper_gradient = 0.0;      // 1/s, surface layer
    double knee_depth = 0.0;          // half-channel only; 0 disables the knee
    double max_depth = 2000.0;
    double spacing = 5.0;             // sampling of curved segments, m
    double duct_depth = 200.0;        // depth of the secondary minimum
    double warm_depth = 0.0;          // 0 selects duct_depth / 2
    double duct_excess = 1.0;         // secondary-minimum speed above the surface speed, m/s
};

SoundSpeedProfile make_arctic_profile(ArcticProfileKind kind, const ArcticProfileParams& params = {});

// Text format: `[profile]`, `[bathymetry]` tables and `[bottom]`, `[water]`
// key = value sections; a JSON document with the same keys is accepted too.
Environment load_environment(const std::filesystem::path& path, LoadReport* report = nullptr);
Environment parse_environment(const std::string& text, LoadReport* report = nullptr);
std::string format_environment(const Environment& env);
std::string format_environment_json(const Environment& env);
void save_environment(const Environment& env, const std::filesystem::path& path);

}  // namespace icedepth
