#include "icedepth/env.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "icedepth/error.hpp"
#include "text_util.hpp"

namespace icedepth {

namespace {

void check_speed(double c, const std::string& where) {
    if (!(c >= SoundSpeedProfile::kMinSpeed && c <= SoundSpeedProfile::kMaxSpeed)) {
        throw InvalidInput("sound speed " + detail::format_double(c) + " m/s at " + where +
                           " is outside the [1300, 1700] m/s sanity window");
    }
}

}  // namespace

SoundSpeedProfile::SoundSpeedProfile(std::vector<ProfileSample> samples) : samples_(std::move(samples)) {
    if (samples_.size() < 2) {
        throw InvalidInput("sound-speed profile needs at least 2 samples");
    }
    if (samples_.front().depth != 0.0) {
        throw InvalidInput("sound-speed profile must start at depth 0");
    }
    for (std::size_t i = 0; i < samples_.size(); ++i) {
        check_speed(samples_[i].speed, "depth " + detail::format_double(samples_[i].depth) + " m");
        if (i > 0 && !(samples_[i].depth > samples_[i - 1].depth)) {
            throw InvalidInput("profile depths not strictly increasing: " +
                               detail::format_double(samples_[i - 1].depth) + " then " +
                               detail::format_double(samples_[i].depth));
        }
    }
}

double SoundSpeedProfile::min_speed() const {
    return std::min_element(samples_.begin(), samples_.end(),
                            [](auto& a, auto& b) { return a.speed < b.speed; })
        ->speed;
}

double SoundSpeedProfile::max_speed() const {
    return std::max_element(samples_.begin(), samples_.end(),
                            [](auto& a, auto& b) { return a.speed < b.speed; })
        ->speed;
}

double SoundSpeedProfile::max_gradient() const {
    double g = 0.0;
    for (std::size_t i = 1; i < samples_.size(); ++i) {
        g = std::max(g, std::abs((samples_[i].speed - samples_[i - 1].speed) /
                                 (samples_[i].depth - samples_[i - 1].depth)));
    }
    return g;
}

double SoundSpeedProfile::speed_at(double z) const {
    if (!(z >= 0.0)) {
        throw InvalidInput("ssp_at: negative depth " + detail::format_double(z));
    }
    if (z >= samples_.back().depth) return samples_.back().speed;
    auto it = std::upper_bound(samples_.begin(), samples_.end(), z,
                               [](double v, const ProfileSample& s) { return v < s.depth; });
    const auto& b = *it;
    const auto& a = *(it - 1);
    if (z == a.depth) return a.speed;
    return a.speed + (b.speed - a.speed) * (z - a.depth) / (b.depth - a.depth);
}

double ssp_at(const SoundSpeedProfile& profile, double z) { return profile.speed_at(z); }

Bathymetry::Bathymetry(std::vector<BathymetrySample> samples) : samples_(std::move(samples)) {
    if (samples_.empty()) throw InvalidInput("bathymetry needs at least one sample");
    if (samples_.front().range != 0.0) throw InvalidInput("bathymetry must start at range 0");
    for (std::size_t i = 0; i < samples_.size(); ++i) {
        if (!(samples_[i].depth > 0.0)) {
            throw InvalidInput("bathymetry depth must be positive at range " +
                               detail::format_double(samples_[i].range));
        }
        if (i > 0 && !(samples_[i].range > samples_[i - 1].range)) {
            throw InvalidInput("bathymetry ranges not strictly increasing: " +
                               detail::format_double(samples_[i - 1].range) + " then " +
                               detail::format_double(samples_[i].range));
        }
    }
}

double Bathymetry::depth_at(double r) const {
    if (r <= samples_.front().range) return samples_.front().depth;
    if (r >= samples_.back().range) return samples_.back().depth;
    auto it = std::upper_bound(samples_.begin(), samples_.end(), r,
                               [](double v, const BathymetrySample& s) { return v < s.range; });
    const auto& b = *it;
    const auto& a = *(it - 1);
    return a.depth + (b.depth - a.depth) * (r - a.range) / (b.range - a.range);
}

double Bathymetry::slope_at(double r) const {
    if (samples_.size() < 2 || r < 0.0 || r >= samples_.back().range) return 0.0;
    auto it = std::upper_bound(samples_.begin(), samples_.end(), r,
                               [](double v, const BathymetrySample& s) { return v < s.range; });
    const auto& b = *it;
    const auto& a = *(it - 1);
    return (b.depth - a.depth) / (b.range - a.range);
}

double Bathymetry::max_depth() const {
    double d = 0.0;
    for (auto& s : samples_) d = std::max(d, s.depth);
    return d;
}

double Bathymetry::min_depth() const {
    double d = samples_.front().depth;
    for (auto& s : samples_) d = std::min(d, s.depth);
    return d;
}

void BottomHalfspace::validate() const {
    if (!(speed > 0.0)) throw InvalidInput("bottom speed must be positive");
    if (!(density > 0.0)) throw InvalidInput("bottom density must be positive");
    if (!(attenuation >= 0.0)) throw InvalidInput("bottom attenuation must be non-negative");
}

Environment::Environment(SoundSpeedProfile profile, Bathymetry bathymetry, BottomHalfspace bottom,
                         double water_density, LoadReport* report)
    : profile_(std::move(profile)),
      bathymetry_(std::move(bathymetry)),
      bottom_(bottom),
      water_density_(water_density) {
    if (profile_.size() < 2) throw InvalidInput("environment needs a sound-speed profile");
    if (bathymetry_.samples().empty()) throw InvalidInput("environment needs bathymetry");
    bottom_.validate();
    if (!(water_density_ > 0.0)) throw InvalidInput("water density must be positive");
    const double deepest = bathymetry_.max_depth();
    if (profile_.max_depth() < deepest) {
        auto samples = profile_.samples();
        const double c_last = samples.back().speed;
        const double z_last = samples.back().depth;
        samples.push_back({deepest, c_last});
        profile_ = SoundSpeedProfile(std::move(samples));
        if (report) {
            report->profile_extended = true;
            report->warnings.push_back("profile ends at " + detail::format_double(z_last) +
                                       " m above the deepest bathymetry " + detail::format_double(deepest) +
                                       " m; extended at constant speed " + detail::format_double(c_last) +
                                       " m/s");
        }
    }
}

SoundSpeedProfile make_arctic_profile(ArcticProfileKind kind, const ArcticProfileParams& p) {
    if (!(p.surface_speed > 0.0 && p.gradient > 0.0 && p.max_depth > 0.0 && p.spacing > 0.0)) {
        throw InvalidInput("make_arctic_profile: surface speed, gradient, max depth and spacing must be positive");
    }
    if (p.upper_gradient < 0.0 || p.knee_depth < 0.0) {
        throw InvalidInput("make_arctic_profile: upper gradient and knee depth must be non-negative");
    }
    const bool knee = p.upper_gradient > 0.0 && p.knee_depth > 0.0;
    const bool dual = kind == ArcticProfileKind::DualDuct && p.duct_depth > 0.0;

    std::vector<ProfileSample> out;
    auto push = [&](double z, double c) {
        if (!out.empty() && z <= out.back().depth) return;
        out.push_back({z, c});
    };

    // Monotone tail starting at (z0, c0): piecewise linear, exact at the knee.
    auto tail = [&](double z0, double c0) {
        if (knee && z0 < p.knee_depth && p.knee_depth < p.max_depth) {
            const double c_knee = c0 + p.upper_gradient * (p.knee_depth - z0);
            push(p.knee_depth, c_knee);
            push(p.max_depth, c_knee + p.gradient * (p.max_depth - p.knee_depth));
        } else if (knee && z0 < p.knee_depth) {
            push(p.max_depth, c0 + p.upper_gradient * (p.max_depth - z0));
        } else {
            push(p.max_depth, c0 + p.gradient * (p.max_depth - z0));
        }
    };

    if (!dual) {
        push(0.0, p.surface_speed);
        tail(0.0, p.surface_speed);
    } else {
        const double zd = p.duct_depth;
        const double zw = p.warm_depth > 0.0 ? p.warm_depth : 0.5 * zd;
        const double c0 = p.surface_speed;
        const double g_up = p.upper_gradient > 0.0 ? p.upper_gradient : p.gradient;
        const double cw = c0 + g_up * zw;
        const double cd = c0 + p.duct_excess;
        if (!(zw > 0.0 && zw < zd && zd < p.max_depth)) {
            throw InvalidInput("make_arctic_profile: need 0 < warm depth < duct depth < max depth");
        }
        if (!(p.duct_excess > 0.0 && cd < cw)) {
            throw InvalidInput("make_arctic_profile: the secondary minimum must lie between the surface and warm-core speeds");
        }
        push(0.0, c0);
        push(zw, cw);
        const int n_dn = std::max(2, static_cast<int>(std::ceil((zd - zw) / p.spacing)));
        for (int i = 1; i <= n_dn; ++i) {
            const double z = zw + (zd - zw) * i / n_dn;
            push(z, cd + (cw - cd) * 0.5 * (1.0 + std::cos(M_PI * (z - zw) / (zd - zw))));
        }
        push(p.max_depth, cd + p.gradient * (p.max_depth - zd));
    }
    for (auto& s : out) check_speed(s.speed, "depth " + detail::format_double(s.depth) + " m");
    return SoundSpeedProfile(std::move(out));
}

namespace {

using detail::parse_double;
using detail::trim;

Environment environment_from_json(const std::string& text, LoadReport* report) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("environment JSON: ") + e.what());
    }
    try {
        const auto& jp = j.at("profile");
        const auto zs = jp.at("depth_m").get<std::vector<double>>();
        const auto cs = jp.at("speed_mps").get<std::vector<double>>();
        if (zs.size() != cs.size()) throw ParseError("profile depth_m and speed_mps lengths differ");
        std::vector<ProfileSample> prof;
        for (std::size_t i = 0; i < zs.size(); ++i) prof.push_back({zs[i], cs[i]});

        std::vector<BathymetrySample> bathy;
        if (j.contains("bathymetry")) {
            const auto rs = j["bathymetry"].at("range_m").get<std::vector<double>>();
            const auto ds = j["bathymetry"].at("depth_m").get<std::vector<double>>();
            if (rs.size() != ds.size()) throw ParseError("bathymetry range_m and depth_m lengths differ");
            for (std::size_t i = 0; i < rs.size(); ++i) bathy.push_back({rs[i], ds[i]});
        } else {
            bathy.push_back({0.0, prof.back().depth});
        }
        BottomHalfspace bottom;
        if (j.contains("bottom")) {
            const auto& jb = j["bottom"];
            bottom.speed = jb.value("speed_mps", bottom.speed);
            bottom.density = jb.value("density_kgm3", bottom.density);
            bottom.attenuation = jb.value("atten_dB_lambda", bottom.attenuation);
        }
        double rho = 1000.0;
        if (j.contains("water")) rho = j["water"].value("density_kgm3", rho);
        return Environment(SoundSpeedProfile(std::move(prof)), Bathymetry(std::move(bathy)), bottom, rho,
                           report);
    } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("environment JSON: ") + e.what());
    }
}

}  // namespace

Environment parse_environment(const std::string& text, LoadReport* report) {
    const auto first = text.find_first_not_of(" \t\r\n");
    if (first != std::string::npos && text[first] == '{') return environment_from_json(text, report);

    std::vector<ProfileSample> prof;
    std::vector<BathymetrySample> bathy;
    std::map<std::string, std::map<std::string, double>> keyed;
    std::string section;
    std::istringstream in(text);
    std::string raw;
    int line_no = 0;
    while (std::getline(in, raw)) {
        ++line_no;
        std::string line = trim(raw.substr(0, raw.find('#')));
        if (line.empty()) continue;
        const std::string where = "line " + std::to_string(line_no);
        if (line.front() == '[') {
            if (line.back() != ']') throw ParseError(where + ": unterminated section header");
            section = trim(line.substr(1, line.size() - 2));
            if (section != "profile" && section != "bathymetry" && section != "bottom" && section != "water") {
                throw ParseError(where + ": unknown section [" + section + "]");
            }
            continue;
        }
        if (section.empty()) throw ParseError(where + ": data outside of a section");
        if (section == "bottom" || section == "water") {
            const auto eq = line.find('=');
            if (eq == std::string::npos) throw ParseError(where + ": expected key = value");
            const std::string key = trim(line.substr(0, eq));
            keyed[section][key] = parse_double(trim(line.substr(eq + 1)), where);
            continue;
        }
        std::istringstream row(line);
        std::string a, b, extra;
        if (!(row >> a >> b) || (row >> extra)) throw ParseError(where + ": expected two numeric columns");
        const double x = parse_double(a, where);
        const double y = parse_double(b, where);
        if (section == "profile") {
            if (!prof.empty() && !(x > prof.back().depth)) {
                throw InvalidInput(where + ": profile depths not strictly increasing (" +
                                   detail::format_double(prof.back().depth) + ", " + detail::format_double(x) +
                                   ")");
            }
            check_speed(y, where);
            prof.push_back({x, y});
        } else {
            if (!bathy.empty() && !(x > bathy.back().range)) {
                throw InvalidInput(where + ": bathymetry ranges not strictly increasing (" +
                                   detail::format_double(bathy.back().range) + ", " +
                                   detail::format_double(x) + ")");
            }
            bathy.push_back({x, y});
        }
    }
    if (prof.empty()) throw ParseError("environment has no [profile] section");
    if (bathy.empty()) bathy.push_back({0.0, prof.back().depth});

    BottomHalfspace bottom;
    const std::map<std::string, double*> bottom_keys = {
        {"speed_mps", &bottom.speed}, {"density_kgm3", &bottom.density}, {"atten_dB_lambda", &bottom.attenuation}};
    for (auto& [k, v] : keyed["bottom"]) {
        auto it = bottom_keys.find(k);
        if (it == bottom_keys.end()) throw ParseError("unknown [bottom] key '" + k + "'");
        *it->second = v;
    }
    double rho = 1000.0;
    for (auto& [k, v] : keyed["water"]) {
        if (k != "density_kgm3") throw ParseError("unknown [water] key '" + k + "'");
        rho = v;
    }
    return Environment(SoundSpeedProfile(std::move(prof)), Bathymetry(std::move(bathy)), bottom, rho, report);
}

Environment load_environment(const std::filesystem::path& path, LoadReport* report) {
    std::ifstream f(path);
    if (!f) throw ParseError("cannot open environment file " + path.string());
    std::stringstream ss;
    ss << f.rdbuf();
    try {
        return parse_environment(ss.str(), report);
    } catch (const ParseError& e) {
        throw ParseError(path.string() + ": " + e.what());
    } catch (const InvalidInput& e) {
        throw InvalidInput(path.string() + ": " + e.what());
    }
}

std::string format_environment(const Environment& env) {
    using detail::format_double;
    std::ostringstream o;
    o << "# icedepth environment\n[profile]\n# depth_m speed_mps\n";
    for (auto& s : env.profile().samples()) o << format_double(s.depth) << ' ' << format_double(s.speed) << '\n';
    o << "\n[bathymetry]\n# range_m depth_m\n";
    for (auto& s : env.bathymetry().samples()) o << format_double(s.range) << ' ' << format_double(s.depth) << '\n';
    o << "\n[bottom]\n";
    o << "speed_mps = " << format_double(env.bottom().speed) << '\n';
    o << "density_kgm3 = " << format_double(env.bottom().density) << '\n';
    o << "atten_dB_lambda = " << format_double(env.bottom().attenuation) << '\n';
    o << "\n[water]\ndensity_kgm3 = " << format_double(env.water_density()) << '\n';
    return o.str();
}

std::string format_environment_json(const Environment& env) {
    nlohmann::json j;
    std::vector<double> z, c, r, d;
    for (auto& s : env.profile().samples()) {
        z.push_back(s.depth);
        c.push_back(s.speed);
    }
    for (auto& s : env.bathymetry().samples()) {
        r.push_back(s.range);
        d.push_back(s.depth);
    }
    j["profile"] = {{"depth_m", z}, {"speed_mps", c}};
    j["bathymetry"] = {{"range_m", r}, {"depth_m", d}};
    j["bottom"] = {{"speed_mps", env.bottom().speed},
                   {"density_kgm3", env.bottom().density},
                   {"atten_dB_lambda", env.bottom().attenuation}};
    j["water"] = {{"density_kgm3", env.water_density()}};
    return j.dump(2) + "\n";
}

void save_environment(const Environment& env, const std::filesystem::path& path) {
    std::ofstream f(path);
    if (!f) throw Error("cannot write environment file " + path.string());
    f << (path.extension() == ".json" ? format_environment_json(env) : format_environment(env));
}

}  // namespace icedepth
