#include "icedepth/rays.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <optional>

#include "icedepth/error.hpp"
#include "parallel.hpp"
#include "text_util.hpp"

namespace icedepth {

namespace {

constexpr double kPi = std::numbers::pi;
constexpr double kInf = std::numeric_limits<double>::infinity();

struct Layer {
    double z_top;
    double z_bot;  // +inf for the constant layer below the deepest sample
    double c_top;
    double g;      // dc/dz

    double speed(double z) const { return c_top + g * (z - z_top); }
};

std::vector<Layer> build_layers(const SoundSpeedProfile& profile) {
    const auto& s = profile.samples();
    std::vector<Layer> out;
    for (std::size_t i = 0; i + 1 < s.size(); ++i) {
        const double g = (s[i + 1].speed - s[i].speed) / (s[i + 1].depth - s[i].depth);
        out.push_back({s[i].depth, s[i + 1].depth, s[i].speed, g});
    }
    out.push_back({s.back().depth, kInf, s.back().speed, 0.0});
    return out;
}

std::size_t layer_index(const std::vector<Layer>& layers, double z, int dir) {
    // With z on a boundary the layer is chosen by the vertical direction.
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const auto& l = layers[i];
        const bool inside = dir > 0 ? (z >= l.z_top && z < l.z_bot) : (z > l.z_top && z <= l.z_bot);
        if (inside) return i;
    }
    return z <= layers.front().z_top ? 0 : layers.size() - 1;
}

// Straight-line or circular-arc segment inside one layer, parametrised by u in [0, 1].
struct Arc {
    double r0, z0, t0, th0;
    double th1;         // exit angle (arc) or constant angle (straight)
    double length = 0;  // path length for the straight case
    double g = 0, xi = 0, c0 = 0;

    bool straight() const { return g == 0.0; }
    double theta(double u) const { return straight() ? th0 : th0 + u * (th1 - th0); }
    double range(double u) const {
        if (straight()) return r0 + u * length * std::cos(th0);
        return r0 + (std::sin(th0) - std::sin(theta(u))) / (g * xi);
    }
    double depth(double u) const {
        if (straight()) return z0 + u * length * std::sin(th0);
        return z0 + (std::cos(theta(u)) - std::cos(th0)) / (g * xi);
    }
    double time(double u) const {
        if (straight()) return t0 + u * length / c0;
        return t0 + (std::atanh(std::sin(th0)) - std::atanh(std::sin(theta(u)))) / g;
    }
    // Parameter at which the arc reaches range R (R inside the arc's span).
    double u_at_range(double R) const {
        if (straight()) return (R - r0) / (length * std::cos(th0));
        const double s = std::clamp(std::sin(th0) - g * xi * (R - r0), -1.0, 1.0);
        const double th = std::asin(s);
        return (th - th0) / (th1 - th0);
    }
};

double bathy_min_between(const Bathymetry& b, double ra, double rb) {
    double m = std::min(b.depth_at(ra), b.depth_at(rb));
    for (const auto& s : b.samples()) {
        if (s.range > ra && s.range < rb) m = std::min(m, s.depth);
    }
    return m;
}

}  // namespace

RayPath trace_ray(const Environment& env, double z0, double angle, double max_range, const RayOptions& options) {
    if (!(std::abs(angle) < kPi / 2)) throw InvalidInput("trace_ray: |angle| must be below pi/2");
    if (!(max_range > 0.0)) throw InvalidInput("trace_ray: maxRange must be positive");
    const Bathymetry& bathy = env.bathymetry();
    if (!(z0 >= 0.0 && z0 <= bathy.depth_at(0.0))) {
        throw InvalidInput("trace_ray: source depth " + detail::format_double(z0) + " m outside the water column");
    }
    const std::vector<Layer> layers = build_layers(env.profile());

    RayPath path;
    path.launch_angle = angle;
    double r = 0.0;
    double z = z0;
    double t = 0.0;
    double th = angle;
    int dir = angle > 0.0 ? 1 : (angle < 0.0 ? -1 : 1);
    if (z0 == 0.0 && dir < 0) {
        th = -th;
        dir = 1;
        ++path.surface_bounces;
    }
    std::size_t li = layer_index(layers, z, dir);
    auto record = [&] {
        if (!options.record_waypoints) return;
        if (!path.waypoints.empty() && path.waypoints.back().time >= t) return;
        path.waypoints.push_back({r, z, t, th});
    };
    if (options.record_waypoints) path.waypoints.push_back({r, z, t, th});

    int idle = 0;
    for (long step = 0; step < options.max_steps; ++step) {
        const Layer& L = layers[li];
        const double c = L.speed(z);
        const double xi = std::cos(th) / c;

        Arc arc{r, z, t, th, th};
        arc.g = L.g;
        arc.xi = xi;
        arc.c0 = c;
        int exit_dir = 0;      // +1 through z_bot, -1 through z_top, 0 none (horizontal)
        bool lower_turn = false;
        bool upper_turn = false;
        const bool going_down = th > 0.0 || (th == 0.0 && dir > 0);

        if (L.g == 0.0 || idle > 2) {
            if (idle > 2) {
                // Horizontal ray held at a speed minimum.
                th = 0.0;
                arc.th0 = arc.th1 = 0.0;
                arc.g = 0.0;
            }
            const double s_th = std::sin(arc.th0);
            if (s_th > 0.0) {
                arc.length = std::isfinite(L.z_bot) ? (L.z_bot - z) / s_th : kInf;
                exit_dir = 1;
            } else if (s_th < 0.0) {
                arc.length = (L.z_top - z) / s_th;
                exit_dir = -1;
            } else {
                arc.length = kInf;
            }
        } else if (L.g > 0.0) {
            if (going_down) {
                const double cb = xi * L.speed(L.z_bot);
                if (cb <= 1.0) {
                    arc.th1 = std::acos(cb);
                    exit_dir = 1;
                } else {
                    arc.th1 = -std::acos(std::min(1.0, xi * L.c_top));
                    exit_dir = -1;
                    lower_turn = true;
                }
            } else {
                arc.th1 = -std::acos(std::min(1.0, xi * L.c_top));
                exit_dir = -1;
            }
        } else {
            if (!going_down) {
                const double ct = xi * L.c_top;
                if (ct <= 1.0) {
                    arc.th1 = -std::acos(ct);
                    exit_dir = -1;
                } else {
                    arc.th1 = std::acos(std::min(1.0, xi * L.speed(L.z_bot)));
                    exit_dir = 1;
                    upper_turn = true;
                }
            } else {
                arc.th1 = std::acos(std::min(1.0, xi * L.speed(L.z_bot)));
                exit_dir = 1;
            }
        }

        // Truncate at the maximum range.
        double u_end = 1.0;
        bool hits_range = false;
        const double r_exit = arc.straight() && !std::isfinite(arc.length) ? kInf : arc.range(1.0);
        if (r_exit >= max_range) {
            u_end = arc.straight() && !std::isfinite(arc.length)
                        ? 0.0
                        : std::clamp(arc.u_at_range(max_range), 0.0, 1.0);
            hits_range = true;
            if (arc.straight() && !std::isfinite(arc.length)) {
                arc.length = (max_range - r) / std::cos(arc.th0);
                u_end = 1.0;
            }
        }
        const double r_end = hits_range ? max_range : arc.range(u_end);

        // Bottom intersection on [0, u_end].
        std::optional<double> u_hit;
        {
            double z_deep = std::max(z, arc.depth(u_end));
            if (lower_turn) z_deep = std::max(z_deep, z + (1.0 / xi - c) / L.g);
            if (z_deep >= bathy_min_between(bathy, std::min(r, r_end), std::max(r, r_end)) - 1e-9) {
                std::vector<double> us;
                constexpr int kSamples = 32;
                for (int k = 1; k <= kSamples; ++k) us.push_back(u_end * k / kSamples);
                for (const auto& s : bathy.samples()) {
                    if (s.range > r && s.range < r_end) us.push_back(std::clamp(arc.u_at_range(s.range), 0.0, u_end));
                }
                std::sort(us.begin(), us.end());
                auto f = [&](double u) { return arc.depth(u) - bathy.depth_at(arc.range(u)); };
                double prev = 0.0;
                for (double u : us) {
                    if (u <= 0.0) continue;
                    if (f(u) >= -1e-9) {
                        double a = prev;
                        double b = u;
                        for (int it = 0; it < 100 && b - a > 1e-15; ++it) {
                            const double m = 0.5 * (a + b);
                            (f(m) >= -1e-9 ? b : a) = m;
                        }
                        u_hit = b;
                        break;
                    }
                    prev = u;
                }
            }
        }

        // Turning vertex inside the travelled part of the arc.
        auto record_vertex = [&](double u_limit) {
            if (!options.record_waypoints || arc.straight() || !(lower_turn || upper_turn)) return;
            const double u_v = -arc.th0 / (arc.th1 - arc.th0);
            if (u_v > 0.0 && u_v < u_limit) path.waypoints.push_back({arc.range(u_v), arc.depth(u_v), arc.time(u_v), 0.0});
        };

        if (u_hit) {
            const double u = *u_hit;
            record_vertex(u);
            const double th_hit = arc.theta(u);
            const double r_hit = arc.range(u);
            const double t_hit = arc.time(u);
            r = r_hit;
            z = bathy.depth_at(r_hit);
            t = t_hit;
            th = th_hit;
            if (!arc.straight() && u > 0.0) {
                if (lower_turn && th_hit < 0.0) {
                    const double zt = layers[li].z_top + (1.0 / xi - L.c_top) / L.g;
                    (zt > options.deep_turn_depth ? path.deep_inversions : path.shallow_inversions)++;
                }
                if (upper_turn && th_hit > 0.0) ++path.upper_turns;
            }
            record();
            const double alpha = std::atan(bathy.slope_at(r_hit));
            const double grazing = th_hit - alpha;
            path.bottom_grazing.push_back(std::abs(grazing));
            path.bottom_speed.push_back(env.speed_at(z));
            ++path.bottom_bounces;
            th = 2.0 * alpha - th_hit;
            if (std::abs(th) >= kPi / 2) {
                path.reversed = true;
                break;
            }
            if (path.bottom_bounces >= options.max_bottom_bounces) break;
            dir = th > 0.0 ? 1 : -1;
            li = layer_index(layers, z, dir);
            idle = 0;
            continue;
        }

        record_vertex(u_end);
        const double r_new = arc.range(u_end);
        const double z_new = arc.depth(u_end);
        const double t_new = arc.time(u_end);
        const double th_new = arc.theta(u_end);
        if (!arc.straight()) {
            if (lower_turn && th_new < 0.0) {
                const double zt = L.z_top + (1.0 / xi - L.c_top) / L.g;
                (zt > options.deep_turn_depth ? path.deep_inversions : path.shallow_inversions)++;
            }
            if (upper_turn && th_new > 0.0) ++path.upper_turns;
        }
        idle = (r_new == r && th == 0.0 && th_new == 0.0) ? idle + 1 : 0;
        r = hits_range ? max_range : r_new;
        t = t_new;
        th = th_new;
        if (hits_range) {
            z = z_new;
            record();
            path.reached_range = true;
            break;
        }
        z = exit_dir > 0 ? L.z_bot : (exit_dir < 0 ? L.z_top : z_new);
        record();
        if (exit_dir < 0) {
            if (li == 0) {
                th = -th;
                dir = 1;
                ++path.surface_bounces;
            } else {
                --li;
                dir = -1;
            }
        } else if (exit_dir > 0) {
            ++li;
            dir = 1;
        }
    }
    path.end_range = r;
    path.end_depth = z;
    path.end_time = t;
    path.end_angle = th;
    if (options.record_waypoints && (path.waypoints.empty() || path.waypoints.back().time < t)) {
        path.waypoints.push_back({r, z, t, th});
    }
    return path;
}

std::string to_string(EndTag tag) {
    switch (tag) {
        case EndTag::RR: return "RR";
        case EndTag::SR: return "SR";
        case EndTag::RS: return "RS";
        case EndTag::SS: return "SS";
    }
    return "RR";
}

EndTag end_tag_from_string(const std::string& s) {
    if (s == "RR") return EndTag::RR;
    if (s == "SR") return EndTag::SR;
    if (s == "RS") return EndTag::RS;
    if (s == "SS") return EndTag::SS;
    throw ParseError("unknown end tag '" + s + "'");
}

std::vector<double> angle_grid(double lo, double hi, std::size_t count) {
    if (count < 2 || !(hi > lo)) throw InvalidInput("angle_grid: need count >= 2 and hi > lo");
    std::vector<double> out(count);
    for (std::size_t i = 0; i < count; ++i) out[i] = lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(count - 1);
    return out;
}

std::vector<double> default_angle_grid(double max_deg, double per_degree) {
    const auto n = static_cast<std::size_t>(std::llround(2.0 * max_deg * per_degree)) + 1;
    return angle_grid(-max_deg * kPi / 180.0, max_deg * kPi / 180.0, n);
}

std::complex<double> bottom_reflection(const BottomHalfspace& bottom, double water_speed, double water_density,
                                       double grazing) {
    using cd = std::complex<double>;
    const double delta = bottom.attenuation / (40.0 * kPi * std::log10(std::exp(1.0)));
    const cd k2 = cd(1.0, delta) / bottom.speed;  // per unit angular frequency
    const double k1 = 1.0 / water_speed;
    const double kx = k1 * std::cos(grazing);
    const double k1z = k1 * std::sin(grazing);
    cd k2z = std::sqrt(k2 * k2 - kx * kx);
    if (k2z.imag() < 0.0) k2z = -k2z;
    const cd num = bottom.density * k1z - water_density * k2z;
    const cd den = bottom.density * k1z + water_density * k2z;
    return num / den;
}

namespace {

struct Topology {
    int surface, bottom, deep, shallow, upper;
    bool operator==(const Topology&) const = default;
};

Topology topology(const RayPath& p) {
    return {p.surface_bounces, p.bottom_bounces, p.deep_inversions, p.shallow_inversions, p.upper_turns};
}

}  // namespace

ArrivalStructure find_eigenrays(const Environment& env, double zs, double zr, double range,
                                const std::vector<double>& angles, int max_bottom_bounces,
                                const EigenrayOptions& options) {
    if (!(range > 0.0)) throw InvalidInput("find_eigenrays: range must be positive");
    if (angles.size() < 2) throw InvalidInput("find_eigenrays: angle grid needs at least two angles");
    if (!(zr >= 0.0 && zr <= env.depth_at(range))) throw InvalidInput("find_eigenrays: receiver outside water column");
    RayOptions ropt = options.ray;
    ropt.record_waypoints = false;
    ropt.max_bottom_bounces = std::max(max_bottom_bounces + 1, 1);

    ArrivalStructure out;
    out.source_depth = zs;
    out.receiver_depth = zr;
    out.range = range;

    std::vector<RayPath> fan(angles.size());
    detail::parallel_for(angles.size(), options.threads,
                         [&](std::size_t i) { fan[i] = trace_ray(env, zs, angles[i], range, ropt); });

    const double c_s = env.speed_at(zs);
    const double c_r = env.speed_at(zr);
    const double rho = env.water_density();

    auto usable = [&](const RayPath& p) { return p.reached_range && p.bottom_bounces <= max_bottom_bounces; };

    // One slot per bracket keeps the output independent of scheduling.
    std::vector<std::optional<Arrival>> found(angles.size());
    std::vector<char> skipped(angles.size(), 0);
    detail::parallel_for(angles.size() - 1, options.threads, [&](std::size_t i) {
        const RayPath& a = fan[i];
        const RayPath& b = fan[i + 1];
        if (!usable(a) || !usable(b) || !(topology(a) == topology(b))) return;
        const double fa = a.end_depth - zr;
        const double fb = b.end_depth - zr;
        if (fa == 0.0 || (fa < 0.0) == (fb < 0.0)) {
            if (fa != 0.0) return;
        }
        double lo = angles[i];
        double hi = angles[i + 1];
        double flo = fa;
        RayPath best = a;
        if (fa != 0.0) {
            bool ok = false;
            for (int it = 0; it < 200; ++it) {
                const double mid = 0.5 * (lo + hi);
                RayPath p = trace_ray(env, zs, mid, range, ropt);
                if (!p.reached_range || !(topology(p) == topology(a))) break;
                const double fm = p.end_depth - zr;
                best = std::move(p);
                if (std::abs(fm) <= options.depth_tolerance || hi - lo <= options.angle_tolerance) {
                    ok = true;
                    break;
                }
                if ((fm < 0.0) == (flo < 0.0)) {
                    lo = mid;
                    flo = fm;
                } else {
                    hi = mid;
                }
            }
            if (!ok) {
                skipped[i] = 1;
                return;
            }
        }
        // Spreading from the launch-angle derivative of the depth at the receiver range.
        const double th0 = best.launch_angle;
        const double d = options.tube_step;
        RayPath p1 = trace_ray(env, zs, th0 + d, range, ropt);
        RayPath p0 = trace_ray(env, zs, th0 - d, range, ropt);
        double dzdth = 0.0;
        if (p1.reached_range && p0.reached_range && topology(p1) == topology(best) && topology(p0) == topology(best)) {
            dzdth = (p1.end_depth - p0.end_depth) / (2.0 * d);
        } else if (p1.reached_range && topology(p1) == topology(best)) {
            dzdth = (p1.end_depth - best.end_depth) / d;
        } else if (p0.reached_range && topology(p0) == topology(best)) {
            dzdth = (best.end_depth - p0.end_depth) / d;
        }
        const double cos_r = std::max(std::cos(best.end_angle), 1e-6);
        const double spread = std::max(std::abs(dzdth), 1e-3 * range);
        const double amp = std::sqrt((c_r / c_s) * std::cos(th0) / (range * spread * cos_r)) / (4.0 * kPi);

        std::complex<double> coef = (best.surface_bounces % 2 == 0) ? 1.0 : -1.0;
        for (std::size_t k = 0; k < best.bottom_grazing.size(); ++k) {
            coef *= bottom_reflection(env.bottom(), best.bottom_speed[k], rho, best.bottom_grazing[k]);
        }
        Arrival arr;
        // Residual depth mismatch converted to time along the arrival direction.
        arr.time = best.end_time + (zr - best.end_depth) * std::sin(best.end_angle) / c_r;
        arr.coefficient = coef;
        arr.amplitude = amp * std::abs(coef);
        arr.launch_angle = th0;
        arr.surface_bounces = best.surface_bounces;
        arr.bottom_bounces = best.bottom_bounces;
        arr.deep_inversions = best.deep_inversions;
        const bool src_s = th0 < 0.0;
        const bool rcv_s = best.end_angle > 0.0;
        arr.end_tag = src_s ? (rcv_s ? EndTag::SS : EndTag::SR) : (rcv_s ? EndTag::RS : EndTag::RR);
        found[i] = arr;
    });

    std::vector<Arrival> all;
    for (std::size_t i = 0; i < found.size(); ++i) {
        if (found[i]) all.push_back(*found[i]);
        out.skipped_brackets += skipped[i];
    }
    std::stable_sort(all.begin(), all.end(), [](const Arrival& x, const Arrival& y) { return x.time < y.time; });
    for (const Arrival& a : all) {
        if (!out.arrivals.empty() && a.time - out.arrivals.back().time < options.merge_tolerance) {
            Arrival& m = out.arrivals.back();
            if (a.amplitude > m.amplitude) {
                const double total = m.amplitude + a.amplitude;
                m = a;
                m.amplitude = total;
            } else {
                m.amplitude += a.amplitude;
            }
            continue;
        }
        out.arrivals.push_back(a);
    }
    return out;
}

std::array<double, 4> FourRayCluster::sorted() const {
    std::array<double, 4> t{t_rr, t_sr, t_rs, t_ss};
    std::sort(t.begin(), t.end());
    return t;
}

FourRayCluster four_ray_cluster(const ArrivalStructure& arrivals) {
    const Arrival* first = nullptr;
    for (const Arrival& a : arrivals.arrivals) {
        if (a.bottom_bounces == 0 && a.deep_inversions >= 1) {
            first = &a;
            break;
        }
    }
    if (first == nullptr) throw NotApplicable("four-ray cluster absent: no unblocked deep-inversion arrivals");
    FourRayCluster c;
    c.deep_inversions = first->deep_inversions;
    std::array<const Arrival*, 4> slot{};
    for (const Arrival& a : arrivals.arrivals) {
        if (a.bottom_bounces != 0 || a.deep_inversions != c.deep_inversions) continue;
        auto& s = slot[static_cast<std::size_t>(a.end_tag)];
        if (s == nullptr) s = &a;
    }
    for (std::size_t k = 0; k < 4; ++k) {
        if (slot[k] == nullptr) {
            throw NotApplicable("four-ray cluster absent: missing " + to_string(static_cast<EndTag>(k)) +
                                " arrival in the " + std::to_string(c.deep_inversions) + "-inversion family");
        }
    }
    c.t_rr = slot[0]->time;
    c.t_sr = slot[1]->time;
    c.t_rs = slot[2]->time;
    c.t_ss = slot[3]->time;
    return c;
}

std::array<double, 3> tdoa_signature(const FourRayCluster& cluster) {
    const auto t = cluster.sorted();
    return {t[1] - t[0], t[2] - t[1], t[3] - t[2]};
}

std::vector<std::complex<double>> ray_transfer(const ArrivalStructure& arrivals, double water_density,
                                               const TimeAxis& axis) {
    const std::size_t nb = axis.bins();
    std::vector<std::complex<double>> g(nb, {0.0, 0.0});
    const std::complex<double> calib = water_density * std::sqrt(8.0 * kPi) * std::polar(1.0, -kPi / 4.0);
    for (const Arrival& a : arrivals.arrivals) {
        if (a.amplitude == 0.0) continue;
        const double mag = a.amplitude / std::abs(a.coefficient);
        const std::complex<double> base = calib * mag * a.coefficient;
        for (std::size_t k = 0; k < nb; ++k) {
            const double w = 2.0 * kPi * axis.df() * static_cast<double>(k);
            g[k] += base * std::polar(1.0, w * a.time);
        }
    }
    return g;
}

}  // namespace icedepth
