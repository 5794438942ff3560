#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <map>
#include <tuple>

#include "icedepth/error.hpp"
#include "icedepth/rays.hpp"
#include "icedepth/signal.hpp"
#include "test_support.hpp"

using namespace icedepth;
using icedepth::test::dual_duct;
using icedepth::test::dual_duct_sill;
using icedepth::test::ideal_waveguide;
using icedepth::test::linear_gradient;

namespace {

double snell(const Environment& env, const RayPoint& p) { return std::cos(p.angle) / env.speed_at(p.depth); }

void expect_path_invariants(const Environment& env, const RayPath& path) {
    ASSERT_GE(path.waypoints.size(), 2u);
    for (std::size_t i = 0; i < path.waypoints.size(); ++i) {
        const auto& w = path.waypoints[i];
        if (i > 0) {
            EXPECT_GT(w.time, path.waypoints[i - 1].time);
        }
        EXPECT_GE(w.depth, -1e-9);
        EXPECT_LE(w.depth, env.depth_at(w.range) + 1e-6);
    }
}

}  // namespace

TEST(TraceRay, IsovelocityStraightLine) {
    const auto env = ideal_waveguide(1500, 5000);
    const double a = 0.1;
    const auto path = trace_ray(env, 100.0, a, 2000.0);
    expect_path_invariants(env, path);
    EXPECT_TRUE(path.reached_range);
    EXPECT_NEAR(path.end_range, 2000.0, 1e-9);
    EXPECT_NEAR(path.end_depth, 100.0 + 2000.0 * std::tan(a), 1e-7);
    const double t = 2000.0 / std::cos(a) / 1500.0;
    EXPECT_LT(std::abs(path.end_time - t) / t, 1e-9);
}

TEST(TraceRay, ConstantGradientArc) {
    const double c0 = 1450, g = 0.016, th = 0.2;
    const auto env = linear_gradient(c0, g, 6000);
    const double R = c0 / (g * std::cos(th));
    const double loop = 2 * R * std::sin(th);
    const auto path = trace_ray(env, 0.0, th, loop);
    expect_path_invariants(env, path);

    const auto deepest = std::max_element(path.waypoints.begin(), path.waypoints.end(),
                                          [](const RayPoint& a, const RayPoint& b) { return a.depth < b.depth; });
    const double z_turn = (c0 / std::cos(th) - c0) / g;
    EXPECT_NEAR(deepest->depth, z_turn, 0.1);
    EXPECT_NEAR(deepest->range, R * std::sin(th), 0.1);
    // Back at the surface after one loop: t = (2/g) atanh(sin th).
    EXPECT_NEAR(path.end_depth, 0.0, 1e-6);
    EXPECT_NEAR(path.end_time, 2.0 / g * std::atanh(std::sin(th)), 1e-9);
    EXPECT_EQ(path.deep_inversions + path.shallow_inversions, 1);
}

TEST(TraceRay, SnellInvariantAcrossLayers) {
    const auto& env = dual_duct();
    for (double a : {-0.25, -0.05, 0.02, 0.1, 0.31}) {
        const auto path = trace_ray(env, 300.0, a, 105000.0);
        expect_path_invariants(env, path);
        const double p0 = snell(env, path.waypoints.front());
        for (const auto& w : path.waypoints) EXPECT_NEAR(snell(env, w) / p0, 1.0, 1e-9) << "angle " << a;
    }
}

TEST(TraceRay, SillBlocksTheDeepPath) {
    // Every ray that would pass below the 400 m crest at 50 km hits the sill.
    auto depth_at_range = [](const RayPath& p, double r) {
        for (std::size_t i = 1; i < p.waypoints.size(); ++i) {
            const auto& a = p.waypoints[i - 1];
            const auto& b = p.waypoints[i];
            if (a.range <= r && b.range >= r) return a.depth + (b.depth - a.depth) * (r - a.range) / (b.range - a.range);
        }
        return -1.0;
    };
    int deep = 0;
    for (double a = 0.05; a <= 0.4; a += 0.01) {
        const auto flat = trace_ray(dual_duct(), 300.0, a, 105000.0);
        if (flat.bottom_bounces != 0 || depth_at_range(flat, 50000.0) <= 400.0) continue;
        ++deep;
        EXPECT_GE(flat.deep_inversions, 1) << a;
        EXPECT_GE(trace_ray(dual_duct_sill(), 300.0, a, 105000.0).bottom_bounces, 1) << a;
    }
    EXPECT_GT(deep, 0);
}

TEST(TraceRay, RejectsBadArguments) {
    const auto env = ideal_waveguide(1500, 1000);
    EXPECT_THROW(trace_ray(env, 10, 1.6, 100), InvalidInput);
    EXPECT_THROW(trace_ray(env, 10, 0.1, -1), InvalidInput);
    EXPECT_THROW(trace_ray(env, 1200, 0.1, 100), InvalidInput);
}

TEST(Eigenrays, IsovelocityDirectPath) {
    const auto env = ideal_waveguide(1500, 5000);
    const auto a = find_eigenrays(env, 100, 342, 1000, default_angle_grid(), 0);
    ASSERT_FALSE(a.empty());
    const double t = std::hypot(1000.0, 242.0) / 1500.0;
    const auto& first = a.arrivals.front();
    EXPECT_EQ(first.surface_bounces, 0);
    EXPECT_LT(std::abs(first.time - t) / t, 1e-9);
    // Surface image: sqrt(r^2 + (zr + zs)^2).
    const double t_img = std::hypot(1000.0, 442.0) / 1500.0;
    bool found = false;
    for (const auto& x : a.arrivals) found = found || std::abs(x.time - t_img) < 1e-9;
    EXPECT_TRUE(found);
}

TEST(Eigenrays, SortedMergedAndPositive) {
    const auto a = find_eigenrays(dual_duct(), 300, 342, 30000, default_angle_grid(), 2);
    ASSERT_FALSE(a.empty());
    for (std::size_t i = 0; i < a.arrivals.size(); ++i) {
        EXPECT_GT(a.arrivals[i].time, 0.0);
        EXPECT_GE(a.arrivals[i].amplitude, 0.0);
        if (i > 0) {
            EXPECT_GE(a.arrivals[i].time - a.arrivals[i - 1].time, 1e-4);
        }
    }
}

TEST(Eigenrays, Reciprocity) {
    const auto& env = dual_duct();
    const auto ab = find_eigenrays(env, 100, 342, 20000, default_angle_grid(), 0);
    const auto ba = find_eigenrays(env, 342, 100, 20000, default_angle_grid(), 0);
    ASSERT_EQ(ab.arrivals.size(), ba.arrivals.size());
    for (std::size_t i = 0; i < ab.arrivals.size(); ++i) EXPECT_NEAR(ab.arrivals[i].time, ba.arrivals[i].time, 1e-6);
}

TEST(Eigenrays, RefinedLayersConverge) {
    // Resample the profile at half the spacing; linear segments are unchanged
    // except for the cosine-shaped descent into the secondary minimum.
    const auto& env = dual_duct();
    std::vector<ProfileSample> fine;
    const auto& s = env.profile().samples();
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i > 0) {
            const double z = 0.5 * (s[i - 1].depth + s[i].depth);
            fine.push_back({z, env.speed_at(z)});
        }
        fine.push_back(s[i]);
    }
    const Environment env2(SoundSpeedProfile(fine), env.bathymetry(), env.bottom());
    const auto a = four_ray_cluster(find_eigenrays(env, 300, 342, 105000, default_angle_grid(), 0,
                                                   {.ray = {.deep_turn_depth = 1000}}));
    const auto b = four_ray_cluster(find_eigenrays(env2, 300, 342, 105000, default_angle_grid(), 0,
                                                   {.ray = {.deep_turn_depth = 1000}}));
    const auto sa = a.sorted();
    const auto sb = b.sorted();
    for (int i = 0; i < 4; ++i) EXPECT_LT(std::abs(sa[i] - sb[i]), 5e-5);
}

TEST(Eigenrays, DirectPathsDominateBottomBounces) {
    const auto a = find_eigenrays(dual_duct(), 300, 342, 30000, default_angle_grid(), 3);
    double direct = 0, bounced = 0;
    for (const auto& x : a.arrivals) {
        double& slot = x.bottom_bounces == 0 ? direct : bounced;
        slot = std::max(slot, x.amplitude);
    }
    ASSERT_GT(direct, 0);
    ASSERT_GT(bounced, 0);
    EXPECT_GT(direct, bounced);
}

TEST(FourRay, ClusterFromArrivalsAndSignature) {
    ArrivalStructure s;
    auto add = [&](double t, EndTag tag, int inv) {
        Arrival a;
        a.time = t;
        a.amplitude = 1;
        a.end_tag = tag;
        a.deep_inversions = inv;
        s.arrivals.push_back(a);
    };
    add(70.0, EndTag::RR, 2);
    add(70.03, EndTag::SR, 2);
    add(70.05, EndTag::RS, 2);
    add(70.08, EndTag::SS, 2);
    add(71.0, EndTag::RR, 3);
    const auto c = four_ray_cluster(s);
    EXPECT_EQ(c.deep_inversions, 2);
    EXPECT_DOUBLE_EQ(c.t_rr, 70.0);
    EXPECT_DOUBLE_EQ(c.t_ss, 70.08);
    const auto g = tdoa_signature(c);
    EXPECT_NEAR(g[0], 0.03, 1e-12);
    EXPECT_NEAR(g[1], 0.02, 1e-12);
    EXPECT_NEAR(g[2], 0.03, 1e-12);

    s.arrivals.erase(s.arrivals.begin() + 2);
    try {
        four_ray_cluster(s);
        FAIL() << "expected NotApplicable";
    } catch (const NotApplicable& e) {
        EXPECT_NE(std::string(e.what()).find("RS"), std::string::npos) << e.what();
    }
}

TEST(FourRay, SignatureArithmetic) {
    const FourRayCluster c{.t_rr = 10.0, .t_sr = 10.0 + 0.02, .t_rs = 10.0 + 0.05, .t_ss = 10.0 + 0.07};
    const auto g = tdoa_signature(c);
    EXPECT_NEAR(g[0], 0.02, 1e-12);
    EXPECT_NEAR(g[1], 0.03, 1e-12);
    EXPECT_NEAR(g[2], 0.02, 1e-12);
}

TEST(FourRay, DegenerateAndSymmetricGeometry) {
    const auto env = linear_gradient(1450, 0.016, 6000);
    const RayOptions ro{.deep_turn_depth = 500};
    // Both geometries put paired arrivals inside the default merge window.
    const EigenrayOptions unmerged{.ray = ro, .merge_tolerance = 0.0};
    const auto near_surface = four_ray_cluster(find_eigenrays(env, 0.5, 342, 30000, default_angle_grid(), 0, unmerged));
    EXPECT_LT(std::abs(near_surface.t_sr - near_surface.t_rr), 1e-3);
    EXPECT_LT(std::abs(near_surface.t_ss - near_surface.t_rs), 1e-3);
    const auto g = tdoa_signature(near_surface);
    EXPECT_LT(std::min({g[0], g[1], g[2]}), 1e-3);

    const auto same = four_ray_cluster(find_eigenrays(env, 342, 342, 30000, default_angle_grid(), 0, unmerged));
    EXPECT_NEAR(same.t_sr, same.t_rs, 1e-6);
}

TEST(FourRay, SignaturesSeparateSourceDepths) {
    const auto& env = dual_duct();
    const EigenrayOptions opt{.ray = {.deep_turn_depth = 1000}};
    std::vector<std::array<double, 3>> sigs;
    for (double zs : {100.0, 200.0, 300.0}) {
        sigs.push_back(tdoa_signature(four_ray_cluster(find_eigenrays(env, zs, 342, 105000, default_angle_grid(), 0, opt))));
    }
    for (std::size_t i = 0; i < sigs.size(); ++i) {
        for (std::size_t j = i + 1; j < sigs.size(); ++j) {
            double d = 0;
            for (int k = 0; k < 3; ++k) d = std::max(d, std::abs(sigs[i][k] - sigs[j][k]));
            EXPECT_GT(d, 5e-3);
        }
    }
}

TEST(FourRay, MatchesBruteForceAngleScan) {
    // Constant gradient, 105 km: scan launch angles at 1e-5 rad and interpolate
    // the receiver-depth crossings of each ray topology.
    const auto env = linear_gradient(1450, 0.016, 8000);
    const double zs = 300, zr = 342, r = 105000;
    const RayOptions ro{.deep_turn_depth = 500, .record_waypoints = false};
    const auto cluster = four_ray_cluster(find_eigenrays(env, zs, zr, r, default_angle_grid(), 0, {.ray = ro}));

    using Key = std::tuple<int, int, int, bool>;
    std::vector<double> crossings;
    RayPath prev;
    bool have_prev = false;
    for (double a = -0.45; a <= 0.45; a += 1e-5) {
        const auto p = trace_ray(env, zs, a, r, ro);
        if (have_prev && p.reached_range && prev.reached_range && p.bottom_bounces == 0 && prev.bottom_bounces == 0) {
            const Key k1{p.surface_bounces, p.deep_inversions, p.upper_turns, p.end_angle > 0};
            const Key k0{prev.surface_bounces, prev.deep_inversions, prev.upper_turns, prev.end_angle > 0};
            const double d0 = prev.end_depth - zr;
            const double d1 = p.end_depth - zr;
            if (k0 == k1 && d0 * d1 <= 0 && d0 != d1) {
                const double w = d0 / (d0 - d1);
                crossings.push_back(prev.end_time + w * (p.end_time - prev.end_time));
            }
        }
        prev = p;
        have_prev = true;
    }
    ASSERT_GE(crossings.size(), 4u);
    auto nearest = [&](double t) {
        double best = 1e9;
        for (double c : crossings) best = std::min(best, std::abs(c - t));
        return best;
    };
    for (double t : cluster.sorted()) EXPECT_LT(nearest(t), 2e-4) << t;
}

TEST(BottomReflection, NormalIncidenceAndTotalReflection) {
    BottomHalfspace b{1600, 1800, 0.0};
    const auto r_normal = bottom_reflection(b, 1500, 1000, M_PI / 2);
    const double z1 = 1000 * 1500.0, z2 = 1800 * 1600.0;
    EXPECT_NEAR(r_normal.real(), (z2 - z1) / (z2 + z1), 1e-12);
    EXPECT_NEAR(r_normal.imag(), 0.0, 1e-12);
    const double critical = std::acos(1500.0 / 1600.0);
    EXPECT_NEAR(std::abs(bottom_reflection(b, 1500, 1000, 0.5 * critical)), 1.0, 1e-12);
    b.attenuation = 0.5;
    EXPECT_LT(std::abs(bottom_reflection(b, 1500, 1000, 0.5 * critical)), 1.0);
}

TEST(RayTransfer, DelayedPulsePeaksAtArrivalTime) {
    ArrivalStructure s;
    Arrival a;
    a.time = 12.3456;
    a.amplitude = 1e-4;
    s.arrivals.push_back(a);
    const double fs = 1000;
    const TimeAxis axis{10.0, fs, 8192};
    const auto pulse = make_pulse(PulseKind::Impulse, 20, 100, fs, 2.0);
    const auto x = render_signal(source_spectrum(pulse, axis), ray_transfer(s, 1000.0, axis), axis);
    std::size_t best = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (std::abs(x.samples[i]) > std::abs(x.samples[best])) best = i;
    }
    // The common e^{-i pi/4} factor moves the extremum by under one carrier period.
    EXPECT_NEAR(x.time(best), a.time, 1.0 / 60.0);
}
