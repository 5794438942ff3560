#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "icedepth/error.hpp"
#include "icedepth/io.hpp"
#include "icedepth/pipeline.hpp"
#include "test_support.hpp"

using namespace icedepth;
namespace fs = std::filesystem;

namespace {

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / name) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

ScenarioConfig small_scenario() {
    ScenarioConfig c;
    c.environment = icedepth::test::data_path("ideal_300.env");
    c.source_depth = 50;
    c.receiver_depth = 150;
    c.range = 20000;
    c.sample_rate = 500;
    c.modes = 3;
    c.nz = 600;
    c.rays = false;
    c.window_start = 12;
    c.window_length = 8;
    c.warp_family = WarpFamily::Reflective;
    c.c_ref = 1500;
    c.threads = 1;
    return c;
}

}  // namespace

TEST(Config, TextRoundTrip) {
    ScenarioConfig c = small_scenario();
    c.snr_db = 12.5;
    c.seed = 99;
    c.emit = TableFormat::Json;
    const auto text = format_scenario(c);
    const auto back = parse_scenario(text);
    EXPECT_EQ(format_scenario(back), text);
    EXPECT_EQ(back.snr_db, 12.5);
    EXPECT_EQ(back.warp_family, WarpFamily::Reflective);
}

TEST(Config, ParsesJsonAndResolvesRelativeEnvironment) {
    const auto c = parse_scenario(R"({"config": {"environment": "env/a.env", "source_depth_m": 120, "pulse": "chirp"}})",
                                  "/data/run");
    EXPECT_EQ(c.environment, fs::path("/data/run/env/a.env"));
    EXPECT_EQ(c.source_depth, 120);
    EXPECT_EQ(c.pulse, PulseKind::Chirp);
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
    EXPECT_THROW(parse_scenario("source_depth = 10\n"), ParseError);
    EXPECT_THROW(parse_scenario("source_depth_m = deep\n"), ParseError);
    ScenarioConfig c = small_scenario();
    c.f_hi = 10;
    EXPECT_THROW(c.validate(), InvalidInput);
    c = small_scenario();
    c.environment = "/nonexistent/x.env";
    EXPECT_THROW(cmd_simulate(c, {fs::temp_directory_path() / "icedepth_missing_env"}), Error);
    EXPECT_FALSE(fs::exists(fs::temp_directory_path() / "icedepth_missing_env" / "signal.txt"));
}

TEST(Config, EveryFieldRoundTripsThroughItsSetter) {
    const ScenarioConfig base = small_scenario();
    for (const auto& f : config_fields()) {
        ScenarioConfig c = base;
        f.set(c, f.get(base));
        EXPECT_EQ(f.get(c), f.get(base)) << f.key;
        EXPECT_FALSE(f.help.empty()) << f.key;
    }
}

TEST(Signals, TextAndWaveRoundTrip) {
    TempDir dir("icedepth_io_test");
    PulseSignal s{{0.0, 0.25, -1.0 / 3.0, 1e-7, 0.5}, 1000.0, 70.123456789};
    const auto back = parse_signal_text(format_signal_text(s));
    EXPECT_EQ(back.samples, s.samples);
    EXPECT_EQ(back.t0, s.t0);
    EXPECT_EQ(back.sample_rate, s.sample_rate);

    write_signal(s, dir.path / "x.wav", {20, 100});
    SignalMeta meta;
    const auto w = read_signal(dir.path / "x.wav", &meta);
    EXPECT_EQ(w.t0, s.t0);
    EXPECT_EQ(meta.f_lo, 20);
    EXPECT_EQ(meta.f_hi, 100);
    ASSERT_EQ(w.size(), s.size());
    for (std::size_t i = 0; i < s.size(); ++i) EXPECT_NEAR(w.samples[i], s.samples[i], 1e-7);
    EXPECT_THROW(parse_signal_text("time_s\tamplitude\n0\tx\n"), ParseError);
}

TEST(Tables, DetectionsAndLimitsRoundTrip) {
    TempDir dir("icedepth_table_test");
    const std::vector<DetectedArrival> d{{70.1, 1.0}, {70.15, 0.5}};
    const std::vector<UpperLimit> u{{1, false, 48.5}, {2, true, 100.0}};
    for (auto f : {TableFormat::Tsv, TableFormat::Json}) {
        write_text_file(dir.path / ("d" + extension(f)), format_detections(d, f));
        write_text_file(dir.path / ("u" + extension(f)), format_upper_limits(u, f));
        const auto d2 = read_detections(dir.path / ("d" + extension(f)));
        ASSERT_EQ(d2.size(), 2u);
        EXPECT_EQ(d2[1].time, 70.15);
        const auto u2 = read_upper_limits(dir.path / ("u" + extension(f)));
        ASSERT_EQ(u2.size(), 2u);
        EXPECT_EQ(u2[0].frequency, 48.5);
        EXPECT_TRUE(u2[1].at_band_edge);
    }
}

TEST(Noise, SeededAndAtRequestedLevel) {
    PulseSignal a{std::vector<double>(20000), 1000.0, 0.0};
    for (std::size_t i = 0; i < a.size(); ++i) a.samples[i] = std::sin(0.3 * static_cast<double>(i));
    const PulseSignal clean = a;
    PulseSignal b = a;
    add_noise(a, 10.0, 5);
    add_noise(b, 10.0, 5);
    EXPECT_EQ(a.samples, b.samples);
    double noise = 0, sig = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        noise += std::pow(a.samples[i] - clean.samples[i], 2);
        sig += clean.samples[i] * clean.samples[i];
    }
    EXPECT_NEAR(10 * std::log10(sig / noise), 10.0, 0.2);
    PulseSignal c = clean;
    add_noise(c, 10.0, 6);
    EXPECT_NE(c.samples, a.samples);
}

TEST(Commands, SimulateAnalyzeEstimateWriteDeclaredOutputs) {
    TempDir dir("icedepth_cmd_test");
    const auto cfg = small_scenario();
    const auto sim = cmd_simulate(cfg, {dir.path / "sim"});
    for (const auto& f : sim.outputs) EXPECT_TRUE(fs::exists(dir.path / "sim" / f)) << f;
    EXPECT_TRUE(fs::exists(dir.path / "sim" / "signal.txt"));
    EXPECT_TRUE(fs::exists(dir.path / "sim" / "simulate_report.json"));

    const auto ana = cmd_analyze(cfg, dir.path / "sim" / "signal.txt", {dir.path / "ana"});
    for (const auto& f : ana.outputs) EXPECT_TRUE(fs::exists(dir.path / "ana" / f)) << f;
    EXPECT_TRUE(fs::exists(dir.path / "ana" / "modes" / "mode_01.txt"));

    const auto est = cmd_estimate(cfg, dir.path / "ana", {Method::Amplitude}, {dir.path / "est"});
    ASSERT_EQ(est.outcomes.size(), 1u);
    ASSERT_TRUE(est.outcomes[0].estimate.has_value()) << est.outcomes[0].inapplicable;
    // |sin(m pi z / D)| cannot tell z from D - z in an isovelocity guide.
    const double d = est.outcomes[0].estimate->depth;
    EXPECT_LE(std::min(std::abs(d - 50.0), std::abs(d - 250.0)), 15.0) << d;
    const auto report = read_text_file(dir.path / "est" / "estimate_report.json");
    EXPECT_NE(report.find("\"config\""), std::string::npos);
    EXPECT_EQ(report.find("timings_s"), std::string::npos);

    // Existing outputs are kept unless forced.
    EXPECT_THROW(cmd_simulate(cfg, {dir.path / "sim"}), InvalidInput);
    EXPECT_NO_THROW(cmd_simulate(cfg, {dir.path / "sim", true}));
}

TEST(Commands, FailureLeavesNoPartialOutputs) {
    TempDir dir("icedepth_fail_test");
    auto cfg = small_scenario();
    cmd_simulate(cfg, {dir.path / "sim"});
    cfg.stft_window = 20.0;  // longer than the 8 s signal
    EXPECT_THROW(cmd_analyze(cfg, dir.path / "sim" / "signal.txt", {dir.path / "ana"}), Error);
    if (fs::exists(dir.path / "ana")) {
        EXPECT_TRUE(fs::is_empty(dir.path / "ana"));
    }
}
