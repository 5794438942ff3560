#include "icedepth/io.hpp"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "icedepth/error.hpp"
#include "text_util.hpp"

namespace icedepth {

namespace {

using nlohmann::json;
using detail::format_double;

json num(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

double get_num(const json& j) { return j.is_null() ? std::nan("") : j.get<double>(); }

std::string dump(const json& j, int indent = 2) { return j.dump(indent) + "\n"; }

// Splits TSV text into rows of fields, skipping comment lines and the header.
std::vector<std::vector<std::string>> tsv_rows(const std::string& text, const std::string& what) {
    std::vector<std::vector<std::string>> rows;
    std::istringstream in(text);
    std::string line;
    bool header = true;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        if (header) {
            header = false;
            continue;
        }
        std::vector<std::string> f;
        std::size_t pos = 0;
        for (;;) {
            const auto tab = line.find('\t', pos);
            f.push_back(line.substr(pos, tab == std::string::npos ? std::string::npos : tab - pos));
            if (tab == std::string::npos) break;
            pos = tab + 1;
        }
        rows.push_back(std::move(f));
    }
    if (header) throw ParseError(what + ": missing header line");
    return rows;
}

double field(const std::vector<std::string>& row, std::size_t i, const std::string& where) {
    if (i >= row.size()) throw ParseError(where + ": missing column " + std::to_string(i + 1));
    if (row[i] == "nan" || row[i] == "NaN") return std::nan("");
    return detail::parse_double(row[i], where);
}

json parse_json(const std::string& text, const std::string& what) {
    try {
        return json::parse(text);
    } catch (const json::exception& e) {
        throw ParseError(what + ": " + e.what());
    }
}

}  // namespace

TableFormat table_format_from_string(const std::string& s) {
    if (s == "tsv") return TableFormat::Tsv;
    if (s == "json") return TableFormat::Json;
    throw ParseError("unknown table format '" + s + "' (expected json or tsv)");
}

std::string extension(TableFormat f) { return f == TableFormat::Json ? ".json" : ".tsv"; }

std::string format_dispersion_table(const DispersionTable& t, TableFormat f) {
    if (f == TableFormat::Json) {
        json rows = json::array();
        for (int m = 1; m <= t.max_modes; ++m) {
            for (std::size_t i = 0; i < t.frequencies.size(); ++i) {
                const auto& c = t.at(m, i);
                if (!c.present) continue;
                rows.push_back({{"mode", m}, {"frequency_hz", t.frequencies[i]}, {"k_rad_m", c.k}, {"vg_mps", c.group_speed}});
            }
        }
        return dump({{"dispersion", rows}});
    }
    std::string s = "mode\tfrequency_hz\tk_rad_m\tvg_mps\n";
    for (int m = 1; m <= t.max_modes; ++m) {
        for (std::size_t i = 0; i < t.frequencies.size(); ++i) {
            const auto& c = t.at(m, i);
            if (!c.present) continue;
            s += std::to_string(m) + "\t" + format_double(t.frequencies[i]) + "\t" + format_double(c.k) + "\t" +
                 format_double(c.group_speed) + "\n";
        }
    }
    return s;
}

std::string format_cutoff_curve(const CutoffCurve& c, TableFormat f) {
    if (f == TableFormat::Json) {
        json rows = json::array();
        for (int m = 1; m <= c.mode_count(); ++m) {
            for (const auto& p : c.modes[static_cast<std::size_t>(m - 1)]) {
                rows.push_back({{"mode", m}, {"frequency_hz", p.frequency}, {"max_depth_m", p.max_depth}});
            }
        }
        return dump({{"threshold", c.threshold}, {"cutoff", rows}});
    }
    std::string s = "# threshold " + format_double(c.threshold) + "\nmode\tfrequency_hz\tmax_depth_m\n";
    for (int m = 1; m <= c.mode_count(); ++m) {
        for (const auto& p : c.modes[static_cast<std::size_t>(m - 1)]) {
            s += std::to_string(m) + "\t" + format_double(p.frequency) + "\t" + format_double(p.max_depth) + "\n";
        }
    }
    return s;
}

std::string format_arrivals(const ArrivalStructure& a, TableFormat f) {
    if (f == TableFormat::Json) {
        json rows = json::array();
        for (const Arrival& x : a.arrivals) {
            rows.push_back({{"time_s", x.time},
                            {"amplitude", x.amplitude},
                            {"endTag", to_string(x.end_tag)},
                            {"surfBounces", x.surface_bounces},
                            {"botBounces", x.bottom_bounces},
                            {"inversions", x.deep_inversions},
                            {"launch_rad", x.launch_angle}});
        }
        return dump({{"source_depth_m", a.source_depth},
                     {"receiver_depth_m", a.receiver_depth},
                     {"range_m", a.range},
                     {"arrivals", rows}});
    }
    std::string s = "# source_depth_m " + format_double(a.source_depth) + "\n# receiver_depth_m " +
                    format_double(a.receiver_depth) + "\n# range_m " + format_double(a.range) +
                    "\ntime_s\tamplitude\tendTag\tsurfBounces\tbotBounces\tinversions\tlaunch_rad\n";
    for (const Arrival& x : a.arrivals) {
        s += format_double(x.time) + "\t" + format_double(x.amplitude) + "\t" + to_string(x.end_tag) + "\t" +
             std::to_string(x.surface_bounces) + "\t" + std::to_string(x.bottom_bounces) + "\t" +
             std::to_string(x.deep_inversions) + "\t" + format_double(x.launch_angle) + "\n";
    }
    return s;
}

std::string format_spectrogram(const Spectrogram& s, TableFormat f) {
    if (f == TableFormat::Json) {
        json mag = json::array();
        for (std::size_t m = 0; m < s.frames(); ++m) {
            json row = json::array();
            for (std::size_t k = 0; k < s.bins(); ++k) row.push_back(s.at(m, k));
            mag.push_back(std::move(row));
        }
        return dump({{"window", s.window},
                     {"window_length_s", s.window_length},
                     {"hop_s", s.hop},
                     {"times_s", s.times},
                     {"frequencies_hz", s.frequencies},
                     {"magnitude", mag}},
                    -1);
    }
    std::string out = "# window " + s.window + " length_s " + format_double(s.window_length) + " hop_s " +
                      format_double(s.hop) + "\ntime_s\tfrequency_hz\tmagnitude\n";
    for (std::size_t m = 0; m < s.frames(); ++m) {
        const std::string t = format_double(s.times[m]) + "\t";
        for (std::size_t k = 0; k < s.bins(); ++k) {
            out += t + format_double(s.frequencies[k]) + "\t" + format_double(s.at(m, k)) + "\n";
        }
    }
    return out;
}

std::string format_dispersion_curves(const std::vector<DispersionCurve>& c, TableFormat f) {
    if (f == TableFormat::Json) {
        json rows = json::array();
        for (const auto& curve : c) {
            for (const auto& p : curve.points) {
                rows.push_back({{"mode", curve.mode_index}, {"frequency_hz", p.frequency}, {"arrival_s", p.time}});
            }
        }
        return dump({{"curves", rows}});
    }
    std::string s = "mode\tfrequency_hz\tarrival_s\n";
    for (const auto& curve : c) {
        for (const auto& p : curve.points) {
            s += std::to_string(curve.mode_index) + "\t" + format_double(p.frequency) + "\t" + format_double(p.time) + "\n";
        }
    }
    return s;
}

std::string format_amplitude_matrix(const ModeAmplitudeMatrix& m, TableFormat f) {
    if (f == TableFormat::Json) {
        json rows = json::array();
        for (std::size_t r = 0; r < m.modes(); ++r) rows.push_back(m.values[r]);
        json usable = json::array();
        for (bool u : m.usable) usable.push_back(u);
        return dump({{"frequencies_hz", m.frequencies}, {"modes", m.mode_indices}, {"amplitude", rows}, {"usable", usable}});
    }
    std::string s = "frequency_hz\tusable";
    for (int idx : m.mode_indices) s += "\tmode" + std::to_string(idx);
    s += "\n";
    for (std::size_t j = 0; j < m.frequencies.size(); ++j) {
        s += format_double(m.frequencies[j]) + "\t" + (m.usable[j] ? "1" : "0");
        for (std::size_t r = 0; r < m.modes(); ++r) s += "\t" + format_double(m.values[r][j]);
        s += "\n";
    }
    return s;
}

std::string format_upper_limits(const std::vector<UpperLimit>& u, TableFormat f) {
    if (f == TableFormat::Json) {
        json rows = json::array();
        for (const auto& x : u) {
            rows.push_back({{"mode", x.mode_index}, {"upper_limit_hz", x.frequency}, {"at_band_edge", x.at_band_edge}});
        }
        return dump({{"upper_limits", rows}});
    }
    std::string s = "mode\tupper_limit_hz\tat_band_edge\n";
    for (const auto& x : u) {
        s += std::to_string(x.mode_index) + "\t" + format_double(x.frequency) + "\t" + (x.at_band_edge ? "1" : "0") + "\n";
    }
    return s;
}

std::string format_detections(const std::vector<DetectedArrival>& d, TableFormat f) {
    if (f == TableFormat::Json) {
        json rows = json::array();
        for (const auto& x : d) rows.push_back({{"time_s", x.time}, {"strength", x.strength}});
        return dump({{"detections", rows}});
    }
    std::string s = "time_s\tstrength\n";
    for (const auto& x : d) s += format_double(x.time) + "\t" + format_double(x.strength) + "\n";
    return s;
}

std::string format_surface(const AmbiguitySurface& s, TableFormat f) {
    if (f == TableFormat::Json) {
        return dump({{"depth_m", s.depths}, {"score", s.score}, {"argmax_m", s.argmax}});
    }
    std::string out = "depth_m\tscore\n";
    for (std::size_t i = 0; i < s.depths.size(); ++i) {
        out += format_double(s.depths[i]) + "\t" + format_double(s.score[i]) + "\n";
    }
    return out;
}

namespace {

json estimate_json(const DepthEstimate& e) {
    json j;
    j["method"] = to_string(e.method);
    j["depth_m"] = e.depth;
    j[e.quality_name.empty() ? "quality" : e.quality_name] = num(e.quality);
    if (e.ambiguity) {
        j["grid"] = e.ambiguity->depths;
        json surf = json::array();
        for (double v : e.ambiguity->score) surf.push_back(num(v));
        j["surface"] = surf;
        json peaks = json::array();
        for (const auto& p : e.ambiguity->secondary_peaks) peaks.push_back({{"depth_m", p.depth}, {"score", p.score}});
        j["secondary_peaks"] = peaks;
    }
    if (!e.candidates.empty()) {
        json c = json::array();
        for (const auto& x : e.candidates) c.push_back({{"mode", x.mode}, {"depth_m", x.depth}});
        j["candidates"] = c;
    }
    j["caveats"] = e.caveats;
    return j;
}

}  // namespace

std::string format_estimate_json(const DepthEstimate& e, int indent) { return dump(estimate_json(e), indent); }

std::string format_applicability_json(const ApplicabilityReport& r, int indent) {
    return dump({{"ray_applicable", r.ray_applicable},
                 {"ray_reason", r.ray_reason},
                 {"modes_applicable", r.modes_applicable},
                 {"trapped_modes", r.trapped_modes},
                 {"cutoff_receiver_floor", r.cutoff_receiver_floor},
                 {"notes", r.notes}},
                indent);
}

// ---- readers ------------------------------------------------------------------

ArrivalStructure read_arrivals(const std::filesystem::path& path) {
    const std::string text = read_text_file(path);
    const std::string where = path.string();
    ArrivalStructure a;
    if (path.extension() == ".json") {
        const json j = parse_json(text, where);
        a.source_depth = j.at("source_depth_m").get<double>();
        a.receiver_depth = j.at("receiver_depth_m").get<double>();
        a.range = j.at("range_m").get<double>();
        for (const auto& r : j.at("arrivals")) {
            Arrival x;
            x.time = r.at("time_s").get<double>();
            x.amplitude = r.at("amplitude").get<double>();
            x.end_tag = end_tag_from_string(r.at("endTag").get<std::string>());
            x.surface_bounces = r.at("surfBounces").get<int>();
            x.bottom_bounces = r.at("botBounces").get<int>();
            x.deep_inversions = r.at("inversions").get<int>();
            x.launch_angle = r.value("launch_rad", 0.0);
            a.arrivals.push_back(x);
        }
        return a;
    }
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (line.rfind("# ", 0) != 0) continue;
        std::istringstream ls(line.substr(2));
        std::string key;
        double v = 0.0;
        ls >> key >> v;
        if (key == "source_depth_m") a.source_depth = v;
        if (key == "receiver_depth_m") a.receiver_depth = v;
        if (key == "range_m") a.range = v;
    }
    for (const auto& row : tsv_rows(text, where)) {
        Arrival x;
        x.time = field(row, 0, where);
        x.amplitude = field(row, 1, where);
        if (row.size() < 6) throw ParseError(where + ": arrival rows need 6 columns");
        x.end_tag = end_tag_from_string(row[2]);
        x.surface_bounces = static_cast<int>(field(row, 3, where));
        x.bottom_bounces = static_cast<int>(field(row, 4, where));
        x.deep_inversions = static_cast<int>(field(row, 5, where));
        if (row.size() > 6) x.launch_angle = field(row, 6, where);
        a.arrivals.push_back(x);
    }
    return a;
}

ModeAmplitudeMatrix read_amplitude_matrix(const std::filesystem::path& path) {
    const std::string text = read_text_file(path);
    const std::string where = path.string();
    ModeAmplitudeMatrix m;
    if (path.extension() == ".json") {
        const json j = parse_json(text, where);
        m.frequencies = j.at("frequencies_hz").get<std::vector<double>>();
        m.mode_indices = j.at("modes").get<std::vector<int>>();
        for (const auto& row : j.at("amplitude")) {
            std::vector<double> r;
            for (const auto& v : row) r.push_back(get_num(v));
            m.values.push_back(std::move(r));
        }
        for (const auto& u : j.at("usable")) m.usable.push_back(u.get<bool>());
        return m;
    }
    std::istringstream in(text);
    std::string header;
    std::getline(in, header);
    std::size_t pos = 0;
    while ((pos = header.find("mode", pos)) != std::string::npos) {
        pos += 4;
        std::size_t end = header.find('\t', pos);
        m.mode_indices.push_back(std::stoi(header.substr(pos, end == std::string::npos ? std::string::npos : end - pos)));
    }
    m.values.assign(m.mode_indices.size(), {});
    for (const auto& row : tsv_rows(text, where)) {
        m.frequencies.push_back(field(row, 0, where));
        m.usable.push_back(field(row, 1, where) != 0.0);
        for (std::size_t r = 0; r < m.mode_indices.size(); ++r) m.values[r].push_back(field(row, 2 + r, where));
    }
    return m;
}

std::vector<UpperLimit> read_upper_limits(const std::filesystem::path& path) {
    const std::string text = read_text_file(path);
    const std::string where = path.string();
    std::vector<UpperLimit> out;
    if (path.extension() == ".json") {
        const json j = parse_json(text, where);
        for (const auto& r : j.at("upper_limits")) {
            out.push_back({r.at("mode").get<int>(), r.at("at_band_edge").get<bool>(), r.at("upper_limit_hz").get<double>()});
        }
        return out;
    }
    for (const auto& row : tsv_rows(text, where)) {
        out.push_back({static_cast<int>(field(row, 0, where)), field(row, 2, where) != 0.0, field(row, 1, where)});
    }
    return out;
}

std::vector<DetectedArrival> read_detections(const std::filesystem::path& path) {
    const std::string text = read_text_file(path);
    const std::string where = path.string();
    std::vector<DetectedArrival> out;
    if (path.extension() == ".json") {
        const json j = parse_json(text, where);
        for (const auto& r : j.at("detections")) out.push_back({r.at("time_s").get<double>(), r.at("strength").get<double>()});
        return out;
    }
    for (const auto& row : tsv_rows(text, where)) out.push_back({field(row, 0, where), field(row, 1, where)});
    return out;
}

// ---- signals --------------------------------------------------------------------

std::string format_signal_text(const PulseSignal& s) {
    std::string out = "# sample_rate_hz " + format_double(s.sample_rate) + "\n# t0_s " + format_double(s.t0) +
                      "\ntime_s\tamplitude\n";
    for (std::size_t i = 0; i < s.size(); ++i) out += format_double(s.time(i)) + "\t" + format_double(s.samples[i]) + "\n";
    return out;
}

PulseSignal parse_signal_text(const std::string& text) {
    PulseSignal s;
    double rate = 0.0;
    double t0 = std::nan("");
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (line.rfind("# ", 0) != 0) continue;
        std::istringstream ls(line.substr(2));
        std::string key;
        std::string v;
        ls >> key >> v;
        if (key == "sample_rate_hz") rate = detail::parse_double(v, "signal header");
        if (key == "t0_s") t0 = detail::parse_double(v, "signal header");
    }
    std::vector<double> times;
    for (const auto& row : tsv_rows(text, "signal")) {
        times.push_back(field(row, 0, "signal"));
        s.samples.push_back(field(row, 1, "signal"));
    }
    if (s.samples.size() < 2) throw ParseError("signal: need at least two samples");
    if (rate <= 0.0) rate = static_cast<double>(times.size() - 1) / (times.back() - times.front());
    if (std::isnan(t0)) t0 = times.front();
    s.sample_rate = rate;
    s.t0 = t0;
    s.validate();
    return s;
}

namespace {

void put_u32(std::string& b, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) b.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
void put_u16(std::string& b, std::uint16_t v) {
    for (int i = 0; i < 2; ++i) b.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
std::uint32_t get_u32(const std::string& b, std::size_t at) {
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(b[at + static_cast<std::size_t>(i)]);
    return v;
}
std::uint16_t get_u16(const std::string& b, std::size_t at) {
    return static_cast<std::uint16_t>(static_cast<unsigned char>(b[at]) | (static_cast<unsigned char>(b[at + 1]) << 8));
}

std::filesystem::path sidecar(const std::filesystem::path& p) { return p.string() + ".json"; }

}  // namespace

void write_signal_wav(const PulseSignal& s, const std::filesystem::path& path, const SignalMeta& meta) {
    s.validate();
    const double rounded = std::round(s.sample_rate);
    if (std::abs(rounded - s.sample_rate) > 1e-9 * s.sample_rate) {
        throw InvalidInput("wav output needs an integer sample rate (got " + format_double(s.sample_rate) + ")");
    }
    const auto n = static_cast<std::uint32_t>(s.size());
    std::string b;
    b += "RIFF";
    put_u32(b, 36 + 4 * n);
    b += "WAVEfmt ";
    put_u32(b, 16);
    put_u16(b, 3);  // IEEE float
    put_u16(b, 1);
    put_u32(b, static_cast<std::uint32_t>(rounded));
    put_u32(b, static_cast<std::uint32_t>(rounded) * 4);
    put_u16(b, 4);
    put_u16(b, 32);
    b += "data";
    put_u32(b, 4 * n);
    for (double v : s.samples) {
        const float f = static_cast<float>(v);
        std::uint32_t bits = 0;
        std::memcpy(&bits, &f, 4);
        put_u32(b, bits);
    }
    write_text_file(path, b);
    json j = {{"t0_s", s.t0}, {"sample_rate_hz", s.sample_rate}, {"samples", s.size()}, {"band_hz", {meta.f_lo, meta.f_hi}}};
    write_text_file(sidecar(path), dump(j));
}

PulseSignal read_signal_wav(const std::filesystem::path& path, SignalMeta* meta) {
    const std::string b = read_text_file(path);
    const std::string where = path.string();
    if (b.size() < 12 || b.compare(0, 4, "RIFF") != 0 || b.compare(8, 4, "WAVE") != 0) {
        throw ParseError(where + ": not a RIFF/WAVE file");
    }
    std::size_t at = 12;
    std::uint16_t format = 0;
    std::uint16_t channels = 0;
    std::uint16_t bits = 0;
    std::uint32_t rate = 0;
    PulseSignal s;
    bool have_data = false;
    while (at + 8 <= b.size()) {
        const std::string id = b.substr(at, 4);
        const std::uint32_t size = get_u32(b, at + 4);
        const std::size_t body = at + 8;
        if (body + size > b.size()) throw ParseError(where + ": truncated chunk '" + id + "'");
        if (id == "fmt ") {
            format = get_u16(b, body);
            channels = get_u16(b, body + 2);
            rate = get_u32(b, body + 4);
            bits = get_u16(b, body + 14);
        } else if (id == "data") {
            if (format != 3 || bits != 32 || channels != 1) {
                throw ParseError(where + ": only mono 32-bit float wave files are supported");
            }
            s.samples.resize(size / 4);
            for (std::size_t i = 0; i < s.samples.size(); ++i) {
                const std::uint32_t u = get_u32(b, body + 4 * i);
                float f = 0.0F;
                std::memcpy(&f, &u, 4);
                s.samples[i] = f;
            }
            have_data = true;
        }
        at = body + size + (size & 1U);
    }
    if (!have_data) throw ParseError(where + ": no data chunk");
    s.sample_rate = rate;
    s.t0 = 0.0;
    if (std::filesystem::exists(sidecar(path))) {
        const json j = parse_json(read_text_file(sidecar(path)), sidecar(path).string());
        s.t0 = j.value("t0_s", 0.0);
        s.sample_rate = j.value("sample_rate_hz", s.sample_rate);
        if (meta != nullptr && j.contains("band_hz")) {
            meta->f_lo = j["band_hz"][0].get<double>();
            meta->f_hi = j["band_hz"][1].get<double>();
        }
    }
    s.validate();
    return s;
}

void write_signal(const PulseSignal& s, const std::filesystem::path& path, const SignalMeta& meta) {
    if (path.extension() == ".wav") {
        write_signal_wav(s, path, meta);
    } else {
        write_text_file(path, format_signal_text(s));
    }
}

PulseSignal read_signal(const std::filesystem::path& path, SignalMeta* meta) {
    if (path.extension() == ".wav") return read_signal_wav(path, meta);
    return parse_signal_text(read_text_file(path));
}

std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw ParseError("cannot open " + path.string());
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw Error("cannot write " + path.string());
    f << text;
    if (!f) throw Error("write failed for " + path.string());
}

}  // namespace icedepth
