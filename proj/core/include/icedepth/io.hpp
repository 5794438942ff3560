#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "icedepth/estimate.hpp"
#include "icedepth/modes.hpp"
#include "icedepth/rays.hpp"
#include "icedepth/signal.hpp"

namespace icedepth {

enum class TableFormat { Tsv, Json };

TableFormat table_format_from_string(const std::string& s);
std::string extension(TableFormat f);  // ".tsv" or ".json"

std::string format_dispersion_table(const DispersionTable& t, TableFormat f);
std::string format_cutoff_curve(const CutoffCurve& c, TableFormat f);
std::string format_arrivals(const ArrivalStructure& a, TableFormat f);
std::string format_spectrogram(const Spectrogram& s, TableFormat f);
std::string format_dispersion_curves(const std::vector<DispersionCurve>& c, TableFormat f);
std::string format_amplitude_matrix(const ModeAmplitudeMatrix& m, TableFormat f);
std::string format_upper_limits(const std::vector<UpperLimit>& u, TableFormat f);
std::string format_detections(const std::vector<DetectedArrival>& d, TableFormat f);
std::string format_surface(const AmbiguitySurface& s, TableFormat f);
std::string format_estimate_json(const DepthEstimate& e, int indent = 2);
std::string format_applicability_json(const ApplicabilityReport& r, int indent = 2);

// Parsers for the analysis products consumed by the estimators; the format is
// taken from the file extension.
ArrivalStructure read_arrivals(const std::filesystem::path& path);
ModeAmplitudeMatrix read_amplitude_matrix(const std::filesystem::path& path);
std::vector<UpperLimit> read_upper_limits(const std::filesystem::path& path);
std::vector<DetectedArrival> read_detections(const std::filesystem::path& path);

struct SignalMeta {
    double f_lo = 0.0;
    double f_hi = 0.0;
};

// Two-column text (time_s, amplitude) with the exact rate and t0 in comment lines.
std::string format_signal_text(const PulseSignal& s);
PulseSignal parse_signal_text(const std::string& text);

// Single-channel 32-bit float wave file plus `<path>.json` carrying t0 and band.
void write_signal_wav(const PulseSignal& s, const std::filesystem::path& path, const SignalMeta& meta);
PulseSignal read_signal_wav(const std::filesystem::path& path, SignalMeta* meta = nullptr);

// Dispatch on extension: ".wav" or text.
void write_signal(const PulseSignal& s, const std::filesystem::path& path, const SignalMeta& meta = {});
PulseSignal read_signal(const std::filesystem::path& path, SignalMeta* meta = nullptr);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, const std::string& text);

}  // namespace icedepth
