#pragma once

#include <complex>
#include <cstddef>
#include <vector>

namespace icedepth {

// Uniformly sampled real time series.  `t0` is the time of the first sample
// relative to emission.
struct PulseSignal {
    std::vector<double> samples;
    double sample_rate = 1.0;  // Hz
    double t0 = 0.0;           // s

    std::size_t size() const { return samples.size(); }
    double time(std::size_t i) const { return t0 + static_cast<double>(i) / sample_rate; }
    double duration() const { return static_cast<double>(samples.size()) / sample_rate; }
    // Sum x^2 / fs.
    double energy() const;
    // Throws InvalidInput on a non-positive rate or non-finite samples.
    void validate() const;
};

struct TimeAxis {
    double t0 = 0.0;
    double sample_rate = 1.0;
    std::size_t count = 0;

    double df() const { return sample_rate / static_cast<double>(count); }
    std::size_t bins() const { return count / 2 + 1; }
};

// One-sided spectrum on the DFT bins of a TimeAxis (bin k at k * df), with
// phase referenced to emission time.  Convention: x(t) = 2 Re sum S(f) e^{-i 2 pi f t} df.
struct SourceSpectrum {
    double df = 1.0;
    std::vector<std::complex<double>> values;

    double frequency(std::size_t k) const { return static_cast<double>(k) * df; }
};

// Spectrum of `pulse` evaluated on the bins of `axis`.
SourceSpectrum source_spectrum(const PulseSignal& pulse, const TimeAxis& axis);

// Time series on `axis` of the field with source spectrum S and transfer
// function G (both on the axis bins); DC is dropped.
PulseSignal render_signal(const SourceSpectrum& spectrum, const std::vector<std::complex<double>>& transfer,
                          const TimeAxis& axis);

}  // namespace icedepth
