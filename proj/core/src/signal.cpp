#include "icedepth/signal.hpp"

#include <algorithm>
#include <optional>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

#include "fft.hpp"
#include "icedepth/error.hpp"
#include "text_util.hpp"

namespace icedepth {

namespace {

constexpr double kPi = std::numbers::pi;
using cd = std::complex<double>;

std::string fmt(double v) { return detail::format_double(v); }

std::size_t even_fft_size(std::size_t n) { return 2 * detail::good_fft_size((n + 1) / 2); }

double median(std::vector<double> v) {
    if (v.empty()) return 0.0;
    const auto mid = v.begin() + static_cast<std::ptrdiff_t>(v.size() / 2);
    std::nth_element(v.begin(), mid, v.end());
    return *mid;
}

}  // namespace

// ---- series ---------------------------------------------------------------

double PulseSignal::energy() const {
    double e = 0.0;
    for (double v : samples) e += v * v;
    return e / sample_rate;
}

void PulseSignal::validate() const {
    if (!(sample_rate > 0.0) || !std::isfinite(sample_rate)) {
        throw InvalidInput("signal: sample rate must be positive (got " + fmt(sample_rate) + ")");
    }
    for (std::size_t i = 0; i < samples.size(); ++i) {
        if (!std::isfinite(samples[i])) throw InvalidInput("signal: non-finite sample at index " + std::to_string(i));
    }
}

SourceSpectrum source_spectrum(const PulseSignal& pulse, const TimeAxis& axis) {
    pulse.validate();
    if (std::abs(pulse.sample_rate - axis.sample_rate) > 1e-9 * axis.sample_rate) {
        throw InvalidInput("source_spectrum: pulse rate " + fmt(pulse.sample_rate) + " Hz differs from axis rate " +
                           fmt(axis.sample_rate) + " Hz");
    }
    if (pulse.size() > axis.count) throw InvalidInput("source_spectrum: pulse longer than the time axis");
    std::vector<double> padded(axis.count, 0.0);
    std::copy(pulse.samples.begin(), pulse.samples.end(), padded.begin());
    const auto x = detail::rfft(padded);
    SourceSpectrum s;
    s.df = axis.df();
    s.values.resize(x.size());
    for (std::size_t k = 0; k < x.size(); ++k) {
        const double f = s.frequency(k);
        s.values[k] = std::conj(x[k]) * std::polar(1.0 / pulse.sample_rate, 2.0 * kPi * f * pulse.t0);
    }
    return s;
}

PulseSignal render_signal(const SourceSpectrum& spectrum, const std::vector<cd>& transfer, const TimeAxis& axis) {
    const std::size_t nb = axis.bins();
    if (spectrum.values.size() != nb || transfer.size() != nb) {
        throw InvalidInput("render_signal: spectrum and transfer must have " + std::to_string(nb) + " bins");
    }
    std::vector<cd> x(nb, {0.0, 0.0});
    const double df = axis.df();
    for (std::size_t k = 1; k < nb; ++k) {
        if (axis.count % 2 == 0 && k == nb - 1) break;
        const double f = df * static_cast<double>(k);
        x[k] = std::conj(spectrum.values[k] * transfer[k] * std::polar(df, -2.0 * kPi * f * axis.t0));
    }
    PulseSignal out;
    out.sample_rate = axis.sample_rate;
    out.t0 = axis.t0;
    out.samples = detail::irfft(x, axis.count);
    return out;
}

// ---- pulses -----------------------------------------------------------------

std::string to_string(PulseKind kind) {
    switch (kind) {
        case PulseKind::Gaussian: return "gaussian";
        case PulseKind::Chirp: return "chirp";
        case PulseKind::Impulse: return "impulse";
    }
    return "gaussian";
}

PulseKind pulse_kind_from_string(const std::string& s) {
    if (s == "gaussian") return PulseKind::Gaussian;
    if (s == "chirp") return PulseKind::Chirp;
    if (s == "impulse") return PulseKind::Impulse;
    throw ParseError("unknown pulse kind '" + s + "' (expected gaussian, chirp or impulse)");
}

PulseSignal make_pulse(PulseKind kind, double f_lo, double f_hi, double sample_rate, double duration) {
    if (!(f_lo > 0.0 && f_hi > f_lo && f_hi < 0.5 * sample_rate)) {
        throw InvalidInput("make_pulse: need 0 < fLo < fHi < sampleRate/2 (got " + fmt(f_lo) + ", " + fmt(f_hi) +
                           ", " + fmt(sample_rate) + ")");
    }
    if (!(duration > 0.0)) throw InvalidInput("make_pulse: duration must be positive");
    const auto n = static_cast<std::size_t>(std::llround(duration * sample_rate));
    if (n < 2) throw InvalidInput("make_pulse: duration shorter than two samples");

    PulseSignal p;
    p.sample_rate = sample_rate;
    p.t0 = -static_cast<double>(n / 2) / sample_rate;
    p.samples.resize(n);
    const double fc = 0.5 * (f_lo + f_hi);
    const double bw = f_hi - f_lo;

    switch (kind) {
        case PulseKind::Gaussian: {
            // Amplitude spectrum exp(-(f - fc)^2 / (2 sa^2)); 99.5 % of the energy within +-bw/2.
            const double sa = bw / 4.0;
            const double st = 1.0 / (2.0 * kPi * sa);
            for (std::size_t i = 0; i < n; ++i) {
                const double t = p.time(i);
                p.samples[i] = std::exp(-0.5 * t * t / (st * st)) * std::cos(2.0 * kPi * fc * t);
            }
            break;
        }
        case PulseKind::Chirp: {
            const double len = static_cast<double>(n) / sample_rate;
            const double taper = 0.1 * len;
            for (std::size_t i = 0; i < n; ++i) {
                const double tau = static_cast<double>(i) / sample_rate;
                double w = 1.0;
                if (tau < taper) w = 0.5 * (1.0 - std::cos(kPi * tau / taper));
                if (len - tau < taper) w = 0.5 * (1.0 - std::cos(kPi * (len - tau) / taper));
                p.samples[i] = w * std::sin(2.0 * kPi * (f_lo * tau + 0.5 * bw * tau * tau / len));
            }
            break;
        }
        case PulseKind::Impulse: {
            const double skirt = 0.04 * bw;
            const double step = std::min(0.01, 0.05 / duration);
            const double fa = std::max(step, f_lo - skirt);
            const double fb = std::min(0.5 * sample_rate, f_hi + skirt);
            std::vector<double> freqs;
            std::vector<double> amps;
            for (double f = fa; f <= fb; f += step) {
                double a = 1.0;
                if (f < f_lo) a = 0.5 * (1.0 + std::cos(kPi * (f_lo - f) / skirt));
                if (f > f_hi) a = 0.5 * (1.0 + std::cos(kPi * (f - f_hi) / skirt));
                freqs.push_back(f);
                amps.push_back(a);
            }
            for (std::size_t i = 0; i < n; ++i) {
                const double t = p.time(i);
                double s = 0.0;
                for (std::size_t k = 0; k < freqs.size(); ++k) s += amps[k] * std::cos(2.0 * kPi * freqs[k] * t);
                p.samples[i] = s;
            }
            break;
        }
    }
    const double e = p.energy();
    if (!(e > 0.0)) throw NumericalError("make_pulse: zero-energy pulse");
    const double scale = 1.0 / std::sqrt(e);
    for (auto& v : p.samples) v *= scale;
    return p;
}

double band_energy_fraction(const PulseSignal& signal, double f_lo, double f_hi) {
    const std::size_t n = even_fft_size(signal.size() * 4);
    std::vector<double> x(n, 0.0);
    std::copy(signal.samples.begin(), signal.samples.end(), x.begin());
    const auto spec = detail::rfft(x);
    double in = 0.0;
    double all = 0.0;
    for (std::size_t k = 0; k < spec.size(); ++k) {
        const double f = static_cast<double>(k) * signal.sample_rate / static_cast<double>(n);
        const double p = std::norm(spec[k]) * ((k == 0 || k == n / 2) ? 1.0 : 2.0);
        all += p;
        if (f >= f_lo && f <= f_hi) in += p;
    }
    return all > 0.0 ? in / all : 0.0;
}

// ---- spectrogram ----------------------------------------------------------

double Spectrogram::compensated_energy() const {
    if (frequencies.empty() || window_power <= 0.0) return 0.0;
    const std::size_t nb = frequencies.size();
    const auto nw = static_cast<double>(2 * (nb - 1));
    double sum = 0.0;
    for (std::size_t m = 0; m < frames(); ++m) {
        for (std::size_t k = 0; k < nb; ++k) {
            const double a = at(m, k);
            sum += a * a * ((k == 0 || k == nb - 1) ? 1.0 : 2.0);
        }
    }
    const double hop_samples = std::round(hop * sample_rate);
    return sum / (nw * sample_rate) * hop_samples / window_power;
}

Spectrogram stft_spectrogram(const PulseSignal& signal, double window_length, double hop) {
    signal.validate();
    const auto nw = static_cast<std::size_t>(2 * std::llround(0.5 * window_length * signal.sample_rate));
    const auto nh = static_cast<std::size_t>(std::llround(hop * signal.sample_rate));
    if (nw < 16) throw InvalidInput("stft: window must span at least 16 samples");
    if (nh < 1 || hop > window_length) throw InvalidInput("stft: hop must be positive and <= the window length");
    if (nw > signal.size()) {
        throw InvalidInput("stft: window of " + fmt(window_length) + " s is longer than the signal (" +
                           fmt(signal.duration()) + " s)");
    }
    Spectrogram s;
    s.window_length = static_cast<double>(nw) / signal.sample_rate;
    s.hop = static_cast<double>(nh) / signal.sample_rate;
    s.sample_rate = signal.sample_rate;
    std::vector<double> w(nw);
    for (std::size_t i = 0; i < nw; ++i) {
        w[i] = 0.5 - 0.5 * std::cos(2.0 * kPi * static_cast<double>(i) / static_cast<double>(nw));
        s.window_power += w[i] * w[i];
    }
    const std::size_t nb = nw / 2 + 1;
    s.frequencies.resize(nb);
    for (std::size_t k = 0; k < nb; ++k) s.frequencies[k] = static_cast<double>(k) * signal.sample_rate / static_cast<double>(nw);
    std::vector<double> frame(nw);
    for (std::size_t start = 0; start + nw <= signal.size(); start += nh) {
        for (std::size_t i = 0; i < nw; ++i) frame[i] = w[i] * signal.samples[start + i];
        const auto x = detail::rfft(frame);
        s.times.push_back(signal.t0 + static_cast<double>(start + nw / 2) / signal.sample_rate);
        for (const auto& v : x) s.magnitude.push_back(std::abs(v));
    }
    return s;
}

std::vector<double> spectrum_magnitude(const PulseSignal& signal, const std::vector<double>& frequencies) {
    std::vector<double> out(frequencies.size(), 0.0);
    for (std::size_t j = 0; j < frequencies.size(); ++j) {
        const double w = 2.0 * kPi * frequencies[j];
        const cd step = std::polar(1.0, w / signal.sample_rate);
        cd rot = std::polar(1.0, w * signal.t0);
        cd acc{0.0, 0.0};
        for (std::size_t i = 0; i < signal.size(); ++i) {
            acc += signal.samples[i] * rot;
            rot *= step;
            if ((i & 1023) == 1023) rot /= std::abs(rot);
        }
        out[j] = std::abs(acc) / signal.sample_rate;
    }
    return out;
}

// ---- mode separation --------------------------------------------------------

ModeSeparation separate_modes(const PulseSignal& signal, const WarpingSpec& spec, int n_modes,
                              const SeparationOptions& options) {
    if (n_modes < 1) throw InvalidInput("separate_modes: nModes must be >= 1");
    ModeSeparation out;
    out.warped = warp(signal, spec);
    const PulseSignal& y = out.warped.signal;
    const std::size_t n = y.size();
    const std::size_t nfft = even_fft_size(n);
    std::vector<double> padded(nfft, 0.0);
    std::copy(y.samples.begin(), y.samples.end(), padded.begin());
    const auto spectrum = detail::rfft(padded);
    const std::size_t nb = spectrum.size();
    const double df = y.sample_rate / static_cast<double>(nfft);

    std::vector<double> power(nb);
    double pmax = 0.0;
    for (std::size_t k = 0; k < nb; ++k) {
        power[k] = std::norm(spectrum[k]);
        pmax = std::max(pmax, power[k]);
    }
    if (!(pmax > 0.0)) {
        out.missing = n_modes;
        return out;
    }
    // Noise floor: median over the occupied part of the warped spectrum.
    std::size_t occupied = 1;
    for (std::size_t k = 1; k < nb; ++k) {
        if (power[k] > 1e-12 * pmax) occupied = k + 1;
    }
    const double floor = median(std::vector<double>(power.begin() + 1, power.begin() + static_cast<std::ptrdiff_t>(occupied)));
    const double threshold = floor * std::pow(10.0, options.floor_db / 10.0);
    const auto sep = static_cast<std::size_t>(std::max(1, options.min_separation_bins));

    // Broadband multipath leaves ripples that clear the global floor but not
    // their own neighbourhood; tones do both.
    const auto half = static_cast<std::size_t>(std::max(1.0, std::round(options.local_width_hz / df)));
    auto is_peak = [&](std::size_t k) {
        if (k == 0 || power[k] <= threshold) return false;
        const std::size_t a = k > sep ? k - sep : 1;
        const std::size_t b = std::min(nb - 1, k + sep);
        for (std::size_t j = a; j <= b; ++j) {
            if (j != k && power[j] > power[k]) return false;
        }
        const std::size_t la = k > half ? k - half : 1;
        const std::size_t lb = std::min(nb - 1, k + half);
        const double local = median(std::vector<double>(power.begin() + static_cast<std::ptrdiff_t>(la),
                                                        power.begin() + static_cast<std::ptrdiff_t>(lb) + 1));
        return power[k] > local * std::pow(10.0, options.floor_db / 10.0);
    };
    auto refine = [&](std::size_t k) {
        if (k == 0 || k + 1 >= nb) return df * static_cast<double>(k);
        const double a = std::log(power[k - 1] + 1e-300);
        const double b = std::log(power[k] + 1e-300);
        const double c = std::log(power[k + 1] + 1e-300);
        const double den = a - 2.0 * b + c;
        const double d = den < 0.0 ? std::clamp(0.5 * (a - c) / den, -0.5, 0.5) : 0.0;
        return df * (static_cast<double>(k) + d);
    };

    std::vector<std::size_t> cand;
    for (std::size_t k = 1; k < nb; ++k) {
        if (is_peak(k)) cand.push_back(k);
    }
    std::stable_sort(cand.begin(), cand.end(), [&](std::size_t a, std::size_t b) { return power[a] > power[b]; });
    std::vector<std::size_t> accepted;
    for (std::size_t k : cand) {
        bool ok = true;
        for (std::size_t a : accepted) ok = ok && (k > a ? k - a : a - k) >= sep;
        if (ok) accepted.push_back(k);
    }
    for (std::size_t k : accepted) out.peaks.push_back(refine(k));
    std::sort(out.peaks.begin(), out.peaks.end());

    struct Slot {
        int mode;
        double tone;
        bool detected;
    };
    std::vector<Slot> slots;
    const auto nm = static_cast<std::size_t>(n_modes);
    if (!options.tone_hints.empty()) {
        const std::size_t nh = std::min(nm, options.tone_hints.size());
        bool any = false;
        for (std::size_t m = 0; m < nh; ++m) {
            const double hint = options.tone_hints[m];
            if (!std::isfinite(hint) || hint <= 0.0) continue;
            double gap = std::numeric_limits<double>::infinity();
            for (std::size_t j = 0; j < options.tone_hints.size(); ++j) {
                if (j != m && std::isfinite(options.tone_hints[j])) gap = std::min(gap, std::abs(options.tone_hints[j] - hint));
            }
            if (!std::isfinite(gap)) gap = hint;
            const double tol = options.hint_tolerance * gap;
            double best = -1.0;
            double best_p = 0.0;
            for (std::size_t k : accepted) {
                const double f = refine(k);
                if (std::abs(f - hint) <= tol && power[k] > best_p) {
                    best = f;
                    best_p = power[k];
                }
            }
            const bool det = best >= 0.0;
            any = any || det;
            slots.push_back({static_cast<int>(m) + 1, det ? best : hint, det});
        }
        if (!any) slots.clear();
    } else {
        std::vector<double> tones;
        for (std::size_t i = 0; i < std::min(nm, accepted.size()); ++i) tones.push_back(refine(accepted[i]));
        std::sort(tones.begin(), tones.end());
        if (spec.family == WarpFamily::Exponential) std::reverse(tones.begin(), tones.end());
        for (std::size_t i = 0; i < tones.size(); ++i) slots.push_back({static_cast<int>(i) + 1, tones[i], true});
    }
    out.missing = n_modes - static_cast<int>(std::count_if(slots.begin(), slots.end(), [](const Slot& s) { return s.detected; }));
    if (slots.empty()) return out;

    // Masks between midpoints of neighbouring tones (in frequency order).
    std::vector<std::size_t> order(slots.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return slots[a].tone < slots[b].tone; });
    std::vector<double> lo(slots.size());
    std::vector<double> hi(slots.size());
    for (std::size_t i = 0; i < order.size(); ++i) {
        const double f = slots[order[i]].tone;
        const double left = i > 0 ? slots[order[i - 1]].tone : -1.0;
        const double right = i + 1 < order.size() ? slots[order[i + 1]].tone : -1.0;
        const double gap_l = left >= 0.0 ? f - left : (right >= 0.0 ? right - f : f);
        const double gap_r = right >= 0.0 ? right - f : gap_l;
        lo[order[i]] = std::max(0.0, f - 0.5 * gap_l);
        hi[order[i]] = f + 0.5 * gap_r;
    }

    for (std::size_t s = 0; s < slots.size(); ++s) {
        std::vector<cd> masked(nb, {0.0, 0.0});
        for (std::size_t k = 1; k < nb; ++k) {
            const double f = df * static_cast<double>(k);
            if (f >= lo[s] && f < hi[s]) masked[k] = spectrum[k];
        }
        auto comp = detail::irfft(masked, nfft);
        comp.resize(n);
        for (auto& v : comp) v /= static_cast<double>(nfft);
        PulseSignal warped_comp{std::move(comp), y.sample_rate, y.t0};
        ModeSignal ms;
        ms.mode_index = slots[s].mode;
        ms.warped_tone = slots[s].tone;
        ms.detected = slots[s].detected;
        ms.signal = unwarp(warped_comp, spec, out.warped.source_axis);
        out.modes.push_back(std::move(ms));
    }
    std::sort(out.modes.begin(), out.modes.end(),
              [](const ModeSignal& a, const ModeSignal& b) { return a.mode_index < b.mode_index; });
    return out;
}

std::vector<double> predict_warped_tones(const DispersionTable& table, const WarpingSpec& spec, double range) {
    spec.validate();
    std::vector<double> tones(static_cast<std::size_t>(table.max_modes), std::nan(""));
    for (int m = 1; m <= table.max_modes; ++m) {
        std::vector<double> vals;
        for (std::size_t i = 0; i < table.frequencies.size(); ++i) {
            const auto& c = table.at(m, i);
            if (!c.present || !(c.group_speed > 0.0)) continue;
            const double t = range / c.group_speed;
            if (!(t > spec.domain_lo() && t < spec.domain_hi())) continue;
            const double u = spec.h_inverse(t);
            vals.push_back(table.frequencies[i] * spec.h_prime(u));
        }
        if (!vals.empty()) tones[static_cast<std::size_t>(m - 1)] = median(vals);
    }
    return tones;
}

// ---- extraction ----------------------------------------------------------------

std::vector<DispersionCurve> extract_dispersion(const std::vector<ModeSignal>& modes, double f_lo, double f_hi,
                                                const RidgeOptions& options) {
    std::vector<DispersionCurve> out;
    for (const ModeSignal& m : modes) {
        DispersionCurve curve;
        curve.mode_index = m.mode_index;
        const Spectrogram s = stft_spectrogram(m.signal, options.window_length, options.hop);
        std::vector<std::size_t> bins;
        for (std::size_t k = 0; k < s.bins(); ++k) {
            if (s.frequencies[k] >= f_lo && s.frequencies[k] <= f_hi) bins.push_back(k);
        }
        // Floor relative to the strongest cell anywhere, so an empty band stays empty.
        double peak = 0.0;
        for (std::size_t k = 0; k < s.bins(); ++k) {
            for (std::size_t f = 0; f < s.frames(); ++f) peak = std::max(peak, s.at(f, k));
        }
        const double floor = peak * std::pow(10.0, -options.floor_db / 20.0);
        if (peak > 0.0) {
            for (std::size_t k : bins) {
                std::size_t best = 0;
                for (std::size_t f = 1; f < s.frames(); ++f) {
                    if (s.at(f, k) > s.at(best, k)) best = f;
                }
                if (s.at(best, k) < floor) continue;
                double t = s.times[best];
                if (best > 0 && best + 1 < s.frames()) {
                    const double a = s.at(best - 1, k);
                    const double b = s.at(best, k);
                    const double c = s.at(best + 1, k);
                    const double den = a - 2.0 * b + c;
                    if (den < 0.0) t += std::clamp(0.5 * (a - c) / den, -0.5, 0.5) * s.hop;
                }
                curve.points.push_back({s.frequencies[k], t});
            }
        }
        out.push_back(std::move(curve));
    }
    return out;
}

std::size_t ModeAmplitudeMatrix::usable_count() const {
    return static_cast<std::size_t>(std::count(usable.begin(), usable.end(), true));
}

void normalize_columns(ModeAmplitudeMatrix& m) {
    m.usable.assign(m.frequencies.size(), false);
    for (std::size_t j = 0; j < m.frequencies.size(); ++j) {
        double s = 0.0;
        for (const auto& row : m.values) s += row[j] * row[j];
        s = std::sqrt(s);
        if (!(s > 0.0) || !std::isfinite(s)) {
            for (auto& row : m.values) row[j] = 0.0;
            continue;
        }
        for (auto& row : m.values) row[j] /= s;
        m.usable[j] = true;
    }
}

ModeAmplitudeMatrix extract_mode_amplitudes(const std::vector<ModeSignal>& modes, double f_lo, double f_hi, double df) {
    if (modes.size() < 2) throw InvalidInput("extract_mode_amplitudes: need at least two mode signals");
    if (!(f_lo > 0.0 && f_hi > f_lo && df > 0.0)) throw InvalidInput("extract_mode_amplitudes: invalid band");
    ModeAmplitudeMatrix m;
    const auto nf = static_cast<std::size_t>(std::floor((f_hi - f_lo) / df + 1e-9)) + 1;
    for (std::size_t i = 0; i < nf; ++i) m.frequencies.push_back(f_lo + df * static_cast<double>(i));
    for (const ModeSignal& s : modes) {
        m.mode_indices.push_back(s.mode_index);
        m.values.push_back(spectrum_magnitude(s.signal, m.frequencies));
    }
    normalize_columns(m);
    return m;
}

std::vector<double> upper_limit_grid(double f_lo, double f_hi, double df) {
    std::vector<double> f;
    for (double x = f_lo; x <= f_hi + 1e-9; x += df) f.push_back(x);
    return f;
}

UpperLimit mode_upper_limit(const ModeSignal& mode, double f_lo, double f_hi, double drop_db, double df,
                            const std::vector<double>& reference) {
    if (!(f_lo > 0.0 && f_hi > f_lo && df > 0.0)) throw InvalidInput("mode_upper_limit: invalid band");
    if (!(drop_db > 0.0)) throw InvalidInput("mode_upper_limit: dropDb must be positive");
    const std::vector<double> f = upper_limit_grid(f_lo, f_hi, df);
    if (!reference.empty() && reference.size() != f.size()) {
        throw InvalidInput("mode_upper_limit: reference has " + std::to_string(reference.size()) + " values for " +
                           std::to_string(f.size()) + " frequencies");
    }
    auto a = spectrum_magnitude(mode.signal, f);
    // Bins where the reference vanishes carry no information and are skipped.
    std::vector<std::size_t> valid;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (reference.empty()) {
            valid.push_back(i);
        } else if (reference[i] > 0.0) {
            a[i] /= reference[i];
            valid.push_back(i);
        }
    }
    double peak = 0.0;
    for (std::size_t i : valid) peak = std::max(peak, a[i]);
    if (!(peak > 0.0)) throw InvalidInput("mode_upper_limit: mode " + std::to_string(mode.mode_index) + " has no in-band energy");
    const double thr = peak * std::pow(10.0, -drop_db / 20.0);
    std::size_t top = 0;
    for (std::size_t v = 0; v < valid.size(); ++v) {
        if (a[valid[v]] >= thr) top = v;
    }
    UpperLimit u;
    u.mode_index = mode.mode_index;
    if (top + 1 == valid.size()) {
        u.at_band_edge = true;
        u.frequency = f_hi;
        return u;
    }
    const std::size_t i = valid[top];
    const std::size_t j = valid[top + 1];
    const double w = (a[i] - thr) / (a[i] - a[j]);
    u.frequency = f[i] + std::clamp(w, 0.0, 1.0) * (f[j] - f[i]);
    return u;
}

// ---- multipath detection ------------------------------------------------------

namespace {

struct Correlator {
    std::size_t n = 0;
    double fs = 1.0;
    std::vector<cd> tspec;          // template rfft
    std::vector<std::size_t> band;  // bins carrying template energy
    double r0 = 0.0;                // analytic autocorrelation at zero lag

    // Analytic cross-correlation of a residual spectrum at a fractional lag (samples).
    cd at(const std::vector<cd>& xspec, double lag) const {
        cd acc{0.0, 0.0};
        for (std::size_t k : band) {
            acc += xspec[k] * std::conj(tspec[k]) * std::polar(1.0, 2.0 * kPi * static_cast<double>(k) * lag / static_cast<double>(n));
        }
        return 2.0 * acc / static_cast<double>(n);
    }

    std::vector<double> envelope(const std::vector<cd>& xspec) const {
        std::vector<cd> a(n, {0.0, 0.0});
        for (std::size_t k : band) a[k] = 2.0 * xspec[k] * std::conj(tspec[k]);
        auto z = detail::ifft(a);
        std::vector<double> env(n);
        for (std::size_t i = 0; i < n; ++i) env[i] = std::abs(z[i]) / static_cast<double>(n);
        return env;
    }

    std::optional<cd> phase;  // unit phasor shared by every gain

    cd gain(const std::vector<cd>& xspec, double lag) const {
        const cd g = at(xspec, lag) / r0;
        return phase ? (g * std::conj(*phase)).real() * *phase : g;
    }

    double score(const std::vector<cd>& xspec, double lag) const {
        const cd v = at(xspec, lag);
        return phase ? std::abs((v * std::conj(*phase)).real()) : std::abs(v);
    }

    // Golden-section maximisation of the correlation score on [a, b].
    double refine(const std::vector<cd>& xspec, double a, double b) const {
        const double g = 0.5 * (std::sqrt(5.0) - 1.0);
        double c = b - g * (b - a);
        double d = a + g * (b - a);
        double fc = score(xspec, c);
        double fd = score(xspec, d);
        for (int it = 0; it < 60 && b - a > 1e-7; ++it) {
            if (fc > fd) {
                b = d;
                d = c;
                fd = fc;
                c = b - g * (b - a);
                fc = score(xspec, c);
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + g * (b - a);
                fd = score(xspec, d);
            }
        }
        return 0.5 * (a + b);
    }

    void subtract(std::vector<cd>& xspec, cd gamma, double lag) const {
        for (std::size_t k : band) {
            xspec[k] -= gamma * tspec[k] * std::polar(1.0, -2.0 * kPi * static_cast<double>(k) * lag / static_cast<double>(n));
        }
    }
};

Correlator make_correlator(const PulseSignal& tmpl, std::size_t n) {
    Correlator c;
    c.n = n;
    c.fs = tmpl.sample_rate;
    std::vector<double> t(n, 0.0);
    std::copy(tmpl.samples.begin(), tmpl.samples.end(), t.begin());
    c.tspec = detail::rfft(t);
    double peak = 0.0;
    for (const auto& v : c.tspec) peak = std::max(peak, std::abs(v));
    for (std::size_t k = 1; k + 1 < c.tspec.size(); ++k) {
        if (std::abs(c.tspec[k]) > 1e-6 * peak) c.band.push_back(k);
    }
    double s = 0.0;
    for (std::size_t k : c.band) s += std::norm(c.tspec[k]);
    c.r0 = 2.0 * s / static_cast<double>(n);
    return c;
}

double width_samples(const Correlator& c) {
    std::vector<cd> self(c.tspec);
    const double peak = std::abs(c.at(self, 0.0));
    double lag = 0.0;
    const double step = 0.05;
    while (lag < static_cast<double>(c.n) / 2 && std::abs(c.at(self, lag)) > 0.5 * peak) lag += step;
    return 2.0 * lag;
}

}  // namespace

double template_width(const PulseSignal& pulse_template) {
    pulse_template.validate();
    const Correlator c = make_correlator(pulse_template, even_fft_size(2 * pulse_template.size()));
    return width_samples(c) / pulse_template.sample_rate;
}

std::vector<DetectedArrival> detect_multipath(const PulseSignal& signal, const PulseSignal& pulse_template,
                                              int max_arrivals, const DetectionOptions& options) {
    signal.validate();
    pulse_template.validate();
    if (std::abs(signal.sample_rate - pulse_template.sample_rate) > 1e-9 * signal.sample_rate) {
        throw InvalidInput("detect_multipath: template and signal sample rates differ");
    }
    if (max_arrivals < 1 || signal.size() == 0 || pulse_template.size() == 0) return {};
    const double fs = signal.sample_rate;
    const std::size_t n = even_fft_size(signal.size() + pulse_template.size());
    Correlator corr = make_correlator(pulse_template, n);
    std::vector<double> x(n, 0.0);
    std::copy(signal.samples.begin(), signal.samples.end(), x.begin());
    std::vector<cd> resid = detail::rfft(x);
    const double min_sep = std::max(1.0, width_samples(corr));

    // lag L (samples, may be negative) <-> arrival time
    auto lag_time = [&](double lag) { return signal.t0 + lag / fs - pulse_template.t0; };
    const auto nt = static_cast<long>(pulse_template.size());
    const auto ns = static_cast<long>(signal.size());
    auto index_lag = [&](long i) { return i >= static_cast<long>(n) - nt ? i - static_cast<long>(n) : i; };

    struct Hit {
        double lag;
        cd gamma;
    };
    std::vector<Hit> hits;
    double first_peak = 0.0;
    for (int it = 0; it < max_arrivals; ++it) {
        const auto env = corr.envelope(resid);
        long best = 0;
        bool found = false;
        double best_v = 0.0;
        for (long i = 0; i < static_cast<long>(n); ++i) {
            const long lag = index_lag(i);
            if (lag >= ns) continue;
            const double t = lag_time(static_cast<double>(lag));
            if (t < options.t_min || t > options.t_max) continue;
            bool clear = true;
            for (const Hit& h : hits) clear = clear && std::abs(static_cast<double>(lag) - h.lag) >= min_sep;
            if (!clear) continue;
            if (env[static_cast<std::size_t>(i)] > best_v) {
                best_v = env[static_cast<std::size_t>(i)];
                best = lag;
                found = true;
            }
        }
        if (!found || best_v <= 0.0) break;
        if (it == 0) first_peak = best_v;
        if (best_v < options.threshold * first_peak) break;
        const double lag = corr.refine(resid, static_cast<double>(best) - 1.0, static_cast<double>(best) + 1.0);
        if (it == 0 && options.common_phase) {
            const cd g = corr.at(resid, lag);
            if (std::abs(g) > 0.0) corr.phase = g / std::abs(g);
        }
        const cd gamma = corr.gain(resid, lag);
        corr.subtract(resid, gamma, lag);
        hits.push_back({lag, gamma});
    }
    for (int sweep = 0; sweep < options.refine_sweeps; ++sweep) {
        double moved = 0.0;
        for (Hit& h : hits) {
            corr.subtract(resid, -h.gamma, h.lag);
            const double half = 0.5 * min_sep;
            const double lag = corr.refine(resid, h.lag - half, h.lag + half);
            moved = std::max(moved, std::abs(lag - h.lag));
            h.lag = lag;
            h.gamma = corr.gain(resid, h.lag);
            corr.subtract(resid, h.gamma, h.lag);
        }
        if (moved < options.refine_tolerance) break;
    }
    std::vector<DetectedArrival> out;
    double gmax = 0.0;
    for (const Hit& h : hits) gmax = std::max(gmax, std::abs(h.gamma));
    for (const Hit& h : hits) out.push_back({lag_time(h.lag), gmax > 0.0 ? std::abs(h.gamma) / gmax : 0.0});
    std::sort(out.begin(), out.end(), [](const DetectedArrival& a, const DetectedArrival& b) { return a.time < b.time; });
    return out;
}

}  // namespace icedepth
