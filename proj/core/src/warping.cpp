#include "icedepth/warping.hpp"

#include <algorithm>
#include <cmath>

#include "fft.hpp"
#include "icedepth/error.hpp"
#include "interp.hpp"
#include "text_util.hpp"

namespace icedepth {

namespace detail {

BandlimitedInterpolator::BandlimitedInterpolator(const std::vector<double>& samples, double sample_rate, double t0,
                                                 int factor)
    : rate_(sample_rate), t0_(t0), count_(samples.size()) {
    constexpr std::size_t kPad = 32;
    const std::size_t n = 2 * good_fft_size((samples.size() + 2 * kPad + 1) / 2);
    std::vector<double> padded(n, 0.0);
    std::copy(samples.begin(), samples.end(), padded.begin() + static_cast<std::ptrdiff_t>(kPad));
    auto spec = rfft(padded);
    spec[n / 2] *= 0.5;
    const std::size_t m = n * static_cast<std::size_t>(factor);
    std::vector<std::complex<double>> wide(m / 2 + 1, {0.0, 0.0});
    std::copy(spec.begin(), spec.end(), wide.begin());
    up_ = irfft(wide, m);
    const double scale = 1.0 / static_cast<double>(n);
    for (auto& v : up_) v *= scale;
    up_dt_ = 1.0 / (sample_rate * factor);
    origin_ = t0 - static_cast<double>(kPad) / sample_rate;
}

double BandlimitedInterpolator::operator()(double t) const {
    const double p = (t - origin_) / up_dt_;
    const double fi = std::floor(p);
    if (!(fi >= 2.0) || fi + 3.0 >= static_cast<double>(up_.size())) return 0.0;
    const auto i = static_cast<std::size_t>(fi);
    const double x = p - fi;
    // Lagrange basis on nodes -2..3.
    const double xm2 = x + 2.0, xm1 = x + 1.0, x0 = x, x1 = x - 1.0, x2 = x - 2.0, x3 = x - 3.0;
    const double w0 = -(xm1 * x0 * x1 * x2 * x3) / 120.0;
    const double w1 = (xm2 * x0 * x1 * x2 * x3) / 24.0;
    const double w2 = -(xm2 * xm1 * x1 * x2 * x3) / 12.0;
    const double w3 = (xm2 * xm1 * x0 * x2 * x3) / 12.0;
    const double w4 = -(xm2 * xm1 * x0 * x1 * x3) / 24.0;
    const double w5 = (xm2 * xm1 * x0 * x1 * x2) / 120.0;
    return w0 * up_[i - 2] + w1 * up_[i - 1] + w2 * up_[i] + w3 * up_[i + 1] + w4 * up_[i + 2] + w5 * up_[i + 3];
}

}  // namespace detail

std::string to_string(WarpFamily family) {
    switch (family) {
        case WarpFamily::Reflective: return "reflective";
        case WarpFamily::Exponential: return "exponential";
        case WarpFamily::Refractive: return "refractive";
    }
    return "reflective";
}

WarpFamily warp_family_from_string(const std::string& s) {
    if (s == "reflective") return WarpFamily::Reflective;
    if (s == "exponential") return WarpFamily::Exponential;
    if (s == "refractive") return WarpFamily::Refractive;
    throw ParseError("unknown warping family '" + s + "'");
}

void WarpingSpec::validate() const {
    if (!(tr > 0.0) || !std::isfinite(tr)) throw InvalidInput("warping: tr must be positive");
    if (resampling_rate < 0.0) throw InvalidInput("warping: resampling rate must be >= 0");
    if (!(oversampling >= 1.0)) throw InvalidInput("warping: oversampling must be >= 1");
}

double WarpingSpec::h(double u) const {
    switch (family) {
        case WarpFamily::Reflective: return std::sqrt(u * u + tr * tr);
        case WarpFamily::Exponential: return tr * std::exp(u / tr);
        case WarpFamily::Refractive: {
            const double a = 1.0 + u / tr;
            return tr - tr / (a * a);
        }
    }
    return u;
}

double WarpingSpec::h_prime(double u) const {
    switch (family) {
        case WarpFamily::Reflective: return u / std::sqrt(u * u + tr * tr);
        case WarpFamily::Exponential: return std::exp(u / tr);
        case WarpFamily::Refractive: {
            const double a = 1.0 + u / tr;
            return 2.0 / (a * a * a);
        }
    }
    return 1.0;
}

double WarpingSpec::h_inverse(double t) const {
    switch (family) {
        case WarpFamily::Reflective: return std::sqrt(std::max(0.0, t * t - tr * tr));
        case WarpFamily::Exponential: return tr * std::log(t / tr);
        case WarpFamily::Refractive: return tr * (std::sqrt(tr / (tr - t)) - 1.0);
    }
    return t;
}

double WarpingSpec::domain_lo() const {
    switch (family) {
        case WarpFamily::Reflective: return tr;
        case WarpFamily::Exponential: return 0.0;
        case WarpFamily::Refractive: return 0.0;
    }
    return 0.0;
}

double WarpingSpec::domain_hi() const {
    return family == WarpFamily::Refractive ? tr : 1e300;
}

namespace {

// Highest frequency carrying more than `rel` of the peak spectral amplitude.
double occupied_bandwidth(const PulseSignal& s, double rel) {
    const auto spec = detail::rfft(s.samples);
    double peak = 0.0;
    for (const auto& v : spec) peak = std::max(peak, std::abs(v));
    std::size_t top = 0;
    for (std::size_t k = 0; k < spec.size(); ++k) {
        if (std::abs(spec[k]) > rel * peak) top = k;
    }
    return std::min(0.5 * s.sample_rate, static_cast<double>(top + 1) * s.sample_rate / static_cast<double>(s.size()));
}

}  // namespace

WarpedSignal warp(const PulseSignal& signal, const WarpingSpec& spec) {
    spec.validate();
    signal.validate();
    if (signal.size() < 2) throw InvalidInput("warp: signal too short");

    const double fs = signal.sample_rate;
    const double t_first = signal.t0;
    const double t_last = signal.time(signal.size() - 1);
    // The refractive map compresses time without bound as t -> tr; stop one sample short.
    const double lo = std::max(t_first, spec.domain_lo());
    const double hi = std::min(t_last, spec.family == WarpFamily::Refractive ? spec.tr - 1.0 / fs : spec.domain_hi());
    if (!(hi > lo)) {
        throw InvalidInput("warp: signal support [" + detail::format_double(t_first) + ", " +
                           detail::format_double(t_last) + "] s lies outside the " + to_string(spec.family) +
                           " domain (tr = " + detail::format_double(spec.tr) + " s)");
    }

    WarpedSignal out;
    out.source_axis = {signal.t0, fs, signal.size()};
    for (std::size_t i = 0; i < signal.size(); ++i) {
        const double t = signal.time(i);
        if (t < lo || t > hi) out.cropped_energy += signal.samples[i] * signal.samples[i] / fs;
    }

    const double u_lo = spec.h_inverse(lo);
    const double u_hi = spec.h_inverse(hi);
    double rate = spec.resampling_rate;
    if (rate <= 0.0) {
        const double f_max = occupied_bandwidth(signal, 1e-7);
        const double hp = std::max(spec.h_prime(u_lo), spec.h_prime(u_hi));
        rate = spec.oversampling * 2.0 * f_max * hp;
    }
    const double span = (u_hi - u_lo) * rate;
    if (!(span >= 1.0) || span > 5e7) {
        throw InvalidInput("warp: warped support of " + detail::format_double(span) +
                           " samples; adjust the resampling rate or tr");
    }
    const auto count = static_cast<std::size_t>(std::floor(span)) + 1;

    const detail::BandlimitedInterpolator x(signal.samples, fs, signal.t0);
    out.signal.sample_rate = rate;
    out.signal.t0 = u_lo;
    out.signal.samples.resize(count);
    for (std::size_t j = 0; j < count; ++j) {
        const double u = u_lo + static_cast<double>(j) / rate;
        const double t = spec.h(u);
        out.signal.samples[j] = (t >= lo && t <= hi) ? std::sqrt(spec.h_prime(u)) * x(t) : 0.0;
    }
    return out;
}

PulseSignal unwarp(const PulseSignal& warped, const WarpingSpec& spec, const TimeAxis& target) {
    spec.validate();
    warped.validate();
    PulseSignal out;
    out.sample_rate = target.sample_rate;
    out.t0 = target.t0;
    out.samples.assign(target.count, 0.0);
    if (warped.size() < 2) return out;
    const detail::BandlimitedInterpolator y(warped.samples, warped.sample_rate, warped.t0);
    const double u_first = warped.t0;
    const double u_last = warped.time(warped.size() - 1);
    const double lo = spec.domain_lo();
    const double hi = spec.domain_hi();
    for (std::size_t i = 0; i < target.count; ++i) {
        const double t = target.t0 + static_cast<double>(i) / target.sample_rate;
        if (!(t >= lo && t < hi)) continue;
        const double u = spec.h_inverse(t);
        if (u < u_first || u > u_last) continue;
        const double hp = spec.h_prime(u);
        if (!(hp > 1e-12)) continue;
        out.samples[i] = y(u) / std::sqrt(hp);
    }
    return out;
}

PulseSignal unwarp(const WarpedSignal& warped, const WarpingSpec& spec) {
    return unwarp(warped.signal, spec, warped.source_axis);
}

}  // namespace icedepth
