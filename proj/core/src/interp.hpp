#pragma once

#include <cstddef>
#include <vector>

namespace icedepth::detail {

// Band-limited evaluation of a uniformly sampled series at arbitrary times:
// FFT upsampling of the zero-padded series followed by 6-point Lagrange
// interpolation.  Zero outside the padded support.
class BandlimitedInterpolator {
public:
    BandlimitedInterpolator(const std::vector<double>& samples, double sample_rate, double t0, int factor = 16);

    double operator()(double t) const;
    double begin_time() const { return t0_; }
    double end_time() const { return t0_ + static_cast<double>(count_ - 1) / rate_; }

private:
    std::vector<double> up_;
    double rate_;
    double t0_;
    std::size_t count_;
    double up_dt_;
    double origin_;  // time of up_[0]
};

}  // namespace icedepth::detail
