#include "tridiag.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>

#include "icedepth/error.hpp"

namespace icedepth::detail {

std::size_t sturm_count(const SymTridiag& t, double x) {
    const double off2 = t.off * t.off;
    const double pivmin = std::numeric_limits<double>::min() * std::max(1.0, off2);
    std::size_t count = 0;
    double q = t.diag[0] - x;
    if (std::abs(q) < pivmin) q = -pivmin;
    if (q < 0.0) ++count;
    for (std::size_t i = 1; i < t.diag.size(); ++i) {
        q = (t.diag[i] - x) - off2 / q;
        if (std::abs(q) < pivmin) q = -pivmin;
        if (q < 0.0) ++count;
    }
    return count;
}

double bisect_eigenvalue(const SymTridiag& t, std::size_t j, double lo, double hi) {
    const double eps = std::numeric_limits<double>::epsilon();
    const double abs_tol = 4.0 * eps * (std::abs(t.off) + 1e-300);
    for (int it = 0; it < 400; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (mid <= lo || mid >= hi) break;
        if (hi - lo <= 2.0 * eps * std::max(std::abs(lo), std::abs(hi)) + abs_tol) break;
        if (sturm_count(t, mid) >= j + 1) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    return 0.5 * (lo + hi);
}

void solve_shifted(const SymTridiag& t, double shift, std::span<double> b) {
    const std::size_t n = t.size();
    if (n == 0) return;
    std::vector<double> d(n), dl(n > 1 ? n - 1 : 0, t.off), du(n > 1 ? n - 1 : 0, t.off);
    for (std::size_t i = 0; i < n; ++i) d[i] = t.diag[i] - shift;
    const double tiny = std::numeric_limits<double>::epsilon() * (std::abs(t.off) * 2.0 + 1e-300);

    // Gaussian elimination with partial pivoting; dl[i] becomes the fill-in
    // second superdiagonal when rows i and i+1 are exchanged.
    for (std::size_t i = 0; i + 1 < n; ++i) {
        if (std::abs(d[i]) >= std::abs(dl[i])) {
            if (d[i] == 0.0) d[i] = tiny;
            const double fact = dl[i] / d[i];
            d[i + 1] -= fact * du[i];
            b[i + 1] -= fact * b[i];
            dl[i] = 0.0;
        } else {
            const double fact = d[i] / dl[i];
            d[i] = dl[i];
            const double temp = d[i + 1];
            d[i + 1] = du[i] - fact * temp;
            if (i + 2 < n) {
                dl[i] = du[i + 1];
                du[i + 1] = -fact * dl[i];
            } else {
                dl[i] = 0.0;
            }
            du[i] = temp;
            const double bt = b[i];
            b[i] = b[i + 1];
            b[i + 1] = bt - fact * b[i + 1];
        }
    }
    if (d[n - 1] == 0.0) d[n - 1] = tiny;
    b[n - 1] /= d[n - 1];
    if (n > 1) b[n - 2] = (b[n - 2] - du[n - 2] * b[n - 1]) / d[n - 2];
    for (std::size_t k = n - 2; k-- > 0;) {
        b[k] = (b[k] - du[k] * b[k + 1] - dl[k] * b[k + 2]) / d[k];
    }
}

std::vector<double> inverse_iteration(const SymTridiag& t, double lambda,
                                      std::span<const std::vector<double>> cluster) {
    const std::size_t n = t.size();
    std::vector<double> x(n);
    // Deterministic start vector with no special alignment to any eigenvector.
    std::uint64_t s = 0x9E3779B97F4A7C15ull;
    for (auto& v : x) {
        s ^= s << 13;
        s ^= s >> 7;
        s ^= s << 17;
        v = 0.5 + static_cast<double>(s >> 11) * (1.0 / 9007199254740992.0);
    }
    auto orthonormalise = [&] {
        for (const auto& q : cluster) {
            double dot = 0.0;
            for (std::size_t i = 0; i < n; ++i) dot += q[i] * x[i];
            for (std::size_t i = 0; i < n; ++i) x[i] -= dot * q[i];
        }
        double nrm = 0.0;
        for (double v : x) nrm += v * v;
        nrm = std::sqrt(nrm);
        if (!(nrm > 0.0) || !std::isfinite(nrm)) throw NumericalError("inverse iteration collapsed");
        for (auto& v : x) v /= nrm;
    };
    orthonormalise();
    for (int it = 0; it < 4; ++it) {
        solve_shifted(t, lambda, x);
        orthonormalise();
    }
    return x;
}

}  // namespace icedepth::detail
