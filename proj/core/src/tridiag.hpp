#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace icedepth::detail {

// Symmetric tridiagonal matrix with a constant off-diagonal, which is what the
// uniform-grid depth operator produces.
struct SymTridiag {
    std::vector<double> diag;
    double off = 0.0;

    std::size_t size() const { return diag.size(); }
};

// Number of eigenvalues strictly below x (Sturm sequence count).
std::size_t sturm_count(const SymTridiag& t, double x);

// The eigenvalue with ascending index `j` (0-based), bracketed in [lo, hi].
double bisect_eigenvalue(const SymTridiag& t, std::size_t j, double lo, double hi);

// Solves (T - shift I) x = b in place with partial pivoting.
void solve_shifted(const SymTridiag& t, double shift, std::span<double> b);

// Eigenvector for `lambda` by inverse iteration, orthogonalised against
// `cluster` (unit vectors of numerically close eigenvalues).  Returns a unit vector.
std::vector<double> inverse_iteration(const SymTridiag& t, double lambda,
                                      std::span<const std::vector<double>> cluster);

}  // namespace icedepth::detail
