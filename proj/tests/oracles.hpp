#pragma once

// Independent reference implementations used only by tests: exhaustive
// enumeration, convex-hull projection by the min-norm-point method, and
// small statistics helpers. Nothing here shares code with the library.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <span>
#include <stdexcept>
#include <vector>

namespace oracles {

inline std::vector<std::vector<int32_t>> enumerate_permutations(int32_t n) {
    std::vector<int32_t> p(static_cast<size_t>(n));
    std::iota(p.begin(), p.end(), 0);
    std::vector<std::vector<int32_t>> all;
    do {
        all.push_back(p);
    } while (std::next_permutation(p.begin(), p.end()));
    return all;
}

inline double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

// Minimize ||sum_i a_i s_i||^2 subject to sum_i a_i = 1 with free signs:
// solve the KKT system [G 1; 1^T 0][a; nu] = [0; 1] by Gaussian elimination.
inline std::vector<double> affine_min_norm(const std::vector<std::vector<double>>& s) {
    size_t m = s.size(), dim = m + 1;
    std::vector<double> a(dim * dim, 0.0), rhs(dim, 0.0);
    for (size_t i = 0; i < m; ++i)
        for (size_t j = 0; j < m; ++j) a[i * dim + j] = dot(s[i], s[j]);
    for (size_t i = 0; i < m; ++i) a[i * dim + m] = a[m * dim + i] = 1.0;
    rhs[m] = 1.0;
    std::vector<size_t> perm(dim);
    std::iota(perm.begin(), perm.end(), 0);
    for (size_t col = 0; col < dim; ++col) {
        size_t piv = col;
        for (size_t r = col + 1; r < dim; ++r)
            if (std::abs(a[perm[r] * dim + col]) > std::abs(a[perm[piv] * dim + col])) piv = r;
        std::swap(perm[col], perm[piv]);
        double p = a[perm[col] * dim + col];
        if (std::abs(p) < 1e-12) throw std::runtime_error("affine_min_norm: singular system");
        for (size_t r = col + 1; r < dim; ++r) {
            double f = a[perm[r] * dim + col] / p;
            if (f == 0.0) continue;
            for (size_t c = col; c < dim; ++c) a[perm[r] * dim + c] -= f * a[perm[col] * dim + c];
            rhs[perm[r]] -= f * rhs[perm[col]];
        }
    }
    std::vector<double> x(dim);
    for (size_t col = dim; col-- > 0;) {
        double acc = rhs[perm[col]];
        for (size_t c = col + 1; c < dim; ++c) acc -= a[perm[col] * dim + c] * x[c];
        x[col] = acc / a[perm[col] * dim + col];
    }
    x.resize(m);
    return x;
}

struct Projection {
    std::vector<double> point;
    // Variational-inequality gap over all vertices; the exact projection is
    // within sqrt(2 * gap) of `point`.
    double gap = 0.0;
};

// Euclidean projection of z onto conv(vertices) via Wolfe's min-norm-point
// method on the shifted hull. Exact up to round-off; the returned gap
// certifies the result without trusting the iteration.
inline Projection project_onto_hull(const std::vector<double>& z,
                                    const std::vector<std::vector<double>>& vertices) {
    size_t m = vertices.size(), n = z.size();
    std::vector<std::vector<double>> u(m, std::vector<double>(n));
    for (size_t i = 0; i < m; ++i)
        for (size_t j = 0; j < n; ++j) u[i][j] = vertices[i][j] - z[j];

    size_t start = 0;
    double best = std::numeric_limits<double>::infinity();
    for (size_t i = 0; i < m; ++i) {
        double nn = dot(u[i], u[i]);
        if (nn < best) {
            best = nn;
            start = i;
        }
    }
    std::vector<std::vector<double>> s = {u[start]};
    std::vector<size_t> active = {start};
    std::vector<double> lambda = {1.0};
    std::vector<double> x = u[start];

    for (int iter = 0; iter < 500; ++iter) {
        size_t j = 0;
        double lin = std::numeric_limits<double>::infinity();
        for (size_t i = 0; i < m; ++i) {
            double v = dot(x, u[i]);
            if (v < lin) {
                lin = v;
                j = i;
            }
        }
        if (dot(x, x) - lin <= 1e-13) break;
        if (std::find(active.begin(), active.end(), j) != active.end()) break;
        s.push_back(u[j]);
        active.push_back(j);
        lambda.push_back(0.0);

        while (true) {
            std::vector<double> a;
            try {
                a = affine_min_norm(s);
            } catch (const std::runtime_error&) {
                break;
            }
            if (std::all_of(a.begin(), a.end(), [](double v) { return v > 1e-12; })) {
                lambda = a;
                break;
            }
            double theta = 1.0;
            for (size_t i = 0; i < a.size(); ++i)
                if (a[i] <= 1e-12) theta = std::min(theta, lambda[i] / (lambda[i] - a[i]));
            for (size_t i = 0; i < a.size(); ++i)
                lambda[i] = (1.0 - theta) * lambda[i] + theta * a[i];
            for (size_t i = s.size(); i-- > 0;) {
                if (lambda[i] <= 1e-12) {
                    s.erase(s.begin() + static_cast<std::ptrdiff_t>(i));
                    active.erase(active.begin() + static_cast<std::ptrdiff_t>(i));
                    lambda.erase(lambda.begin() + static_cast<std::ptrdiff_t>(i));
                }
            }
        }
        x.assign(n, 0.0);
        for (size_t i = 0; i < s.size(); ++i)
            for (size_t c = 0; c < n; ++c) x[c] += lambda[i] * s[i][c];
    }

    double lin = std::numeric_limits<double>::infinity();
    for (size_t i = 0; i < m; ++i) lin = std::min(lin, dot(x, u[i]));
    Projection result;
    result.gap = std::max(0.0, dot(x, x) - lin);
    result.point.resize(n);
    for (size_t c = 0; c < n; ++c) result.point[c] = z[c] + x[c];
    return result;
}

// Projection of z onto the permutahedron spanned by permutations of
// (0, 1, ..., n-1).
inline Projection project_permutahedron(const std::vector<double>& z) {
    int32_t n = static_cast<int32_t>(z.size());
    std::vector<std::vector<double>> vertices;
    for (const auto& p : enumerate_permutations(n)) {
        std::vector<double> v(p.begin(), p.end());
        vertices.push_back(std::move(v));
    }
    return project_onto_hull(z, vertices);
}

// Exhaustive L2 isotonic regression with a non-increasing fit: try every
// contiguous block partition, keep feasible ones (block means weakly
// decreasing), return the fit with the smallest squared error.
inline std::vector<double> isotonic_decreasing(const std::vector<double>& y) {
    size_t n = y.size();
    if (n == 0) return {};
    if (n > 24) throw std::invalid_argument("isotonic_decreasing: too long to enumerate");
    std::vector<double> bestfit;
    double best = std::numeric_limits<double>::infinity();
    for (uint32_t mask = 0; mask < (1u << (n - 1)); ++mask) {
        std::vector<double> fit(n);
        double prev = std::numeric_limits<double>::infinity();
        double sse = 0.0;
        bool ok = true;
        size_t i = 0;
        while (i < n) {
            size_t j = i;
            while (j + 1 < n && !(mask & (1u << j))) ++j;
            double mean = 0.0;
            for (size_t k = i; k <= j; ++k) mean += y[k];
            mean /= static_cast<double>(j - i + 1);
            if (mean > prev + 1e-12) {
                ok = false;
                break;
            }
            for (size_t k = i; k <= j; ++k) {
                fit[k] = mean;
                sse += (y[k] - mean) * (y[k] - mean);
            }
            prev = mean;
            i = j + 1;
        }
        if (ok && sse < best) {
            best = sse;
            bestfit = fit;
        }
    }
    return bestfit;
}

inline double chi_squared_stat(const std::vector<int64_t>& counts, double expected) {
    double stat = 0.0;
    for (int64_t c : counts) {
        double d = static_cast<double>(c) - expected;
        stat += d * d / expected;
    }
    return stat;
}

// Kolmogorov-Smirnov distance between samples and the uniform law on
// [lo, hi].
inline double ks_uniform_stat(std::vector<double> samples, double lo, double hi) {
    std::sort(samples.begin(), samples.end());
    double n = static_cast<double>(samples.size());
    double d = 0.0;
    for (size_t i = 0; i < samples.size(); ++i) {
        double cdf = (samples[i] - lo) / (hi - lo);
        d = std::max(d, std::abs(cdf - static_cast<double>(i) / n));
        d = std::max(d, std::abs(cdf - static_cast<double>(i + 1) / n));
    }
    return d;
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
    double d = 0.0;
    for (size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(a[i] - b[i]));
    return d;
}

} // namespace oracles
