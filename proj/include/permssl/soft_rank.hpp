#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "permssl/isotonic.hpp"
#include "permssl/permutation.hpp"
#include "permssl/rng.hpp"

namespace permssl {

namespace detail {

inline void check_scores(std::span<const double> theta, const char* what) {
    if (theta.size() < 2) throw std::invalid_argument(std::string(what) + ": need at least 2 scores");
    for (double v : theta)
        if (!std::isfinite(v)) throw std::invalid_argument(std::string(what) + ": scores must be finite");
}

inline void check_epsilon(double eps, const char* what) {
    if (!(eps > 0.0)) throw std::invalid_argument(std::string(what) + ": epsilon must be > 0");
}

} // namespace detail

// Backprop context for the regularized operator: the sort applied to
// z = theta/eps and the pooled blocks of the inner isotonic solve.
struct SoftRankContext {
    double eps = 0.0;
    std::vector<int32_t> sort_desc; // sort_desc[k] = index of the k-th largest z
    PavBlocks blocks;
};

// Regularized soft rank: the Euclidean projection of theta/eps onto the
// permutahedron of (0, 1, ..., n-1). Sort z = theta/eps descending, run
// isotonic regression on z_sorted - (n-1, n-2, ..., 0), subtract the
// solution and scatter back. O(n log n) total.
inline std::pair<std::vector<double>, SoftRankContext> soft_rank_reg(std::span<const double> theta,
                                                                     double eps) {
    detail::check_scores(theta, "soft_rank_reg");
    detail::check_epsilon(eps, "soft_rank_reg");
    const auto n = theta.size();

    SoftRankContext ctx;
    ctx.eps = eps;
    ctx.sort_desc.resize(n);
    std::iota(ctx.sort_desc.begin(), ctx.sort_desc.end(), 0);
    std::stable_sort(ctx.sort_desc.begin(), ctx.sort_desc.end(), [&](int32_t a, int32_t b) {
        return theta[static_cast<size_t>(a)] > theta[static_cast<size_t>(b)];
    });

    std::vector<double> shifted(n);
    for (size_t k = 0; k < n; ++k)
        shifted[k] = theta[static_cast<size_t>(ctx.sort_desc[k])] / eps -
                     static_cast<double>(n - 1 - k);

    auto [v, blocks] = isotonic_regression_l2(shifted);
    ctx.blocks = std::move(blocks);

    std::vector<double> r(n);
    for (size_t k = 0; k < n; ++k)
        r[static_cast<size_t>(ctx.sort_desc[k])] =
            theta[static_cast<size_t>(ctx.sort_desc[k])] / eps - v[k];
    return {std::move(r), std::move(ctx)};
}

inline std::pair<std::vector<double>, SoftRankContext> soft_rank_reg(const std::vector<double>& theta,
                                                                     double eps) {
    return soft_rank_reg(std::span<const double>(theta), eps);
}

// Exact VJP of soft_rank_reg w.r.t. theta. The projection Jacobian is
// identity minus block-averaging conjugated by the sort, all scaled 1/eps.
inline std::vector<double> soft_rank_reg_vjp(const SoftRankContext& ctx,
                                             std::span<const double> cotangent) {
    const auto n = ctx.sort_desc.size();
    if (cotangent.size() != n) throw std::invalid_argument("soft_rank_reg_vjp: length mismatch");
    std::vector<double> sorted_u(n);
    for (size_t k = 0; k < n; ++k) sorted_u[k] = cotangent[static_cast<size_t>(ctx.sort_desc[k])];
    std::vector<double> pooled = isotonic_vjp(ctx.blocks, sorted_u);
    std::vector<double> dtheta(n);
    for (size_t k = 0; k < n; ++k)
        dtheta[static_cast<size_t>(ctx.sort_desc[k])] = (sorted_u[k] - pooled[k]) / ctx.eps;
    return dtheta;
}

inline std::vector<double> soft_rank_reg_vjp(const SoftRankContext& ctx,
                                             const std::vector<double>& cotangent) {
    return soft_rank_reg_vjp(ctx, std::span<const double>(cotangent));
}

namespace detail {

// Shared core of the perturbed operator and the Fenchel-Young loss: the
// Monte-Carlo average of hard ranks of theta + eps*Z, plus the matching
// estimate of the perturbed max F(theta). Per-sample noise derives from
// (seed, sample index), so the average is independent of evaluation order
// and bit-identical between the two callers.
inline std::pair<std::vector<double>, double> perturbed_rank_average(std::span<const double> theta,
                                                                     double eps, int32_t samples,
                                                                     uint64_t seed) {
    check_scores(theta, "soft_rank_perturbed");
    check_epsilon(eps, "soft_rank_perturbed");
    if (samples < 1) throw std::invalid_argument("soft_rank_perturbed: samples must be >= 1");
    const auto n = theta.size();

    std::vector<double> avg(n, 0.0);
    std::vector<double> perturbed(n);
    double f_hat = 0.0;
    for (int32_t m = 0; m < samples; ++m) {
        Rng rng(derive_seed(seed, stream::noise, static_cast<uint64_t>(m)));
        for (size_t j = 0; j < n; ++j) perturbed[j] = theta[j] + eps * rng.next_gaussian();
        RankLabel ranks = hard_rank(std::span<const double>(perturbed));
        double dot = 0.0;
        for (size_t j = 0; j < n; ++j) {
            double rj = static_cast<double>(ranks[static_cast<int32_t>(j)]);
            avg[j] += rj;
            dot += perturbed[j] * rj;
        }
        f_hat += dot;
    }
    const double inv = 1.0 / static_cast<double>(samples);
    for (size_t j = 0; j < n; ++j) avg[j] *= inv;
    f_hat *= inv;
    return {std::move(avg), f_hat};
}

} // namespace detail

// Stochastic soft rank: (1/M) sum_m hard_rank(theta + eps*Z_m) with
// standard Gaussian Z_m. Deterministic given seed.
inline std::vector<double> soft_rank_perturbed(std::span<const double> theta, double eps,
                                               int32_t samples, uint64_t seed) {
    return detail::perturbed_rank_average(theta, eps, samples, seed).first;
}

inline std::vector<double> soft_rank_perturbed(const std::vector<double>& theta, double eps,
                                               int32_t samples, uint64_t seed) {
    return soft_rank_perturbed(std::span<const double>(theta), eps, samples, seed);
}

// Fenchel-Young loss for the perturbed operator. The gradient is the
// perturbed soft rank minus the label, on the same Monte-Carlo draw. The
// loss value omits the theta-independent constant, so it is comparable
// within a run, not across losses.
struct LossAndGrad {
    double loss = 0.0;
    std::vector<double> grad;
};

inline LossAndGrad fy_loss_and_grad(std::span<const double> theta, const RankLabel& y, double eps,
                                    int32_t samples, uint64_t seed) {
    if (static_cast<int32_t>(theta.size()) != y.size())
        throw std::invalid_argument("fy_loss_and_grad: label length mismatch");
    auto [avg, f_hat] = detail::perturbed_rank_average(theta, eps, samples, seed);
    LossAndGrad out;
    out.grad.resize(theta.size());
    double inner = 0.0;
    for (size_t j = 0; j < theta.size(); ++j) {
        double yj = static_cast<double>(y[static_cast<int32_t>(j)]);
        out.grad[j] = avg[j] - yj;
        inner += theta[j] * yj;
    }
    out.loss = f_hat - inner;
    return out;
}

inline LossAndGrad fy_loss_and_grad(const std::vector<double>& theta, const RankLabel& y, double eps,
                                    int32_t samples, uint64_t seed) {
    return fy_loss_and_grad(std::span<const double>(theta), y, eps, samples, seed);
}

// ||soft_rank_reg(theta) - y||^2 / 2 with the exact VJP gradient.
inline LossAndGrad soft_rank_mse_loss_and_grad(std::span<const double> theta, const RankLabel& y,
                                               double eps) {
    if (static_cast<int32_t>(theta.size()) != y.size())
        throw std::invalid_argument("soft_rank_mse_loss_and_grad: label length mismatch");
    auto [r, ctx] = soft_rank_reg(theta, eps);
    std::vector<double> diff(r.size());
    double loss = 0.0;
    for (size_t j = 0; j < r.size(); ++j) {
        diff[j] = r[j] - static_cast<double>(y[static_cast<int32_t>(j)]);
        loss += diff[j] * diff[j];
    }
    LossAndGrad out;
    out.loss = 0.5 * loss;
    out.grad = soft_rank_reg_vjp(ctx, diff);
    return out;
}

inline LossAndGrad soft_rank_mse_loss_and_grad(const std::vector<double>& theta, const RankLabel& y,
                                               double eps) {
    return soft_rank_mse_loss_and_grad(std::span<const double>(theta), y, eps);
}

// MSE applied directly to raw scores: ||theta - y||^2 / 2, grad theta - y.
inline LossAndGrad raw_score_mse_loss_and_grad(std::span<const double> theta, const RankLabel& y) {
    if (static_cast<int32_t>(theta.size()) != y.size())
        throw std::invalid_argument("raw_score_mse_loss_and_grad: label length mismatch");
    LossAndGrad out;
    out.grad.resize(theta.size());
    for (size_t j = 0; j < theta.size(); ++j) {
        out.grad[j] = theta[j] - static_cast<double>(y[static_cast<int32_t>(j)]);
        out.loss += 0.5 * out.grad[j] * out.grad[j];
    }
    return out;
}

// Softmax cross-entropy over a fixed permutation set, with max-subtracted
// log-sum-exp. grad = softmax(logits) - one_hot(class_index).
inline LossAndGrad xe_fixed_loss_and_grad(std::span<const double> logits, int32_t class_index) {
    if (logits.empty()) throw std::invalid_argument("xe_fixed_loss_and_grad: empty logits");
    if (class_index < 0 || static_cast<size_t>(class_index) >= logits.size())
        throw std::invalid_argument("xe_fixed_loss_and_grad: class index out of range");
    for (double v : logits)
        if (!std::isfinite(v)) throw std::invalid_argument("xe_fixed_loss_and_grad: logits must be finite");

    double mx = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (double v : logits) sum += std::exp(v - mx);
    double lse = mx + std::log(sum);

    LossAndGrad out;
    out.loss = lse - logits[static_cast<size_t>(class_index)];
    out.grad.resize(logits.size());
    for (size_t j = 0; j < logits.size(); ++j)
        out.grad[j] = std::exp(logits[j] - lse) - (static_cast<int32_t>(j) == class_index ? 1.0 : 0.0);
    return out;
}

inline LossAndGrad xe_fixed_loss_and_grad(const std::vector<double>& logits, int32_t class_index) {
    return xe_fixed_loss_and_grad(std::span<const double>(logits), class_index);
}

} // namespace permssl
