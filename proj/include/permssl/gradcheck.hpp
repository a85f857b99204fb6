#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "permssl/network.hpp"
#include "permssl/permutation.hpp"
#include "permssl/pretext.hpp"
#include "permssl/rng.hpp"
#include "permssl/soft_rank.hpp"

namespace permssl {

struct GradCheckResult {
    std::string name;
    double error = 0.0;
    double tol = 0.0;
    bool pass = false;
};

namespace detail {

// Scores with pairwise gaps >= 0.02 in random order, so finite differences
// never straddle a tie of the piecewise-linear operators.
inline std::vector<double> gapped_scores(int32_t n, uint64_t seed) {
    Rng rng(seed);
    std::vector<double> sorted(static_cast<size_t>(n));
    for (auto& v : sorted) v = rng.next_double();
    std::sort(sorted.begin(), sorted.end());
    for (int32_t i = 0; i < n; ++i) sorted[static_cast<size_t>(i)] += 0.02 * i;
    Permutation p = random_permutation(n, derive_seed(seed, 1));
    std::vector<double> theta(static_cast<size_t>(n));
    for (int32_t i = 0; i < n; ++i) theta[static_cast<size_t>(i)] = sorted[static_cast<size_t>(p[i])];
    return theta;
}

inline double rel_error(std::span<const double> got, std::span<const double> want) {
    double num = 0.0, den = 0.0;
    for (size_t i = 0; i < got.size(); ++i) {
        num = std::max(num, std::abs(got[i] - want[i]));
        den = std::max(den, std::abs(want[i]));
    }
    return num / std::max(den, 1e-12);
}

template <typename T>
std::vector<std::span<T>> cfn_tensor_views(CfnParams<T>& p) {
    std::vector<std::span<T>> v;
    collect_tensors(p.encoder, v);
    collect_tensors(p.head, v);
    return v;
}

template <typename T>
std::vector<std::span<const T>> cfn_tensor_views(const CfnParams<T>& p) {
    std::vector<std::span<const T>> v;
    collect_tensors(p.encoder, v);
    collect_tensors(p.head, v);
    return v;
}

// Everything the certificate below needs about one probe point: the ReLU
// activation pattern, the per-example loss gradients w.r.t. theta, and the
// batch loss.
struct ProbePoint {
    std::vector<uint8_t> masks;
    std::vector<double> dtheta;
    double loss = 0.0;
};

// Directional finite-difference check of the full backward pass for one loss
// kind at one precision. The losses are piecewise smooth (ReLU kinks; the
// Fenchel-Young loss is piecewise linear with kinks at rank ties), so a
// finite difference is only meaningful when the probe segment stays inside
// one smoothness cell. The check certifies that by requiring identical ReLU
// masks at -h, 0, +h (and, for the piecewise-constant FY gradient, identical
// per-example gradients) and redraws the direction until the certificate
// holds. Returns the relative error between the analytic directional
// derivative and the central difference.
template <typename T>
double end_to_end_error(LossKind kind, double eps, int32_t mc_samples, uint64_t seed, double h) {
    CfnDims dims;
    dims.n = 3;
    dims.d = 6;
    dims.encoder_widths = {4, 4};
    dims.head_hidden = 4;
    PretrainConfig config;
    config.loss = kind;
    config.epsilon = eps;
    config.mc_samples = mc_samples;
    config.seed = seed;
    std::vector<Permutation> fixed_set;
    if (kind == LossKind::xe_fixed) {
        dims.output_width = 4;
        fixed_set = max_hamming_set(dims.n, 4, 16, derive_seed(seed, stream::fixed_set));
    }
    CfnParams<T> params = init_cfn<T>(dims, seed);
    // Zero biases make exact-zero pre-activations likely on a net this small
    // (a fully inactive patch row feeds a zero bias), which would put the
    // expansion point right on a ReLU kink where the one-sided slopes differ.
    // Jitter the biases so the point is generic.
    Rng bias_rng(derive_seed(seed, 0x626a74));
    for (auto* layers : {&params.encoder, &params.head})
        for (auto& layer : *layers)
            for (T& b : layer.bias) b = static_cast<T>(0.05 * bias_rng.next_gaussian());

    const int64_t batch = 2;
    Rng rng(derive_seed(seed, 0x67636b)); // "gck"
    std::vector<T> patches(static_cast<size_t>(batch) * dims.n * dims.d);
    for (auto& v : patches) v = static_cast<T>(rng.next_gaussian());
    std::vector<RankLabel> labels;
    std::vector<int32_t> targets;
    for (int64_t k = 0; k < batch; ++k) {
        if (kind == LossKind::xe_fixed) {
            int32_t t = static_cast<int32_t>(rng.next_below(fixed_set.size()));
            targets.push_back(t);
            labels.push_back(to_rank_label(fixed_set[static_cast<size_t>(t)]));
        } else {
            targets.push_back(-1);
            labels.push_back(to_rank_label(random_permutation(dims.n, rng.next_u64())));
        }
    }
    uint64_t noise_base = derive_seed(seed, stream::noise);
    int32_t out = dims.head_out();

    auto probe = [&](const CfnParams<T>& p) {
        ProbePoint pt;
        auto [theta, trace] = cfn_forward(p, patches, batch);
        for (const auto& pre : trace.preacts)
            for (T v : pre) pt.masks.push_back(v > T(0) ? 1 : 0);
        double sum = 0.0;
        for (int64_t k = 0; k < batch; ++k) {
            std::vector<double> row(theta.begin() + k * out, theta.begin() + (k + 1) * out);
            auto outcome = score_example(config, fixed_set, row, labels[static_cast<size_t>(k)],
                                         targets[static_cast<size_t>(k)],
                                         derive_seed(noise_base, static_cast<uint64_t>(k)));
            sum += outcome.loss;
            pt.dtheta.insert(pt.dtheta.end(), outcome.grad.begin(), outcome.grad.end());
        }
        pt.loss = sum / static_cast<double>(batch);
        return pt;
    };
    auto same_cell = [&](const ProbePoint& a, const ProbePoint& b) {
        if (a.masks != b.masks) return false;
        return kind != LossKind::fy || a.dtheta == b.dtheta;
    };

    // analytic directional derivative at the base point
    auto [theta, trace] = cfn_forward(params, patches, batch);
    std::vector<T> dtheta(static_cast<size_t>(batch) * out, T(0));
    for (int64_t k = 0; k < batch; ++k) {
        std::vector<double> row(theta.begin() + k * out, theta.begin() + (k + 1) * out);
        auto outcome = score_example(config, fixed_set, row, labels[static_cast<size_t>(k)],
                                     targets[static_cast<size_t>(k)],
                                     derive_seed(noise_base, static_cast<uint64_t>(k)));
        for (int32_t j = 0; j < out; ++j)
            dtheta[static_cast<size_t>(k) * out + j] =
                static_cast<T>(outcome.grad[static_cast<size_t>(j)] / static_cast<double>(batch));
    }
    CfnParams<T> grads = cfn_backward(params, trace, dtheta);
    auto grad_views = cfn_tensor_views(static_cast<const CfnParams<T>&>(grads));
    size_t total = 0;
    for (const auto& v : grad_views) total += v.size();

    ProbePoint center = probe(params);
    double err = 0.0;
    for (uint64_t attempt = 0; attempt < 32; ++attempt) {
        Rng dir_rng(derive_seed(seed, 0x646972, attempt)); // "dir"
        std::vector<double> direction(total);
        double norm = 0.0;
        for (auto& u : direction) {
            u = dir_rng.next_gaussian();
            norm += u * u;
        }
        norm = std::sqrt(norm);
        for (auto& u : direction) u /= norm;

        double analytic = 0.0;
        size_t idx = 0;
        for (const auto& view : grad_views)
            for (T g : view) analytic += static_cast<double>(g) * direction[idx++];

        auto shift = [&](double t) {
            CfnParams<T> shifted = params;
            auto views = cfn_tensor_views(shifted);
            size_t i = 0;
            for (auto& view : views)
                for (T& p : view) p += static_cast<T>(t * direction[i++]);
            return shifted;
        };
        ProbePoint lo = probe(shift(-h));
        ProbePoint hi = probe(shift(h));
        double fd = (hi.loss - lo.loss) / (2.0 * h);
        err = std::abs(fd - analytic) / std::max(std::abs(fd), 1e-12);
        if (same_cell(lo, center) && same_cell(hi, center)) return err;
    }
    return err;
}

} // namespace detail

// The full gradient battery: exact Fenchel-Young identity, per-coordinate
// finite differences on the regularized operator, and directional end-to-end
// checks through the network in both precisions.
inline std::vector<GradCheckResult> run_gradient_checks(int32_t n, double eps, int32_t mc_samples,
                                                        uint64_t seed) {
    if (n < 2) throw std::invalid_argument("gradcheck: n must be >= 2");
    if (!(eps > 0.0)) throw std::invalid_argument("gradcheck: epsilon must be positive");
    if (mc_samples < 1) throw std::invalid_argument("gradcheck: mc_samples must be >= 1");
    std::vector<GradCheckResult> results;
    auto push = [&](const std::string& name, double err, double tol) {
        results.push_back({name, err, tol, err <= tol});
    };

    {
        double worst = 0.0;
        for (int rep = 0; rep < 25; ++rep) {
            uint64_t s = derive_seed(seed, 100, static_cast<uint64_t>(rep));
            Rng rng(s);
            std::vector<double> theta(static_cast<size_t>(n));
            for (auto& v : theta) v = 3.0 * rng.next_gaussian();
            RankLabel y = to_rank_label(random_permutation(n, derive_seed(s, 1)));
            uint64_t noise_seed = derive_seed(s, 2);
            LossAndGrad lg = fy_loss_and_grad(theta, y, eps, mc_samples, noise_seed);
            std::vector<double> soft = soft_rank_perturbed(theta, eps, mc_samples, noise_seed);
            for (int32_t i = 0; i < n; ++i) {
                double want = soft[static_cast<size_t>(i)] - static_cast<double>(y[i]);
                double diff = std::abs(lg.grad[static_cast<size_t>(i)] - want);
                worst = std::max(worst, diff);
            }
        }
        push("fy-gradient-identity", worst, 0.0);
    }

    {
        const double h = 1e-6;
        double worst = 0.0;
        for (int rep = 0; rep < 25; ++rep) {
            uint64_t s = derive_seed(seed, 200, static_cast<uint64_t>(rep));
            std::vector<double> theta = detail::gapped_scores(n, s);
            RankLabel y = to_rank_label(random_permutation(n, derive_seed(s, 1)));
            LossAndGrad lg = soft_rank_mse_loss_and_grad(theta, y, eps);
            std::vector<double> fd(static_cast<size_t>(n));
            for (int32_t i = 0; i < n; ++i) {
                std::vector<double> plus = theta, minus = theta;
                plus[static_cast<size_t>(i)] += h;
                minus[static_cast<size_t>(i)] -= h;
                double lp = soft_rank_mse_loss_and_grad(plus, y, eps).loss;
                double lm = soft_rank_mse_loss_and_grad(minus, y, eps).loss;
                fd[static_cast<size_t>(i)] = (lp - lm) / (2.0 * h);
            }
            worst = std::max(worst, detail::rel_error(lg.grad, fd));
        }
        push("softrank-mse-grad-fd-f64", worst, 1e-5);
    }

    {
        const double h = 1e-6;
        double worst = 0.0;
        for (int rep = 0; rep < 25; ++rep) {
            uint64_t s = derive_seed(seed, 300, static_cast<uint64_t>(rep));
            std::vector<double> theta = detail::gapped_scores(n, s);
            Rng rng(derive_seed(s, 1));
            std::vector<double> w(static_cast<size_t>(n));
            for (auto& v : w) v = rng.next_gaussian();
            auto [r, ctx] = soft_rank_reg(theta, eps);
            std::vector<double> analytic = soft_rank_reg_vjp(ctx, w);
            std::vector<double> fd(static_cast<size_t>(n));
            for (int32_t i = 0; i < n; ++i) {
                std::vector<double> plus = theta, minus = theta;
                plus[static_cast<size_t>(i)] += h;
                minus[static_cast<size_t>(i)] -= h;
                auto rp = soft_rank_reg(plus, eps).first;
                auto rm = soft_rank_reg(minus, eps).first;
                double acc = 0.0;
                for (int32_t j = 0; j < n; ++j)
                    acc += w[static_cast<size_t>(j)] *
                           (rp[static_cast<size_t>(j)] - rm[static_cast<size_t>(j)]);
                fd[static_cast<size_t>(i)] = acc / (2.0 * h);
            }
            worst = std::max(worst, detail::rel_error(analytic, fd));
        }
        push("softrank-reg-vjp-fd-f64", worst, 1e-5);
    }

    const LossKind kinds[] = {LossKind::fy, LossKind::softrank_mse, LossKind::xe_fixed};
    for (LossKind kind : kinds) {
        double worst = 0.0;
        for (int rep = 0; rep < 3; ++rep)
            worst = std::max(worst, detail::end_to_end_error<double>(
                                        kind, eps, mc_samples,
                                        derive_seed(seed, 400, static_cast<uint64_t>(rep)), 1e-6));
        push(std::string("end-to-end-") + loss_kind_name(kind) + "-f64", worst, 1e-5);
    }
    for (LossKind kind : kinds) {
        double worst = 0.0;
        for (int rep = 0; rep < 3; ++rep)
            worst = std::max(worst, detail::end_to_end_error<float>(
                                        kind, eps, mc_samples,
                                        derive_seed(seed, 500, static_cast<uint64_t>(rep)), 3e-3));
        push(std::string("end-to-end-") + loss_kind_name(kind) + "-f32", worst, 1e-3);
    }
    return results;
}

} // namespace permssl
