#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

namespace permssl {

// Pooled blocks from an isotonic solve. Blocks partition {0..n-1} into
// contiguous runs; block b covers [start[b], start[b+1]) and carries one
// pooled value. Pooled values are strictly decreasing across blocks.
struct PavBlocks {
    std::vector<int32_t> start; // size B+1, start.front() == 0, start.back() == n
    std::vector<double> value;  // size B

    int32_t n() const { return start.empty() ? 0 : start.back(); }
    int32_t count() const { return static_cast<int32_t>(value.size()); }
};

// argmin over nonincreasing u of sum (u_i - v_i)^2, solved by
// pool-adjacent-violators in one left-to-right pass with a merge stack.
// Within each pooled block the solution is the block mean of v.
inline std::pair<std::vector<double>, PavBlocks> isotonic_regression_l2(std::span<const double> v) {
    const auto n = v.size();
    for (double x : v)
        if (std::isnan(x)) throw std::invalid_argument("isotonic_regression_l2: NaN in input");

    std::vector<int32_t> start;
    std::vector<double> sum;
    std::vector<int32_t> count;
    start.reserve(n);
    sum.reserve(n);
    count.reserve(n);

    for (size_t i = 0; i < n; ++i) {
        start.push_back(static_cast<int32_t>(i));
        sum.push_back(v[i]);
        count.push_back(1);
        // Merge while the top block's mean is >= its predecessor's. Equal
        // means are merged too, so block values end up strictly decreasing.
        while (start.size() >= 2) {
            size_t t = start.size() - 1;
            // means compared cross-multiplied; break once strictly decreasing
            if (sum[t - 1] * count[t] > sum[t] * count[t - 1]) break;
            sum[t - 1] += sum[t];
            count[t - 1] += count[t];
            start.pop_back();
            sum.pop_back();
            count.pop_back();
        }
    }

    PavBlocks blocks;
    blocks.start = std::move(start);
    blocks.start.push_back(static_cast<int32_t>(n));
    blocks.value.resize(blocks.start.size() - 1);
    std::vector<double> solution(n);
    for (size_t b = 0; b + 1 < blocks.start.size(); ++b) {
        double mean = sum[b] / static_cast<double>(count[b]);
        blocks.value[b] = mean;
        for (int32_t i = blocks.start[b]; i < blocks.start[b + 1]; ++i)
            solution[static_cast<size_t>(i)] = mean;
    }
    return {std::move(solution), std::move(blocks)};
}

inline std::pair<std::vector<double>, PavBlocks> isotonic_regression_l2(const std::vector<double>& v) {
    return isotonic_regression_l2(std::span<const double>(v));
}

// Exact vector-Jacobian product of the isotonic solution: the Jacobian is
// block-averaging, so each block of the output is the mean of the cotangent
// over that block, replicated.
inline std::vector<double> isotonic_vjp(const PavBlocks& blocks, std::span<const double> cotangent) {
    if (static_cast<int32_t>(cotangent.size()) != blocks.n())
        throw std::invalid_argument("isotonic_vjp: length mismatch");
    std::vector<double> out(cotangent.size());
    for (int32_t b = 0; b < blocks.count(); ++b) {
        double s = 0.0;
        for (int32_t i = blocks.start[static_cast<size_t>(b)]; i < blocks.start[static_cast<size_t>(b) + 1]; ++i)
            s += cotangent[static_cast<size_t>(i)];
        double mean = s / static_cast<double>(blocks.start[static_cast<size_t>(b) + 1] - blocks.start[static_cast<size_t>(b)]);
        for (int32_t i = blocks.start[static_cast<size_t>(b)]; i < blocks.start[static_cast<size_t>(b) + 1]; ++i)
            out[static_cast<size_t>(i)] = mean;
    }
    return out;
}

inline std::vector<double> isotonic_vjp(const PavBlocks& blocks, const std::vector<double>& cotangent) {
    return isotonic_vjp(blocks, std::span<const double>(cotangent));
}

} // namespace permssl
