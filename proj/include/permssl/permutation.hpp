#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "permssl/rng.hpp"

namespace permssl {

namespace detail {

inline void check_bijection(std::span<const int32_t> entries, const char* what) {
    const auto n = entries.size();
    if (n < 2) throw std::invalid_argument(std::string(what) + ": size must be >= 2");
    std::vector<bool> seen(n, false);
    for (int32_t e : entries) {
        if (e < 0 || static_cast<size_t>(e) >= n || seen[static_cast<size_t>(e)])
            throw std::invalid_argument(std::string(what) + ": entries must be a bijection of {0..n-1}");
        seen[static_cast<size_t>(e)] = true;
    }
}

} // namespace detail

// A bijection of {0..n-1}. entries[j] is the source index feeding slot j.
class Permutation {
public:
    explicit Permutation(std::vector<int32_t> entries) : entries_(std::move(entries)) {
        detail::check_bijection(entries_, "Permutation");
    }

    static Permutation identity(int32_t n) {
        std::vector<int32_t> e(static_cast<size_t>(n));
        std::iota(e.begin(), e.end(), 0);
        return Permutation(std::move(e));
    }

    int32_t size() const { return static_cast<int32_t>(entries_.size()); }
    int32_t operator[](int32_t i) const { return entries_[static_cast<size_t>(i)]; }
    const std::vector<int32_t>& entries() const { return entries_; }

    bool operator==(const Permutation& other) const = default;

private:
    std::vector<int32_t> entries_;
};

// A rank vector: ranks[i] is the 0-based ascending rank of item i.
// Carries the same bijection invariant as Permutation but is a distinct
// domain concept (pretext target), so it gets its own type.
class RankLabel {
public:
    explicit RankLabel(std::vector<int32_t> ranks) : ranks_(std::move(ranks)) {
        detail::check_bijection(ranks_, "RankLabel");
    }

    static RankLabel identity(int32_t n) {
        std::vector<int32_t> r(static_cast<size_t>(n));
        std::iota(r.begin(), r.end(), 0);
        return RankLabel(std::move(r));
    }

    int32_t size() const { return static_cast<int32_t>(ranks_.size()); }
    int32_t operator[](int32_t i) const { return ranks_[static_cast<size_t>(i)]; }
    const std::vector<int32_t>& ranks() const { return ranks_; }

    bool operator==(const RankLabel& other) const = default;

private:
    std::vector<int32_t> ranks_;
};

// Pretext label convention: the permutation is read directly as ranks.
// Sorting shuffled slots by ascending label restores the original order.
inline RankLabel to_rank_label(const Permutation& p) {
    return RankLabel(p.entries());
}

inline std::vector<double> rank_label_as_doubles(const RankLabel& y) {
    return std::vector<double>(y.ranks().begin(), y.ranks().end());
}

// Uniform over all n! permutations (Fisher-Yates), deterministic given seed.
inline Permutation random_permutation(int32_t n, uint64_t seed) {
    if (n < 2) throw std::invalid_argument("random_permutation: n must be >= 2");
    std::vector<int32_t> e(static_cast<size_t>(n));
    std::iota(e.begin(), e.end(), 0);
    Rng rng(seed);
    for (int32_t i = n - 1; i > 0; --i) {
        auto j = static_cast<int32_t>(rng.next_below(static_cast<uint64_t>(i) + 1));
        std::swap(e[static_cast<size_t>(i)], e[static_cast<size_t>(j)]);
    }
    return Permutation(std::move(e));
}

// out[j] = items[p[j]].
template <typename T>
std::vector<T> apply_permutation(const std::vector<T>& items, const Permutation& p) {
    if (static_cast<int32_t>(items.size()) != p.size())
        throw std::invalid_argument("apply_permutation: length mismatch");
    std::vector<T> out;
    out.reserve(items.size());
    for (int32_t j = 0; j < p.size(); ++j) out.push_back(items[static_cast<size_t>(p[j])]);
    return out;
}

inline Permutation invert_permutation(const Permutation& p) {
    std::vector<int32_t> q(static_cast<size_t>(p.size()));
    for (int32_t j = 0; j < p.size(); ++j) q[static_cast<size_t>(p[j])] = j;
    return Permutation(std::move(q));
}

// Ascending ranks: the smallest score gets rank 0. Ties are broken stably
// by index so test vectors stay deterministic.
inline RankLabel hard_rank(std::span<const double> theta) {
    const auto n = theta.size();
    if (n < 2) throw std::invalid_argument("hard_rank: need at least 2 scores");
    for (double v : theta)
        if (std::isnan(v)) throw std::invalid_argument("hard_rank: NaN in input");
    std::vector<int32_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](int32_t a, int32_t b) {
        return theta[static_cast<size_t>(a)] < theta[static_cast<size_t>(b)];
    });
    std::vector<int32_t> ranks(n);
    for (size_t k = 0; k < n; ++k) ranks[static_cast<size_t>(idx[k])] = static_cast<int32_t>(k);
    return RankLabel(std::move(ranks));
}

inline RankLabel hard_rank(const std::vector<double>& theta) {
    return hard_rank(std::span<const double>(theta));
}

// Fraction of positions ranked identically.
inline double partial_ranks_accuracy(const RankLabel& pred, const RankLabel& truth) {
    if (pred.size() != truth.size())
        throw std::invalid_argument("partial_ranks_accuracy: length mismatch");
    int32_t hits = 0;
    for (int32_t i = 0; i < pred.size(); ++i) hits += (pred[i] == truth[i]) ? 1 : 0;
    return static_cast<double>(hits) / static_cast<double>(pred.size());
}

inline int32_t hamming_distance(const Permutation& p, const Permutation& q) {
    if (p.size() != q.size()) throw std::invalid_argument("hamming_distance: length mismatch");
    int32_t d = 0;
    for (int32_t i = 0; i < p.size(); ++i) d += (p[i] != q[i]) ? 1 : 0;
    return d;
}

namespace detail {

// n! saturating at uint64 max; enough to validate L <= n!.
inline uint64_t saturating_factorial(int32_t n) {
    uint64_t f = 1;
    for (int32_t k = 2; k <= n; ++k) {
        if (f > UINT64_MAX / static_cast<uint64_t>(k)) return UINT64_MAX;
        f *= static_cast<uint64_t>(k);
    }
    return f;
}

} // namespace detail

// Greedy max-min Hamming construction over freshly sampled candidate pools.
// Starts from one random permutation and at each step adds the pool
// candidate whose minimum Hamming distance to the chosen set is largest.
inline std::vector<Permutation> max_hamming_set(int32_t n, int32_t L, int32_t pool, uint64_t seed) {
    if (n < 2) throw std::invalid_argument("max_hamming_set: n must be >= 2");
    if (L < 1) throw std::invalid_argument("max_hamming_set: L must be >= 1");
    if (static_cast<uint64_t>(L) > detail::saturating_factorial(n))
        throw std::invalid_argument("max_hamming_set: L exceeds n!");
    if (pool < L) throw std::invalid_argument("max_hamming_set: pool must be >= L");

    std::vector<Permutation> chosen;
    chosen.reserve(static_cast<size_t>(L));
    chosen.push_back(random_permutation(n, derive_seed(seed, 0)));

    uint64_t draw = 1;
    while (static_cast<int32_t>(chosen.size()) < L) {
        int32_t best_score = -1;
        const Permutation* best = nullptr;
        std::vector<Permutation> candidates;
        candidates.reserve(static_cast<size_t>(pool));
        for (int32_t c = 0; c < pool; ++c)
            candidates.push_back(random_permutation(n, derive_seed(seed, draw++)));
        for (const Permutation& cand : candidates) {
            int32_t min_d = n + 1;
            bool duplicate = false;
            for (const Permutation& have : chosen) {
                int32_t d = hamming_distance(cand, have);
                if (d == 0) { duplicate = true; break; }
                min_d = std::min(min_d, d);
            }
            if (!duplicate && min_d > best_score) {
                best_score = min_d;
                best = &cand;
            }
        }
        // Fresh pools make an all-duplicate pool vanishingly unlikely unless
        // L is close to n!; in that regime just keep sampling.
        if (best != nullptr) chosen.push_back(*best);
    }
    return chosen;
}

} // namespace permssl
