#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <utility>
#include <vector>

#include "permssl/permutation.hpp"

namespace permssl {

// F x T log-compressed magnitude matrix, row-major. Rows are frequency bins
// low to high, columns are time frames.
struct Spectrogram {
    int32_t rows = 0; // F, frequency bins
    int32_t cols = 0; // T, time frames
    std::vector<float> data;

    float at(int32_t f, int32_t t) const { return data[static_cast<size_t>(f) * cols + t]; }
    float& at(int32_t f, int32_t t) { return data[static_cast<size_t>(f) * cols + t]; }
};

inline Spectrogram make_spectrogram(int32_t rows, int32_t cols) {
    if (rows < 1 || cols < 1) throw std::invalid_argument("Spectrogram: dims must be positive");
    Spectrogram s;
    s.rows = rows;
    s.cols = cols;
    s.data.assign(static_cast<size_t>(rows) * cols, 0.0f);
    return s;
}

// How to cut a spectrogram: n_x columns of patches along time, n_y rows of
// patches along frequency. n_x = 1 slices frequency bands, n_y = 1 slices
// time frames.
struct SliceSpec {
    int32_t n_x = 1;
    int32_t n_y = 1;

    int32_t patch_count() const { return n_x * n_y; }
};

inline void validate_slice_spec(const SliceSpec& spec, int32_t rows, int32_t cols) {
    if (spec.n_x < 1 || spec.n_y < 1)
        throw std::invalid_argument("SliceSpec: n_x and n_y must be positive");
    if (spec.patch_count() < 2)
        throw std::invalid_argument("SliceSpec: need at least 2 patches");
    if (spec.n_x > cols || spec.n_y > rows)
        throw std::invalid_argument("SliceSpec: more patches than rows/columns");
}

// n flattened patches of equal dimension, in frequency-major order, with
// the pretext label (identity until shuffled).
struct PatchSet {
    SliceSpec spec;
    int32_t patch_dim = 0;
    std::vector<float> patches; // n x patch_dim, row-major by patch index
    RankLabel label = RankLabel::identity(2);

    int32_t count() const { return spec.patch_count(); }
    const float* patch(int32_t k) const { return patches.data() + static_cast<size_t>(k) * patch_dim; }
};

// Patch k = row*n_x + col covers the contiguous floor(F/n_y) x floor(T/n_x)
// sub-matrix at (row*floor(F/n_y), col*floor(T/n_x)), flattened row-major.
// Trailing remainder rows/columns are discarded so every patch has the same
// dimension.
inline PatchSet slice_patches(const Spectrogram& s, const SliceSpec& spec) {
    validate_slice_spec(spec, s.rows, s.cols);
    const int32_t ph = s.rows / spec.n_y; // patch rows
    const int32_t pw = s.cols / spec.n_x; // patch cols
    const int32_t n = spec.patch_count();

    PatchSet ps;
    ps.spec = spec;
    ps.patch_dim = ph * pw;
    ps.patches.resize(static_cast<size_t>(n) * ps.patch_dim);
    ps.label = RankLabel::identity(n);

    for (int32_t row = 0; row < spec.n_y; ++row) {
        for (int32_t col = 0; col < spec.n_x; ++col) {
            float* dst = ps.patches.data() + static_cast<size_t>(row * spec.n_x + col) * ps.patch_dim;
            for (int32_t f = 0; f < ph; ++f) {
                const float* src = s.data.data() + static_cast<size_t>(row * ph + f) * s.cols + col * pw;
                std::copy(src, src + pw, dst + static_cast<size_t>(f) * pw);
            }
        }
    }
    return ps;
}

// Reorders patches by p; the label becomes p read as ranks, so sorting
// shuffled patches by ascending label restores the original order.
inline PatchSet shuffle_patches(const PatchSet& ps, const Permutation& p) {
    if (p.size() != ps.count()) throw std::invalid_argument("shuffle_patches: length mismatch");
    PatchSet out;
    out.spec = ps.spec;
    out.patch_dim = ps.patch_dim;
    out.patches.resize(ps.patches.size());
    for (int32_t j = 0; j < p.size(); ++j) {
        const float* src = ps.patch(p[j]);
        std::copy(src, src + ps.patch_dim, out.patches.data() + static_cast<size_t>(j) * ps.patch_dim);
    }
    out.label = to_rank_label(p);
    return out;
}

} // namespace permssl
