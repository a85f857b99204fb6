#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "permssl/dataset.hpp"
#include "permssl/network.hpp"
#include "permssl/permutation.hpp"
#include "permssl/rng.hpp"
#include "permssl/soft_rank.hpp"
#include "permssl/spectrogram.hpp"

namespace permssl {

enum class LossKind { fy, softrank_mse, mse_raw, xe_fixed };

inline const char* loss_kind_name(LossKind k) {
    switch (k) {
        case LossKind::fy: return "fy";
        case LossKind::softrank_mse: return "softrank-mse";
        case LossKind::mse_raw: return "mse-raw";
        case LossKind::xe_fixed: return "xe-fixed";
    }
    throw std::invalid_argument("loss_kind_name: unknown loss kind");
}

inline LossKind parse_loss_kind(const std::string& s) {
    if (s == "fy") return LossKind::fy;
    if (s == "softrank-mse") return LossKind::softrank_mse;
    if (s == "mse-raw") return LossKind::mse_raw;
    if (s == "xe-fixed") return LossKind::xe_fixed;
    throw std::invalid_argument("unknown loss kind: " + s +
                                " (expected fy, softrank-mse, mse-raw or xe-fixed)");
}

struct PretrainConfig {
    LossKind loss = LossKind::fy;
    double epsilon = 1.0;    // fy and softrank-mse
    int32_t mc_samples = 16; // fy only
    SliceSpec slice{1, 6};   // frequency bands by default
    int32_t fixed_set_size = 100; // xe-fixed only
    int32_t fixed_set_pool = 512; // candidate pool for the greedy set construction
    int32_t epochs = 30;
    int32_t batch = 32;
    double lr = 1e-3;
    uint64_t seed = 0;
    std::vector<int32_t> encoder_widths = {256, 128};
    int32_t head_hidden = 64;
};

inline void validate_pretrain_config(const PretrainConfig& c, int32_t F, int32_t T) {
    validate_slice_spec(c.slice, F, T);
    if (c.epochs < 0) throw std::invalid_argument("pretrain: epochs must be >= 0");
    if (c.batch < 1) throw std::invalid_argument("pretrain: batch must be >= 1");
    if (!(c.lr > 0.0)) throw std::invalid_argument("pretrain: lr must be positive");
    if (c.loss == LossKind::fy || c.loss == LossKind::softrank_mse) {
        if (!(c.epsilon > 0.0)) throw std::invalid_argument("pretrain: epsilon must be positive");
    }
    if (c.loss == LossKind::fy && c.mc_samples < 1)
        throw std::invalid_argument("pretrain: mc_samples must be >= 1");
    if (c.loss == LossKind::xe_fixed) {
        if (c.fixed_set_size < 2) throw std::invalid_argument("pretrain: fixed set needs >= 2 elements");
        if (c.fixed_set_pool < c.fixed_set_size)
            throw std::invalid_argument("pretrain: fixed set pool smaller than the set");
    }
}

inline CfnDims cfn_dims_for(const PretrainConfig& c, int32_t F, int32_t T) {
    CfnDims dims;
    dims.n = c.slice.patch_count();
    dims.d = (F / c.slice.n_y) * (T / c.slice.n_x);
    dims.encoder_widths = c.encoder_widths;
    dims.head_hidden = c.head_hidden;
    dims.output_width = c.loss == LossKind::xe_fixed ? c.fixed_set_size : 0;
    return dims;
}

// One metrics row, emitted per epoch per split plus one validation row at
// epoch 0 before any update.
struct MetricsRecord {
    int64_t step = 0;
    int32_t epoch = 0;
    std::string split;
    double loss = 0.0;
    double partial_ranks_accuracy = 0.0;
    double wall_time = 0.0; // seconds since the run started
};

inline nlohmann::json metrics_to_json(const MetricsRecord& r) {
    return {{"step", r.step},
            {"epoch", r.epoch},
            {"split", r.split},
            {"loss", r.loss},
            {"partial_ranks_accuracy", r.partial_ranks_accuracy},
            {"wall_time", r.wall_time}};
}

// Pretext permutation for one (epoch, record) pair. A pure function of the
// arguments, so it is identical across loss kinds and across batch layouts.
inline Permutation sample_pretext_permutation(int32_t n, uint64_t seed, int64_t epoch,
                                              int64_t index) {
    return random_permutation(n, derive_seed(seed, stream::permutation,
                                             static_cast<uint64_t>(epoch),
                                             static_cast<uint64_t>(index)));
}

// Fixed-set analogue: which set element the (epoch, record) pair sees.
inline int32_t sample_fixed_set_index(int32_t set_size, uint64_t seed, int64_t epoch,
                                      int64_t index) {
    if (set_size < 1) throw std::invalid_argument("sample_fixed_set_index: empty set");
    Rng rng(derive_seed(seed, stream::permutation, static_cast<uint64_t>(epoch),
                        static_cast<uint64_t>(index)));
    return static_cast<int32_t>(rng.next_below(static_cast<uint64_t>(set_size)));
}

inline std::vector<Permutation> pretext_fixed_set(const PretrainConfig& c) {
    return max_hamming_set(c.slice.patch_count(), c.fixed_set_size, c.fixed_set_pool,
                           derive_seed(c.seed, stream::fixed_set));
}

// Accuracy of one prediction against the shuffle label, on the rank scale
// shared by every loss kind.
inline double pretext_accuracy_from_scores(const std::vector<double>& theta,
                                           const RankLabel& label) {
    return partial_ranks_accuracy(hard_rank(theta), label);
}

namespace detail {

struct SlicedDataset {
    SliceSpec spec;
    int32_t n = 0;
    int32_t d = 0;
    std::vector<PatchSet> sets; // identity labels
};

inline SlicedDataset slice_dataset(const std::vector<NoteRecord>& records, SliceSpec spec) {
    if (records.empty()) throw std::invalid_argument("slice_dataset: empty dataset");
    int32_t F = records[0].spectrogram.rows, T = records[0].spectrogram.cols;
    SlicedDataset out;
    out.spec = spec;
    out.n = spec.patch_count();
    out.sets.reserve(records.size());
    for (const auto& rec : records) {
        if (rec.spectrogram.rows != F || rec.spectrogram.cols != T)
            throw std::invalid_argument("slice_dataset: records disagree on F or T");
        out.sets.push_back(slice_patches(rec.spectrogram, spec));
    }
    out.d = out.sets[0].patch_dim;
    return out;
}

inline int32_t argmax_index(const std::vector<double>& v) {
    return static_cast<int32_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

// Loss and per-example metrics for one theta row under the configured loss.
struct ExampleOutcome {
    double loss = 0.0;
    double accuracy = 0.0;
    std::vector<double> grad;
};

inline ExampleOutcome score_example(const PretrainConfig& config,
                                    const std::vector<Permutation>& fixed_set,
                                    const std::vector<double>& theta, const RankLabel& label,
                                    int32_t fixed_index, uint64_t noise_seed) {
    ExampleOutcome out;
    LossAndGrad lg;
    switch (config.loss) {
        case LossKind::fy:
            lg = fy_loss_and_grad(theta, label, config.epsilon, config.mc_samples, noise_seed);
            break;
        case LossKind::softrank_mse:
            lg = soft_rank_mse_loss_and_grad(theta, label, config.epsilon);
            break;
        case LossKind::mse_raw:
            lg = raw_score_mse_loss_and_grad(theta, label);
            break;
        case LossKind::xe_fixed:
            lg = xe_fixed_loss_and_grad(theta, fixed_index);
            break;
    }
    out.loss = lg.loss;
    out.grad = std::move(lg.grad);
    if (config.loss == LossKind::xe_fixed) {
        const Permutation& pred = fixed_set[static_cast<size_t>(argmax_index(theta))];
        out.accuracy = partial_ranks_accuracy(to_rank_label(pred), label);
    } else {
        out.accuracy = pretext_accuracy_from_scores(theta, label);
    }
    return out;
}

} // namespace detail

struct PretextEval {
    double loss = 0.0;
    double accuracy = 0.0;
};

// Held-out evaluation with shuffles fixed by (eval_seed, record index): the
// same permutations every call, and the same ones for every ranking loss.
// The fixed-set baseline draws its permutations from its own set (a target
// outside the set would have no class index) using the same seeds.
inline PretextEval evaluate_pretext_full(const CfnParams<float>& params,
                                         const std::vector<NoteRecord>& records,
                                         const PretrainConfig& config, uint64_t eval_seed) {
    if (records.empty()) throw std::invalid_argument("evaluate_pretext: empty dataset");
    detail::SlicedDataset data = detail::slice_dataset(records, config.slice);
    if (data.n != params.dims.n || data.d != params.dims.d)
        throw std::invalid_argument("evaluate_pretext: params do not match sliced shapes");
    std::vector<Permutation> fixed_set;
    if (config.loss == LossKind::xe_fixed) fixed_set = pretext_fixed_set(config);

    const int64_t total = static_cast<int64_t>(data.sets.size());
    const int32_t n = data.n, d = data.d;
    const int64_t chunk = 64;
    const int32_t out_width = params.dims.head_out();
    double loss_sum = 0.0, acc_sum = 0.0;
    std::vector<float> matrix;
    std::vector<RankLabel> labels;
    std::vector<int32_t> targets;
    std::vector<int64_t> indices;
    for (int64_t start = 0; start < total; start += chunk) {
        int64_t b = std::min(chunk, total - start);
        matrix.assign(static_cast<size_t>(b) * n * d, 0.0f);
        labels.clear();
        targets.clear();
        indices.clear();
        for (int64_t k = 0; k < b; ++k) {
            int64_t i = start + k;
            Permutation p = Permutation::identity(n);
            int32_t target = -1;
            uint64_t s = derive_seed(eval_seed, stream::validation, static_cast<uint64_t>(i));
            if (config.loss == LossKind::xe_fixed) {
                Rng rng(s);
                target = static_cast<int32_t>(rng.next_below(static_cast<uint64_t>(fixed_set.size())));
                p = fixed_set[static_cast<size_t>(target)];
            } else {
                p = random_permutation(n, s);
            }
            PatchSet shuffled = shuffle_patches(data.sets[static_cast<size_t>(i)], p);
            std::copy(shuffled.patches.begin(), shuffled.patches.end(),
                      matrix.begin() + static_cast<size_t>(k) * n * d);
            labels.push_back(shuffled.label);
            targets.push_back(target);
            indices.push_back(i);
        }
        auto [theta, trace] = cfn_forward(params, std::move(matrix), b);
        matrix.clear();
        for (int64_t k = 0; k < b; ++k) {
            std::vector<double> row(theta.begin() + k * out_width,
                                    theta.begin() + (k + 1) * out_width);
            uint64_t noise_seed = derive_seed(eval_seed, stream::validation,
                                              static_cast<uint64_t>(indices[static_cast<size_t>(k)]), 1);
            auto outcome = detail::score_example(config, fixed_set, row,
                                                 labels[static_cast<size_t>(k)],
                                                 targets[static_cast<size_t>(k)], noise_seed);
            loss_sum += outcome.loss;
            acc_sum += outcome.accuracy;
        }
    }
    PretextEval eval;
    eval.loss = loss_sum / static_cast<double>(total);
    eval.accuracy = acc_sum / static_cast<double>(total);
    return eval;
}

inline double evaluate_pretext(const CfnParams<float>& params,
                               const std::vector<NoteRecord>& records,
                               const PretrainConfig& config, uint64_t eval_seed) {
    return evaluate_pretext_full(params, records, config, eval_seed).accuracy;
}

struct PretrainResult {
    CfnParams<float> params;
    std::vector<MetricsRecord> metrics;
};

// Pre-training loop: per example per epoch a fresh shuffle derived from
// (seed, epoch, record index), forward through the shared encoder and head,
// configured loss on theta, mean-reduced backprop, Adam update. Validation
// runs before training (epoch 0) and after every epoch.
inline PretrainResult pretrain(const std::vector<NoteRecord>& train,
                               const std::vector<NoteRecord>& valid,
                               const PretrainConfig& config,
                               const std::function<void(int32_t, const CfnParams<float>&)>&
                                   on_epoch = {}) {
    auto t0 = std::chrono::steady_clock::now();
    auto elapsed = [&t0] {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    };
    if (train.empty()) throw std::invalid_argument("pretrain: empty training set");
    int32_t F = train[0].spectrogram.rows, T = train[0].spectrogram.cols;
    validate_pretrain_config(config, F, T);
    detail::SlicedDataset data = detail::slice_dataset(train, config.slice);
    CfnDims dims = cfn_dims_for(config, F, T);
    if (dims.d != data.d) throw std::invalid_argument("pretrain: patch dimension mismatch");

    std::vector<Permutation> fixed_set;
    if (config.loss == LossKind::xe_fixed) fixed_set = pretext_fixed_set(config);

    PretrainResult result;
    result.params = init_cfn<float>(dims, config.seed);
    AdamState<float> opt;
    opt.lr = config.lr;
    int64_t step = 0;

    auto emit_valid = [&](int32_t epoch) {
        if (valid.empty()) return;
        PretextEval ev = evaluate_pretext_full(result.params, valid, config, config.seed);
        result.metrics.push_back({step, epoch, "valid", ev.loss, ev.accuracy, elapsed()});
    };
    emit_valid(0);

    const int32_t n = data.n, d = data.d;
    const int32_t out_width = dims.head_out();
    const int64_t total = static_cast<int64_t>(data.sets.size());
    std::vector<float> matrix;
    std::vector<float> dtheta;
    std::vector<RankLabel> labels;
    std::vector<int32_t> targets;
    std::vector<int64_t> rec_indices;
    for (int32_t epoch = 1; epoch <= config.epochs; ++epoch) {
        Permutation order = random_permutation(static_cast<int32_t>(total),
                                               derive_seed(config.seed, stream::order,
                                                           static_cast<uint64_t>(epoch)));
        double loss_sum = 0.0, acc_sum = 0.0;
        for (int64_t start = 0; start < total; start += config.batch) {
            int64_t b = std::min<int64_t>(config.batch, total - start);
            matrix.assign(static_cast<size_t>(b) * n * d, 0.0f);
            labels.clear();
            targets.clear();
            rec_indices.clear();
            for (int64_t k = 0; k < b; ++k) {
                int64_t rec = order[static_cast<int32_t>(start + k)];
                Permutation p = Permutation::identity(n);
                int32_t target = -1;
                if (config.loss == LossKind::xe_fixed) {
                    target = sample_fixed_set_index(static_cast<int32_t>(fixed_set.size()),
                                                    config.seed, epoch, rec);
                    p = fixed_set[static_cast<size_t>(target)];
                } else {
                    p = sample_pretext_permutation(n, config.seed, epoch, rec);
                }
                PatchSet shuffled = shuffle_patches(data.sets[static_cast<size_t>(rec)], p);
                std::copy(shuffled.patches.begin(), shuffled.patches.end(),
                          matrix.begin() + static_cast<size_t>(k) * n * d);
                labels.push_back(shuffled.label);
                targets.push_back(target);
                rec_indices.push_back(rec);
            }
            auto [theta, trace] = cfn_forward(result.params, std::move(matrix), b);
            matrix.clear();
            dtheta.assign(static_cast<size_t>(b) * out_width, 0.0f);
            for (int64_t k = 0; k < b; ++k) {
                std::vector<double> row(theta.begin() + k * out_width,
                                        theta.begin() + (k + 1) * out_width);
                uint64_t noise_seed =
                    derive_seed(config.seed, stream::noise, static_cast<uint64_t>(epoch),
                                static_cast<uint64_t>(rec_indices[static_cast<size_t>(k)]));
                auto outcome = detail::score_example(config, fixed_set, row,
                                                     labels[static_cast<size_t>(k)],
                                                     targets[static_cast<size_t>(k)], noise_seed);
                loss_sum += outcome.loss;
                acc_sum += outcome.accuracy;
                for (int32_t j = 0; j < out_width; ++j)
                    dtheta[static_cast<size_t>(k) * out_width + j] =
                        static_cast<float>(outcome.grad[static_cast<size_t>(j)] /
                                           static_cast<double>(b));
            }
            CfnParams<float> grads = cfn_backward(result.params, trace, dtheta);
            adam_step(opt, result.params, grads);
            ++step;
        }
        result.metrics.push_back({step, epoch, "train", loss_sum / static_cast<double>(total),
                                  acc_sum / static_cast<double>(total), elapsed()});
        emit_valid(epoch);
        if (on_epoch) on_epoch(epoch, result.params);
    }
    return result;
}

// The untrained-encoder baseline: downstream probes run on a fresh
// initialization with no pre-training.
inline CfnParams<float> random_embedding_baseline(const CfnDims& dims, uint64_t seed) {
    return init_cfn<float>(dims, seed);
}

} // namespace permssl
