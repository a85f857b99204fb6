#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "permssl/dataset.hpp"
#include "permssl/network.hpp"
#include "permssl/rng.hpp"
#include "permssl/soft_rank.hpp"

namespace permssl {

enum class ProbeTask { family, instrument, pitch };

inline const char* probe_task_name(ProbeTask t) {
    switch (t) {
        case ProbeTask::family: return "family";
        case ProbeTask::instrument: return "instrument";
        case ProbeTask::pitch: return "pitch";
    }
    throw std::invalid_argument("probe_task_name: unknown task");
}

inline ProbeTask parse_probe_task(const std::string& s) {
    if (s == "family") return ProbeTask::family;
    if (s == "instrument") return ProbeTask::instrument;
    if (s == "pitch") return ProbeTask::pitch;
    throw std::invalid_argument("unknown probe task: " + s +
                                " (expected family, instrument or pitch)");
}

struct ProbeConfig {
    ProbeTask task = ProbeTask::family;
    int64_t train_size = 500;
    int32_t epochs = 100;
    int32_t batch = 32;
    double lr = 1e-3;
    std::array<int32_t, 2> hidden = {128, 64};
    uint64_t seed = 0;
};

struct ProbeResult {
    std::string task;
    std::string metric; // "accuracy" or "mse"
    double value = 0.0;
    int64_t train_size = 0;
    uint64_t seed = 0;
};

// Embedding rows plus the label columns they were extracted with.
struct EmbeddingTable {
    int32_t width = 0;
    std::vector<float> rows; // count x width
    std::vector<float> pitch;
    std::vector<int32_t> family;
    std::vector<int32_t> instrument;

    int64_t count() const { return width == 0 ? 0 : static_cast<int64_t>(rows.size()) / width; }
};

// Identity-order embeddings for every record; the encoder parameters are
// read-only here and never updated.
inline EmbeddingTable extract_embeddings(const CfnParams<float>& params,
                                         const std::vector<NoteRecord>& records,
                                         const SliceSpec& spec) {
    EmbeddingTable table;
    table.width = params.dims.embedding_width();
    table.rows.reserve(records.size() * static_cast<size_t>(table.width));
    for (const auto& rec : records) {
        std::vector<float> e = embed(params, rec.spectrogram, spec);
        table.rows.insert(table.rows.end(), e.begin(), e.end());
        table.pitch.push_back(rec.pitch);
        table.family.push_back(rec.family);
        table.instrument.push_back(rec.instrument_id);
    }
    return table;
}

namespace detail {

inline std::vector<DenseLayer<float>> init_probe_mlp(int32_t in, std::array<int32_t, 2> hidden,
                                                     int32_t out, uint64_t seed) {
    std::vector<DenseLayer<float>> layers;
    layers.push_back(init_dense<float>(in, hidden[0], Activation::relu,
                                       derive_seed(seed, stream::init, 0)));
    layers.push_back(init_dense<float>(hidden[0], hidden[1], Activation::relu,
                                       derive_seed(seed, stream::init, 1)));
    layers.push_back(init_dense<float>(hidden[1], out, Activation::identity,
                                       derive_seed(seed, stream::init, 2)));
    return layers;
}

struct MlpTrace {
    std::vector<std::vector<float>> inputs;
    std::vector<std::vector<float>> preacts;
};

inline std::vector<float> mlp_forward(const std::vector<DenseLayer<float>>& layers,
                                      std::vector<float> x, int64_t rows, MlpTrace* trace) {
    for (const auto& layer : layers) {
        std::vector<float> pre, y;
        dense_forward(layer, x, rows, pre, y);
        if (trace) {
            trace->inputs.push_back(std::move(x));
            trace->preacts.push_back(std::move(pre));
        }
        x = std::move(y);
    }
    return x;
}

inline std::vector<DenseLayer<float>> mlp_backward(const std::vector<DenseLayer<float>>& layers,
                                                   const MlpTrace& trace, std::vector<float> dy,
                                                   int64_t rows) {
    std::vector<DenseLayer<float>> grads(layers.size());
    for (size_t l = layers.size(); l-- > 0;) {
        std::vector<float> dx;
        dense_backward(layers[l], trace.inputs[l], trace.preacts[l], std::move(dy), rows,
                       grads[l], dx);
        dy = std::move(dx);
    }
    return grads;
}

// Target standardization for the regression probe. A zero scale encodes
// constant targets: encode maps everything to 0, decode returns the mean
// exactly.
struct Standardizer {
    double mean = 0.0;
    double scale = 0.0;

    static Standardizer fit(const std::vector<double>& ys) {
        Standardizer st;
        double n = static_cast<double>(ys.size());
        for (double y : ys) st.mean += y;
        st.mean /= n;
        double var = 0.0;
        for (double y : ys) var += (y - st.mean) * (y - st.mean);
        double sigma = std::sqrt(var / n);
        st.scale = sigma < 1e-12 ? 0.0 : sigma;
        return st;
    }
    double encode(double y) const { return scale == 0.0 ? 0.0 : (y - mean) / scale; }
    double decode(double z) const { return z * scale + mean; }
};

} // namespace detail

// Trains a 3-layer MLP on the first train_size rows of the training table
// (after a seeded shuffle) and scores it on the held-out table. Classification
// reports accuracy; the pitch regression reports MSE in raw semitone units,
// standardizing targets with training statistics internally.
inline ProbeResult train_probe(const EmbeddingTable& train, const EmbeddingTable& held_out,
                               const ProbeConfig& config) {
    if (train.width != held_out.width)
        throw std::invalid_argument("train_probe: embedding widths differ between splits");
    if (train.width < 1) throw std::invalid_argument("train_probe: empty embeddings");
    if (config.train_size < 1 || config.train_size > train.count())
        throw std::invalid_argument("train_probe: train size outside [1, available rows]");
    if (config.epochs < 0 || config.batch < 1 || !(config.lr > 0.0))
        throw std::invalid_argument("train_probe: bad optimizer settings");
    if (held_out.count() < 1) throw std::invalid_argument("train_probe: empty held-out split");

    const bool regression = config.task == ProbeTask::pitch;
    const int32_t classes = config.task == ProbeTask::family ? kFamilyCount
                            : config.task == ProbeTask::instrument ? kInstrumentCount
                                                                   : 1;
    Permutation shuffle = random_permutation(static_cast<int32_t>(train.count()),
                                             derive_seed(config.seed, stream::probe, 0));
    std::vector<int32_t> chosen(shuffle.entries().begin(),
                                shuffle.entries().begin() + config.train_size);

    auto label_of = [&](const EmbeddingTable& t, int64_t row) -> double {
        switch (config.task) {
            case ProbeTask::family: return t.family[static_cast<size_t>(row)];
            case ProbeTask::instrument: return t.instrument[static_cast<size_t>(row)];
            case ProbeTask::pitch: return t.pitch[static_cast<size_t>(row)];
        }
        throw std::invalid_argument("train_probe: unknown task");
    };

    detail::Standardizer st;
    if (regression) {
        std::vector<double> ys;
        ys.reserve(chosen.size());
        for (int32_t row : chosen) ys.push_back(label_of(train, row));
        st = detail::Standardizer::fit(ys);
    }

    auto layers = detail::init_probe_mlp(train.width, config.hidden, classes, config.seed);
    AdamState<float> opt;
    opt.lr = config.lr;

    const int64_t m = static_cast<int64_t>(chosen.size());
    std::vector<float> batch_x;
    std::vector<float> dy;
    for (int32_t epoch = 1; epoch <= config.epochs; ++epoch) {
        Permutation order = random_permutation(static_cast<int32_t>(m),
                                               derive_seed(config.seed, stream::probe, epoch));
        for (int64_t start = 0; start < m; start += config.batch) {
            int64_t b = std::min<int64_t>(config.batch, m - start);
            batch_x.assign(static_cast<size_t>(b) * train.width, 0.0f);
            for (int64_t k = 0; k < b; ++k) {
                int64_t row = chosen[static_cast<size_t>(order[static_cast<int32_t>(start + k)])];
                std::copy(train.rows.begin() + row * train.width,
                          train.rows.begin() + (row + 1) * train.width,
                          batch_x.begin() + static_cast<size_t>(k) * train.width);
            }
            detail::MlpTrace trace;
            std::vector<float> out = detail::mlp_forward(layers, batch_x, b, &trace);
            dy.assign(static_cast<size_t>(b) * classes, 0.0f);
            for (int64_t k = 0; k < b; ++k) {
                int64_t row = chosen[static_cast<size_t>(order[static_cast<int32_t>(start + k)])];
                double target = label_of(train, row);
                if (regression) {
                    double z = st.encode(target);
                    double pred = out[static_cast<size_t>(k)];
                    dy[static_cast<size_t>(k)] =
                        static_cast<float>(2.0 * (pred - z) / static_cast<double>(b));
                } else {
                    std::vector<double> logits(out.begin() + k * classes,
                                               out.begin() + (k + 1) * classes);
                    LossAndGrad lg =
                        xe_fixed_loss_and_grad(logits, static_cast<int32_t>(target));
                    for (int32_t j = 0; j < classes; ++j)
                        dy[static_cast<size_t>(k) * classes + j] =
                            static_cast<float>(lg.grad[static_cast<size_t>(j)] /
                                               static_cast<double>(b));
                }
            }
            auto grads = detail::mlp_backward(layers, trace, std::move(dy), b);
            adam_step(opt, layers, grads);
        }
    }

    const int64_t test_n = held_out.count();
    double metric_sum = 0.0;
    const int64_t chunk = 256;
    for (int64_t start = 0; start < test_n; start += chunk) {
        int64_t b = std::min(chunk, test_n - start);
        std::vector<float> x(held_out.rows.begin() + start * held_out.width,
                             held_out.rows.begin() + (start + b) * held_out.width);
        std::vector<float> out = detail::mlp_forward(layers, std::move(x), b, nullptr);
        for (int64_t k = 0; k < b; ++k) {
            double target = label_of(held_out, start + k);
            if (regression) {
                double pred = st.decode(out[static_cast<size_t>(k)]);
                metric_sum += (pred - target) * (pred - target);
            } else {
                const float* row = out.data() + k * classes;
                int32_t arg = static_cast<int32_t>(std::max_element(row, row + classes) - row);
                metric_sum += arg == static_cast<int32_t>(target) ? 1.0 : 0.0;
            }
        }
    }
    ProbeResult result;
    result.task = probe_task_name(config.task);
    result.metric = regression ? "mse" : "accuracy";
    result.value = metric_sum / static_cast<double>(test_n);
    result.train_size = config.train_size;
    result.seed = config.seed;
    return result;
}

struct GridRow {
    std::string model;
    std::string task;
    int64_t train_size = 0;
    uint64_t seed = 0;
    std::string metric;
    double value = 0.0;
};

inline nlohmann::json grid_row_to_json(const GridRow& r) {
    return {{"model", r.model},      {"task", r.task},     {"train_size", r.train_size},
            {"seed", r.seed},        {"metric", r.metric}, {"value", r.value}};
}

// Cartesian product of models x tasks x train sizes x seeds. Each model is a
// named checkpoint; embeddings are extracted once per model and reused.
inline std::vector<GridRow> run_experiment_grid(
    const std::vector<std::pair<std::string, std::string>>& models,
    const std::vector<ProbeTask>& tasks, const std::vector<int64_t>& train_sizes,
    const std::vector<uint64_t>& seeds, const std::vector<NoteRecord>& train_records,
    const std::vector<NoteRecord>& test_records, const ProbeConfig& base) {
    std::vector<GridRow> rows;
    for (const auto& [name, path] : models) {
        auto [params, meta] = load_checkpoint(path);
        SliceSpec spec{meta.n_x, meta.n_y};
        EmbeddingTable train_table = extract_embeddings(params, train_records, spec);
        EmbeddingTable test_table = extract_embeddings(params, test_records, spec);
        for (ProbeTask task : tasks) {
            for (int64_t size : train_sizes) {
                for (uint64_t seed : seeds) {
                    ProbeConfig config = base;
                    config.task = task;
                    config.train_size = size;
                    config.seed = seed;
                    ProbeResult res = train_probe(train_table, test_table, config);
                    rows.push_back({name, res.task, res.train_size, seed, res.metric, res.value});
                }
            }
        }
    }
    return rows;
}

inline void write_grid_jsonl(const std::vector<GridRow>& rows, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open file for writing: " + path);
    for (const auto& r : rows) out << grid_row_to_json(r).dump() << "\n";
    if (!out) throw std::runtime_error("write failure: " + path);
}

// Mean and std over seeds for each (model, task, train_size) cell, in first
// appearance order.
inline std::string grid_summary_csv(const std::vector<GridRow>& rows) {
    struct Cell {
        std::string metric;
        std::vector<double> values;
    };
    std::vector<std::pair<std::array<std::string, 3>, Cell>> cells;
    for (const auto& r : rows) {
        std::array<std::string, 3> key = {r.model, r.task, std::to_string(r.train_size)};
        auto it = std::find_if(cells.begin(), cells.end(),
                               [&](const auto& c) { return c.first == key; });
        if (it == cells.end()) {
            cells.push_back({key, Cell{r.metric, {}}});
            it = cells.end() - 1;
        }
        it->second.values.push_back(r.value);
    }
    std::string csv = "model,task,train_size,metric,mean,std,seeds\n";
    char buf[128];
    for (const auto& [key, cell] : cells) {
        double n = static_cast<double>(cell.values.size());
        double mean = 0.0;
        for (double v : cell.values) mean += v;
        mean /= n;
        double var = 0.0;
        for (double v : cell.values) var += (v - mean) * (v - mean);
        double sd = std::sqrt(var / n);
        std::snprintf(buf, sizeof(buf), "%.6f,%.6f,%d", mean, sd,
                      static_cast<int>(cell.values.size()));
        csv += key[0] + "," + key[1] + "," + key[2] + "," + cell.metric + "," + buf + "\n";
    }
    return csv;
}

inline void write_grid_csv(const std::vector<GridRow>& rows, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open file for writing: " + path);
    out << grid_summary_csv(rows);
    if (!out) throw std::runtime_error("write failure: " + path);
}

} // namespace permssl
