#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "permssl/bytes.hpp"
#include "permssl/error.hpp"
#include "permssl/rng.hpp"
#include "permssl/spectrogram.hpp"

namespace permssl {

enum class Activation { relu, identity };

// Fully connected layer, weight stored out x in row-major.
template <typename T>
struct DenseLayer {
    int32_t in = 0;
    int32_t out = 0;
    Activation act = Activation::relu;
    std::vector<T> weight; // out x in
    std::vector<T> bias;   // out

    void validate() const {
        if (in < 1 || out < 1) throw std::invalid_argument("DenseLayer: dims must be positive");
        if (weight.size() != static_cast<size_t>(in) * out || bias.size() != static_cast<size_t>(out))
            throw std::invalid_argument("DenseLayer: parameter shapes inconsistent with dims");
    }
};

namespace detail {

// y = act(x W^T + b) for M rows. Writes pre-activations and activations.
template <typename T>
void dense_forward(const DenseLayer<T>& layer, const std::vector<T>& x, int64_t rows,
                   std::vector<T>& pre, std::vector<T>& y) {
    if (x.size() != static_cast<size_t>(rows) * layer.in)
        throw std::invalid_argument("dense_forward: input shape mismatch");
    pre.assign(static_cast<size_t>(rows) * layer.out, T(0));
    for (int64_t i = 0; i < rows; ++i) {
        const T* xi = x.data() + i * layer.in;
        T* pi = pre.data() + i * layer.out;
        for (int32_t o = 0; o < layer.out; ++o) {
            const T* wo = layer.weight.data() + static_cast<size_t>(o) * layer.in;
            T acc = layer.bias[static_cast<size_t>(o)];
            for (int32_t j = 0; j < layer.in; ++j) acc += xi[j] * wo[j];
            pi[o] = acc;
        }
    }
    y = pre;
    if (layer.act == Activation::relu) {
        for (T& v : y)
            if (v < T(0)) v = T(0);
    }
}

// Given d(loss)/d(post-activation) in dy, accumulates layer gradients and
// computes d(loss)/d(input). Gradient accumulation order is fixed by row
// index, so results are bit-reproducible.
template <typename T>
void dense_backward(const DenseLayer<T>& layer, const std::vector<T>& x,
                    const std::vector<T>& pre, std::vector<T> dy, int64_t rows,
                    DenseLayer<T>& grad, std::vector<T>& dx) {
    if (dy.size() != static_cast<size_t>(rows) * layer.out)
        throw std::invalid_argument("dense_backward: cotangent shape mismatch");
    if (layer.act == Activation::relu) {
        for (size_t i = 0; i < dy.size(); ++i)
            if (pre[i] <= T(0)) dy[i] = T(0);
    }
    grad.in = layer.in;
    grad.out = layer.out;
    grad.act = layer.act;
    grad.weight.assign(layer.weight.size(), T(0));
    grad.bias.assign(layer.bias.size(), T(0));
    dx.assign(static_cast<size_t>(rows) * layer.in, T(0));
    for (int64_t i = 0; i < rows; ++i) {
        const T* xi = x.data() + i * layer.in;
        const T* di = dy.data() + i * layer.out;
        T* dxi = dx.data() + i * layer.in;
        for (int32_t o = 0; o < layer.out; ++o) {
            T g = di[o];
            if (g == T(0)) continue;
            grad.bias[static_cast<size_t>(o)] += g;
            T* gw = grad.weight.data() + static_cast<size_t>(o) * layer.in;
            const T* wo = layer.weight.data() + static_cast<size_t>(o) * layer.in;
            for (int32_t j = 0; j < layer.in; ++j) {
                gw[j] += g * xi[j];
                dxi[j] += g * wo[j];
            }
        }
    }
}

template <typename T>
DenseLayer<T> init_dense(int32_t in, int32_t out, Activation act, uint64_t seed) {
    DenseLayer<T> layer;
    layer.in = in;
    layer.out = out;
    layer.act = act;
    layer.weight.resize(static_cast<size_t>(in) * out);
    layer.bias.assign(static_cast<size_t>(out), T(0));
    Rng rng(seed);
    double scale = std::sqrt(6.0 / (static_cast<double>(in) + out));
    for (auto& w : layer.weight) w = static_cast<T>(scale * (2.0 * rng.next_double() - 1.0));
    return layer;
}

} // namespace detail

// Architecture description. The encoder is shared across the n patches; its
// outputs are concatenated (the embedding) and passed through a 2-layer head.
// output_width is n for rank prediction and the fixed-set size for the
// fixed-permutation classification baseline.
struct CfnDims {
    int32_t n = 0;
    int32_t d = 0;
    std::vector<int32_t> encoder_widths = {256, 128};
    int32_t head_hidden = 64;
    int32_t output_width = 0; // defaults to n when 0

    int32_t encoder_out() const {
        return encoder_widths.empty() ? 0 : encoder_widths.back();
    }
    int32_t embedding_width() const { return n * encoder_out(); }
    int32_t head_out() const { return output_width == 0 ? n : output_width; }

    void validate() const {
        if (n < 2) throw std::invalid_argument("CfnDims: need n >= 2 patches");
        if (d < 1) throw std::invalid_argument("CfnDims: patch dimension must be positive");
        if (encoder_widths.empty()) throw std::invalid_argument("CfnDims: encoder needs a layer");
        for (int32_t w : encoder_widths)
            if (w < 1) throw std::invalid_argument("CfnDims: encoder widths must be positive");
        if (head_hidden < 1) throw std::invalid_argument("CfnDims: head width must be positive");
        if (output_width < 0) throw std::invalid_argument("CfnDims: output width must be >= 0");
    }

    bool operator==(const CfnDims&) const = default;
};

template <typename T>
struct CfnParams {
    CfnDims dims;
    std::vector<DenseLayer<T>> encoder;
    std::vector<DenseLayer<T>> head; // exactly 2 layers

    void validate() const {
        dims.validate();
        if (encoder.size() != dims.encoder_widths.size())
            throw std::invalid_argument("CfnParams: encoder layer count mismatch");
        int32_t in = dims.d;
        for (size_t l = 0; l < encoder.size(); ++l) {
            encoder[l].validate();
            if (encoder[l].in != in || encoder[l].out != dims.encoder_widths[l])
                throw std::invalid_argument("CfnParams: encoder widths mismatch");
            in = encoder[l].out;
        }
        if (head.size() != 2) throw std::invalid_argument("CfnParams: head must have 2 layers");
        head[0].validate();
        head[1].validate();
        if (head[0].in != dims.embedding_width() || head[0].out != dims.head_hidden)
            throw std::invalid_argument("CfnParams: head input width mismatch");
        if (head[1].in != dims.head_hidden || head[1].out != dims.head_out())
            throw std::invalid_argument("CfnParams: head output width mismatch");
    }
};

// Glorot-uniform weights, zero biases, one derived seed per layer.
template <typename T = float>
CfnParams<T> init_cfn(const CfnDims& dims, uint64_t seed) {
    dims.validate();
    CfnParams<T> params;
    params.dims = dims;
    uint64_t layer_index = 0;
    int32_t in = dims.d;
    for (int32_t w : dims.encoder_widths) {
        params.encoder.push_back(
            detail::init_dense<T>(in, w, Activation::relu, derive_seed(seed, stream::init, layer_index++)));
        in = w;
    }
    params.head.push_back(detail::init_dense<T>(dims.embedding_width(), dims.head_hidden,
                                                Activation::relu,
                                                derive_seed(seed, stream::init, layer_index++)));
    params.head.push_back(detail::init_dense<T>(dims.head_hidden, dims.head_out(),
                                                Activation::identity,
                                                derive_seed(seed, stream::init, layer_index++)));
    return params;
}

// Per-layer inputs and pre-activations from one forward pass. Encoder stages
// hold batch*n rows (one per patch); head stages hold batch rows. The final
// encoder activation doubles as the embedding matrix: the row-major
// (batch*n) x e layout is bit-identical to batch x (n*e).
template <typename T>
struct ForwardTrace {
    int64_t batch = 0;
    std::vector<std::vector<T>> inputs;  // input to each layer, encoder then head
    std::vector<std::vector<T>> preacts; // pre-activation of each layer

    const std::vector<T>& embedding(const CfnParams<T>& params) const {
        return inputs.at(params.encoder.size());
    }
};

// patches: (batch*n) x d row-major. Returns theta (batch x head_out) and the
// trace needed by cfn_backward.
template <typename T>
std::pair<std::vector<T>, ForwardTrace<T>> cfn_forward(const CfnParams<T>& params,
                                                       std::vector<T> patches, int64_t batch) {
    params.validate();
    if (batch < 1) throw std::invalid_argument("cfn_forward: empty batch");
    if (patches.size() != static_cast<size_t>(batch) * params.dims.n * params.dims.d)
        throw std::invalid_argument("cfn_forward: patch matrix shape mismatch");
    ForwardTrace<T> trace;
    trace.batch = batch;
    std::vector<T> cur = std::move(patches);
    int64_t rows = batch * params.dims.n;
    for (const auto& layer : params.encoder) {
        std::vector<T> pre, y;
        detail::dense_forward(layer, cur, rows, pre, y);
        trace.inputs.push_back(std::move(cur));
        trace.preacts.push_back(std::move(pre));
        cur = std::move(y);
    }
    // reshape (batch*n) x e -> batch x (n*e): no data movement
    rows = batch;
    for (const auto& layer : params.head) {
        std::vector<T> pre, y;
        detail::dense_forward(layer, cur, rows, pre, y);
        trace.inputs.push_back(std::move(cur));
        trace.preacts.push_back(std::move(pre));
        cur = std::move(y);
    }
    return {std::move(cur), std::move(trace)};
}

// Exact gradients of <theta, dtheta> w.r.t. all parameters. Encoder gradients
// accumulate over all n patch rows, which is what weight sharing means.
template <typename T>
CfnParams<T> cfn_backward(const CfnParams<T>& params, const ForwardTrace<T>& trace,
                          const std::vector<T>& dtheta) {
    size_t layer_count = params.encoder.size() + params.head.size();
    if (trace.inputs.size() != layer_count || trace.preacts.size() != layer_count)
        throw std::invalid_argument("cfn_backward: trace does not match architecture");
    if (dtheta.size() != static_cast<size_t>(trace.batch) * params.dims.head_out())
        throw std::invalid_argument("cfn_backward: dtheta shape mismatch");
    CfnParams<T> grads;
    grads.dims = params.dims;
    grads.encoder.resize(params.encoder.size());
    grads.head.resize(params.head.size());
    std::vector<T> delta = dtheta;
    for (size_t l = params.head.size(); l-- > 0;) {
        size_t t = params.encoder.size() + l;
        std::vector<T> dx;
        detail::dense_backward(params.head[l], trace.inputs[t], trace.preacts[t], std::move(delta),
                               trace.batch, grads.head[l], dx);
        delta = std::move(dx);
    }
    int64_t rows = trace.batch * params.dims.n;
    for (size_t l = params.encoder.size(); l-- > 0;) {
        std::vector<T> dx;
        detail::dense_backward(params.encoder[l], trace.inputs[l], trace.preacts[l],
                               std::move(delta), rows, grads.encoder[l], dx);
        delta = std::move(dx);
    }
    return grads;
}

// Identity-order embedding of one spectrogram: slice, run the shared encoder,
// concatenate in patch order. The head is not applied.
template <typename T = float>
std::vector<T> embed(const CfnParams<T>& params, const Spectrogram& s, const SliceSpec& spec) {
    params.validate();
    if (spec.patch_count() != params.dims.n)
        throw std::invalid_argument("embed: slice spec patch count does not match params");
    PatchSet ps = slice_patches(s, spec);
    if (ps.patch_dim != params.dims.d)
        throw std::invalid_argument("embed: patch dimension does not match params");
    std::vector<T> cur(ps.patches.begin(), ps.patches.end());
    int64_t rows = params.dims.n;
    for (const auto& layer : params.encoder) {
        std::vector<T> pre, y;
        detail::dense_forward(layer, cur, rows, pre, y);
        cur = std::move(y);
    }
    return cur;
}

// Adam with bias correction. Moment buffers mirror the tensor list they were
// first used with (weights and biases, encoder layers then head layers).
template <typename T>
struct AdamState {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double delta = 1e-8;
    int64_t step = 0;
    std::vector<std::vector<T>> m;
    std::vector<std::vector<T>> v;
};

namespace detail {

template <typename T>
void collect_tensors(std::vector<DenseLayer<T>>& layers, std::vector<std::span<T>>& out) {
    for (auto& layer : layers) {
        out.emplace_back(layer.weight);
        out.emplace_back(layer.bias);
    }
}

template <typename T>
void collect_tensors(const std::vector<DenseLayer<T>>& layers,
                     std::vector<std::span<const T>>& out) {
    for (const auto& layer : layers) {
        out.emplace_back(layer.weight);
        out.emplace_back(layer.bias);
    }
}

template <typename T>
void adam_step_tensors(AdamState<T>& state, const std::vector<std::span<T>>& params,
                       const std::vector<std::span<const T>>& grads) {
    if (params.size() != grads.size())
        throw std::invalid_argument("adam_step: parameter/gradient tensor counts differ");
    if (state.m.empty()) {
        for (const auto& p : params) {
            state.m.emplace_back(p.size(), T(0));
            state.v.emplace_back(p.size(), T(0));
        }
    }
    if (state.m.size() != params.size())
        throw std::invalid_argument("adam_step: state does not match parameter list");
    state.step += 1;
    T c1 = static_cast<T>(1.0 / (1.0 - std::pow(state.beta1, static_cast<double>(state.step))));
    T c2 = static_cast<T>(1.0 / (1.0 - std::pow(state.beta2, static_cast<double>(state.step))));
    T b1 = static_cast<T>(state.beta1), b2 = static_cast<T>(state.beta2);
    T lr = static_cast<T>(state.lr), eps = static_cast<T>(state.delta);
    for (size_t t = 0; t < params.size(); ++t) {
        auto p = params[t];
        auto g = grads[t];
        auto& m = state.m[t];
        auto& v = state.v[t];
        if (p.size() != g.size() || p.size() != m.size())
            throw std::invalid_argument("adam_step: tensor shape mismatch");
        for (size_t i = 0; i < p.size(); ++i) {
            m[i] = b1 * m[i] + (T(1) - b1) * g[i];
            v[i] = b2 * v[i] + (T(1) - b2) * g[i] * g[i];
            p[i] -= lr * (m[i] * c1) / (std::sqrt(v[i] * c2) + eps);
        }
    }
}

} // namespace detail

template <typename T>
void adam_step(AdamState<T>& state, CfnParams<T>& params, const CfnParams<T>& grads) {
    std::vector<std::span<T>> p;
    std::vector<std::span<const T>> g;
    detail::collect_tensors(params.encoder, p);
    detail::collect_tensors(params.head, p);
    detail::collect_tensors(grads.encoder, g);
    detail::collect_tensors(grads.head, g);
    detail::adam_step_tensors(state, p, g);
}

template <typename T>
void adam_step(AdamState<T>& state, std::vector<DenseLayer<T>>& params,
               const std::vector<DenseLayer<T>>& grads) {
    std::vector<std::span<T>> p;
    std::vector<std::span<const T>> g;
    detail::collect_tensors(params, p);
    detail::collect_tensors(grads, g);
    detail::adam_step_tensors(state, p, g);
}

// Slicing context a checkpoint was trained with; lets downstream consumers
// re-slice compatibly without re-reading the training config.
struct CheckpointMeta {
    int32_t F = 0;
    int32_t T = 0;
    int32_t n_x = 0;
    int32_t n_y = 0;

    bool operator==(const CheckpointMeta&) const = default;
};

namespace detail {

constexpr char kCheckpointMagic[8] = {'P', 'E', 'R', 'M', 'C', 'F', 'N', '1'};

inline void append_layer_f32(std::string& buf, const DenseLayer<float>& layer) {
    append_f32_block(buf, layer.weight.data(), layer.weight.size());
    append_f32_block(buf, layer.bias.data(), layer.bias.size());
}

} // namespace detail

// Checkpoint layout, little-endian: magic "PERMCFN1"; u32 F, T, n_x, n_y;
// u32 n, d; u32 encoder layer count then the widths; u32 head hidden width,
// u32 output width; then f32 parameters per layer, encoder layers first then
// the two head layers, weights row-major then bias.
inline void save_checkpoint(const std::string& path, const CfnParams<float>& params,
                            const CheckpointMeta& meta) {
    params.validate();
    std::string buf;
    detail::append_bytes(buf, detail::kCheckpointMagic, 8);
    for (int32_t v : {meta.F, meta.T, meta.n_x, meta.n_y, params.dims.n, params.dims.d})
        detail::append_u32(buf, static_cast<uint32_t>(v));
    detail::append_u32(buf, static_cast<uint32_t>(params.dims.encoder_widths.size()));
    for (int32_t w : params.dims.encoder_widths) detail::append_u32(buf, static_cast<uint32_t>(w));
    detail::append_u32(buf, static_cast<uint32_t>(params.dims.head_hidden));
    detail::append_u32(buf, static_cast<uint32_t>(params.dims.head_out()));
    for (const auto& layer : params.encoder) detail::append_layer_f32(buf, layer);
    for (const auto& layer : params.head) detail::append_layer_f32(buf, layer);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open file for writing: " + path);
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw std::runtime_error("write failure: " + path);
}

inline std::pair<CfnParams<float>, CheckpointMeta> load_checkpoint(const std::string& path) {
    std::string buf = detail::slurp_file(path);
    detail::ByteReader r{buf};
    r.need(8, "magic");
    if (std::memcmp(buf.data(), detail::kCheckpointMagic, 8) != 0)
        throw FormatError("bad magic, not a PERMCFN1 checkpoint", 0);
    r.pos = 8;
    CheckpointMeta meta;
    meta.F = static_cast<int32_t>(r.read_u32("F"));
    meta.T = static_cast<int32_t>(r.read_u32("T"));
    meta.n_x = static_cast<int32_t>(r.read_u32("n_x"));
    meta.n_y = static_cast<int32_t>(r.read_u32("n_y"));
    CfnDims dims;
    dims.n = static_cast<int32_t>(r.read_u32("n"));
    dims.d = static_cast<int32_t>(r.read_u32("d"));
    uint64_t dims_offset = 8 + 4 * 4;
    uint32_t enc_count = r.read_u32("encoder layer count");
    if (enc_count == 0 || enc_count > 64)
        throw FormatError("implausible encoder layer count", r.pos - 4);
    dims.encoder_widths.clear();
    for (uint32_t i = 0; i < enc_count; ++i)
        dims.encoder_widths.push_back(static_cast<int32_t>(r.read_u32("encoder width")));
    dims.head_hidden = static_cast<int32_t>(r.read_u32("head width"));
    dims.output_width = static_cast<int32_t>(r.read_u32("output width"));
    try {
        dims.validate();
    } catch (const std::invalid_argument& e) {
        throw FormatError(std::string("invalid dims: ") + e.what(), dims_offset);
    }
    CfnParams<float> params = init_cfn<float>(dims, 0);
    auto read_layer = [&](DenseLayer<float>& layer) {
        r.read_f32_block(layer.weight.data(), layer.weight.size(), "weights");
        r.read_f32_block(layer.bias.data(), layer.bias.size(), "bias");
    };
    for (auto& layer : params.encoder) read_layer(layer);
    for (auto& layer : params.head) read_layer(layer);
    if (r.pos != buf.size()) throw FormatError("trailing bytes after parameters", r.pos);
    return {std::move(params), meta};
}

} // namespace permssl
