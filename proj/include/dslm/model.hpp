#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include "dslm/records.hpp"

namespace dslm {

struct ModelConfig {
    int vocab_size = 1024;
    int context_length = 256;
    int d_model = 64;
    int n_layers = 2;
    int n_heads = 4;
    int d_ff = 256;
    double ln_eps = 1e-5;

    void validate() const;
    ordered_json to_json() const;
    static ModelConfig from_json(const json& j);
    bool operator==(const ModelConfig&) const = default;
};

/// Row-major matrix.
template <class T>
struct Mat {
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<T> data;

    Mat() = default;
    Mat(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, T(0)) {}
    T* row(std::size_t r) { return data.data() + r * cols; }
    const T* row(std::size_t r) const { return data.data() + r * cols; }
    T& operator()(std::size_t r, std::size_t c) { return data[r * cols + c]; }
    const T& operator()(std::size_t r, std::size_t c) const { return data[r * cols + c]; }
};

struct TensorSpec {
    std::string name;
    std::vector<std::size_t> shape;
    std::size_t offset = 0;
    std::size_t size = 0;
    bool decay = true;  // false for layernorm and bias parameters
};

struct LayerSlots {
    std::size_t ln1_g, ln1_b;
    std::size_t wq, bq, wk, wv, bv, wo, bo;  // no key bias: softmax is invariant to it
    std::size_t ln2_g, ln2_b;
    std::size_t w_fc, b_fc, w_proj, b_proj;
};

/// Flat storage plan for all parameters. Projection weights are [d_in x d_out]
/// and applied as x*W + b.
struct ParamLayout {
    std::vector<TensorSpec> tensors;
    std::size_t total = 0;
    std::size_t wte = 0, wpe = 0, lnf_g = 0, lnf_b = 0, head = 0;
    std::vector<LayerSlots> layers;

    static ParamLayout build(const ModelConfig& cfg);
    const TensorSpec& find(const std::string& name) const;
};

template <class T>
struct ModelParams {
    ModelConfig config;
    ParamLayout layout;
    std::vector<T> data;

    std::span<T> tensor(const std::string& name);
    std::span<const T> tensor(const std::string& name) const;
    ModelParams zeros_like() const;
    template <class U>
    ModelParams<U> cast() const {
        ModelParams<U> out;
        out.config = config;
        out.layout = layout;
        out.data.assign(data.begin(), data.end());
        return out;
    }
};

/// Low-rank adapters on the four attention projections of every layer.
/// A is [r x d_in], B is [d_out x r]; the projection gains (alpha/r)*(x*A^T)*B^T.
template <class T>
struct LoraAdapters {
    struct Slot {
        std::size_t a, b;
    };
    int rank = 0;
    double alpha = 0.0;
    std::size_t d_model = 0;
    std::vector<TensorSpec> tensors;
    std::vector<std::array<Slot, 4>> layers;  // q, k, v, o
    std::vector<T> data;

    double scale() const { return alpha / rank; }
    LoraAdapters zeros_like() const;
    template <class U>
    LoraAdapters<U> cast() const {
        LoraAdapters<U> out;
        out.rank = rank;
        out.alpha = alpha;
        out.d_model = d_model;
        out.tensors = tensors;
        out.layers.resize(layers.size());
        for (std::size_t l = 0; l < layers.size(); ++l) {
            for (int p = 0; p < 4; ++p) out.layers[l][p] = {layers[l][p].a, layers[l][p].b};
        }
        out.data.assign(data.begin(), data.end());
        return out;
    }
};

/// Activations recorded by forward for the backward pass (one sequence).
template <class T>
struct ForwardTape {
    struct Layer {
        Mat<T> x_in, ln1, q, k, v, att, x_mid, ln2, h_pre, h_act;
        std::vector<T> ln1_mean, ln1_rstd, ln2_mean, ln2_rstd;
        std::vector<T> probs;  // [H x T x T]
        std::array<Mat<T>, 4> lora_u;  // x*A^T per adapted projection
    };
    bool recorded = false;
    std::vector<int> ids;
    std::vector<Layer> layers;
    Mat<T> x_final, lnf;
    std::vector<T> lnf_mean, lnf_rstd;
};

/// Seeded N(0, 0.02^2) weights, layernorm gains 1, all biases 0.
template <class T>
ModelParams<T> init_model(const ModelConfig& cfg, std::uint64_t seed);

/// Logits [T x V] for ids (1 <= T <= context). Pass a tape to record
/// activations for backward.
template <class T>
Mat<T> forward(const ModelParams<T>& params, std::span<const int> ids, const std::type_identity_t<LoraAdapters<T>>* lora = nullptr,
               ForwardTape<T>* tape = nullptr);

/// Accumulates d(loss)/d(params) into `grads` and d(loss)/d(adapters) into
/// `lora_grads`. A null `grads` freezes the base weights (LoRA-only mode).
template <class T>
void backward(const ModelParams<T>& params, const std::type_identity_t<LoraAdapters<T>>* lora, const ForwardTape<T>& tape,
              const Mat<T>& dlogits, ModelParams<T>* grads, std::type_identity_t<LoraAdapters<T>>* lora_grads);

/// A ~ N(0, 0.02^2), B = 0. Rank larger than d_model throws.
template <class T>
LoraAdapters<T> lora_attach(const ModelParams<T>& params, int rank, double alpha, std::uint64_t seed);

/// W' = W + (alpha/r) * (B*A)^T in the x*W layout.
template <class T>
ModelParams<T> lora_merge(const ModelParams<T>& base, const LoraAdapters<T>& adapters);

/// Tiny GELU (tanh form), shared with tests.
double gelu(double x);

}  // namespace dslm
