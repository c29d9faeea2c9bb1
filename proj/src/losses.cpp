#include "dslm/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace dslm {

template <class T>
Mat<double> softmax_rows(const Mat<T>& logits) {
    Mat<double> out(logits.rows, logits.cols);
    for (std::size_t t = 0; t < logits.rows; ++t) {
        const T* z = logits.row(t);
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < logits.cols; ++j) mx = std::max(mx, static_cast<double>(z[j]));
        double sum = 0.0;
        double* o = out.row(t);
        for (std::size_t j = 0; j < logits.cols; ++j) {
            o[j] = std::exp(static_cast<double>(z[j]) - mx);
            sum += o[j];
        }
        for (std::size_t j = 0; j < logits.cols; ++j) o[j] /= sum;
    }
    return out;
}

template <class T>
double weighted_nll(const Mat<T>& logits, std::span<const int> targets, std::span<const double> weights,
                    Mat<T>* dlogits) {
    if (targets.size() != logits.rows || weights.size() != logits.rows) {
        throw ValidationError("loss: logits have " + std::to_string(logits.rows) + " rows but " +
                              std::to_string(targets.size()) + " targets");
    }
    const std::size_t V = logits.cols;
    if (dlogits != nullptr) *dlogits = Mat<T>(logits.rows, V);
    double total = 0.0;
    for (std::size_t t = 0; t < logits.rows; ++t) {
        const int y = targets[t];
        if (y < 0 || static_cast<std::size_t>(y) >= V) throw ValidationError("loss: target id out of range");
        const double w = weights[t];
        if (w == 0.0) continue;
        const T* z = logits.row(t);
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < V; ++j) mx = std::max(mx, static_cast<double>(z[j]));
        double sum = 0.0;
        for (std::size_t j = 0; j < V; ++j) sum += std::exp(static_cast<double>(z[j]) - mx);
        const double lse = mx + std::log(sum);
        total += w * (lse - static_cast<double>(z[y]));
        if (dlogits != nullptr) {
            T* g = dlogits->row(t);
            for (std::size_t j = 0; j < V; ++j) g[j] = static_cast<T>(w * std::exp(static_cast<double>(z[j]) - lse));
            g[y] = static_cast<T>(static_cast<double>(g[y]) - w);
        }
    }
    return total;
}

template <class T>
double clm_loss(const Mat<T>& logits, std::span<const int> targets, Mat<T>* dlogits) {
    if (targets.empty()) throw ValidationError("clm_loss: no targets");
    const std::vector<double> w(targets.size(), 1.0 / static_cast<double>(targets.size()));
    return weighted_nll(logits, targets, w, dlogits);
}

template <class T>
double clm_loss_sum(const Mat<T>& logits, std::span<const int> targets) {
    const std::vector<double> w(targets.size(), 1.0);
    return weighted_nll(logits, targets, w);
}

template <class T>
double sft_loss(const Mat<T>& logits, std::span<const int> targets, std::span<const std::uint8_t> mask,
                Mat<T>* dlogits) {
    if (mask.size() != targets.size()) throw ValidationError("sft_loss: mask length does not match targets");
    const auto count = static_cast<std::size_t>(std::count_if(mask.begin(), mask.end(), [](auto m) { return m != 0; }));
    if (count == 0) throw ValidationError("sft_loss: mask selects no positions");
    std::vector<double> w(mask.size(), 0.0);
    for (std::size_t t = 0; t < mask.size(); ++t) {
        if (mask[t] != 0) w[t] = 1.0 / static_cast<double>(count);
    }
    return weighted_nll(logits, targets, w, dlogits);
}

namespace {

// -ln sigmoid(z), stable for large |z|
double neg_log_sigmoid(double z) { return z >= 0 ? std::log1p(std::exp(-z)) : -z + std::log1p(std::exp(z)); }

double sigmoid(double z) {
    if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

}  // namespace

DpoLoss dpo_loss(double lp_pos, double lp_neg, double beta, std::optional<double> ref_lp_pos,
                 std::optional<double> ref_lp_neg) {
    if (!(beta > 0.0)) throw ValidationError("dpo_loss: beta must be positive");
    if (ref_lp_pos.has_value() != ref_lp_neg.has_value()) {
        throw ValidationError("dpo_loss: reference log-probs must be both present or both absent");
    }
    double gap = lp_pos - lp_neg;
    if (ref_lp_pos) gap = (lp_pos - *ref_lp_pos) - (lp_neg - *ref_lp_neg);
    DpoLoss out;
    out.margin = beta * gap;
    out.loss = neg_log_sigmoid(out.margin);
    const double s = sigmoid(-out.margin);  // 1 - sigmoid(margin)
    out.dlp_pos = -beta * s;
    out.dlp_neg = beta * s;
    return out;
}

namespace {

template <class T>
struct ScoredResponse {
    ForwardTape<T> tape;
    Mat<T> logits;
    std::vector<double> weights;  // 1 on response targets
    double lp = 0.0;
};

template <class T>
ScoredResponse<T> score_response(const ModelParams<T>& params, const std::type_identity_t<LoraAdapters<T>>* lora,
                                 std::span<const int> tokens, std::size_t prompt_len, bool record) {
    if (prompt_len == 0) throw ValidationError("log-prob: context must be nonempty");
    if (tokens.size() <= prompt_len) throw ValidationError("log-prob: empty target");
    ScoredResponse<T> s;
    s.weights.assign(tokens.size() - 1, 0.0);
    for (std::size_t t = prompt_len - 1; t < s.weights.size(); ++t) s.weights[t] = 1.0;
    s.logits = forward(params, tokens.first(tokens.size() - 1), lora, record ? &s.tape : nullptr);
    s.lp = -weighted_nll(s.logits, tokens.subspan(1), s.weights);
    return s;
}

// Accumulates grad_scale * d(lp)/d(theta).
template <class T>
void backprop_response(const ModelParams<T>& params, const std::type_identity_t<LoraAdapters<T>>* lora, ScoredResponse<T>& s,
                       std::span<const int> tokens, double grad_scale, ModelParams<T>* grads,
                       std::type_identity_t<LoraAdapters<T>>* lora_grads) {
    std::vector<double> w = s.weights;
    for (auto& x : w) x *= -grad_scale;
    Mat<T> dlogits;
    weighted_nll(s.logits, tokens.subspan(1), w, &dlogits);
    backward(params, lora, s.tape, dlogits, grads, lora_grads);
}

}  // namespace

template <class T>
double response_log_prob(const ModelParams<T>& params, const std::type_identity_t<LoraAdapters<T>>* lora, std::span<const int> tokens,
                         std::size_t prompt_len, double grad_scale, ModelParams<T>* grads,
                         std::type_identity_t<LoraAdapters<T>>* lora_grads) {
    const bool need_grad = grads != nullptr || lora_grads != nullptr;
    auto s = score_response(params, lora, tokens, prompt_len, need_grad);
    if (need_grad) backprop_response(params, lora, s, tokens, grad_scale, grads, lora_grads);
    return s.lp;
}

template <class T>
double sequence_log_prob(const ModelParams<T>& params, std::span<const int> context, std::span<const int> target,
                         const std::type_identity_t<LoraAdapters<T>>* lora) {
    if (context.empty()) throw ValidationError("sequence_log_prob: context must be nonempty");
    if (target.empty()) throw ValidationError("sequence_log_prob: empty target");
    std::vector<int> all(context.begin(), context.end());
    all.insert(all.end(), target.begin(), target.end());
    return response_log_prob(params, lora, std::span<const int>(all), context.size());
}

template <class T>
double lm_loss_and_grad(const ModelParams<T>& params, const std::type_identity_t<LoraAdapters<T>>* lora, const LmExample& ex,
                        ModelParams<T>* grads, std::type_identity_t<LoraAdapters<T>>* lora_grads) {
    if (ex.tokens.size() < 2) throw ValidationError("training example needs at least 2 tokens");
    const std::span<const int> toks(ex.tokens);
    const auto inputs = toks.first(toks.size() - 1);
    const auto targets = toks.subspan(1);
    const bool need_grad = grads != nullptr || lora_grads != nullptr;
    ForwardTape<T> tape;
    const Mat<T> logits = forward(params, inputs, lora, need_grad ? &tape : nullptr);
    Mat<T> dlogits;
    const double loss = ex.mask.empty() ? clm_loss(logits, targets, need_grad ? &dlogits : nullptr)
                                        : sft_loss(logits, targets, std::span<const std::uint8_t>(ex.mask),
                                                   need_grad ? &dlogits : nullptr);
    if (need_grad) backward(params, lora, tape, dlogits, grads, lora_grads);
    return loss;
}

template <class T>
DpoLoss dpo_loss_and_grad(const ModelParams<T>& params, const std::type_identity_t<LoraAdapters<T>>* lora, const PairExample& ex,
                          double beta, const std::optional<DpoReference>& ref, ModelParams<T>* grads,
                          std::type_identity_t<LoraAdapters<T>>* lora_grads) {
    const bool need_grad = grads != nullptr || lora_grads != nullptr;
    const std::span<const int> pos(ex.chosen), neg(ex.rejected);
    auto sp = score_response(params, lora, pos, ex.prompt_len, need_grad);
    auto sn = score_response(params, lora, neg, ex.prompt_len, need_grad);
    const DpoLoss out = ref ? dpo_loss(sp.lp, sn.lp, beta, ref->lp_pos, ref->lp_neg) : dpo_loss(sp.lp, sn.lp, beta);
    if (need_grad) {
        backprop_response(params, lora, sp, pos, out.dlp_pos, grads, lora_grads);
        backprop_response(params, lora, sn, neg, out.dlp_neg, grads, lora_grads);
    }
    return out;
}

#define DSLM_INSTANTIATE_LOSSES(T)                                                                               \
    template Mat<double> softmax_rows<T>(const Mat<T>&);                                                         \
    template double weighted_nll<T>(const Mat<T>&, std::span<const int>, std::span<const double>, Mat<T>*);      \
    template double clm_loss<T>(const Mat<T>&, std::span<const int>, Mat<T>*);                                   \
    template double clm_loss_sum<T>(const Mat<T>&, std::span<const int>);                                        \
    template double sft_loss<T>(const Mat<T>&, std::span<const int>, std::span<const std::uint8_t>, Mat<T>*);    \
    template double sequence_log_prob<T>(const ModelParams<T>&, std::span<const int>, std::span<const int>,      \
                                         const LoraAdapters<T>*);                                                \
    template double response_log_prob<T>(const ModelParams<T>&, const LoraAdapters<T>*, std::span<const int>,    \
                                         std::size_t, double, ModelParams<T>*, LoraAdapters<T>*);                \
    template double lm_loss_and_grad<T>(const ModelParams<T>&, const LoraAdapters<T>*, const LmExample&,         \
                                        ModelParams<T>*, LoraAdapters<T>*);                                      \
    template DpoLoss dpo_loss_and_grad<T>(const ModelParams<T>&, const LoraAdapters<T>*, const PairExample&,     \
                                          double, const std::optional<DpoReference>&, ModelParams<T>*,           \
                                          LoraAdapters<T>*);

DSLM_INSTANTIATE_LOSSES(float)
DSLM_INSTANTIATE_LOSSES(double)

}  // namespace dslm
