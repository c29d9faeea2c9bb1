#pragma once

#include <optional>
#include <span>
#include <vector>

#include "dslm/model.hpp"

namespace dslm {

/// Row-wise softmax in double precision.
template <class T>
Mat<double> softmax_rows(const Mat<T>& logits);

/// Sum over positions of weights[t] * (-ln softmax(logits[t])[targets[t]]).
/// When dlogits is given it receives weights[t] * (softmax - onehot).
template <class T>
double weighted_nll(const Mat<T>& logits, std::span<const int> targets, std::span<const double> weights,
                    Mat<T>* dlogits = nullptr);

/// Mean next-token NLL over all positions.
template <class T>
double clm_loss(const Mat<T>& logits, std::span<const int> targets, Mat<T>* dlogits = nullptr);

/// Summed next-token NLL over all positions.
template <class T>
double clm_loss_sum(const Mat<T>& logits, std::span<const int> targets);

/// Mean NLL over positions whose mask entry is true. An all-true mask gives
/// exactly clm_loss.
template <class T>
double sft_loss(const Mat<T>& logits, std::span<const int> targets, std::span<const std::uint8_t> mask,
                Mat<T>* dlogits = nullptr);

struct DpoLoss {
    double loss = 0.0;
    double dlp_pos = 0.0;
    double dlp_neg = 0.0;
    double margin = 0.0;  // the argument of the sigmoid
};

/// -ln sigmoid(beta * (lp_pos - lp_neg)); with reference log-probs the policy
/// terms become (lp - ref_lp). References are constants. Supplying only one
/// reference value throws.
DpoLoss dpo_loss(double lp_pos, double lp_neg, double beta, std::optional<double> ref_lp_pos = std::nullopt,
                 std::optional<double> ref_lp_neg = std::nullopt);

/// Language-model training example. Inputs are tokens[0..n-2], targets
/// tokens[1..n-1]; mask (over targets) empty means every position counts.
struct LmExample {
    std::vector<int> tokens;
    std::vector<std::uint8_t> mask;
};

/// Preference pair as token sequences sharing a prompt of prompt_len tokens.
struct PairExample {
    std::vector<int> chosen;
    std::vector<int> rejected;
    std::size_t prompt_len = 0;
};

/// Sum of log P(target_i | context, target_<i). Context must be nonempty.
template <class T>
double sequence_log_prob(const ModelParams<T>& params, std::span<const int> context, std::span<const int> target,
                         const std::type_identity_t<LoraAdapters<T>>* lora = nullptr);

/// Response log-prob of a full prompt+response sequence, with optional
/// gradient accumulation scaled by `grad_scale` (d loss / d lp).
template <class T>
double response_log_prob(const ModelParams<T>& params, const std::type_identity_t<LoraAdapters<T>>* lora, std::span<const int> tokens,
                         std::size_t prompt_len, double grad_scale = 0.0, ModelParams<T>* grads = nullptr,
                         std::type_identity_t<LoraAdapters<T>>* lora_grads = nullptr);

/// CLM (empty mask) or SFT loss of one example; accumulates gradients when
/// either gradient buffer is supplied.
template <class T>
double lm_loss_and_grad(const ModelParams<T>& params, const std::type_identity_t<LoraAdapters<T>>* lora, const LmExample& ex,
                        ModelParams<T>* grads = nullptr, std::type_identity_t<LoraAdapters<T>>* lora_grads = nullptr);

struct DpoReference {
    double lp_pos = 0.0;
    double lp_neg = 0.0;
};

/// End-to-end DPO loss through two response log-prob evaluations.
template <class T>
DpoLoss dpo_loss_and_grad(const ModelParams<T>& params, const std::type_identity_t<LoraAdapters<T>>* lora, const PairExample& ex,
                          double beta, const std::optional<DpoReference>& ref = std::nullopt,
                          ModelParams<T>* grads = nullptr, std::type_identity_t<LoraAdapters<T>>* lora_grads = nullptr);

}  // namespace dslm
