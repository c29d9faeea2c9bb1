#pragma once

#include <optional>
#include <string>
#include <variant>

#include "dslm/losses.hpp"

namespace dslm {

struct DpoCheck {
    PairExample pair;
    double beta = 0.1;
    std::optional<DpoReference> reference;
};

/// Loss to differentiate: CLM/SFT on one example, or DPO on one pair.
using LossSpec = std::variant<LmExample, DpoCheck>;

/// Evaluates the loss; accumulates gradients when buffers are given.
template <class T>
double evaluate_loss(const ModelParams<T>& params, const std::type_identity_t<LoraAdapters<T>>* lora, const LossSpec& spec,
                     ModelParams<T>* grads = nullptr, std::type_identity_t<LoraAdapters<T>>* lora_grads = nullptr);

enum class GradTarget { Base, Adapters };

struct GradCheckOptions {
    double eps = 1e-3;
    int coords = 200;
    std::uint64_t seed = 1;
    GradTarget target = GradTarget::Base;
};

struct GradCheckReport {
    double max_rel_error = 0.0;
    int coords = 0;
    std::string worst_tensor;
    std::size_t worst_index = 0;
    double worst_analytic = 0.0;
    double worst_numeric = 0.0;
};

/// Compares analytic gradients computed in precision T with central finite
/// differences of the same loss evaluated in double precision (fourth-order
/// stencil f(x-2h), f(x-h), f(x+h), f(x+2h)). Coordinates are drawn by
/// picking a tensor uniformly, then an element uniformly. Relative error is
/// |a - f| / max(|a|, |f|, floor). The floor is 1e-8 in 64-bit mode and
/// 1e-5 in 32-bit mode, where float rounding of the forward activations
/// leaves analytic gradients with absolute errors of a few 1e-9.
template <class T>
constexpr double relative_error_floor() {
    return sizeof(T) >= sizeof(double) ? 1e-8 : 1e-5;
}

template <class T>
GradCheckReport grad_check(const ModelParams<T>& params, const std::type_identity_t<LoraAdapters<T>>* lora, const LossSpec& spec,
                           const GradCheckOptions& opts = {});

}  // namespace dslm
