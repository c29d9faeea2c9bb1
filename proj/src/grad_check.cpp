#include "dslm/grad_check.hpp"

#include <algorithm>
#include <cmath>

namespace dslm {

template <class T>
double evaluate_loss(const ModelParams<T>& params, const std::type_identity_t<LoraAdapters<T>>* lora, const LossSpec& spec,
                     ModelParams<T>* grads, std::type_identity_t<LoraAdapters<T>>* lora_grads) {
    if (const auto* lm = std::get_if<LmExample>(&spec)) return lm_loss_and_grad(params, lora, *lm, grads, lora_grads);
    const auto& d = std::get<DpoCheck>(spec);
    return dpo_loss_and_grad(params, lora, d.pair, d.beta, d.reference, grads, lora_grads).loss;
}

template <class T>
GradCheckReport grad_check(const ModelParams<T>& params, const std::type_identity_t<LoraAdapters<T>>* lora, const LossSpec& spec,
                           const GradCheckOptions& opts) {
    if (opts.target == GradTarget::Adapters && lora == nullptr) {
        throw ValidationError("grad_check: adapter target requires adapters");
    }
    if (!(opts.eps > 0.0) || opts.coords < 1) throw ValidationError("grad_check: eps and coords must be positive");

    // analytic, in the model's own precision
    std::vector<double> analytic;
    const std::vector<TensorSpec>* tensors = nullptr;
    if (opts.target == GradTarget::Base) {
        auto g = params.zeros_like();
        evaluate_loss(params, lora, spec, &g, static_cast<LoraAdapters<T>*>(nullptr));
        analytic.assign(g.data.begin(), g.data.end());
        tensors = &params.layout.tensors;
    } else {
        auto g = lora->zeros_like();
        evaluate_loss(params, lora, spec, static_cast<ModelParams<T>*>(nullptr), &g);
        analytic.assign(g.data.begin(), g.data.end());
        tensors = &lora->tensors;
    }

    // numeric oracle, always in double
    auto p64 = params.template cast<double>();
    std::optional<LoraAdapters<double>> l64;
    if (lora != nullptr) l64 = lora->template cast<double>();
    std::vector<double>& buf = opts.target == GradTarget::Base ? p64.data : l64->data;
    auto eval = [&]() { return evaluate_loss(p64, l64 ? &*l64 : nullptr, spec); };

    GradCheckReport rep;
    Rng rng(opts.seed);
    const double h = opts.eps;
    for (int c = 0; c < opts.coords; ++c) {
        const auto& ts = (*tensors)[static_cast<std::size_t>(uniform_index(rng, tensors->size()))];
        const std::size_t local = static_cast<std::size_t>(uniform_index(rng, ts.size));
        const std::size_t idx = ts.offset + local;
        const double orig = buf[idx];
        buf[idx] = orig + h;
        const double fp1 = eval();
        buf[idx] = orig - h;
        const double fm1 = eval();
        buf[idx] = orig + 2 * h;
        const double fp2 = eval();
        buf[idx] = orig - 2 * h;
        const double fm2 = eval();
        buf[idx] = orig;
        const double numeric = (8.0 * (fp1 - fm1) - (fp2 - fm2)) / (12.0 * h);
        const double a = analytic[idx];
        const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), relative_error_floor<T>()});
        if (rel > rep.max_rel_error || c == 0) {
            rep.max_rel_error = std::max(rep.max_rel_error, rel);
            rep.worst_tensor = ts.name;
            rep.worst_index = local;
            rep.worst_analytic = a;
            rep.worst_numeric = numeric;
        }
        ++rep.coords;
    }
    return rep;
}

#define DSLM_INSTANTIATE_GRADCHECK(T)                                                                       \
    template double evaluate_loss<T>(const ModelParams<T>&, const LoraAdapters<T>*, const LossSpec&,        \
                                     ModelParams<T>*, LoraAdapters<T>*);                                    \
    template GradCheckReport grad_check<T>(const ModelParams<T>&, const LoraAdapters<T>*, const LossSpec&, \
                                           const GradCheckOptions&);

DSLM_INSTANTIATE_GRADCHECK(float)
DSLM_INSTANTIATE_GRADCHECK(double)

}  // namespace dslm
