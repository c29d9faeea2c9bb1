#include "dslm/contamination.hpp"

#include "dslm/minhash.hpp"

namespace dslm {

std::vector<std::size_t> contamination_screen(const std::vector<std::string>& train_texts,
                                              const std::vector<std::string>& eval_texts,
                                              double similarity_threshold, const ContaminationConfig& cfg) {
    if (train_texts.empty() || eval_texts.empty()) {
        throw ValidationError("contamination screen needs nonempty train and eval sets");
    }
    if (!(similarity_threshold > 0.0 && similarity_threshold <= 1.0)) {
        throw ValidationError("similarity threshold must lie in (0, 1]");
    }
    const MinHasher hasher(cfg.num_perm, cfg.shingle_n, cfg.seed);
    std::vector<MinHashSignature> eval_sigs(eval_texts.size());
    parallel_for(eval_texts.size(), cfg.workers, [&](std::size_t i) { eval_sigs[i] = hasher.signature(eval_texts[i]); });

    std::vector<char> flagged(train_texts.size(), 0);
    parallel_for(train_texts.size(), cfg.workers, [&](std::size_t i) {
        const auto sig = hasher.signature(train_texts[i]);
        for (const auto& e : eval_sigs) {
            if (sig.similarity(e) >= similarity_threshold) {
                flagged[i] = 1;
                return;
            }
        }
    });
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < flagged.size(); ++i) {
        if (flagged[i]) out.push_back(i);
    }
    return out;
}

}  // namespace dslm
