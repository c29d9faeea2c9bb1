#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace dslm {

struct ContaminationConfig {
    int num_perm = 128;
    int shingle_n = 3;
    std::uint64_t seed = 1;
    int workers = 1;
};

/// Indices of training texts whose MinHash-estimated Jaccard against any
/// evaluation text reaches `similarity_threshold` (in (0, 1]). Every pair is
/// compared, so low thresholds are not subject to LSH recall loss.
std::vector<std::size_t> contamination_screen(const std::vector<std::string>& train_texts,
                                              const std::vector<std::string>& eval_texts,
                                              double similarity_threshold,
                                              const ContaminationConfig& cfg = {});

}  // namespace dslm
