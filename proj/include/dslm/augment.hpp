#pragma once

#include <optional>
#include <string>
#include <vector>

#include "dslm/chunking.hpp"
#include "dslm/records.hpp"
#include "dslm/teacher.hpp"

namespace dslm {

/// System prompt sent with every augmentation chunk.
const std::string& augmentation_system_prompt();

struct AugmentConfig {
    std::size_t max_units = 1024;
    double temperature = 0.0;
    int max_tokens = 2048;
    RetryPolicy retry;
};

/// Sends each chunk to the teacher independently and joins the non-"NA"
/// responses with a single newline. Returns nullopt (dropped) when every chunk
/// comes back "NA" (trimmed, case-insensitive).
std::optional<Document> teacher_augment(const Document& doc, TeacherClient& client, const UnitCounter& count,
                                        const AugmentConfig& cfg = {});

struct AugmentResult {
    std::vector<Document> augmented;
    std::vector<std::string> dropped_ids;
};

AugmentResult augment_corpus(const std::vector<Document>& docs, TeacherClient& client, const UnitCounter& count,
                             const AugmentConfig& cfg = {}, int workers = 1);

}  // namespace dslm
