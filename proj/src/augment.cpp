#include "dslm/augment.hpp"

namespace dslm {

const std::string& augmentation_system_prompt() {
    static const std::string prompt =
        "You are an automotive expert responsible for creating a high-quality automotive domain text corpus.\n"
        "This corpus must consist solely of technical content related to automotive topics.\n"
        "Carefully read the provided text. If any part of the text is unrelated to automotive topics "
        "(e.g., video games or non-automotive content), respond with \"NA\".\n"
        "Remove any irrelevant sentences from the text without explanation.\n"
        "For all relevant content, expand and improve the text by adding more factually accurate details and "
        "comprehensive explanations.\n"
        "Use your automotive knowledge to ensure the data expansion is correct and enhances the breadth and depth "
        "of the content.\n"
        "The goal is to augment the provided input to create high-quality, accurate, and detailed automotive "
        "content.";
    return prompt;
}

namespace {

bool is_na(const std::string& response) { return to_lower_ascii(trim(response)) == "na"; }

}  // namespace

std::optional<Document> teacher_augment(const Document& doc, TeacherClient& client, const UnitCounter& count,
                                        const AugmentConfig& cfg) {
    const auto chunks = chunk_text(doc.text, cfg.max_units, count);
    std::string merged;
    bool any = false;
    for (const auto& chunk : chunks) {
        TeacherRequest req{augmentation_system_prompt(), chunk, cfg.temperature, cfg.max_tokens};
        const std::string response = complete_with_retry(client, req, cfg.retry);
        if (is_na(response)) continue;
        if (any) merged += '\n';
        merged += response;
        any = true;
    }
    if (!any) return std::nullopt;
    Document out = doc;
    out.text = std::move(merged);
    out.advance_to(Stage::Augmented);
    return out;
}

AugmentResult augment_corpus(const std::vector<Document>& docs, TeacherClient& client, const UnitCounter& count,
                             const AugmentConfig& cfg, int workers) {
    std::vector<std::optional<Document>> results(docs.size());
    parallel_for(docs.size(), workers,
                 [&](std::size_t i) { results[i] = teacher_augment(docs[i], client, count, cfg); });
    AugmentResult out;
    for (std::size_t i = 0; i < docs.size(); ++i) {
        if (results[i]) {
            out.augmented.push_back(std::move(*results[i]));
        } else {
            out.dropped_ids.push_back(docs[i].id);
        }
    }
    return out;
}

}  // namespace dslm
