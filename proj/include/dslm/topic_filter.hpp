#pragma once

#include <string>
#include <vector>

#include "dslm/embedder.hpp"
#include "dslm/records.hpp"

namespace dslm {

struct Topic {
    std::string id;
    std::vector<double> vector;
};

/// Embeds topic-defining documents; the document id becomes the topic id.
std::vector<Topic> embed_topics(const std::vector<Document>& topic_docs, const Embedder& embedder);

/// Keeps documents whose best topic cosine is strictly greater than
/// `threshold`. Kept documents carry scores for every topic and move to the
/// TopicFiltered stage; input order is preserved.
std::vector<Document> topic_filter(const std::vector<Document>& docs, const std::vector<Topic>& topics,
                                   const Embedder& embedder, double threshold = 0.25, int workers = 1);

/// Returns the ceil(fraction * N) documents with the highest best-topic cosine
/// (ties: ascending id), scored and moved to TopicFiltered.
std::vector<Document> recover_false_negatives(const std::vector<Document>& irrelevant_docs,
                                              const std::vector<Topic>& topics, const Embedder& embedder,
                                              double fraction = 0.20, int workers = 1);

/// `kept` followed by every recovered document whose id is not already kept.
std::vector<Document> merge_by_id(const std::vector<Document>& kept, const std::vector<Document>& recovered);

}  // namespace dslm
