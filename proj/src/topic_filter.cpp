#include "dslm/topic_filter.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <unordered_set>

namespace dslm {

namespace {

void check_topics(const std::vector<Topic>& topics) {
    if (topics.empty()) throw ValidationError("at least one topic vector is required");
    for (const auto& t : topics) {
        double norm = 0.0;
        for (double x : t.vector) norm += x * x;
        if (norm == 0.0) throw ValidationError("topic '" + t.id + "' has a zero-norm vector");
    }
}

// Scores every topic and returns the best score.
double score_document(Document& doc, const std::vector<Topic>& topics, const Embedder& embedder) {
    const auto e = embedder.embed(doc.text);
    std::map<std::string, double> scores;
    double best = -1.0;
    for (const auto& t : topics) {
        const double s = cosine_similarity(e, t.vector);
        scores[t.id] = s;
        best = std::max(best, s);
    }
    doc.topic_scores = std::move(scores);
    return best;
}

}  // namespace

std::vector<Topic> embed_topics(const std::vector<Document>& topic_docs, const Embedder& embedder) {
    std::vector<Topic> topics;
    for (const auto& d : topic_docs) topics.push_back({d.id, embedder.embed(d.text)});
    check_topics(topics);
    return topics;
}

std::vector<Document> topic_filter(const std::vector<Document>& docs, const std::vector<Topic>& topics,
                                   const Embedder& embedder, double threshold, int workers) {
    check_topics(topics);
    std::vector<Document> scored(docs);
    std::vector<double> best(docs.size());
    parallel_for(docs.size(), workers, [&](std::size_t i) { best[i] = score_document(scored[i], topics, embedder); });
    std::vector<Document> kept;
    for (std::size_t i = 0; i < scored.size(); ++i) {
        if (best[i] > threshold) {
            scored[i].advance_to(Stage::TopicFiltered);
            kept.push_back(std::move(scored[i]));
        }
    }
    return kept;
}

std::vector<Document> recover_false_negatives(const std::vector<Document>& irrelevant_docs,
                                              const std::vector<Topic>& topics, const Embedder& embedder,
                                              double fraction, int workers) {
    if (!(fraction > 0.0 && fraction <= 1.0)) throw ValidationError("recover fraction must lie in (0, 1]");
    check_topics(topics);
    std::vector<Document> scored(irrelevant_docs);
    std::vector<double> best(scored.size());
    parallel_for(scored.size(), workers, [&](std::size_t i) { best[i] = score_document(scored[i], topics, embedder); });

    std::vector<std::size_t> order(scored.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (best[a] != best[b]) return best[a] > best[b];
        return scored[a].id < scored[b].id;
    });
    // The small slack keeps products like 0.7 * 10 from rounding up a slot.
    const double raw = fraction * static_cast<double>(scored.size());
    const auto take = std::min(scored.size(), static_cast<std::size_t>(std::ceil(raw - 1e-9)));
    std::vector<Document> out;
    out.reserve(take);
    for (std::size_t k = 0; k < take; ++k) {
        Document d = std::move(scored[order[k]]);
        d.advance_to(Stage::TopicFiltered);
        out.push_back(std::move(d));
    }
    return out;
}

std::vector<Document> merge_by_id(const std::vector<Document>& kept, const std::vector<Document>& recovered) {
    std::vector<Document> out;
    std::unordered_set<std::string> seen;
    for (const auto* group : {&kept, &recovered}) {
        for (const auto& d : *group) {
            if (seen.insert(d.id).second) out.push_back(d);
        }
    }
    return out;
}

}  // namespace dslm
