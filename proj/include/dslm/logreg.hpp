#pragma once

#include <utility>
#include <vector>

#include "dslm/records.hpp"
#include "dslm/tfidf.hpp"

namespace dslm {

struct LogRegClassifier {
    std::vector<double> weights;
    double bias = 0.0;
    double C = 10.0;

    ordered_json to_json() const;
    static LogRegClassifier from_json(const json& j);
};

struct LogRegOptions {
    double gradient_tolerance = 1e-6;
    int max_newton_iterations = 100;
};

/// J(w, b) = 0.5 * ||w||^2 + C * sum_i ln(1 + exp(-y_i (w.x_i + b))); the
/// bias is unregularized. Labels are +1 / -1.
double logreg_objective(const LogRegClassifier& clf, const std::vector<SparseVector>& X, const std::vector<int>& y);

/// Gradient of the objective; the last entry is d/db.
std::vector<double> logreg_gradient(const LogRegClassifier& clf, const std::vector<SparseVector>& X,
                                    const std::vector<int>& y);

/// Minimizes the objective with a line-searched Newton-CG solver until the
/// gradient norm drops below the tolerance.
LogRegClassifier logreg_train(const std::vector<SparseVector>& X, const std::vector<int>& y, double C,
                              const LogRegOptions& opts = {});

struct Prediction {
    RelevanceLabel label = RelevanceLabel::Irrelevant;
    double prob = 0.5;
};

/// prob = sigmoid(w.x + b); Relevant iff prob > 0.5.
Prediction logreg_predict(const LogRegClassifier& clf, const SparseVector& x);

/// TF-IDF features plus classifier: the relevance-filter bundle.
struct RelevanceModel {
    TfidfVectorizer vectorizer;
    LogRegClassifier classifier;

    Prediction predict(std::string_view text) const;

    ordered_json to_json() const;
    static RelevanceModel from_json(const json& j);
};

/// Fits TF-IDF on the labeled documents and trains the classifier.
RelevanceModel train_relevance_model(const std::vector<Document>& labeled, double C = 10.0,
                                     const TfidfConfig& tfidf = {});

/// Labels every document and advances it to the Classified stage.
std::vector<Document> classify_documents(const RelevanceModel& model, const std::vector<Document>& docs,
                                         int workers = 1);

}  // namespace dslm
