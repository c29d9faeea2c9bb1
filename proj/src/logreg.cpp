#include "dslm/logreg.hpp"

#include <cmath>

namespace dslm {

namespace {

double sigmoid(double z) {
    if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
    const double e = std::exp(z);
    return e / (1.0 + e);
}

// ln(1 + exp(-z)) without overflow.
double softplus_neg(double z) {
    if (z > 0) return std::log1p(std::exp(-z));
    return -z + std::log1p(std::exp(z));
}

double dot_sq(const std::vector<double>& v, std::size_t n) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += v[i] * v[i];
    return s;
}

void check_inputs(const std::vector<SparseVector>& X, const std::vector<int>& y) {
    if (X.size() != y.size()) throw ValidationError("logreg: X and y lengths differ");
    if (X.size() < 2) throw ValidationError("logreg: need at least 2 samples");
    bool pos = false, neg = false;
    for (int label : y) {
        if (label == 1) {
            pos = true;
        } else if (label == -1) {
            neg = true;
        } else {
            throw ValidationError("logreg: labels must be +1 or -1");
        }
    }
    if (!pos || !neg) throw ValidationError("logreg: training data must contain both classes");
    const std::size_t dim = X.front().dim;
    for (const auto& x : X) {
        if (x.dim != dim) throw ValidationError("logreg: feature dimensions differ");
    }
}

std::vector<double> margins(const LogRegClassifier& clf, const std::vector<SparseVector>& X) {
    std::vector<double> m(X.size());
    for (std::size_t i = 0; i < X.size(); ++i) m[i] = X[i].dot(clf.weights) + clf.bias;
    return m;
}

}  // namespace

double logreg_objective(const LogRegClassifier& clf, const std::vector<SparseVector>& X, const std::vector<int>& y) {
    const auto m = margins(clf, X);
    double loss = 0.0;
    for (std::size_t i = 0; i < X.size(); ++i) loss += softplus_neg(y[i] * m[i]);
    return 0.5 * dot_sq(clf.weights, clf.weights.size()) + clf.C * loss;
}

std::vector<double> logreg_gradient(const LogRegClassifier& clf, const std::vector<SparseVector>& X,
                                    const std::vector<int>& y) {
    const std::size_t dim = clf.weights.size();
    std::vector<double> g(dim + 1, 0.0);
    for (std::size_t k = 0; k < dim; ++k) g[k] = clf.weights[k];
    const auto m = margins(clf, X);
    for (std::size_t i = 0; i < X.size(); ++i) {
        const double coef = -clf.C * y[i] * sigmoid(-y[i] * m[i]);
        for (std::size_t k = 0; k < X[i].index.size(); ++k) g[X[i].index[k]] += coef * X[i].value[k];
        g[dim] += coef;
    }
    return g;
}

LogRegClassifier logreg_train(const std::vector<SparseVector>& X, const std::vector<int>& y, double C,
                              const LogRegOptions& opts) {
    if (!(C > 0.0)) throw ValidationError("logreg: C must be positive");
    check_inputs(X, y);
    const std::size_t dim = X.front().dim;
    LogRegClassifier clf;
    clf.C = C;
    clf.weights.assign(dim, 0.0);

    auto hess_vec = [&](const std::vector<double>& curv, const std::vector<double>& v) {
        std::vector<double> out(dim + 1, 0.0);
        for (std::size_t k = 0; k < dim; ++k) out[k] = v[k];
        for (std::size_t i = 0; i < X.size(); ++i) {
            const double xv = X[i].dot(std::span<const double>(v.data(), dim)) + v[dim];
            const double c = C * curv[i] * xv;
            for (std::size_t k = 0; k < X[i].index.size(); ++k) out[X[i].index[k]] += c * X[i].value[k];
            out[dim] += c;
        }
        return out;
    };
    auto dot = [](const std::vector<double>& a, const std::vector<double>& b) {
        double s = 0.0;
        for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
        return s;
    };

    for (int iter = 0; iter < opts.max_newton_iterations; ++iter) {
        const auto g = logreg_gradient(clf, X, y);
        const double gnorm = std::sqrt(dot(g, g));
        if (gnorm < opts.gradient_tolerance) return clf;

        const auto m = margins(clf, X);
        std::vector<double> curv(X.size());
        for (std::size_t i = 0; i < X.size(); ++i) {
            const double s = sigmoid(m[i]);
            curv[i] = s * (1.0 - s);
        }

        // Conjugate gradient on H d = -g, truncated by the usual forcing term.
        std::vector<double> d(dim + 1, 0.0), r(dim + 1), p(dim + 1);
        for (std::size_t k = 0; k <= dim; ++k) r[k] = -g[k];
        p = r;
        double rr = dot(r, r);
        const double cg_tol = std::min(0.5, std::sqrt(gnorm)) * gnorm;
        for (std::size_t cg = 0; cg < 2 * (dim + 1) && std::sqrt(rr) > cg_tol * 1e-3; ++cg) {
            const auto hp = hess_vec(curv, p);
            const double php = dot(p, hp);
            if (php <= 0.0) break;
            const double alpha = rr / php;
            for (std::size_t k = 0; k <= dim; ++k) {
                d[k] += alpha * p[k];
                r[k] -= alpha * hp[k];
            }
            const double rr_new = dot(r, r);
            if (std::sqrt(rr_new) <= cg_tol * 1e-3) break;
            const double beta = rr_new / rr;
            rr = rr_new;
            for (std::size_t k = 0; k <= dim; ++k) p[k] = r[k] + beta * p[k];
        }

        // Armijo backtracking.
        const double f0 = logreg_objective(clf, X, y);
        const double slope = dot(g, d);
        double step = 1.0;
        LogRegClassifier trial = clf;
        for (int ls = 0; ls < 60; ++ls) {
            for (std::size_t k = 0; k < dim; ++k) trial.weights[k] = clf.weights[k] + step * d[k];
            trial.bias = clf.bias + step * d[dim];
            if (logreg_objective(trial, X, y) <= f0 + 1e-4 * step * slope) break;
            step *= 0.5;
        }
        clf = trial;
    }
    const auto g = logreg_gradient(clf, X, y);
    if (std::sqrt(dot(g, g)) >= opts.gradient_tolerance) {
        throw std::runtime_error("logreg: Newton-CG did not converge");
    }
    return clf;
}

Prediction logreg_predict(const LogRegClassifier& clf, const SparseVector& x) {
    if (x.dim != clf.weights.size()) {
        throw ValidationError("logreg_predict: feature dimension " + std::to_string(x.dim) +
                              " does not match classifier dimension " + std::to_string(clf.weights.size()));
    }
    const double z = x.dot(clf.weights) + clf.bias;
    Prediction p;
    p.prob = sigmoid(z);
    p.label = p.prob > 0.5 ? RelevanceLabel::Relevant : RelevanceLabel::Irrelevant;
    return p;
}

ordered_json LogRegClassifier::to_json() const {
    ordered_json j;
    j["C"] = C;
    j["bias"] = bias;
    j["weights"] = weights;
    return j;
}

LogRegClassifier LogRegClassifier::from_json(const json& j) {
    LogRegClassifier clf;
    clf.C = j.at("C").get<double>();
    clf.bias = j.at("bias").get<double>();
    clf.weights = j.at("weights").get<std::vector<double>>();
    return clf;
}

Prediction RelevanceModel::predict(std::string_view text) const {
    return logreg_predict(classifier, vectorizer.transform(text));
}

ordered_json RelevanceModel::to_json() const {
    ordered_json j;
    j["vectorizer"] = vectorizer.to_json();
    j["classifier"] = classifier.to_json();
    return j;
}

RelevanceModel RelevanceModel::from_json(const json& j) {
    return {TfidfVectorizer::from_json(j.at("vectorizer")), LogRegClassifier::from_json(j.at("classifier"))};
}

RelevanceModel train_relevance_model(const std::vector<Document>& labeled, double C, const TfidfConfig& tfidf) {
    std::vector<Document> usable;
    for (const auto& d : labeled) {
        if (!d.relevance_label) throw ValidationError("document '" + d.id + "' has no relevance_label");
        usable.push_back(d);
    }
    RelevanceModel model;
    model.vectorizer = tfidf_fit(usable, tfidf);
    std::vector<SparseVector> X;
    std::vector<int> y;
    for (const auto& d : usable) {
        X.push_back(model.vectorizer.transform(d.text));
        y.push_back(*d.relevance_label == RelevanceLabel::Relevant ? 1 : -1);
    }
    model.classifier = logreg_train(X, y, C);
    return model;
}

std::vector<Document> classify_documents(const RelevanceModel& model, const std::vector<Document>& docs,
                                         int workers) {
    std::vector<Document> out(docs);
    parallel_for(out.size(), workers, [&](std::size_t i) {
        const auto p = model.predict(out[i].text);
        out[i].relevance_label = p.label;
        out[i].relevance_prob = p.prob;
        out[i].advance_to(Stage::Classified);
    });
    return out;
}

}  // namespace dslm
