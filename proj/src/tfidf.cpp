#include "dslm/tfidf.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <regex>
#include <set>

namespace dslm {

double SparseVector::dot(const SparseVector& other) const {
    double s = 0.0;
    std::size_t i = 0, j = 0;
    while (i < index.size() && j < other.index.size()) {
        if (index[i] == other.index[j]) {
            s += value[i] * other.value[j];
            ++i;
            ++j;
        } else if (index[i] < other.index[j]) {
            ++i;
        } else {
            ++j;
        }
    }
    return s;
}

double SparseVector::dot(std::span<const double> dense) const {
    double s = 0.0;
    for (std::size_t k = 0; k < index.size(); ++k) s += value[k] * dense[index[k]];
    return s;
}

double SparseVector::norm() const {
    double s = 0.0;
    for (double v : value) s += v * v;
    return std::sqrt(s);
}

std::vector<double> SparseVector::to_dense() const {
    std::vector<double> out(dim, 0.0);
    for (std::size_t k = 0; k < index.size(); ++k) out[index[k]] = value[k];
    return out;
}

SparseVector SparseVector::from_dense(std::span<const double> dense) {
    SparseVector v;
    v.dim = dense.size();
    for (std::size_t i = 0; i < dense.size(); ++i) {
        if (dense[i] != 0.0) {
            v.index.push_back(static_cast<std::uint32_t>(i));
            v.value.push_back(dense[i]);
        }
    }
    return v;
}

std::vector<std::string> TfidfVectorizer::tokenize(std::string_view text) const {
    const std::string source = cfg_.lowercase ? to_lower_ascii(text) : std::string(text);
    const std::regex pattern(cfg_.token_pattern);
    std::vector<std::string> tokens;
    for (auto it = std::sregex_iterator(source.begin(), source.end(), pattern); it != std::sregex_iterator(); ++it) {
        if (it->length() > 0) tokens.push_back(it->str());
    }
    return tokens;
}

TfidfVectorizer TfidfVectorizer::fit(const std::vector<std::string>& texts, const TfidfConfig& cfg) {
    if (texts.empty()) throw ValidationError("tfidf_fit: corpus must be nonempty");
    if (cfg.max_features == 0) throw ValidationError("tfidf_fit: max_features must be >= 1");
    TfidfVectorizer v;
    v.cfg_ = cfg;
    std::map<std::string, std::size_t> df;
    for (const auto& text : texts) {
        const auto tokens = v.tokenize(text);
        const std::set<std::string> unique(tokens.begin(), tokens.end());
        for (const auto& t : unique) ++df[t];
    }
    std::vector<std::pair<std::string, std::size_t>> ranked(df.begin(), df.end());
    std::stable_sort(ranked.begin(), ranked.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });  // map order breaks ties
    if (ranked.size() > cfg.max_features) ranked.resize(cfg.max_features);
    std::sort(ranked.begin(), ranked.end());

    const double n = static_cast<double>(texts.size());
    for (const auto& [term, count] : ranked) {
        v.vocabulary_.emplace(term, static_cast<std::uint32_t>(v.terms_.size()));
        v.terms_.push_back(term);
        v.idf_.push_back(std::log((1.0 + n) / (1.0 + static_cast<double>(count))) + 1.0);
    }
    return v;
}

long TfidfVectorizer::index_of(const std::string& term) const {
    auto it = vocabulary_.find(term);
    return it == vocabulary_.end() ? -1 : static_cast<long>(it->second);
}

SparseVector TfidfVectorizer::transform(std::string_view text) const {
    std::map<std::uint32_t, double> counts;
    for (const auto& t : tokenize(text)) {
        auto it = vocabulary_.find(t);
        if (it != vocabulary_.end()) counts[it->second] += 1.0;
    }
    SparseVector out;
    out.dim = idf_.size();
    for (const auto& [idx, count] : counts) {
        const double tf = cfg_.sublinear_tf ? 1.0 + std::log(count) : count;
        out.index.push_back(idx);
        out.value.push_back(tf * idf_[idx]);
    }
    const double norm = out.norm();
    if (norm > 0.0) {
        for (auto& x : out.value) x /= norm;
    }
    return out;
}

ordered_json TfidfVectorizer::to_json() const {
    ordered_json j;
    j["lowercase"] = cfg_.lowercase;
    j["token_pattern"] = cfg_.token_pattern;
    j["max_features"] = cfg_.max_features;
    j["sublinear_tf"] = cfg_.sublinear_tf;
    j["terms"] = terms_;
    j["idf"] = idf_;
    return j;
}

TfidfVectorizer TfidfVectorizer::from_json(const json& j) {
    TfidfVectorizer v;
    v.cfg_.lowercase = j.at("lowercase").get<bool>();
    v.cfg_.token_pattern = j.at("token_pattern").get<std::string>();
    v.cfg_.max_features = j.at("max_features").get<std::size_t>();
    v.cfg_.sublinear_tf = j.at("sublinear_tf").get<bool>();
    v.terms_ = j.at("terms").get<std::vector<std::string>>();
    v.idf_ = j.at("idf").get<std::vector<double>>();
    if (v.terms_.size() != v.idf_.size()) throw ValidationError("tfidf: terms and idf lengths differ");
    for (std::size_t i = 0; i < v.terms_.size(); ++i) v.vocabulary_.emplace(v.terms_[i], static_cast<std::uint32_t>(i));
    return v;
}

TfidfVectorizer tfidf_fit(const std::vector<Document>& corpus, const TfidfConfig& cfg) {
    std::vector<std::string> texts;
    texts.reserve(corpus.size());
    for (const auto& d : corpus) texts.push_back(d.text);
    return TfidfVectorizer::fit(texts, cfg);
}

SparseVector tfidf_transform(const TfidfVectorizer& v, std::string_view text) { return v.transform(text); }

}  // namespace dslm
