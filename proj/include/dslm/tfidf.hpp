#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "dslm/records.hpp"

namespace dslm {

/// Sparse real vector with strictly increasing indices.
struct SparseVector {
    std::size_t dim = 0;
    std::vector<std::uint32_t> index;
    std::vector<double> value;

    double dot(const SparseVector& other) const;
    double dot(std::span<const double> dense) const;
    double norm() const;
    std::vector<double> to_dense() const;

    static SparseVector from_dense(std::span<const double> dense);
};

struct TfidfConfig {
    bool lowercase = true;
    std::string token_pattern = "[A-Za-z0-9_]+";
    std::size_t max_features = 50000;
    bool sublinear_tf = true;
};

class TfidfVectorizer {
public:
    /// idf[t] = ln((1 + N) / (1 + df_t)) + 1. The vocabulary keeps the
    /// max_features highest-df terms (ties: lexicographically smaller term) and
    /// indexes them in lexicographic order.
    static TfidfVectorizer fit(const std::vector<std::string>& texts, const TfidfConfig& cfg = {});

    /// tf * idf per in-vocabulary term, L2-normalized. All-OOV text gives the
    /// zero vector.
    SparseVector transform(std::string_view text) const;

    std::vector<std::string> tokenize(std::string_view text) const;

    std::size_t size() const { return idf_.size(); }
    const std::vector<double>& idf() const { return idf_; }
    const std::vector<std::string>& terms() const { return terms_; }
    /// Returns -1 when the term is out of vocabulary.
    long index_of(const std::string& term) const;
    const TfidfConfig& config() const { return cfg_; }

    ordered_json to_json() const;
    static TfidfVectorizer from_json(const json& j);

private:
    TfidfConfig cfg_;
    std::vector<std::string> terms_;
    std::unordered_map<std::string, std::uint32_t> vocabulary_;
    std::vector<double> idf_;
};

TfidfVectorizer tfidf_fit(const std::vector<Document>& corpus, const TfidfConfig& cfg = {});
SparseVector tfidf_transform(const TfidfVectorizer& v, std::string_view text);

}  // namespace dslm
