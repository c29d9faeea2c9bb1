#pragma once

#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dslm/tfidf.hpp"

namespace dslm {

/// Text embedding backend shared by topic filtering and the semantic metrics.
/// Implementations must be deterministic with a fixed output dimension.
class Embedder {
public:
    virtual ~Embedder() = default;
    virtual std::vector<double> embed(std::string_view text) const = 0;
    virtual std::vector<std::vector<double>> token_embed(std::string_view text) const = 0;
    virtual std::size_t dimension() const = 0;
};

/// Cosine similarity; 0 when either vector has zero norm.
double cosine_similarity(std::span<const double> a, std::span<const double> b);

/// Dense TF-IDF document vectors; token vectors are idf-weighted one-hots
/// (zero for out-of-vocabulary tokens).
class TfidfEmbedder final : public Embedder {
public:
    explicit TfidfEmbedder(TfidfVectorizer vectorizer) : vectorizer_(std::move(vectorizer)) {}
    std::vector<double> embed(std::string_view text) const override;
    std::vector<std::vector<double>> token_embed(std::string_view text) const override;
    std::size_t dimension() const override { return vectorizer_.size(); }
    const TfidfVectorizer& vectorizer() const { return vectorizer_; }

private:
    TfidfVectorizer vectorizer_;
};

/// Feature-hashing embedder needing no external weights: each normalized token
/// maps to the sum of seeded Gaussian vectors for the word itself and its
/// character trigrams, so words sharing spelling land close together.
class HashingEmbedder final : public Embedder {
public:
    explicit HashingEmbedder(std::size_t dim = 256, std::uint64_t seed = 7) : dim_(dim), seed_(seed) {}
    std::vector<double> embed(std::string_view text) const override;
    std::vector<std::vector<double>> token_embed(std::string_view text) const override;
    std::size_t dimension() const override { return dim_; }

    std::vector<double> token_vector(const std::string& token) const;

private:
    std::size_t dim_;
    std::uint64_t seed_;
};

/// Explicit token table; unknown tokens embed to the zero vector. The text
/// embedding is the mean token vector.
class TableEmbedder final : public Embedder {
public:
    TableEmbedder(std::map<std::string, std::vector<double>> table, std::size_t dim);
    std::vector<double> embed(std::string_view text) const override;
    std::vector<std::vector<double>> token_embed(std::string_view text) const override;
    std::size_t dimension() const override { return dim_; }

private:
    std::map<std::string, std::vector<double>> table_;
    std::size_t dim_;
};

/// Remote sentence-embedding service. POST {"texts": [...]} to `path` returns
/// {"embeddings": [[...]]}; POST {"text": ..., "tokens": true} returns
/// {"token_embeddings": [[...]]}.
class HttpEmbedder final : public Embedder {
public:
    HttpEmbedder(std::string base_url, std::string path, std::size_t dim);
    std::vector<double> embed(std::string_view text) const override;
    std::vector<std::vector<double>> token_embed(std::string_view text) const override;
    std::size_t dimension() const override { return dim_; }

private:
    json post(const json& body) const;
    std::string base_url_;
    std::string path_;
    std::size_t dim_;
};

}  // namespace dslm
