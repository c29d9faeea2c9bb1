#include "dslm/embedder.hpp"

#include <cmath>

#include "httplib.h"

namespace dslm {

double cosine_similarity(std::span<const double> a, std::span<const double> b) {
    if (a.size() != b.size()) throw ValidationError("cosine_similarity: dimension mismatch");
    double ab = 0.0, aa = 0.0, bb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ab += a[i] * b[i];
        aa += a[i] * a[i];
        bb += b[i] * b[i];
    }
    if (aa == 0.0 || bb == 0.0) return 0.0;
    return ab / (std::sqrt(aa) * std::sqrt(bb));
}

std::vector<double> TfidfEmbedder::embed(std::string_view text) const {
    return vectorizer_.transform(text).to_dense();
}

std::vector<std::vector<double>> TfidfEmbedder::token_embed(std::string_view text) const {
    std::vector<std::vector<double>> out;
    for (const auto& t : vectorizer_.tokenize(text)) {
        std::vector<double> v(vectorizer_.size(), 0.0);
        const long idx = vectorizer_.index_of(t);
        if (idx >= 0) v[static_cast<std::size_t>(idx)] = vectorizer_.idf()[static_cast<std::size_t>(idx)];
        out.push_back(std::move(v));
    }
    return out;
}

std::vector<double> HashingEmbedder::token_vector(const std::string& token) const {
    std::vector<double> v(dim_, 0.0);
    auto add_feature = [&](std::string_view feature, double weight) {
        Rng rng(derive_seed(seed_, fnv1a64(feature)));
        for (auto& x : v) x += weight * standard_normal(rng);
    };
    add_feature(token, 1.0);
    const std::string padded = "<" + token + ">";
    if (padded.size() >= 3) {
        for (std::size_t i = 0; i + 3 <= padded.size(); ++i) add_feature(std::string_view(padded).substr(i, 3), 0.5);
    }
    double norm = 0.0;
    for (double x : v) norm += x * x;
    norm = std::sqrt(norm);
    if (norm > 0.0) {
        for (auto& x : v) x /= norm;
    }
    return v;
}

std::vector<std::vector<double>> HashingEmbedder::token_embed(std::string_view text) const {
    std::vector<std::vector<double>> out;
    for (const auto& t : normalized_tokens(text)) out.push_back(token_vector(t));
    return out;
}

std::vector<double> HashingEmbedder::embed(std::string_view text) const {
    std::vector<double> sum(dim_, 0.0);
    const auto tokens = token_embed(text);
    for (const auto& v : tokens) {
        for (std::size_t i = 0; i < dim_; ++i) sum[i] += v[i];
    }
    if (!tokens.empty()) {
        for (auto& x : sum) x /= static_cast<double>(tokens.size());
    }
    return sum;
}

TableEmbedder::TableEmbedder(std::map<std::string, std::vector<double>> table, std::size_t dim)
    : table_(std::move(table)), dim_(dim) {
    for (const auto& [k, v] : table_) {
        if (v.size() != dim_) throw ValidationError("TableEmbedder: vector for '" + k + "' has wrong dimension");
    }
}

std::vector<std::vector<double>> TableEmbedder::token_embed(std::string_view text) const {
    std::vector<std::vector<double>> out;
    for (const auto& t : normalized_tokens(text)) {
        auto it = table_.find(t);
        out.push_back(it == table_.end() ? std::vector<double>(dim_, 0.0) : it->second);
    }
    return out;
}

std::vector<double> TableEmbedder::embed(std::string_view text) const {
    std::vector<double> sum(dim_, 0.0);
    const auto tokens = token_embed(text);
    for (const auto& v : tokens) {
        for (std::size_t i = 0; i < dim_; ++i) sum[i] += v[i];
    }
    if (!tokens.empty()) {
        for (auto& x : sum) x /= static_cast<double>(tokens.size());
    }
    return sum;
}

HttpEmbedder::HttpEmbedder(std::string base_url, std::string path, std::size_t dim)
    : base_url_(std::move(base_url)), path_(std::move(path)), dim_(dim) {}

json HttpEmbedder::post(const json& body) const {
    httplib::Client client(base_url_);
    client.set_read_timeout(60, 0);
    auto res = client.Post(path_, body.dump(), "application/json");
    if (!res) throw std::runtime_error("embedding endpoint unreachable: " + httplib::to_string(res.error()));
    if (res->status != 200) throw std::runtime_error("embedding endpoint returned HTTP " + std::to_string(res->status));
    return json::parse(res->body);
}

std::vector<double> HttpEmbedder::embed(std::string_view text) const {
    const json reply = post({{"texts", json::array({std::string(text)})}});
    auto v = reply.at("embeddings").at(0).get<std::vector<double>>();
    if (v.size() != dim_) throw std::runtime_error("embedding endpoint returned wrong dimension");
    return v;
}

std::vector<std::vector<double>> HttpEmbedder::token_embed(std::string_view text) const {
    const json reply = post({{"text", std::string(text)}, {"tokens", true}});
    return reply.at("token_embeddings").get<std::vector<std::vector<double>>>();
}

}  // namespace dslm
