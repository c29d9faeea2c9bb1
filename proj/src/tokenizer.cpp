#include "dslm/tokenizer.hpp"

#include <cctype>
#include <limits>
#include <map>

namespace dslm {

namespace {

std::uint64_t pack(int a, int b) {
    return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(a)) << 32) | static_cast<std::uint32_t>(b);
}

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

}  // namespace

std::vector<std::string_view> pretokenize(std::string_view text) {
    std::vector<std::string_view> pieces;
    std::size_t start = 0;
    for (std::size_t i = 1; i < text.size(); ++i) {
        if (is_space(text[i]) && !is_space(text[i - 1])) {
            pieces.push_back(text.substr(start, i - start));
            start = i;
        }
    }
    if (start < text.size()) pieces.push_back(text.substr(start));
    return pieces;
}

Tokenizer::Tokenizer() { build_tables(); }

Tokenizer::Tokenizer(std::vector<std::pair<int, int>> merges) : merges_(std::move(merges)) { build_tables(); }

void Tokenizer::build_tables() {
    bytes_.assign(static_cast<std::size_t>(kFirstMerge), std::string());
    for (int b = 0; b < 256; ++b) bytes_[static_cast<std::size_t>(b)] = std::string(1, static_cast<char>(b));
    merge_rank_.clear();
    for (std::size_t r = 0; r < merges_.size(); ++r) {
        const auto [a, b] = merges_[r];
        const int new_id = kFirstMerge + static_cast<int>(r);
        auto valid = [&](int id) { return id >= 0 && id < new_id && (id < 256 || id >= kFirstMerge); };
        if (!valid(a) || !valid(b)) throw ValidationError("tokenizer merge " + std::to_string(r) + " references an invalid id");
        bytes_.push_back(bytes_[static_cast<std::size_t>(a)] + bytes_[static_cast<std::size_t>(b)]);
        merge_rank_.emplace(pack(a, b), static_cast<int>(r));
    }
}

const std::string& Tokenizer::token_bytes(int id) const {
    if (id < 0 || id >= vocab_size()) throw ValidationError("unknown token id " + std::to_string(id));
    return bytes_[static_cast<std::size_t>(id)];
}

Tokenizer Tokenizer::train(const std::vector<std::string>& corpus, int vocab_size, std::uint64_t /*seed*/) {
    if (vocab_size < kFirstMerge) throw ValidationError("vocab_size must be >= 259");
    if (corpus.empty()) throw ValidationError("tokenizer training corpus is empty");

    std::map<std::string, std::int64_t> piece_counts;
    for (const auto& doc : corpus) {
        for (auto piece : pretokenize(doc)) ++piece_counts[std::string(piece)];
    }
    std::vector<std::vector<int>> words;
    std::vector<std::int64_t> freq;
    for (const auto& [piece, count] : piece_counts) {
        std::vector<int> ids;
        for (unsigned char c : piece) ids.push_back(c);
        words.push_back(std::move(ids));
        freq.push_back(count);
    }

    std::vector<std::pair<int, int>> merges;
    while (kFirstMerge + static_cast<int>(merges.size()) < vocab_size) {
        std::map<std::pair<int, int>, std::int64_t> pair_counts;
        for (std::size_t w = 0; w < words.size(); ++w) {
            const auto& ids = words[w];
            for (std::size_t i = 0; i + 1 < ids.size(); ++i) pair_counts[{ids[i], ids[i + 1]}] += freq[w];
        }
        std::pair<int, int> best{};
        std::int64_t best_count = 0;
        // std::map iterates pairs in ascending order, so strict > keeps the smallest on ties.
        for (const auto& [pair, count] : pair_counts) {
            if (count > best_count) {
                best = pair;
                best_count = count;
            }
        }
        if (best_count < 2) break;
        const int new_id = kFirstMerge + static_cast<int>(merges.size());
        merges.push_back(best);
        for (auto& ids : words) {
            std::vector<int> merged;
            merged.reserve(ids.size());
            for (std::size_t i = 0; i < ids.size(); ++i) {
                if (i + 1 < ids.size() && ids[i] == best.first && ids[i + 1] == best.second) {
                    merged.push_back(new_id);
                    ++i;
                } else {
                    merged.push_back(ids[i]);
                }
            }
            ids = std::move(merged);
        }
    }
    return Tokenizer(std::move(merges));
}

void Tokenizer::encode_piece(std::string_view piece, std::vector<int>& out) const {
    std::vector<int> ids;
    ids.reserve(piece.size());
    for (unsigned char c : piece) ids.push_back(c);
    while (ids.size() > 1) {
        int best_rank = std::numeric_limits<int>::max();
        for (std::size_t i = 0; i + 1 < ids.size(); ++i) {
            auto it = merge_rank_.find(pack(ids[i], ids[i + 1]));
            if (it != merge_rank_.end() && it->second < best_rank) best_rank = it->second;
        }
        if (best_rank == std::numeric_limits<int>::max()) break;
        const auto [a, b] = merges_[static_cast<std::size_t>(best_rank)];
        const int new_id = kFirstMerge + best_rank;
        std::vector<int> merged;
        merged.reserve(ids.size());
        for (std::size_t i = 0; i < ids.size(); ++i) {
            if (i + 1 < ids.size() && ids[i] == a && ids[i + 1] == b) {
                merged.push_back(new_id);
                ++i;
            } else {
                merged.push_back(ids[i]);
            }
        }
        ids = std::move(merged);
    }
    out.insert(out.end(), ids.begin(), ids.end());
}

std::vector<int> Tokenizer::encode(std::string_view text, bool add_bos) const {
    std::vector<int> out;
    if (add_bos) out.push_back(kBos);
    for (auto piece : pretokenize(text)) encode_piece(piece, out);
    return out;
}

std::string Tokenizer::decode(std::span<const int> ids) const {
    std::string out;
    for (int id : ids) {
        if (id < 0 || id >= vocab_size()) throw ValidationError("unknown token id " + std::to_string(id));
        if (id >= 256 && id < kFirstMerge) continue;
        out += bytes_[static_cast<std::size_t>(id)];
    }
    return out;
}

ordered_json Tokenizer::to_json() const {
    ordered_json j;
    ordered_json merges = ordered_json::array();
    for (const auto& [a, b] : merges_) merges.push_back({a, b});
    j["merges"] = std::move(merges);
    j["vocab_size"] = vocab_size();
    return j;
}

Tokenizer Tokenizer::from_json(const json& j) {
    std::vector<std::pair<int, int>> merges;
    for (const auto& m : j.at("merges")) {
        if (!m.is_array() || m.size() != 2) throw ValidationError("tokenizer merges must be [id, id] pairs");
        merges.emplace_back(m[0].get<int>(), m[1].get<int>());
    }
    Tokenizer tok(std::move(merges));
    if (j.at("vocab_size").get<int>() != tok.vocab_size()) {
        throw ValidationError("tokenizer vocab_size does not match merge count");
    }
    return tok;
}

void Tokenizer::save(const std::string& path) const { write_file(path, to_json().dump() + "\n"); }

Tokenizer Tokenizer::load(const std::string& path) {
    try {
        return from_json(json::parse(read_file(path)));
    } catch (const json::exception& e) {
        throw ValidationError("tokenizer file '" + path + "': " + e.what());
    }
}

}  // namespace dslm
