#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "dslm/records.hpp"

namespace dslm {

/// Byte-level BPE. Ids 0-255 are raw bytes, 256-258 are BOS/EOS/PAD, merged
/// tokens start at 259 in merge-rank order. Immutable after construction.
///
/// Text is pre-split before whitespace runs (each piece is leading
/// whitespace plus a non-whitespace run) and merges never cross pieces.
/// Encoding is therefore prefix-stable only at piece boundaries.
class Tokenizer {
public:
    static constexpr int kBos = 256;
    static constexpr int kEos = 257;
    static constexpr int kPad = 258;
    static constexpr int kFirstMerge = 259;

    Tokenizer();  // byte-level only

    /// Repeatedly merges the most frequent adjacent pair (ties: the smaller
    /// pair) until vocab_size is reached or no pair occurs twice. Training is
    /// fully deterministic; `seed` is recorded but does not alter the result.
    static Tokenizer train(const std::vector<std::string>& corpus, int vocab_size, std::uint64_t seed = 0);

    std::vector<int> encode(std::string_view text, bool add_bos = false) const;
    /// Special tokens are dropped; ids outside the vocabulary throw.
    std::string decode(std::span<const int> ids) const;

    /// Number of ids `encode(text)` produces.
    std::size_t count(std::string_view text) const { return encode(text).size(); }

    int vocab_size() const { return kFirstMerge + static_cast<int>(merges_.size()); }
    const std::vector<std::pair<int, int>>& merges() const { return merges_; }
    /// Raw bytes of a token (empty for specials).
    const std::string& token_bytes(int id) const;

    ordered_json to_json() const;
    static Tokenizer from_json(const json& j);
    void save(const std::string& path) const;
    static Tokenizer load(const std::string& path);

    bool operator==(const Tokenizer& other) const { return merges_ == other.merges_; }

private:
    explicit Tokenizer(std::vector<std::pair<int, int>> merges);
    void build_tables();
    void encode_piece(std::string_view piece, std::vector<int>& out) const;

    std::vector<std::pair<int, int>> merges_;
    std::unordered_map<std::uint64_t, int> merge_rank_;  // packed pair -> rank
    std::vector<std::string> bytes_;
};

/// Splits text into pre-tokenization pieces; concatenating them gives `text`.
std::vector<std::string_view> pretokenize(std::string_view text);

}  // namespace dslm
