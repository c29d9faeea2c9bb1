#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "dslm/records.hpp"

namespace dslm {

struct MinHashSignature {
    std::vector<std::uint64_t> values;
    int shingle_n = 3;

    /// Fraction of slots that agree; the unbiased Jaccard estimate.
    double similarity(const MinHashSignature& other) const;
    bool operator==(const MinHashSignature&) const = default;
};

/// Lowercased, whitespace-tokenized word n-grams (as a set, sorted). Texts
/// shorter than n words yield the whole token sequence as a single shingle.
std::vector<std::string> word_shingles(std::string_view text, int n);

/// Seeded family h_j(x) = (a_j * x + b_j) mod (2^61 - 1) over 64-bit shingle
/// hashes. Construct once and reuse across a corpus.
class MinHasher {
public:
    MinHasher(int num_perm, int shingle_n, std::uint64_t seed);

    MinHashSignature signature(std::string_view text) const;
    int num_perm() const { return static_cast<int>(a_.size()); }
    int shingle_n() const { return shingle_n_; }

private:
    std::vector<std::uint64_t> a_;
    std::vector<std::uint64_t> b_;
    int shingle_n_;
};

MinHashSignature minhash_signature(std::string_view text, int k = 128, int shingle_n = 3,
                                   std::uint64_t seed = 1);

struct DedupConfig {
    double jaccard_threshold = 0.8;
    int num_perm = 128;
    int bands = 16;
    int rows = 8;
    int shingle_n = 3;
    std::uint64_t seed = 1;
    int workers = 1;

    void validate() const;
};

struct DroppedPair {
    std::string dropped_id;
    std::string kept_id;
    double estimate = 0.0;
};

struct DedupResult {
    std::vector<Document> kept;
    std::vector<DroppedPair> dropped;
};

/// Index-level result shared by every dedup entry point: keep[i] plus, for each
/// dropped i, the surviving representative of its cluster.
struct DuplicateClusters {
    std::vector<bool> keep;
    std::vector<std::size_t> representative;
    std::vector<double> estimate_to_representative;
};

/// LSH banding proposes candidate pairs; a pair is a duplicate when its
/// estimated Jaccard reaches the threshold. Clusters are transitive closures of
/// duplicate pairs and the earliest member (input order) survives.
DuplicateClusters find_duplicate_clusters(const std::vector<MinHashSignature>& sigs, const DedupConfig& cfg);

DedupResult dedup_corpus(const std::vector<Document>& docs, const DedupConfig& cfg);

}  // namespace dslm
