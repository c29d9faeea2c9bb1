#include "dslm/minhash.hpp"

#include <algorithm>
#include <limits>
#include <numeric>
#include <unordered_map>

namespace dslm {

namespace {

constexpr std::uint64_t kMersenne61 = (std::uint64_t{1} << 61) - 1;

std::uint64_t mod_mersenne61(unsigned __int128 x) {
    std::uint64_t lo = static_cast<std::uint64_t>(x & kMersenne61);
    std::uint64_t hi = static_cast<std::uint64_t>(x >> 61);
    std::uint64_t r = lo + hi;
    // hi may still exceed 61 bits for 122-bit products; fold twice.
    r = (r & kMersenne61) + (r >> 61);
    if (r >= kMersenne61) r -= kMersenne61;
    return r;
}

std::uint64_t shingle_hash(std::string_view s) {
    std::uint64_t h = fnv1a64(s);
    h ^= h >> 33;
    h *= 0xff51afd7ed558ccdULL;
    h ^= h >> 33;
    return h % kMersenne61;
}

class UnionFind {
public:
    explicit UnionFind(std::size_t n) : parent_(n) { std::iota(parent_.begin(), parent_.end(), 0); }
    std::size_t find(std::size_t x) {
        while (parent_[x] != x) {
            parent_[x] = parent_[parent_[x]];
            x = parent_[x];
        }
        return x;
    }
    void unite(std::size_t a, std::size_t b) {
        a = find(a);
        b = find(b);
        if (a == b) return;
        // Keep the smaller index as root so the root is the earliest member.
        if (b < a) std::swap(a, b);
        parent_[b] = a;
    }

private:
    std::vector<std::size_t> parent_;
};

}  // namespace

double MinHashSignature::similarity(const MinHashSignature& other) const {
    if (values.size() != other.values.size() || values.empty()) {
        throw ValidationError("signatures must have equal, nonzero length");
    }
    std::size_t equal = 0;
    for (std::size_t i = 0; i < values.size(); ++i) equal += values[i] == other.values[i];
    return static_cast<double>(equal) / static_cast<double>(values.size());
}

std::vector<std::string> word_shingles(std::string_view text, int n) {
    if (n < 1) throw ValidationError("shingle size must be >= 1");
    const auto words = split_whitespace(to_lower_ascii(text));
    if (words.empty()) throw ValidationError("cannot shingle empty text");
    std::vector<std::string> shingles;
    auto join = [&](std::size_t begin, std::size_t count) {
        std::string s = words[begin];
        for (std::size_t k = 1; k < count; ++k) {
            s += ' ';
            s += words[begin + k];
        }
        return s;
    };
    const auto un = static_cast<std::size_t>(n);
    if (words.size() < un) {
        shingles.push_back(join(0, words.size()));
    } else {
        for (std::size_t i = 0; i + un <= words.size(); ++i) shingles.push_back(join(i, un));
    }
    std::sort(shingles.begin(), shingles.end());
    shingles.erase(std::unique(shingles.begin(), shingles.end()), shingles.end());
    return shingles;
}

MinHasher::MinHasher(int num_perm, int shingle_n, std::uint64_t seed) : shingle_n_(shingle_n) {
    if (num_perm < 1) throw ValidationError("minhash permutation count must be >= 1");
    if (shingle_n < 1) throw ValidationError("shingle size must be >= 1");
    Rng rng(seed);
    a_.resize(static_cast<std::size_t>(num_perm));
    b_.resize(static_cast<std::size_t>(num_perm));
    for (int j = 0; j < num_perm; ++j) {
        a_[j] = 1 + uniform_index(rng, kMersenne61 - 1);
        b_[j] = uniform_index(rng, kMersenne61);
    }
}

MinHashSignature MinHasher::signature(std::string_view text) const {
    const auto shingles = word_shingles(text, shingle_n_);
    MinHashSignature sig;
    sig.shingle_n = shingle_n_;
    sig.values.assign(a_.size(), std::numeric_limits<std::uint64_t>::max());
    for (const auto& s : shingles) {
        const std::uint64_t x = shingle_hash(s);
        for (std::size_t j = 0; j < a_.size(); ++j) {
            const auto hv = mod_mersenne61(static_cast<unsigned __int128>(a_[j]) * x + b_[j]);
            sig.values[j] = std::min(sig.values[j], hv);
        }
    }
    return sig;
}

MinHashSignature minhash_signature(std::string_view text, int k, int shingle_n, std::uint64_t seed) {
    return MinHasher(k, shingle_n, seed).signature(text);
}

void DedupConfig::validate() const {
    if (num_perm < 1) throw ValidationError("minhash-k must be >= 1");
    if (bands < 1 || rows < 1) throw ValidationError("bands and rows must be >= 1");
    if (bands * rows != num_perm) {
        throw ValidationError("bands * rows (" + std::to_string(bands * rows) + ") must equal minhash-k (" +
                              std::to_string(num_perm) + ")");
    }
    if (!(jaccard_threshold > 0.0 && jaccard_threshold <= 1.0)) {
        throw ValidationError("jaccard threshold must lie in (0, 1]");
    }
}

DuplicateClusters find_duplicate_clusters(const std::vector<MinHashSignature>& sigs, const DedupConfig& cfg) {
    cfg.validate();
    const std::size_t n = sigs.size();
    std::vector<std::pair<std::size_t, std::size_t>> candidates;
    for (int band = 0; band < cfg.bands; ++band) {
        std::unordered_map<std::uint64_t, std::vector<std::size_t>> buckets;
        for (std::size_t i = 0; i < n; ++i) {
            const auto* begin = sigs[i].values.data() + static_cast<std::size_t>(band * cfg.rows);
            const std::string_view bytes(reinterpret_cast<const char*>(begin),
                                         sizeof(std::uint64_t) * static_cast<std::size_t>(cfg.rows));
            buckets[fnv1a64(bytes)].push_back(i);
        }
        for (const auto& [key, members] : buckets) {
            for (std::size_t a = 0; a < members.size(); ++a) {
                for (std::size_t b = a + 1; b < members.size(); ++b) candidates.emplace_back(members[a], members[b]);
            }
        }
    }
    std::sort(candidates.begin(), candidates.end());
    candidates.erase(std::unique(candidates.begin(), candidates.end()), candidates.end());

    UnionFind uf(n);
    for (const auto& [i, j] : candidates) {
        if (sigs[i].similarity(sigs[j]) >= cfg.jaccard_threshold) uf.unite(i, j);
    }

    DuplicateClusters out;
    out.keep.assign(n, true);
    out.representative.resize(n);
    out.estimate_to_representative.assign(n, 1.0);
    for (std::size_t i = 0; i < n; ++i) {
        const std::size_t root = uf.find(i);
        out.representative[i] = root;
        if (root != i) {
            out.keep[i] = false;
            out.estimate_to_representative[i] = sigs[i].similarity(sigs[root]);
        }
    }
    return out;
}

DedupResult dedup_corpus(const std::vector<Document>& docs, const DedupConfig& cfg) {
    cfg.validate();
    const MinHasher hasher(cfg.num_perm, cfg.shingle_n, cfg.seed);
    std::vector<MinHashSignature> sigs(docs.size());
    parallel_for(docs.size(), cfg.workers, [&](std::size_t i) { sigs[i] = hasher.signature(docs[i].text); });
    const auto clusters = find_duplicate_clusters(sigs, cfg);

    DedupResult result;
    for (std::size_t i = 0; i < docs.size(); ++i) {
        if (clusters.keep[i]) {
            Document d = docs[i];
            d.advance_to(Stage::Deduped);
            result.kept.push_back(std::move(d));
        } else {
            result.dropped.push_back(
                {docs[i].id, docs[clusters.representative[i]].id, clusters.estimate_to_representative[i]});
        }
    }
    return result;
}

}  // namespace dslm
