#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace dslm {

/// Input or record that violates a documented contract. Maps to CLI exit code 1.
class ValidationError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Filesystem failures (unreadable/unwritable paths).
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

using Rng = std::mt19937_64;

// Bounded draws implemented here instead of <random> distributions so that
// sequences are identical across standard library implementations.
std::uint64_t uniform_index(Rng& rng, std::uint64_t n);
double uniform_unit(Rng& rng);  // [0, 1)
double standard_normal(Rng& rng);

template <class T>
void fisher_yates_shuffle(std::vector<T>& items, Rng& rng) {
    for (std::size_t i = items.size(); i > 1; --i) {
        const auto j = static_cast<std::size_t>(uniform_index(rng, i));
        std::swap(items[i - 1], items[j]);
    }
}

std::vector<std::size_t> shuffled_indices(std::size_t n, Rng& rng);

/// Derives an independent seed from a base seed and a stream label.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);
std::uint64_t derive_seed(std::uint64_t base, std::string_view label);

std::uint64_t fnv1a64(std::string_view bytes);
std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::string& path);

std::string serialize_rng(const Rng& rng);
Rng deserialize_rng(const std::string& state);

std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view contents);

std::string to_lower_ascii(std::string_view s);
std::string trim(std::string_view s);
std::vector<std::string> split_whitespace(std::string_view s);

/// Replaces each ill-formed UTF-8 sequence with U+FFFD. Byte-level models can
/// emit partial characters, which JSON output cannot carry.
std::string sanitize_utf8(std::string_view s);

/// Lowercase, ASCII punctuation replaced by spaces, whitespace-split. Shared
/// by the lexical metrics and the offline embedders.
std::vector<std::string> normalized_tokens(std::string_view s);

/// Runs fn(i) for i in [0, n) on up to `workers` threads. fn must only write
/// to slot i of pre-sized outputs; callers reduce in index order afterwards.
void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn);

}  // namespace dslm
