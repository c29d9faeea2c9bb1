#include <atomic>
#include <set>

#include "doctest.h"
#include "dslm/common.hpp"

using namespace dslm;

TEST_CASE("sha256 matches published test vectors") {
    CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST_CASE("fnv1a64 matches the reference constants") {
    CHECK(fnv1a64("") == 0xcbf29ce484222325ULL);
    CHECK(fnv1a64("a") == 0xaf63dc4c8601ec8cULL);
}

TEST_CASE("derived seeds are stable and label-sensitive") {
    CHECK(derive_seed(1, "split") == derive_seed(1, "split"));
    CHECK(derive_seed(1, "split") != derive_seed(1, "shuffle"));
    CHECK(derive_seed(1, 0) != derive_seed(1, 1));
    CHECK(derive_seed(1, 5) != derive_seed(2, 5));
}

TEST_CASE("uniform_index stays in range and covers it") {
    Rng rng(3);
    std::set<std::uint64_t> seen;
    for (int i = 0; i < 2000; ++i) {
        const auto v = uniform_index(rng, 7);
        REQUIRE(v < 7);
        seen.insert(v);
    }
    CHECK(seen.size() == 7);
}

TEST_CASE("fisher_yates_shuffle is a seeded permutation") {
    std::vector<int> a{0, 1, 2, 3, 4, 5, 6, 7, 8, 9}, b = a;
    Rng r1(11), r2(11);
    fisher_yates_shuffle(a, r1);
    fisher_yates_shuffle(b, r2);
    CHECK(a == b);
    std::vector<int> sorted = a;
    std::sort(sorted.begin(), sorted.end());
    CHECK(sorted == std::vector<int>{0, 1, 2, 3, 4, 5, 6, 7, 8, 9});
}

TEST_CASE("rng state round-trips through serialization") {
    Rng rng(42);
    for (int i = 0; i < 10; ++i) rng();
    Rng copy = deserialize_rng(serialize_rng(rng));
    for (int i = 0; i < 10; ++i) CHECK(copy() == rng());
}

TEST_CASE("string helpers") {
    CHECK(trim("  a b \n") == "a b");
    CHECK(to_lower_ascii("AbC") == "abc");
    CHECK(split_whitespace("  x  y\tz\n") == std::vector<std::string>{"x", "y", "z"});
    CHECK(normalized_tokens("The Cat, sat!") == std::vector<std::string>{"the", "cat", "sat"});
}

TEST_CASE("parallel_for visits every index once for any worker count") {
    for (int workers : {1, 2, 5}) {
        std::vector<std::atomic<int>> hits(100);
        parallel_for(hits.size(), workers, [&](std::size_t i) { hits[i]++; });
        for (const auto& h : hits) CHECK(h.load() == 1);
    }
}

TEST_CASE("parallel_for propagates worker exceptions") {
    CHECK_THROWS_AS(parallel_for(10, 3,
                                 [](std::size_t i) {
                                     if (i == 7) throw ValidationError("boom");
                                 }),
                    ValidationError);
}

TEST_CASE("reading a missing file is an IO error") {
    CHECK_THROWS_AS(read_file("/nonexistent/dslm/file"), IoError);
}

TEST_CASE("ill-formed UTF-8 is replaced, valid text passes through") {
    const std::string ok = "brake \xE2\x9C\x93 caf\xC3\xA9 \xF0\x9F\x9A\x97";
    CHECK(sanitize_utf8(ok) == ok);
    const std::string fffd = "\xEF\xBF\xBD";
    CHECK(sanitize_utf8("a\xE9z") == "a" + fffd + "z");
    CHECK(sanitize_utf8("\xE2\x9C") == fffd + fffd);      // truncated sequence
    CHECK(sanitize_utf8("\xC0\xAF") == fffd + fffd);      // overlong encoding
    CHECK(sanitize_utf8("\xED\xA0\x80") == fffd + fffd + fffd);  // surrogate
}
