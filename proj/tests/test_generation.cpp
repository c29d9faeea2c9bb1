#include <cmath>
#include <map>

#include "doctest.h"
#include "dslm/generation.hpp"

using namespace dslm;

namespace {

// Byte-level toy model: after letter c it strongly prefers c + 1, after 'e'
// it prefers EOS. Logits depend only on the last token, so expected outputs
// can be read off the rule.
class ChainLM final : public LanguageModel {
public:
    static constexpr int kBos = 256, kEos = 257;
    int vocab_size() const override { return 258; }
    int context_length() const override { return 8; }
    std::vector<int> encode(std::string_view text) const override {
        std::vector<int> out;
        for (unsigned char c : text) out.push_back(c);
        return out;
    }
    std::string decode(std::span<const int> ids) const override {
        std::string s;
        for (int id : ids) {
            if (id < 256) s.push_back(static_cast<char>(id));
        }
        return s;
    }
    int bos_id() const override { return kBos; }
    int eos_id() const override { return kEos; }
    Mat<double> logits(std::span<const int> ids) const override {
        ++calls;
        max_window = std::max(max_window, ids.size());
        Mat<double> z(ids.size(), 258);
        for (std::size_t t = 0; t < ids.size(); ++t) {
            const int last = ids[t];
            int next = 'a';
            if (last >= 'a' && last < 'e') next = last + 1;
            if (last == 'e') next = kEos;
            z(t, static_cast<std::size_t>(next)) = 5.0;
        }
        return z;
    }
    mutable std::size_t calls = 0;
    mutable std::size_t max_window = 0;
};

}  // namespace

TEST_CASE("greedy decoding follows the argmax and stops at EOS") {
    const ChainLM lm;
    DecodeParams d;
    d.stop.clear();
    const auto g = generate(lm, std::vector<int>{ChainLM::kBos, 'b'}, d);
    CHECK(g.text == "cde");
    CHECK(g.reason == StopReason::Eos);
    CHECK(g.ids == std::vector<int>{'c', 'd', 'e'});
}

TEST_CASE("max_new_tokens and stop strings bound the output") {
    const ChainLM lm;
    DecodeParams d;
    d.stop.clear();
    d.max_new_tokens = 2;
    auto g = generate(lm, std::vector<int>{'a'}, d);
    CHECK(g.text == "bc");
    CHECK(g.reason == StopReason::MaxTokens);

    d.max_new_tokens = 10;
    d.stop = {"d"};
    g = generate(lm, std::vector<int>{'a'}, d);
    CHECK(g.text == "bc");
    CHECK(g.reason == StopReason::StopString);

    d.stop_at_eos = false;
    d.stop.clear();
    d.max_new_tokens = 7;
    g = generate(lm, std::vector<int>{'c'}, d);
    // EOS tokens are kept in ids but decode to nothing; 'a' follows any non-letter
    CHECK(g.ids == std::vector<int>{'d', 'e', ChainLM::kEos, 'a', 'b', 'c', 'd'});
    CHECK(g.text == "deabcd");
}

TEST_CASE("the model only ever sees the most recent context window") {
    const ChainLM lm;
    DecodeParams d;
    d.stop.clear();
    d.stop_at_eos = false;
    d.max_new_tokens = 20;
    generate(lm, std::vector<int>{'a', 'b', 'c', 'd', 'e', 'a', 'b'}, d);
    CHECK(lm.max_window == 8);
    CHECK(lm.calls == 20);
}

TEST_CASE("pick_token greedy ties go to the lowest index") {
    Rng rng(1);
    CHECK(pick_token(std::vector<double>{1.0, 3.0, 3.0, 2.0}, 0.0, rng) == 1);
}

TEST_CASE("sampling frequencies match softmax(logits / T)") {
    const std::vector<double> z{0.0, 1.0, 2.0};
    const double temp = 0.7;
    std::vector<double> expect(3);
    double sum = 0.0;
    for (int j = 0; j < 3; ++j) sum += expect[j] = std::exp(z[j] / temp);
    for (auto& e : expect) e /= sum;
    Rng rng(42);
    std::vector<int> count(3, 0);
    const int n = 40000;
    for (int i = 0; i < n; ++i) ++count[static_cast<std::size_t>(pick_token(z, temp, rng))];
    for (int j = 0; j < 3; ++j) {
        // five binomial standard deviations
        const double sd = std::sqrt(expect[j] * (1 - expect[j]) / n);
        CHECK(std::abs(count[j] / double(n) - expect[j]) < 5 * sd);
    }
}

TEST_CASE("temperature sampling is reproducible from the seed") {
    const ChainLM lm;
    DecodeParams d;
    d.stop.clear();
    d.stop_at_eos = false;
    d.temperature = 3.0;
    d.max_new_tokens = 30;
    d.seed = 9;
    const auto a = generate(lm, std::vector<int>{'a'}, d);
    const auto b = generate(lm, std::vector<int>{'a'}, d);
    CHECK(a.ids == b.ids);
    d.seed = 10;
    const auto c = generate(lm, std::vector<int>{'a'}, d);
    CHECK(a.ids != c.ids);
}

TEST_CASE("decode parameters are validated") {
    const ChainLM lm;
    DecodeParams d;
    d.temperature = -1.0;
    CHECK_THROWS_AS(generate(lm, std::vector<int>{'a'}, d), ValidationError);
    d = DecodeParams{};
    d.max_new_tokens = 0;
    CHECK_THROWS_AS(generate(lm, std::vector<int>{'a'}, d), ValidationError);
    CHECK_THROWS_AS(generate(lm, std::vector<int>{}, DecodeParams{}), ValidationError);
}

TEST_CASE("sequence log-probability sums per-token log-softmax") {
    const ChainLM lm;
    // every row puts 5 on one token and 0 on the other 257
    const double lp_hit = 5.0 - std::log(std::exp(5.0) + 257.0);
    const double lp_miss = 0.0 - std::log(std::exp(5.0) + 257.0);
    CHECK(sequence_log_prob(lm, std::vector<int>{'a'}, std::vector<int>{'b', 'c'}) == doctest::Approx(2 * lp_hit));
    CHECK(sequence_log_prob(lm, std::vector<int>{'a'}, std::vector<int>{'b', 'x'}) == doctest::Approx(lp_hit + lp_miss));
    CHECK_THROWS_AS(sequence_log_prob(lm, std::vector<int>{}, std::vector<int>{'b'}), ValidationError);
    CHECK_THROWS_AS(sequence_log_prob(lm, std::vector<int>(8, 'a'), std::vector<int>{'b', 'c'}), ValidationError);
}

TEST_CASE("text generator wrappers") {
    const ChainLM lm;
    const LmTextGenerator gen(lm);
    DecodeParams d;
    d.stop.clear();
    // BOS is not a letter, so an empty prompt starts the chain at 'a'
    CHECK(gen.complete("", d) == "abcde");
    CHECK(gen.complete("c", d) == "de");

    const MapTextGenerator map({{"p1", "A) yes\n### next"}}, "fallback");
    DecodeParams s;
    CHECK(map.complete("p1", s) == "A) yes");
    CHECK(map.complete("other", s) == "fallback");
}
