#include <cmath>
#include <sstream>

#include "doctest.h"
#include "dslm/evaluation.hpp"

using namespace dslm;

namespace {

const std::string kSrc = DSLM_SOURCE_DIR;

template <class R>
std::vector<R> fixture(const std::string& name) {
    return load_jsonl<R>(kSrc + "/fixtures/" + name);
}

// Byte model whose next-token preference depends on the last byte only:
// ' ' -> 'a', 'a' -> 'b', 'b' -> 'c', anything else -> ' '.
class RiggedLM final : public LanguageModel {
public:
    int vocab_size() const override { return 258; }
    int context_length() const override { return ctx; }
    std::vector<int> encode(std::string_view text) const override {
        std::vector<int> out;
        for (unsigned char c : text) out.push_back(c);
        return out;
    }
    std::string decode(std::span<const int> ids) const override {
        std::string s;
        for (int id : ids) s.push_back(static_cast<char>(id));
        return s;
    }
    int bos_id() const override { return 256; }
    int eos_id() const override { return 257; }
    Mat<double> logits(std::span<const int> ids) const override {
        Mat<double> z(ids.size(), 258);
        for (std::size_t t = 0; t < ids.size(); ++t) {
            int next = ' ';
            if (ids[t] == ' ') next = 'a';
            if (ids[t] == 'a') next = 'b';
            if (ids[t] == 'b') next = 'c';
            z(t, static_cast<std::size_t>(next)) = 4.0;
            z(t, static_cast<std::size_t>(ids[t] % 200)) += 0.5;  // some mass on a second token
        }
        return z;
    }
    int ctx = 64;
};

// Score of `option` after BOS + prefix, computed from one forward pass over
// the whole concatenation.
double oracle_option_score(const RiggedLM& lm, const std::string& prefix, const std::string& option) {
    std::vector<int> ids{lm.bos_id()};
    for (unsigned char c : prefix) ids.push_back(c);
    const std::size_t start = ids.size();
    for (unsigned char c : option) ids.push_back(c);
    const auto z = lm.logits(ids);
    double total = 0.0;
    for (std::size_t t = start; t < ids.size(); ++t) {
        const double* row = z.row(t - 1);
        double sum = 0.0;
        for (std::size_t j = 0; j < z.cols; ++j) sum += std::exp(row[j]);
        total += row[ids[t]] - std::log(sum);
    }
    return total;
}

// Generator whose reply depends on the sampling seed, so trials differ.
class SeedGen final : public TextGenerator {
public:
    std::string complete(const std::string&, const DecodeParams& d) const override {
        return d.seed % 2 == 0 ? "brake pads wear out" : "the rotor warps";
    }
};

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::stringstream ss(line);
    while (std::getline(ss, cell, ',')) out.push_back(cell);
    return out;
}

std::vector<std::string> split_text(const std::string& line) {
    std::vector<std::string> out;
    std::size_t i = 0;
    while (i < line.size()) {
        while (i < line.size() && line[i] == ' ') ++i;
        std::size_t j = line.find("  ", i);
        if (j == std::string::npos) j = line.size();
        if (j > i) out.push_back(line.substr(i, j - i));
        i = j;
    }
    return out;
}

}  // namespace

TEST_CASE("choice extraction") {
    CHECK(extract_choice(" B") == 'B');
    CHECK(extract_choice("c) brake fluid") == 'C');
    CHECK(extract_choice("(d)") == 'D');
    CHECK(extract_choice("A.\nB") == 'A');
    CHECK(extract_choice("a: yes") == 'A');
    CHECK_FALSE(extract_choice("E"));
    CHECK_FALSE(extract_choice("Brake"));
    CHECK_FALSE(extract_choice(""));
    CHECK_FALSE(extract_choice("\nA"));
}

TEST_CASE("answer normalization and matching") {
    CHECK(normalize_answer("  The Brake-Fluid!  ") == "brakefluid");
    CHECK(normalize_answer("An ABS  module") == "abs module");
    CHECK(qa_match("It is the brake fluid, clearly.", "Brake fluid"));
    CHECK_FALSE(qa_match("brake", "rake"));
    CHECK_FALSE(qa_match("first line\nbrake fluid", "brake fluid"));
    CHECK_FALSE(qa_match("anything", "the"));
}

TEST_CASE("few-shot prompts list the exemplars then the open question") {
    const auto items = fixture<McqItem>("mcq_items.jsonl");
    const auto shots = fixture<McqItem>("mcq_shots.jsonl");
    const auto p = build_fewshot_prompt(items[0], shots);
    const auto& s = shots[0];
    const std::string first = "Question: " + s.question + "\nA) " + s.options[0] + "\nB) " + s.options[1] + "\nC) " +
                              s.options[2] + "\nD) " + s.options[3] + "\nAnswer: " + std::string(1, s.answer) + "\n\n";
    CHECK(p.rfind(first, 0) == 0);
    const auto& q = items[0];
    const std::string last = "Question: " + q.question + "\nA) " + q.options[0] + "\nB) " + q.options[1] + "\nC) " +
                             q.options[2] + "\nD) " + q.options[3] + "\nAnswer:";
    CHECK(p.size() >= last.size());
    CHECK(p.compare(p.size() - last.size(), last.size(), last) == 0);
    std::size_t blocks = 0;
    for (std::size_t at = p.find("Question: "); at != std::string::npos; at = p.find("Question: ", at + 1)) ++blocks;
    CHECK(blocks == 6);

    const auto qa = build_fewshot_prompt(items[0], shots, PromptFormat::Qa);
    CHECK(qa.find("A) ") == std::string::npos);
    CHECK(qa.find(embed_options(items[0])) != std::string::npos);
}

TEST_CASE("few-shot sets must have five exemplars disjoint from the items") {
    const auto items = fixture<McqItem>("mcq_items.jsonl");
    auto shots = fixture<McqItem>("mcq_shots.jsonl");
    CHECK_NOTHROW(validate_fewshot(shots, items));
    auto four = shots;
    four.pop_back();
    CHECK_THROWS_AS(validate_fewshot(four, items), ValidationError);
    shots[2].id = items[3].id;
    CHECK_THROWS_AS(validate_fewshot(shots, items), ValidationError);
}

TEST_CASE("an oracle generator scores perfectly on MCQ and QA") {
    const auto items = fixture<McqItem>("mcq_items.jsonl");
    const auto shots = fixture<McqItem>("mcq_shots.jsonl");
    std::map<std::string, std::string> replies;
    for (const auto& it : items) replies[build_fewshot_prompt(it, shots)] = " " + std::string(1, it.answer) + ")";
    const MapTextGenerator oracle(replies, " Z");
    const auto r = eval_mcq(oracle, items, shots, DecodeParams{}, {"oracle", 3});
    CHECK(*r.report.accuracy == 1.0);
    CHECK(*r.report.correct == static_cast<int>(items.size()));
    CHECK(*r.report.answer_distribution == gold_distribution(items));
    REQUIRE(r.audit.size() == items.size());
    CHECK(r.audit[0]["id"] == items[0].id);

    const auto wrong = eval_mcq(MapTextGenerator({}, " Z"), items, shots, DecodeParams{});
    CHECK(*wrong.report.accuracy == 0.0);
    CHECK(*wrong.report.answer_distribution == std::array<int, 4>{0, 0, 0, 0});
    CHECK(wrong.audit[0]["extracted"].is_null());

    const auto qitems = fixture<QaItem>("qa_items.jsonl");
    const auto qshots = fixture<QaItem>("qa_shots.jsonl");
    std::map<std::string, std::string> qreplies;
    for (const auto& it : qitems) qreplies[build_fewshot_prompt(it, qshots)] = " " + it.answer + ".\nQuestion: junk";
    const auto qr = eval_qa(MapTextGenerator(qreplies), qitems, qshots, DecodeParams{});
    CHECK(*qr.report.accuracy == 1.0);
}

TEST_CASE("completion filter drops long options and excluded patterns") {
    McqItem keep{"k", "The rotor is made of", {"cast iron", "paper", "glass", "rubber"}, 'A', std::nullopt};
    McqItem long_opt{"l", "Pick one", {"one two three four five", "b", "c", "d"}, 'B', std::nullopt};
    McqItem negated{"n", "Which is NOT a brake part?", {"pad", "rotor", "piston", "radio"}, 'D', std::nullopt};
    const auto f = filter_completion_items({keep, long_opt, negated});
    REQUIRE(f.items.size() == 1);
    CHECK(f.items[0].prefix == "The rotor is made of");
    CHECK(f.items[0].options[0] == " cast iron");
    CHECK(f.items[0].answer_index == 0);
    REQUIRE(f.excluded.size() == 2);
    CHECK(f.excluded[0].first == "l");
    CHECK(f.excluded[1].first == "n");
    // exactly four words is still allowed
    McqItem four{"f", "Pick", {"one two three four", "b", "c", "d"}, 'A', std::nullopt};
    CHECK(filter_completion_items({four}).items.size() == 1);
}

TEST_CASE("completion scoring picks the option the model prefers") {
    const RiggedLM lm;
    // " abc" follows the model's chain; the others do not
    const std::array<std::string, 4> base{" abc", " xyz", " qrs", " mno"};
    std::vector<CompItem> items;
    for (int g = 0; g < 4; ++g) {
        CompItem c;
        c.id = "c" + std::to_string(g);
        c.prefix = "The part is";
        for (int k = 0; k < 4; ++k) c.options[k] = base[static_cast<std::size_t>((k - g + 4) % 4)];
        c.answer_index = g;
        items.push_back(c);
    }
    const auto r = eval_completion(lm, items, {"rigged", 2});
    CHECK(*r.report.accuracy == 1.0);
    CHECK(*r.report.answer_distribution == std::array<int, 4>{1, 1, 1, 1});
    for (std::size_t i = 0; i < items.size(); ++i) {
        for (int k = 0; k < 4; ++k) {
            const double expect = oracle_option_score(lm, items[i].prefix, items[i].options[k]);
            CHECK(r.audit[i]["scores"][k].get<double>() == doctest::Approx(expect).epsilon(1e-12));
        }
    }
}

TEST_CASE("completion scores do not depend on how much prefix fits") {
    // the rigged model only looks at the previous byte, so trimming old
    // prefix tokens to fit a short context must not change any score
    RiggedLM wide;
    RiggedLM narrow;
    narrow.ctx = 12;
    CompItem c{"c", "A rather long stem that will not fit in twelve", {" abc", " xyz", " ab", " q"}, 0};
    const auto a = eval_completion(wide, {c});
    const auto b = eval_completion(narrow, {c});
    for (int k = 0; k < 4; ++k) {
        CHECK(a.audit[0]["scores"][k].get<double>() == doctest::Approx(b.audit[0]["scores"][k].get<double>()));
    }
}

TEST_CASE("rouge and bleu on hand-computed cases") {
    const auto r1 = rouge_n("the brake pad is worn", "the brake rotor is worn out", 1);
    CHECK(r1.precision == doctest::Approx(4.0 / 5.0));
    CHECK(r1.recall == doctest::Approx(4.0 / 6.0));
    CHECK(r1.f1 == doctest::Approx(2 * 0.8 * (4.0 / 6.0) / (0.8 + 4.0 / 6.0)));
    CHECK(rouge_n("x y z", "x y w", 1).f1 == doctest::Approx(2.0 / 3.0));
    CHECK(rouge_n("x y z", "x y w", 2).f1 == doctest::Approx(0.5));
    CHECK(rouge_l("a b c d", "a c b d").f1 == doctest::Approx(0.75));
    CHECK(rouge_l("Brake, fluid!", "brake fluid").f1 == doctest::Approx(1.0));

    // clipping: "the" counted at most as often as in the reference
    CHECK(bleu("the the the", "the cat", 1) == doctest::Approx(1.0 / 3.0));
    // p = 5/5, 3/4, 2/3, 1/2; brevity penalty exp(1 - 6/5)
    CHECK(bleu("the cat sat on mat", "the cat sat on the mat") ==
          doctest::Approx(std::exp(-0.2) * std::pow(1.0 * 0.75 * (2.0 / 3.0) * 0.5, 0.25)));
    // zero-match orders are smoothed to 1 / (count + 1)
    CHECK(bleu("a b c d", "d c b a") == doctest::Approx(std::pow(1.0 * 0.25 * (1.0 / 3.0) * 0.5, 0.25)));
    CHECK(bleu("", "x") == 0.0);
}

TEST_CASE("greedy cosine matching") {
    const TableEmbedder emb({{"x", {1, 0}}, {"y", {0, 1}}, {"z", {1, 1}}}, 2);
    // precision: x->0, z->1/sqrt2 ; recall: y->1/sqrt2
    const double p = (0.0 + 1 / std::sqrt(2.0)) / 2, r = 1 / std::sqrt(2.0);
    CHECK(greedy_match_f1("x z", "y", emb) == doctest::Approx(2 * p * r / (p + r)).epsilon(1e-9));
    CHECK(greedy_match_f1("x y", "y x", emb) == doctest::Approx(1.0));
    CHECK(greedy_match_f1("", "x", emb) == 0.0);

    // brute force over random tables
    Rng rng(5);
    std::map<std::string, std::vector<double>> table;
    const std::vector<std::string> words{"a1", "b2", "c3", "d4", "e5", "f6"};
    for (const auto& w : words) {
        std::vector<double> v(3);
        for (auto& x : v) x = standard_normal(rng);
        table[w] = v;
    }
    const TableEmbedder rnd(table, 3);
    const std::vector<std::string> cand{"a1", "c3", "c3", "f6"}, ref{"b2", "d4", "e5"};
    auto cos = [&](const std::string& a, const std::string& b) {
        const auto &u = table[a], &v = table[b];
        double d = 0, nu = 0, nv = 0;
        for (int i = 0; i < 3; ++i) d += u[i] * v[i], nu += u[i] * u[i], nv += v[i] * v[i];
        return d / std::sqrt(nu * nv);
    };
    double ps = 0, rs = 0;
    for (const auto& c : cand) {
        double best = -2;
        for (const auto& w : ref) best = std::max(best, cos(c, w));
        ps += best;
    }
    for (const auto& w : ref) {
        double best = -2;
        for (const auto& c : cand) best = std::max(best, cos(c, w));
        rs += best;
    }
    ps /= cand.size();
    rs /= ref.size();
    const double expect = ps > 0 && rs > 0 ? std::min(1.0, 2 * ps * rs / (ps + rs)) : 0.0;
    CHECK(greedy_match_f1("a1 c3 c3 f6", "b2 d4 e5", rnd) == doctest::Approx(expect).epsilon(1e-9));
}

TEST_CASE("summarization runs five sampled trials and reports mean and spread") {
    const SumOptions defaults;
    CHECK(defaults.trials == 5);
    CHECK(defaults.decode.temperature == 0.5);

    const auto items = fixture<SumItem>("sum_items.jsonl");
    const HashingEmbedder emb(64, 3);
    const SeedGen gen;
    const auto r = eval_summarization(gen, items, emb, defaults);
    REQUIRE(r.report.metric_stats);
    CHECK(r.audit.size() == items.size() * 5);

    // recompute the per-trial item means and their population spread
    for (const auto& name : summarization_metrics()) {
        std::vector<double> trial_means;
        for (int t = 0; t < 5; ++t) {
            const auto ts = derive_seed(defaults.decode.seed, static_cast<std::uint64_t>(t));
            double s = 0;
            for (const auto& it : items) {
                DecodeParams d = defaults.decode;
                d.seed = derive_seed(ts, it.id);
                s += summary_scores(gen.complete("", d), it.reference_summary, emb).at(name);
            }
            trial_means.push_back(s / items.size());
        }
        double m = 0, v = 0;
        for (double x : trial_means) m += x;
        m /= 5;
        for (double x : trial_means) v += (x - m) * (x - m);
        const auto& st = r.report.metric_stats->at(name);
        CHECK(st.mean == doctest::Approx(m).epsilon(1e-12));
        CHECK(st.std == doctest::Approx(std::sqrt(v / 5)).epsilon(1e-9));
    }

    // a fixed reply has zero spread and shuffled items give the same numbers
    const MapTextGenerator fixed({}, "brake pads wear out");
    auto shuffled = items;
    std::reverse(shuffled.begin(), shuffled.end());
    const auto a = eval_summarization(fixed, items, emb);
    const auto b = eval_summarization(fixed, shuffled, emb);
    for (const auto& name : summarization_metrics()) {
        CHECK(a.report.metric_stats->at(name).std == 0.0);
        CHECK(a.report.metric_stats->at(name).mean == b.report.metric_stats->at(name).mean);
    }
    CHECK(metric_table({a.report}).text.find(" ± ") != std::string::npos);
}

TEST_CASE("report table ordering, ties and ground truth row") {
    auto rep = [](std::string name, int correct, int total, std::array<int, 4> dist) {
        MetricReport r;
        r.model = std::move(name);
        r.correct = correct;
        r.total = total;
        r.accuracy = static_cast<double>(correct) / total;
        r.answer_distribution = dist;
        return r;
    };
    const std::vector<MetricReport> reports{rep("small", 300, 876, {200, 200, 200, 276}),
                                            rep("zeta", 397, 876, {219, 219, 219, 219}),
                                            rep("alpha", 397, 876, {300, 200, 200, 176})};
    const auto t = report_table(reports, std::array<int, 4>{219, 219, 219, 219});
    std::vector<std::string> lines;
    std::stringstream ss(t.csv);
    for (std::string l; std::getline(ss, l);) lines.push_back(l);
    REQUIRE(lines.size() == 5);
    CHECK(lines[0] == "Model,Accuracy (Correct/Total),A,B,C,D");
    CHECK(lines[1] == "alpha,0.4532 (397/876),300,200,200,176");
    CHECK(lines[2] == "zeta,0.4532 (397/876),219,219,219,219");
    CHECK(lines[3].rfind("small,0.3425 (300/876)", 0) == 0);
    CHECK(lines[4] == "Ground Truth,-,219,219,219,219");

    // the text rendering carries the same cells as the CSV
    std::vector<std::string> text_lines;
    std::stringstream ts(t.text);
    for (std::string l; std::getline(ts, l);) {
        if (l.find_first_not_of('-') != std::string::npos) text_lines.push_back(l);
    }
    REQUIRE(text_lines.size() == lines.size());
    for (std::size_t i = 0; i < lines.size(); ++i) CHECK(split_text(text_lines[i]) == split_csv(lines[i]));

    MetricReport bad;
    bad.model = "x";
    CHECK_THROWS_AS(report_table({bad}), ValidationError);
}
