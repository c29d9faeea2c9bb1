#include <cmath>
#include <set>

#include "doctest.h"
#include "dslm/augment.hpp"
#include "dslm/chunking.hpp"
#include "dslm/contamination.hpp"
#include "dslm/dsft.hpp"
#include "dslm/logreg.hpp"
#include "dslm/minhash.hpp"
#include "dslm/topic_filter.hpp"

using namespace dslm;

namespace {

// Exact Jaccard over lowercase whitespace word n-gram sets.
double exact_jaccard(const std::string& a, const std::string& b, int n = 3) {
    auto grams = [n](const std::string& s) {
        std::vector<std::string> w;
        std::string cur;
        for (char c : s) {
            if (std::isspace(static_cast<unsigned char>(c))) {
                if (!cur.empty()) w.push_back(cur);
                cur.clear();
            } else {
                cur += static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
            }
        }
        if (!cur.empty()) w.push_back(cur);
        std::set<std::string> out;
        const std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(n), w.size());
        for (std::size_t i = 0; i + k <= w.size(); ++i) {
            std::string g;
            for (std::size_t j = 0; j < k; ++j) g += (j ? " " : "") + w[i + j];
            out.insert(g);
        }
        return out;
    };
    const auto sa = grams(a), sb = grams(b);
    std::size_t inter = 0;
    for (const auto& g : sa) inter += sb.count(g);
    return static_cast<double>(inter) / static_cast<double>(sa.size() + sb.size() - inter);
}

std::string random_text(Rng& rng, std::size_t words, std::size_t vocab) {
    std::string s;
    for (std::size_t i = 0; i < words; ++i) s += (i ? " " : "") + ("w" + std::to_string(uniform_index(rng, vocab)));
    return s;
}

Document make_doc(const std::string& id, const std::string& text) {
    Document d;
    d.id = id;
    d.source = "test";
    d.text = text;
    return d;
}

}  // namespace

TEST_CASE("word shingles are lowercase, sorted and unique") {
    CHECK(word_shingles("A b A b", 2) == std::vector<std::string>{"a b", "b a"});
    CHECK(word_shingles("one two", 3) == std::vector<std::string>{"one two"});
    CHECK_THROWS_AS(word_shingles("   ", 3), ValidationError);
}

TEST_CASE("MinHash estimates track exact Jaccard") {
    Rng rng(99);
    double total_err = 0.0;
    for (int i = 0; i < 100; ++i) {
        const std::string a = random_text(rng, 60, 40);
        std::string b = a;
        // mutate a random fraction of words to spread the similarity range
        auto words = split_whitespace(a);
        const auto changes = uniform_index(rng, words.size());
        for (std::uint64_t c = 0; c < changes; ++c) words[uniform_index(rng, words.size())] = "z" + std::to_string(c);
        b.clear();
        for (const auto& w : words) b += (b.empty() ? "" : " ") + w;
        const double est = minhash_signature(a, 128).similarity(minhash_signature(b, 128));
        total_err += std::abs(est - exact_jaccard(a, b));
    }
    CHECK(total_err / 100.0 < 0.05);
}

TEST_CASE("identical texts have identical signatures") {
    CHECK(minhash_signature("the quick brown fox jumps") == minhash_signature("The quick  brown fox jumps"));
}

TEST_CASE("dedup keeps the earliest member of each duplicate group") {
    Rng rng(5);
    std::vector<Document> docs;
    const std::string base = random_text(rng, 80, 500);
    docs.push_back(make_doc("a", random_text(rng, 80, 500)));
    docs.push_back(make_doc("b", base));
    docs.push_back(make_doc("c", base + " trailing"));
    docs.push_back(make_doc("d", random_text(rng, 80, 500)));
    const auto res = dedup_corpus(docs, DedupConfig{});
    std::vector<std::string> kept;
    for (const auto& d : res.kept) kept.push_back(d.id);
    CHECK(kept == std::vector<std::string>{"a", "b", "d"});
    REQUIRE(res.dropped.size() == 1);
    CHECK(res.dropped[0].dropped_id == "c");
    CHECK(res.dropped[0].kept_id == "b");
}

TEST_CASE("dedup config rejects inconsistent banding") {
    DedupConfig c;
    c.bands = 10;
    c.rows = 10;
    CHECK_THROWS_AS(c.validate(), ValidationError);
}

TEST_CASE("contamination screen flags copies of evaluation text") {
    Rng rng(8);
    const std::string eval = random_text(rng, 40, 300);
    const std::vector<std::string> train{random_text(rng, 40, 300), eval + " extra words here", random_text(rng, 40, 300)};
    CHECK(contamination_screen(train, {eval}, 0.5) == std::vector<std::size_t>{1});
}

TEST_CASE("tf-idf uses smoothed idf and sublinear tf") {
    const auto v = TfidfVectorizer::fit({"brake brake pad", "brake rotor"});
    const long brake = v.index_of("brake"), pad = v.index_of("pad");
    REQUIRE(brake >= 0);
    REQUIRE(pad >= 0);
    CHECK(v.idf()[static_cast<std::size_t>(brake)] == doctest::Approx(std::log(3.0 / 3.0) + 1.0));
    CHECK(v.idf()[static_cast<std::size_t>(pad)] == doctest::Approx(std::log(3.0 / 2.0) + 1.0));
    const auto x = v.transform("Brake brake pad unknown");
    const auto dense = x.to_dense();
    // tf-idf rows are L2-normalized; compare the ratio of the two weights
    const double w_brake = (1.0 + std::log(2.0)) * 1.0;
    const double w_pad = 1.0 * (std::log(1.5) + 1.0);
    CHECK(dense[static_cast<std::size_t>(brake)] / dense[static_cast<std::size_t>(pad)] ==
          doctest::Approx(w_brake / w_pad));
}

TEST_CASE("logistic regression reaches the optimum of its objective") {
    // Independent check: plain gradient descent on the same objective in dense form.
    const std::vector<std::array<double, 2>> pts{{1, 2}, {2, 1}, {2, 3}, {3, 3}, {-1, -1}, {-2, 0}, {0, -2}, {1, 0.5}};
    const std::vector<int> y{1, 1, 1, 1, -1, -1, -1, -1};
    std::vector<SparseVector> X;
    for (const auto& p : pts) X.push_back(SparseVector::from_dense(std::vector<double>{p[0], p[1]}));
    const auto clf = logreg_train(X, y, 1.0);
    double w0 = 0, w1 = 0, b = 0;
    for (int it = 0; it < 200000; ++it) {
        double g0 = w0, g1 = w1, gb = 0;
        for (std::size_t i = 0; i < pts.size(); ++i) {
            const double m = w0 * pts[i][0] + w1 * pts[i][1] + b;
            const double c = -y[i] / (1.0 + std::exp(y[i] * m));
            g0 += c * pts[i][0];
            g1 += c * pts[i][1];
            gb += c;
        }
        w0 -= 0.05 * g0;
        w1 -= 0.05 * g1;
        b -= 0.05 * gb;
    }
    CHECK(clf.weights[0] == doctest::Approx(w0).epsilon(1e-6));
    CHECK(clf.weights[1] == doctest::Approx(w1).epsilon(1e-6));
    CHECK(clf.bias == doctest::Approx(b).epsilon(1e-6));
    for (double g : logreg_gradient(clf, X, y)) CHECK(std::abs(g) < 1e-5);
}

TEST_CASE("logistic regression validates labels") {
    std::vector<SparseVector> X{SparseVector::from_dense(std::vector<double>{1.0})};
    CHECK_THROWS_AS(logreg_train(X, {0}, 1.0), ValidationError);
    CHECK_THROWS_AS(logreg_train(X, {1}, 1.0), ValidationError);
}

TEST_CASE("relevance model separates two vocabularies") {
    std::vector<Document> labeled;
    Rng rng(4);
    const std::vector<std::string> autos{"brake", "engine", "rotor", "coolant", "battery", "clutch"};
    const std::vector<std::string> other{"recipe", "garden", "guitar", "novel", "beach", "coffee"};
    for (int i = 0; i < 40; ++i) {
        const auto& v = i % 2 ? other : autos;
        std::string t;
        for (int k = 0; k < 12; ++k) t += v[uniform_index(rng, v.size())] + " the ";
        Document d = make_doc("l" + std::to_string(i), t);
        d.relevance_label = i % 2 ? RelevanceLabel::Irrelevant : RelevanceLabel::Relevant;
        d.relevance_prob = i % 2 ? 0.0 : 1.0;
        labeled.push_back(d);
    }
    const auto model = train_relevance_model(labeled, 10.0);
    CHECK(model.predict("the engine coolant and brake").label == RelevanceLabel::Relevant);
    CHECK(model.predict("a coffee recipe for the beach").label == RelevanceLabel::Irrelevant);
    const auto classified = classify_documents(model, {make_doc("x", "battery clutch")}, 2);
    CHECK(classified[0].stage == Stage::Classified);
    CHECK(classified[0].relevance_prob.has_value());
    const auto round = RelevanceModel::from_json(json::parse(model.to_json().dump()));
    CHECK(round.predict("brake rotor").prob == doctest::Approx(model.predict("brake rotor").prob));
}

TEST_CASE("topic filter keeps documents above the threshold") {
    const std::map<std::string, std::vector<double>> table{{"brake", {1, 0}}, {"pasta", {0, 1}}, {"mix", {1, 1}}};
    const TableEmbedder emb(table, 2);
    const auto topics = embed_topics({make_doc("t", "brake")}, emb);
    const auto kept = topic_filter({make_doc("a", "brake"), make_doc("b", "pasta"), make_doc("c", "mix")}, topics, emb,
                                   0.5);
    REQUIRE(kept.size() == 2);
    CHECK(kept[0].id == "a");
    CHECK(kept[1].id == "c");
    CHECK(kept[0].stage == Stage::TopicFiltered);
    CHECK(kept[1].topic_scores->at("t") == doctest::Approx(1.0 / std::sqrt(2.0)));
}

TEST_CASE("false-negative recovery takes the top fraction by similarity") {
    const std::map<std::string, std::vector<double>> table{
        {"a", {1, 0}}, {"b", {0.9, 0.1}}, {"c", {0.5, 0.5}}, {"d", {0.1, 0.9}}, {"e", {0, 1}}};
    const TableEmbedder emb(table, 2);
    const auto topics = embed_topics({make_doc("t", "a")}, emb);
    std::vector<Document> irrelevant;
    for (const char* w : {"e", "c", "a", "d", "b"}) irrelevant.push_back(make_doc(std::string("id-") + w, w));
    const auto rec = recover_false_negatives(irrelevant, topics, emb, 0.4);
    REQUIRE(rec.size() == 2);
    CHECK(rec[0].id == "id-a");
    CHECK(rec[1].id == "id-b");
    const auto merged = merge_by_id({make_doc("id-b", "b"), make_doc("z", "a")}, rec);
    CHECK(merged.size() == 3);
}

TEST_CASE("chunking respects the unit budget and keeps sentences whole") {
    const std::string text = "One two three. Four five six seven. Eight nine. Ten eleven twelve thirteen fourteen.";
    const auto chunks = chunk_text(text, 6, whitespace_word_counter());
    std::string joined;
    for (const auto& c : chunks) {
        CHECK(split_whitespace(c).size() <= 6);
        joined += (joined.empty() ? "" : " ") + c;
    }
    CHECK(split_whitespace(joined) == split_whitespace(text));
    // segments keep their trailing whitespace so concatenation is lossless
    CHECK(split_sentences("A b. C d? E!") == std::vector<std::string>{"A b. ", "C d? ", "E!"});
    std::string concat;
    for (const auto& c : chunks) concat += c;
    CHECK(concat == text);
}

TEST_CASE("replay teacher answers from its cache and fails on a miss") {
    ReplayCache cache;
    TeacherRequest req{"sys", "hello", 0.0, 16};
    cache.put(req.hash(), "world");
    ReplayTeacherClient client(cache);
    CHECK(client.complete(req) == "world");
    TeacherRequest other{"sys", "bye", 0.0, 16};
    CHECK_THROWS_AS(client.complete(other), ValidationError);
}

TEST_CASE("request hashes depend on every field") {
    const TeacherRequest a{"s", "u", 0.0, 10};
    CHECK(a.hash() != TeacherRequest{"s", "u", 0.5, 10}.hash());
    CHECK(a.hash() != TeacherRequest{"s", "u", 0.0, 11}.hash());
    CHECK(a.hash() == TeacherRequest{"s", "u", 0.0, 10}.hash());
}

TEST_CASE("transport errors are retried up to the attempt limit") {
    int calls = 0;
    FunctionTeacherClient flaky([&](const TeacherRequest&) -> std::string {
        if (++calls < 3) throw TeacherTransportError("timeout");
        return "ok";
    });
    RetryPolicy p;
    p.attempts = 3;
    p.base_delay = std::chrono::milliseconds(0);
    CHECK(complete_with_retry(flaky, TeacherRequest{}, p) == "ok");
    calls = -10;
    CHECK_THROWS_AS(complete_with_retry(flaky, TeacherRequest{}, p), TeacherTransportError);
}

TEST_CASE("recording teacher captures responses for replay") {
    FunctionTeacherClient echo([](const TeacherRequest& r) { return "re: " + r.user; });
    RecordingTeacherClient rec(echo);
    const TeacherRequest req{"s", "x", 0.0, 8};
    CHECK(rec.complete(req) == "re: x");
    ReplayTeacherClient replay(rec.cache());
    CHECK(replay.complete(req) == "re: x");
}

TEST_CASE("augmentation drops all-NA documents and joins chunk rewrites") {
    FunctionTeacherClient teacher([](const TeacherRequest& r) -> std::string {
        if (r.user.find("Skip") != std::string::npos) return " na ";
        return "[" + r.user + "]";
    });
    AugmentConfig cfg;
    cfg.max_units = 3;
    const auto res = augment_corpus({make_doc("a", "Keep one. Keep two."), make_doc("b", "Skip this one.")}, teacher,
                                    whitespace_word_counter(), cfg, 2);
    REQUIRE(res.augmented.size() == 1);
    CHECK(res.augmented[0].text == "[Keep one. ]\n[Keep two.]");
    CHECK(res.augmented[0].stage == Stage::Augmented);
    CHECK(res.dropped_ids == std::vector<std::string>{"b"});
}

TEST_CASE("alpaca responses parse with and without an input section") {
    auto ex = parse_alpaca_response("Instruction: Explain ABS.\nInput: A car skids.\nResponse: ABS stops lockup.");
    REQUIRE(ex);
    CHECK(ex->instruction == "Explain ABS.");
    CHECK(ex->input == "A car skids.");
    CHECK(ex->output == "ABS stops lockup.");
    ex = parse_alpaca_response("### Instruction: Name a part.\n### Response: Rotor");
    REQUIRE(ex);
    CHECK(ex->input.empty());
    CHECK_FALSE(parse_alpaca_response("Just some text"));
}

TEST_CASE("dsft prompt substitutes topic, task and exemplars") {
    const std::vector<InstructionExample> shots{{"I1", "N1", "R1", {}, {}}, {"I2", "N2", "R2", {}, {}},
                                                {"I3 {TOPIC}", "N3", "R3", {}, {}}};
    const auto p = render_dsft_prompt("Brakes", "true/false", shots);
    CHECK(p.find("TOPIC: Brakes") != std::string::npos);
    CHECK(p.find("TASK:  true/false") != std::string::npos);
    CHECK(p.find("### Instruction: I3 {TOPIC}") != std::string::npos);
    CHECK(p.find("### Response: R2") != std::string::npos);
}

TEST_CASE("dsft generation is reproducible and records parse failures") {
    std::map<std::string, std::vector<InstructionExample>> ex;
    ex["true/false"] = {{"a b", "", "True", {}, {}}, {"c d", "", "False", {}, {}}, {"e f", "", "True", {}, {}}};
    int n = 0;
    FunctionTeacherClient teacher([&](const TeacherRequest& r) -> std::string {
        if (r.user.find("Engine") != std::string::npos) return "garbage";
        return "Instruction: Is it true?\nInput:\nResponse: True";
    });
    DsftConfig cfg;
    cfg.n = 20;
    cfg.seed = 3;
    cfg.workers = 2;
    const std::vector<std::string> topics{"Brakes", "Engine"};
    const auto a = dsft_generate(topics, {"true/false"}, ex, teacher, cfg);
    const auto b = dsft_generate(topics, {"true/false"}, ex, teacher, cfg);
    CHECK(a.examples == b.examples);
    CHECK(a.examples.size() + a.rejections.size() == 20);
    for (const auto& r : a.rejections) CHECK(r.topic == "Engine");
    for (const auto& e : a.examples) CHECK(*e.topic == "Brakes");
    (void)n;
}

TEST_CASE("generation validator applies each gate") {
    std::vector<Document> labeled;
    for (int i = 0; i < 20; ++i) {
        Document d = make_doc("l" + std::to_string(i), i % 2 ? "garden flowers and recipes for dinner"
                                                              : "brake rotor caliper engine coolant repair");
        d.relevance_label = i % 2 ? RelevanceLabel::Irrelevant : RelevanceLabel::Relevant;
        d.relevance_prob = i % 2 ? 0.0 : 1.0;
        labeled.push_back(d);
    }
    const auto model = train_relevance_model(labeled);
    const std::string eval_text = "which brake caliper engine part fails when the rotor coolant leaks";
    GenerationValidator v(model, {eval_text});
    auto reason = [&](const InstructionExample& e) {
        const auto verdict = v.validate(e);
        return verdict.accepted ? std::string("ok") : to_string(*verdict.reason);
    };
    const InstructionExample good{"Explain brake rotor repair steps.", "", "Replace the caliper and rotor.", {}, {}};
    CHECK(reason(good) == "ok");
    CHECK(reason(good) == to_string(RejectReason::Duplicate));
    CHECK(reason({"Plant garden flowers for dinner recipes.", "", "Water them daily.", {}, {}}) ==
          to_string(RejectReason::Domain));
    CHECK(reason({"Brake?", "", "Engine rotor caliper coolant.", {}, {}}) == to_string(RejectReason::Length));
    CHECK(reason({"Explain the brake engine fault.", "", "Rotor caliper coolant engine brake.", {}, "true/false"}) ==
          to_string(RejectReason::Format));
    CHECK(reason({"Answer this brake engine question now.", eval_text, "The caliper engine rotor.", {}, {}}) ==
          to_string(RejectReason::NearDuplicate));
}

TEST_CASE("mcq task format needs four labels and one declared answer") {
    ValidatorConfig cfg;
    InstructionExample e{"Pick one. A) x B) y C) z D) w", "", "The correct answer is B", {}, cfg.mcq_task};
    CHECK_FALSE(check_task_format(e, cfg));
    e.output = "B";
    CHECK_FALSE(check_task_format(e, cfg));
    e.instruction = "Pick one. A) x B) y C) z";
    CHECK(check_task_format(e, cfg));
}

TEST_CASE("mixing datasets is a seeded shuffle of the union") {
    const std::vector<int> a{1, 2, 3}, b{4, 5};
    const auto m = mix_datasets(a, b, 9);
    CHECK(m == mix_datasets(a, b, 9));
    auto s = m;
    std::sort(s.begin(), s.end());
    CHECK(s == std::vector<int>{1, 2, 3, 4, 5});
}
