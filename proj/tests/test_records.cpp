#include "doctest.h"
#include "dslm/records.hpp"

using namespace dslm;

TEST_CASE("documents round-trip through JSONL") {
    Document d;
    d.id = "d1";
    d.source = "forum";
    d.text = "Brake pads squeal when cold.";
    d.relevance_label = RelevanceLabel::Relevant;
    d.relevance_prob = 0.9;
    d.stage = Stage::Classified;
    Document e;
    e.id = "d2";
    e.source = "manual";
    e.text = "Torque the lug nuts in a star pattern.";
    const auto text = to_jsonl(std::vector<Document>{d, e});
    const auto back = parse_jsonl<Document>(text);
    REQUIRE(back.size() == 2);
    CHECK(back[0] == d);
    CHECK(back[1] == e);
}

TEST_CASE("benchmark items round-trip") {
    McqItem m{"m1", "Which fluid is hygroscopic?", {"Brake fluid", "Oil", "Coolant", "Fuel"}, 'A', std::nullopt};
    QaItem q{"q1", "What is hygroscopic?", "Brake fluid"};
    SumItem s{"s1", "Long text about brakes.", "Short summary."};
    CHECK(parse_jsonl<McqItem>(to_jsonl(std::vector<McqItem>{m}))[0] == m);
    CHECK(parse_jsonl<QaItem>(to_jsonl(std::vector<QaItem>{q}))[0] == q);
    CHECK(parse_jsonl<SumItem>(to_jsonl(std::vector<SumItem>{s}))[0] == s);
    CHECK(m.answer_index() == 0);
}

TEST_CASE("JSONL errors carry every bad line number") {
    const std::string text =
        "{\"id\":\"a\",\"question\":\"q?\",\"answer\":\"x\"}\n"
        "not json\n"
        "{\"id\":\"a\",\"question\":\"q2?\",\"answer\":\"y\"}\n"
        "{\"id\":\"c\",\"question\":\"q3?\"}\n";
    try {
        parse_jsonl<QaItem>(text, "items.jsonl");
        FAIL("expected a JsonlError");
    } catch (const JsonlError& e) {
        std::vector<std::size_t> lines;
        for (const auto& issue : e.issues()) lines.push_back(issue.line);
        CHECK(lines == std::vector<std::size_t>{2, 3, 4});
        CHECK(std::string(e.what()).find("items.jsonl") != std::string::npos);
    }
}

TEST_CASE("blank lines are ignored") {
    const auto v = parse_jsonl<QaItem>("\n{\"id\":\"a\",\"question\":\"q?\",\"answer\":\"x\"}\n\n");
    CHECK(v.size() == 1);
}

TEST_CASE("MCQ answers must be a single letter A-D") {
    CHECK_THROWS_AS(parse_jsonl<McqItem>(R"({"id":"m","question":"q","options":["a","b","c","d"],"answer":"E"})"),
                    ValidationError);
    CHECK_THROWS_AS(parse_jsonl<McqItem>(R"({"id":"m","question":"q","options":["a","b","c"],"answer":"A"})"),
                    ValidationError);
}

TEST_CASE("completion items need an answer index in range") {
    CompItem c{"c1", "The part is", {" a", " b", " c", " d"}, 2};
    CHECK(parse_jsonl<CompItem>(to_jsonl(std::vector<CompItem>{c}))[0] == c);
    c.answer_index = 4;
    CHECK_THROWS_AS(validate(c), ValidationError);
}

TEST_CASE("stages only move forward") {
    Document d;
    d.id = "x";
    d.text = "t";
    d.advance_to(Stage::Classified);
    d.advance_to(Stage::TopicFiltered);
    CHECK_THROWS_AS(d.advance_to(Stage::Classified), ValidationError);
}

TEST_CASE("metric reports validate their counts") {
    MetricReport r;
    r.task = TaskKind::Mcq;
    r.model = "m";
    r.correct = 397;
    r.total = 876;
    r.accuracy = 397.0 / 876.0;
    r.answer_distribution = std::array<int, 4>{200, 300, 200, 176};
    CHECK_NOTHROW(validate(r));
    r.correct = 900;
    CHECK_THROWS_AS(validate(r), ValidationError);
}

TEST_CASE("instruction examples check topic and task vocabularies") {
    InstructionExample e{"Explain ABS.", "", "ABS prevents wheel lock.", default_topics()[0], default_tasks()[0]};
    CHECK_NOTHROW(validate(e));
    e.task = "not a task";
    CHECK_THROWS_AS(validate(e), ValidationError);
}

TEST_CASE("task kinds parse from their names") {
    for (auto k : {TaskKind::Mcq, TaskKind::Qa, TaskKind::Completion, TaskKind::Summarization}) {
        CHECK(task_kind_from_string(to_string(k)) == k);
    }
    CHECK_THROWS_AS(task_kind_from_string("nope"), ValidationError);
}
