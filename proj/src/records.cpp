#include "dslm/records.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>
#include <unordered_set>

namespace dslm {

std::string to_string(RelevanceLabel label) {
    return label == RelevanceLabel::Relevant ? "relevant" : "irrelevant";
}

std::string to_string(Stage stage) {
    switch (stage) {
        case Stage::Raw: return "raw";
        case Stage::Classified: return "classified";
        case Stage::TopicFiltered: return "topic_filtered";
        case Stage::Augmented: return "augmented";
        case Stage::Deduped: return "deduped";
    }
    return "raw";
}

RelevanceLabel relevance_label_from_string(std::string_view s) {
    if (s == "relevant") return RelevanceLabel::Relevant;
    if (s == "irrelevant") return RelevanceLabel::Irrelevant;
    throw ValidationError("relevance_label must be 'relevant' or 'irrelevant', got '" + std::string(s) + "'");
}

Stage stage_from_string(std::string_view s) {
    for (auto st : {Stage::Raw, Stage::Classified, Stage::TopicFiltered, Stage::Augmented, Stage::Deduped}) {
        if (to_string(st) == s) return st;
    }
    throw ValidationError("unknown stage '" + std::string(s) + "'");
}

void Document::advance_to(Stage next) {
    if (static_cast<int>(next) < static_cast<int>(stage)) {
        throw ValidationError("document '" + id + "': stage cannot move from " + to_string(stage) +
                              " back to " + to_string(next));
    }
    stage = next;
}

std::string to_string(TaskKind kind) {
    switch (kind) {
        case TaskKind::Mcq: return "mcq";
        case TaskKind::Qa: return "qa";
        case TaskKind::Completion: return "comp";
        case TaskKind::Summarization: return "sum";
    }
    return "mcq";
}

TaskKind task_kind_from_string(std::string_view s) {
    if (s == "mcq") return TaskKind::Mcq;
    if (s == "qa") return TaskKind::Qa;
    if (s == "comp") return TaskKind::Completion;
    if (s == "sum") return TaskKind::Summarization;
    throw ValidationError("unknown task '" + std::string(s) + "' (expected mcq|qa|comp|sum)");
}

const std::vector<std::string>& default_topics() {
    static const std::vector<std::string> topics = {
        "Engine Repair",
        "Automatic Transmission/Transaxle",
        "Manual Drive Train and Axles",
        "Suspension & Steering",
        "Brakes",
        "Electrical/Electronic Systems",
        "Heating and Air Conditioning",
        "Engine Performance",
    };
    return topics;
}

const std::vector<std::string>& default_tasks() {
    static const std::vector<std::string> tasks = {
        "extractive QA",
        "multiple-choice QA",
        "question generation",
        "free-form QA",
        "true/false",
        "sentence completion",
        "sentiment",
        "summarization",
        "text generation",
        "topic classification",
    };
    return tasks;
}

namespace {

void require(bool ok, const std::string& message) {
    if (!ok) throw ValidationError(message);
}

void require_nonempty(const std::string& value, const char* field) {
    require(!value.empty(), std::string(field) + " must be nonempty");
}

bool in_set(const std::vector<std::string>& set, const std::string& v) {
    return std::find(set.begin(), set.end(), v) != set.end();
}

}  // namespace

void validate(const Document& d) {
    require_nonempty(d.id, "id");
    require_nonempty(d.text, "text");
    require(d.relevance_label.has_value() == d.relevance_prob.has_value(),
            "relevance_prob must be present iff relevance_label is present");
    if (d.relevance_prob) {
        require(std::isfinite(*d.relevance_prob) && *d.relevance_prob >= 0.0 && *d.relevance_prob <= 1.0,
                "relevance_prob must lie in [0, 1]");
    }
    if (d.topic_scores) {
        for (const auto& [topic, score] : *d.topic_scores) {
            require(std::isfinite(score) && score >= -1.0 && score <= 1.0,
                    "topic_scores['" + topic + "'] must lie in [-1, 1]");
        }
    }
}

void validate(const InstructionExample& e, const std::vector<std::string>& topics,
              const std::vector<std::string>& tasks) {
    require_nonempty(e.instruction, "instruction");
    require_nonempty(e.output, "output");
    if (e.topic) require(in_set(topics, *e.topic), "topic '" + *e.topic + "' is not a configured topic");
    if (e.task) require(in_set(tasks, *e.task), "task '" + *e.task + "' is not a configured task");
}

void validate(const PreferencePair& p) {
    require_nonempty(p.prompt, "prompt");
    require_nonempty(p.chosen, "chosen");
    require_nonempty(p.rejected, "rejected");
    require(p.chosen != p.rejected, "chosen and rejected must differ");
}

void validate(const McqItem& m) {
    require_nonempty(m.id, "id");
    require_nonempty(m.question, "question");
    for (std::size_t i = 0; i < m.options.size(); ++i) {
        require(!m.options[i].empty(), "options[" + std::to_string(i) + "] must be nonempty");
    }
    require(m.answer >= 'A' && m.answer <= 'D', "answer must be one of A, B, C, D");
}

void validate(const QaItem& q) {
    require_nonempty(q.id, "id");
    require_nonempty(q.question, "question");
    require_nonempty(q.answer, "answer");
}

void validate(const CompItem& c) {
    require_nonempty(c.id, "id");
    require_nonempty(c.prefix, "prefix");
    for (std::size_t i = 0; i < c.options.size(); ++i) {
        require(!c.options[i].empty(), "options[" + std::to_string(i) + "] must be nonempty");
    }
    require(c.answer_index >= 0 && c.answer_index <= 3, "answer_index must lie in 0..3");
}

void validate(const SumItem& s) {
    require_nonempty(s.id, "id");
    require_nonempty(s.source_text, "source_text");
    require_nonempty(s.reference_summary, "reference_summary");
}

void validate(const MetricReport& r) {
    if (r.accuracy) require(*r.accuracy >= 0.0 && *r.accuracy <= 1.0, "accuracy must lie in [0, 1]");
    require(r.correct.has_value() == r.total.has_value(), "correct and total must appear together");
    if (r.correct) {
        require(*r.correct >= 0 && *r.total >= 0 && *r.correct <= *r.total, "correct must not exceed total");
    }
    if (r.answer_distribution) {
        require(r.total.has_value(), "answer_distribution requires total");
        int sum = 0;
        for (int c : *r.answer_distribution) {
            require(c >= 0, "answer_distribution counts must be non-negative");
            sum += c;
        }
        require(sum <= *r.total, "answer_distribution counts exceed total");
    }
    if (r.metric_stats) {
        for (const auto& [name, stat] : *r.metric_stats) {
            require(stat.std >= 0.0, "metric_stats['" + name + "'].std must be non-negative");
        }
    }
}

// ---------------------------------------------------------------------------
// JSON conversion

ordered_json to_json(const Document& d) {
    ordered_json j;
    j["id"] = d.id;
    j["source"] = d.source;
    j["text"] = d.text;
    if (d.relevance_label) j["relevance_label"] = to_string(*d.relevance_label);
    if (d.relevance_prob) j["relevance_prob"] = *d.relevance_prob;
    if (d.topic_scores) {
        ordered_json scores = ordered_json::object();
        for (const auto& [k, v] : *d.topic_scores) scores[k] = v;
        j["topic_scores"] = std::move(scores);
    }
    j["stage"] = to_string(d.stage);
    return j;
}

ordered_json to_json(const InstructionExample& e) {
    ordered_json j;
    j["instruction"] = e.instruction;
    j["input"] = e.input;
    j["output"] = e.output;
    if (e.topic) j["topic"] = *e.topic;
    if (e.task) j["task"] = *e.task;
    return j;
}

ordered_json to_json(const PreferencePair& p) {
    ordered_json j;
    j["prompt"] = p.prompt;
    j["chosen"] = p.chosen;
    j["rejected"] = p.rejected;
    return j;
}

ordered_json to_json(const McqItem& m) {
    ordered_json j;
    j["id"] = m.id;
    j["question"] = m.question;
    j["options"] = m.options;
    j["answer"] = std::string(1, m.answer);
    if (m.explanation) j["explanation"] = *m.explanation;
    return j;
}

ordered_json to_json(const QaItem& q) {
    ordered_json j;
    j["id"] = q.id;
    j["question"] = q.question;
    j["answer"] = q.answer;
    return j;
}

ordered_json to_json(const CompItem& c) {
    ordered_json j;
    j["id"] = c.id;
    j["prefix"] = c.prefix;
    j["options"] = c.options;
    j["answer_index"] = c.answer_index;
    return j;
}

ordered_json to_json(const SumItem& s) {
    ordered_json j;
    j["id"] = s.id;
    j["source_text"] = s.source_text;
    j["reference_summary"] = s.reference_summary;
    return j;
}

ordered_json to_json(const MetricReport& r) {
    ordered_json j;
    j["task"] = to_string(r.task);
    j["model"] = r.model;
    if (r.accuracy) j["accuracy"] = *r.accuracy;
    if (r.correct) j["correct"] = *r.correct;
    if (r.total) j["total"] = *r.total;
    if (r.answer_distribution) {
        ordered_json dist;
        for (int i = 0; i < 4; ++i) dist[std::string(1, static_cast<char>('A' + i))] = (*r.answer_distribution)[i];
        j["answer_distribution"] = std::move(dist);
    }
    if (r.metric_stats) {
        ordered_json stats = ordered_json::object();
        for (const auto& [name, s] : *r.metric_stats) stats[name] = {{"mean", s.mean}, {"std", s.std}};
        j["metric_stats"] = std::move(stats);
    }
    return j;
}

namespace {

const json& field(const json& j, const char* name) {
    auto it = j.find(name);
    if (it == j.end()) throw ValidationError(std::string("missing field '") + name + "'");
    return *it;
}

std::string get_string(const json& j, const char* name) {
    const json& v = field(j, name);
    if (!v.is_string()) throw ValidationError(std::string("field '") + name + "' must be a string");
    return v.get<std::string>();
}

std::optional<std::string> get_opt_string(const json& j, const char* name) {
    auto it = j.find(name);
    if (it == j.end() || it->is_null()) return std::nullopt;
    if (!it->is_string()) throw ValidationError(std::string("field '") + name + "' must be a string");
    return it->get<std::string>();
}

double get_number(const json& v, const std::string& name) {
    if (!v.is_number()) throw ValidationError("field '" + name + "' must be a number");
    return v.get<double>();
}

int get_int(const json& j, const char* name) {
    const json& v = field(j, name);
    if (!v.is_number_integer()) throw ValidationError(std::string("field '") + name + "' must be an integer");
    return v.get<int>();
}

std::array<std::string, 4> get_options(const json& j) {
    const json& v = field(j, "options");
    if (!v.is_array()) throw ValidationError("field 'options' must be an array");
    if (v.size() != 4) throw ValidationError("options must be exactly 4");
    std::array<std::string, 4> out;
    for (std::size_t i = 0; i < 4; ++i) {
        if (!v[i].is_string()) throw ValidationError("options must be strings");
        out[i] = v[i].get<std::string>();
    }
    return out;
}

void require_object(const json& j) {
    if (!j.is_object()) throw ValidationError("record must be a JSON object");
}

}  // namespace

template <>
Document record_from_json<Document>(const json& j) {
    require_object(j);
    Document d;
    d.id = get_string(j, "id");
    d.source = get_string(j, "source");
    d.text = get_string(j, "text");
    if (auto s = get_opt_string(j, "relevance_label")) d.relevance_label = relevance_label_from_string(*s);
    if (auto it = j.find("relevance_prob"); it != j.end() && !it->is_null()) {
        d.relevance_prob = get_number(*it, "relevance_prob");
    }
    if (auto it = j.find("topic_scores"); it != j.end() && !it->is_null()) {
        if (!it->is_object()) throw ValidationError("field 'topic_scores' must be an object");
        std::map<std::string, double> scores;
        for (auto kv = it->begin(); kv != it->end(); ++kv) {
            scores[kv.key()] = get_number(kv.value(), "topic_scores." + kv.key());
        }
        d.topic_scores = std::move(scores);
    }
    if (auto s = get_opt_string(j, "stage")) d.stage = stage_from_string(*s);
    validate(d);
    return d;
}

template <>
InstructionExample record_from_json<InstructionExample>(const json& j) {
    require_object(j);
    InstructionExample e;
    e.instruction = get_string(j, "instruction");
    e.input = get_opt_string(j, "input").value_or("");
    e.output = get_string(j, "output");
    e.topic = get_opt_string(j, "topic");
    e.task = get_opt_string(j, "task");
    validate(e);
    return e;
}

template <>
PreferencePair record_from_json<PreferencePair>(const json& j) {
    require_object(j);
    PreferencePair p{get_string(j, "prompt"), get_string(j, "chosen"), get_string(j, "rejected")};
    validate(p);
    return p;
}

template <>
McqItem record_from_json<McqItem>(const json& j) {
    require_object(j);
    McqItem m;
    m.id = get_string(j, "id");
    m.question = get_string(j, "question");
    m.options = get_options(j);
    const std::string answer = get_string(j, "answer");
    if (answer.size() != 1 || answer[0] < 'A' || answer[0] > 'D') {
        throw ValidationError("answer must be exactly one letter A-D");
    }
    m.answer = answer[0];
    m.explanation = get_opt_string(j, "explanation");
    validate(m);
    return m;
}

template <>
QaItem record_from_json<QaItem>(const json& j) {
    require_object(j);
    QaItem q{get_string(j, "id"), get_string(j, "question"), get_string(j, "answer")};
    validate(q);
    return q;
}

template <>
CompItem record_from_json<CompItem>(const json& j) {
    require_object(j);
    CompItem c;
    c.id = get_string(j, "id");
    c.prefix = get_string(j, "prefix");
    c.options = get_options(j);
    c.answer_index = get_int(j, "answer_index");
    validate(c);
    return c;
}

template <>
SumItem record_from_json<SumItem>(const json& j) {
    require_object(j);
    SumItem s{get_string(j, "id"), get_string(j, "source_text"), get_string(j, "reference_summary")};
    validate(s);
    return s;
}

template <>
MetricReport record_from_json<MetricReport>(const json& j) {
    require_object(j);
    MetricReport r;
    r.task = task_kind_from_string(get_string(j, "task"));
    r.model = get_string(j, "model");
    if (auto it = j.find("accuracy"); it != j.end()) r.accuracy = get_number(*it, "accuracy");
    if (j.contains("correct")) r.correct = get_int(j, "correct");
    if (j.contains("total")) r.total = get_int(j, "total");
    if (auto it = j.find("answer_distribution"); it != j.end()) {
        std::array<int, 4> dist{};
        for (int i = 0; i < 4; ++i) {
            const std::string key(1, static_cast<char>('A' + i));
            dist[i] = get_int(*it, key.c_str());
        }
        r.answer_distribution = dist;
    }
    if (auto it = j.find("metric_stats"); it != j.end()) {
        std::map<std::string, MetricStat> stats;
        for (auto kv = it->begin(); kv != it->end(); ++kv) {
            stats[kv.key()] = MetricStat{get_number(field(kv.value(), "mean"), kv.key() + ".mean"),
                                         get_number(field(kv.value(), "std"), kv.key() + ".std")};
        }
        r.metric_stats = std::move(stats);
    }
    validate(r);
    return r;
}

// ---------------------------------------------------------------------------
// JSONL

namespace {

std::string format_issues(const std::string& path, const std::vector<JsonlIssue>& issues) {
    std::ostringstream os;
    os << path << ": " << issues.size() << " invalid record(s)";
    for (const auto& issue : issues) os << "\n  line " << issue.line << ": " << issue.message;
    return os.str();
}

template <class R>
std::optional<std::string> unique_key(const R& r) {
    if constexpr (requires { r.id; }) {
        return r.id;
    } else {
        return std::nullopt;
    }
}

}  // namespace

JsonlError::JsonlError(std::string path, std::vector<JsonlIssue> issues)
    : ValidationError(format_issues(path, issues)), issues_(std::move(issues)) {}

template <class R>
std::vector<R> parse_jsonl(std::string_view contents, const std::string& origin) {
    std::vector<R> out;
    std::vector<JsonlIssue> issues;
    std::unordered_set<std::string> seen;
    std::size_t line_no = 0;
    std::size_t pos = 0;
    while (pos < contents.size()) {
        std::size_t end = contents.find('\n', pos);
        if (end == std::string_view::npos) end = contents.size();
        std::string_view line = contents.substr(pos, end - pos);
        pos = end + 1;
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (trim(line).empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error& e) {
            issues.push_back({line_no, std::string("malformed JSON: ") + e.what()});
            continue;
        }
        try {
            R rec = record_from_json<R>(j);
            if (auto key = unique_key(rec)) {
                if (!seen.insert(*key).second) {
                    issues.push_back({line_no, "duplicate id '" + *key + "'"});
                    continue;
                }
            }
            out.push_back(std::move(rec));
        } catch (const ValidationError& e) {
            issues.push_back({line_no, e.what()});
        } catch (const json::exception& e) {
            issues.push_back({line_no, e.what()});
        }
    }
    if (!issues.empty()) throw JsonlError(origin, std::move(issues));
    return out;
}

template <class R>
std::vector<R> load_jsonl(const std::string& path) {
    return parse_jsonl<R>(read_file(path), path);
}

template <class R>
std::string to_jsonl(const std::vector<R>& records) {
    std::string out;
    for (const auto& r : records) {
        validate(r);
        out += to_json(r).dump();
        out += '\n';
    }
    return out;
}

template <class R>
void write_jsonl(const std::vector<R>& records, const std::string& path) {
    write_file(path, to_jsonl(records));
}

#define DSLM_INSTANTIATE_JSONL(R)                                                        \
    template std::vector<R> parse_jsonl<R>(std::string_view, const std::string&);        \
    template std::vector<R> load_jsonl<R>(const std::string&);                           \
    template std::string to_jsonl<R>(const std::vector<R>&);                             \
    template void write_jsonl<R>(const std::vector<R>&, const std::string&);

DSLM_INSTANTIATE_JSONL(Document)
DSLM_INSTANTIATE_JSONL(InstructionExample)
DSLM_INSTANTIATE_JSONL(PreferencePair)
DSLM_INSTANTIATE_JSONL(McqItem)
DSLM_INSTANTIATE_JSONL(QaItem)
DSLM_INSTANTIATE_JSONL(CompItem)
DSLM_INSTANTIATE_JSONL(SumItem)
DSLM_INSTANTIATE_JSONL(MetricReport)

#undef DSLM_INSTANTIATE_JSONL

std::vector<BenchmarkItem> load_benchmark(const std::string& path, TaskKind kind) {
    std::vector<BenchmarkItem> out;
    auto append = [&](auto&& records) {
        for (auto& r : records) out.emplace_back(std::move(r));
    };
    switch (kind) {
        case TaskKind::Mcq: append(load_jsonl<McqItem>(path)); break;
        case TaskKind::Qa: append(load_jsonl<QaItem>(path)); break;
        case TaskKind::Completion: append(load_jsonl<CompItem>(path)); break;
        case TaskKind::Summarization: append(load_jsonl<SumItem>(path)); break;
    }
    return out;
}

std::string item_id(const BenchmarkItem& item) {
    return std::visit([](const auto& r) { return r.id; }, item);
}

}  // namespace dslm
