#pragma once

#include <array>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "dslm/common.hpp"
#include "json.hpp"

namespace dslm {

using json = nlohmann::json;
using ordered_json = nlohmann::ordered_json;

enum class RelevanceLabel { Relevant, Irrelevant };

/// Curation stages, in pipeline order. A document only ever moves forward.
enum class Stage { Raw = 0, Classified, TopicFiltered, Augmented, Deduped };

std::string to_string(RelevanceLabel label);
std::string to_string(Stage stage);
RelevanceLabel relevance_label_from_string(std::string_view s);
Stage stage_from_string(std::string_view s);

struct Document {
    std::string id;
    std::string source;
    std::string text;
    std::optional<RelevanceLabel> relevance_label;
    std::optional<double> relevance_prob;
    std::optional<std::map<std::string, double>> topic_scores;
    Stage stage = Stage::Raw;

    /// Throws ValidationError when `next` precedes the current stage.
    void advance_to(Stage next);

    bool operator==(const Document&) const = default;
};

struct InstructionExample {
    std::string instruction;
    std::string input;
    std::string output;
    std::optional<std::string> topic;
    std::optional<std::string> task;

    bool operator==(const InstructionExample&) const = default;
};

struct PreferencePair {
    std::string prompt;
    std::string chosen;
    std::string rejected;

    bool operator==(const PreferencePair&) const = default;
};

struct McqItem {
    std::string id;
    std::string question;
    std::array<std::string, 4> options;
    char answer = 'A';  // 'A'..'D'
    std::optional<std::string> explanation;

    int answer_index() const { return answer - 'A'; }
    bool operator==(const McqItem&) const = default;
};

struct QaItem {
    std::string id;
    std::string question;
    std::string answer;

    bool operator==(const QaItem&) const = default;
};

/// Completion item: `options` hold the continuation text appended to `prefix`.
struct CompItem {
    std::string id;
    std::string prefix;
    std::array<std::string, 4> options;
    int answer_index = 0;

    bool operator==(const CompItem&) const = default;
};

struct SumItem {
    std::string id;
    std::string source_text;
    std::string reference_summary;

    bool operator==(const SumItem&) const = default;
};

using BenchmarkItem = std::variant<McqItem, QaItem, CompItem, SumItem>;

enum class TaskKind { Mcq, Qa, Completion, Summarization };
std::string to_string(TaskKind kind);
TaskKind task_kind_from_string(std::string_view s);

struct MetricStat {
    double mean = 0.0;
    double std = 0.0;
    bool operator==(const MetricStat&) const = default;
};

struct MetricReport {
    TaskKind task = TaskKind::Mcq;
    std::string model;
    std::optional<double> accuracy;
    std::optional<int> correct;
    std::optional<int> total;
    std::optional<std::array<int, 4>> answer_distribution;
    std::optional<std::map<std::string, MetricStat>> metric_stats;

    bool operator==(const MetricReport&) const = default;
};

// The eight topic areas and ten generation tasks used for instruction data.
const std::vector<std::string>& default_topics();
const std::vector<std::string>& default_tasks();

// Per-record validation. Messages name the offending field.
void validate(const Document& d);
void validate(const InstructionExample& e,
              const std::vector<std::string>& topics = default_topics(),
              const std::vector<std::string>& tasks = default_tasks());
void validate(const PreferencePair& p);
void validate(const McqItem& m);
void validate(const QaItem& q);
void validate(const CompItem& c);
void validate(const SumItem& s);
void validate(const MetricReport& r);

ordered_json to_json(const Document& d);
ordered_json to_json(const InstructionExample& e);
ordered_json to_json(const PreferencePair& p);
ordered_json to_json(const McqItem& m);
ordered_json to_json(const QaItem& q);
ordered_json to_json(const CompItem& c);
ordered_json to_json(const SumItem& s);
ordered_json to_json(const MetricReport& r);

template <class R>
R record_from_json(const json& j);

/// One failing line in a JSONL file.
struct JsonlIssue {
    std::size_t line = 0;  // 1-based
    std::string message;
};

class JsonlError : public ValidationError {
public:
    JsonlError(std::string path, std::vector<JsonlIssue> issues);
    const std::vector<JsonlIssue>& issues() const { return issues_; }

private:
    std::vector<JsonlIssue> issues_;
};

/// Parses and validates JSONL text. Records carrying an id must be unique; the
/// first occurrence wins and later ones are reported as issues.
template <class R>
std::vector<R> parse_jsonl(std::string_view contents, const std::string& origin = "<memory>");

template <class R>
std::vector<R> load_jsonl(const std::string& path);

template <class R>
std::string to_jsonl(const std::vector<R>& records);

/// Writes records one object per line, LF endings, fixed field order.
template <class R>
void write_jsonl(const std::vector<R>& records, const std::string& path);

std::vector<BenchmarkItem> load_benchmark(const std::string& path, TaskKind kind);

std::string item_id(const BenchmarkItem& item);

}  // namespace dslm
