#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "dslm/embedder.hpp"
#include "dslm/generation.hpp"
#include "dslm/records.hpp"

namespace dslm {

inline constexpr std::size_t kFewShotCount = 5;

enum class PromptFormat { Mcq, Qa };

/// Throws unless there are exactly five exemplars and none shares an id with
/// the test items.
template <class Item>
void validate_fewshot(const std::vector<Item>& shots, const std::vector<Item>& items);

/// Exemplars are "Question: ...\nA) ...\nB) ...\nC) ...\nD) ...\nAnswer: X"
/// blocks separated by a blank line; the test block ends with "Answer:".
/// In Qa format the options are folded into the question sentence and the
/// exemplar answers are the option texts.
std::string build_fewshot_prompt(const McqItem& item, const std::vector<McqItem>& shots,
                                 PromptFormat format = PromptFormat::Mcq);
std::string build_fewshot_prompt(const QaItem& item, const std::vector<QaItem>& shots);

/// Question sentence with the four options embedded, no letter markers.
std::string embed_options(const McqItem& item);

/// Letter at the start of the first line: optional whitespace, optional "(",
/// A-D in either case, then ")", ".", ":", whitespace or end of line.
std::optional<char> extract_choice(std::string_view generated);

/// Lowercase, ASCII punctuation removed, whitespace collapsed, leading
/// articles (a, an, the) dropped.
std::string normalize_answer(std::string_view text);

/// True when the normalized gold answer occurs as a whole-word run inside the
/// normalized first line of the generation.
bool qa_match(std::string_view generated, std::string_view gold);

struct EvalOptions {
    std::string model_name = "model";
    int workers = 1;
};

/// Report plus one JSON object per item, in item order.
struct EvalResult {
    MetricReport report;
    std::vector<ordered_json> audit;
};

EvalResult eval_mcq(const TextGenerator& gen, const std::vector<McqItem>& items, const std::vector<McqItem>& shots,
                    const DecodeParams& decode, const EvalOptions& opts = {});

EvalResult eval_qa(const TextGenerator& gen, const std::vector<QaItem>& items, const std::vector<QaItem>& shots,
                   const DecodeParams& decode, const EvalOptions& opts = {});

std::vector<std::string> default_exclusion_patterns();

struct CompFilterResult {
    std::vector<CompItem> items;
    std::vector<std::pair<std::string, std::string>> excluded;  // (id, reason)
};

/// Drops items with an option longer than max_option_words words or whose
/// stem or options match any pattern (ECMAScript, case-insensitive). Kept
/// items become completions: prefix = stem, options = " " + option text.
CompFilterResult filter_completion_items(const std::vector<McqItem>& items, int max_option_words = 4,
                                         const std::vector<std::string>& exclusion_patterns = default_exclusion_patterns());

/// Each option scored by the summed log-probability of its tokens after the
/// shared BOS + prefix encoding; the highest score wins, ties to the lower
/// index.
EvalResult eval_completion(const LanguageModel& model, const std::vector<CompItem>& items,
                           const EvalOptions& opts = {});

struct Prf {
    double precision = 0.0;
    double recall = 0.0;
    double f1 = 0.0;
};

Prf rouge_n(std::string_view candidate, std::string_view reference, int n);
Prf rouge_l(std::string_view candidate, std::string_view reference);
/// Single-reference BLEU with add-one smoothing on zero-match orders.
double bleu(std::string_view candidate, std::string_view reference, int max_n = 4);
/// Greedy cosine matching of token vectors (BERTScore-style F1).
double greedy_match_f1(std::string_view candidate, std::string_view reference, const Embedder& embedder);

/// Metric names in report order.
const std::vector<std::string>& summarization_metrics();

/// All six summarization metrics for one candidate.
std::map<std::string, double> summary_scores(std::string_view candidate, std::string_view reference,
                                             const Embedder& embedder);

std::string summarization_prompt(const SumItem& item);

struct SumOptions {
    int trials = 5;
    DecodeParams decode = [] {
        DecodeParams d;
        d.temperature = 0.5;
        d.max_new_tokens = 96;
        d.stop = {"\n\n", "\n###"};
        return d;
    }();
    std::string model_name = "model";
    int workers = 1;
};

/// Trial t samples with seed derive_seed(decode.seed, t), further derived per
/// item id. Per-trial item means are combined into mean and population std.
EvalResult eval_summarization(const TextGenerator& gen, const std::vector<SumItem>& items, const Embedder& embedder,
                              const SumOptions& opts = {});

struct ReportTable {
    std::string csv;
    std::string text;
};

/// CSV plus an aligned text rendering of the same cells; the first column is
/// left-aligned, the rest right-aligned.
ReportTable render_table(const std::vector<std::string>& header, const std::vector<std::vector<std::string>>& rows);

/// Model, Accuracy (Correct/Total), A, B, C, D. Rows by accuracy descending,
/// ties by model name; the ground-truth row, when given, comes last.
ReportTable report_table(const std::vector<MetricReport>& reports,
                         const std::optional<std::array<int, 4>>& ground_truth = std::nullopt);

/// Model plus one "mean ± std" column per metric, rows in input order.
ReportTable metric_table(const std::vector<MetricReport>& reports);

/// Letter counts of the gold answers.
std::array<int, 4> gold_distribution(const std::vector<McqItem>& items);

}  // namespace dslm
