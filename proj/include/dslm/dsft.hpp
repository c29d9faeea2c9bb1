#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dslm/logreg.hpp"
#include "dslm/minhash.hpp"
#include "dslm/records.hpp"
#include "dslm/teacher.hpp"

namespace dslm {

/// Three-shot instruction-generation prompt with {TOPIC}, {TASK} and
/// {EXk_INSTR}/{EXk_INPUT}/{EXk_RESP} placeholders.
const std::string& dsft_prompt_template();

std::string render_dsft_prompt(const std::string& topic, const std::string& task,
                               const std::vector<InstructionExample>& exemplars);

/// Parses "Instruction: / Input: / Response:" fields (optionally "### "-prefixed).
/// Input may be missing; Instruction and Response must be present and nonempty.
std::optional<InstructionExample> parse_alpaca_response(std::string_view text);

struct DsftConfig {
    int n = 100;
    std::uint64_t seed = 1;
    double temperature = 0.0;
    int max_tokens = 512;
    RetryPolicy retry;
    int workers = 1;
};

struct DsftRejection {
    std::size_t sample_index = 0;
    std::string topic;
    std::string task;
    std::string reason;
    std::string raw_response;
};

struct DsftResult {
    std::vector<InstructionExample> examples;
    std::vector<DsftRejection> rejections;
};

/// For each sample draws topic and task uniformly from a seeded generator,
/// fills the template with the task's three exemplars and parses the reply.
/// A reply that fails to parse is requested once more, then logged and skipped.
DsftResult dsft_generate(const std::vector<std::string>& topics, const std::vector<std::string>& tasks,
                         const std::map<std::string, std::vector<InstructionExample>>& exemplars,
                         TeacherClient& client, const DsftConfig& cfg);

enum class RejectReason { Domain, Length, Format, Duplicate, NearDuplicate };
std::string to_string(RejectReason r);

struct Verdict {
    bool accepted = true;
    std::optional<RejectReason> reason;
    std::string detail;
};

/// Word-count bounds on generated fields.
struct LengthBounds {
    std::size_t min_instruction_words = 2;
    std::size_t max_instruction_words = 128;
    std::size_t min_output_words = 1;
    std::size_t max_output_words = 512;
};

struct ValidatorConfig {
    LengthBounds bounds;
    double dedup_jaccard = 0.8;  // within the accepted set
    double eval_jaccard = 0.5;   // against evaluation texts
    int num_perm = 128;
    int shingle_n = 3;
    std::uint64_t seed = 1;
    std::string mcq_task = "multiple-choice QA";
    std::string true_false_task = "true/false";
};

/// Quality gates applied in order: domain classifier on instruction+output,
/// length bounds, task format, fuzzy dedup against previously accepted
/// examples, near-duplicate screen against evaluation texts. The first failing
/// gate is reported. Accepted examples join the dedup set.
class GenerationValidator {
public:
    GenerationValidator(const RelevanceModel& domain, const std::vector<std::string>& eval_corpus,
                        ValidatorConfig cfg = {});

    Verdict validate(const InstructionExample& ex);

private:
    const RelevanceModel& domain_;
    ValidatorConfig cfg_;
    MinHasher hasher_;
    std::vector<MinHashSignature> eval_sigs_;
    std::vector<MinHashSignature> accepted_sigs_;
};

/// Task-format rule only; exposed for tests and the CLI audit log.
std::optional<std::string> check_task_format(const InstructionExample& ex, const ValidatorConfig& cfg = {});

/// Single-example form of the validator (empty accepted set).
Verdict validate_generated(const InstructionExample& ex, const RelevanceModel& domain, const LengthBounds& bounds,
                           const std::vector<std::string>& eval_corpus);

/// Seeded Fisher-Yates over the concatenation of both lists.
template <class T>
std::vector<T> mix_datasets(const std::vector<T>& domain, const std::vector<T>& general, std::uint64_t seed) {
    std::vector<T> out;
    out.reserve(domain.size() + general.size());
    out.insert(out.end(), domain.begin(), domain.end());
    out.insert(out.end(), general.begin(), general.end());
    Rng rng(seed);
    fisher_yates_shuffle(out, rng);
    return out;
}

}  // namespace dslm
