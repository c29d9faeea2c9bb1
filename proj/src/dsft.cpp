#include "dslm/dsft.hpp"

#include <regex>
#include <set>

namespace dslm {

const std::string& dsft_prompt_template() {
    static const std::string tmpl =
        "You are an expert automotive content generator. Produce ONE\n"
        "instruction-tuning example in Alpaca format for the topic and task below.\n"
        "\n"
        "Requirements:\n"
        "- Stay strictly within the automotive domain for the specified TOPIC.\n"
        "- Follow the TASK output rules exactly.\n"
        "- Be factual, concise, and technically correct.\n"
        "- Do not copy the examples verbatim. Create a new, distinct case.\n"
        "- Return fields named: Instruction, Input, Response.\n"
        "\n"
        "TOPIC: {TOPIC}\n"
        "TASK:  {TASK}\n"
        "\n"
        "Here are three in-context examples for this TASK:\n"
        "### Instruction: {EX1_INSTR}\n"
        "### Input: {EX1_INPUT}\n"
        "### Response: {EX1_RESP}\n"
        "\n"
        "### Instruction: {EX2_INSTR}\n"
        "### Input: {EX2_INPUT}\n"
        "### Response: {EX2_RESP}\n"
        "\n"
        "### Instruction: {EX3_INSTR}\n"
        "### Input: {EX3_INPUT}\n"
        "### Response: {EX3_RESP}\n"
        "\n"
        "Now generate a NEW example for the same TOPIC and TASK:\n"
        "\n"
        "Return exactly:\n"
        "Instruction: <one sentence task instruction>\n"
        "Input: <short scenario or question>\n"
        "Response: <the correct, task-compliant answer/output>";
    return tmpl;
}

namespace {

void replace_all(std::string& s, const std::string& from, const std::string& to) {
    std::size_t pos = 0;
    while ((pos = s.find(from, pos)) != std::string::npos) {
        s.replace(pos, from.size(), to);
        pos += to.size();
    }
}

// Position just past the first "Label:" that starts a line (after optional "### ").
std::optional<std::pair<std::size_t, std::size_t>> find_label(std::string_view text, std::string_view label,
                                                              std::size_t from) {
    const std::string needle = std::string(label) + ":";
    std::size_t pos = from;
    while ((pos = text.find(needle, pos)) != std::string_view::npos) {
        std::size_t line_start = pos;
        while (line_start > 0 && text[line_start - 1] != '\n') --line_start;
        const std::string prefix = trim(text.substr(line_start, pos - line_start));
        if (prefix.empty() || prefix == "###") return std::make_pair(line_start, pos + needle.size());
        pos += needle.size();
    }
    return std::nullopt;
}

}  // namespace

std::string render_dsft_prompt(const std::string& topic, const std::string& task,
                               const std::vector<InstructionExample>& exemplars) {
    if (exemplars.size() != 3) {
        throw ValidationError("task '" + task + "' needs exactly 3 exemplars, got " + std::to_string(exemplars.size()));
    }
    std::string out = dsft_prompt_template();
    // Exemplar text is substituted before TOPIC/TASK so braces inside it stay literal.
    std::string marker_free = out;
    for (int k = 0; k < 3; ++k) {
        const std::string n = std::to_string(k + 1);
        replace_all(marker_free, "{EX" + n + "_INSTR}", "\x01" + n + "I");
        replace_all(marker_free, "{EX" + n + "_INPUT}", "\x01" + n + "N");
        replace_all(marker_free, "{EX" + n + "_RESP}", "\x01" + n + "R");
    }
    replace_all(marker_free, "{TOPIC}", topic);
    replace_all(marker_free, "{TASK}", task);
    for (int k = 0; k < 3; ++k) {
        const std::string n = std::to_string(k + 1);
        const auto& ex = exemplars[static_cast<std::size_t>(k)];
        replace_all(marker_free, "\x01" + n + "I", ex.instruction);
        replace_all(marker_free, "\x01" + n + "N", ex.input);
        replace_all(marker_free, "\x01" + n + "R", ex.output);
    }
    return marker_free;
}

std::optional<InstructionExample> parse_alpaca_response(std::string_view text) {
    const auto instr = find_label(text, "Instruction", 0);
    if (!instr) return std::nullopt;
    const auto resp = find_label(text, "Response", instr->second);
    if (!resp) return std::nullopt;
    const auto input = find_label(text, "Input", instr->second);
    InstructionExample ex;
    if (input && input->first < resp->first) {
        ex.instruction = trim(text.substr(instr->second, input->first - instr->second));
        ex.input = trim(text.substr(input->second, resp->first - input->second));
    } else {
        ex.instruction = trim(text.substr(instr->second, resp->first - instr->second));
    }
    ex.output = trim(text.substr(resp->second));
    if (ex.instruction.empty() || ex.output.empty()) return std::nullopt;
    return ex;
}

DsftResult dsft_generate(const std::vector<std::string>& topics, const std::vector<std::string>& tasks,
                         const std::map<std::string, std::vector<InstructionExample>>& exemplars,
                         TeacherClient& client, const DsftConfig& cfg) {
    if (topics.empty() || tasks.empty()) throw ValidationError("dsft_generate: topics and tasks must be nonempty");
    if (cfg.n < 0) throw ValidationError("dsft_generate: n must be non-negative");
    for (const auto& task : tasks) {
        auto it = exemplars.find(task);
        if (it == exemplars.end() || it->second.size() != 3) {
            throw ValidationError("task '" + task + "' needs exactly 3 exemplars");
        }
    }
    // Draw every (topic, task) up front so results do not depend on worker scheduling.
    Rng rng(cfg.seed);
    std::vector<std::pair<std::size_t, std::size_t>> draws(static_cast<std::size_t>(cfg.n));
    for (auto& d : draws) {
        d.first = static_cast<std::size_t>(uniform_index(rng, topics.size()));
        d.second = static_cast<std::size_t>(uniform_index(rng, tasks.size()));
    }

    struct Outcome {
        std::optional<InstructionExample> example;
        std::string raw;
    };
    std::vector<Outcome> outcomes(draws.size());
    parallel_for(draws.size(), cfg.workers, [&](std::size_t i) {
        const auto& topic = topics[draws[i].first];
        const auto& task = tasks[draws[i].second];
        TeacherRequest req{"", render_dsft_prompt(topic, task, exemplars.at(task)), cfg.temperature, cfg.max_tokens};
        for (int attempt = 0; attempt < 2; ++attempt) {
            outcomes[i].raw = complete_with_retry(client, req, cfg.retry);
            if (auto ex = parse_alpaca_response(outcomes[i].raw)) {
                ex->topic = topic;
                ex->task = task;
                outcomes[i].example = std::move(ex);
                return;
            }
        }
    });

    DsftResult result;
    for (std::size_t i = 0; i < draws.size(); ++i) {
        if (outcomes[i].example) {
            result.examples.push_back(std::move(*outcomes[i].example));
        } else {
            result.rejections.push_back({i, topics[draws[i].first], tasks[draws[i].second], "parse", outcomes[i].raw});
        }
    }
    return result;
}

std::string to_string(RejectReason r) {
    switch (r) {
        case RejectReason::Domain: return "domain";
        case RejectReason::Length: return "length";
        case RejectReason::Format: return "format";
        case RejectReason::Duplicate: return "duplicate";
        case RejectReason::NearDuplicate: return "near-duplicate";
    }
    return "unknown";
}

std::optional<std::string> check_task_format(const InstructionExample& ex, const ValidatorConfig& cfg) {
    if (ex.task && *ex.task == cfg.mcq_task) {
        const std::string all = ex.instruction + "\n" + ex.input + "\n" + ex.output;
        for (char letter : {'A', 'B', 'C', 'D'}) {
            const std::regex marker(std::string("(^|[\\s(])") + letter + "[).:]");
            if (!std::regex_search(all, marker)) return std::string("missing choice label ") + letter;
        }
        std::set<char> declared;
        const std::regex answer_decl(R"((?:correct answer|answer)\s*(?:is|:)\s*\(?([A-Da-d])\b)", std::regex::icase);
        for (auto it = std::sregex_iterator(ex.output.begin(), ex.output.end(), answer_decl);
             it != std::sregex_iterator(); ++it) {
            declared.insert(static_cast<char>(std::toupper(static_cast<unsigned char>((*it)[1].str()[0]))));
        }
        if (declared.empty()) {
            const std::regex leading(R"(^\s*\(?([A-D])(?:[).:]|\s|$))");
            std::smatch m;
            if (std::regex_search(ex.output, m, leading)) declared.insert(m[1].str()[0]);
        }
        if (declared.size() != 1) {
            return "expected exactly one correct choice, found " + std::to_string(declared.size());
        }
    }
    if (ex.task && *ex.task == cfg.true_false_task) {
        const auto words = normalized_tokens(ex.output);
        if (words.empty() || (words.front() != "true" && words.front() != "false")) {
            return std::string("true/false output must start with True or False");
        }
    }
    return std::nullopt;
}

GenerationValidator::GenerationValidator(const RelevanceModel& domain, const std::vector<std::string>& eval_corpus,
                                         ValidatorConfig cfg)
    : domain_(domain), cfg_(std::move(cfg)), hasher_(cfg_.num_perm, cfg_.shingle_n, cfg_.seed) {
    for (const auto& t : eval_corpus) {
        if (!trim(t).empty()) eval_sigs_.push_back(hasher_.signature(t));
    }
}

Verdict GenerationValidator::validate(const InstructionExample& ex) {
    auto reject = [](RejectReason r, std::string detail) { return Verdict{false, r, std::move(detail)}; };

    const auto pred = domain_.predict(ex.instruction + "\n" + ex.output);
    if (pred.label != RelevanceLabel::Relevant) {
        return reject(RejectReason::Domain, "domain probability " + std::to_string(pred.prob));
    }

    const auto& b = cfg_.bounds;
    const auto iw = split_whitespace(ex.instruction).size();
    const auto ow = split_whitespace(ex.output).size();
    if (iw < b.min_instruction_words || iw > b.max_instruction_words) {
        return reject(RejectReason::Length, "instruction has " + std::to_string(iw) + " words");
    }
    if (ow < b.min_output_words || ow > b.max_output_words) {
        return reject(RejectReason::Length, "output has " + std::to_string(ow) + " words");
    }

    if (auto problem = check_task_format(ex, cfg_)) return reject(RejectReason::Format, *problem);

    const std::string full = ex.instruction + "\n" + ex.input + "\n" + ex.output;
    const auto sig = hasher_.signature(full);
    for (const auto& prev : accepted_sigs_) {
        const double s = sig.similarity(prev);
        if (s >= cfg_.dedup_jaccard) return reject(RejectReason::Duplicate, "estimated Jaccard " + std::to_string(s));
    }

    std::vector<MinHashSignature> field_sigs{sig};
    for (const auto* f : {&ex.instruction, &ex.input, &ex.output}) {
        if (!trim(*f).empty()) field_sigs.push_back(hasher_.signature(*f));
    }
    for (const auto& e : eval_sigs_) {
        for (const auto& fs : field_sigs) {
            const double s = fs.similarity(e);
            if (s >= cfg_.eval_jaccard) {
                return reject(RejectReason::NearDuplicate, "estimated Jaccard vs eval text " + std::to_string(s));
            }
        }
    }

    accepted_sigs_.push_back(sig);
    return Verdict{};
}

Verdict validate_generated(const InstructionExample& ex, const RelevanceModel& domain, const LengthBounds& bounds,
                           const std::vector<std::string>& eval_corpus) {
    ValidatorConfig cfg;
    cfg.bounds = bounds;
    GenerationValidator v(domain, eval_corpus, cfg);
    return v.validate(ex);
}

}  // namespace dslm
