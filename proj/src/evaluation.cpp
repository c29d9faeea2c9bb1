#include "dslm/evaluation.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <map>
#include <regex>
#include <set>

namespace dslm {

namespace {

const char kLetters[4] = {'A', 'B', 'C', 'D'};

std::string first_line(std::string_view s) {
    const auto nl = s.find('\n');
    return std::string(nl == std::string_view::npos ? s : s.substr(0, nl));
}

std::string fmt(const char* spec, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, spec, v);
    return buf;
}

std::string mcq_block(const McqItem& item, PromptFormat format) {
    if (format == PromptFormat::Qa) return "Question: " + embed_options(item) + "\nAnswer:";
    std::string out = "Question: " + item.question + "\n";
    for (int k = 0; k < 4; ++k) out += std::string(1, kLetters[k]) + ") " + item.options[k] + "\n";
    return out + "Answer:";
}

}  // namespace

template <class Item>
void validate_fewshot(const std::vector<Item>& shots, const std::vector<Item>& items) {
    if (shots.size() != kFewShotCount) {
        throw ValidationError("few-shot set must hold exactly " + std::to_string(kFewShotCount) + " exemplars, got " +
                              std::to_string(shots.size()));
    }
    std::set<std::string> ids;
    for (const auto& s : shots) ids.insert(s.id);
    for (const auto& it : items) {
        if (ids.count(it.id) != 0) throw ValidationError("few-shot exemplar '" + it.id + "' is also a test item");
    }
}

template void validate_fewshot(const std::vector<McqItem>&, const std::vector<McqItem>&);
template void validate_fewshot(const std::vector<QaItem>&, const std::vector<QaItem>&);

std::string embed_options(const McqItem& item) {
    std::string q = trim(item.question);
    return q + " Is it " + item.options[0] + ", " + item.options[1] + ", " + item.options[2] + ", or " +
           item.options[3] + "?";
}

std::string build_fewshot_prompt(const McqItem& item, const std::vector<McqItem>& shots, PromptFormat format) {
    std::string out;
    for (const auto& s : shots) {
        out += mcq_block(s, format);
        if (format == PromptFormat::Mcq) {
            out += " " + std::string(1, s.answer);
        } else {
            out += " " + s.options[static_cast<std::size_t>(s.answer_index())];
        }
        out += "\n\n";
    }
    return out + mcq_block(item, format);
}

std::string build_fewshot_prompt(const QaItem& item, const std::vector<QaItem>& shots) {
    std::string out;
    for (const auto& s : shots) out += "Question: " + s.question + "\nAnswer: " + s.answer + "\n\n";
    return out + "Question: " + item.question + "\nAnswer:";
}

std::optional<char> extract_choice(std::string_view generated) {
    const std::string line = first_line(generated);
    std::size_t i = 0;
    while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
    if (i < line.size() && line[i] == '(') ++i;
    if (i >= line.size()) return std::nullopt;
    const char c = static_cast<char>(std::toupper(static_cast<unsigned char>(line[i])));
    if (c < 'A' || c > 'D') return std::nullopt;
    if (i + 1 == line.size()) return c;
    const char next = line[i + 1];
    if (next == ')' || next == '.' || next == ':' || std::isspace(static_cast<unsigned char>(next))) return c;
    return std::nullopt;
}

std::string normalize_answer(std::string_view text) {
    std::string cleaned;
    for (char ch : text) {
        const auto u = static_cast<unsigned char>(ch);
        if (u < 128 && std::ispunct(u)) continue;
        cleaned.push_back(static_cast<char>(std::tolower(u)));
    }
    auto words = split_whitespace(cleaned);
    std::size_t start = 0;
    while (start < words.size() && (words[start] == "a" || words[start] == "an" || words[start] == "the")) ++start;
    std::string out;
    for (std::size_t i = start; i < words.size(); ++i) {
        if (!out.empty()) out.push_back(' ');
        out += words[i];
    }
    return out;
}

bool qa_match(std::string_view generated, std::string_view gold) {
    const std::string g = normalize_answer(gold);
    if (g.empty()) return false;
    const std::string hay = " " + normalize_answer(first_line(generated)) + " ";
    return hay.find(" " + g + " ") != std::string::npos;
}

EvalResult eval_mcq(const TextGenerator& gen, const std::vector<McqItem>& items, const std::vector<McqItem>& shots,
                    const DecodeParams& decode, const EvalOptions& opts) {
    validate_fewshot(shots, items);
    std::vector<std::string> outputs(items.size());
    parallel_for(items.size(), opts.workers, [&](std::size_t i) {
        outputs[i] = gen.complete(build_fewshot_prompt(items[i], shots), decode);
    });
    EvalResult res;
    std::array<int, 4> dist{};
    int correct = 0;
    for (std::size_t i = 0; i < items.size(); ++i) {
        const auto choice = extract_choice(outputs[i]);
        const bool ok = choice && *choice == items[i].answer;
        if (choice) ++dist[static_cast<std::size_t>(*choice - 'A')];
        if (ok) ++correct;
        ordered_json a;
        a["id"] = items[i].id;
        a["generated"] = sanitize_utf8(outputs[i]);
        a["extracted"] = choice ? json(std::string(1, *choice)) : json(nullptr);
        a["gold"] = std::string(1, items[i].answer);
        a["correct"] = ok;
        res.audit.push_back(std::move(a));
    }
    auto& r = res.report;
    r.task = TaskKind::Mcq;
    r.model = opts.model_name;
    r.correct = correct;
    r.total = static_cast<int>(items.size());
    r.accuracy = items.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(items.size());
    r.answer_distribution = dist;
    return res;
}

EvalResult eval_qa(const TextGenerator& gen, const std::vector<QaItem>& items, const std::vector<QaItem>& shots,
                   const DecodeParams& decode, const EvalOptions& opts) {
    validate_fewshot(shots, items);
    std::vector<std::string> outputs(items.size());
    parallel_for(items.size(), opts.workers, [&](std::size_t i) {
        outputs[i] = gen.complete(build_fewshot_prompt(items[i], shots), decode);
    });
    EvalResult res;
    int correct = 0;
    for (std::size_t i = 0; i < items.size(); ++i) {
        const bool ok = qa_match(outputs[i], items[i].answer);
        if (ok) ++correct;
        ordered_json a;
        a["id"] = items[i].id;
        a["generated"] = sanitize_utf8(outputs[i]);
        a["normalized_generation"] = sanitize_utf8(normalize_answer(first_line(outputs[i])));
        a["normalized_gold"] = normalize_answer(items[i].answer);
        a["correct"] = ok;
        a["judge"] = "normalized whole-word containment";
        res.audit.push_back(std::move(a));
    }
    auto& r = res.report;
    r.task = TaskKind::Qa;
    r.model = opts.model_name;
    r.correct = correct;
    r.total = static_cast<int>(items.size());
    r.accuracy = items.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(items.size());
    return res;
}

std::vector<std::string> default_exclusion_patterns() {
    return {R"(\bnot\b)", R"(\bexcept\b)", R"(\bneither\b)", "because", "therefore"};
}

CompFilterResult filter_completion_items(const std::vector<McqItem>& items, int max_option_words,
                                         const std::vector<std::string>& exclusion_patterns) {
    if (max_option_words < 1) throw ValidationError("max_option_words must be >= 1");
    std::vector<std::regex> res;
    for (const auto& p : exclusion_patterns) {
        try {
            res.emplace_back(p, std::regex::ECMAScript | std::regex::icase);
        } catch (const std::regex_error& e) {
            throw ValidationError("bad exclusion pattern '" + p + "': " + e.what());
        }
    }
    CompFilterResult out;
    for (const auto& item : items) {
        std::string reason;
        for (int k = 0; k < 4 && reason.empty(); ++k) {
            const auto n = split_whitespace(item.options[k]).size();
            if (n > static_cast<std::size_t>(max_option_words)) {
                reason = "option " + std::string(1, kLetters[k]) + " has " + std::to_string(n) + " words";
            }
        }
        for (std::size_t p = 0; p < res.size() && reason.empty(); ++p) {
            if (std::regex_search(item.question, res[p])) reason = "stem matches '" + exclusion_patterns[p] + "'";
            for (int k = 0; k < 4 && reason.empty(); ++k) {
                if (std::regex_search(item.options[k], res[p])) {
                    reason = "option " + std::string(1, kLetters[k]) + " matches '" + exclusion_patterns[p] + "'";
                }
            }
        }
        if (!reason.empty()) {
            out.excluded.emplace_back(item.id, reason);
            continue;
        }
        CompItem c;
        c.id = item.id;
        c.prefix = trim(item.question);
        for (int k = 0; k < 4; ++k) c.options[k] = " " + trim(item.options[k]);
        c.answer_index = item.answer_index();
        out.items.push_back(std::move(c));
    }
    return out;
}

EvalResult eval_completion(const LanguageModel& model, const std::vector<CompItem>& items, const EvalOptions& opts) {
    struct Scored {
        std::array<double, 4> scores{};
        int predicted = 0;
    };
    std::vector<Scored> scored(items.size());
    parallel_for(items.size(), opts.workers, [&](std::size_t i) {
        const auto& item = items[i];
        std::vector<int> context;
        if (model.bos_id() >= 0) context.push_back(model.bos_id());
        const auto prefix = model.encode(item.prefix);
        context.insert(context.end(), prefix.begin(), prefix.end());
        std::array<std::vector<int>, 4> targets;
        std::size_t longest = 0;
        for (int k = 0; k < 4; ++k) {
            targets[k] = model.encode(item.options[k]);
            if (targets[k].empty()) throw ValidationError("completion item '" + item.id + "' has an empty option");
            longest = std::max(longest, targets[k].size());
        }
        // one shared prefix for every option: trim its oldest tokens (after BOS) if needed
        const auto ctx = static_cast<std::size_t>(model.context_length());
        if (longest > ctx) throw ValidationError("completion item '" + item.id + "' option exceeds the context");
        const std::size_t room = ctx - (longest - 1);
        if (context.size() > room) {
            const std::size_t keep_front = model.bos_id() >= 0 ? 1 : 0;
            if (room <= keep_front) throw ValidationError("completion item '" + item.id + "' leaves no room for a prefix");
            context.erase(context.begin() + static_cast<long>(keep_front),
                          context.begin() + static_cast<long>(context.size() - room + keep_front));
        }
        auto& s = scored[i];
        for (int k = 0; k < 4; ++k) s.scores[k] = sequence_log_prob(model, context, targets[k]);
        for (int k = 1; k < 4; ++k) {
            if (s.scores[k] > s.scores[s.predicted]) s.predicted = k;
        }
    });
    EvalResult res;
    int correct = 0;
    std::array<int, 4> dist{};
    for (std::size_t i = 0; i < items.size(); ++i) {
        const bool ok = scored[i].predicted == items[i].answer_index;
        if (ok) ++correct;
        ++dist[static_cast<std::size_t>(scored[i].predicted)];
        ordered_json a;
        a["id"] = items[i].id;
        a["scores"] = scored[i].scores;
        a["predicted"] = scored[i].predicted;
        a["gold"] = items[i].answer_index;
        a["correct"] = ok;
        res.audit.push_back(std::move(a));
    }
    auto& r = res.report;
    r.task = TaskKind::Completion;
    r.model = opts.model_name;
    r.correct = correct;
    r.total = static_cast<int>(items.size());
    r.accuracy = items.empty() ? 0.0 : static_cast<double>(correct) / static_cast<double>(items.size());
    r.answer_distribution = dist;
    return res;
}

// ---------------------------------------------------------------------------
// lexical and semantic metrics

namespace {

using Ngram = std::vector<std::string>;

std::map<Ngram, int> ngram_counts(const std::vector<std::string>& toks, int n) {
    std::map<Ngram, int> out;
    if (toks.size() < static_cast<std::size_t>(n)) return out;
    for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= toks.size(); ++i) {
        ++out[Ngram(toks.begin() + static_cast<long>(i), toks.begin() + static_cast<long>(i) + n)];
    }
    return out;
}

int clipped_overlap(const std::map<Ngram, int>& cand, const std::map<Ngram, int>& ref) {
    int m = 0;
    for (const auto& [g, c] : cand) {
        auto it = ref.find(g);
        if (it != ref.end()) m += std::min(c, it->second);
    }
    return m;
}

Prf make_prf(double overlap, double n_cand, double n_ref) {
    Prf p;
    if (n_cand <= 0 || n_ref <= 0) return p;
    p.precision = overlap / n_cand;
    p.recall = overlap / n_ref;
    if (p.precision + p.recall > 0) p.f1 = 2 * p.precision * p.recall / (p.precision + p.recall);
    return p;
}

}  // namespace

Prf rouge_n(std::string_view candidate, std::string_view reference, int n) {
    if (n < 1) throw ValidationError("rouge_n: n must be >= 1");
    const auto c = normalized_tokens(candidate);
    const auto r = normalized_tokens(reference);
    const auto cc = ngram_counts(c, n);
    const auto rc = ngram_counts(r, n);
    const auto total = [n](std::size_t len) {
        return len >= static_cast<std::size_t>(n) ? static_cast<double>(len - static_cast<std::size_t>(n) + 1) : 0.0;
    };
    return make_prf(clipped_overlap(cc, rc), total(c.size()), total(r.size()));
}

Prf rouge_l(std::string_view candidate, std::string_view reference) {
    const auto c = normalized_tokens(candidate);
    const auto r = normalized_tokens(reference);
    std::vector<std::size_t> prev(r.size() + 1, 0), cur(r.size() + 1, 0);
    for (std::size_t i = 1; i <= c.size(); ++i) {
        for (std::size_t j = 1; j <= r.size(); ++j) {
            cur[j] = c[i - 1] == r[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
        }
        std::swap(prev, cur);
    }
    return make_prf(static_cast<double>(prev[r.size()]), static_cast<double>(c.size()), static_cast<double>(r.size()));
}

double bleu(std::string_view candidate, std::string_view reference, int max_n) {
    if (max_n < 1) throw ValidationError("bleu: max_n must be >= 1");
    const auto c = normalized_tokens(candidate);
    const auto r = normalized_tokens(reference);
    if (c.empty()) return 0.0;
    double log_sum = 0.0;
    for (int n = 1; n <= max_n; ++n) {
        const double total =
            c.size() >= static_cast<std::size_t>(n) ? static_cast<double>(c.size() - static_cast<std::size_t>(n) + 1) : 0.0;
        const double m = clipped_overlap(ngram_counts(c, n), ngram_counts(r, n));
        const double p = m > 0 ? m / total : 1.0 / (total + 1.0);
        log_sum += std::log(p);
    }
    const double bp = c.size() < r.size() ? std::exp(1.0 - static_cast<double>(r.size()) / static_cast<double>(c.size()))
                                          : 1.0;
    return bp * std::exp(log_sum / max_n);
}

double greedy_match_f1(std::string_view candidate, std::string_view reference, const Embedder& embedder) {
    const auto c = embedder.token_embed(candidate);
    const auto r = embedder.token_embed(reference);
    if (c.empty() || r.empty()) return 0.0;
    std::vector<double> best_c(c.size(), -1.0), best_r(r.size(), -1.0);
    for (std::size_t i = 0; i < c.size(); ++i) {
        for (std::size_t j = 0; j < r.size(); ++j) {
            const double s = cosine_similarity(c[i], r[j]);
            best_c[i] = std::max(best_c[i], s);
            best_r[j] = std::max(best_r[j], s);
        }
    }
    double p = 0.0, rec = 0.0;
    for (double v : best_c) p += v;
    for (double v : best_r) rec += v;
    p /= static_cast<double>(c.size());
    rec /= static_cast<double>(r.size());
    if (p <= 0.0 || rec <= 0.0) return 0.0;
    return std::min(1.0, 2 * p * rec / (p + rec));
}

const std::vector<std::string>& summarization_metrics() {
    static const std::vector<std::string> names = {"rouge1", "rouge2", "rougeL", "bleu", "bertscore_f1", "cosine"};
    return names;
}

std::map<std::string, double> summary_scores(std::string_view candidate, std::string_view reference,
                                             const Embedder& embedder) {
    std::map<std::string, double> s;
    s["rouge1"] = rouge_n(candidate, reference, 1).f1;
    s["rouge2"] = rouge_n(candidate, reference, 2).f1;
    s["rougeL"] = rouge_l(candidate, reference).f1;
    s["bleu"] = bleu(candidate, reference);
    s["bertscore_f1"] = greedy_match_f1(candidate, reference, embedder);
    s["cosine"] = std::clamp(cosine_similarity(embedder.embed(candidate), embedder.embed(reference)), 0.0, 1.0);
    return s;
}

std::string summarization_prompt(const SumItem& item) {
    return "Summarize the following text in two lines, keeping the key technical information.\n\nText:\n" +
           trim(item.source_text) + "\n\nSummary:\n";
}

EvalResult eval_summarization(const TextGenerator& gen, const std::vector<SumItem>& items, const Embedder& embedder,
                              const SumOptions& opts) {
    if (opts.trials < 1) throw ValidationError("summarization: trials must be >= 1");
    if (items.empty()) throw ValidationError("summarization: no items");
    opts.decode.validate();
    // reduction order follows item ids so shuffled inputs give identical numbers
    std::vector<std::size_t> order(items.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return items[a].id < items[b].id; });

    const auto& names = summarization_metrics();
    std::vector<std::map<std::string, double>> trial_means;
    EvalResult res;
    for (int t = 0; t < opts.trials; ++t) {
        const std::uint64_t trial_seed = derive_seed(opts.decode.seed, static_cast<std::uint64_t>(t));
        std::vector<std::string> outputs(items.size());
        std::vector<std::map<std::string, double>> scores(items.size());
        parallel_for(items.size(), opts.workers, [&](std::size_t i) {
            DecodeParams d = opts.decode;
            d.seed = derive_seed(trial_seed, items[i].id);
            outputs[i] = trim(gen.complete(summarization_prompt(items[i]), d));
            scores[i] = summary_scores(outputs[i], items[i].reference_summary, embedder);
        });
        std::map<std::string, double> mean;
        for (const auto& n : names) {
            double s = 0.0;
            for (auto i : order) s += scores[i].at(n);
            mean[n] = s / static_cast<double>(items.size());
        }
        trial_means.push_back(mean);
        for (auto i : order) {
            ordered_json a;
            a["trial"] = t;
            a["id"] = items[i].id;
            a["generated"] = sanitize_utf8(outputs[i]);
            ordered_json sc;
            for (const auto& n : names) sc[n] = scores[i].at(n);
            a["scores"] = sc;
            res.audit.push_back(std::move(a));
        }
    }
    std::map<std::string, MetricStat> stats;
    for (const auto& n : names) {
        double m = 0.0;
        for (const auto& tm : trial_means) m += tm.at(n);
        m /= static_cast<double>(trial_means.size());
        double var = 0.0;
        for (const auto& tm : trial_means) var += (tm.at(n) - m) * (tm.at(n) - m);
        var /= static_cast<double>(trial_means.size());
        stats[n] = {m, std::sqrt(var)};
    }
    auto& r = res.report;
    r.task = TaskKind::Summarization;
    r.model = opts.model_name;
    r.metric_stats = stats;
    return res;
}

// ---------------------------------------------------------------------------
// tables

namespace {

std::string csv_cell(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + "\"";
}

// Display width in code points, so "±" pads like one column.
std::size_t display_width(const std::string& s) {
    std::size_t n = 0;
    for (unsigned char c : s) n += (c & 0xC0) != 0x80;
    return n;
}

}  // namespace

ReportTable render_table(const std::vector<std::string>& header, const std::vector<std::vector<std::string>>& rows) {
    ReportTable t;
    auto csv_row = [&](const std::vector<std::string>& cells) {
        for (std::size_t i = 0; i < cells.size(); ++i) t.csv += (i ? "," : "") + csv_cell(cells[i]);
        t.csv += "\n";
    };
    csv_row(header);
    for (const auto& r : rows) csv_row(r);

    std::vector<std::size_t> w(header.size());
    for (std::size_t i = 0; i < header.size(); ++i) w[i] = display_width(header[i]);
    for (const auto& r : rows) {
        for (std::size_t i = 0; i < r.size(); ++i) w[i] = std::max(w[i], display_width(r[i]));
    }
    auto text_row = [&](const std::vector<std::string>& cells) {
        std::string line;
        for (std::size_t i = 0; i < cells.size(); ++i) {
            if (i) line += "  ";
            const std::string pad(w[i] - display_width(cells[i]), ' ');
            line += i == 0 ? cells[i] + pad : pad + cells[i];
        }
        while (!line.empty() && line.back() == ' ') line.pop_back();
        t.text += line + "\n";
    };
    text_row(header);
    std::size_t total = 0;
    for (auto x : w) total += x;
    t.text += std::string(total + 2 * (w.size() - 1), '-') + "\n";
    for (const auto& r : rows) text_row(r);
    return t;
}

ReportTable report_table(const std::vector<MetricReport>& reports, const std::optional<std::array<int, 4>>& ground_truth) {
    std::vector<const MetricReport*> sorted;
    for (const auto& r : reports) {
        if (!r.accuracy || !r.correct || !r.total) {
            throw ValidationError("report_table: report for '" + r.model + "' has no accuracy");
        }
        sorted.push_back(&r);
    }
    std::stable_sort(sorted.begin(), sorted.end(), [](const MetricReport* a, const MetricReport* b) {
        if (*a->accuracy != *b->accuracy) return *a->accuracy > *b->accuracy;
        return a->model < b->model;
    });
    std::vector<std::vector<std::string>> rows;
    for (const auto* r : sorted) {
        std::vector<std::string> row{r->model, fmt("%.4f", *r->accuracy) + " (" + std::to_string(*r->correct) + "/" +
                                                   std::to_string(*r->total) + ")"};
        for (int k = 0; k < 4; ++k) {
            row.push_back(r->answer_distribution ? std::to_string((*r->answer_distribution)[k]) : "-");
        }
        rows.push_back(std::move(row));
    }
    if (ground_truth) {
        std::vector<std::string> row{"Ground Truth", "-"};
        for (int c : *ground_truth) row.push_back(std::to_string(c));
        rows.push_back(std::move(row));
    }
    return render_table({"Model", "Accuracy (Correct/Total)", "A", "B", "C", "D"}, rows);
}

ReportTable metric_table(const std::vector<MetricReport>& reports) {
    std::vector<std::string> header{"Model"};
    for (const auto& n : summarization_metrics()) header.push_back(n);
    std::vector<std::vector<std::string>> rows;
    for (const auto& r : reports) {
        if (!r.metric_stats) throw ValidationError("metric_table: report for '" + r.model + "' has no metric stats");
        std::vector<std::string> row{r.model};
        for (const auto& n : summarization_metrics()) {
            auto it = r.metric_stats->find(n);
            row.push_back(it == r.metric_stats->end()
                              ? "-"
                              : fmt("%.4f", it->second.mean) + " ± " + fmt("%.4f", it->second.std));
        }
        rows.push_back(std::move(row));
    }
    return render_table(header, rows);
}

std::array<int, 4> gold_distribution(const std::vector<McqItem>& items) {
    std::array<int, 4> d{};
    for (const auto& it : items) ++d[static_cast<std::size_t>(it.answer_index())];
    return d;
}

}  // namespace dslm
