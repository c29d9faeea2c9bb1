// dslm: command-line front end for curation, training, evaluation and the
// ablation grid. Exit codes: 0 success, 1 invalid input, 2 runtime failure.

#include <filesystem>
#include <iostream>
#include <memory>

#include "CLI11.hpp"
#include "dslm/augment.hpp"
#include "dslm/contamination.hpp"
#include "dslm/dsft.hpp"
#include "dslm/logreg.hpp"
#include "dslm/pipeline.hpp"
#include "dslm/topic_filter.hpp"

namespace fs = std::filesystem;
using namespace dslm;

namespace {

struct Globals {
    std::string config;
    std::vector<std::string> set;
    int workers = 0;
    long long seed = -1;
    std::string replay;
    std::string teacher_url;
    std::string record;
    std::string report_dir;
};

PipelineConfig load_config(const Globals& g) {
    std::vector<std::string> overrides = g.set;
    if (g.workers > 0) overrides.push_back("workers=" + std::to_string(g.workers));
    if (g.seed >= 0) overrides.push_back("seed=" + std::to_string(g.seed));
    if (g.config.empty()) {
        json j = json::object();
        apply_overrides(j, overrides);
        return PipelineConfig::from_json(j);
    }
    return PipelineConfig::load(g.config, overrides);
}

std::vector<std::string> config_inputs(const Globals& g) {
    return g.config.empty() ? std::vector<std::string>{} : std::vector<std::string>{g.config};
}

std::string parent_dir(const std::string& path) {
    const auto p = fs::path(path).parent_path();
    return p.empty() ? std::string(".") : p.string();
}

void ensure_parent(const std::string& path) {
    const auto p = fs::path(path).parent_path();
    if (!p.empty()) fs::create_directories(p);
}

void write_manifest(const std::string& command, const PipelineConfig& cfg, std::vector<std::string> inputs,
                    std::vector<std::string> outputs, const std::string& primary_out,
                    ordered_json extra = ordered_json::object()) {
    Manifest m;
    m.command = command;
    m.config = cfg.to_json();
    m.seed = cfg.seed;
    m.inputs = std::move(inputs);
    m.outputs = std::move(outputs);
    m.extra = std::move(extra);
    m.write(primary_out + ".manifest.json", parent_dir(primary_out));
}

void write_audit(const std::string& dir, const std::string& name, const std::vector<ordered_json>& rows) {
    if (dir.empty()) return;
    fs::create_directories(dir);
    std::string out;
    for (const auto& r : rows) out += r.dump() + "\n";
    write_file(dir + "/" + name, out);
}

std::unique_ptr<TeacherClient> make_teacher(const Globals& g) {
    if (!g.replay.empty()) return std::make_unique<ReplayTeacherClient>(ReplayCache::load(g.replay));
    if (!g.teacher_url.empty()) return std::make_unique<HttpTeacherClient>(g.teacher_url);
    throw ValidationError("a teacher is required: pass --replay <cache> or --teacher-url <url>");
}

// Teacher wrapper that records live responses when --record is given.
struct TeacherSession {
    std::unique_ptr<TeacherClient> base;
    std::unique_ptr<RecordingTeacherClient> recorder;
    TeacherClient& client() { return recorder ? static_cast<TeacherClient&>(*recorder) : *base; }
    void finish(const Globals& g) {
        if (recorder && !g.record.empty()) recorder->cache().save(g.record);
    }
};

TeacherSession open_teacher(const Globals& g) {
    TeacherSession s;
    s.base = make_teacher(g);
    if (!g.record.empty() && g.replay.empty()) s.recorder = std::make_unique<RecordingTeacherClient>(*s.base);
    return s;
}

std::vector<std::string> benchmark_texts(const std::string& path, const std::string& kind) {
    std::vector<std::string> out;
    for (const auto& item : load_benchmark(path, task_kind_from_string(kind))) {
        std::visit(
            [&](const auto& it) {
                using T = std::decay_t<decltype(it)>;
                if constexpr (std::is_same_v<T, McqItem>) {
                    std::string t = it.question;
                    for (const auto& o : it.options) t += " " + o;
                    out.push_back(t);
                } else if constexpr (std::is_same_v<T, QaItem>) {
                    out.push_back(it.question + " " + it.answer);
                } else if constexpr (std::is_same_v<T, CompItem>) {
                    for (const auto& o : it.options) out.push_back(it.prefix + o);
                } else {
                    out.push_back(it.source_text);
                    out.push_back(it.reference_summary);
                }
            },
            item);
    }
    return out;
}

std::string report_json(const EvalResult& r) { return to_json(r.report).dump(2) + "\n"; }

// ---------------------------------------------------------------------------

int cmd_classify(const Globals& g, const std::string& labeled, const std::string& input, const std::string& out,
                 const std::string& model_out) {
    const auto cfg = load_config(g);
    const auto train = load_jsonl<Document>(labeled);
    const auto docs = load_jsonl<Document>(input);
    const RelevanceModel model = train_relevance_model(train, cfg.curation.C);
    const auto classified = classify_documents(model, docs, cfg.workers);
    ensure_parent(out);
    write_jsonl(classified, out);
    std::vector<std::string> outputs{out};
    if (!model_out.empty()) {
        write_file(model_out, model.to_json().dump(2) + "\n");
        outputs.push_back(model_out);
    }
    std::size_t relevant = 0;
    for (const auto& d : classified) relevant += d.relevance_label == RelevanceLabel::Relevant;
    auto inputs = config_inputs(g);
    inputs.push_back(labeled);
    inputs.push_back(input);
    write_manifest("curate classify", cfg, inputs, outputs, out, {{"relevant", relevant}, {"total", classified.size()}});
    std::cout << "classified " << classified.size() << " documents, " << relevant << " relevant\n";
    return 0;
}

int cmd_topic_filter(const Globals& g, const std::string& input, const std::string& topics_path,
                     const std::string& out) {
    const auto cfg = load_config(g);
    const auto docs = load_jsonl<Document>(input);
    const auto topic_docs = load_jsonl<Document>(topics_path);
    std::vector<Document> relevant, irrelevant;
    for (const auto& d : docs) {
        if (!d.relevance_label) throw ValidationError("document '" + d.id + "' has not been classified");
        (*d.relevance_label == RelevanceLabel::Relevant ? relevant : irrelevant).push_back(d);
    }
    std::vector<std::string> fit_texts;
    for (const auto& d : docs) fit_texts.push_back(d.text);
    for (const auto& d : topic_docs) fit_texts.push_back(d.text);
    const TfidfEmbedder embedder(TfidfVectorizer::fit(fit_texts));
    const auto topics = embed_topics(topic_docs, embedder);
    const auto kept = topic_filter(relevant, topics, embedder, cfg.curation.topic_threshold, cfg.workers);
    const auto recovered =
        recover_false_negatives(irrelevant, topics, embedder, cfg.curation.recover_fraction, cfg.workers);
    const auto merged = merge_by_id(kept, recovered);
    ensure_parent(out);
    write_jsonl(merged, out);
    auto inputs = config_inputs(g);
    inputs.push_back(input);
    inputs.push_back(topics_path);
    write_manifest("curate topic-filter", cfg, inputs, {out}, out,
                   {{"kept", kept.size()}, {"recovered", recovered.size()}, {"output", merged.size()}});
    std::cout << "kept " << kept.size() << ", recovered " << recovered.size() << ", wrote " << merged.size() << "\n";
    return 0;
}

int cmd_dedup(const Globals& g, const std::string& input, const std::string& out) {
    const auto cfg = load_config(g);
    const auto docs = load_jsonl<Document>(input);
    const auto res = dedup_corpus(docs, cfg.curation.dedup);
    ensure_parent(out);
    write_jsonl(res.kept, out);
    std::vector<ordered_json> audit;
    for (const auto& d : res.dropped) {
        audit.push_back({{"dropped", d.dropped_id}, {"kept", d.kept_id}, {"estimate", d.estimate}});
    }
    write_audit(g.report_dir, "dedup.jsonl", audit);
    auto inputs = config_inputs(g);
    inputs.push_back(input);
    write_manifest("curate dedup", cfg, inputs, {out}, out, {{"kept", res.kept.size()}, {"dropped", res.dropped.size()}});
    std::cout << "kept " << res.kept.size() << ", dropped " << res.dropped.size() << "\n";
    return 0;
}

int cmd_augment(const Globals& g, const std::string& input, const std::string& out) {
    const auto cfg = load_config(g);
    const auto docs = load_jsonl<Document>(input);
    auto teacher = open_teacher(g);
    AugmentConfig ac;
    ac.max_units = cfg.curation.chunk_units;
    const auto res = augment_corpus(docs, teacher.client(), whitespace_word_counter(), ac, cfg.workers);
    teacher.finish(g);
    ensure_parent(out);
    write_jsonl(res.augmented, out);
    auto inputs = config_inputs(g);
    inputs.push_back(input);
    if (!g.replay.empty()) inputs.push_back(g.replay);
    write_manifest("curate augment", cfg, inputs, {out}, out,
                   {{"augmented", res.augmented.size()}, {"dropped", res.dropped_ids}});
    std::cout << "augmented " << res.augmented.size() << ", dropped " << res.dropped_ids.size() << "\n";
    return 0;
}

int cmd_gen_dsft(const Globals& g, const std::string& exemplars_path, const std::string& out, int n) {
    const auto cfg = load_config(g);
    std::map<std::string, std::vector<InstructionExample>> exemplars;
    for (const auto& e : load_jsonl<InstructionExample>(exemplars_path)) {
        if (!e.task) throw ValidationError("exemplar without a task field in '" + exemplars_path + "'");
        exemplars[*e.task].push_back(e);
    }
    std::vector<std::string> tasks;
    for (const auto& [t, v] : exemplars) tasks.push_back(t);
    auto teacher = open_teacher(g);
    DsftConfig dc;
    dc.n = n > 0 ? n : cfg.curation.dsft_samples;
    dc.seed = cfg.seed;
    dc.workers = cfg.workers;
    const auto res = dsft_generate(default_topics(), tasks, exemplars, teacher.client(), dc);
    teacher.finish(g);
    ensure_parent(out);
    write_jsonl(res.examples, out);
    std::vector<ordered_json> audit;
    for (const auto& r : res.rejections) {
        audit.push_back({{"sample", r.sample_index},
                         {"topic", r.topic},
                         {"task", r.task},
                         {"reason", r.reason},
                         {"raw_response", r.raw_response}});
    }
    write_audit(g.report_dir, "gen-dsft-rejections.jsonl", audit);
    auto inputs = config_inputs(g);
    inputs.push_back(exemplars_path);
    if (!g.replay.empty()) inputs.push_back(g.replay);
    write_manifest("curate gen-dsft", cfg, inputs, {out}, out,
                   {{"generated", res.examples.size()}, {"rejected", res.rejections.size()}});
    std::cout << "generated " << res.examples.size() << ", rejected " << res.rejections.size() << "\n";
    return 0;
}

int cmd_screen(const Globals& g, const std::string& input, const std::string& kind, const std::string& eval_path,
               const std::string& eval_kind, const std::string& relevance, const std::string& out) {
    const auto cfg = load_config(g);
    const auto eval_texts = benchmark_texts(eval_path, eval_kind);
    auto inputs = config_inputs(g);
    inputs.push_back(input);
    inputs.push_back(eval_path);
    ensure_parent(out);
    if (kind == "docs") {
        const auto docs = load_jsonl<Document>(input);
        std::vector<std::string> texts;
        for (const auto& d : docs) texts.push_back(d.text);
        ContaminationConfig cc;
        cc.seed = cfg.seed;
        cc.workers = cfg.workers;
        const auto flagged = contamination_screen(texts, eval_texts, cfg.curation.contamination_threshold, cc);
        std::vector<bool> bad(docs.size(), false);
        std::vector<ordered_json> audit;
        for (auto i : flagged) {
            bad[i] = true;
            audit.push_back({{"id", docs[i].id}, {"reason", "overlaps evaluation data"}});
        }
        std::vector<Document> clean;
        for (std::size_t i = 0; i < docs.size(); ++i) {
            if (!bad[i]) clean.push_back(docs[i]);
        }
        write_jsonl(clean, out);
        write_audit(g.report_dir, "screen.jsonl", audit);
        write_manifest("curate screen", cfg, inputs, {out}, out, {{"kept", clean.size()}, {"flagged", flagged.size()}});
        std::cout << "kept " << clean.size() << ", flagged " << flagged.size() << "\n";
        return 0;
    }
    if (kind != "dsft") throw ValidationError("--kind must be docs or dsft");
    if (relevance.empty()) throw ValidationError("--relevance <model.json> is required for --kind dsft");
    inputs.push_back(relevance);
    const RelevanceModel model = RelevanceModel::from_json(json::parse(read_file(relevance)));
    const auto examples = load_jsonl<InstructionExample>(input);
    ValidatorConfig vc;
    vc.seed = cfg.seed;
    GenerationValidator validator(model, eval_texts, vc);
    std::vector<InstructionExample> accepted;
    std::vector<ordered_json> audit;
    for (std::size_t i = 0; i < examples.size(); ++i) {
        const Verdict v = validator.validate(examples[i]);
        if (v.accepted) {
            accepted.push_back(examples[i]);
        } else {
            audit.push_back({{"index", i}, {"reason", to_string(*v.reason)}, {"detail", v.detail}});
        }
    }
    write_jsonl(accepted, out);
    write_audit(g.report_dir, "screen.jsonl", audit);
    write_manifest("curate screen", cfg, inputs, {out}, out,
                   {{"accepted", accepted.size()}, {"rejected", examples.size() - accepted.size()}});
    std::cout << "accepted " << accepted.size() << ", rejected " << examples.size() - accepted.size() << "\n";
    return 0;
}

std::vector<std::string> corpus_texts(const std::string& path) {
    // documents, instruction examples and preference pairs all feed the tokenizer
    const std::string raw = read_file(path);
    std::vector<std::string> texts;
    std::size_t line_no = 0, start = 0;
    while (start < raw.size()) {
        auto nl = raw.find('\n', start);
        if (nl == std::string::npos) nl = raw.size();
        const std::string line = raw.substr(start, nl - start);
        start = nl + 1;
        ++line_no;
        if (trim(line).empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error& e) {
            throw ValidationError(path + ":" + std::to_string(line_no) + ": " + e.what());
        }
        if (j.contains("text")) {
            texts.push_back(j["text"].get<std::string>());
        } else if (j.contains("instruction")) {
            texts.push_back(instruction_prompt(j["instruction"].get<std::string>(), j.value("input", "")) +
                            j.value("output", ""));
        } else if (j.contains("chosen")) {
            texts.push_back(instruction_prompt(j["prompt"].get<std::string>(), "") + j["chosen"].get<std::string>());
        } else {
            throw ValidationError(path + ":" + std::to_string(line_no) + ": no text, instruction or chosen field");
        }
    }
    return texts;
}

int cmd_tokenizer_train(const Globals& g, const std::vector<std::string>& inputs_in, const std::string& out) {
    const auto cfg = load_config(g);
    std::vector<std::string> texts;
    for (const auto& p : inputs_in) {
        auto t = corpus_texts(p);
        texts.insert(texts.end(), t.begin(), t.end());
    }
    const Tokenizer tok = Tokenizer::train(texts, cfg.vocab_size, cfg.seed);
    ensure_parent(out);
    tok.save(out);
    auto inputs = config_inputs(g);
    inputs.insert(inputs.end(), inputs_in.begin(), inputs_in.end());
    write_manifest("tokenizer train", cfg, inputs, {out}, out, {{"vocab_size", tok.vocab_size()}});
    std::cout << "trained tokenizer with " << tok.vocab_size() << " tokens\n";
    return 0;
}

int cmd_train(const Globals& g, StageKind kind, const std::string& data, const std::string& tok_path,
              const std::string& init, const std::string& out, const std::string& ckpt_dir, int ckpt_every,
              const std::string& resume) {
    const auto cfg = load_config(g);
    const Tokenizer tok = Tokenizer::load(tok_path);
    Checkpoint start;
    if (init.empty()) {
        start.params = init_model<float>(cfg.model, cfg.seed);
    } else {
        start = load_checkpoint(init, &cfg.model);
    }
    StageData sd;
    switch (kind) {
        case StageKind::Dapt: {
            std::vector<std::string> texts;
            for (const auto& d : load_jsonl<Document>(data)) texts.push_back(d.text);
            sd = texts;
            break;
        }
        case StageKind::Dsft: sd = load_jsonl<InstructionExample>(data); break;
        case StageKind::Dpo: sd = load_jsonl<PreferencePair>(data); break;
    }
    TrainOptions opts;
    opts.checkpoint_dir = ckpt_dir;
    opts.checkpoint_every = ckpt_every;
    if (!resume.empty()) opts.resume_from = resume;
    const TrainResult tr = train_stage(tok, start, sd, cfg.stage(kind), opts);
    ensure_parent(out);
    save_checkpoint(tr.checkpoint, out);
    const std::string log = out + ".log.csv";
    write_file(log, training_log_csv(tr.log));
    std::vector<ordered_json> skipped;
    for (const auto& s : tr.skipped) skipped.push_back({{"index", s.index}, {"reason", s.reason}});
    write_audit(g.report_dir, to_string(kind) + "-skipped.jsonl", skipped);
    auto inputs = config_inputs(g);
    inputs.push_back(data);
    inputs.push_back(tok_path);
    if (!init.empty()) inputs.push_back(init);
    write_manifest("train " + to_string(kind), cfg, inputs, {out, log}, out,
                   {{"train_examples", tr.train_examples},
                    {"val_examples", tr.val_examples},
                    {"skipped", tr.skipped.size()},
                    {"steps", tr.checkpoint.step}});
    const auto& last = tr.log.back();
    std::cout << to_string(kind) << ": " << tr.checkpoint.step << " steps, " << tr.train_examples << " train / "
              << tr.val_examples << " val examples";
    if (last.val_loss) std::cout << ", final val loss " << *last.val_loss;
    std::cout << "\n";
    return 0;
}

int cmd_eval(const Globals& g, const std::string& task, const std::string& model_path, const std::string& tok_path,
             bool oracle, const std::string& items_path, const std::string& shots_path, const std::string& name,
             const std::string& out, bool from_mcq, const std::string& embedder_url, int embedder_dim) {
    const auto cfg = load_config(g);
    std::unique_ptr<TransformerLM> lm;
    if (!oracle) {
        if (model_path.empty() || tok_path.empty()) {
            throw ValidationError("eval needs --model and --tokenizer (or --oracle)");
        }
        lm = std::make_unique<TransformerLM>(TransformerLM::from_checkpoint(Tokenizer::load(tok_path),
                                                                            load_checkpoint(model_path)));
    }
    const std::string model_name = name.empty() ? (oracle ? "oracle" : fs::path(model_path).stem().string()) : name;
    DecodeParams decode;
    decode.max_new_tokens = cfg.eval.max_new_tokens;
    decode.seed = cfg.seed;
    EvalOptions eo{model_name, cfg.workers};
    auto inputs = config_inputs(g);
    inputs.push_back(items_path);
    if (!shots_path.empty()) inputs.push_back(shots_path);
    if (!oracle) {
        inputs.push_back(model_path);
        inputs.push_back(tok_path);
    }
    EvalResult res;
    if (task == "mcq" || task == "qa") {
        if (shots_path.empty()) throw ValidationError("eval " + task + " needs --shots");
        if (task == "mcq") {
            const auto items = load_jsonl<McqItem>(items_path);
            const auto shots = load_jsonl<McqItem>(shots_path);
            std::map<std::string, std::string> replies;
            for (const auto& it : items) replies[build_fewshot_prompt(it, shots)] = std::string(" ") + it.answer;
            const MapTextGenerator og(replies);
            const LmTextGenerator lg(*lm.get());
            const TextGenerator& gen = oracle ? static_cast<const TextGenerator&>(og) : lg;
            res = eval_mcq(gen, items, shots, decode, eo);
        } else {
            const auto items = load_jsonl<QaItem>(items_path);
            const auto shots = load_jsonl<QaItem>(shots_path);
            std::map<std::string, std::string> replies;
            for (const auto& it : items) replies[build_fewshot_prompt(it, shots)] = " " + it.answer;
            const MapTextGenerator og(replies);
            const LmTextGenerator lg(*lm.get());
            const TextGenerator& gen = oracle ? static_cast<const TextGenerator&>(og) : lg;
            res = eval_qa(gen, items, shots, decode, eo);
        }
    } else if (task == "comp") {
        if (oracle) throw ValidationError("eval comp scores log-likelihoods and has no text oracle");
        std::vector<CompItem> items;
        if (from_mcq) {
            const auto f = filter_completion_items(load_jsonl<McqItem>(items_path), cfg.eval.max_option_words,
                                                   cfg.eval.exclusion_patterns);
            items = f.items;
            std::vector<ordered_json> excluded;
            for (const auto& [id, why] : f.excluded) excluded.push_back({{"id", id}, {"reason", why}});
            write_audit(g.report_dir, "comp-filter.jsonl", excluded);
        } else {
            items = load_jsonl<CompItem>(items_path);
        }
        res = eval_completion(*lm, items, eo);
    } else if (task == "sum") {
        const auto items = load_jsonl<SumItem>(items_path);
        std::unique_ptr<Embedder> emb;
        if (embedder_url.empty()) {
            emb = std::make_unique<HashingEmbedder>();
        } else {
            emb = std::make_unique<HttpEmbedder>(embedder_url, "/embed", static_cast<std::size_t>(embedder_dim));
        }
        SumOptions so;
        so.trials = cfg.eval.trials;
        so.decode.temperature = cfg.eval.sum_temperature;
        so.decode.max_new_tokens = cfg.eval.sum_max_new_tokens;
        so.decode.seed = cfg.seed;
        so.model_name = model_name;
        so.workers = cfg.workers;
        std::map<std::string, std::string> replies;
        for (const auto& it : items) replies[summarization_prompt(it)] = it.reference_summary;
        const MapTextGenerator og(replies);
        std::unique_ptr<LmTextGenerator> lg;
        if (lm) lg = std::make_unique<LmTextGenerator>(*lm);
        const TextGenerator& gen = oracle ? static_cast<const TextGenerator&>(og) : *lg;
        res = eval_summarization(gen, items, *emb, so);
    } else {
        throw ValidationError("unknown eval task '" + task + "'");
    }
    validate(res.report);
    ensure_parent(out);
    write_file(out, report_json(res));
    write_audit(g.report_dir, task + "-items.jsonl", res.audit);
    write_manifest("eval " + task, cfg, inputs, {out}, out);
    if (res.report.metric_stats) {
        std::cout << metric_table({res.report}).text;
    } else {
        std::cout << report_table({res.report}).text;
    }
    return 0;
}

int cmd_ablation(const Globals& g, const std::string& out) {
    if (g.config.empty()) throw ValidationError("ablation run needs --config");
    const auto cfg = load_config(g);
    const auto res = run_ablation(cfg, out, g.config);
    std::cout << res.table.text;
    return 0;
}

int cmd_report(const Globals& g, const std::vector<std::string>& reports_in, const std::string& gt,
               const std::string& out) {
    std::vector<MetricReport> reports;
    for (const auto& p : reports_in) {
        json j;
        try {
            j = json::parse(read_file(p));
        } catch (const json::parse_error& e) {
            throw ValidationError("report '" + p + "' is not valid JSON: " + e.what());
        }
        reports.push_back(record_from_json<MetricReport>(j));
    }
    std::optional<std::array<int, 4>> gt_dist;
    if (!gt.empty()) gt_dist = gold_distribution(load_jsonl<McqItem>(gt));
    bool summaries = !reports.empty();
    for (const auto& r : reports) summaries = summaries && r.metric_stats.has_value() && !r.accuracy;
    const ReportTable t = summaries ? metric_table(reports) : report_table(reports, gt_dist);
    if (!out.empty()) {
        ensure_parent(out);
        write_file(out + ".csv", t.csv);
        write_file(out + ".txt", t.text);
        Manifest m;
        m.command = "report table";
        m.config = ordered_json::object();
        m.inputs = reports_in;
        if (!gt.empty()) m.inputs.push_back(gt);
        m.outputs = {out + ".csv", out + ".txt"};
        m.write(out + ".manifest.json", parent_dir(out));
    }
    (void)g;
    std::cout << t.text;
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Domain-specialized small language model toolkit"};
    app.require_subcommand(1);
    Globals g;
    auto add_globals = [&](CLI::App* c) {
        c->add_option("--config", g.config, "Pipeline config (JSON)");
        c->add_option("--set", g.set, "Override a config field, e.g. stages.dapt.peak_lr=3e-3");
        c->add_option("--workers", g.workers, "Worker threads (overrides the config)");
        c->add_option("--seed", g.seed, "Global seed (overrides the config)");
        c->add_option("--report-dir", g.report_dir, "Directory for per-item audit logs");
    };
    auto add_teacher = [&](CLI::App* c) {
        c->add_option("--replay", g.replay, "Replay cache; forces offline teacher mode");
        c->add_option("--teacher-url", g.teacher_url, "Teacher endpoint base URL");
        c->add_option("--record", g.record, "Write live teacher responses to this replay cache");
    };
    std::function<int()> action;

    // curate
    auto* curate = app.add_subcommand("curate", "Corpus curation");
    curate->require_subcommand(1);
    std::string labeled, input, out, model_out, topics, kind = "docs", eval_path, eval_kind = "mcq", relevance,
                                                         exemplars;
    int n = 0;
    {
        auto* c = curate->add_subcommand("classify", "Train the relevance classifier and label documents");
        add_globals(c);
        c->add_option("--labeled", labeled, "Labeled training documents")->required();
        c->add_option("--input", input, "Documents to classify")->required();
        c->add_option("--out", out, "Output JSONL")->required();
        c->add_option("--model-out", model_out, "Save the relevance model");
        c->callback([&] { action = [&] { return cmd_classify(g, labeled, input, out, model_out); }; });
    }
    {
        auto* c = curate->add_subcommand("topic-filter", "Topic similarity filter with false-negative recovery");
        add_globals(c);
        c->add_option("--input", input, "Classified documents")->required();
        c->add_option("--topics", topics, "Topic-defining documents")->required();
        c->add_option("--out", out, "Output JSONL")->required();
        c->callback([&] { action = [&] { return cmd_topic_filter(g, input, topics, out); }; });
    }
    {
        auto* c = curate->add_subcommand("dedup", "MinHash fuzzy deduplication");
        add_globals(c);
        c->add_option("--input", input, "Documents")->required();
        c->add_option("--out", out, "Output JSONL")->required();
        c->callback([&] { action = [&] { return cmd_dedup(g, input, out); }; });
    }
    {
        auto* c = curate->add_subcommand("augment", "Chunked teacher augmentation");
        add_globals(c);
        add_teacher(c);
        c->add_option("--input", input, "Documents")->required();
        c->add_option("--out", out, "Output JSONL")->required();
        c->callback([&] { action = [&] { return cmd_augment(g, input, out); }; });
    }
    {
        auto* c = curate->add_subcommand("gen-dsft", "Three-shot instruction data generation");
        add_globals(c);
        add_teacher(c);
        c->add_option("--exemplars", exemplars, "Exemplar instruction examples with task fields")->required();
        c->add_option("--out", out, "Output JSONL")->required();
        c->add_option("-n,--num", n, "Samples to draw (default from config)");
        c->callback([&] { action = [&] { return cmd_gen_dsft(g, exemplars, out, n); }; });
    }
    {
        auto* c = curate->add_subcommand("screen", "Quality gates (dsft) or contamination screen (docs)");
        add_globals(c);
        c->add_option("--input", input, "Records to screen")->required();
        c->add_option("--kind", kind, "docs or dsft")->check(CLI::IsMember({"docs", "dsft"}));
        c->add_option("--eval", eval_path, "Benchmark JSONL to screen against")->required();
        c->add_option("--eval-kind", eval_kind, "mcq, qa, comp or sum");
        c->add_option("--relevance", relevance, "Relevance model JSON (dsft)");
        c->add_option("--out", out, "Output JSONL")->required();
        c->callback([&] {
            action = [&] { return cmd_screen(g, input, kind, eval_path, eval_kind, relevance, out); };
        });
    }

    // tokenizer
    std::vector<std::string> tok_inputs;
    {
        auto* t = app.add_subcommand("tokenizer", "Tokenizer");
        t->require_subcommand(1);
        auto* c = t->add_subcommand("train", "Train the byte-level BPE tokenizer");
        add_globals(c);
        c->add_option("--input", tok_inputs, "JSONL files (documents, instructions or pairs)")->required();
        c->add_option("--out", out, "Tokenizer JSON")->required();
        c->callback([&] { action = [&] { return cmd_tokenizer_train(g, tok_inputs, out); }; });
    }

    // train
    std::string data, tok_path, init, ckpt_dir, resume;
    int ckpt_every = 0;
    {
        auto* t = app.add_subcommand("train", "Training stages");
        t->require_subcommand(1);
        for (const char* stage : {"dapt", "sft", "dpo"}) {
            auto* c = t->add_subcommand(stage, std::string("Run the ") + stage + " stage");
            add_globals(c);
            c->add_option("--data", data, "Training data JSONL")->required();
            c->add_option("--tokenizer", tok_path, "Tokenizer JSON")->required();
            c->add_option("--init", init, "Starting checkpoint (fresh model when omitted)");
            c->add_option("--out", out, "Output checkpoint")->required();
            c->add_option("--checkpoint-dir", ckpt_dir, "Directory for periodic checkpoints");
            c->add_option("--checkpoint-every", ckpt_every, "Steps between periodic checkpoints");
            c->add_option("--resume", resume, "Resume from a periodic checkpoint");
            const std::string s = stage;
            c->callback([&, s] {
                action = [&, s] {
                    return cmd_train(g, stage_kind_from_string(s), data, tok_path, init, out, ckpt_dir, ckpt_every,
                                     resume);
                };
            });
        }
    }

    // eval
    std::string model_path, items, shots, name, embedder_url;
    bool oracle = false, from_mcq = false;
    int embedder_dim = 384;
    {
        auto* t = app.add_subcommand("eval", "Benchmarks");
        t->require_subcommand(1);
        for (const char* task : {"mcq", "qa", "comp", "sum"}) {
            auto* c = t->add_subcommand(task, std::string("Evaluate ") + task);
            add_globals(c);
            c->add_option("--model", model_path, "Checkpoint");
            c->add_option("--tokenizer", tok_path, "Tokenizer JSON");
            c->add_flag("--oracle", oracle, "Answer with the gold labels (harness check)");
            c->add_option("--items", items, "Benchmark JSONL")->required();
            c->add_option("--shots", shots, "Five exemplar items (mcq, qa)");
            c->add_option("--name", name, "Model name in the report");
            c->add_option("--out", out, "Report JSON")->required();
            if (std::string(task) == "comp") c->add_flag("--from-mcq", from_mcq, "Derive items from MCQ with the filter");
            if (std::string(task) == "sum") {
                c->add_option("--embedder-url", embedder_url, "Embedding service (default: hashing embedder)");
                c->add_option("--embedder-dim", embedder_dim, "Embedding dimension of the service");
            }
            const std::string tk = task;
            c->callback([&, tk] {
                action = [&, tk] {
                    return cmd_eval(g, tk, model_path, tok_path, oracle, items, shots, name, out, from_mcq,
                                    embedder_url, embedder_dim);
                };
            });
        }
    }

    // ablation
    {
        auto* t = app.add_subcommand("ablation", "Ablation grid");
        t->require_subcommand(1);
        auto* c = t->add_subcommand("run", "Run the five-row grid on the synthetic domain");
        add_globals(c);
        c->add_option("--out", out, "Output directory")->required();
        c->callback([&] { action = [&] { return cmd_ablation(g, out); }; });
    }

    // report
    std::vector<std::string> reports;
    std::string gt;
    {
        auto* t = app.add_subcommand("report", "Reports");
        t->require_subcommand(1);
        auto* c = t->add_subcommand("table", "Comparison table from report JSON files");
        c->add_option("--reports", reports, "Report JSON files")->required();
        c->add_option("--ground-truth", gt, "MCQ items whose gold letters form the ground-truth row");
        c->add_option("--out", out, "Output prefix for .csv and .txt");
        c->callback([&] { action = [&] { return cmd_report(g, reports, gt, out); }; });
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 1;
    }
    try {
        return action ? action() : 1;
    } catch (const ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const json::exception& e) {
        std::cerr << "error: malformed JSON input: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
