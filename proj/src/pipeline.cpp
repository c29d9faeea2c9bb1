#include "dslm/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <set>

#include "dslm/synthetic.hpp"

namespace fs = std::filesystem;

namespace dslm {

namespace {

[[noreturn]] void fail(const std::string& field, const std::string& msg) {
    throw ValidationError("config: " + field + ": " + msg);
}

void check_keys(const json& j, const std::string& where, const std::set<std::string>& allowed) {
    if (!j.is_object()) fail(where.empty() ? "<root>" : where, "must be an object");
    for (const auto& [k, v] : j.items()) {
        if (allowed.count(k) == 0) fail(where.empty() ? k : where + "." + k, "unknown key");
    }
}

std::set<std::string> keys_of(const ordered_json& j) {
    std::set<std::string> out;
    for (const auto& [k, v] : j.items()) out.insert(k);
    return out;
}

template <class T>
T get(const json& j, const std::string& key, const std::string& where, T fallback) {
    if (!j.contains(key)) return fallback;
    try {
        return j.at(key).get<T>();
    } catch (const json::exception&) {
        fail(where + key, "has the wrong type (" + std::string(j.at(key).type_name()) + ")");
    }
}

StageConfig stage_from(const json& root, const char* name, StageKind kind, std::uint64_t seed, int workers) {
    StageConfig base = StageConfig::defaults(kind);
    base.seed = seed;
    base.workers = workers;
    if (!root.contains(name)) return base;
    const json& j = root.at(name);
    const std::string where = std::string("stages.") + name;
    auto allowed = keys_of(base.to_json());
    allowed.erase("workers");
    check_keys(j, where, allowed);
    if (j.contains("stage") && j["stage"] != to_string(kind) && !(kind == StageKind::Dsft && j["stage"] == "dsft")) {
        fail(where + ".stage", "must be '" + to_string(kind) + "'");
    }
    try {
        return StageConfig::from_json(j, base);
    } catch (const ValidationError& e) {
        fail(where, e.what());
    }
}

std::string rel_to(const std::string& p, const std::string& base) {
    if (base.empty()) return p;
    const fs::path ap = fs::absolute(p).lexically_normal();
    const fs::path ab = fs::absolute(base).lexically_normal();
    const fs::path r = ap.lexically_relative(ab);
    if (r.empty() || *r.begin() == "..") return p;
    return r.generic_string();
}

}  // namespace

const StageConfig& PipelineConfig::stage(StageKind k) const {
    switch (k) {
        case StageKind::Dapt: return dapt;
        case StageKind::Dsft: return sft;
        case StageKind::Dpo: return dpo;
    }
    return dapt;
}

void apply_overrides(json& j, const std::vector<std::string>& overrides) {
    for (const auto& o : overrides) {
        const auto eq = o.find('=');
        if (eq == std::string::npos || eq == 0) throw ValidationError("override '" + o + "' must look like key.path=value");
        const std::string key = o.substr(0, eq);
        const std::string raw = o.substr(eq + 1);
        json value;
        try {
            value = json::parse(raw);
        } catch (const json::parse_error&) {
            value = raw;
        }
        json* node = &j;
        std::size_t start = 0;
        for (;;) {
            const auto dot = key.find('.', start);
            const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
            if (part.empty()) throw ValidationError("override '" + o + "' has an empty key segment");
            if (!node->is_object()) {
                if (!node->is_null()) throw ValidationError("override '" + o + "' descends into a non-object");
                *node = json::object();
            }
            if (dot == std::string::npos) {
                (*node)[part] = value;
                break;
            }
            node = &(*node)[part];
            start = dot + 1;
        }
    }
}

PipelineConfig PipelineConfig::from_json(const json& j) {
    check_keys(j, "", {"seed", "workers", "paths", "curation", "tokenizer", "model", "stages", "eval", "ablation"});
    PipelineConfig c;
    c.seed = get<std::uint64_t>(j, "seed", "", c.seed);
    c.workers = get<int>(j, "workers", "", c.workers);
    if (c.workers < 1) fail("workers", "must be >= 1");

    if (j.contains("paths")) {
        const json& p = j["paths"];
        check_keys(p, "paths", {"corpus", "benchmarks", "checkpoints", "reports"});
        for (const auto& [k, v] : p.items()) {
            if (!v.is_string()) fail("paths." + k, "must be a string");
            c.paths[k] = v.get<std::string>();
        }
        for (const char* in : {"corpus", "benchmarks"}) {
            auto it = c.paths.find(in);
            if (it != c.paths.end() && !fs::exists(it->second)) {
                fail(std::string("paths.") + in, "'" + it->second + "' does not exist");
            }
        }
    }

    if (j.contains("curation")) {
        const json& q = j["curation"];
        check_keys(q, "curation",
                   {"C", "topic_threshold", "recover_fraction", "chunk_units", "dedup", "contamination_threshold",
                    "dsft_samples"});
        auto& cu = c.curation;
        cu.C = get<double>(q, "C", "curation.", cu.C);
        cu.topic_threshold = get<double>(q, "topic_threshold", "curation.", cu.topic_threshold);
        cu.recover_fraction = get<double>(q, "recover_fraction", "curation.", cu.recover_fraction);
        cu.chunk_units = get<std::size_t>(q, "chunk_units", "curation.", cu.chunk_units);
        cu.contamination_threshold = get<double>(q, "contamination_threshold", "curation.", cu.contamination_threshold);
        cu.dsft_samples = get<int>(q, "dsft_samples", "curation.", cu.dsft_samples);
        if (!(cu.C > 0)) fail("curation.C", "must be > 0");
        if (cu.recover_fraction < 0 || cu.recover_fraction > 1) fail("curation.recover_fraction", "must be in [0, 1]");
        if (cu.chunk_units < 1) fail("curation.chunk_units", "must be >= 1");
        if (!(cu.contamination_threshold > 0 && cu.contamination_threshold <= 1)) {
            fail("curation.contamination_threshold", "must be in (0, 1]");
        }
        if (cu.dsft_samples < 1) fail("curation.dsft_samples", "must be >= 1");
        if (q.contains("dedup")) {
            const json& d = q["dedup"];
            check_keys(d, "curation.dedup", {"jaccard_threshold", "num_perm", "bands", "rows", "shingle_n", "seed"});
            auto& dd = cu.dedup;
            dd.jaccard_threshold = get<double>(d, "jaccard_threshold", "curation.dedup.", dd.jaccard_threshold);
            dd.num_perm = get<int>(d, "num_perm", "curation.dedup.", dd.num_perm);
            dd.bands = get<int>(d, "bands", "curation.dedup.", dd.bands);
            dd.rows = get<int>(d, "rows", "curation.dedup.", dd.rows);
            dd.shingle_n = get<int>(d, "shingle_n", "curation.dedup.", dd.shingle_n);
            dd.seed = get<std::uint64_t>(d, "seed", "curation.dedup.", c.seed);
        } else {
            cu.dedup.seed = c.seed;
        }
        cu.dedup.workers = c.workers;
        try {
            cu.dedup.validate();
        } catch (const ValidationError& e) {
            fail("curation.dedup", e.what());
        }
    } else {
        c.curation.dedup.seed = c.seed;
        c.curation.dedup.workers = c.workers;
    }

    if (j.contains("tokenizer")) {
        check_keys(j["tokenizer"], "tokenizer", {"vocab_size"});
        c.vocab_size = get<int>(j["tokenizer"], "vocab_size", "tokenizer.", c.vocab_size);
    }
    if (c.vocab_size < Tokenizer::kFirstMerge) {
        fail("tokenizer.vocab_size", "must be >= " + std::to_string(Tokenizer::kFirstMerge));
    }

    json model = json::parse(ModelConfig{}.to_json().dump());
    model["vocab_size"] = c.vocab_size;
    if (j.contains("model")) {
        check_keys(j["model"], "model", keys_of(ModelConfig{}.to_json()));
        for (const auto& [k, v] : j["model"].items()) {
            if (k == "vocab_size" && v != c.vocab_size) fail("model.vocab_size", "must equal tokenizer.vocab_size");
            model[k] = v;
        }
    }
    try {
        c.model = ModelConfig::from_json(model);
    } catch (const ValidationError& e) {
        fail("model", e.what());
    } catch (const json::exception& e) {
        fail("model", e.what());
    }

    const json stages = j.value("stages", json::object());
    check_keys(stages, "stages", {"dapt", "sft", "dpo"});
    c.dapt = stage_from(stages, "dapt", StageKind::Dapt, c.seed, c.workers);
    c.sft = stage_from(stages, "sft", StageKind::Dsft, c.seed, c.workers);
    c.dpo = stage_from(stages, "dpo", StageKind::Dpo, c.seed, c.workers);
    for (const auto* s : {&c.dapt, &c.sft, &c.dpo}) {
        if (s->seq_len > c.model.context_length) {
            fail("stages." + to_string(s->stage) + ".seq_len", "exceeds model.context_length");
        }
    }

    if (j.contains("eval")) {
        const json& e = j["eval"];
        check_keys(e, "eval",
                   {"max_new_tokens", "sum_max_new_tokens", "trials", "sum_temperature", "max_option_words",
                    "exclusion_patterns"});
        auto& ev = c.eval;
        ev.max_new_tokens = get<int>(e, "max_new_tokens", "eval.", ev.max_new_tokens);
        ev.sum_max_new_tokens = get<int>(e, "sum_max_new_tokens", "eval.", ev.sum_max_new_tokens);
        ev.trials = get<int>(e, "trials", "eval.", ev.trials);
        ev.sum_temperature = get<double>(e, "sum_temperature", "eval.", ev.sum_temperature);
        ev.max_option_words = get<int>(e, "max_option_words", "eval.", ev.max_option_words);
        ev.exclusion_patterns = get<std::vector<std::string>>(e, "exclusion_patterns", "eval.", ev.exclusion_patterns);
        if (ev.max_new_tokens < 1) fail("eval.max_new_tokens", "must be >= 1");
        if (ev.sum_max_new_tokens < 1) fail("eval.sum_max_new_tokens", "must be >= 1");
        if (ev.trials < 1) fail("eval.trials", "must be >= 1");
        if (ev.sum_temperature < 0) fail("eval.sum_temperature", "must be >= 0");
        if (ev.max_option_words < 1) fail("eval.max_option_words", "must be >= 1");
    }

    if (j.contains("ablation")) {
        const json& a = j["ablation"];
        check_keys(a, "ablation", {"seeds", "n_facts", "n_docs", "n_generic", "n_pairs"});
        auto& ab = c.ablation;
        ab.seeds = get<std::vector<std::uint64_t>>(a, "seeds", "ablation.", ab.seeds);
        ab.n_facts = get<std::size_t>(a, "n_facts", "ablation.", ab.n_facts);
        ab.n_docs = get<std::size_t>(a, "n_docs", "ablation.", ab.n_docs);
        ab.n_generic = get<std::size_t>(a, "n_generic", "ablation.", ab.n_generic);
        ab.n_pairs = get<std::size_t>(a, "n_pairs", "ablation.", ab.n_pairs);
        if (ab.seeds.empty()) fail("ablation.seeds", "must not be empty");
        if (ab.n_facts < 4) fail("ablation.n_facts", "must be >= 4");
        if (ab.n_docs < 2) fail("ablation.n_docs", "must be >= 2");
        if (ab.n_generic < 2) fail("ablation.n_generic", "must be >= 2");
        if (ab.n_pairs < 2) fail("ablation.n_pairs", "must be >= 2");
    }
    return c;
}

PipelineConfig PipelineConfig::load(const std::string& path, const std::vector<std::string>& overrides) {
    json j;
    try {
        j = json::parse(read_file(path));
    } catch (const json::parse_error& e) {
        throw ValidationError("config '" + path + "' is not valid JSON: " + e.what());
    }
    apply_overrides(j, overrides);
    return from_json(j);
}

ordered_json PipelineConfig::to_json() const {
    ordered_json j;
    j["seed"] = seed;
    if (!paths.empty()) {
        ordered_json p = ordered_json::object();
        for (const auto& [k, v] : paths) p[k] = v;
        j["paths"] = p;
    }
    const auto& cu = curation;
    j["curation"] = {{"C", cu.C},
                     {"topic_threshold", cu.topic_threshold},
                     {"recover_fraction", cu.recover_fraction},
                     {"chunk_units", cu.chunk_units},
                     {"dedup",
                      {{"jaccard_threshold", cu.dedup.jaccard_threshold},
                       {"num_perm", cu.dedup.num_perm},
                       {"bands", cu.dedup.bands},
                       {"rows", cu.dedup.rows},
                       {"shingle_n", cu.dedup.shingle_n},
                       {"seed", cu.dedup.seed}}},
                     {"contamination_threshold", cu.contamination_threshold},
                     {"dsft_samples", cu.dsft_samples}};
    j["tokenizer"] = {{"vocab_size", vocab_size}};
    j["model"] = model.to_json();
    ordered_json st;
    for (const auto* s : {&dapt, &sft, &dpo}) {
        auto sj = s->to_json();
        sj.erase("workers");
        st[to_string(s->stage)] = sj;
    }
    j["stages"] = st;
    j["eval"] = {{"max_new_tokens", eval.max_new_tokens},
                 {"sum_max_new_tokens", eval.sum_max_new_tokens},
                 {"trials", eval.trials},
                 {"sum_temperature", eval.sum_temperature},
                 {"max_option_words", eval.max_option_words},
                 {"exclusion_patterns", eval.exclusion_patterns}};
    j["ablation"] = {{"seeds", ablation.seeds},
                     {"n_facts", ablation.n_facts},
                     {"n_docs", ablation.n_docs},
                     {"n_generic", ablation.n_generic},
                     {"n_pairs", ablation.n_pairs}};
    return j;
}

std::string config_hash(const ordered_json& config) { return sha256_hex(config.dump()); }

ordered_json Manifest::to_json(const std::string& base_dir) const {
    ordered_json j;
    j["tool"] = "dslm";
    j["versions"] = {{"dslm", kVersion},
                     {"checkpoint_format", kCheckpointFormatVersion},
                     {"json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." +
                                  std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                  std::to_string(NLOHMANN_JSON_VERSION_PATCH)}};
    j["command"] = command;
    j["seed"] = seed;
    j["config_sha256"] = config_hash(config);
    j["config"] = config;
    auto files = [&](const std::vector<std::string>& paths, bool relative) {
        ordered_json a = ordered_json::array();
        for (const auto& p : paths) {
            a.push_back({{"path", relative ? rel_to(p, base_dir) : p}, {"sha256", sha256_file(p)}});
        }
        return a;
    };
    j["inputs"] = files(inputs, false);
    j["outputs"] = files(outputs, true);
    if (!extra.empty()) j["extra"] = extra;
    return j;
}

void Manifest::write(const std::string& path, const std::string& base_dir) const {
    write_file(path, to_json(base_dir).dump(2) + "\n");
}

// ---------------------------------------------------------------------------

const std::vector<std::string>& ablation_row_names() {
    static const std::vector<std::string> names = {"Base+SFT", "Base+DAPT+SFT", "Base+DSFT", "Base+DAPT+DSFT",
                                                   "Base+DAPT+DSFT+DPO"};
    return names;
}

EvalResult score_probes(const LanguageModel& model, const std::vector<McqItem>& probes, const std::string& name,
                        int workers) {
    std::vector<CompItem> items;
    for (const auto& m : probes) {
        CompItem c;
        c.id = m.id;
        c.prefix = instruction_prompt(m.question, "");
        c.options = m.options;
        c.answer_index = m.answer_index();
        items.push_back(std::move(c));
    }
    EvalResult r = eval_completion(model, items, {name, workers});
    r.report.task = TaskKind::Mcq;
    return r;
}

namespace {

std::string seed_dir_name(std::uint64_t s) { return "seed-" + std::to_string(s); }

std::string fmt4(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4f", v);
    return buf;
}

}  // namespace

AblationResult run_ablation(const PipelineConfig& cfg, const std::string& out_dir,
                            const std::optional<std::string>& config_path) {
    const auto& ab = cfg.ablation;
    const auto& names = ablation_row_names();
    fs::create_directories(out_dir);
    std::vector<std::string> outputs;
    auto emit = [&](const std::string& path, std::string_view contents) {
        write_file(path, contents);
        outputs.push_back(path);
    };

    AblationResult result;
    for (const auto& n : names) result.rows.push_back({n, {}, {}});
    std::vector<int> correct(names.size(), 0), total(names.size(), 0);
    std::vector<std::array<int, 4>> dist(names.size(), std::array<int, 4>{});

    for (const std::uint64_t s : ab.seeds) {
        const std::string dir = out_dir + "/" + seed_dir_name(s);
        fs::create_directories(dir + "/data");

        const SyntheticDomain dom = make_synthetic_domain(s, ab.n_facts);
        const auto texts = synthetic_corpus(dom, ab.n_docs, s);
        const auto dsft = synthetic_domain_instructions(dom, s);
        const auto generic = synthetic_generic_instructions(ab.n_generic, s);
        const auto pairs = synthetic_preference_pairs(dom, ab.n_pairs, s);
        const auto probes = synthetic_probes(dom, s);

        std::vector<Document> docs;
        for (std::size_t i = 0; i < texts.size(); ++i) {
            char id[32];
            std::snprintf(id, sizeof id, "doc-%04zu", i);
            Document d;
            d.id = id;
            d.source = "synthetic";
            d.text = texts[i];
            docs.push_back(std::move(d));
        }
        emit(dir + "/data/corpus.jsonl", to_jsonl(docs));
        emit(dir + "/data/dsft.jsonl", to_jsonl(dsft));
        emit(dir + "/data/generic_sft.jsonl", to_jsonl(generic));
        emit(dir + "/data/preference.jsonl", to_jsonl(pairs));
        emit(dir + "/data/probes.jsonl", to_jsonl(probes));

        std::vector<std::string> tok_corpus = texts;
        for (const auto* set : {&dsft, &generic}) {
            for (const auto& e : *set) tok_corpus.push_back(instruction_prompt(e.instruction, e.input) + e.output);
        }
        for (const auto& p : pairs) tok_corpus.push_back(instruction_prompt(p.prompt, "") + p.chosen);
        const Tokenizer tok = Tokenizer::train(tok_corpus, cfg.vocab_size, s);
        tok.save(dir + "/tokenizer.json");
        outputs.push_back(dir + "/tokenizer.json");

        auto with_seed = [&](StageConfig sc) {
            sc.seed = s;
            sc.workers = cfg.workers;
            return sc;
        };
        Checkpoint base;
        base.params = init_model<float>(cfg.model, s);
        save_checkpoint(base, dir + "/base.ckpt");
        outputs.push_back(dir + "/base.ckpt");

        auto run = [&](const std::string& tag, const Checkpoint& init, const StageData& data, const StageConfig& sc) {
            TrainResult tr = train_stage(tok, init, data, with_seed(sc));
            save_checkpoint(tr.checkpoint, dir + "/" + tag + ".ckpt");
            outputs.push_back(dir + "/" + tag + ".ckpt");
            emit(dir + "/" + tag + ".log.csv", training_log_csv(tr.log));
            return tr.checkpoint;
        };
        const Checkpoint dapt = run("dapt", base, texts, cfg.dapt);
        std::vector<Checkpoint> rows;
        rows.push_back(run("base-sft", base, generic, cfg.sft));
        rows.push_back(run("base-dapt-sft", dapt, generic, cfg.sft));
        rows.push_back(run("base-dsft", base, dsft, cfg.sft));
        rows.push_back(run("base-dapt-dsft", dapt, dsft, cfg.sft));
        rows.push_back(run("base-dapt-dsft-dpo", rows.back(), pairs, cfg.dpo));

        for (std::size_t r = 0; r < rows.size(); ++r) {
            const TransformerLM lm = TransformerLM::from_checkpoint(tok, rows[r]);
            const EvalResult er = score_probes(lm, probes, names[r], cfg.workers);
            std::string audit;
            for (const auto& a : er.audit) audit += a.dump() + "\n";
            std::string file = names[r];
            std::replace(file.begin(), file.end(), '+', '-');
            std::transform(file.begin(), file.end(), file.begin(), [](unsigned char c) { return std::tolower(c); });
            emit(dir + "/probes-" + file + ".jsonl", audit);
            result.rows[r].accuracy.push_back(*er.report.accuracy);
            correct[r] += *er.report.correct;
            total[r] += *er.report.total;
            for (int k = 0; k < 4; ++k) dist[r][k] += (*er.report.answer_distribution)[k];
        }
    }

    std::vector<std::string> header{"Training"};
    for (auto s : ab.seeds) header.push_back("seed " + std::to_string(s));
    for (const char* h : {"Accuracy (Correct/Total)", "A", "B", "C", "D"}) header.push_back(h);
    std::vector<std::vector<std::string>> cells;
    ordered_json summary = ordered_json::array();
    for (std::size_t r = 0; r < names.size(); ++r) {
        auto& row = result.rows[r];
        row.report.task = TaskKind::Mcq;
        row.report.model = row.name;
        row.report.correct = correct[r];
        row.report.total = total[r];
        row.report.accuracy = total[r] > 0 ? static_cast<double>(correct[r]) / total[r] : 0.0;
        row.report.answer_distribution = dist[r];
        std::vector<std::string> line{row.name};
        for (double a : row.accuracy) line.push_back(fmt4(a));
        line.push_back(fmt4(*row.report.accuracy) + " (" + std::to_string(correct[r]) + "/" + std::to_string(total[r]) +
                       ")");
        for (int k = 0; k < 4; ++k) line.push_back(std::to_string(dist[r][k]));
        cells.push_back(std::move(line));
        ordered_json o = to_json(row.report);
        o["accuracy_per_seed"] = row.accuracy;
        summary.push_back(o);
    }
    result.table = render_table(header, cells);
    emit(out_dir + "/ablation.csv", result.table.csv);
    emit(out_dir + "/ablation.txt", result.table.text);
    emit(out_dir + "/ablation.json", summary.dump(2) + "\n");

    Manifest m;
    m.command = "ablation run";
    m.config = cfg.to_json();
    m.seed = cfg.seed;
    if (config_path) m.inputs.push_back(*config_path);
    std::sort(outputs.begin(), outputs.end());
    m.outputs = outputs;
    m.write(out_dir + "/manifest.json", out_dir);
    return result;
}

}  // namespace dslm
