#include <filesystem>

#include "doctest.h"
#include "dslm/pipeline.hpp"

using namespace dslm;
namespace fs = std::filesystem;

namespace {

std::string message_of(const json& j) {
    try {
        PipelineConfig::from_json(j);
    } catch (const ValidationError& e) {
        return e.what();
    }
    return "";
}

json tiny_config() {
    return json::parse(R"({
        "seed": 4,
        "tokenizer": {"vocab_size": 300},
        "model": {"context_length": 128, "d_model": 16, "n_layers": 1, "n_heads": 2, "d_ff": 32},
        "stages": {
            "dapt": {"peak_lr": 0.003, "epochs": 1, "per_step_batch": 4, "accum_steps": 1, "seq_len": 128, "eval_every": 50},
            "sft": {"peak_lr": 0.001, "epochs": 1, "per_step_batch": 4, "accum_steps": 1, "seq_len": 128, "eval_every": 50},
            "dpo": {"peak_lr": 0.001, "epochs": 1, "per_step_batch": 4, "accum_steps": 1, "seq_len": 128, "eval_every": 50}
        },
        "ablation": {"seeds": [5], "n_facts": 8, "n_docs": 16, "n_generic": 8, "n_pairs": 8}
    })");
}

std::string tmp_dir(const std::string& name) {
    const auto d = (fs::temp_directory_path() / name).string();
    fs::remove_all(d);
    return d;
}

}  // namespace

TEST_CASE("config errors name the offending field path") {
    CHECK(message_of(json{{"bogus", 1}}).find("bogus") != std::string::npos);
    CHECK(message_of(json::parse(R"({"stages":{"dapt":{"peak_lr":-1}}})")).find("stages.dapt") != std::string::npos);
    CHECK(message_of(json::parse(R"({"curation":{"dedup":{"bands":"x"}}})")).find("curation.dedup.bands") !=
          std::string::npos);
    CHECK(message_of(json::parse(R"({"workers":0})")).find("workers") != std::string::npos);
    CHECK(message_of(json::parse(R"({"paths":{"corpus":"/definitely/missing.jsonl"}})")).find("paths.corpus") !=
          std::string::npos);
    CHECK(message_of(json::parse(R"({"tokenizer":{"vocab_size":300},"model":{"vocab_size":400}})"))
              .find("model.vocab_size") != std::string::npos);
    CHECK(message_of(tiny_config()).empty());
}

TEST_CASE("stage seeds default to the global seed") {
    const auto c = PipelineConfig::from_json(tiny_config());
    CHECK(c.dapt.seed == 4);
    CHECK(c.dpo.seed == 4);
    CHECK(c.model.vocab_size == 300);
    CHECK(c.dpo.lora.has_value());
}

TEST_CASE("overrides set nested values with JSON parsing") {
    json j = tiny_config();
    apply_overrides(j, {"stages.dapt.peak_lr=0.01", "model.n_layers=2", "paths.reports=out/reports", "new.path.x=true"});
    CHECK(j["stages"]["dapt"]["peak_lr"] == 0.01);
    CHECK(j["model"]["n_layers"] == 2);
    CHECK(j["paths"]["reports"] == "out/reports");
    CHECK(j["new"]["path"]["x"] == true);
    CHECK_THROWS_AS(apply_overrides(j, {"no_equals_sign"}), ValidationError);
}

TEST_CASE("config JSON round trips and hashes stably") {
    const auto a = PipelineConfig::from_json(tiny_config());
    const auto b = PipelineConfig::from_json(json::parse(a.to_json().dump()));
    CHECK(a.to_json() == b.to_json());
    CHECK(config_hash(a.to_json()) == config_hash(b.to_json()));
    auto j = tiny_config();
    j["seed"] = 5;
    CHECK(config_hash(PipelineConfig::from_json(j).to_json()) != config_hash(a.to_json()));
}

TEST_CASE("manifests record hashes and relative output paths") {
    const auto dir = tmp_dir("dslm_manifest_test");
    fs::create_directories(dir + "/sub");
    write_file(dir + "/sub/out.txt", "abc");
    Manifest m;
    m.command = "x";
    m.seed = 3;
    m.outputs = {dir + "/sub/out.txt"};
    const auto j = m.to_json(dir);
    CHECK(j["outputs"][0]["path"] == "sub/out.txt");
    CHECK(j["outputs"][0]["sha256"] == sha256_hex("abc"));
    CHECK(j["seed"] == 3);
    CHECK(j["versions"]["dslm"] == kVersion);
    CHECK(m.to_json(dir).dump() == j.dump());
    fs::remove_all(dir);
}

TEST_CASE("a tiny ablation is reproducible and composes from its stages") {
    const auto cfg = PipelineConfig::from_json(tiny_config());
    const auto d1 = tmp_dir("dslm_ablation_a");
    const auto d2 = tmp_dir("dslm_ablation_b");
    const auto r1 = run_ablation(cfg, d1);
    const auto r2 = run_ablation(cfg, d2);
    REQUIRE(r1.rows.size() == 5);
    for (std::size_t i = 0; i < 5; ++i) CHECK(r1.rows[i].name == ablation_row_names()[i]);
    CHECK(r1.table.csv == r2.table.csv);
    CHECK(read_file(d1 + "/manifest.json") == read_file(d2 + "/manifest.json"));
    CHECK(read_file(d1 + "/seed-5/base-dapt-dsft-dpo.ckpt") == read_file(d2 + "/seed-5/base-dapt-dsft-dpo.ckpt"));

    // rebuild the DAPT checkpoint by hand from the written data
    const std::string data = d1 + "/seed-5/data/";
    const auto docs = load_jsonl<Document>(data + "corpus.jsonl");
    const auto dsft = load_jsonl<InstructionExample>(data + "dsft.jsonl");
    const auto generic = load_jsonl<InstructionExample>(data + "generic_sft.jsonl");
    const auto pairs = load_jsonl<PreferencePair>(data + "preference.jsonl");
    std::vector<std::string> texts, tok_corpus;
    for (const auto& d : docs) texts.push_back(d.text);
    tok_corpus = texts;
    for (const auto* set : {&dsft, &generic}) {
        for (const auto& e : *set) tok_corpus.push_back(instruction_prompt(e.instruction, e.input) + e.output);
    }
    for (const auto& p : pairs) tok_corpus.push_back(instruction_prompt(p.prompt, "") + p.chosen);
    const auto tok = Tokenizer::train(tok_corpus, cfg.vocab_size, 5);
    CHECK(tok == Tokenizer::load(d1 + "/seed-5/tokenizer.json"));
    Checkpoint init;
    init.params = init_model<float>(cfg.model, 5);
    auto sc = cfg.dapt;
    sc.seed = 5;
    const auto dapt = train_stage(tok, init, texts, sc);
    CHECK(dapt.checkpoint.params.data == load_checkpoint(d1 + "/seed-5/dapt.ckpt").params.data);
    fs::remove_all(d1);
    fs::remove_all(d2);
}
