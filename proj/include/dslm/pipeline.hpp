#pragma once

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dslm/dsft.hpp"
#include "dslm/evaluation.hpp"
#include "dslm/minhash.hpp"
#include "dslm/training.hpp"

namespace dslm {

inline constexpr const char* kVersion = "0.1.0";

struct CurationParams {
    double C = 10.0;
    double topic_threshold = 0.25;
    double recover_fraction = 0.20;
    std::size_t chunk_units = 1024;
    DedupConfig dedup;
    double contamination_threshold = 0.5;
    int dsft_samples = 100;
};

struct EvalParams {
    int max_new_tokens = 16;
    int sum_max_new_tokens = 96;
    int trials = 5;
    double sum_temperature = 0.5;
    int max_option_words = 4;
    std::vector<std::string> exclusion_patterns = default_exclusion_patterns();
};

struct AblationParams {
    std::vector<std::uint64_t> seeds = {1, 2, 3};
    std::size_t n_facts = 40;
    std::size_t n_docs = 200;
    std::size_t n_generic = 40;
    std::size_t n_pairs = 50;
};

/// One file drives every subcommand. Stage seeds default to the global seed.
struct PipelineConfig {
    std::uint64_t seed = 1;
    int workers = 1;
    std::map<std::string, std::string> paths;  // corpus, benchmarks, checkpoints, reports
    CurationParams curation;
    int vocab_size = 512;
    ModelConfig model;
    StageConfig dapt = StageConfig::defaults(StageKind::Dapt);
    StageConfig sft = StageConfig::defaults(StageKind::Dsft);
    StageConfig dpo = StageConfig::defaults(StageKind::Dpo);
    EvalParams eval;
    AblationParams ablation;

    const StageConfig& stage(StageKind k) const;

    /// Unknown keys and bad values throw ValidationError naming the field
    /// path. Input paths ("corpus", "benchmarks") must exist.
    static PipelineConfig from_json(const json& j);
    static PipelineConfig load(const std::string& path, const std::vector<std::string>& overrides = {});
    ordered_json to_json() const;
};

/// Applies "a.b.c=value" assignments; the value is parsed as JSON when
/// possible and kept as a string otherwise. Intermediate objects are created.
void apply_overrides(json& j, const std::vector<std::string>& overrides);

/// Provenance record written beside every output. Paths are stored relative
/// to `base_dir` when they live under it, so relocated reruns match.
struct Manifest {
    std::string command;
    ordered_json config;
    std::uint64_t seed = 0;
    std::vector<std::string> inputs;
    std::vector<std::string> outputs;
    ordered_json extra = ordered_json::object();

    ordered_json to_json(const std::string& base_dir) const;
    void write(const std::string& path, const std::string& base_dir) const;
};

std::string config_hash(const ordered_json& config);

// ---------------------------------------------------------------------------
// ablation grid

struct AblationRow {
    std::string name;
    std::vector<double> accuracy;  // per seed
    MetricReport report;           // pooled over seeds
};

struct AblationResult {
    std::vector<AblationRow> rows;
    ReportTable table;
};

/// Names of the five grid rows, in table order.
const std::vector<std::string>& ablation_row_names();

/// Runs the five-row grid for every seed on the synthetic domain and writes
/// data, tokenizers, checkpoints, logs, audits, tables and a manifest under
/// out_dir. Probes are scored by option log-likelihood.
AblationResult run_ablation(const PipelineConfig& cfg, const std::string& out_dir,
                            const std::optional<std::string>& config_path = std::nullopt);

/// Held-out probe accuracy of a model by option log-likelihood.
EvalResult score_probes(const LanguageModel& model, const std::vector<McqItem>& probes, const std::string& name,
                        int workers = 1);

}  // namespace dslm
