#pragma once

#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "dslm/checkpoint.hpp"
#include "dslm/losses.hpp"
#include "dslm/records.hpp"
#include "dslm/tokenizer.hpp"

namespace dslm {

enum class StageKind { Dapt, Dsft, Dpo };
std::string to_string(StageKind s);
StageKind stage_kind_from_string(std::string_view s);

struct LoraSpec {
    int rank = 16;
    double alpha = 4.0;
};

struct StageConfig {
    StageKind stage = StageKind::Dapt;
    double peak_lr = 1e-4;
    double warmup_frac = 0.1;
    int epochs = 1;
    int per_step_batch = 4;
    int accum_steps = 4;
    int seq_len = 256;
    double beta = 0.1;
    bool dpo_reference = false;  // reference-ratio form of the preference loss
    std::optional<LoraSpec> lora;
    int eval_every = 500;
    double val_frac = 0.02;
    double weight_decay = 0.0;
    std::uint64_t seed = 1;
    int workers = 1;

    /// Stage-specific defaults (learning rate, validation fraction).
    static StageConfig defaults(StageKind stage);
    void validate() const;
    ordered_json to_json() const;
    /// Missing keys keep the values of `base`.
    static StageConfig from_json(const json& j, const StageConfig& base);
};

/// Linear warmup from 0 to peak over W = ceil(warmup_frac * total) steps,
/// then half-cosine decay to 0 at step == total.
double cosine_warmup_lr(long step, long total_steps, double warmup_frac, double peak);

struct OptimState {
    std::vector<float> m;
    std::vector<float> v;
    long t = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
};

/// One AdamW update over a flat parameter buffer. Decoupled decay is skipped
/// for tensors whose spec has decay == false. Non-finite gradients throw,
/// naming the tensor.
void adamw_step(std::span<float> params, std::span<const float> grads, const std::vector<TensorSpec>& specs,
                OptimState& state, double lr);

/// "### Instruction:\n{instruction}\n\n### Input:\n{input}\n\n### Response:\n"
std::string instruction_prompt(const std::string& instruction, const std::string& input);

/// Documents joined with EOS into one stream and cut into blocks of
/// seq_len + 1 tokens with stride seq_len (every token is a target once).
std::vector<LmExample> pack_documents(const Tokenizer& tok, const std::vector<std::string>& docs, int seq_len);

/// BOS + prompt + response + EOS with the loss mask starting at the first
/// response token; nullopt when longer than seq_len + 1 tokens.
std::optional<LmExample> build_sft_example(const Tokenizer& tok, const InstructionExample& ex, int seq_len);

/// Prompt truncated from the left (BOS kept), responses from the right.
std::optional<PairExample> build_preference_example(const Tokenizer& tok, const PreferencePair& pair, int seq_len);

/// Seeded shuffle of [0, n); the last ceil(frac * n) positions form the
/// validation set. Both index lists are returned sorted.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_validation(std::size_t n, double frac,
                                                                                std::uint64_t seed);

using StageData = std::variant<std::vector<std::string>, std::vector<InstructionExample>, std::vector<PreferencePair>>;

struct LogRow {
    long step = 0;
    double lr = 0.0;
    std::optional<double> train_loss;
    std::optional<double> val_loss;
};

std::string training_log_csv(const std::vector<LogRow>& rows);

struct SkippedExample {
    std::size_t index = 0;
    std::string reason;
};

struct TrainOptions {
    std::string checkpoint_dir;  // empty: no periodic checkpoints
    int checkpoint_every = 0;
    std::optional<std::string> resume_from;
    long stop_after_step = -1;  // for interrupted-run tests
};

struct TrainResult {
    Checkpoint checkpoint;
    std::vector<LogRow> log;
    std::vector<SkippedExample> skipped;
    std::size_t train_examples = 0;
    std::size_t val_examples = 0;
};

/// Runs one training stage from `init` (adapters of a previous stage are
/// merged first). With cfg.lora set only the adapters are trained.
TrainResult train_stage(const Tokenizer& tok, const Checkpoint& init, const StageData& data, const StageConfig& cfg,
                        const TrainOptions& opts = {});

}  // namespace dslm
