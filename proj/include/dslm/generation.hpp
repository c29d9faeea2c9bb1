#pragma once

#include <map>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dslm/checkpoint.hpp"
#include "dslm/tokenizer.hpp"

namespace dslm {

/// Anything that can score token sequences. Implementations must be safe to
/// call concurrently.
class LanguageModel {
public:
    virtual ~LanguageModel() = default;
    virtual int vocab_size() const = 0;
    virtual int context_length() const = 0;
    virtual std::vector<int> encode(std::string_view text) const = 0;
    virtual std::string decode(std::span<const int> ids) const = 0;
    virtual int bos_id() const = 0;  // -1 when the model has none
    virtual int eos_id() const = 0;
    /// Next-token logits for every prefix: row t scores ids[t + 1].
    virtual Mat<double> logits(std::span<const int> ids) const = 0;
};

/// The transformer plus its tokenizer.
class TransformerLM final : public LanguageModel {
public:
    TransformerLM(Tokenizer tok, ModelParams<float> params);
    static TransformerLM from_checkpoint(Tokenizer tok, const Checkpoint& ckpt);

    int vocab_size() const override { return params_.config.vocab_size; }
    int context_length() const override { return params_.config.context_length; }
    std::vector<int> encode(std::string_view text) const override { return tok_.encode(text); }
    std::string decode(std::span<const int> ids) const override { return tok_.decode(ids); }
    int bos_id() const override { return Tokenizer::kBos; }
    int eos_id() const override { return Tokenizer::kEos; }
    Mat<double> logits(std::span<const int> ids) const override;

    const ModelParams<float>& params() const { return params_; }
    const Tokenizer& tokenizer() const { return tok_; }

private:
    Tokenizer tok_;
    ModelParams<float> params_;
};

/// Sum over target tokens of ln P(target_i | context, target_<i). The context
/// must be nonempty and the whole sequence must fit the model context.
double sequence_log_prob(const LanguageModel& model, std::span<const int> context, std::span<const int> target);

struct DecodeParams {
    int max_new_tokens = 64;
    double temperature = 0.0;
    std::uint64_t seed = 1;
    std::vector<std::string> stop = {"\n###"};
    bool stop_at_eos = true;

    void validate() const;
};

enum class StopReason { Eos, StopString, MaxTokens };

struct Generation {
    std::string text;
    std::vector<int> ids;
    StopReason reason = StopReason::MaxTokens;
};

/// Greedy (ties to the lowest id) when temperature is 0, otherwise seeded
/// sampling from softmax(logits / temperature). Stops at EOS, at the first
/// stop string (text truncated before it) or after max_new_tokens. When the
/// sequence outgrows the context only the most recent tokens are fed.
Generation generate(const LanguageModel& model, std::span<const int> prompt_ids, const DecodeParams& decode);

/// Index of the next token for one logit row under `decode`.
int pick_token(std::span<const double> logits, double temperature, Rng& rng);

/// Prompt-in, text-out view used by the benchmark harnesses.
class TextGenerator {
public:
    virtual ~TextGenerator() = default;
    virtual std::string complete(const std::string& prompt, const DecodeParams& decode) const = 0;
};

/// Encodes the prompt (with BOS when the model has one) and decodes.
class LmTextGenerator final : public TextGenerator {
public:
    explicit LmTextGenerator(const LanguageModel& model) : model_(model) {}
    std::string complete(const std::string& prompt, const DecodeParams& decode) const override;

private:
    const LanguageModel& model_;
};

/// Scripted generator: fixed reply per prompt, `fallback` for anything else.
/// Stop strings are applied like real decoding.
class MapTextGenerator final : public TextGenerator {
public:
    explicit MapTextGenerator(std::map<std::string, std::string> replies, std::string fallback = "")
        : replies_(std::move(replies)), fallback_(std::move(fallback)) {}
    std::string complete(const std::string& prompt, const DecodeParams& decode) const override;

private:
    std::map<std::string, std::string> replies_;
    std::string fallback_;
};

}  // namespace dslm
