#include "dslm/generation.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace dslm {

TransformerLM::TransformerLM(Tokenizer tok, ModelParams<float> params) : tok_(std::move(tok)), params_(std::move(params)) {
    if (tok_.vocab_size() > params_.config.vocab_size) {
        throw ValidationError("tokenizer vocabulary (" + std::to_string(tok_.vocab_size()) +
                              ") exceeds model vocabulary (" + std::to_string(params_.config.vocab_size) + ")");
    }
}

TransformerLM TransformerLM::from_checkpoint(Tokenizer tok, const Checkpoint& ckpt) {
    return TransformerLM(std::move(tok), inference_params(ckpt));
}

Mat<double> TransformerLM::logits(std::span<const int> ids) const {
    const Mat<float> z = forward(params_, ids);
    Mat<double> out(z.rows, z.cols);
    std::copy(z.data.begin(), z.data.end(), out.data.begin());
    return out;
}

double sequence_log_prob(const LanguageModel& model, std::span<const int> context, std::span<const int> target) {
    if (context.empty()) throw ValidationError("sequence_log_prob: context must be nonempty");
    if (target.empty()) throw ValidationError("sequence_log_prob: empty target");
    std::vector<int> all(context.begin(), context.end());
    all.insert(all.end(), target.begin(), target.end() - 1);
    if (all.size() > static_cast<std::size_t>(model.context_length())) {
        throw ValidationError("sequence_log_prob: context plus target exceed the model context");
    }
    const Mat<double> z = model.logits(all);
    double total = 0.0;
    for (std::size_t i = 0; i < target.size(); ++i) {
        const double* row = z.row(context.size() - 1 + i);
        double mx = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < z.cols; ++j) mx = std::max(mx, row[j]);
        double sum = 0.0;
        for (std::size_t j = 0; j < z.cols; ++j) sum += std::exp(row[j] - mx);
        total += row[target[i]] - mx - std::log(sum);
    }
    return total;
}

void DecodeParams::validate() const {
    if (max_new_tokens < 1) throw ValidationError("decode: max_new_tokens must be >= 1");
    if (!(temperature >= 0.0)) throw ValidationError("decode: temperature must be >= 0");
}

int pick_token(std::span<const double> logits, double temperature, Rng& rng) {
    if (temperature == 0.0) {
        std::size_t best = 0;
        for (std::size_t j = 1; j < logits.size(); ++j) {
            if (logits[j] > logits[best]) best = j;
        }
        return static_cast<int>(best);
    }
    double mx = -std::numeric_limits<double>::infinity();
    for (double z : logits) mx = std::max(mx, z);
    std::vector<double> p(logits.size());
    double sum = 0.0;
    for (std::size_t j = 0; j < logits.size(); ++j) {
        p[j] = std::exp((logits[j] - mx) / temperature);
        sum += p[j];
    }
    const double u = uniform_unit(rng) * sum;
    double cum = 0.0;
    for (std::size_t j = 0; j < p.size(); ++j) {
        cum += p[j];
        if (u < cum) return static_cast<int>(j);
    }
    // u landed on the rounding slack at the top; take the last nonzero entry
    for (std::size_t j = p.size(); j-- > 0;) {
        if (p[j] > 0.0) return static_cast<int>(j);
    }
    return 0;
}

Generation generate(const LanguageModel& model, std::span<const int> prompt_ids, const DecodeParams& decode) {
    decode.validate();
    if (prompt_ids.empty()) throw ValidationError("generate: empty prompt");
    const auto ctx = static_cast<std::size_t>(model.context_length());
    std::vector<int> seq(prompt_ids.begin(), prompt_ids.end());
    Rng rng(decode.seed);
    Generation out;
    for (int step = 0; step < decode.max_new_tokens; ++step) {
        const std::size_t start = seq.size() > ctx ? seq.size() - ctx : 0;
        const std::span<const int> window(seq.data() + start, seq.size() - start);
        const Mat<double> z = model.logits(window);
        const int next = pick_token(std::span<const double>(z.row(z.rows - 1), z.cols), decode.temperature, rng);
        if (decode.stop_at_eos && next == model.eos_id()) {
            out.reason = StopReason::Eos;
            break;
        }
        seq.push_back(next);
        out.ids.push_back(next);
        out.text = model.decode(out.ids);
        std::size_t cut = std::string::npos;
        for (const auto& s : decode.stop) {
            if (s.empty()) continue;
            cut = std::min(cut, out.text.find(s));
        }
        if (cut != std::string::npos) {
            out.text.resize(cut);
            out.reason = StopReason::StopString;
            return out;
        }
    }
    out.text = model.decode(out.ids);
    return out;
}

std::string LmTextGenerator::complete(const std::string& prompt, const DecodeParams& decode) const {
    std::vector<int> ids;
    if (model_.bos_id() >= 0) ids.push_back(model_.bos_id());
    const auto body = model_.encode(prompt);
    ids.insert(ids.end(), body.begin(), body.end());
    return generate(model_, ids, decode).text;
}

std::string MapTextGenerator::complete(const std::string& prompt, const DecodeParams& decode) const {
    auto it = replies_.find(prompt);
    std::string text = it == replies_.end() ? fallback_ : it->second;
    std::size_t cut = std::string::npos;
    for (const auto& s : decode.stop) {
        if (!s.empty()) cut = std::min(cut, text.find(s));
    }
    if (cut != std::string::npos) text.resize(cut);
    return text;
}

}  // namespace dslm
