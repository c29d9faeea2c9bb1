#include "dslm/training.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numbers>

namespace dslm {

std::string to_string(StageKind s) {
    switch (s) {
        case StageKind::Dapt: return "dapt";
        case StageKind::Dsft: return "sft";
        case StageKind::Dpo: return "dpo";
    }
    return "unknown";
}

StageKind stage_kind_from_string(std::string_view s) {
    if (s == "dapt") return StageKind::Dapt;
    if (s == "sft" || s == "dsft") return StageKind::Dsft;
    if (s == "dpo") return StageKind::Dpo;
    throw ValidationError("unknown training stage '" + std::string(s) + "' (expected dapt, sft or dpo)");
}

StageConfig StageConfig::defaults(StageKind stage) {
    StageConfig c;
    c.stage = stage;
    switch (stage) {
        case StageKind::Dapt:
            c.peak_lr = 1e-4;
            c.val_frac = 0.02;
            break;
        case StageKind::Dsft:
            c.peak_lr = 1e-5;
            c.val_frac = 0.02;
            break;
        case StageKind::Dpo:
            c.peak_lr = 1e-5;
            c.val_frac = 0.10;
            c.lora = LoraSpec{};
            break;
    }
    return c;
}

void StageConfig::validate() const {
    auto require = [](bool ok, const std::string& msg) {
        if (!ok) throw ValidationError("stage config: " + msg);
    };
    require(peak_lr >= 0.0 && std::isfinite(peak_lr), "peak_lr must be a finite non-negative number");
    require(warmup_frac >= 0.0 && warmup_frac < 1.0, "warmup_frac must be in [0, 1)");
    require(epochs >= 1, "epochs must be >= 1");
    require(per_step_batch >= 1, "per_step_batch must be >= 1");
    require(accum_steps >= 1, "accum_steps must be >= 1");
    require(seq_len >= 2, "seq_len must be >= 2");
    require(stage != StageKind::Dpo || beta > 0.0, "beta must be > 0 for dpo");
    require(!lora || (lora->rank >= 1 && lora->alpha > 0.0), "lora rank must be >= 1 and alpha > 0");
    require(eval_every >= 1, "eval_every must be >= 1");
    require(val_frac >= 0.0 && val_frac < 1.0, "val_frac must be in [0, 1)");
    require(weight_decay >= 0.0, "weight_decay must be >= 0");
    require(workers >= 1, "workers must be >= 1");
}

ordered_json StageConfig::to_json() const {
    ordered_json j;
    j["stage"] = to_string(stage);
    j["peak_lr"] = peak_lr;
    j["warmup_frac"] = warmup_frac;
    j["epochs"] = epochs;
    j["per_step_batch"] = per_step_batch;
    j["accum_steps"] = accum_steps;
    j["seq_len"] = seq_len;
    j["beta"] = beta;
    j["dpo_reference"] = dpo_reference;
    if (lora) {
        j["lora"] = {{"rank", lora->rank}, {"alpha", lora->alpha}};
    } else {
        j["lora"] = nullptr;
    }
    j["eval_every"] = eval_every;
    j["val_frac"] = val_frac;
    j["weight_decay"] = weight_decay;
    j["seed"] = seed;
    j["workers"] = workers;
    return j;
}

StageConfig StageConfig::from_json(const json& j, const StageConfig& base) {
    if (!j.is_object()) throw ValidationError("stage config must be a JSON object");
    StageConfig c = base;
    try {
        if (j.contains("stage")) c.stage = stage_kind_from_string(j["stage"].get<std::string>());
        c.peak_lr = j.value("peak_lr", c.peak_lr);
        c.warmup_frac = j.value("warmup_frac", c.warmup_frac);
        c.epochs = j.value("epochs", c.epochs);
        c.per_step_batch = j.value("per_step_batch", c.per_step_batch);
        c.accum_steps = j.value("accum_steps", c.accum_steps);
        c.seq_len = j.value("seq_len", c.seq_len);
        c.beta = j.value("beta", c.beta);
        c.dpo_reference = j.value("dpo_reference", c.dpo_reference);
        if (j.contains("lora")) {
            if (j["lora"].is_null()) {
                c.lora.reset();
            } else {
                LoraSpec l = c.lora.value_or(LoraSpec{});
                l.rank = j["lora"].value("rank", l.rank);
                l.alpha = j["lora"].value("alpha", l.alpha);
                c.lora = l;
            }
        }
        c.eval_every = j.value("eval_every", c.eval_every);
        c.val_frac = j.value("val_frac", c.val_frac);
        c.weight_decay = j.value("weight_decay", c.weight_decay);
        c.seed = j.value("seed", c.seed);
        c.workers = j.value("workers", c.workers);
    } catch (const json::type_error& e) {
        throw ValidationError(std::string("stage config: ") + e.what());
    }
    c.validate();
    return c;
}

double cosine_warmup_lr(long step, long total_steps, double warmup_frac, double peak) {
    if (total_steps <= 0) throw ValidationError("cosine_warmup_lr: total_steps must be positive");
    if (step < 0 || step > total_steps) throw ValidationError("cosine_warmup_lr: step out of range");
    // the small guard keeps e.g. 0.1 * 30 from rounding up to 4
    long warmup = static_cast<long>(std::ceil(warmup_frac * static_cast<double>(total_steps) - 1e-9));
    warmup = std::clamp(warmup, 0L, total_steps - 1);
    if (step < warmup) return peak * static_cast<double>(step) / static_cast<double>(warmup);
    const double progress = static_cast<double>(step - warmup) / static_cast<double>(total_steps - warmup);
    return peak * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

void adamw_step(std::span<float> params, std::span<const float> grads, const std::vector<TensorSpec>& specs,
                OptimState& st, double lr) {
    if (params.size() != grads.size()) throw ValidationError("adamw_step: parameter/gradient size mismatch");
    if (st.m.empty()) {
        st.m.assign(params.size(), 0.0f);
        st.v.assign(params.size(), 0.0f);
    }
    if (st.m.size() != params.size() || st.v.size() != params.size()) {
        throw ValidationError("adamw_step: optimizer state does not match parameters");
    }
    for (const auto& s : specs) {
        for (std::size_t i = s.offset; i < s.offset + s.size; ++i) {
            if (!std::isfinite(grads[i])) {
                throw std::runtime_error("non-finite gradient in parameter '" + s.name + "' at index " +
                                         std::to_string(i - s.offset));
            }
        }
    }
    st.t += 1;
    const double bc1 = 1.0 - std::pow(st.beta1, static_cast<double>(st.t));
    const double bc2 = 1.0 - std::pow(st.beta2, static_cast<double>(st.t));
    for (const auto& s : specs) {
        const double decay = s.decay ? st.weight_decay : 0.0;
        for (std::size_t i = s.offset; i < s.offset + s.size; ++i) {
            const double g = grads[i];
            const double m = st.beta1 * st.m[i] + (1.0 - st.beta1) * g;
            const double v = st.beta2 * st.v[i] + (1.0 - st.beta2) * g * g;
            st.m[i] = static_cast<float>(m);
            st.v[i] = static_cast<float>(v);
            const double mhat = m / bc1;
            const double vhat = v / bc2;
            const double p = params[i];
            params[i] = static_cast<float>(p - lr * (mhat / (std::sqrt(vhat) + st.eps) + decay * p));
        }
    }
}

std::string instruction_prompt(const std::string& instruction, const std::string& input) {
    return "### Instruction:\n" + instruction + "\n\n### Input:\n" + input + "\n\n### Response:\n";
}

std::vector<LmExample> pack_documents(const Tokenizer& tok, const std::vector<std::string>& docs, int seq_len) {
    std::vector<int> stream;
    for (const auto& d : docs) {
        const auto ids = tok.encode(d);
        stream.insert(stream.end(), ids.begin(), ids.end());
        stream.push_back(Tokenizer::kEos);
    }
    std::vector<LmExample> out;
    const auto L = static_cast<std::size_t>(seq_len);
    for (std::size_t start = 0; start + 1 < stream.size(); start += L) {
        const std::size_t end = std::min(stream.size(), start + L + 1);
        LmExample ex;
        ex.tokens.assign(stream.begin() + static_cast<long>(start), stream.begin() + static_cast<long>(end));
        out.push_back(std::move(ex));
    }
    return out;
}

std::optional<LmExample> build_sft_example(const Tokenizer& tok, const InstructionExample& ex, int seq_len) {
    LmExample out;
    out.tokens = tok.encode(instruction_prompt(ex.instruction, ex.input), true);
    const std::size_t response_start = out.tokens.size();
    const auto resp = tok.encode(ex.output);
    out.tokens.insert(out.tokens.end(), resp.begin(), resp.end());
    out.tokens.push_back(Tokenizer::kEos);
    if (out.tokens.size() > static_cast<std::size_t>(seq_len) + 1) return std::nullopt;
    out.mask.assign(out.tokens.size() - 1, 0);
    for (std::size_t t = response_start - 1; t < out.mask.size(); ++t) out.mask[t] = 1;
    return out;
}

std::optional<PairExample> build_preference_example(const Tokenizer& tok, const PreferencePair& pair, int seq_len) {
    const std::size_t budget = static_cast<std::size_t>(seq_len) + 1;
    auto prompt = tok.encode(instruction_prompt(pair.prompt, ""), true);
    auto chosen = tok.encode(pair.chosen);
    auto rejected = tok.encode(pair.rejected);
    chosen.push_back(Tokenizer::kEos);
    rejected.push_back(Tokenizer::kEos);
    const std::size_t longest = std::max(chosen.size(), rejected.size());
    if (prompt.size() + longest > budget) {
        // prompt keeps at least half the budget, and more when responses are short
        const std::size_t keep = std::min(prompt.size(), std::max(budget / 2, budget > longest ? budget - longest : 0));
        if (keep < 2) return std::nullopt;
        std::vector<int> cut{prompt.front()};
        cut.insert(cut.end(), prompt.end() - static_cast<long>(keep - 1), prompt.end());
        prompt = std::move(cut);
        const std::size_t room = budget - prompt.size();
        if (room < 1) return std::nullopt;
        if (chosen.size() > room) chosen.resize(room);
        if (rejected.size() > room) rejected.resize(room);
    }
    PairExample ex;
    ex.prompt_len = prompt.size();
    ex.chosen = prompt;
    ex.chosen.insert(ex.chosen.end(), chosen.begin(), chosen.end());
    ex.rejected = prompt;
    ex.rejected.insert(ex.rejected.end(), rejected.begin(), rejected.end());
    return ex;
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_validation(std::size_t n, double frac,
                                                                                std::uint64_t seed) {
    Rng rng(seed);
    auto order = shuffled_indices(n, rng);
    std::size_t n_val = 0;
    if (frac > 0.0 && n >= 2) {
        n_val = static_cast<std::size_t>(std::ceil(frac * static_cast<double>(n) - 1e-9));
        n_val = std::clamp<std::size_t>(n_val, 1, n - 1);
    }
    std::vector<std::size_t> train(order.begin(), order.end() - static_cast<long>(n_val));
    std::vector<std::size_t> val(order.end() - static_cast<long>(n_val), order.end());
    std::sort(train.begin(), train.end());
    std::sort(val.begin(), val.end());
    return {train, val};
}

namespace {

std::string fmt_double(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
}

json log_to_json(const std::vector<LogRow>& rows) {
    json a = json::array();
    for (const auto& r : rows) {
        json o;
        o["step"] = r.step;
        o["lr"] = r.lr;
        o["train_loss"] = r.train_loss ? json(*r.train_loss) : json(nullptr);
        o["val_loss"] = r.val_loss ? json(*r.val_loss) : json(nullptr);
        a.push_back(o);
    }
    return a;
}

std::vector<LogRow> log_from_json(const json& a) {
    std::vector<LogRow> rows;
    for (const auto& o : a) {
        LogRow r;
        r.step = o.at("step").get<long>();
        r.lr = o.at("lr").get<double>();
        if (!o.at("train_loss").is_null()) r.train_loss = o["train_loss"].get<double>();
        if (!o.at("val_loss").is_null()) r.val_loss = o["val_loss"].get<double>();
        rows.push_back(r);
    }
    return rows;
}

// Token-ids fingerprint so a resume cannot silently switch datasets.
std::string fingerprint(const std::vector<LmExample>& lm, const std::vector<PairExample>& pairs) {
    std::string bytes;
    auto put = [&](const std::vector<int>& v) {
        bytes.append(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(int));
        bytes.push_back('|');
    };
    for (const auto& e : lm) {
        put(e.tokens);
        bytes.append(e.mask.begin(), e.mask.end());
    }
    for (const auto& p : pairs) {
        put(p.chosen);
        put(p.rejected);
        bytes += std::to_string(p.prompt_len);
    }
    return sha256_hex(bytes);
}

json comparable_config(const StageConfig& cfg) {
    json j = json::parse(cfg.to_json().dump());
    j.erase("workers");
    return j;
}

}  // namespace

std::string training_log_csv(const std::vector<LogRow>& rows) {
    std::string out = "step,lr,train_loss,val_loss\n";
    for (const auto& r : rows) {
        out += std::to_string(r.step) + "," + fmt_double(r.lr) + "," + (r.train_loss ? fmt_double(*r.train_loss) : "") +
               "," + (r.val_loss ? fmt_double(*r.val_loss) : "") + "\n";
    }
    return out;
}

TrainResult train_stage(const Tokenizer& tok, const Checkpoint& init, const StageData& data, const StageConfig& cfg,
                        const TrainOptions& opts) {
    cfg.validate();
    if (cfg.seq_len > init.params.config.context_length) {
        throw ValidationError("stage config: seq_len " + std::to_string(cfg.seq_len) + " exceeds model context " +
                              std::to_string(init.params.config.context_length));
    }
    if (tok.vocab_size() > init.params.config.vocab_size) {
        throw ValidationError("tokenizer vocabulary is larger than the model vocabulary");
    }
    const std::uint64_t split_seed = derive_seed(cfg.seed, "split");
    TrainResult result;

    // ---- data
    std::vector<LmExample> lm_train, lm_val;
    std::vector<PairExample> pr_train, pr_val;
    const bool is_dpo = cfg.stage == StageKind::Dpo;
    switch (cfg.stage) {
        case StageKind::Dapt: {
            const auto* docs = std::get_if<std::vector<std::string>>(&data);
            if (docs == nullptr) throw ValidationError("dapt stage expects a document corpus");
            if (docs->empty()) throw ValidationError("dapt stage: dataset is empty");
            auto [tr, va] = split_validation(docs->size(), cfg.val_frac, split_seed);
            std::vector<std::string> tdocs, vdocs;
            for (auto i : tr) tdocs.push_back((*docs)[i]);
            for (auto i : va) vdocs.push_back((*docs)[i]);
            lm_train = pack_documents(tok, tdocs, cfg.seq_len);
            lm_val = pack_documents(tok, vdocs, cfg.seq_len);
            break;
        }
        case StageKind::Dsft: {
            const auto* exs = std::get_if<std::vector<InstructionExample>>(&data);
            if (exs == nullptr) throw ValidationError("sft stage expects instruction examples");
            std::vector<LmExample> built;
            for (std::size_t i = 0; i < exs->size(); ++i) {
                auto e = build_sft_example(tok, (*exs)[i], cfg.seq_len);
                if (e) {
                    built.push_back(std::move(*e));
                } else {
                    result.skipped.push_back({i, "longer than seq_len"});
                }
            }
            auto [tr, va] = split_validation(built.size(), cfg.val_frac, split_seed);
            for (auto i : tr) lm_train.push_back(built[i]);
            for (auto i : va) lm_val.push_back(built[i]);
            break;
        }
        case StageKind::Dpo: {
            const auto* prs = std::get_if<std::vector<PreferencePair>>(&data);
            if (prs == nullptr) throw ValidationError("dpo stage expects preference pairs");
            std::vector<PairExample> built;
            for (std::size_t i = 0; i < prs->size(); ++i) {
                auto e = build_preference_example(tok, (*prs)[i], cfg.seq_len);
                if (e) {
                    built.push_back(std::move(*e));
                } else {
                    result.skipped.push_back({i, "does not fit seq_len after truncation"});
                }
            }
            auto [tr, va] = split_validation(built.size(), cfg.val_frac, split_seed);
            for (auto i : tr) pr_train.push_back(built[i]);
            for (auto i : va) pr_val.push_back(built[i]);
            break;
        }
    }
    const std::size_t n_train = is_dpo ? pr_train.size() : lm_train.size();
    if (n_train == 0) throw ValidationError(to_string(cfg.stage) + " stage: no usable training examples");
    result.train_examples = n_train;
    result.val_examples = is_dpo ? pr_val.size() : lm_val.size();
    const std::string data_sha = fingerprint(lm_train, pr_train) + fingerprint(lm_val, pr_val);

    // ---- model
    ModelParams<float> params = inference_params(init);
    std::optional<LoraAdapters<float>> lora;
    if (cfg.lora) lora = lora_attach(params, cfg.lora->rank, cfg.lora->alpha, derive_seed(cfg.seed, "lora"));
    const LoraAdapters<float>* lp = lora ? &*lora : nullptr;

    // reference log-probs come from the policy at the start of the stage
    std::vector<DpoReference> ref_train, ref_val;
    auto compute_refs = [&](const std::vector<PairExample>& prs, std::vector<DpoReference>& out) {
        out.resize(prs.size());
        parallel_for(prs.size(), cfg.workers, [&](std::size_t i) {
            out[i].lp_pos = response_log_prob(params, lp, std::span<const int>(prs[i].chosen), prs[i].prompt_len);
            out[i].lp_neg = response_log_prob(params, lp, std::span<const int>(prs[i].rejected), prs[i].prompt_len);
        });
    };

    OptimState opt;
    opt.weight_decay = cfg.weight_decay;
    const long batch = static_cast<long>(cfg.per_step_batch) * cfg.accum_steps;
    const long steps_per_epoch = (static_cast<long>(n_train) + batch - 1) / batch;
    const long total = steps_per_epoch * cfg.epochs;
    Rng shuffle_rng(derive_seed(cfg.seed, "shuffle"));
    long step = 0;
    int start_epoch = 0;
    long epoch_start_step = 0;
    std::vector<LogRow> log;

    auto val_loss = [&]() -> std::optional<double> {
        if (is_dpo) {
            if (pr_val.empty()) return std::nullopt;
            std::vector<double> losses(pr_val.size());
            parallel_for(pr_val.size(), cfg.workers, [&](std::size_t i) {
                std::optional<DpoReference> ref;
                if (cfg.dpo_reference) ref = ref_val[i];
                losses[i] = dpo_loss_and_grad(params, lp, pr_val[i], cfg.beta, ref).loss;
            });
            double s = 0.0;
            for (double l : losses) s += l;
            return s / static_cast<double>(losses.size());
        }
        if (lm_val.empty()) return std::nullopt;
        std::vector<double> sums(lm_val.size()), counts(lm_val.size());
        parallel_for(lm_val.size(), cfg.workers, [&](std::size_t i) {
            const auto& ex = lm_val[i];
            const double n = ex.mask.empty() ? static_cast<double>(ex.tokens.size() - 1)
                                             : static_cast<double>(std::count(ex.mask.begin(), ex.mask.end(), 1));
            sums[i] = lm_loss_and_grad(params, lp, ex) * n;
            counts[i] = n;
        });
        double s = 0.0, c = 0.0;
        for (std::size_t i = 0; i < sums.size(); ++i) {
            s += sums[i];
            c += counts[i];
        }
        return s / c;
    };

    if (opts.resume_from) {
        Checkpoint ck = load_checkpoint(*opts.resume_from, &init.params.config);
        const json& meta = ck.meta;
        if (ck.stage != to_string(cfg.stage)) {
            throw ValidationError("cannot resume: checkpoint stage '" + ck.stage + "' differs from '" +
                                  to_string(cfg.stage) + "'");
        }
        if (meta.value("stage_config", json()) != comparable_config(cfg)) {
            throw ValidationError("cannot resume: stage config differs from the checkpoint's");
        }
        if (meta.value("data_sha", std::string()) != data_sha) {
            throw ValidationError("cannot resume: training data differs from the checkpoint's");
        }
        if (ck.lora.has_value() != lora.has_value()) throw ValidationError("cannot resume: adapter mismatch");
        params = ck.params;
        if (lora) {
            lora = *ck.lora;
            lp = &*lora;
        }
        opt.m = ck.opt_m;
        opt.v = ck.opt_v;
        opt.t = ck.opt_t;
        step = ck.step;
        start_epoch = meta.at("epoch").get<int>();
        epoch_start_step = meta.at("epoch_start_step").get<long>();
        shuffle_rng = deserialize_rng(ck.rng_state);
        log = log_from_json(meta.at("log"));
        if (cfg.dpo_reference) {
            for (const auto& r : meta.at("ref_train")) ref_train.push_back({r.at(0).get<double>(), r.at(1).get<double>()});
            for (const auto& r : meta.at("ref_val")) ref_val.push_back({r.at(0).get<double>(), r.at(1).get<double>()});
        }
    } else {
        if (cfg.dpo_reference) {
            compute_refs(pr_train, ref_train);
            compute_refs(pr_val, ref_val);
        }
        log.push_back({0, cosine_warmup_lr(0, total, cfg.warmup_frac, cfg.peak_lr), std::nullopt, val_loss()});
    }

    std::string epoch_rng_state = serialize_rng(shuffle_rng);
    int epoch = start_epoch;
    auto snapshot = [&]() {
        Checkpoint ck;
        ck.stage = to_string(cfg.stage);
        ck.step = step;
        ck.rng_state = epoch_rng_state;
        ck.params = params;
        ck.lora = lora;
        ck.opt_m = opt.m;
        ck.opt_v = opt.v;
        ck.opt_t = opt.t;
        json meta;
        meta["epoch"] = epoch;
        meta["epoch_start_step"] = epoch_start_step;
        meta["stage_config"] = comparable_config(cfg);
        meta["data_sha"] = data_sha;
        meta["log"] = log_to_json(log);
        if (cfg.dpo_reference) {
            json rt = json::array(), rv = json::array();
            for (const auto& r : ref_train) rt.push_back({r.lp_pos, r.lp_neg});
            for (const auto& r : ref_val) rv.push_back({r.lp_pos, r.lp_neg});
            meta["ref_train"] = rt;
            meta["ref_val"] = rv;
        }
        meta["completed"] = step == total;
        ck.meta = meta;
        return ck;
    };

    // ---- optimisation
    const std::size_t n_trainable = lora ? lora->data.size() : params.data.size();
    const std::vector<TensorSpec>& specs = lora ? lora->tensors : params.layout.tensors;
    const std::size_t slots = static_cast<std::size_t>(std::min<long>(batch, cfg.workers));
    std::vector<ModelParams<float>> pgrad;
    std::vector<LoraAdapters<float>> lgrad;
    for (std::size_t s = 0; s < slots; ++s) {
        if (lora) {
            lgrad.push_back(lora->zeros_like());
        } else {
            pgrad.push_back(params.zeros_like());
        }
    }
    std::vector<float> acc(n_trainable);
    std::vector<double> seq_loss(slots);

    for (; epoch < cfg.epochs; ++epoch) {
        if (epoch != start_epoch || !opts.resume_from) {
            epoch_start_step = step;
        }
        epoch_rng_state = serialize_rng(shuffle_rng);
        const auto order = shuffled_indices(n_train, shuffle_rng);
        for (long b = step - epoch_start_step; b < steps_per_epoch; ++b) {
            const std::size_t lo = static_cast<std::size_t>(b * batch);
            const std::size_t hi = std::min(n_train, lo + static_cast<std::size_t>(batch));
            const double lr = cosine_warmup_lr(step, total, cfg.warmup_frac, cfg.peak_lr);
            std::fill(acc.begin(), acc.end(), 0.0f);
            double loss_sum = 0.0;
            for (std::size_t chunk = lo; chunk < hi; chunk += slots) {
                const std::size_t n = std::min(slots, hi - chunk);
                parallel_for(n, cfg.workers, [&](std::size_t s) {
                    const std::size_t idx = order[chunk + s];
                    ModelParams<float>* g = lora ? nullptr : &pgrad[s];
                    LoraAdapters<float>* lg = lora ? &lgrad[s] : nullptr;
                    if (g != nullptr) std::fill(g->data.begin(), g->data.end(), 0.0f);
                    if (lg != nullptr) std::fill(lg->data.begin(), lg->data.end(), 0.0f);
                    if (is_dpo) {
                        std::optional<DpoReference> ref;
                        if (cfg.dpo_reference) ref = ref_train[idx];
                        seq_loss[s] = dpo_loss_and_grad(params, lp, pr_train[idx], cfg.beta, ref, g, lg).loss;
                    } else {
                        seq_loss[s] = lm_loss_and_grad(params, lp, lm_train[idx], g, lg);
                    }
                });
                for (std::size_t s = 0; s < n; ++s) {
                    const std::vector<float>& g = lora ? lgrad[s].data : pgrad[s].data;
                    for (std::size_t i = 0; i < n_trainable; ++i) acc[i] += g[i];
                    loss_sum += seq_loss[s];
                }
            }
            const float inv = 1.0f / static_cast<float>(hi - lo);
            for (auto& g : acc) g *= inv;
            adamw_step(lora ? std::span<float>(lora->data) : std::span<float>(params.data), acc, specs, opt, lr);
            ++step;
            LogRow row{step, lr, loss_sum / static_cast<double>(hi - lo), std::nullopt};
            if (step % cfg.eval_every == 0 || step == total) row.val_loss = val_loss();
            log.push_back(row);

            if (!opts.checkpoint_dir.empty() && opts.checkpoint_every > 0 && step % opts.checkpoint_every == 0) {
                std::filesystem::create_directories(opts.checkpoint_dir);
                save_checkpoint(snapshot(), opts.checkpoint_dir + "/" + to_string(cfg.stage) + "-step" +
                                                std::to_string(step) + ".ckpt");
            }
            if (step == opts.stop_after_step) {
                result.checkpoint = snapshot();
                result.log = log;
                return result;
            }
        }
    }
    result.checkpoint = snapshot();
    result.log = log;
    return result;
}

}  // namespace dslm
