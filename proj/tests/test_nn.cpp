#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "dslm/checkpoint.hpp"
#include "dslm/grad_check.hpp"
#include "dslm/losses.hpp"

using namespace dslm;

namespace {

ModelConfig tiny_config() {
    ModelConfig c;
    c.vocab_size = 270;
    c.context_length = 16;
    c.d_model = 16;
    c.n_layers = 2;
    c.n_heads = 2;
    c.d_ff = 32;
    return c;
}

// Random weights with a larger scale than the initializer so every path carries signal.
template <class T>
ModelParams<T> random_model(std::uint64_t seed) {
    auto p = init_model<T>(tiny_config(), seed);
    Rng rng(seed + 100);
    for (auto& x : p.data) x += static_cast<T>(0.1 * standard_normal(rng));
    return p;
}

using Matd = std::vector<std::vector<double>>;

Matd matmul(const Matd& x, std::span<const double> w, std::size_t n) {
    Matd out(x.size(), std::vector<double>(n, 0.0));
    for (std::size_t t = 0; t < x.size(); ++t) {
        for (std::size_t j = 0; j < n; ++j) {
            for (std::size_t i = 0; i < x[t].size(); ++i) out[t][j] += x[t][i] * w[i * n + j];
        }
    }
    return out;
}

void add_bias(Matd& x, std::span<const double> b) {
    for (auto& row : x) {
        for (std::size_t j = 0; j < row.size(); ++j) row[j] += b[j];
    }
}

Matd layer_norm(const Matd& x, std::span<const double> g, std::span<const double> b, double eps) {
    Matd out = x;
    for (std::size_t t = 0; t < x.size(); ++t) {
        double mean = 0, var = 0;
        for (double v : x[t]) mean += v;
        mean /= static_cast<double>(x[t].size());
        for (double v : x[t]) var += (v - mean) * (v - mean);
        var /= static_cast<double>(x[t].size());
        for (std::size_t i = 0; i < x[t].size(); ++i) out[t][i] = (x[t][i] - mean) / std::sqrt(var + eps) * g[i] + b[i];
    }
    return out;
}

// Straightforward pre-LN decoder written from the architecture description.
Matd reference_forward(const ModelParams<double>& p, const std::vector<int>& ids) {
    const auto& c = p.config;
    const std::size_t d = static_cast<std::size_t>(c.d_model), H = static_cast<std::size_t>(c.n_heads),
                      hs = d / H, T = ids.size();
    Matd x(T, std::vector<double>(d));
    for (std::size_t t = 0; t < T; ++t) {
        for (std::size_t i = 0; i < d; ++i) {
            x[t][i] = p.tensor("wte")[static_cast<std::size_t>(ids[t]) * d + i] + p.tensor("wpe")[t * d + i];
        }
    }
    for (int l = 0; l < c.n_layers; ++l) {
        const std::string pre = "layers." + std::to_string(l) + ".";
        const Matd h = layer_norm(x, p.tensor(pre + "ln1.weight"), p.tensor(pre + "ln1.bias"), c.ln_eps);
        Matd q = matmul(h, p.tensor(pre + "attn.q.weight"), d);
        add_bias(q, p.tensor(pre + "attn.q.bias"));
        const Matd k = matmul(h, p.tensor(pre + "attn.k.weight"), d);
        Matd v = matmul(h, p.tensor(pre + "attn.v.weight"), d);
        add_bias(v, p.tensor(pre + "attn.v.bias"));
        Matd att(T, std::vector<double>(d, 0.0));
        for (std::size_t head = 0; head < H; ++head) {
            for (std::size_t t = 0; t < T; ++t) {
                std::vector<double> s(t + 1);
                double mx = -1e300;
                for (std::size_t u = 0; u <= t; ++u) {
                    double dot = 0;
                    for (std::size_t i = 0; i < hs; ++i) dot += q[t][head * hs + i] * k[u][head * hs + i];
                    s[u] = dot / std::sqrt(static_cast<double>(hs));
                    mx = std::max(mx, s[u]);
                }
                double z = 0;
                for (auto& e : s) z += (e = std::exp(e - mx));
                for (std::size_t u = 0; u <= t; ++u) {
                    for (std::size_t i = 0; i < hs; ++i) att[t][head * hs + i] += s[u] / z * v[u][head * hs + i];
                }
            }
        }
        Matd o = matmul(att, p.tensor(pre + "attn.o.weight"), d);
        add_bias(o, p.tensor(pre + "attn.o.bias"));
        for (std::size_t t = 0; t < T; ++t) {
            for (std::size_t i = 0; i < d; ++i) x[t][i] += o[t][i];
        }
        const Matd h2 = layer_norm(x, p.tensor(pre + "ln2.weight"), p.tensor(pre + "ln2.bias"), c.ln_eps);
        Matd f = matmul(h2, p.tensor(pre + "mlp.fc.weight"), static_cast<std::size_t>(c.d_ff));
        add_bias(f, p.tensor(pre + "mlp.fc.bias"));
        for (auto& row : f) {
            for (auto& e : row) e = 0.5 * e * (1.0 + std::tanh(std::sqrt(2.0 / M_PI) * (e + 0.044715 * e * e * e)));
        }
        Matd m = matmul(f, p.tensor(pre + "mlp.proj.weight"), d);
        add_bias(m, p.tensor(pre + "mlp.proj.bias"));
        for (std::size_t t = 0; t < T; ++t) {
            for (std::size_t i = 0; i < d; ++i) x[t][i] += m[t][i];
        }
    }
    const Matd hf = layer_norm(x, p.tensor("lnf.weight"), p.tensor("lnf.bias"), c.ln_eps);
    return matmul(hf, p.tensor("head.weight"), static_cast<std::size_t>(c.vocab_size));
}

double log_softmax_at(std::span<const double> row, int target) {
    double mx = -1e300;
    for (double v : row) mx = std::max(mx, v);
    double z = 0;
    for (double v : row) z += std::exp(v - mx);
    return row[static_cast<std::size_t>(target)] - mx - std::log(z);
}

std::vector<double> row_of(const Mat<double>& m, std::size_t r) { return {m.row(r), m.row(r) + m.cols}; }

}  // namespace

TEST_CASE("forward pass matches a naive reference implementation") {
    const auto p = random_model<double>(1);
    const std::vector<int> ids{3, 7, 1, 39, 0, 12};
    const auto logits = forward(p, ids);
    const auto ref = reference_forward(p, ids);
    double max_err = 0;
    for (std::size_t t = 0; t < ids.size(); ++t) {
        for (std::size_t j = 0; j < logits.cols; ++j) max_err = std::max(max_err, std::abs(logits(t, j) - ref[t][j]));
    }
    CHECK(max_err < 1e-10);
}

TEST_CASE("attention is causal") {
    const auto p = random_model<double>(2);
    const auto a = forward(p, std::vector<int>{1, 2, 3, 4});
    const auto b = forward(p, std::vector<int>{1, 2, 3, 9});
    for (std::size_t t = 0; t < 3; ++t) {
        for (std::size_t j = 0; j < a.cols; ++j) CHECK(a(t, j) == b(t, j));
    }
}

TEST_CASE("forward rejects bad inputs") {
    const auto p = random_model<float>(3);
    CHECK_THROWS_AS(forward(p, std::vector<int>{}), ValidationError);
    CHECK_THROWS_AS(forward(p, std::vector<int>{270}), ValidationError);
    CHECK_THROWS_AS(forward(p, std::vector<int>(17, 1)), ValidationError);
}

TEST_CASE("model config validation") {
    ModelConfig c = tiny_config();
    c.n_heads = 3;
    CHECK_THROWS_AS(c.validate(), ValidationError);
    c = tiny_config();
    CHECK(ModelConfig::from_json(json::parse(c.to_json().dump())) == c);
}

TEST_CASE("fresh LoRA adapters leave the model unchanged and merge exactly") {
    const auto p = random_model<double>(4);
    auto lora = lora_attach(p, 4, 8.0, 5);
    const std::vector<int> ids{5, 6, 7, 8};
    const auto base = forward(p, ids);
    const auto with = forward(p, ids, &lora);
    for (std::size_t i = 0; i < base.data.size(); ++i) CHECK(base.data[i] == with.data[i]);

    Rng rng(6);
    for (auto& x : lora.data) x += 0.05 * standard_normal(rng);
    const auto adapted = forward(p, ids, &lora);
    const auto merged = forward(lora_merge(p, lora), ids);
    double max_err = 0, changed = 0;
    for (std::size_t i = 0; i < adapted.data.size(); ++i) {
        max_err = std::max(max_err, std::abs(adapted.data[i] - merged.data[i]));
        changed = std::max(changed, std::abs(adapted.data[i] - base.data[i]));
    }
    CHECK(max_err < 1e-10);
    CHECK(changed > 1e-4);
}

TEST_CASE("clm loss is the mean negative log-likelihood") {
    const auto p = random_model<double>(7);
    const std::vector<int> ids{1, 2, 3, 4, 5};
    const std::vector<int> targets{2, 3, 4, 5, 6};
    const auto logits = forward(p, ids);
    double nll = 0;
    for (std::size_t t = 0; t < targets.size(); ++t) nll -= log_softmax_at(row_of(logits, t), targets[t]);
    CHECK(clm_loss(logits, targets) == doctest::Approx(nll / 5.0).epsilon(1e-12));
    CHECK(clm_loss_sum(logits, targets) == doctest::Approx(nll).epsilon(1e-12));
}

TEST_CASE("sft loss averages only the masked positions") {
    const auto p = random_model<double>(8);
    const std::vector<int> ids{1, 2, 3, 4, 5};
    const std::vector<int> targets{2, 3, 4, 5, 6};
    const std::vector<std::uint8_t> mask{0, 0, 1, 1, 0};
    const auto logits = forward(p, ids);
    const double expect = -(log_softmax_at(row_of(logits, 2), 4) + log_softmax_at(row_of(logits, 3), 5)) / 2.0;
    CHECK(sft_loss(logits, targets, mask) == doctest::Approx(expect).epsilon(1e-12));
    const std::vector<std::uint8_t> all(5, 1);
    CHECK(sft_loss(logits, targets, all) == clm_loss(logits, targets));
    CHECK_THROWS_AS(sft_loss(logits, targets, std::vector<std::uint8_t>(5, 0)), ValidationError);
}

TEST_CASE("uniform logits give ln V") {
    Mat<double> logits(4, 50);
    const std::vector<int> targets{0, 10, 20, 49};
    CHECK(std::abs(clm_loss(logits, targets) - std::log(50.0)) < 1e-12);
}

TEST_CASE("dpo loss follows the logistic form") {
    const auto r = dpo_loss(-3.0, -5.0, 0.5);
    const double z = 0.5 * 2.0;
    CHECK(r.loss == doctest::Approx(std::log1p(std::exp(-z))).epsilon(1e-14));
    CHECK(r.margin == doctest::Approx(z));
    CHECK(r.dlp_pos == doctest::Approx(-0.5 / (1.0 + std::exp(z))).epsilon(1e-14));
    CHECK(r.dlp_neg == doctest::Approx(0.5 / (1.0 + std::exp(z))).epsilon(1e-14));
    CHECK(std::abs(dpo_loss(-4.0, -4.0, 0.1).loss - std::log(2.0)) < 1e-15);
    const auto ref = dpo_loss(-3.0, -5.0, 0.5, -2.0, -6.0);
    CHECK(ref.margin == doctest::Approx(0.5 * ((-3.0 + 2.0) - (-5.0 + 6.0))));
    CHECK(std::isfinite(dpo_loss(-1e6, 0.0, 1.0).loss));
}

TEST_CASE("sequence log-prob sums target-token log-probabilities") {
    const auto p = random_model<double>(9);
    const std::vector<int> ctx{1, 2, 3}, tgt{4, 5};
    const std::vector<int> all{1, 2, 3, 4, 5};
    const auto logits = forward(p, all);
    const double expect = log_softmax_at(row_of(logits, 2), 4) + log_softmax_at(row_of(logits, 3), 5);
    CHECK(sequence_log_prob(p, ctx, tgt) == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("analytic gradients agree with finite differences") {
    const auto p32 = random_model<float>(10);
    const auto p64 = p32.cast<double>();
    LmExample clm;
    for (int i = 0; i < 12; ++i) clm.tokens.push_back((i * 7) % 40);
    LmExample sft = clm;
    sft.mask.assign(11, 0);
    for (int i = 5; i < 11; ++i) sft.mask[static_cast<std::size_t>(i)] = 1;
    DpoCheck dpo;
    dpo.pair.prompt_len = 5;
    dpo.pair.chosen = {1, 2, 3, 4, 5, 6, 7, 8};
    dpo.pair.rejected = {1, 2, 3, 4, 5, 9, 10, 11, 12};
    for (const LossSpec& spec : {LossSpec(clm), LossSpec(sft), LossSpec(dpo)}) {
        CHECK(grad_check(p32, nullptr, spec).max_rel_error < 1e-3);
        CHECK(grad_check(p64, nullptr, spec).max_rel_error < 1e-6);
    }
    auto lora = lora_attach(p32, 4, 8.0, 3);
    Rng rng(11);
    for (auto& x : lora.data) x += static_cast<float>(0.05 * standard_normal(rng));
    GradCheckOptions o;
    o.target = GradTarget::Adapters;
    CHECK(grad_check(p32, &lora, LossSpec(dpo), o).max_rel_error < 1e-3);
    const auto lora64 = lora.cast<double>();
    CHECK(grad_check(p64, &lora64, LossSpec(dpo), o).max_rel_error < 1e-6);
}

TEST_CASE("checkpoints round-trip bit for bit") {
    Checkpoint ck;
    ck.stage = "dapt";
    ck.step = 7;
    ck.params = random_model<float>(12);
    ck.lora = lora_attach(ck.params, 2, 4.0, 1);
    ck.opt_m.assign(ck.params.data.size(), 0.25f);
    ck.opt_v.assign(ck.params.data.size(), 0.5f);
    ck.opt_t = 7;
    ck.meta = {{"note", "x"}};
    Rng rng(1);
    ck.rng_state = serialize_rng(rng);
    const auto path = (std::filesystem::temp_directory_path() / "dslm_ckpt_test.ckpt").string();
    save_checkpoint(ck, path);
    const auto back = load_checkpoint(path);
    CHECK(back.stage == "dapt");
    CHECK(back.step == 7);
    CHECK(back.params.data == ck.params.data);
    CHECK(back.params.config == ck.params.config);
    REQUIRE(back.lora);
    CHECK(back.lora->data == ck.lora->data);
    CHECK(back.opt_m == ck.opt_m);
    CHECK(back.opt_v == ck.opt_v);
    CHECK(back.meta == ck.meta);
    CHECK(back.rng_state == ck.rng_state);

    ModelConfig other = tiny_config();
    other.d_model = 32;
    CHECK_THROWS_AS(load_checkpoint(path, &other), ValidationError);

    std::string bytes = read_file(path);
    bytes[0] = 'X';
    write_file(path, bytes);
    CHECK_THROWS_AS(load_checkpoint(path), ValidationError);
    std::filesystem::remove(path);
}

TEST_CASE("inference params fold adapters into the base weights") {
    Checkpoint ck;
    ck.params = random_model<float>(13);
    ck.lora = lora_attach(ck.params, 2, 4.0, 1);
    Rng rng(2);
    for (auto& x : ck.lora->data) x += static_cast<float>(0.05 * standard_normal(rng));
    const auto merged = inference_params(ck);
    const std::vector<int> ids{1, 2, 3};
    const auto a = forward(ck.params, ids, &*ck.lora);
    const auto b = forward(merged, ids);
    for (std::size_t i = 0; i < a.data.size(); ++i) CHECK(a.data[i] == doctest::Approx(b.data[i]).epsilon(1e-4));
}
