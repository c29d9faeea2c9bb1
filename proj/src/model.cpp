#include "dslm/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace dslm {

void ModelConfig::validate() const {
    auto require = [](bool ok, const std::string& msg) {
        if (!ok) throw ValidationError("model config: " + msg);
    };
    require(vocab_size >= 259, "vocab_size must be >= 259");
    require(context_length >= 2, "context_length must be >= 2");
    require(d_model >= 1, "d_model must be >= 1");
    require(n_layers >= 1, "n_layers must be >= 1");
    require(n_heads >= 1, "n_heads must be >= 1");
    require(d_model % n_heads == 0, "d_model must be divisible by n_heads");
    require(d_ff >= 1, "d_ff must be >= 1");
    require(ln_eps > 0.0, "ln_eps must be positive");
}

ordered_json ModelConfig::to_json() const {
    ordered_json j;
    j["vocab_size"] = vocab_size;
    j["context_length"] = context_length;
    j["d_model"] = d_model;
    j["n_layers"] = n_layers;
    j["n_heads"] = n_heads;
    j["d_ff"] = d_ff;
    j["ln_eps"] = ln_eps;
    return j;
}

ModelConfig ModelConfig::from_json(const json& j) {
    ModelConfig c;
    c.vocab_size = j.value("vocab_size", c.vocab_size);
    c.context_length = j.value("context_length", c.context_length);
    c.d_model = j.value("d_model", c.d_model);
    c.n_layers = j.value("n_layers", c.n_layers);
    c.n_heads = j.value("n_heads", c.n_heads);
    c.d_ff = j.value("d_ff", c.d_ff);
    c.ln_eps = j.value("ln_eps", c.ln_eps);
    c.validate();
    return c;
}

ParamLayout ParamLayout::build(const ModelConfig& cfg) {
    cfg.validate();
    ParamLayout L;
    const auto V = static_cast<std::size_t>(cfg.vocab_size);
    const auto C = static_cast<std::size_t>(cfg.context_length);
    const auto d = static_cast<std::size_t>(cfg.d_model);
    const auto f = static_cast<std::size_t>(cfg.d_ff);
    auto add = [&](std::string name, std::vector<std::size_t> shape, bool decay) {
        std::size_t n = 1;
        for (auto s : shape) n *= s;
        L.tensors.push_back({std::move(name), std::move(shape), L.total, n, decay});
        L.total += n;
        return L.tensors.back().offset;
    };
    L.wte = add("wte", {V, d}, true);
    L.wpe = add("wpe", {C, d}, true);
    for (int l = 0; l < cfg.n_layers; ++l) {
        const std::string p = "layers." + std::to_string(l) + ".";
        LayerSlots s{};
        s.ln1_g = add(p + "ln1.weight", {d}, false);
        s.ln1_b = add(p + "ln1.bias", {d}, false);
        s.wq = add(p + "attn.q.weight", {d, d}, true);
        s.bq = add(p + "attn.q.bias", {d}, false);
        s.wk = add(p + "attn.k.weight", {d, d}, true);
        s.wv = add(p + "attn.v.weight", {d, d}, true);
        s.bv = add(p + "attn.v.bias", {d}, false);
        s.wo = add(p + "attn.o.weight", {d, d}, true);
        s.bo = add(p + "attn.o.bias", {d}, false);
        s.ln2_g = add(p + "ln2.weight", {d}, false);
        s.ln2_b = add(p + "ln2.bias", {d}, false);
        s.w_fc = add(p + "mlp.fc.weight", {d, f}, true);
        s.b_fc = add(p + "mlp.fc.bias", {f}, false);
        s.w_proj = add(p + "mlp.proj.weight", {f, d}, true);
        s.b_proj = add(p + "mlp.proj.bias", {d}, false);
        L.layers.push_back(s);
    }
    L.lnf_g = add("lnf.weight", {d}, false);
    L.lnf_b = add("lnf.bias", {d}, false);
    L.head = add("head.weight", {d, V}, true);
    return L;
}

const TensorSpec& ParamLayout::find(const std::string& name) const {
    for (const auto& t : tensors) {
        if (t.name == name) return t;
    }
    throw ValidationError("unknown parameter '" + name + "'");
}

template <class T>
std::span<T> ModelParams<T>::tensor(const std::string& name) {
    const auto& t = layout.find(name);
    return {data.data() + t.offset, t.size};
}

template <class T>
std::span<const T> ModelParams<T>::tensor(const std::string& name) const {
    const auto& t = layout.find(name);
    return {data.data() + t.offset, t.size};
}

template <class T>
ModelParams<T> ModelParams<T>::zeros_like() const {
    ModelParams out;
    out.config = config;
    out.layout = layout;
    out.data.assign(data.size(), T(0));
    return out;
}

template <class T>
LoraAdapters<T> LoraAdapters<T>::zeros_like() const {
    LoraAdapters out = *this;
    std::fill(out.data.begin(), out.data.end(), T(0));
    return out;
}

double gelu(double x) {
    constexpr double c = 0.7978845608028654;  // sqrt(2/pi)
    return 0.5 * x * (1.0 + std::tanh(c * (x + 0.044715 * x * x * x)));
}

namespace {

// out[t, :] = in[t, :] * W + b   (W is [m x n])
template <class T>
void linear(Mat<T>& out, const Mat<T>& in, const T* W, const T* b, std::size_t n) {
    const std::size_t m = in.cols;
    out = Mat<T>(in.rows, n);
    for (std::size_t t = 0; t < in.rows; ++t) {
        T* o = out.row(t);
        if (b != nullptr) {
            for (std::size_t j = 0; j < n; ++j) o[j] = b[j];
        }
        const T* x = in.row(t);
        for (std::size_t i = 0; i < m; ++i) {
            const T xi = x[i];
            const T* w = W + i * n;
            for (std::size_t j = 0; j < n; ++j) o[j] += xi * w[j];
        }
    }
}

// din += dout * W^T ; dW += in^T * dout ; db += colsum(dout)
template <class T>
void linear_backward(const Mat<T>& dout, const Mat<T>& in, const T* W, Mat<T>* din, T* dW, T* db) {
    const std::size_t m = in.cols, n = dout.cols;
    for (std::size_t t = 0; t < dout.rows; ++t) {
        const T* g = dout.row(t);
        if (din != nullptr) {
            T* dx = din->row(t);
            for (std::size_t i = 0; i < m; ++i) {
                const T* w = W + i * n;
                T acc = 0;
                for (std::size_t j = 0; j < n; ++j) acc += g[j] * w[j];
                dx[i] += acc;
            }
        }
        if (dW != nullptr) {
            const T* x = in.row(t);
            for (std::size_t i = 0; i < m; ++i) {
                const T xi = x[i];
                T* dw = dW + i * n;
                for (std::size_t j = 0; j < n; ++j) dw[j] += xi * g[j];
            }
        }
        if (db != nullptr) {
            for (std::size_t j = 0; j < n; ++j) db[j] += g[j];
        }
    }
}

template <class T>
void layernorm(Mat<T>& out, std::vector<T>& mean, std::vector<T>& rstd, const Mat<T>& in, const T* g, const T* b,
               double eps) {
    const std::size_t d = in.cols;
    out = Mat<T>(in.rows, d);
    mean.assign(in.rows, T(0));
    rstd.assign(in.rows, T(0));
    for (std::size_t t = 0; t < in.rows; ++t) {
        const T* x = in.row(t);
        T m = 0;
        for (std::size_t i = 0; i < d; ++i) m += x[i];
        m /= static_cast<T>(d);
        T var = 0;
        for (std::size_t i = 0; i < d; ++i) var += (x[i] - m) * (x[i] - m);
        var /= static_cast<T>(d);
        const T rs = T(1) / std::sqrt(var + static_cast<T>(eps));
        T* o = out.row(t);
        for (std::size_t i = 0; i < d; ++i) o[i] = (x[i] - m) * rs * g[i] + b[i];
        mean[t] = m;
        rstd[t] = rs;
    }
}

template <class T>
void layernorm_backward(const Mat<T>& dout, const Mat<T>& in, const std::vector<T>& mean, const std::vector<T>& rstd,
                        const T* g, Mat<T>& din, T* dg, T* db) {
    const std::size_t d = in.cols;
    for (std::size_t t = 0; t < in.rows; ++t) {
        const T* x = in.row(t);
        const T* dy = dout.row(t);
        T sum_dyg = 0, sum_dyg_xhat = 0;
        for (std::size_t i = 0; i < d; ++i) {
            const T xhat = (x[i] - mean[t]) * rstd[t];
            const T dyg = dy[i] * g[i];
            sum_dyg += dyg;
            sum_dyg_xhat += dyg * xhat;
            if (dg != nullptr) dg[i] += dy[i] * xhat;
            if (db != nullptr) db[i] += dy[i];
        }
        sum_dyg /= static_cast<T>(d);
        sum_dyg_xhat /= static_cast<T>(d);
        T* dx = din.row(t);
        for (std::size_t i = 0; i < d; ++i) {
            const T xhat = (x[i] - mean[t]) * rstd[t];
            dx[i] += rstd[t] * (dy[i] * g[i] - sum_dyg - xhat * sum_dyg_xhat);
        }
    }
}

// out += scale * (in * A^T) * B^T ; u = in * A^T saved for backward
template <class T>
void lora_forward(Mat<T>& out, Mat<T>& u, const Mat<T>& in, const T* A, const T* B, std::size_t r, T scale) {
    const std::size_t din = in.cols, dout = out.cols;
    u = Mat<T>(in.rows, r);
    for (std::size_t t = 0; t < in.rows; ++t) {
        const T* x = in.row(t);
        T* ut = u.row(t);
        for (std::size_t k = 0; k < r; ++k) {
            const T* a = A + k * din;
            T acc = 0;
            for (std::size_t i = 0; i < din; ++i) acc += a[i] * x[i];
            ut[k] = acc;
        }
        T* o = out.row(t);
        for (std::size_t j = 0; j < dout; ++j) {
            const T* bj = B + j * r;
            T acc = 0;
            for (std::size_t k = 0; k < r; ++k) acc += bj[k] * ut[k];
            o[j] += scale * acc;
        }
    }
}

template <class T>
void lora_backward(const Mat<T>& dout, const Mat<T>& u, const Mat<T>& in, const T* A, const T* B, std::size_t r,
                   T scale, Mat<T>& din, T* dA, T* dB) {
    const std::size_t dinn = in.cols, doutn = dout.cols;
    std::vector<T> du(r);
    for (std::size_t t = 0; t < dout.rows; ++t) {
        const T* g = dout.row(t);
        const T* ut = u.row(t);
        std::fill(du.begin(), du.end(), T(0));
        for (std::size_t j = 0; j < doutn; ++j) {
            const T gj = scale * g[j];
            const T* bj = B + j * r;
            for (std::size_t k = 0; k < r; ++k) {
                du[k] += gj * bj[k];
                if (dB != nullptr) dB[j * r + k] += gj * ut[k];
            }
        }
        const T* x = in.row(t);
        T* dx = din.row(t);
        for (std::size_t k = 0; k < r; ++k) {
            const T* a = A + k * dinn;
            for (std::size_t i = 0; i < dinn; ++i) {
                dx[i] += du[k] * a[i];
                if (dA != nullptr) dA[k * dinn + i] += du[k] * x[i];
            }
        }
    }
}

constexpr double kGeluC = 0.7978845608028654;

template <class T>
T gelu_t(T x) {
    return T(0.5) * x * (T(1) + std::tanh(T(kGeluC) * (x + T(0.044715) * x * x * x)));
}

template <class T>
T gelu_grad(T x) {
    const T inner = T(kGeluC) * (x + T(0.044715) * x * x * x);
    const T th = std::tanh(inner);
    return T(0.5) * (T(1) + th) + T(0.5) * x * (T(1) - th * th) * T(kGeluC) * (T(1) + T(3 * 0.044715) * x * x);
}

}  // namespace

template <class T>
ModelParams<T> init_model(const ModelConfig& cfg, std::uint64_t seed) {
    ModelParams<T> p;
    p.config = cfg;
    p.layout = ParamLayout::build(cfg);
    p.data.assign(p.layout.total, T(0));
    Rng rng(seed);
    for (const auto& t : p.layout.tensors) {
        T* dst = p.data.data() + t.offset;
        if (!t.decay) {
            const bool gain = t.name.ends_with("ln1.weight") || t.name.ends_with("ln2.weight") || t.name == "lnf.weight";
            std::fill(dst, dst + t.size, gain ? T(1) : T(0));
            continue;
        }
        for (std::size_t i = 0; i < t.size; ++i) dst[i] = static_cast<T>(0.02 * standard_normal(rng));
    }
    return p;
}

template <class T>
Mat<T> forward(const ModelParams<T>& params, std::span<const int> ids, const std::type_identity_t<LoraAdapters<T>>* lora,
               ForwardTape<T>* tape) {
    const auto& cfg = params.config;
    const auto& L = params.layout;
    const std::size_t Tn = ids.size();
    if (Tn == 0) throw ValidationError("forward: empty input");
    if (Tn > static_cast<std::size_t>(cfg.context_length)) {
        throw ValidationError("forward: sequence length " + std::to_string(Tn) + " exceeds context " +
                              std::to_string(cfg.context_length));
    }
    const std::size_t d = static_cast<std::size_t>(cfg.d_model);
    const std::size_t V = static_cast<std::size_t>(cfg.vocab_size);
    const std::size_t H = static_cast<std::size_t>(cfg.n_heads);
    const std::size_t hs = d / H;
    const std::size_t ff = static_cast<std::size_t>(cfg.d_ff);
    const T* P = params.data.data();
    const T att_scale = T(1) / std::sqrt(static_cast<T>(hs));
    if (lora != nullptr && (lora->layers.size() != L.layers.size() || lora->d_model != d)) {
        throw ValidationError("forward: adapter shapes do not match the model");
    }

    ForwardTape<T> local;
    ForwardTape<T>& tp = tape != nullptr ? *tape : local;
    tp = ForwardTape<T>{};
    tp.ids.assign(ids.begin(), ids.end());
    tp.layers.resize(static_cast<std::size_t>(cfg.n_layers));

    Mat<T> x(Tn, d);
    for (std::size_t t = 0; t < Tn; ++t) {
        const int id = ids[t];
        if (id < 0 || static_cast<std::size_t>(id) >= V) {
            throw ValidationError("forward: token id " + std::to_string(id) + " out of range for vocab " +
                                  std::to_string(V));
        }
        const T* e = P + L.wte + static_cast<std::size_t>(id) * d;
        const T* pe = P + L.wpe + t * d;
        T* xr = x.row(t);
        for (std::size_t i = 0; i < d; ++i) xr[i] = e[i] + pe[i];
    }

    for (std::size_t l = 0; l < L.layers.size(); ++l) {
        const auto& s = L.layers[l];
        auto& c = tp.layers[l];
        c.x_in = x;
        layernorm(c.ln1, c.ln1_mean, c.ln1_rstd, x, P + s.ln1_g, P + s.ln1_b, cfg.ln_eps);
        linear(c.q, c.ln1, P + s.wq, P + s.bq, d);
        linear(c.k, c.ln1, P + s.wk, static_cast<const T*>(nullptr), d);
        linear(c.v, c.ln1, P + s.wv, P + s.bv, d);
        if (lora != nullptr) {
            const auto& ls = lora->layers[l];
            const T sc = static_cast<T>(lora->scale());
            const auto r = static_cast<std::size_t>(lora->rank);
            const T* LD = lora->data.data();
            lora_forward(c.q, c.lora_u[0], c.ln1, LD + ls[0].a, LD + ls[0].b, r, sc);
            lora_forward(c.k, c.lora_u[1], c.ln1, LD + ls[1].a, LD + ls[1].b, r, sc);
            lora_forward(c.v, c.lora_u[2], c.ln1, LD + ls[2].a, LD + ls[2].b, r, sc);
        }

        c.probs.assign(H * Tn * Tn, T(0));
        c.att = Mat<T>(Tn, d);
        for (std::size_t h = 0; h < H; ++h) {
            for (std::size_t t = 0; t < Tn; ++t) {
                T* pr = c.probs.data() + (h * Tn + t) * Tn;
                const T* qt = c.q.row(t) + h * hs;
                T mx = -std::numeric_limits<T>::infinity();
                for (std::size_t u = 0; u <= t; ++u) {
                    const T* ku = c.k.row(u) + h * hs;
                    T dot = 0;
                    for (std::size_t i = 0; i < hs; ++i) dot += qt[i] * ku[i];
                    pr[u] = dot * att_scale;
                    if (pr[u] > mx) mx = pr[u];
                }
                T sum = 0;
                for (std::size_t u = 0; u <= t; ++u) {
                    pr[u] = std::exp(pr[u] - mx);
                    sum += pr[u];
                }
                const T inv = T(1) / sum;
                T* at = c.att.row(t) + h * hs;
                for (std::size_t u = 0; u <= t; ++u) {
                    pr[u] *= inv;
                    const T* vu = c.v.row(u) + h * hs;
                    for (std::size_t i = 0; i < hs; ++i) at[i] += pr[u] * vu[i];
                }
            }
        }

        Mat<T> o;
        linear(o, c.att, P + s.wo, P + s.bo, d);
        if (lora != nullptr) {
            const auto& ls = lora->layers[l];
            lora_forward(o, c.lora_u[3], c.att, lora->data.data() + ls[3].a, lora->data.data() + ls[3].b,
                         static_cast<std::size_t>(lora->rank), static_cast<T>(lora->scale()));
        }
        for (std::size_t i = 0; i < x.data.size(); ++i) x.data[i] += o.data[i];
        c.x_mid = x;

        layernorm(c.ln2, c.ln2_mean, c.ln2_rstd, x, P + s.ln2_g, P + s.ln2_b, cfg.ln_eps);
        linear(c.h_pre, c.ln2, P + s.w_fc, P + s.b_fc, ff);
        c.h_act = c.h_pre;
        for (auto& v : c.h_act.data) v = gelu_t(v);
        Mat<T> m;
        linear(m, c.h_act, P + s.w_proj, P + s.b_proj, d);
        for (std::size_t i = 0; i < x.data.size(); ++i) x.data[i] += m.data[i];
    }

    tp.x_final = x;
    layernorm(tp.lnf, tp.lnf_mean, tp.lnf_rstd, x, P + L.lnf_g, P + L.lnf_b, cfg.ln_eps);
    Mat<T> logits;
    linear(logits, tp.lnf, P + L.head, static_cast<const T*>(nullptr), V);
    tp.recorded = true;
    return logits;
}

template <class T>
void backward(const ModelParams<T>& params, const std::type_identity_t<LoraAdapters<T>>* lora, const ForwardTape<T>& tape,
              const Mat<T>& dlogits, ModelParams<T>* grads, std::type_identity_t<LoraAdapters<T>>* lora_grads) {
    if (!tape.recorded) throw std::logic_error("backward called without a recorded forward pass");
    const auto& cfg = params.config;
    const auto& L = params.layout;
    const std::size_t Tn = tape.ids.size();
    const std::size_t d = static_cast<std::size_t>(cfg.d_model);
    const std::size_t V = static_cast<std::size_t>(cfg.vocab_size);
    const std::size_t H = static_cast<std::size_t>(cfg.n_heads);
    const std::size_t hs = d / H;
    if (dlogits.rows != Tn || dlogits.cols != V) throw ValidationError("backward: dlogits shape mismatch");
    if (lora_grads != nullptr && lora == nullptr) throw ValidationError("backward: adapter grads without adapters");
    const T* P = params.data.data();
    T* G = grads != nullptr ? grads->data.data() : nullptr;
    auto gp = [&](std::size_t off) -> T* { return G != nullptr ? G + off : nullptr; };
    const T att_scale = T(1) / std::sqrt(static_cast<T>(hs));

    Mat<T> dlnf(Tn, d);
    linear_backward(dlogits, tape.lnf, P + L.head, &dlnf, gp(L.head), static_cast<T*>(nullptr));
    Mat<T> dx(Tn, d);
    layernorm_backward(dlnf, tape.x_final, tape.lnf_mean, tape.lnf_rstd, P + L.lnf_g, dx, gp(L.lnf_g), gp(L.lnf_b));

    for (std::size_t li = L.layers.size(); li-- > 0;) {
        const auto& s = L.layers[li];
        const auto& c = tape.layers[li];

        // MLP
        Mat<T> dact(Tn, static_cast<std::size_t>(cfg.d_ff));
        linear_backward(dx, c.h_act, P + s.w_proj, &dact, gp(s.w_proj), gp(s.b_proj));
        for (std::size_t i = 0; i < dact.data.size(); ++i) dact.data[i] *= gelu_grad(c.h_pre.data[i]);
        Mat<T> dln2(Tn, d);
        linear_backward(dact, c.ln2, P + s.w_fc, &dln2, gp(s.w_fc), gp(s.b_fc));
        layernorm_backward(dln2, c.x_mid, c.ln2_mean, c.ln2_rstd, P + s.ln2_g, dx, gp(s.ln2_g), gp(s.ln2_b));

        // attention output projection
        Mat<T> datt(Tn, d);
        linear_backward(dx, c.att, P + s.wo, &datt, gp(s.wo), gp(s.bo));
        const T* LD = lora != nullptr ? lora->data.data() : nullptr;
        T* LG = lora_grads != nullptr ? lora_grads->data.data() : nullptr;
        const auto r = lora != nullptr ? static_cast<std::size_t>(lora->rank) : 0;
        const T sc = lora != nullptr ? static_cast<T>(lora->scale()) : T(0);
        if (lora != nullptr) {
            const auto& ls = lora->layers[li];
            lora_backward(dx, c.lora_u[3], c.att, LD + ls[3].a, LD + ls[3].b, r, sc, datt,
                          LG != nullptr ? LG + ls[3].a : nullptr, LG != nullptr ? LG + ls[3].b : nullptr);
        }

        Mat<T> dq(Tn, d), dk(Tn, d), dv(Tn, d);
        std::vector<T> dp(Tn);
        for (std::size_t h = 0; h < H; ++h) {
            for (std::size_t t = 0; t < Tn; ++t) {
                const T* pr = c.probs.data() + (h * Tn + t) * Tn;
                const T* da = datt.row(t) + h * hs;
                T dot_pdp = 0;
                for (std::size_t u = 0; u <= t; ++u) {
                    const T* vu = c.v.row(u) + h * hs;
                    T acc = 0;
                    for (std::size_t i = 0; i < hs; ++i) acc += da[i] * vu[i];
                    dp[u] = acc;
                    dot_pdp += pr[u] * acc;
                    T* dvu = dv.row(u) + h * hs;
                    for (std::size_t i = 0; i < hs; ++i) dvu[i] += pr[u] * da[i];
                }
                const T* qt = c.q.row(t) + h * hs;
                T* dqt = dq.row(t) + h * hs;
                for (std::size_t u = 0; u <= t; ++u) {
                    const T ds = pr[u] * (dp[u] - dot_pdp) * att_scale;
                    const T* ku = c.k.row(u) + h * hs;
                    T* dku = dk.row(u) + h * hs;
                    for (std::size_t i = 0; i < hs; ++i) {
                        dqt[i] += ds * ku[i];
                        dku[i] += ds * qt[i];
                    }
                }
            }
        }

        Mat<T> dln1(Tn, d);
        linear_backward(dq, c.ln1, P + s.wq, &dln1, gp(s.wq), gp(s.bq));
        linear_backward(dk, c.ln1, P + s.wk, &dln1, gp(s.wk), static_cast<T*>(nullptr));
        linear_backward(dv, c.ln1, P + s.wv, &dln1, gp(s.wv), gp(s.bv));
        if (lora != nullptr) {
            const auto& ls = lora->layers[li];
            const Mat<T>* dproj[3] = {&dq, &dk, &dv};
            for (int p = 0; p < 3; ++p) {
                lora_backward(*dproj[p], c.lora_u[p], c.ln1, LD + ls[p].a, LD + ls[p].b, r, sc, dln1,
                              LG != nullptr ? LG + ls[p].a : nullptr, LG != nullptr ? LG + ls[p].b : nullptr);
            }
        }
        layernorm_backward(dln1, c.x_in, c.ln1_mean, c.ln1_rstd, P + s.ln1_g, dx, gp(s.ln1_g), gp(s.ln1_b));
    }

    if (G != nullptr) {
        for (std::size_t t = 0; t < Tn; ++t) {
            T* de = G + L.wte + static_cast<std::size_t>(tape.ids[t]) * d;
            T* dpe = G + L.wpe + t * d;
            const T* g = dx.row(t);
            for (std::size_t i = 0; i < d; ++i) {
                de[i] += g[i];
                dpe[i] += g[i];
            }
        }
    }
}

template <class T>
LoraAdapters<T> lora_attach(const ModelParams<T>& params, int rank, double alpha, std::uint64_t seed) {
    const auto d = static_cast<std::size_t>(params.config.d_model);
    if (rank < 1) throw ValidationError("lora rank must be >= 1");
    if (static_cast<std::size_t>(rank) > d) {
        throw ValidationError("lora rank " + std::to_string(rank) + " exceeds projection dims " + std::to_string(d));
    }
    if (!(alpha > 0.0)) throw ValidationError("lora alpha must be positive");
    LoraAdapters<T> ad;
    ad.rank = rank;
    ad.alpha = alpha;
    ad.d_model = d;
    const auto r = static_cast<std::size_t>(rank);
    std::size_t total = 0;
    static const char* names[4] = {"q", "k", "v", "o"};
    for (int l = 0; l < params.config.n_layers; ++l) {
        std::array<typename LoraAdapters<T>::Slot, 4> slots{};
        for (int p = 0; p < 4; ++p) {
            const std::string base = "layers." + std::to_string(l) + ".attn." + names[p] + ".lora_";
            ad.tensors.push_back({base + "A", {r, d}, total, r * d, true});
            slots[p].a = total;
            total += r * d;
            ad.tensors.push_back({base + "B", {d, r}, total, d * r, true});
            slots[p].b = total;
            total += d * r;
        }
        ad.layers.push_back(slots);
    }
    ad.data.assign(total, T(0));
    Rng rng(seed);
    for (const auto& t : ad.tensors) {
        if (!t.name.ends_with("lora_A")) continue;
        for (std::size_t i = 0; i < t.size; ++i) ad.data[t.offset + i] = static_cast<T>(0.02 * standard_normal(rng));
    }
    return ad;
}

template <class T>
ModelParams<T> lora_merge(const ModelParams<T>& base, const LoraAdapters<T>& ad) {
    if (ad.layers.size() != base.layout.layers.size() || ad.d_model != static_cast<std::size_t>(base.config.d_model)) {
        throw ValidationError("lora_merge: adapter shapes do not match the model");
    }
    ModelParams<T> out = base;
    const std::size_t d = ad.d_model;
    const auto r = static_cast<std::size_t>(ad.rank);
    const double sc = ad.scale();
    for (std::size_t l = 0; l < ad.layers.size(); ++l) {
        const auto& s = base.layout.layers[l];
        const std::size_t w[4] = {s.wq, s.wk, s.wv, s.wo};
        for (int p = 0; p < 4; ++p) {
            const T* A = ad.data.data() + ad.layers[l][p].a;
            const T* B = ad.data.data() + ad.layers[l][p].b;
            T* W = out.data.data() + w[p];
            for (std::size_t i = 0; i < d; ++i) {
                for (std::size_t j = 0; j < d; ++j) {
                    double acc = 0.0;
                    for (std::size_t k = 0; k < r; ++k) acc += static_cast<double>(A[k * d + i]) * B[j * r + k];
                    W[i * d + j] = static_cast<T>(W[i * d + j] + sc * acc);
                }
            }
        }
    }
    return out;
}

#define DSLM_INSTANTIATE_MODEL(T)                                                                              \
    template struct ModelParams<T>;                                                                            \
    template struct LoraAdapters<T>;                                                                           \
    template ModelParams<T> init_model<T>(const ModelConfig&, std::uint64_t);                                  \
    template Mat<T> forward<T>(const ModelParams<T>&, std::span<const int>, const LoraAdapters<T>*,            \
                               ForwardTape<T>*);                                                               \
    template void backward<T>(const ModelParams<T>&, const LoraAdapters<T>*, const ForwardTape<T>&,            \
                              const Mat<T>&, ModelParams<T>*, LoraAdapters<T>*);                               \
    template LoraAdapters<T> lora_attach<T>(const ModelParams<T>&, int, double, std::uint64_t);                \
    template ModelParams<T> lora_merge<T>(const ModelParams<T>&, const LoraAdapters<T>&);

DSLM_INSTANTIATE_MODEL(float)
DSLM_INSTANTIATE_MODEL(double)

}  // namespace dslm
