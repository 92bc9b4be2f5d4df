#pragma once

#include <cmath>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "crl/ops.hpp"
#include "crl/rng.hpp"
#include "crl/tensor.hpp"

namespace crl {

// ---------------------------------------------------------------------------
// ParameterStore: named parameters, seeded init, Adam state
// ---------------------------------------------------------------------------

class ParameterStore {
public:
    // Weight init: uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)), biases zero.
    ParamTensor& create(const std::string& name, Shape shape, int fan_in, Rng& rng) {
        ParamTensor& p = insert(name, std::move(shape));
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        for (double& v : p.value) v = rng.uniform(-bound, bound);
        return p;
    }

    ParamTensor& create_zeros(const std::string& name, Shape shape) {
        return insert(name, std::move(shape));
    }

    ParamTensor& get(const std::string& name) {
        auto it = params_.find(name);
        if (it == params_.end()) throw UsageError("parameter not found: " + name);
        return it->second;
    }
    const ParamTensor& get(const std::string& name) const {
        auto it = params_.find(name);
        if (it == params_.end()) throw UsageError("parameter not found: " + name);
        return it->second;
    }
    bool contains(const std::string& name) const { return params_.count(name) > 0; }

    void zero_grad() {
        for (auto& [_, p] : params_) p.zero_grad();
    }

    double grad_norm() const {
        double s = 0.0;
        for (const auto& [_, p] : params_)
            for (double g : p.grad) s += g * g;
        return std::sqrt(s);
    }

    // Scales all grads so the global norm does not exceed max_norm.
    void clip_grad_norm(double max_norm) {
        const double n = grad_norm();
        if (n <= max_norm || n == 0.0) return;
        const double k = max_norm / n;
        for (auto& [_, p] : params_)
            for (double& g : p.grad) g *= k;
    }

    std::int64_t total_size() const {
        std::int64_t n = 0;
        for (const auto& [_, p] : params_) n += p.size();
        return n;
    }

    // Ordered iteration (std::map) keeps optimizer updates and serialization
    // deterministic.
    auto begin() { return params_.begin(); }
    auto end() { return params_.end(); }
    auto begin() const { return params_.begin(); }
    auto end() const { return params_.end(); }
    std::size_t count() const { return params_.size(); }

private:
    ParamTensor& insert(const std::string& name, Shape shape) {
        if (params_.count(name)) throw UsageError("duplicate parameter name: " + name);
        ParamTensor p;
        p.name = name;
        p.shape = std::move(shape);
        const auto n = static_cast<std::size_t>(numel(p.shape));
        p.value.assign(n, 0.0);
        p.grad.assign(n, 0.0);
        p.adam_m.assign(n, 0.0);
        p.adam_v.assign(n, 0.0);
        return params_.emplace(name, std::move(p)).first->second;
    }

    std::map<std::string, ParamTensor> params_;
};

// Adam with bias correction; moments live on the parameters themselves.
struct AdamOptimizer {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;

    void step(ParameterStore& store) const {
        for (auto& [_, p] : store) step_param(p);
    }

    void step_param(ParamTensor& p) const {
        p.adam_t += 1;
        const double c1 = 1.0 - std::pow(beta1, static_cast<double>(p.adam_t));
        const double c2 = 1.0 - std::pow(beta2, static_cast<double>(p.adam_t));
        for (std::size_t i = 0; i < p.value.size(); ++i) {
            const double g = p.grad[i];
            p.adam_m[i] = beta1 * p.adam_m[i] + (1.0 - beta1) * g;
            p.adam_v[i] = beta2 * p.adam_v[i] + (1.0 - beta2) * g * g;
            p.value[i] -= lr * (p.adam_m[i] / c1) / (std::sqrt(p.adam_v[i] / c2) + eps);
        }
    }
};

// ---------------------------------------------------------------------------
// spec'd neural building blocks
// ---------------------------------------------------------------------------

// y = x W + b (alias for the affine primitive; spec name).
inline Tensor linear(const Tensor& x, const Tensor& W, const Tensor& b) {
    return affine(x, W, b);
}

struct GruParams {
    ParamTensor* Wx = nullptr;
    ParamTensor* Wh = nullptr;
    ParamTensor* b = nullptr;
};

inline GruParams make_gru(ParameterStore& store, const std::string& prefix, int din, int dh,
                          Rng& rng) {
    GruParams g;
    g.Wx = &store.create(prefix + "/Wx", {din, 3 * dh}, din, rng);
    g.Wh = &store.create(prefix + "/Wh", {dh, 3 * dh}, dh, rng);
    g.b = &store.create_zeros(prefix + "/b", {3 * dh});
    return g;
}

struct GruTensors {
    Tensor Wx, Wh, b;
    int dh = 0;
};

inline GruTensors enter_gru(Tape& tape, const GruParams& g, bool trainable = true) {
    GruTensors t;
    t.Wx = trainable ? param(tape, *g.Wx) : frozen(tape, *g.Wx);
    t.Wh = trainable ? param(tape, *g.Wh) : frozen(tape, *g.Wh);
    t.b = trainable ? param(tape, *g.b) : frozen(tape, *g.b);
    t.dh = g.Wh->shape[0];
    return t;
}

struct GruSequenceOut {
    Tensor hiddens;  // [T, dh]
    Tensor final;    // [dh]
};

// Runs the GRU over one token sequence, initial hidden state zero.
inline GruSequenceOut gru_sequence(const Tensor& tokens, const GruTensors& g) {
    if (tokens.ndim() != 2) throw ShapeError("gru_sequence: tokens must be [T,d]");
    const int T = tokens.dim(0);
    if (T < 1) throw UsageError("gru_sequence: empty sequence");
    Tape& tape = tokens.tape();
    Tensor h = zeros(tape, {1, g.dh});
    std::vector<Tensor> rows;
    rows.reserve(static_cast<std::size_t>(T));
    for (int t = 0; t < T; ++t) {
        Tensor xrow = row_slice(tokens, t);
        Tensor x = stack_rows(std::span<const Tensor>{&xrow, 1});
        h = gru_cell(x, h, g.Wx, g.Wh, g.b);
        rows.push_back(row_slice(h, 0));
    }
    GruSequenceOut out;
    out.hiddens = stack_rows(rows);
    out.final = rows.back();
    return out;
}

// Batched GRU over padded sequences. Rows with t >= length keep their hidden
// state, so the result equals running each sequence at its own length.
inline Tensor gru_final_batch(const Tensor& tokens_flat, int B, int T, int din,
                              const std::vector<int>& lengths, const GruTensors& g) {
    if (tokens_flat.ndim() != 2 || tokens_flat.dim(0) != B * T || tokens_flat.dim(1) != din)
        throw ShapeError("gru_final_batch: expected [B*T,din] token matrix");
    Tape& tape = tokens_flat.tape();
    Tensor h = zeros(tape, {B, g.dh});
    int maxlen = 0;
    for (int l : lengths) maxlen = std::max(maxlen, l);
    for (int t = 0; t < maxlen; ++t) {
        std::vector<Tensor> xr;
        xr.reserve(static_cast<std::size_t>(B));
        for (int b = 0; b < B; ++b) xr.push_back(row_slice(tokens_flat, b * T + t));
        Tensor x = stack_rows(xr);
        Tensor hn = gru_cell(x, h, g.Wx, g.Wh, g.b);
        bool all_active = true;
        std::vector<double> mask(static_cast<std::size_t>(B) * g.dh);
        for (int b = 0; b < B; ++b) {
            const double mv = t < lengths[static_cast<std::size_t>(b)] ? 1.0 : 0.0;
            all_active = all_active && mv == 1.0;
            std::fill_n(mask.begin() + static_cast<std::size_t>(b) * g.dh, g.dh, mv);
        }
        if (all_active) {
            h = hn;
        } else {
            Tensor m = constant(tape, {B, g.dh}, mask);
            Tensor inv = add_scalar(scale(m, -1.0), 1.0);
            h = add(mul(m, hn), mul(inv, h));
        }
    }
    return h;  // [B, dh]
}

struct AttentionOut {
    Tensor context;  // [dv]
    Tensor weights;  // [S]
};

// weights = softmax(q K^T / sqrt(dk)); context = weights . V
inline AttentionOut scaled_dot_attention(const Tensor& q, const Tensor& K, const Tensor& V) {
    if (q.ndim() != 1 || K.ndim() != 2 || V.ndim() != 2)
        throw ShapeError("attention: expected q [dk], K [S,dk], V [S,dv]");
    const int S = K.dim(0), dk = K.dim(1);
    if (S < 1) throw UsageError("attention: empty key set");
    if (q.dim(0) != dk || V.dim(0) != S)
        throw ShapeError("attention: shape mismatch q " + shape_str(q.shape()) + ", K " +
                         shape_str(K.shape()) + ", V " + shape_str(V.shape()));
    Tensor qrow = stack_rows(std::span<const Tensor>{&q, 1});           // [1,dk]
    Tensor scores = scale(matmul(qrow, K, false, true), 1.0 / std::sqrt(double(dk)));
    Tensor w = softmax(scores);                                         // [1,S]
    Tensor ctx = matmul(w, V);                                          // [1,dv]
    return {row_slice(ctx, 0), row_slice(w, 0)};
}

struct SelfAttentionParams {
    ParamTensor* Wq = nullptr;
    ParamTensor* Wk = nullptr;
    ParamTensor* Wv = nullptr;
};

inline SelfAttentionParams make_self_attention(ParameterStore& store, const std::string& prefix,
                                               int dx, int dq, Rng& rng) {
    SelfAttentionParams p;
    p.Wq = &store.create(prefix + "/Wq", {dx, dq}, dx, rng);
    p.Wk = &store.create(prefix + "/Wk", {dx, dq}, dx, rng);
    p.Wv = &store.create(prefix + "/Wv", {dx, dq}, dx, rng);
    return p;
}

// Single-head self-attention: row i attends over all items, output in the
// value space (dq).
inline Tensor self_attention(const Tensor& items, const Tensor& Wq, const Tensor& Wk,
                             const Tensor& Wv) {
    if (items.ndim() != 2) throw ShapeError("self_attention: items must be [n,dx]");
    if (items.dim(0) < 1) throw UsageError("self_attention: empty item set");
    const int dq = Wq.dim(1);
    Tensor Q = matmul(items, Wq);
    Tensor K = matmul(items, Wk);
    Tensor V = matmul(items, Wv);
    Tensor scores = scale(matmul(Q, K, false, true), 1.0 / std::sqrt(double(dq)));
    return matmul(softmax(scores), V);  // [n, dq]
}

// log N(x | mu, diag sigma^2), summed over dimensions.
inline Tensor gaussian_log_density(const Tensor& x, const Tensor& mu, const Tensor& sigma) {
    detail::require_same_shape(x, mu, "gaussian_log_density");
    detail::require_same_shape(x, sigma, "gaussian_log_density");
    for (double s : sigma.values())
        if (s <= 0.0) throw UsageError("gaussian_log_density: sigma must be positive");
    constexpr double kLog2Pi = 1.8378770664093454835606594728112;
    const auto d = static_cast<double>(x.size());
    Tensor z = div(sub(x, mu), sigma);
    Tensor quad = reduce_sum(square(z));
    Tensor logs = reduce_sum(log(sigma));
    return add_scalar(add(scale(quad, -0.5), scale(logs, -1.0)), -0.5 * d * kLog2Pi);
}

// KL( N(mu, diag sigma^2) || N(0, I) ) = 0.5 sum(mu^2 + sigma^2 - 1 - 2 ln sigma)
inline Tensor kl_diag_gaussian_to_standard(const Tensor& mu, const Tensor& sigma) {
    detail::require_same_shape(mu, sigma, "kl_diag_gaussian_to_standard");
    for (double s : sigma.values())
        if (s <= 0.0) throw UsageError("kl_diag_gaussian_to_standard: sigma must be positive");
    const auto d = static_cast<double>(mu.size());
    Tensor t1 = reduce_sum(square(mu));
    Tensor t2 = reduce_sum(square(sigma));
    Tensor t3 = reduce_sum(log(sigma));
    return add_scalar(add(add(scale(t1, 0.5), scale(t2, 0.5)), scale(t3, -1.0)), -0.5 * d);
}

// mu + sigma . eps with eps ~ N(0,1) drawn from rng. Gradients flow to mu and
// sigma only; eps enters the graph as a constant.
inline Tensor reparameterize(const Tensor& mu, const Tensor& sigma, Rng& rng) {
    detail::require_same_shape(mu, sigma, "reparameterize");
    std::vector<double> eps(static_cast<std::size_t>(mu.size()));
    for (double& e : eps) e = rng.normal();
    Tensor epst = constant(mu.tape(), mu.shape(), eps);
    return add(mu, mul(sigma, epst));
}

// Numerically-stable log softmax of a 1-D logit vector. The max shift is a
// constant; the gradient is exact for any constant shift.
inline Tensor log_softmax(const Tensor& logits) {
    if (logits.ndim() != 1) throw ShapeError("log_softmax: expected 1-D logits");
    double mx = logits.values()[0];
    for (double v : logits.values()) mx = std::max(mx, v);
    Tensor shifted = add_scalar(logits, -mx);
    Tensor lse = log(reduce_sum(exp(shifted)));
    return add_bscalar(shifted, lse, -1.0);
}

// Entropy of the categorical given by logits.
inline Tensor categorical_entropy(const Tensor& logits) {
    Tensor lp = log_softmax(logits);
    Tensor p = softmax(logits);
    return scale(reduce_sum(mul(p, lp)), -1.0);
}

// sigma head convention used everywhere: softplus(raw) + 1e-4.
inline Tensor sigma_positive(const Tensor& raw) { return add_scalar(softplus(raw), 1e-4); }

// Two-layer MLP with tanh hidden activation.
struct Mlp2Params {
    ParamTensor *W1 = nullptr, *b1 = nullptr, *W2 = nullptr, *b2 = nullptr;
};

inline Mlp2Params make_mlp2(ParameterStore& store, const std::string& prefix, int din, int dhid,
                            int dout, Rng& rng) {
    Mlp2Params m;
    m.W1 = &store.create(prefix + "/W1", {din, dhid}, din, rng);
    m.b1 = &store.create_zeros(prefix + "/b1", {dhid});
    m.W2 = &store.create(prefix + "/W2", {dhid, dout}, dhid, rng);
    m.b2 = &store.create_zeros(prefix + "/b2", {dout});
    return m;
}

struct Mlp2Tensors {
    Tensor W1, b1, W2, b2;
};

inline Mlp2Tensors enter_mlp2(Tape& tape, const Mlp2Params& m, bool trainable = true) {
    Mlp2Tensors t;
    t.W1 = trainable ? param(tape, *m.W1) : frozen(tape, *m.W1);
    t.b1 = trainable ? param(tape, *m.b1) : frozen(tape, *m.b1);
    t.W2 = trainable ? param(tape, *m.W2) : frozen(tape, *m.W2);
    t.b2 = trainable ? param(tape, *m.b2) : frozen(tape, *m.b2);
    return t;
}

inline Tensor mlp2(const Tensor& x, const Mlp2Tensors& m) {
    return affine(tanh(affine(x, m.W1, m.b1)), m.W2, m.b2);
}

}  // namespace crl
