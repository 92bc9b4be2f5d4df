#pragma once

#include <span>
#include <vector>

#include "crl/encoder.hpp"
#include "crl/nn.hpp"

namespace crl {

// ---------------------------------------------------------------------------
// Mutual-information constraints: the CLUB upper-bound estimator with its
// variational Gaussian predictor q(c|e), and the variational-IB KL term.
// ---------------------------------------------------------------------------

struct MiConfig {
    double alpha1 = 0.1;   // weight of L_CLUB
    double alpha2 = 0.01;  // weight of L_VIB
    int club_steps = 5;    // predictor refresh steps per learner update
    double club_lr = 1e-3;
    int club_hidden = 64;
    bool grad_to_entity = false;  // let CLUB gradients reach the entity side

    void validate() const {
        if (alpha1 < 0.0 || alpha2 < 0.0) throw ConfigError("mi: alpha coefficients must be >= 0");
        if (club_steps < 0) throw ConfigError("mi: club_steps must be >= 0");
        if (club_hidden < 1) throw ConfigError("mi: club_hidden must be >= 1");
    }
};

// Diagonal-Gaussian q(c|e): one tanh hidden layer, mean and sigma heads over
// the concatenated concept vector. Owns its parameters and optimizer.
class ClubPredictor {
public:
    ClubPredictor(int d_e, int d_concept, int hidden, double lr, Rng& rng)
        : d_e_(d_e), d_concept_(d_concept) {
        W1_ = &store_.create("club/W1", {d_e, hidden}, d_e, rng);
        b1_ = &store_.create_zeros("club/b1", {hidden});
        Wmu_ = &store_.create("club/Wmu", {hidden, d_concept}, hidden, rng);
        bmu_ = &store_.create_zeros("club/bmu", {d_concept});
        Wsig_ = &store_.create("club/Wsig", {hidden, d_concept}, hidden, rng);
        bsig_ = &store_.create_zeros("club/bsig", {d_concept});
        opt_.lr = lr;
    }

    struct Moments {
        Tensor mu;     // [N, d_concept]
        Tensor sigma;  // [N, d_concept], positive
    };

    Moments forward(Tape& tape, const Tensor& e, bool trainable) const {
        auto in = [&](ParamTensor* p) { return trainable ? param(tape, *p) : frozen(tape, *p); };
        Tensor h = tanh(affine(e, in(W1_), in(b1_)));
        Moments m;
        m.mu = affine(h, in(Wmu_), in(bmu_));
        m.sigma = sigma_positive(affine(h, in(Wsig_), in(bsig_)));
        return m;
    }

    // k maximum-likelihood steps on detached pairs; returns the final mean
    // log-likelihood. Encoder tensors never enter this tape.
    double train(const std::vector<double>& e_values, const std::vector<double>& c_values, int N,
                 int k) {
        if (N < 1) throw UsageError("club train: empty batch");
        double last_ll = mean_log_likelihood(e_values, c_values, N);
        for (int step = 0; step < k; ++step) {
            store_.zero_grad();
            Tape tape(true);
            Tensor e = constant(tape, {N, d_e_}, e_values);
            Tensor c = constant(tape, {N, d_concept_}, c_values);
            Moments m = forward(tape, e, true);
            Tensor nll = nll_loss(tape, m, c, N);
            backward(nll);
            opt_.step(store_);
            last_ll = -nll.item() - 0.5 * d_concept_ * 1.8378770664093454836;
        }
        return last_ll;
    }

    double mean_log_likelihood(const std::vector<double>& e_values,
                               const std::vector<double>& c_values, int N) const {
        Tape tape(false);
        Tensor e = constant(tape, {N, d_e_}, e_values);
        Tensor c = constant(tape, {N, d_concept_}, c_values);
        Moments m = forward(tape, e, false);
        Tensor nll = nll_loss(tape, m, c, N);
        return -nll.item() - 0.5 * d_concept_ * 1.8378770664093454836;
    }

    ParameterStore& store() { return store_; }
    const ParameterStore& store() const { return store_; }
    int d_e() const { return d_e_; }
    int d_concept() const { return d_concept_; }

private:
    // mean over samples of [sum_d ln(sigma) + (c-mu)^2/(2 sigma^2)]
    // (the 0.5 ln 2pi constant is dropped; it does not affect gradients)
    static Tensor nll_loss(Tape& tape, const Moments& m, const Tensor& c, int N) {
        (void)tape;
        Tensor d = sub(c, m.mu);
        Tensor var2 = scale(mul(m.sigma, m.sigma), 2.0);
        Tensor quad = div(mul(d, d), var2);
        Tensor logs = log(m.sigma);
        return scale(add(reduce_sum(quad), reduce_sum(logs)), 1.0 / N);
    }

    ParameterStore store_;
    AdamOptimizer opt_;
    int d_e_;
    int d_concept_;
    ParamTensor *W1_, *b1_, *Wmu_, *bmu_, *Wsig_, *bsig_;
};

// CLUB estimate from frozen predictor moments:
//   (1/N^2) sum_i sum_j [log q(c_i|e_i) - log q(c_j|e_i)]
// expanded so no N x N matrix is formed: with M = mu/sigma^2, S = 1/sigma^2,
//   diag  = (1/N)  [ sum(M . C) - 0.5 sum(S . C^2) ]
//   cross = (1/N^2)[ colsum(M) . colsum(C) - 0.5 colsum(S) . colsum(C^2) ]
// (the log-normalizer a_i cancels between the two.)
inline Tensor club_estimate_from_moments(Tape& tape, const Tensor& mu, const Tensor& sigma,
                                         const Tensor& c) {
    if (mu.shape() != c.shape() || sigma.shape() != c.shape())
        throw ShapeError("club_estimate: moment shapes " + shape_str(mu.shape()) +
                         " do not match concepts " + shape_str(c.shape()));
    const int N = c.dim(0);
    if (N < 2) throw UsageError("club_estimate: needs at least 2 samples");
    Tensor var = mul(sigma, sigma);
    Tensor M = div(mu, var);
    Tensor S = div(constant(tape, var.shape(), std::vector<double>(static_cast<std::size_t>(var.size()), 1.0)), var);
    Tensor c2 = mul(c, c);
    Tensor diag_part = sub(reduce_sum(mul(M, c)), scale(reduce_sum(mul(S, c2)), 0.5));
    Tensor ones = constant(tape, {1, N}, std::vector<double>(static_cast<std::size_t>(N), 1.0));
    Tensor colM = matmul(ones, M);    // [1, D]
    Tensor colS = matmul(ones, S);
    Tensor colC = matmul(ones, c);
    Tensor colC2 = matmul(ones, c2);
    Tensor cross_part = sub(reduce_sum(mul(colM, colC)), scale(reduce_sum(mul(colS, colC2)), 0.5));
    return sub(scale(diag_part, 1.0 / N), scale(cross_part, 1.0 / (static_cast<double>(N) * N)));
}

// One entity slot's paired samples. Entity embeddings are plain values
// (detached by default); concepts stay on the caller's tape.
struct MiSlotBatch {
    std::vector<double> e_values;  // N x d_e
    Tensor c;                      // [N, d_concept]
    int N = 0;
};

// I_CLUB for one slot with q frozen.
inline Tensor club_estimate(Tape& tape, const ClubPredictor& q, const MiSlotBatch& batch) {
    if (batch.N < 2) throw UsageError("club_estimate: needs at least 2 samples");
    Tensor e = constant(tape, {batch.N, q.d_e()}, batch.e_values);
    auto m = q.forward(tape, e, /*trainable=*/false);
    return club_estimate_from_moments(tape, m.mu, m.sigma, batch.c);
}

// L_CLUB: sum of per-slot estimates. Gradient reaches the encoder through
// the concept tensors only.
inline Tensor club_loss(Tape& tape, const ClubPredictor& q, std::span<const MiSlotBatch> slots) {
    if (slots.empty()) throw UsageError("club_loss: no slots");
    std::vector<Tensor> parts;
    for (const auto& s : slots) parts.push_back(club_estimate(tape, q, s));
    return add_n(parts);
}

// KL to the standard normal summed over every head of one concept set
// (all entities, all levels) for a single sample.
inline Tensor concept_set_kl(const ConceptSet& set) {
    std::vector<Tensor> parts;
    for (int j = 0; j < set.m; ++j)
        parts.push_back(kl_diag_gaussian_to_standard(set.mu[static_cast<std::size_t>(j)],
                                                     set.sigma[static_cast<std::size_t>(j)]));
    return add_n(parts);
}

// L_CRL = L_RL + alpha1 L_CLUB + alpha2 L_VIB
inline Tensor combined_loss(const Tensor& l_rl, const Tensor& l_club, const Tensor& l_vib,
                            double alpha1, double alpha2) {
    if (alpha1 < 0.0 || alpha2 < 0.0) throw ConfigError("combined_loss: negative coefficient");
    return add(l_rl, add(scale(l_club, alpha1), scale(l_vib, alpha2)));
}

}  // namespace crl
