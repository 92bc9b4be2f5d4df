#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "crl/mi.hpp"
#include "crl/rtfm.hpp"

using namespace crl;

TEST_CASE("club estimate core cases") {
    Tape t;
    SECTION("identical pairs give exactly zero regardless of moments") {
        const int N = 5, D = 3;
        std::vector<double> mu(N * D, 0.7), sg(N * D, 1.3), cv(N * D, -0.4);
        Tensor c = constant(t, {N, D}, cv);
        Tensor est = club_estimate_from_moments(t, constant(t, {N, D}, mu),
                                                constant(t, {N, D}, sg), c);
        REQUIRE(est.item() == Catch::Approx(0.0).margin(1e-12));
    }
    SECTION("hand-evaluated N=2 case: q(c|e)=N(c; e, 1), pairs (0,0),(1,1)") {
        Tensor mu = constant(t, {2, 1}, {0.0, 1.0});
        Tensor sg = constant(t, {2, 1}, {1.0, 1.0});
        Tensor c = constant(t, {2, 1}, {0.0, 1.0});
        Tensor est = club_estimate_from_moments(t, mu, sg, c);
        REQUIRE(est.item() == Catch::Approx(0.25).margin(1e-12));
    }
    SECTION("fewer than two samples rejected") {
        Tensor mu = constant(t, {1, 1}, {0.0});
        Tensor sg = constant(t, {1, 1}, {1.0});
        Tensor c = constant(t, {1, 1}, {0.0});
        REQUIRE_THROWS_AS(club_estimate_from_moments(t, mu, sg, c), UsageError);
    }
}

TEST_CASE("predictor training") {
    SECTION("zero steps leave q unchanged") {
        Rng rng(1);
        ClubPredictor q(1, 1, 8, 1e-3, rng);
        const auto before = q.store().get("club/W1").value;
        std::vector<double> e{0.0, 1.0}, c{0.0, 1.0};
        q.train(e, c, 2, 0);
        REQUIRE(q.store().get("club/W1").value == before);
    }
    SECTION("log-likelihood improves over 100 steps in >=95% of seeds") {
        int improved = 0;
        const int seeds = 20;
        for (int s = 0; s < seeds; ++s) {
            Rng rng(static_cast<std::uint64_t>(100 + s));
            ClubPredictor q(1, 1, 16, 1e-2, rng);
            const int N = 256;
            std::vector<double> e(N), c(N);
            for (int i = 0; i < N; ++i) {
                e[static_cast<std::size_t>(i)] = rng.normal();
                c[static_cast<std::size_t>(i)] =
                    0.8 * e[static_cast<std::size_t>(i)] + 0.3 * rng.normal();
            }
            const double before = q.mean_log_likelihood(e, c, N);
            const double after = q.train(e, c, N, 100);
            improved += after >= before;
        }
        REQUIRE(improved >= 19);
    }
    SECTION("linear-Gaussian regression oracle: mu_q(e) ~= e within 0.05 RMSE") {
        Rng rng(7);
        ClubPredictor q(1, 1, 64, 3e-3, rng);
        const int N = 2000;
        std::vector<double> e(N), c(N);
        for (int i = 0; i < N; ++i) {
            e[static_cast<std::size_t>(i)] = rng.uniform(-2.0, 2.0);
            c[static_cast<std::size_t>(i)] = e[static_cast<std::size_t>(i)] + 0.1 * rng.normal();
        }
        q.train(e, c, N, 1500);
        Tape t(false);
        auto m = q.forward(t, constant(t, {N, 1}, e), false);
        double se = 0.0;
        for (int i = 0; i < N; ++i) {
            const double d = m.mu.v(i) - e[static_cast<std::size_t>(i)];
            se += d * d;
        }
        REQUIRE(std::sqrt(se / N) < 0.05);
    }
    SECTION("independent e and c: trained estimator near zero at N=10^4") {
        Rng rng(11);
        ClubPredictor q(1, 1, 32, 3e-3, rng);
        const int N = 10000;
        std::vector<double> e(N), c(N);
        for (int i = 0; i < N; ++i) {
            e[static_cast<std::size_t>(i)] = rng.normal();
            c[static_cast<std::size_t>(i)] = rng.normal();
        }
        // minibatch refreshes, then estimate on the full batch
        Rng pick(13);
        for (int step = 0; step < 400; ++step) {
            const int B = 512;
            std::vector<double> eb(B), cb(B);
            for (int i = 0; i < B; ++i) {
                const int j = pick.uniform_int(N);
                eb[static_cast<std::size_t>(i)] = e[static_cast<std::size_t>(j)];
                cb[static_cast<std::size_t>(i)] = c[static_cast<std::size_t>(j)];
            }
            q.train(eb, cb, B, 1);
        }
        Tape t(true);
        MiSlotBatch batch;
        batch.N = N;
        batch.e_values = e;
        batch.c = constant(t, {N, 1}, c);
        const double est = club_estimate(t, q, batch).item();
        REQUIRE(std::abs(est) <= 0.05);
    }
}

TEST_CASE("club loss over slots") {
    Rng rng(3);
    ClubPredictor q(2, 2, 8, 1e-3, rng);
    Tape t;
    auto make_batch = [&](double shift) {
        MiSlotBatch b;
        b.N = 3;
        b.e_values = {0.1, 0.2, -0.5, 0.9, 1.1, -0.2};
        b.c = constant(t, {3, 2}, {shift, 0.3, -0.2, 0.8, 0.5, -1.0});
        return b;
    };
    SECTION("single slot equals the slot estimate") {
        auto b = make_batch(0.4);
        std::vector<MiSlotBatch> slots{b};
        const double sum = club_loss(t, q, slots).item();
        const double single = club_estimate(t, q, b).item();
        REQUIRE(sum == Catch::Approx(single).margin(1e-12));
    }
    SECTION("n identical slots give n times the single value") {
        auto b = make_batch(0.4);
        std::vector<MiSlotBatch> slots{b, b, b};
        const double sum = club_loss(t, q, slots).item();
        const double single = club_estimate(t, q, b).item();
        REQUIRE(sum == Catch::Approx(3.0 * single).margin(1e-10));
    }
}

TEST_CASE("club gradient reaches the encoder (finite differences)") {
    RtfmEnv env{RtfmConfig{}};
    ParameterStore store;
    Rng rng(5);
    EncoderConfig ecfg;
    ecfg.d_t = 8;
    ecfg.d_e = 8;
    ecfg.d_c = 4;
    ecfg.d_k = 8;
    ecfg.gru_hidden = 8;
    ConceptEncoder enc(ecfg, env.vocab().size(), store, rng);
    ClubPredictor q(ecfg.d_e, ecfg.concept_channels(), 8, 1e-3, rng);

    auto loss_value = [&](double delta, bool do_backward) {
        auto& p = store.get("enc/l1/mu/W1");
        p.value[3] += delta;
        Tape tape(true);
        auto en = enc.enter(tape, true);
        // two episodes give N=2 per slot; eval mode keeps the pass deterministic
        std::vector<std::vector<Tensor>> per_slot(4);
        std::vector<std::vector<double>> e_per_slot(4);
        for (std::uint64_t seed : {101ull, 202ull}) {
            env.reset(seed);
            const auto obs = env.observation();
            auto ep = enc.encode_episode(tape, en, obs, env.manual());
            auto set = enc.encode_concepts(tape, en, ep, EncodeMode::Eval, nullptr);
            for (int i = 0; i < 4; ++i) {
                per_slot[static_cast<std::size_t>(i)].push_back(set.entity_concepts(i));
                for (int d = 0; d < ecfg.d_e; ++d)
                    e_per_slot[static_cast<std::size_t>(i)].push_back(ep.entity_emb.v(i, d));
            }
        }
        std::vector<MiSlotBatch> slots;
        for (int i = 0; i < 4; ++i) {
            MiSlotBatch b;
            b.N = 2;
            b.e_values = e_per_slot[static_cast<std::size_t>(i)];
            b.c = stack_rows(per_slot[static_cast<std::size_t>(i)]);
            slots.push_back(std::move(b));
        }
        Tensor loss = club_loss(tape, q, slots);
        const double v = loss.item();
        if (do_backward) {
            store.zero_grad();
            backward(loss);
        }
        p.value[3] -= delta;
        return v;
    };
    loss_value(0.0, true);
    const double analytic = store.get("enc/l1/mu/W1").grad[3];
    const double h = 1e-5;
    const double numeric = (loss_value(h, false) - loss_value(-h, false)) / (2 * h);
    REQUIRE(analytic == Catch::Approx(numeric).margin(1e-7).epsilon(1e-4));
    // q itself must stay frozen in club_loss
    REQUIRE(q.store().get("club/W1").grad == std::vector<double>(q.store().get("club/W1").grad.size(), 0.0));
}

TEST_CASE("vib loss") {
    Tape t;
    auto make_set = [&](int n, int m, int dc, double muv, double sgv) {
        ConceptSet s;
        s.n = n;
        s.m = m;
        s.d_c = dc;
        for (int j = 0; j < m; ++j) {
            s.mu.push_back(constant(t, {n, dc}, std::vector<double>(static_cast<std::size_t>(n * dc), muv)));
            s.sigma.push_back(constant(t, {n, dc}, std::vector<double>(static_cast<std::size_t>(n * dc), sgv)));
            s.c.push_back(s.mu.back());
        }
        return s;
    };
    SECTION("all heads at (0,1) give zero") {
        REQUIRE(concept_set_kl(make_set(3, 2, 4, 0.0, 1.0)).item() == Catch::Approx(0.0).margin(1e-12));
    }
    SECTION("n=1, m=1, d_c=1, mu=2, sigma=1 gives 2.0") {
        REQUIRE(concept_set_kl(make_set(1, 1, 1, 2.0, 1.0)).item() == Catch::Approx(2.0).margin(1e-12));
    }
    SECTION("invariant to entity permutation") {
        ConceptSet s;
        s.n = 2;
        s.m = 1;
        s.d_c = 1;
        s.mu.push_back(constant(t, {2, 1}, {0.3, -1.2}));
        s.sigma.push_back(constant(t, {2, 1}, {0.9, 1.7}));
        s.c.push_back(s.mu[0]);
        ConceptSet p = s;
        p.mu[0] = constant(t, {2, 1}, {-1.2, 0.3});
        p.sigma[0] = constant(t, {2, 1}, {1.7, 0.9});
        REQUIRE(concept_set_kl(s).item() == Catch::Approx(concept_set_kl(p).item()).margin(1e-12));
    }
}

TEST_CASE("combined objective") {
    Tape t;
    SECTION("zero coefficients reduce to the RL loss") {
        Tensor out = combined_loss(scalar(t, 1.7), scalar(t, 9.9), scalar(t, -3.0), 0.0, 0.0);
        REQUIRE(out.item() == Catch::Approx(1.7));
    }
    SECTION("hand arithmetic") {
        Tensor out = combined_loss(scalar(t, 1.0), scalar(t, 0.5), scalar(t, 0.25), 0.1, 0.01);
        REQUIRE(out.item() == Catch::Approx(1.0525).margin(1e-12));
    }
    SECTION("negative coefficients rejected") {
        REQUIRE_THROWS_AS(combined_loss(scalar(t, 1.0), scalar(t, 1.0), scalar(t, 1.0), -0.1, 0.0),
                          ConfigError);
    }
    SECTION("gradient is the weighted sum of component gradients") {
        const std::vector<double> x0{0.4, -0.7, 1.1};
        auto grads_of = [&](auto f) {
            Tape tt;
            Tensor x = variable(tt, {3}, x0);
            backward(f(tt, x));
            return x.grad();
        };
        auto f_rl = [](Tape&, const Tensor& x) { return reduce_sum(square(x)); };
        auto f_club = [](Tape&, const Tensor& x) { return reduce_sum(mul(x, mul(x, x))); };
        auto f_vib = [](Tape&, const Tensor& x) { return reduce_sum(exp(x)); };
        const double a1 = 0.1, a2 = 0.01;
        auto g_comb = grads_of([&](Tape& tt, const Tensor& x) {
            return combined_loss(f_rl(tt, x), f_club(tt, x), f_vib(tt, x), a1, a2);
        });
        const auto g1 = grads_of(f_rl), g2 = grads_of(f_club), g3 = grads_of(f_vib);
        for (int i = 0; i < 3; ++i)
            REQUIRE(g_comb[static_cast<std::size_t>(i)] ==
                    Catch::Approx(g1[static_cast<std::size_t>(i)] + a1 * g2[static_cast<std::size_t>(i)] +
                                  a2 * g3[static_cast<std::size_t>(i)])
                        .margin(1e-10));
    }
}

TEST_CASE("mi config validation") {
    MiConfig ok;
    ok.validate();
    MiConfig bad;
    bad.alpha1 = -0.5;
    REQUIRE_THROWS_AS(bad.validate(), ConfigError);
}
