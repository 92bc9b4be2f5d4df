#pragma once

#include <vector>

#include "crl/gradcheck.hpp"
#include "crl/mi.hpp"
#include "crl/rtfm.hpp"

namespace crl {

// Finite-difference checks through the full composition: encoder forward,
// the CLUB loss, and the VIB loss, each probed at randomly-chosen parameter
// coordinates of a small freshly-seeded model on real episodes.

namespace composed_detail {

struct Probe {
    RtfmEnv env{RtfmConfig{}};
    ParameterStore store;
    EncoderConfig ecfg;
    std::unique_ptr<ConceptEncoder> enc;
    std::unique_ptr<ClubPredictor> club;
    // CLUB treats the entity side as detached samples, so the check must hold
    // e fixed while probing parameters; otherwise finite differences see a
    // path the analytic gradient intentionally stops.
    std::vector<std::vector<double>> frozen_e;

    explicit Probe(std::uint64_t seed) {
        Rng rng(seed);
        ecfg.m = 2;
        ecfg.d_t = 6;
        ecfg.d_e = 6;
        ecfg.d_c = 3;
        ecfg.d_k = 6;
        ecfg.gru_hidden = 6;
        enc = std::make_unique<ConceptEncoder>(ecfg, env.vocab().size(), store, rng);
        club = std::make_unique<ClubPredictor>(ecfg.d_e, ecfg.concept_channels(), 6, 1e-3, rng);
        for (std::uint64_t s : {11ull, 22ull}) {
            env.reset(s);
            Tape tape(false, true);
            auto en = enc->enter(tape, false);
            frozen_e.push_back(enc->embed_entities(tape, en, env.observation()).values());
        }
    }

    // deterministic forward (eval-mode concepts) over two fixed episodes
    double loss(int which, bool with_grad = false) {
        Tape tape(with_grad, true);
        auto en = enc->enter(tape, true);
        std::vector<std::vector<Tensor>> slot_c(4);
        std::vector<std::vector<double>> slot_e(4);
        std::vector<Tensor> parts;
        int ep_idx = 0;
        for (std::uint64_t seed : {11ull, 22ull}) {
            env.reset(seed);
            auto ep = enc->encode_episode(tape, en, env.observation(), env.manual());
            auto set = enc->encode_concepts(tape, en, ep, EncodeMode::Eval, nullptr);
            if (which == 0) {
                for (const auto& c : set.c) parts.push_back(reduce_sum(square(c)));
            } else if (which == 1) {
                const auto& ev = frozen_e[static_cast<std::size_t>(ep_idx)];
                for (int i = 0; i < 4; ++i) {
                    slot_c[static_cast<std::size_t>(i)].push_back(set.entity_concepts(i));
                    for (int d = 0; d < ecfg.d_e; ++d)
                        slot_e[static_cast<std::size_t>(i)].push_back(
                            ev[static_cast<std::size_t>(i) * ecfg.d_e + d]);
                }
            } else {
                parts.push_back(concept_set_kl(set));
            }
            ++ep_idx;
        }
        Tensor loss = [&]() {
            if (which != 1) return add_n(parts);
            std::vector<MiSlotBatch> slots;
            for (int i = 0; i < 4; ++i) {
                MiSlotBatch b;
                b.N = 2;
                b.c = stack_rows(slot_c[static_cast<std::size_t>(i)]);
                b.e_values = slot_e[static_cast<std::size_t>(i)];
                slots.push_back(std::move(b));
            }
            return club_loss(tape, *club, slots);
        }();
        const double v = loss.item();
        if (with_grad) {
            store.zero_grad();
            backward(loss);
        }
        return v;
    }
};

inline OpReport composed_report(const std::string& name, int which, std::uint64_t seed,
                                int instances, double tol) {
    OpReport rep;
    rep.name = name;
    rep.instances = instances;
    Rng pick(seed);
    for (int inst = 0; inst < instances; ++inst) {
        Probe p(seed + static_cast<std::uint64_t>(inst));
        p.loss(which, /*with_grad=*/true);  // populates analytic grads once
        // pick random parameter coordinates, snapshot their analytic grads
        std::vector<std::tuple<std::string, int, double>> coords;
        std::vector<std::string> names;
        for (const auto& [n, _] : p.store) names.push_back(n);
        for (int k = 0; k < 3; ++k) {
            const auto& n = names[static_cast<std::size_t>(pick.uniform_int(static_cast<int>(names.size())))];
            auto& par = p.store.get(n);
            if (par.size() == 0) continue;
            const int idx = pick.uniform_int(static_cast<int>(par.size()));
            coords.emplace_back(n, idx, par.grad[static_cast<std::size_t>(idx)]);
        }
        for (const auto& [n, idx, analytic] : coords) {
            auto& par = p.store.get(n);
            const double h = 1e-5;
            const double orig = par.value[static_cast<std::size_t>(idx)];
            par.value[static_cast<std::size_t>(idx)] = orig + h;
            const double fp = p.loss(which);
            par.value[static_cast<std::size_t>(idx)] = orig - h;
            const double fm = p.loss(which);
            par.value[static_cast<std::size_t>(idx)] = orig;
            const double numeric = (fp - fm) / (2 * h);
            const double err = std::abs(analytic - numeric) /
                               std::max({1.0, std::abs(analytic), std::abs(numeric)});
            rep.max_rel_err = std::max(rep.max_rel_err, err);
        }
    }
    rep.pass = rep.max_rel_err <= tol;
    return rep;
}

}  // namespace composed_detail

inline std::vector<OpReport> composed_gradient_checks(std::uint64_t seed, int instances = 10,
                                                      double tol = 1e-4) {
    return {
        composed_detail::composed_report("encoder_composed", 0, seed, instances, tol),
        composed_detail::composed_report("club_loss_composed", 1, seed + 1, instances, tol),
        composed_detail::composed_report("vib_loss_composed", 2, seed + 2, instances, tol),
    };
}

}  // namespace crl
