#pragma once

#include <algorithm>
#include <memory>
#include <optional>
#include <sstream>
#include <vector>

#include "crl/encoder.hpp"
#include "crl/env_any.hpp"
#include "crl/mi.hpp"
#include "crl/policy.hpp"

namespace crl {

struct TrainConfig {
    double gamma = 0.99;
    int horizon = 16;     // n-step rollout length
    int num_envs = 16;
    double entropy_coef = 0.01;
    double value_coef = 0.5;
    double lr = 1e-3;
    double grad_clip = 5.0;
    std::int64_t total_steps = 500000;
    int eval_every = 25;        // updates between evaluations
    int eval_episodes = 200;
    int checkpoint_every = 500;  // updates between checkpoints
    std::uint64_t seed = 0;

    void validate() const {
        if (gamma < 0.0 || gamma > 1.0) throw ConfigError("train: gamma must be in [0,1]");
        if (horizon < 1 || num_envs < 1) throw ConfigError("train: horizon and num_envs must be >= 1");
        if (entropy_coef < 0.0 || value_coef < 0.0) throw ConfigError("train: coefficients must be >= 0");
        if (lr <= 0.0) throw ConfigError("train: lr must be positive");
        if (grad_clip <= 0.0) throw ConfigError("train: grad_clip must be positive");
        if (total_steps < 0) throw ConfigError("train: total_steps must be >= 0");
        if (eval_every < 1 || eval_episodes < 1) throw ConfigError("train: eval cadence must be >= 1");
    }
};

struct ActResult {
    int action = 0;
    double log_prob = 0.0;
    double value = 0.0;
};

// Train mode samples from softmax(logits); eval mode takes the argmax with
// lowest-index tie-break.
inline ActResult act(const Tensor& logits, const Tensor& value, Rng& rng, bool eval_mode) {
    ActResult r;
    r.value = value.item();
    const auto& lv = logits.values();
    if (eval_mode) {
        int best = 0;
        for (int i = 1; i < static_cast<int>(lv.size()); ++i)
            if (lv[static_cast<std::size_t>(i)] > lv[static_cast<std::size_t>(best)]) best = i;
        r.action = best;
        double mx = lv[static_cast<std::size_t>(best)], z = 0.0;
        for (double v : lv) z += std::exp(v - mx);
        r.log_prob = -std::log(z);
        return r;
    }
    double mx = lv[0];
    for (double v : lv) mx = std::max(mx, v);
    std::vector<double> p(lv.size());
    double z = 0.0;
    for (std::size_t i = 0; i < lv.size(); ++i) {
        p[i] = std::exp(lv[i] - mx);
        z += p[i];
    }
    const double u = rng.uniform() * z;
    double acc = 0.0;
    int a = static_cast<int>(lv.size()) - 1;
    for (std::size_t i = 0; i < p.size(); ++i) {
        acc += p[i];
        if (u < acc) {
            a = static_cast<int>(i);
            break;
        }
    }
    r.action = a;
    r.log_prob = std::log(p[static_cast<std::size_t>(a)] / z);
    return r;
}

// One environment's segment, aligned arrays of length T.
struct ReturnsInput {
    std::vector<double> reward;
    std::vector<std::uint8_t> done;
    std::vector<std::uint8_t> truncated;
    std::vector<double> value;       // V(s_t) from the rollout critic
    std::vector<double> next_value;  // V(s_{t+1}) where bootstrapping applies
};

// n-step discounted returns, cut at terminals, bootstrapped with the critic
// at truncations and at the segment end; advantage = G - V.
inline void compute_returns(const ReturnsInput& in, double gamma, std::vector<double>& G,
                            std::vector<double>& A) {
    const int T = static_cast<int>(in.reward.size());
    G.assign(static_cast<std::size_t>(T), 0.0);
    A.assign(static_cast<std::size_t>(T), 0.0);
    double running = 0.0;
    for (int t = T - 1; t >= 0; --t) {
        const auto ti = static_cast<std::size_t>(t);
        if (in.done[ti])
            running = in.reward[ti];
        else if (in.truncated[ti] || t == T - 1)
            running = in.reward[ti] + gamma * in.next_value[ti];
        else
            running = in.reward[ti] + gamma * running;
        G[ti] = running;
        A[ti] = running - in.value[ti];
    }
}

struct UpdateMetrics {
    std::int64_t step = 0;  // env steps collected so far
    double loss_rl = 0.0;
    double loss_pg = 0.0;      // policy-gradient component
    double loss_value = 0.0;   // critic regression component
    double mean_abs_advantage = 0.0;
    double loss_club = 0.0;
    double loss_vib = 0.0;
    double loss_total = 0.0;
    double mi_estimate = 0.0;
    double entropy = 0.0;
    double grad_norm = 0.0;
    double rollout_win_rate = -1.0;  // sampled-policy wins among episodes ended this segment
};

// ---------------------------------------------------------------------------
// Synchronous n-step advantage actor-critic over the concept encoder.
// Rollouts run on frozen parameter snapshots (no-grad tapes, one per live
// episode); the update replays the batch through a single gradient tape.
// ---------------------------------------------------------------------------
class Trainer {
public:
    Trainer(EnvSetup setup, EncoderConfig ecfg, MiConfig mcfg, TrainConfig tcfg,
            PolicyConfig pcfg = {})
        : setup_(std::move(setup)), ecfg_(ecfg), mcfg_(mcfg), tcfg_(tcfg) {
        ecfg_.validate();
        mcfg_.validate();
        tcfg_.validate();
        Rng init_rng = Rng(tcfg_.seed).split(1);
        enc_ = std::make_unique<ConceptEncoder>(ecfg_, setup_.vocab_size(), store_, init_rng);
        policy_ = std::make_unique<PolicyNet>(store_, setup_.height(), setup_.width(),
                                              ecfg_.concept_channels(), pcfg, init_rng);
        Rng club_rng = Rng(tcfg_.seed).split(2);
        club_ = std::make_unique<ClubPredictor>(ecfg_.d_e, ecfg_.concept_channels(),
                                                mcfg_.club_hidden, mcfg_.club_lr, club_rng);
        opt_.lr = tcfg_.lr;
        act_rng_ = Rng(tcfg_.seed).split(101);
        eps_rng_ = Rng(tcfg_.seed).split(102);
        for (int i = 0; i < tcfg_.num_envs; ++i) {
            envs_.push_back(setup_.make());
            env_seed_rng_.push_back(Rng(tcfg_.seed).split(200 + static_cast<std::uint64_t>(i)));
            envs_.back().reset(env_seed_rng_.back().next_u64());
        }
        caches_.resize(static_cast<std::size_t>(tcfg_.num_envs));
    }

    const TrainConfig& train_config() const { return tcfg_; }
    const MiConfig& mi_config() const { return mcfg_; }
    const EncoderConfig& encoder_config() const { return ecfg_; }
    const EnvSetup& env_setup() const { return setup_; }
    std::int64_t env_steps() const { return steps_; }
    std::int64_t update_count() const { return updates_; }
    ParameterStore& params() { return store_; }
    const ParameterStore& params() const { return store_; }
    ClubPredictor& club() { return *club_; }
    const ConceptEncoder& encoder() const { return *enc_; }
    const PolicyNet& policy() const { return *policy_; }

    // test hook: keep building the MI graph even at zero coefficients
    void set_mi_graph_always(bool v) { mi_graph_always_ = v; }

    // diagnostic hook: replace learned concepts with fixed ground-truth label
    // patterns, isolating the RL machinery from concept learning
    void set_oracle_concepts(bool v) { oracle_concepts_ = v; }

    // diagnostic hook: pin every episode to one seed (overfit probe)
    void set_fixed_episode_seed(std::uint64_t seed) {
        fixed_episode_seed_ = seed;
        has_fixed_seed_ = true;
    }

    UpdateMetrics update() {
        auto records = rollout();
        const int N = static_cast<int>(records.size());

        const bool use_mi = mi_graph_always_ || mcfg_.alpha1 > 0.0 || mcfg_.alpha2 > 0.0;
        const bool use_club = mi_graph_always_ || mcfg_.alpha1 > 0.0;
        if (use_club && mcfg_.club_steps > 0) refresh_predictor(records);

        // returns per environment sequence
        std::vector<double> G(static_cast<std::size_t>(N)), A(static_cast<std::size_t>(N));
        for (int e = 0; e < tcfg_.num_envs; ++e) {
            ReturnsInput in;
            std::vector<int> idx;
            for (int i = 0; i < N; ++i)
                if (records[static_cast<std::size_t>(i)].env == e) idx.push_back(i);
            for (int i : idx) {
                const auto& r = records[static_cast<std::size_t>(i)];
                in.reward.push_back(r.reward);
                in.done.push_back(r.done);
                in.truncated.push_back(r.truncated);
                in.value.push_back(r.value);
                in.next_value.push_back(r.next_value);
            }
            std::vector<double> g, a;
            compute_returns(in, tcfg_.gamma, g, a);
            for (std::size_t k = 0; k < idx.size(); ++k) {
                G[static_cast<std::size_t>(idx[k])] = g[k];
                A[static_cast<std::size_t>(idx[k])] = a[k];
            }
        }

        // single gradient tape over the whole batch
        Tape tape(true, true);
        auto enc_en = enc_->enter(tape, true);
        auto pol_en = policy_->enter(tape, true);

        std::vector<Tensor> pg_terms, value_terms, entropy_terms, vib_terms;
        const int max_slots = setup_.max_entities();
        std::vector<std::vector<Tensor>> slot_c(static_cast<std::size_t>(max_slots));
        std::vector<std::vector<double>> slot_e(static_cast<std::size_t>(max_slots));

        // one text/entity encoding per distinct episode in the batch
        std::vector<std::pair<const EpisodeRecord*, EpisodeEncoding>> episode_encs;
        auto episode_encoding = [&](const EpisodeRecord* p) -> const EpisodeEncoding& {
            for (const auto& [q, e] : episode_encs)
                if (q == p) return e;
            episode_encs.emplace_back(p, enc_->encode_episode(tape, enc_en, p->roster, p->manual));
            return episode_encs.back().second;
        };
        for (int i = 0; i < N; ++i) {
            const auto& rec = records[static_cast<std::size_t>(i)];
            const EpisodeEncoding& ep_enc = episode_encoding(rec.episode.get());
            ConceptSet set = oracle_concepts_
                                 ? oracle_concept_set(tape, rec.episode->labels)
                                 : enc_->encode_concepts(tape, enc_en, ep_enc, EncodeMode::Train,
                                                         &eps_rng_);
            ConceptObservation oc = enc_->assemble_observation(tape, enc_en, set, rec.obs);
            PolicyNet::Out out = policy_->forward(tape, pol_en, oc.grid, oc.global);
            Tensor logp = log_softmax(out.logits);
            pg_terms.push_back(scale(select(logp, rec.action), -A[static_cast<std::size_t>(i)]));
            value_terms.push_back(square(add_scalar(out.value, -G[static_cast<std::size_t>(i)])));
            entropy_terms.push_back(categorical_entropy(out.logits));
            if (use_mi) {
                vib_terms.push_back(scale(concept_set_kl(set), 1.0 / N));
                for (int s = 0; s < set.n && s < max_slots; ++s) {
                    slot_c[static_cast<std::size_t>(s)].push_back(set.entity_concepts(s));
                    const auto& ee = rec.episode->entity_emb;
                    for (int d = 0; d < ecfg_.d_e; ++d)
                        slot_e[static_cast<std::size_t>(s)].push_back(
                            ee[static_cast<std::size_t>(s) * ecfg_.d_e + d]);
                }
            }
        }

        Tensor l_pg = scale(add_n(pg_terms), 1.0 / N);
        Tensor l_value = scale(add_n(value_terms), 1.0 / N);
        Tensor l_entropy = scale(add_n(entropy_terms), 1.0 / N);
        Tensor l_rl = add(add(l_pg, scale(l_value, tcfg_.value_coef)),
                          scale(l_entropy, -tcfg_.entropy_coef));

        Tensor l_club = scalar(tape, 0.0);
        Tensor l_vib = scalar(tape, 0.0);
        int active_slots = 0;
        if (use_mi) {
            std::vector<MiSlotBatch> slots;
            for (int s = 0; s < max_slots; ++s) {
                if (slot_c[static_cast<std::size_t>(s)].size() < 2) continue;
                MiSlotBatch b;
                b.N = static_cast<int>(slot_c[static_cast<std::size_t>(s)].size());
                b.c = stack_rows(slot_c[static_cast<std::size_t>(s)]);
                b.e_values = slot_e[static_cast<std::size_t>(s)];
                slots.push_back(std::move(b));
            }
            if (use_club && !slots.empty()) l_club = club_loss(tape, *club_, slots);
            active_slots = static_cast<int>(slots.size());
            l_vib = add_n(vib_terms);
        }

        Tensor total = combined_loss(l_rl, l_club, l_vib, mcfg_.alpha1, mcfg_.alpha2);
        if (!std::isfinite(total.item()))
            throw NumericError("update: non-finite loss; components rl=" +
                               std::to_string(l_rl.item()) + " club=" + std::to_string(l_club.item()) +
                               " vib=" + std::to_string(l_vib.item()));

        store_.zero_grad();
        backward(total);
        store_.clip_grad_norm(tcfg_.grad_clip);
        const double gnorm = store_.grad_norm();
        opt_.step(store_);

        // parameter snapshot changed: episode caches must be rebuilt
        for (auto& c : caches_) c.valid = false;

        steps_ += N;
        ++updates_;
        UpdateMetrics m;
        m.step = steps_;
        if (rollout_episodes_ > 0) {
            m.rollout_win_rate = static_cast<double>(rollout_wins_) / rollout_episodes_;
            if (rollout_episodes_ >= 200) {
                rollout_episodes_ = 0;
                rollout_wins_ = 0;
            }
        }
        m.loss_rl = l_rl.item();
        m.loss_pg = l_pg.item();
        m.loss_value = l_value.item();
        double abs_a = 0.0;
        for (double a : A) abs_a += std::abs(a);
        m.mean_abs_advantage = abs_a / N;
        m.loss_club = l_club.item();
        m.loss_vib = l_vib.item();
        m.loss_total = total.item();
        m.mi_estimate = active_slots > 0 ? l_club.item() / active_slots : 0.0;
        m.entropy = l_entropy.item();
        m.grad_norm = gnorm;
        return m;
    }

    // Deterministic evaluation: mean concepts, argmax actions, seeded episode
    // set. Returns the fraction of episodes that hit the success terminal.
    double evaluate(int episodes, std::uint64_t eval_seed_base,
                    std::optional<MsgSplit> split_override = {}) const {
        if (episodes < 1) throw UsageError("evaluate: episodes must be >= 1");
        AnyEnv env = split_override ? setup_.make_with_split(*split_override) : setup_.make();
        int wins = 0;
        for (int i = 0; i < episodes; ++i) {
            const std::uint64_t seed =
                Rng(eval_seed_base).split(static_cast<std::uint64_t>(i)).next_u64();
            env.reset(seed);
            if (run_eval_episode(env)) ++wins;
        }
        return static_cast<double>(wins) / episodes;
    }

    // Runs one episode greedily with frozen params; true on the +1 terminal.
    bool run_eval_episode(AnyEnv& env) const {
        Tape tape(false, true);
        auto enc_en = enc_->enter(tape, false);
        auto pol_en = policy_->enter(tape, false);
        const WorldObservation roster = env.observation();
        EpisodeEncoding ep = enc_->encode_episode(tape, enc_en, roster, env.manual());
        ConceptSet set = oracle_concepts_ ? oracle_concept_set(tape, env.entity_labels())
                                          : enc_->encode_concepts(tape, enc_en, ep, EncodeMode::Eval,
                                                                  nullptr);
        Rng dummy;
        while (!env.episode_over()) {
            WorldObservation obs = env.observation();
            ConceptObservation oc = enc_->assemble_observation(tape, enc_en, set, obs);
            PolicyNet::Out out = policy_->forward(tape, pol_en, oc.grid, oc.global);
            ActResult a = act(out.logits, out.value, dummy, /*eval=*/true);
            StepResult r = env.step(static_cast<Action>(a.action));
            if (r.win) return true;
            if (r.done || r.truncated) return false;
        }
        return false;
    }

    void save(std::ostream& os) const;
    void load(std::istream& is);

private:
    struct EpisodeRecord {
        TextManual manual;
        WorldObservation roster;
        std::uint64_t seed = 0;
        std::vector<double> entity_emb;  // n x d_e, frozen rollout values
        std::vector<int> labels;         // ground-truth roles (diagnostics)
        int n = 0;
    };

    // fixed distinct block per ground-truth label, dim m*d_c
    ConceptSet oracle_concept_set(Tape& tape, const std::vector<int>& labels) const {
        ConceptSet set;
        set.n = static_cast<int>(labels.size());
        set.m = ecfg_.m;
        set.d_c = ecfg_.d_c;
        for (int j = 0; j < ecfg_.m; ++j) {
            std::vector<double> cv(static_cast<std::size_t>(set.n) * ecfg_.d_c, 0.0);
            std::vector<double> sg(cv.size(), 1.0);
            for (int i = 0; i < set.n; ++i)
                cv[static_cast<std::size_t>(i) * ecfg_.d_c +
                   static_cast<std::size_t>(labels[static_cast<std::size_t>(i)]) % ecfg_.d_c] = 2.0;
            set.c.push_back(constant(tape, {set.n, ecfg_.d_c}, cv));
            set.mu.push_back(set.c.back());
            set.sigma.push_back(constant(tape, {set.n, ecfg_.d_c}, sg));
        }
        return set;
    }

    struct StepRecord {
        int env = 0;
        std::shared_ptr<EpisodeRecord> episode;
        WorldObservation obs;
        int action = 0;
        double reward = 0.0;
        bool done = false;
        bool truncated = false;
        double value = 0.0;
        double log_prob = 0.0;
        double next_value = 0.0;
        std::vector<double> concepts;  // n x (m*d_c) rollout samples
    };

    struct EpisodeCache {
        std::unique_ptr<Tape> tape;
        ConceptEncoder::Entered enc_en;
        PolicyNet::Entered pol_en;
        EpisodeEncoding ep;
        std::shared_ptr<EpisodeRecord> record;
        bool valid = false;
    };

    void rebuild_cache(int i) {
        EpisodeCache& c = caches_[static_cast<std::size_t>(i)];
        c.tape = std::make_unique<Tape>(false, true);
        c.enc_en = enc_->enter(*c.tape, false);
        c.pol_en = policy_->enter(*c.tape, false);
        const WorldObservation roster = envs_[static_cast<std::size_t>(i)].observation();
        c.ep = enc_->encode_episode(*c.tape, c.enc_en, roster,
                                    envs_[static_cast<std::size_t>(i)].manual());
        auto rec = std::make_shared<EpisodeRecord>();
        rec->manual = envs_[static_cast<std::size_t>(i)].manual();
        rec->roster = roster;
        rec->seed = envs_[static_cast<std::size_t>(i)].episode_seed();
        rec->n = c.ep.n;
        rec->entity_emb = c.ep.entity_emb.values();
        rec->labels = envs_[static_cast<std::size_t>(i)].entity_labels();
        c.record = std::move(rec);
        c.valid = true;
    }

    // value of the env's current observation under the episode cache
    double state_value(int i) {
        EpisodeCache& c = caches_[static_cast<std::size_t>(i)];
        ConceptSet set = oracle_concepts_
                             ? oracle_concept_set(*c.tape, c.record->labels)
                             : enc_->encode_concepts(*c.tape, c.enc_en, c.ep, EncodeMode::Train,
                                                     &act_rng_);
        ConceptObservation oc = enc_->assemble_observation(
            *c.tape, c.enc_en, set, envs_[static_cast<std::size_t>(i)].observation());
        return policy_->forward(*c.tape, c.pol_en, oc.grid, oc.global).value.item();
    }

    std::vector<StepRecord> rollout() {
        std::vector<StepRecord> records;
        records.reserve(static_cast<std::size_t>(tcfg_.num_envs) * tcfg_.horizon);
        for (int t = 0; t < tcfg_.horizon; ++t) {
            for (int i = 0; i < tcfg_.num_envs; ++i) {
                EpisodeCache& c = caches_[static_cast<std::size_t>(i)];
                if (!c.valid) rebuild_cache(i);
                AnyEnv& env = envs_[static_cast<std::size_t>(i)];
                StepRecord rec;
                rec.env = i;
                rec.episode = c.record;
                rec.obs = env.observation();

                ConceptSet set = oracle_concepts_
                                     ? oracle_concept_set(*c.tape, c.record->labels)
                                     : enc_->encode_concepts(*c.tape, c.enc_en, c.ep,
                                                             EncodeMode::Train, &act_rng_);
                ConceptObservation oc = enc_->assemble_observation(*c.tape, c.enc_en, set, rec.obs);
                PolicyNet::Out out = policy_->forward(*c.tape, c.pol_en, oc.grid, oc.global);
                ActResult a = act(out.logits, out.value, act_rng_, false);
                rec.action = a.action;
                rec.value = a.value;
                rec.log_prob = a.log_prob;
                for (int s = 0; s < set.n; ++s) {
                    Tensor cv = set.entity_concepts(s);
                    rec.concepts.insert(rec.concepts.end(), cv.values().begin(), cv.values().end());
                }

                const StepResult r = env.step(static_cast<Action>(rec.action));
                rec.reward = r.reward;
                rec.done = r.done;
                rec.truncated = r.truncated;
                if (r.done || r.truncated) {
                    ++rollout_episodes_;
                    rollout_wins_ += r.win;
                }
                if (r.done) {
                    rec.next_value = 0.0;
                    env.reset(next_episode_seed(i));
                    rebuild_cache(i);
                } else if (r.truncated) {
                    rec.next_value = state_value(i);
                    env.reset(next_episode_seed(i));
                    rebuild_cache(i);
                } else if (t == tcfg_.horizon - 1) {
                    rec.next_value = state_value(i);
                }
                records.push_back(std::move(rec));
            }
        }
        return records;
    }

    std::uint64_t next_episode_seed(int i) {
        const std::uint64_t s = env_seed_rng_[static_cast<std::size_t>(i)].next_u64();
        return has_fixed_seed_ ? fixed_episode_seed_ : s;
    }

    void refresh_predictor(const std::vector<StepRecord>& records) {
        std::vector<double> e, c;
        int n_pairs = 0;
        const int D = ecfg_.concept_channels();
        for (const auto& rec : records) {
            for (int s = 0; s < rec.episode->n; ++s) {
                const auto& ee = rec.episode->entity_emb;
                e.insert(e.end(), ee.begin() + static_cast<std::ptrdiff_t>(s) * ecfg_.d_e,
                         ee.begin() + static_cast<std::ptrdiff_t>(s + 1) * ecfg_.d_e);
                c.insert(c.end(), rec.concepts.begin() + static_cast<std::ptrdiff_t>(s) * D,
                         rec.concepts.begin() + static_cast<std::ptrdiff_t>(s + 1) * D);
                ++n_pairs;
            }
        }
        if (n_pairs >= 2) club_->train(e, c, n_pairs, mcfg_.club_steps);
    }

    EnvSetup setup_;
    EncoderConfig ecfg_;
    MiConfig mcfg_;
    TrainConfig tcfg_;
    ParameterStore store_;
    std::unique_ptr<ConceptEncoder> enc_;
    std::unique_ptr<PolicyNet> policy_;
    std::unique_ptr<ClubPredictor> club_;
    AdamOptimizer opt_;
    std::vector<AnyEnv> envs_;
    std::vector<Rng> env_seed_rng_;
    std::vector<EpisodeCache> caches_;
    Rng act_rng_, eps_rng_;
    std::int64_t steps_ = 0;
    std::int64_t updates_ = 0;
    int rollout_wins_ = 0;
    int rollout_episodes_ = 0;
    bool mi_graph_always_ = false;
    bool oracle_concepts_ = false;
    bool has_fixed_seed_ = false;
    std::uint64_t fixed_episode_seed_ = 0;
};

}  // namespace crl
