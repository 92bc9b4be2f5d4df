#pragma once

#include <string>
#include <utility>
#include <vector>

#include "crl/nn.hpp"
#include "crl/text.hpp"
#include "crl/world.hpp"

namespace crl {

// ---------------------------------------------------------------------------
// Multi-level attention concept encoder. Level 1 queries the text from the
// entity embedding; each later level self-attends over entities concatenated
// with their earlier concepts before querying the text again. Every level
// ends in a Gaussian head (variational bottleneck): train mode samples via
// the reparameterization trick, eval mode takes the mean.
// ---------------------------------------------------------------------------

struct EncoderConfig {
    int m = 2;            // concepts per entity (= attention levels)
    int d_t = 32;         // token embedding dim
    int d_e = 32;         // entity embedding dim
    int d_c = 16;         // concept dim
    int d_k = 32;         // attention query/key dim
    int gru_hidden = 64;
    bool per_token = false;  // keys/values per token instead of per sentence

    int concept_channels() const { return m * d_c; }

    void validate() const {
        if (m < 1) throw ConfigError("encoder: m must be >= 1");
        if (d_t < 1 || d_e < 1 || d_c < 1 || d_k < 1 || gru_hidden < 1)
            throw ConfigError("encoder: all dims must be >= 1");
    }
};

enum class EncodeMode { Train, Eval };

struct TextKV {
    Tensor K;  // [S, d_k]
    Tensor V;  // [S, d_k]
};

// Per-episode reusable pieces: entity embeddings, per-level text keys/values,
// and the level-1 heads (all independent of grid positions and of sampling).
struct EpisodeEncoding {
    Tensor entity_emb;          // [n, d_e]
    std::vector<TextKV> text;   // per level
    Tensor mu1, sigma1;         // [n, d_c]
    int n = 0;
};

// Concepts plus the retained head parameters for the loss terms.
struct ConceptSet {
    std::vector<Tensor> c;      // per level, [n, d_c]
    std::vector<Tensor> mu;     // per level, [n, d_c]
    std::vector<Tensor> sigma;  // per level, [n, d_c]
    int n = 0;
    int m = 0;
    int d_c = 0;

    // concat(c_i1..c_im) for one entity
    Tensor entity_concepts(int i) const {
        std::vector<Tensor> parts;
        for (const auto& level : c) parts.push_back(row_slice(level, i));
        return concat1d(parts);
    }
};

struct ConceptObservation {
    Tensor grid;    // [h, w, m*d_c]
    Tensor global;  // [m*d_c]: carried-entity concepts / message marker / zeros
};

class ConceptEncoder {
public:
    ConceptEncoder(const EncoderConfig& cfg, int vocab_size, ParameterStore& store, Rng& rng)
        : cfg_(cfg) {
        cfg_.validate();
        embedding_ = &store.create("enc/embed", {vocab_size, cfg_.d_t}, cfg_.d_t, rng);
        ent_W_ = &store.create("enc/ent_proj/W", {cfg_.d_t, cfg_.d_e}, cfg_.d_t, rng);
        ent_b_ = &store.create_zeros("enc/ent_proj/b", {cfg_.d_e});
        for (int j = 0; j < cfg_.m; ++j) {
            const std::string p = "enc/l" + std::to_string(j + 1);
            Level lv;
            lv.gru_key = make_gru(store, p + "/gru_key", cfg_.d_t, cfg_.gru_hidden, rng);
            lv.gru_val = make_gru(store, p + "/gru_val", cfg_.d_t, cfg_.gru_hidden, rng);
            lv.key_W = &store.create(p + "/key_proj/W", {cfg_.gru_hidden, cfg_.d_k}, cfg_.gru_hidden, rng);
            lv.key_b = &store.create_zeros(p + "/key_proj/b", {cfg_.d_k});
            lv.val_W = &store.create(p + "/val_proj/W", {cfg_.gru_hidden, cfg_.d_k}, cfg_.gru_hidden, rng);
            lv.val_b = &store.create_zeros(p + "/val_proj/b", {cfg_.d_k});
            lv.mu_head = make_mlp2(store, p + "/mu", cfg_.d_k, cfg_.d_k, cfg_.d_c, rng);
            lv.sigma_head = make_mlp2(store, p + "/sigma", cfg_.d_k, cfg_.d_k, cfg_.d_c, rng);
            // start the heads near-deterministic (sigma ~ 0.13): a zero bias
            // would put sigma at softplus(0) ~ 0.69, drowning the concept
            // signal in sampling noise before the policy can learn anything
            std::fill(lv.sigma_head.b2->value.begin(), lv.sigma_head.b2->value.end(), -2.0);
            if (j == 0) {
                lv.q1 = make_mlp2(store, p + "/q1", cfg_.d_e, cfg_.d_k, cfg_.d_k, rng);
            } else {
                const int dx = cfg_.d_e + j * cfg_.d_c;
                lv.sa = make_self_attention(store, p + "/sa", dx, cfg_.d_k, rng);
            }
            levels_.push_back(lv);
        }
        agent_marker_ = &store.create("enc/agent_marker", {cfg_.concept_channels()},
                                      cfg_.concept_channels(), rng);
        message_marker_ = &store.create("enc/message_marker", {cfg_.concept_channels()},
                                        cfg_.concept_channels(), rng);
    }

    const EncoderConfig& config() const { return cfg_; }

    // Tape-bound parameter handles; enter once per forward pass.
    struct Entered {
        Tensor embedding, ent_W, ent_b;
        struct LevelT {
            GruTensors gru_key, gru_val;
            Tensor key_W, key_b, val_W, val_b;
            Mlp2Tensors mu_head, sigma_head;
            Mlp2Tensors q1;
            Tensor sa_Wq, sa_Wk, sa_Wv;
        };
        std::vector<LevelT> levels;
        Tensor agent_marker, message_marker;
    };

    Entered enter(Tape& tape, bool trainable = true) const {
        auto in = [&](ParamTensor* p) { return trainable ? param(tape, *p) : frozen(tape, *p); };
        Entered e;
        e.embedding = in(embedding_);
        e.ent_W = in(ent_W_);
        e.ent_b = in(ent_b_);
        for (int j = 0; j < cfg_.m; ++j) {
            const Level& lv = levels_[static_cast<std::size_t>(j)];
            Entered::LevelT lt;
            lt.gru_key = enter_gru(tape, lv.gru_key, trainable);
            lt.gru_val = enter_gru(tape, lv.gru_val, trainable);
            lt.key_W = in(lv.key_W);
            lt.key_b = in(lv.key_b);
            lt.val_W = in(lv.val_W);
            lt.val_b = in(lv.val_b);
            lt.mu_head = enter_mlp2(tape, lv.mu_head, trainable);
            lt.sigma_head = enter_mlp2(tape, lv.sigma_head, trainable);
            if (j == 0)
                lt.q1 = enter_mlp2(tape, lv.q1, trainable);
            else {
                lt.sa_Wq = in(lv.sa.Wq);
                lt.sa_Wk = in(lv.sa.Wk);
                lt.sa_Wv = in(lv.sa.Wv);
            }
            e.levels.push_back(std::move(lt));
        }
        e.agent_marker = in(agent_marker_);
        e.message_marker = in(message_marker_);
        return e;
    }

    // Mean of the name-word embeddings (padding excluded), projected to d_e.
    Tensor embed_entities(Tape& tape, const Entered& en, const WorldObservation& obs) const {
        const int n = static_cast<int>(obs.entities.size());
        if (n < 1) throw UsageError("embed_entities: observation has no entities");
        std::vector<int> flat;
        std::vector<std::vector<int>> word_pos(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) {
            for (int w : obs.entities[static_cast<std::size_t>(i)].words)
                if (w != 0) {
                    word_pos[static_cast<std::size_t>(i)].push_back(static_cast<int>(flat.size()));
                    flat.push_back(w);
                }
            if (word_pos[static_cast<std::size_t>(i)].empty())
                throw UsageError("embed_entities: entity has no non-padding words");
        }
        Tensor rows = gather_rows(en.embedding, flat);  // [total, d_t]
        std::vector<double> mix(static_cast<std::size_t>(n) * flat.size(), 0.0);
        for (int i = 0; i < n; ++i)
            for (int p : word_pos[static_cast<std::size_t>(i)])
                mix[static_cast<std::size_t>(i) * flat.size() + static_cast<std::size_t>(p)] =
                    1.0 / static_cast<double>(word_pos[static_cast<std::size_t>(i)].size());
        Tensor mean = matmul(constant(tape, {n, static_cast<int>(flat.size())}, mix), rows);
        return affine(mean, en.ent_W, en.ent_b);  // [n, d_e]
    }

    // Per-sentence keys/values: GRU final hidden per sentence, projected to
    // d_k. per_token mode exposes every in-length token position instead.
    TextKV encode_text_level(Tape& tape, const Entered& en, const TextManual& manual,
                             int level) const {
        if (manual.sentence_count < 1) throw UsageError("encode_text_level: empty manual");
        const auto& lt = en.levels[static_cast<std::size_t>(level)];
        const int S = manual.sentence_count;
        if (!cfg_.per_token) {
            int maxlen = 0;
            std::vector<int> lengths;
            for (int s = 0; s < S; ++s) {
                lengths.push_back(manual.lengths[static_cast<std::size_t>(s)]);
                maxlen = std::max(maxlen, lengths.back());
            }
            std::vector<int> ids;
            for (int s = 0; s < S; ++s)
                for (int t = 0; t < maxlen; ++t)
                    ids.push_back(t < lengths[static_cast<std::size_t>(s)] ? manual.token(s, t) : 0);
            Tensor toks = gather_rows(en.embedding, ids);  // [S*maxlen, d_t]
            Tensor hk = gru_final_batch(toks, S, maxlen, cfg_.d_t, lengths, lt.gru_key);
            Tensor hv = gru_final_batch(toks, S, maxlen, cfg_.d_t, lengths, lt.gru_val);
            return {affine(hk, lt.key_W, lt.key_b), affine(hv, lt.val_W, lt.val_b)};
        }
        std::vector<Tensor> krows, vrows;
        for (int s = 0; s < S; ++s) {
            Tensor toks = gather_rows(en.embedding, manual.sentence_ids(s));
            auto hk = gru_sequence(toks, lt.gru_key);
            auto hv = gru_sequence(toks, lt.gru_val);
            for (int t = 0; t < manual.lengths[static_cast<std::size_t>(s)]; ++t) {
                krows.push_back(row_slice(hk.hiddens, t));
                vrows.push_back(row_slice(hv.hiddens, t));
            }
        }
        return {affine(stack_rows(krows), lt.key_W, lt.key_b),
                affine(stack_rows(vrows), lt.val_W, lt.val_b)};
    }

    // Batched attention of per-entity queries over the text rows.
    static Tensor attend(const Tensor& queries, const TextKV& kv) {
        const int dk = queries.dim(1);
        Tensor scores = scale(matmul(queries, kv.K, false, true), 1.0 / std::sqrt(double(dk)));
        return matmul(softmax(scores), kv.V);  // [n, d_k]
    }

    // Position-independent, sampling-independent episode work.
    EpisodeEncoding encode_episode(Tape& tape, const Entered& en, const WorldObservation& obs,
                                   const TextManual& manual) const {
        EpisodeEncoding ep;
        ep.n = static_cast<int>(obs.entities.size());
        ep.entity_emb = embed_entities(tape, en, obs);
        for (int j = 0; j < cfg_.m; ++j) ep.text.push_back(encode_text_level(tape, en, manual, j));
        Tensor q1 = mlp2(ep.entity_emb, en.levels[0].q1);        // [n, d_k]
        Tensor ctx1 = attend(q1, ep.text[0]);                    // [n, d_k]
        ep.mu1 = mlp2(ctx1, en.levels[0].mu_head);               // [n, d_c]
        ep.sigma1 = sigma_positive(mlp2(ctx1, en.levels[0].sigma_head));
        return ep;
    }

    // Levels in order; level j > 1 self-attends over entities concatenated
    // with their earlier concepts. Train mode draws one noise sample per call.
    ConceptSet encode_concepts(Tape& tape, const Entered& en, const EpisodeEncoding& ep,
                               EncodeMode mode, Rng* rng) const {
        ConceptSet set;
        set.n = ep.n;
        set.m = cfg_.m;
        set.d_c = cfg_.d_c;
        set.mu.push_back(ep.mu1);
        set.sigma.push_back(ep.sigma1);
        set.c.push_back(sample_head(tape, ep.mu1, ep.sigma1, mode, rng));
        for (int j = 1; j < cfg_.m; ++j) {
            std::vector<Tensor> item_rows;
            for (int i = 0; i < ep.n; ++i) {
                std::vector<Tensor> parts{row_slice(ep.entity_emb, i)};
                for (int prev = 0; prev < j; ++prev)
                    parts.push_back(row_slice(set.c[static_cast<std::size_t>(prev)], i));
                item_rows.push_back(concat1d(parts));
            }
            Tensor items = stack_rows(item_rows);  // [n, d_e + j*d_c]
            const auto& lt = en.levels[static_cast<std::size_t>(j)];
            Tensor qj = self_attention(items, lt.sa_Wq, lt.sa_Wk, lt.sa_Wv);  // [n, d_k]
            Tensor ctx = attend(qj, ep.text[static_cast<std::size_t>(j)]);
            Tensor mu = mlp2(ctx, lt.mu_head);
            Tensor sigma = sigma_positive(mlp2(ctx, lt.sigma_head));
            set.mu.push_back(mu);
            set.sigma.push_back(sigma);
            set.c.push_back(sample_head(tape, mu, sigma, mode, rng));
        }
        return set;
    }

    // o_c: entity cells carry that entity's concatenated concepts, the agent
    // cell carries the learned marker, everything else is zero. The global
    // feature holds carried-entity concepts (or the message marker).
    ConceptObservation assemble_observation(Tape& tape, const Entered& en, const ConceptSet& set,
                                            const WorldObservation& obs) const {
        const int C = cfg_.concept_channels();
        std::vector<std::pair<int, Tensor>> cells;
        for (std::size_t i = 0; i < obs.entities.size(); ++i) {
            const auto& e = obs.entities[i];
            if (!e.on_board) continue;
            cells.emplace_back(e.pos.r * obs.width + e.pos.c,
                               set.entity_concepts(static_cast<int>(i)));
        }
        cells.emplace_back(obs.agent.r * obs.width + obs.agent.c, en.agent_marker);
        Tensor flat = compose_rows(tape, obs.height * obs.width, C, cells);
        ConceptObservation out;
        out.grid = reshape(flat, {obs.height, obs.width, C});
        if (obs.carried >= 0)
            out.global = set.entity_concepts(obs.carried);
        else if (obs.message_held)
            out.global = en.message_marker;
        else
            out.global = zeros(tape, {C});
        return out;
    }

    // Full encoder pass for one observation.
    std::pair<ConceptSet, ConceptObservation> encode_all(Tape& tape, const Entered& en,
                                                         const WorldObservation& obs,
                                                         const TextManual& manual, EncodeMode mode,
                                                         Rng* rng) const {
        EpisodeEncoding ep = encode_episode(tape, en, obs, manual);
        ConceptSet set = encode_concepts(tape, en, ep, mode, rng);
        ConceptObservation oc = assemble_observation(tape, en, set, obs);
        return {std::move(set), std::move(oc)};
    }

private:
    static Tensor sample_head(Tape& tape, const Tensor& mu, const Tensor& sigma, EncodeMode mode,
                              Rng* rng) {
        if (mode == EncodeMode::Eval) return mu;
        if (!rng) throw UsageError("encode: train mode requires an rng");
        return reparameterize(mu, sigma, *rng);
    }

    struct Level {
        GruParams gru_key, gru_val;
        ParamTensor* key_W = nullptr;
        ParamTensor* key_b = nullptr;
        ParamTensor* val_W = nullptr;
        ParamTensor* val_b = nullptr;
        Mlp2Params mu_head, sigma_head;
        Mlp2Params q1;
        SelfAttentionParams sa;
    };

    EncoderConfig cfg_;
    ParamTensor* embedding_ = nullptr;
    ParamTensor* ent_W_ = nullptr;
    ParamTensor* ent_b_ = nullptr;
    std::vector<Level> levels_;
    ParamTensor* agent_marker_ = nullptr;
    ParamTensor* message_marker_ = nullptr;
};

}  // namespace crl
