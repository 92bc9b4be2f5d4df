#pragma once

#include <array>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <set>
#include <sstream>
#include <unordered_map>
#include <vector>

#include "crl/rng.hpp"
#include "crl/text.hpp"
#include "crl/world.hpp"

namespace crl {

// ---------------------------------------------------------------------------
// Messenger-mini: read the manual to tell sender from receiver (and decoys in
// stage 3), collect the message, deliver it. Train and test use disjoint
// (name, role) assignments.
// ---------------------------------------------------------------------------

enum class MsgStage { S1, S2, S3 };
enum class MsgSplit { Train, Test };
enum class MsgRole { Sender = 0, Receiver = 1, Decoy = 2 };
enum class MsgMove { Stationary = 0, Chaser = 1, Fleeing = 2 };

inline std::string to_string(MsgRole r) {
    switch (r) {
        case MsgRole::Sender: return "sender";
        case MsgRole::Receiver: return "receiver";
        case MsgRole::Decoy: return "decoy";
    }
    return "?";
}

inline std::string to_string(MsgStage s) {
    switch (s) {
        case MsgStage::S1: return "S1";
        case MsgStage::S2: return "S2";
        case MsgStage::S3: return "S3";
    }
    return "?";
}

struct MessengerConfig {
    int height = 10;
    int width = 10;
    int max_steps = 64;
    MsgStage stage = MsgStage::S2;
    MsgSplit split = MsgSplit::Train;
    std::vector<std::string> names = {"mage",  "airplane", "dog",  "bird",
                                      "robot", "queen",    "ship", "thief"};
    int words_per_cell = 2;
    int num_sent = 8;
    int l_sent = 16;
    std::uint64_t split_seed = 1234;  // fixed per experiment; defines the OOD split

    void validate() const {
        if (height < 4 || width < 4) throw ConfigError("messenger grid must be at least 4x4");
        if (names.size() < 6)
            throw ConfigError("messenger needs at least 6 entity names for the OOD split");
        if (max_steps < 1) throw ConfigError("max_steps must be positive");
    }
};

// Disjoint (name, role) pairs for train and test. Latin-style: each name
// takes one role in train and the cyclic successor in test.
struct OodSplit {
    std::map<std::string, MsgRole> train_role;
    std::map<std::string, MsgRole> test_role;

    MsgRole role(const std::string& name, MsgSplit s) const {
        const auto& m = s == MsgSplit::Train ? train_role : test_role;
        return m.at(name);
    }

    std::vector<std::string> names_with_role(MsgRole r, MsgSplit s) const {
        const auto& m = s == MsgSplit::Train ? train_role : test_role;
        std::vector<std::string> out;
        for (const auto& [n, role] : m)
            if (role == r) out.push_back(n);
        return out;
    }

    std::set<std::pair<std::string, int>> pairs(MsgSplit s) const {
        const auto& m = s == MsgSplit::Train ? train_role : test_role;
        std::set<std::pair<std::string, int>> out;
        for (const auto& [n, role] : m) out.emplace(n, static_cast<int>(role));
        return out;
    }
};

inline OodSplit make_ood_split(const std::vector<std::string>& names, Rng& rng) {
    if (names.size() < 6) throw ConfigError("ood split needs at least 6 names");
    std::vector<std::string> order = names;
    for (int i = static_cast<int>(order.size()) - 1; i > 0; --i)
        std::swap(order[static_cast<std::size_t>(i)],
                  order[static_cast<std::size_t>(rng.uniform_int(i + 1))]);
    const int offset = rng.uniform_int(3);
    OodSplit split;
    for (std::size_t p = 0; p < order.size(); ++p) {
        const int tr = (static_cast<int>(p) + offset) % 3;
        split.train_role[order[p]] = static_cast<MsgRole>(tr);
        split.test_role[order[p]] = static_cast<MsgRole>((tr + 1) % 3);
    }
    return split;
}

struct MsgEntityDef {
    std::string name;
    MsgRole role = MsgRole::Sender;
    MsgMove move = MsgMove::Stationary;
};

struct RoleAssignment {
    std::vector<MsgEntityDef> entities;  // roster order
    std::vector<Pos> positions;
    Pos agent_start;
    bool message_pre_held = false;  // S1 delivering variant
    std::vector<std::string> irrelevant;  // extra manual sentences (S3)
};

inline std::vector<MsgRole> ground_truth_roles(const RoleAssignment& a) {
    std::vector<MsgRole> out;
    for (const auto& e : a.entities) out.push_back(e.role);
    return out;
}

inline Vocabulary build_messenger_vocab(const MessengerConfig& cfg) {
    Vocabulary v;
    for (const char* w :
         {"the",      "that",        "holds",   "message", "is",     "carried", "by",   "seek",
          "to",       "collect",     "awaits",  "deliver", "final",  "destination", "for",
          "a",        "deadly",      "enemy",   "avoid",   "at",     "all",     "costs",
          "will",     "destroy",     "you",     "not",     "able",   "move",    "stands",
          "perfectly","still",       "never",   "moves",   "hunts",  "down",    "chases",
          "after",    "closes",      "in",      "on",      "runs",   "away",    "from",
          "flees",    "your",        "approach","keeps",   "its",    "distance",
          "arena",    "quiet",       "today",   "stone",   "walls",  "surround","field",
          "cold",     "wind",        "blows",   "over",    "land"})
        v.add(w);
    for (const auto& n : cfg.names) v.add(n);
    return v;
}

namespace msg_detail {

inline std::string move_phrase(MsgMove m, int tpl) {
    switch (m) {
        case MsgMove::Stationary:
            return tpl == 0 ? "is not able to move"
                            : tpl == 1 ? "stands perfectly still" : "never moves";
        case MsgMove::Chaser:
            return tpl == 0 ? "hunts you down" : tpl == 1 ? "chases after you" : "closes in on you";
        case MsgMove::Fleeing:
            return tpl == 0 ? "runs away from you"
                            : tpl == 1 ? "flees at your approach" : "keeps its distance";
    }
    return "";
}

inline std::string role_sentence(MsgRole role, const std::string& name, const std::string& move,
                                 int tpl) {
    switch (role) {
        case MsgRole::Sender:
            switch (tpl) {
                case 0: return "the " + name + " that " + move + " holds the message";
                case 1: return "the message is carried by the " + name + " that " + move;
                default: return "seek the " + name + " that " + move + " to collect the message";
            }
        case MsgRole::Receiver:
            switch (tpl) {
                case 0: return "the " + name + " that " + move + " awaits the message";
                case 1: return "deliver the message to the " + name + " that " + move;
                default:
                    return "the " + name + " that " + move + " is the final destination for the message";
            }
        case MsgRole::Decoy:
            switch (tpl) {
                case 0: return "the " + name + " that " + move + " is a deadly enemy";
                case 1: return "avoid the " + name + " that " + move + " at all costs";
                default: return "the " + name + " that " + move + " will destroy you";
            }
    }
    return "";
}

inline std::string neutral_sentence(int tpl) {
    switch (tpl) {
        case 0: return "the arena is quiet today";
        case 1: return "stone walls surround the field";
        default: return "a cold wind blows over the land";
    }
}

template <class T>
void shuffle(std::vector<T>& v, Rng& rng) {
    for (int i = static_cast<int>(v.size()) - 1; i > 0; --i)
        std::swap(v[static_cast<std::size_t>(i)], v[static_cast<std::size_t>(rng.uniform_int(i + 1))]);
}

}  // namespace msg_detail

// One role sentence per on-board entity (name + movement descriptor), plus
// the assignment's irrelevant sentences, shuffled.
inline TextManual generate_messenger_manual(const RoleAssignment& a, const MessengerConfig& cfg,
                                            const Vocabulary& vocab, Rng& rng) {
    std::vector<std::string> sentences;
    for (const auto& e : a.entities)
        sentences.push_back(msg_detail::role_sentence(
            e.role, e.name, msg_detail::move_phrase(e.move, rng.uniform_int(3)), rng.uniform_int(3)));
    for (const auto& s : a.irrelevant) sentences.push_back(s);
    msg_detail::shuffle(sentences, rng);
    return tokenize_manual(sentences, vocab, cfg.num_sent, cfg.l_sent);
}

class MessengerEnv {
public:
    explicit MessengerEnv(MessengerConfig cfg) {
        cfg.validate();
        vocab_ = std::make_shared<Vocabulary>(build_messenger_vocab(cfg));
        Rng split_rng(cfg.split_seed);
        split_ = std::make_shared<const OodSplit>(make_ood_split(cfg.names, split_rng));
        cfg_ = std::make_shared<const MessengerConfig>(std::move(cfg));
    }

    void reset(std::uint64_t seed) {
        Rng layout_rng = Rng(seed).split(11);
        Rng manual_rng = Rng(seed).split(12);
        for (int attempt = 0; attempt < 500; ++attempt) {
            RoleAssignment a = sample_assignment(layout_rng);
            init_episode(a, manual_rng, seed);
            if (oracle_ok()) return;
        }
        throw ConfigError("messenger reset: no solvable episode found; config unsatisfiable");
    }

    void reset_with_assignment(const RoleAssignment& a, std::uint64_t seed) {
        Rng manual_rng = Rng(seed).split(12);
        init_episode(a, manual_rng, seed);
    }

    StepResult step(Action act) {
        if (st_.over) throw UsageError("step after episode end");
        StepResult res;
        Pos np = moved(st_.agent, act);
        if (!in_bounds(np)) np = st_.agent;
        st_.agent = np;
        {
            const int e = entity_at(np);
            if (e >= 0 && resolve_contact(e, res)) return res;
        }
        for (int i = 0; i < st_.n_entities && !st_.over; ++i) {
            if (!st_.on_board[static_cast<std::size_t>(i)]) continue;
            const MsgMove mv = ep_->assignment.entities[static_cast<std::size_t>(i)].move;
            if (mv == MsgMove::Stationary) continue;
            move_entity(i, mv == MsgMove::Chaser);
            if (st_.epos[static_cast<std::size_t>(i)] == st_.agent && resolve_contact(i, res))
                return res;
        }
        ++st_.steps;
        if (st_.steps >= cfg_->max_steps) {
            res.truncated = true;
            st_.over = true;
        }
        return res;
    }

    WorldObservation observation() const {
        WorldObservation o;
        o.height = cfg_->height;
        o.width = cfg_->width;
        o.words_per_cell = cfg_->words_per_cell;
        o.agent = st_.agent;
        o.message_held = st_.message;
        for (int i = 0; i < st_.n_entities; ++i) {
            Entity e;
            e.id = i;
            e.words = ep_->entity_words[static_cast<std::size_t>(i)];
            e.pos = st_.epos[static_cast<std::size_t>(i)];
            e.on_board = st_.on_board[static_cast<std::size_t>(i)] != 0;
            o.entities.push_back(std::move(e));
        }
        return o;
    }

    const TextManual& manual() const { return ep_->manual; }
    const RoleAssignment& assignment() const { return ep_->assignment; }
    const Vocabulary& vocab() const { return *vocab_; }
    const MessengerConfig& config() const { return *cfg_; }
    const OodSplit& split() const { return *split_; }
    bool episode_over() const { return st_.over; }
    int steps() const { return st_.steps; }
    bool message_held() const { return st_.message; }
    std::uint64_t episode_seed() const { return ep_->seed; }
    Pos agent_pos() const { return st_.agent; }
    Pos entity_pos(int i) const { return st_.epos[static_cast<std::size_t>(i)]; }

    std::uint64_t state_key() const {
        std::uint64_t k = static_cast<std::uint64_t>(cell(st_.agent));
        for (int i = 0; i < st_.n_entities; ++i)
            k = k * 101 +
                static_cast<std::uint64_t>(st_.on_board[static_cast<std::size_t>(i)]
                                               ? cell(st_.epos[static_cast<std::size_t>(i)])
                                               : 100);
        return k * 2 + (st_.message ? 1 : 0);
    }

    void save(std::ostream& os) const;
    void load(std::istream& is);

private:
    struct EpisodeData {
        RoleAssignment assignment;
        TextManual manual;
        std::vector<std::vector<int>> entity_words;
        std::uint64_t seed = 0;
    };

    struct SimState {
        Pos agent;
        std::array<Pos, 4> epos;
        std::array<std::uint8_t, 4> on_board{0, 0, 0, 0};
        int n_entities = 0;
        bool message = false;
        int steps = 0;
        bool over = false;
    };

    bool in_bounds(Pos p) const {
        return p.r >= 0 && p.r < cfg_->height && p.c >= 0 && p.c < cfg_->width;
    }
    int cell(Pos p) const { return p.r * cfg_->width + p.c; }

    int entity_at(Pos p) const {
        for (int i = 0; i < st_.n_entities; ++i)
            if (st_.on_board[static_cast<std::size_t>(i)] && st_.epos[static_cast<std::size_t>(i)] == p)
                return i;
        return -1;
    }

    // Returns true when the episode ended.
    bool resolve_contact(int e, StepResult& res) {
        const MsgRole role = ep_->assignment.entities[static_cast<std::size_t>(e)].role;
        switch (role) {
            case MsgRole::Sender:
                if (!st_.message) {
                    if (cfg_->stage == MsgStage::S1) {
                        // the acquiring sub-task ends on acquisition
                        res.reward += 1.0;
                        res.done = true;
                        res.win = true;
                        st_.over = true;
                        return true;
                    }
                    res.reward += 0.5;
                    st_.message = true;
                    st_.on_board[static_cast<std::size_t>(e)] = 0;
                }
                return false;
            case MsgRole::Receiver:
                if (st_.message) {
                    res.reward += 1.0;
                    res.win = true;
                } else {
                    res.reward += -1.0;
                }
                res.done = true;
                st_.over = true;
                return true;
            case MsgRole::Decoy:
                res.reward += -1.0;
                res.done = true;
                st_.over = true;
                return true;
        }
        return false;
    }

    // Greedy chase / flee with the fixed Up<Down<Left<Right tie-break; moves
    // only when the distance strictly improves.
    void move_entity(int idx, bool chase) {
        const Pos cur = st_.epos[static_cast<std::size_t>(idx)];
        int best = manhattan(cur, st_.agent);
        Pos best_pos = cur;
        for (Action a : kMoveOrder) {
            const Pos np = moved(cur, a);
            if (!in_bounds(np)) continue;
            const int other = entity_at(np);
            if (other >= 0 && other != idx) continue;
            const int d = manhattan(np, st_.agent);
            if (chase ? d < best : d > best) {
                best = d;
                best_pos = np;
            }
        }
        st_.epos[static_cast<std::size_t>(idx)] = best_pos;
    }

    RoleAssignment sample_assignment(Rng& rng) {
        const MsgSplit sp = cfg_->split;
        auto senders = split_->names_with_role(MsgRole::Sender, sp);
        auto receivers = split_->names_with_role(MsgRole::Receiver, sp);
        auto decoys = split_->names_with_role(MsgRole::Decoy, sp);

        auto draw = [&rng](std::vector<std::string>& pool) {
            const int i = rng.uniform_int(static_cast<int>(pool.size()));
            std::string out = pool[static_cast<std::size_t>(i)];
            pool.erase(pool.begin() + i);
            return out;
        };
        auto sample_move = [&rng]() {
            const double u = rng.uniform();
            if (u < 0.5) return MsgMove::Stationary;
            return u < 0.75 ? MsgMove::Chaser : MsgMove::Fleeing;
        };

        RoleAssignment a;
        switch (cfg_->stage) {
            case MsgStage::S1:
                if (rng.uniform() < 0.5) {
                    a.entities.push_back({draw(senders), MsgRole::Sender, sample_move()});
                } else {
                    a.entities.push_back({draw(receivers), MsgRole::Receiver, sample_move()});
                    a.message_pre_held = true;
                }
                break;
            case MsgStage::S3: {
                a.entities.push_back({draw(senders), MsgRole::Sender, sample_move()});
                a.entities.push_back({draw(receivers), MsgRole::Receiver, sample_move()});
                const int n_decoys = 1 + rng.uniform_int(2);
                for (int i = 0; i < n_decoys && !decoys.empty(); ++i)
                    a.entities.push_back({draw(decoys), MsgRole::Decoy, sample_move()});
                break;
            }
            case MsgStage::S2:
                a.entities.push_back({draw(senders), MsgRole::Sender, sample_move()});
                a.entities.push_back({draw(receivers), MsgRole::Receiver, sample_move()});
                break;
        }
        msg_detail::shuffle(a.entities, rng);

        if (cfg_->stage == MsgStage::S3) {
            // 1-3 irrelevant sentences: off-board entities or neutral facts
            std::vector<std::string> unused;
            for (const auto& n : cfg_->names) {
                bool used = false;
                for (const auto& e : a.entities) used = used || e.name == n;
                if (!used) unused.push_back(n);
            }
            const int n_irr = 1 + rng.uniform_int(3);
            for (int i = 0; i < n_irr; ++i) {
                if (!unused.empty() && rng.uniform() < 0.7) {
                    const int j = rng.uniform_int(static_cast<int>(unused.size()));
                    const auto role = static_cast<MsgRole>(rng.uniform_int(3));
                    a.irrelevant.push_back(msg_detail::role_sentence(
                        role, unused[static_cast<std::size_t>(j)],
                        msg_detail::move_phrase(static_cast<MsgMove>(rng.uniform_int(3)),
                                                rng.uniform_int(3)),
                        rng.uniform_int(3)));
                    unused.erase(unused.begin() + j);
                } else {
                    a.irrelevant.push_back(msg_detail::neutral_sentence(rng.uniform_int(3)));
                }
            }
        }

        const int cells_needed = 1 + static_cast<int>(a.entities.size());
        std::vector<int> cells(static_cast<std::size_t>(cfg_->height * cfg_->width));
        for (std::size_t i = 0; i < cells.size(); ++i) cells[i] = static_cast<int>(i);
        msg_detail::shuffle(cells, rng);
        a.agent_start = {cells[0] / cfg_->width, cells[0] % cfg_->width};
        for (int i = 1; i < cells_needed; ++i)
            a.positions.push_back({cells[static_cast<std::size_t>(i)] / cfg_->width,
                                   cells[static_cast<std::size_t>(i)] % cfg_->width});
        return a;
    }

    void init_episode(const RoleAssignment& a, Rng& manual_rng, std::uint64_t seed) {
        auto ep = std::make_shared<EpisodeData>();
        ep->assignment = a;
        ep->seed = seed;
        ep->manual = generate_messenger_manual(a, *cfg_, *vocab_, manual_rng);
        for (const auto& e : a.entities) ep->entity_words.push_back({vocab_->id(e.name), 0});
        ep_ = std::move(ep);
        st_ = SimState{};
        st_.agent = a.agent_start;
        st_.n_entities = static_cast<int>(a.entities.size());
        for (int i = 0; i < st_.n_entities; ++i) {
            st_.epos[static_cast<std::size_t>(i)] = a.positions[static_cast<std::size_t>(i)];
            st_.on_board[static_cast<std::size_t>(i)] = 1;
        }
        st_.message = a.message_pre_held;
    }

    bool oracle_ok() const;

    std::shared_ptr<const Vocabulary> vocab_;
    std::shared_ptr<const OodSplit> split_;
    std::shared_ptr<const MessengerConfig> cfg_;
    std::shared_ptr<const EpisodeData> ep_;
    SimState st_;
};

// BFS over simulator clones; entity movement is deterministic, so states
// merge on (agent, entity cells, message flag). The node cap doubles as the
// episode-validity criterion: reset() resamples layouts whose search exceeds
// it, so accepted episodes always carry a quickly-findable plan.
inline std::optional<std::vector<Action>> oracle_solve(const MessengerEnv& env,
                                                       int node_cap = 30000) {
    if (env.episode_over()) return std::nullopt;
    struct NodeRef {
        int parent;
        Action action;
    };
    std::vector<MessengerEnv> states{env};
    std::vector<NodeRef> refs{{-1, Action::Stay}};
    std::unordered_map<std::uint64_t, char> seen;
    seen.emplace(env.state_key(), 1);
    for (std::size_t head = 0; head < states.size(); ++head) {
        for (int ai = 0; ai < kNumActions; ++ai) {
            MessengerEnv next = states[head];
            const StepResult r = next.step(static_cast<Action>(ai));
            if (r.win) {
                std::vector<Action> plan{static_cast<Action>(ai)};
                for (int at = static_cast<int>(head); refs[static_cast<std::size_t>(at)].parent >= 0;
                     at = refs[static_cast<std::size_t>(at)].parent)
                    plan.push_back(refs[static_cast<std::size_t>(at)].action);
                std::reverse(plan.begin(), plan.end());
                return plan;
            }
            if (r.done || r.truncated) continue;
            const std::uint64_t key = next.state_key();
            if (seen.count(key)) continue;
            if (static_cast<int>(states.size()) >= node_cap) return std::nullopt;
            seen.emplace(key, 1);
            states.push_back(std::move(next));
            refs.push_back({static_cast<int>(head), static_cast<Action>(ai)});
        }
    }
    return std::nullopt;
}

inline bool MessengerEnv::oracle_ok() const { return oracle_solve(*this).has_value(); }

inline void MessengerEnv::save(std::ostream& os) const {
    const auto& a = ep_->assignment;
    os << "seed=" << ep_->seed << "\n";
    os << "n=" << a.entities.size() << "\n";
    for (std::size_t i = 0; i < a.entities.size(); ++i) {
        const auto& e = a.entities[i];
        os << "entity." << i << "=" << e.name << " " << static_cast<int>(e.role) << " "
           << static_cast<int>(e.move) << "\n";
        os << "pos." << i << "=" << a.positions[i].r << " " << a.positions[i].c << "\n";
    }
    os << "agent=" << a.agent_start.r << " " << a.agent_start.c << "\n";
    os << "preheld=" << int(a.message_pre_held) << "\n";
    os << "irrelevant=" << a.irrelevant.size() << "\n";
    for (const auto& s : a.irrelevant) os << "irr=" << s << "\n";
    os << "manual_sentences=" << ep_->manual.sentence_count << "\n";
    for (int s = 0; s < ep_->manual.sentence_count; ++s) {
        os << "manual." << s << "=";
        for (int t = 0; t < ep_->manual.lengths[static_cast<std::size_t>(s)]; ++t)
            os << (t ? " " : "") << ep_->manual.token(s, t);
        os << "\n";
    }
    os << "st.agent=" << st_.agent.r << " " << st_.agent.c << "\n";
    for (int i = 0; i < st_.n_entities; ++i)
        os << "st.e" << i << "=" << st_.epos[static_cast<std::size_t>(i)].r << " "
           << st_.epos[static_cast<std::size_t>(i)].c << " "
           << int(st_.on_board[static_cast<std::size_t>(i)]) << "\n";
    os << "st.message=" << int(st_.message) << "\n";
    os << "st.steps=" << st_.steps << "\n";
    os << "st.over=" << int(st_.over) << "\n";
}

inline void MessengerEnv::load(std::istream& is) {
    auto ep = std::make_shared<EpisodeData>();
    std::string line;
    auto next_val = [&]() {
        if (!std::getline(is, line)) throw UsageError("messenger load: truncated snapshot");
        return line.substr(line.find('=') + 1);
    };
    ep->seed = std::stoull(next_val());
    const int n = std::stoi(next_val());
    RoleAssignment a;
    for (int i = 0; i < n; ++i) {
        auto parts = split_on(next_val(), ' ');
        MsgEntityDef e;
        e.name = parts[0];
        e.role = static_cast<MsgRole>(std::stoi(parts[1]));
        e.move = static_cast<MsgMove>(std::stoi(parts[2]));
        a.entities.push_back(e);
        auto pp = split_on(next_val(), ' ');
        a.positions.push_back({std::stoi(pp[0]), std::stoi(pp[1])});
    }
    {
        auto pp = split_on(next_val(), ' ');
        a.agent_start = {std::stoi(pp[0]), std::stoi(pp[1])};
    }
    a.message_pre_held = std::stoi(next_val()) != 0;
    const int n_irr = std::stoi(next_val());
    for (int i = 0; i < n_irr; ++i) a.irrelevant.push_back(next_val());
    const int count = std::stoi(next_val());
    ep->assignment = a;
    ep->manual.num_sent = cfg_->num_sent;
    ep->manual.l_sent = cfg_->l_sent;
    ep->manual.tokens.assign(static_cast<std::size_t>(cfg_->num_sent) * cfg_->l_sent, 0);
    ep->manual.lengths.assign(static_cast<std::size_t>(cfg_->num_sent), 0);
    ep->manual.sentence_count = count;
    for (int s = 0; s < count; ++s) {
        auto toks = split_on(next_val(), ' ');
        ep->manual.lengths[static_cast<std::size_t>(s)] = static_cast<int>(toks.size());
        for (std::size_t t = 0; t < toks.size(); ++t)
            ep->manual.tokens[static_cast<std::size_t>(s) * cfg_->l_sent + t] = std::stoi(toks[t]);
    }
    for (const auto& e : a.entities) ep->entity_words.push_back({vocab_->id(e.name), 0});
    ep_ = std::move(ep);
    st_ = SimState{};
    {
        auto pp = split_on(next_val(), ' ');
        st_.agent = {std::stoi(pp[0]), std::stoi(pp[1])};
    }
    st_.n_entities = n;
    for (int i = 0; i < n; ++i) {
        auto pp = split_on(next_val(), ' ');
        st_.epos[static_cast<std::size_t>(i)] = {std::stoi(pp[0]), std::stoi(pp[1])};
        st_.on_board[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(std::stoi(pp[2]));
    }
    st_.message = std::stoi(next_val()) != 0;
    st_.steps = std::stoi(next_val());
    st_.over = std::stoi(next_val()) != 0;
}

}  // namespace crl
