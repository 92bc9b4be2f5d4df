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
// RTFM-mini: read the manual, grab the weapon that beats the target monster's
// element, fight the monster on the target team. Two monsters, two weapons,
// exactly one winning combination per episode.
// ---------------------------------------------------------------------------

struct RtfmConfig {
    int height = 6;
    int width = 6;
    int max_steps = 32;
    bool dyna = false;
    bool groups = false;
    int words_per_cell = 2;
    int num_sent = 8;
    int l_sent = 16;
    std::vector<std::string> teams = {"rebels", "guild", "order", "syndicate"};
    std::vector<std::string> monsters = {"goblin", "jackal", "shaman", "beetle", "wolf", "imp"};
    std::vector<std::string> elements = {"fire", "cold", "poison", "lightning"};
    std::vector<std::string> modifiers = {"fanatical", "shimmering", "gleaming",
                                          "mysterious", "arcane", "blessed"};
    std::vector<std::string> weapon_nouns = {"sword", "axe", "staff", "hammer", "bow", "dagger"};

    void validate() const {
        if (height < 4 || width < 4) throw ConfigError("rtfm grid must be at least 4x4");
        if (teams.size() < 2 || elements.size() < 2 || modifiers.size() < 2 ||
            monsters.size() < 2 || weapon_nouns.size() < 2)
            throw ConfigError("rtfm vocabulary tables need at least 2 entries each");
        if (max_steps < 1) throw ConfigError("max_steps must be positive");
    }
};

struct RtfmEntityDef {
    enum Kind { Monster, Weapon } kind = Monster;
    std::string word_a;  // monster: element; weapon: modifier
    std::string word_b;  // monster: name;    weapon: noun
    std::string team;    // monsters only
};

struct RtfmEpisodeSpec {
    std::string target_team;
    std::string distractor_team;
    std::map<std::string, std::vector<std::string>> beats;  // element -> defeating modifiers
    std::vector<RtfmEntityDef> entities;                    // roster order (shuffled)
    std::vector<Pos> positions;
    Pos agent_start;
    std::vector<std::string> target_team_extra;      // group-sentence padding names
    std::vector<std::string> distractor_team_extra;

    bool modifier_beats(const std::string& modifier, const std::string& element) const {
        auto it = beats.find(element);
        if (it == beats.end()) return false;
        for (const auto& m : it->second)
            if (m == modifier) return true;
        return false;
    }

    int target_monster() const {
        for (std::size_t i = 0; i < entities.size(); ++i)
            if (entities[i].kind == RtfmEntityDef::Monster && entities[i].team == target_team)
                return static_cast<int>(i);
        throw UsageError("spec has no target monster");
    }

    int winning_weapon() const {
        const auto& tm = entities[static_cast<std::size_t>(target_monster())];
        for (std::size_t i = 0; i < entities.size(); ++i)
            if (entities[i].kind == RtfmEntityDef::Weapon &&
                modifier_beats(entities[i].word_a, tm.word_a))
                return static_cast<int>(i);
        throw UsageError("spec has no winning weapon");
    }
};

enum class RtfmLabel { TargetMonster, DecoyMonster, UsefulWeapon, UselessWeapon };

inline std::string to_string(RtfmLabel l) {
    switch (l) {
        case RtfmLabel::TargetMonster: return "target_monster";
        case RtfmLabel::DecoyMonster: return "decoy_monster";
        case RtfmLabel::UsefulWeapon: return "useful_weapon";
        case RtfmLabel::UselessWeapon: return "useless_weapon";
    }
    return "?";
}

// Evaluation-only labels; never exposed to the policy.
inline std::vector<RtfmLabel> ground_truth_concepts(const RtfmEpisodeSpec& spec) {
    const int tm = spec.target_monster();
    const auto& target_elem = spec.entities[static_cast<std::size_t>(tm)].word_a;
    std::vector<RtfmLabel> out;
    for (const auto& e : spec.entities) {
        if (e.kind == RtfmEntityDef::Monster)
            out.push_back(e.team == spec.target_team ? RtfmLabel::TargetMonster
                                                     : RtfmLabel::DecoyMonster);
        else
            out.push_back(spec.modifier_beats(e.word_a, target_elem) ? RtfmLabel::UsefulWeapon
                                                                     : RtfmLabel::UselessWeapon);
    }
    return out;
}

inline Vocabulary build_rtfm_vocab(const RtfmConfig& cfg) {
    Vocabulary v;
    for (const char* w :
         {"defeat", "the", "team", "your", "mission", "is", "to", "destroy", "must", "be",
          "defeated", "made", "up", "of", "are", "on", "consists", "monsters", "by", "use",
          "weapons", "against", "overcome", "and"})
        v.add(w);
    for (const auto& w : cfg.teams) v.add(w);
    for (const auto& w : cfg.monsters) v.add(w);
    for (const auto& w : cfg.elements) v.add(w);
    for (const auto& w : cfg.modifiers) v.add(w);
    for (const auto& w : cfg.weapon_nouns) v.add(w);
    return v;
}

namespace rtfm_detail {

inline std::string join_and(std::vector<std::string> items) {
    std::string out;
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (i) out += " and ";
        out += items[i];
    }
    return out;
}

inline std::string goal_sentence(int tpl, const std::string& team) {
    switch (tpl) {
        case 0: return "defeat the " + team + " team";
        case 1: return "your mission is to destroy the " + team + " team";
        default: return "the " + team + " team must be defeated";
    }
}

inline std::string team_sentence(int tpl, const std::string& team, const std::string& names) {
    switch (tpl) {
        case 0: return "the " + team + " team is made up of " + names;
        case 1: return names + " are on the " + team + " team";
        default: return "the " + team + " team consists of " + names;
    }
}

inline std::string beats_sentence(int tpl, const std::string& element, const std::string& mods) {
    switch (tpl) {
        case 0: return element + " monsters are defeated by " + mods + " weapons";
        case 1: return "use " + mods + " weapons against " + element + " monsters";
        default: return mods + " weapons overcome " + element + " monsters";
    }
}

template <class T>
void shuffle(std::vector<T>& v, Rng& rng) {
    for (int i = static_cast<int>(v.size()) - 1; i > 0; --i)
        std::swap(v[static_cast<std::size_t>(i)], v[static_cast<std::size_t>(rng.uniform_int(i + 1))]);
}

}  // namespace rtfm_detail

// Templated manual: one goal sentence, one membership sentence per team, one
// beats sentence per on-grid element, order shuffled.
inline TextManual generate_rtfm_manual(const RtfmEpisodeSpec& spec, const RtfmConfig& cfg,
                                       const Vocabulary& vocab, Rng& rng) {
    using namespace rtfm_detail;
    std::vector<std::string> sentences;
    sentences.push_back(goal_sentence(rng.uniform_int(3), spec.target_team));

    auto member_names = [&](const std::string& team, const std::vector<std::string>& extra) {
        std::vector<std::string> names;
        for (const auto& e : spec.entities)
            if (e.kind == RtfmEntityDef::Monster && e.team == team) names.push_back(e.word_b);
        for (const auto& n : extra) names.push_back(n);
        shuffle(names, rng);
        return join_and(names);
    };
    sentences.push_back(
        team_sentence(rng.uniform_int(3), spec.target_team, member_names(spec.target_team, spec.target_team_extra)));
    sentences.push_back(team_sentence(rng.uniform_int(3), spec.distractor_team,
                                      member_names(spec.distractor_team, spec.distractor_team_extra)));

    std::vector<std::string> elements;
    for (const auto& e : spec.entities)
        if (e.kind == RtfmEntityDef::Monster) elements.push_back(e.word_a);
    for (const auto& elem : elements) {
        auto mods = spec.beats.at(elem);
        shuffle(mods, rng);
        sentences.push_back(beats_sentence(rng.uniform_int(3), elem, join_and(mods)));
    }

    shuffle(sentences, rng);
    return tokenize_manual(sentences, vocab, cfg.num_sent, cfg.l_sent);
}

class RtfmEnv {
public:
    explicit RtfmEnv(RtfmConfig cfg) {
        cfg.validate();
        vocab_ = std::make_shared<Vocabulary>(build_rtfm_vocab(cfg));
        cfg_ = std::make_shared<const RtfmConfig>(std::move(cfg));
    }

    // Rejection-samples episodes until the oracle confirms solvability.
    void reset(std::uint64_t seed) {
        Rng layout_rng = Rng(seed).split(1);
        Rng manual_rng = Rng(seed).split(2);
        for (int attempt = 0; attempt < 500; ++attempt) {
            RtfmEpisodeSpec spec = sample_spec(layout_rng);
            init_episode(spec, manual_rng, seed);
            if (oracle_ok()) return;
        }
        throw ConfigError("rtfm reset: no solvable episode found; config unsatisfiable");
    }

    // Installs an explicit spec (tests and replay); no solvability check.
    void reset_with_spec(const RtfmEpisodeSpec& spec, std::uint64_t seed) {
        Rng manual_rng = Rng(seed).split(2);
        init_episode(spec, manual_rng, seed);
    }

    StepResult step(Action a) {
        if (st_.over) throw UsageError("step after episode end");
        StepResult res;
        const Pos prev = st_.agent;
        Pos np = moved(st_.agent, a);
        if (!in_bounds(np)) np = st_.agent;
        st_.agent = np;
        const int e = entity_at(np);
        if (e >= 0) {
            if (ep_->spec.entities[static_cast<std::size_t>(e)].kind == RtfmEntityDef::Weapon) {
                if (st_.carried >= 0) {
                    st_.epos[static_cast<std::size_t>(st_.carried)] = prev;
                    st_.on_board[static_cast<std::size_t>(st_.carried)] = 1;
                }
                st_.carried = static_cast<std::int8_t>(e);
                st_.on_board[static_cast<std::size_t>(e)] = 0;
            } else {
                return resolve_combat(e, res);
            }
        }
        if (cfg_->dyna) {
            // distractor hunts the player, target drifts; contact fights
            const int dm = distractor_idx_, tm = target_idx_;
            if (move_monster_greedy(dm)) return resolve_combat(dm, res);
            const int dir = st_.step_rng.uniform_int(kNumActions);
            if (dir != static_cast<int>(Action::Stay) && move_monster_dir(tm, static_cast<Action>(dir)))
                return resolve_combat(tm, res);
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
        o.carried = st_.carried;
        for (std::size_t i = 0; i < ep_->spec.entities.size(); ++i) {
            Entity e;
            e.id = static_cast<int>(i);
            e.words = ep_->entity_words[i];
            e.pos = st_.epos[i];
            e.on_board = st_.on_board[i] != 0;
            o.entities.push_back(std::move(e));
        }
        return o;
    }

    const TextManual& manual() const { return ep_->manual; }
    const RtfmEpisodeSpec& spec() const { return ep_->spec; }
    const Vocabulary& vocab() const { return *vocab_; }
    const RtfmConfig& config() const { return *cfg_; }
    bool episode_over() const { return st_.over; }
    int steps() const { return st_.steps; }
    std::uint64_t episode_seed() const { return ep_->seed; }
    int carried() const { return st_.carried; }
    Pos agent_pos() const { return st_.agent; }
    Pos entity_pos(int i) const { return st_.epos[static_cast<std::size_t>(i)]; }

    // Packed state for search deduplication. Includes the step counter only
    // under dyna, where dynamics depend on the rng stream position.
    std::uint64_t state_key() const {
        std::uint64_t k = static_cast<std::uint64_t>(cell(st_.agent));
        for (std::size_t i = 0; i < 4; ++i) {
            k = k * 37 + static_cast<std::uint64_t>(st_.on_board[i] ? cell(st_.epos[i]) : 36);
        }
        k = k * 6 + static_cast<std::uint64_t>(st_.carried + 1);
        if (cfg_->dyna) k = k * 40 + static_cast<std::uint64_t>(st_.steps);
        return k;
    }

    void save(std::ostream& os) const;
    void load(std::istream& is);

private:
    friend std::optional<std::vector<Action>> oracle_solve(const RtfmEnv&, int);

    struct EpisodeData {
        RtfmEpisodeSpec spec;
        TextManual manual;
        std::vector<std::vector<int>> entity_words;
        std::uint64_t seed = 0;
    };

    struct SimState {
        Pos agent;
        std::array<Pos, 4> epos;
        std::array<std::uint8_t, 4> on_board{1, 1, 1, 1};
        std::int8_t carried = -1;
        int steps = 0;
        bool over = false;
        Rng step_rng;
    };

    bool in_bounds(Pos p) const { return p.r >= 0 && p.r < cfg_->height && p.c >= 0 && p.c < cfg_->width; }
    int cell(Pos p) const { return p.r * cfg_->width + p.c; }

    int entity_at(Pos p) const {
        for (std::size_t i = 0; i < 4; ++i)
            if (st_.on_board[i] && st_.epos[i] == p) return static_cast<int>(i);
        return -1;
    }

    StepResult resolve_combat(int monster, StepResult res) {
        const auto& m = ep_->spec.entities[static_cast<std::size_t>(monster)];
        bool win = false;
        if (m.team == ep_->spec.target_team && st_.carried >= 0) {
            const auto& w = ep_->spec.entities[static_cast<std::size_t>(st_.carried)];
            win = ep_->spec.modifier_beats(w.word_a, m.word_a);
        }
        res.reward = win ? 1.0 : -1.0;
        res.done = true;
        res.win = win;
        st_.over = true;
        return res;
    }

    bool monster_cell_free(Pos p, int self) const {
        if (!in_bounds(p)) return false;
        const int e = entity_at(p);
        return e < 0 || e == self;  // agent cell is allowed (contact)
    }

    // Greedy Manhattan chase step; returns true on agent contact.
    bool move_monster_greedy(int idx) {
        if (!st_.on_board[static_cast<std::size_t>(idx)]) return false;
        const Pos cur = st_.epos[static_cast<std::size_t>(idx)];
        int best = manhattan(cur, st_.agent);
        Pos best_pos = cur;
        for (Action a : kMoveOrder) {
            const Pos np = moved(cur, a);
            if (!monster_cell_free(np, idx)) continue;
            const int d = manhattan(np, st_.agent);
            if (d < best) {
                best = d;
                best_pos = np;
            }
        }
        st_.epos[static_cast<std::size_t>(idx)] = best_pos;
        return best_pos == st_.agent;
    }

    bool move_monster_dir(int idx, Action a) {
        if (!st_.on_board[static_cast<std::size_t>(idx)]) return false;
        const Pos np = moved(st_.epos[static_cast<std::size_t>(idx)], a);
        if (!monster_cell_free(np, idx)) return false;
        st_.epos[static_cast<std::size_t>(idx)] = np;
        return np == st_.agent;
    }

    template <class T>
    static std::vector<T> pick_distinct(const std::vector<T>& pool, int k, Rng& rng) {
        std::vector<int> idx(pool.size());
        for (std::size_t i = 0; i < pool.size(); ++i) idx[i] = static_cast<int>(i);
        std::vector<T> out;
        for (int i = 0; i < k; ++i) {
            const int j = i + rng.uniform_int(static_cast<int>(idx.size()) - i);
            std::swap(idx[static_cast<std::size_t>(i)], idx[static_cast<std::size_t>(j)]);
            out.push_back(pool[static_cast<std::size_t>(idx[static_cast<std::size_t>(i)])]);
        }
        return out;
    }

    RtfmEpisodeSpec sample_spec(Rng& rng) {
        RtfmEpisodeSpec s;
        auto teams = pick_distinct(cfg_->teams, 2, rng);
        s.target_team = teams[0];
        s.distractor_team = teams[1];
        auto names = pick_distinct(cfg_->monsters, 2, rng);
        auto elems = pick_distinct(cfg_->elements, 2, rng);
        auto mods = pick_distinct(cfg_->modifiers, 2, rng);
        auto nouns = pick_distinct(cfg_->weapon_nouns, 2, rng);

        // beats: winning modifier kills the target element, the other
        // modifier kills the distractor element; optional off-grid extras
        s.beats[elems[0]] = {mods[0]};
        s.beats[elems[1]] = {mods[1]};
        std::vector<std::string> spare;
        for (const auto& m : cfg_->modifiers)
            if (m != mods[0] && m != mods[1]) spare.push_back(m);
        for (int ei = 0; ei < 2; ++ei)
            if (!spare.empty() && rng.uniform() < 0.5) {
                const int j = rng.uniform_int(static_cast<int>(spare.size()));
                s.beats[elems[static_cast<std::size_t>(ei)]].push_back(spare[static_cast<std::size_t>(j)]);
                spare.erase(spare.begin() + j);
            }

        RtfmEntityDef tm{RtfmEntityDef::Monster, elems[0], names[0], s.target_team};
        RtfmEntityDef dm{RtfmEntityDef::Monster, elems[1], names[1], s.distractor_team};
        RtfmEntityDef ww{RtfmEntityDef::Weapon, mods[0], nouns[0], ""};
        RtfmEntityDef lw{RtfmEntityDef::Weapon, mods[1], nouns[1], ""};
        s.entities = {tm, dm, ww, lw};
        rtfm_detail::shuffle(s.entities, rng);

        if (cfg_->groups) {
            std::vector<std::string> unused;
            for (const auto& n : cfg_->monsters)
                if (n != names[0] && n != names[1]) unused.push_back(n);
            rtfm_detail::shuffle(unused, rng);
            const int extra_t = rng.uniform_int(3);
            const int extra_d = rng.uniform_int(3);
            for (int i = 0; i < extra_t && !unused.empty(); ++i) {
                s.target_team_extra.push_back(unused.back());
                unused.pop_back();
            }
            for (int i = 0; i < extra_d && !unused.empty(); ++i) {
                s.distractor_team_extra.push_back(unused.back());
                unused.pop_back();
            }
        }

        // five distinct cells: agent + four entities
        std::vector<int> cells(static_cast<std::size_t>(cfg_->height * cfg_->width));
        for (std::size_t i = 0; i < cells.size(); ++i) cells[i] = static_cast<int>(i);
        auto chosen = pick_distinct(cells, 5, rng);
        s.agent_start = {chosen[0] / cfg_->width, chosen[0] % cfg_->width};
        for (int i = 0; i < 4; ++i)
            s.positions.push_back({chosen[static_cast<std::size_t>(i + 1)] / cfg_->width,
                                   chosen[static_cast<std::size_t>(i + 1)] % cfg_->width});
        return s;
    }

    void init_episode(const RtfmEpisodeSpec& spec, Rng& manual_rng, std::uint64_t seed) {
        auto ep = std::make_shared<EpisodeData>();
        ep->spec = spec;
        ep->seed = seed;
        ep->manual = generate_rtfm_manual(spec, *cfg_, *vocab_, manual_rng);
        for (const auto& e : spec.entities)
            ep->entity_words.push_back({vocab_->id(e.word_a), vocab_->id(e.word_b)});
        ep_ = std::move(ep);
        st_ = SimState{};
        st_.agent = spec.agent_start;
        for (std::size_t i = 0; i < 4; ++i) st_.epos[i] = spec.positions[i];
        st_.step_rng = Rng(seed).split(3);
        target_idx_ = spec.target_monster();
        distractor_idx_ = -1;
        for (std::size_t i = 0; i < spec.entities.size(); ++i)
            if (spec.entities[i].kind == RtfmEntityDef::Monster && static_cast<int>(i) != target_idx_)
                distractor_idx_ = static_cast<int>(i);
    }

    bool oracle_ok() const;

    std::shared_ptr<const Vocabulary> vocab_;
    std::shared_ptr<const RtfmConfig> cfg_;
    std::shared_ptr<const EpisodeData> ep_;
    SimState st_;
    int target_idx_ = -1;
    int distractor_idx_ = -1;
};

// Breadth-first search over simulator clones; the returned plan replays
// exactly because expansion uses the real step function (dyna included: the
// per-step rng stream is part of the cloned state).
inline std::optional<std::vector<Action>> oracle_solve(const RtfmEnv& env,
                                                       int node_cap = 500000) {
    if (env.episode_over()) return std::nullopt;
    struct NodeRef {
        int parent;
        Action action;
    };
    std::vector<RtfmEnv> states{env};
    std::vector<NodeRef> refs{{-1, Action::Stay}};
    std::unordered_map<std::uint64_t, char> seen;
    seen.emplace(env.state_key(), 1);
    for (std::size_t head = 0; head < states.size(); ++head) {
        for (int ai = 0; ai < kNumActions; ++ai) {
            RtfmEnv next = states[head];
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

inline bool RtfmEnv::oracle_ok() const { return oracle_solve(*this).has_value(); }

// ---- replay / snapshot text format (key=value lines) ----

inline void write_spec(std::ostream& os, const RtfmEpisodeSpec& s) {
    os << "target_team=" << s.target_team << "\n";
    os << "distractor_team=" << s.distractor_team << "\n";
    for (const auto& [elem, mods] : s.beats) {
        os << "beats." << elem << "=";
        for (std::size_t i = 0; i < mods.size(); ++i) os << (i ? "|" : "") << mods[i];
        os << "\n";
    }
    for (std::size_t i = 0; i < s.entities.size(); ++i) {
        const auto& e = s.entities[i];
        os << "entity." << i << "=" << (e.kind == RtfmEntityDef::Monster ? "monster" : "weapon")
           << " " << e.word_a << " " << e.word_b << " " << (e.team.empty() ? "-" : e.team) << "\n";
        os << "pos." << i << "=" << s.positions[i].r << " " << s.positions[i].c << "\n";
    }
    os << "agent=" << s.agent_start.r << " " << s.agent_start.c << "\n";
    auto join = [](const std::vector<std::string>& v) {
        std::string out;
        for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "|" : "") + v[i];
        return out;
    };
    os << "extra.target=" << join(s.target_team_extra) << "\n";
    os << "extra.distractor=" << join(s.distractor_team_extra) << "\n";
}

inline RtfmEpisodeSpec parse_spec(std::istream& is, int entity_count = 4) {
    RtfmEpisodeSpec s;
    s.positions.resize(static_cast<std::size_t>(entity_count));
    s.entities.resize(static_cast<std::size_t>(entity_count));
    std::string line;
    int seen = 0;
    while (seen < 5 + 2 * entity_count && std::getline(is, line)) {
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw UsageError("spec parse: bad line: " + line);
        const std::string key = line.substr(0, eq), val = line.substr(eq + 1);
        ++seen;
        if (key == "target_team") {
            s.target_team = val;
        } else if (key == "distractor_team") {
            s.distractor_team = val;
        } else if (key.rfind("beats.", 0) == 0) {
            s.beats[key.substr(6)] = split_on(val, '|');
            --seen;  // variable count; not part of the fixed tally
        } else if (key.rfind("entity.", 0) == 0) {
            const int i = std::stoi(key.substr(7));
            auto parts = split_on(val, ' ');
            if (parts.size() != 4) throw UsageError("spec parse: bad entity line: " + line);
            RtfmEntityDef e;
            e.kind = parts[0] == "monster" ? RtfmEntityDef::Monster : RtfmEntityDef::Weapon;
            e.word_a = parts[1];
            e.word_b = parts[2];
            e.team = parts[3] == "-" ? "" : parts[3];
            s.entities[static_cast<std::size_t>(i)] = e;
        } else if (key.rfind("pos.", 0) == 0) {
            const int i = std::stoi(key.substr(4));
            auto parts = split_on(val, ' ');
            s.positions[static_cast<std::size_t>(i)] = {std::stoi(parts[0]), std::stoi(parts[1])};
        } else if (key == "agent") {
            auto parts = split_on(val, ' ');
            s.agent_start = {std::stoi(parts[0]), std::stoi(parts[1])};
        } else if (key == "extra.target") {
            s.target_team_extra = split_on(val, '|');
        } else if (key == "extra.distractor") {
            s.distractor_team_extra = split_on(val, '|');
        } else {
            throw UsageError("spec parse: unknown key: " + key);
        }
    }
    return s;
}

inline void RtfmEnv::save(std::ostream& os) const {
    os << "seed=" << ep_->seed << "\n";
    write_spec(os, ep_->spec);
    os << "manual_sentences=" << ep_->manual.sentence_count << "\n";
    for (int s = 0; s < ep_->manual.sentence_count; ++s) {
        os << "manual." << s << "=";
        for (int t = 0; t < ep_->manual.lengths[static_cast<std::size_t>(s)]; ++t)
            os << (t ? " " : "") << ep_->manual.token(s, t);
        os << "\n";
    }
    os << "st.agent=" << st_.agent.r << " " << st_.agent.c << "\n";
    for (std::size_t i = 0; i < 4; ++i)
        os << "st.e" << i << "=" << st_.epos[i].r << " " << st_.epos[i].c << " "
           << int(st_.on_board[i]) << "\n";
    os << "st.carried=" << int(st_.carried) << "\n";
    os << "st.steps=" << st_.steps << "\n";
    os << "st.over=" << int(st_.over) << "\n";
    os << "st.rng=" << st_.step_rng.state() << "\n";
}

inline void RtfmEnv::load(std::istream& is) {
    auto ep = std::make_shared<EpisodeData>();
    std::string line;
    std::getline(is, line);
    if (line.rfind("seed=", 0) != 0) throw UsageError("rtfm load: missing seed");
    ep->seed = std::stoull(line.substr(5));
    ep->spec = parse_spec(is);
    std::getline(is, line);
    if (line.rfind("manual_sentences=", 0) != 0) throw UsageError("rtfm load: missing manual");
    const int count = std::stoi(line.substr(17));
    ep->manual.num_sent = cfg_->num_sent;
    ep->manual.l_sent = cfg_->l_sent;
    ep->manual.tokens.assign(static_cast<std::size_t>(cfg_->num_sent) * cfg_->l_sent, 0);
    ep->manual.lengths.assign(static_cast<std::size_t>(cfg_->num_sent), 0);
    ep->manual.sentence_count = count;
    for (int s = 0; s < count; ++s) {
        std::getline(is, line);
        const auto eq = line.find('=');
        auto toks = split_on(line.substr(eq + 1), ' ');
        ep->manual.lengths[static_cast<std::size_t>(s)] = static_cast<int>(toks.size());
        for (std::size_t t = 0; t < toks.size(); ++t)
            ep->manual.tokens[static_cast<std::size_t>(s) * cfg_->l_sent + t] = std::stoi(toks[t]);
    }
    for (const auto& e : ep->spec.entities)
        ep->entity_words.push_back({vocab_->id(e.word_a), vocab_->id(e.word_b)});

    auto next_val = [&]() {
        std::getline(is, line);
        return line.substr(line.find('=') + 1);
    };
    {
        auto parts = split_on(next_val(), ' ');
        st_.agent = {std::stoi(parts[0]), std::stoi(parts[1])};
    }
    for (std::size_t i = 0; i < 4; ++i) {
        auto parts = split_on(next_val(), ' ');
        st_.epos[i] = {std::stoi(parts[0]), std::stoi(parts[1])};
        st_.on_board[i] = static_cast<std::uint8_t>(std::stoi(parts[2]));
    }
    st_.carried = static_cast<std::int8_t>(std::stoi(next_val()));
    st_.steps = std::stoi(next_val());
    st_.over = std::stoi(next_val()) != 0;
    st_.step_rng.set_state(std::stoull(next_val()));
    ep_ = std::move(ep);
    target_idx_ = ep_->spec.target_monster();
    distractor_idx_ = -1;
    for (std::size_t i = 0; i < ep_->spec.entities.size(); ++i)
        if (ep_->spec.entities[i].kind == RtfmEntityDef::Monster &&
            static_cast<int>(i) != target_idx_)
            distractor_idx_ = static_cast<int>(i);
}

}  // namespace crl
