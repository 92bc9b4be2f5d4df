#include <catch2/catch_amalgamated.hpp>

#include <optional>
#include <set>
#include <sstream>

#include "crl/messenger.hpp"

using namespace crl;

namespace {

// Rule-based parser oracle: recovers a role for each named entity mentioned
// in the manual, independent of the generator's internals.
std::optional<MsgRole> parse_role(const std::string& sentence, const std::string& name) {
    if (sentence.find(" " + name + " ") == std::string::npos) return std::nullopt;
    if (sentence.find("holds the message") != std::string::npos ||
        sentence.find("message is carried by") != std::string::npos ||
        sentence.find("to collect the message") != std::string::npos)
        return MsgRole::Sender;
    if (sentence.find("awaits the message") != std::string::npos ||
        sentence.find("deliver the message") != std::string::npos ||
        sentence.find("final destination") != std::string::npos)
        return MsgRole::Receiver;
    if (sentence.find("deadly enemy") != std::string::npos ||
        sentence.find("avoid the") != std::string::npos ||
        sentence.find("will destroy you") != std::string::npos)
        return MsgRole::Decoy;
    return std::nullopt;
}

MessengerConfig stage_cfg(MsgStage s, MsgSplit split = MsgSplit::Train) {
    MessengerConfig c;
    c.stage = s;
    c.split = split;
    return c;
}

RoleAssignment two_entity_line() {
    // agent(5,1), sender(5,3) stationary, receiver(5,6) stationary
    RoleAssignment a;
    a.entities = {{"mage", MsgRole::Sender, MsgMove::Stationary},
                  {"dog", MsgRole::Receiver, MsgMove::Stationary}};
    a.positions = {{5, 3}, {5, 6}};
    a.agent_start = {5, 1};
    return a;
}

}  // namespace

TEST_CASE("ood split properties") {
    std::vector<std::string> names{"a", "b", "c", "d", "e", "f"};
    Rng rng(3);
    const OodSplit split = make_ood_split(names, rng);
    SECTION("train and test pair sets are disjoint") {
        auto train = split.pairs(MsgSplit::Train);
        auto test = split.pairs(MsgSplit::Test);
        for (const auto& p : train) REQUIRE(test.count(p) == 0);
    }
    SECTION("every role has at least two names in each split") {
        for (int r = 0; r < 3; ++r) {
            REQUIRE(split.names_with_role(static_cast<MsgRole>(r), MsgSplit::Train).size() >= 2);
            REQUIRE(split.names_with_role(static_cast<MsgRole>(r), MsgSplit::Test).size() >= 2);
        }
    }
    SECTION("same rng seed gives the same split") {
        Rng r2(3);
        const OodSplit again = make_ood_split(names, r2);
        REQUIRE(again.train_role == split.train_role);
        REQUIRE(again.test_role == split.test_role);
    }
    SECTION("latin example: role k mod 3 train, k+1 mod 3 test is valid") {
        OodSplit latin;
        for (int k = 0; k < 6; ++k) {
            latin.train_role[names[static_cast<std::size_t>(k)]] = static_cast<MsgRole>(k % 3);
            latin.test_role[names[static_cast<std::size_t>(k)]] = static_cast<MsgRole>((k + 1) % 3);
        }
        auto train = latin.pairs(MsgSplit::Train);
        auto test = latin.pairs(MsgSplit::Test);
        for (const auto& p : train) REQUIRE(test.count(p) == 0);
        for (int r = 0; r < 3; ++r)
            REQUIRE(latin.names_with_role(static_cast<MsgRole>(r), MsgSplit::Train).size() == 2);
    }
    SECTION("too few names is a configuration error") {
        std::vector<std::string> few{"a", "b", "c"};
        Rng r3(1);
        REQUIRE_THROWS_AS(make_ood_split(few, r3), ConfigError);
    }
}

TEST_CASE("reset honors the split contract") {
    MessengerEnv train_env{stage_cfg(MsgStage::S2, MsgSplit::Train)};
    MessengerEnv test_env{stage_cfg(MsgStage::S2, MsgSplit::Test)};
    const OodSplit& split = train_env.split();
    auto test_pairs = split.pairs(MsgSplit::Test);
    auto train_pairs = split.pairs(MsgSplit::Train);
    for (std::uint64_t seed = 0; seed < 300; ++seed) {
        train_env.reset(seed);
        for (const auto& e : train_env.assignment().entities) {
            REQUIRE(test_pairs.count({e.name, static_cast<int>(e.role)}) == 0);
            REQUIRE(train_pairs.count({e.name, static_cast<int>(e.role)}) == 1);
        }
        test_env.reset(seed);
        for (const auto& e : test_env.assignment().entities)
            REQUIRE(train_pairs.count({e.name, static_cast<int>(e.role)}) == 0);
    }
}

TEST_CASE("stage rosters") {
    SECTION("S2 board is exactly sender and receiver") {
        MessengerEnv env{stage_cfg(MsgStage::S2)};
        for (std::uint64_t seed = 0; seed < 1000; ++seed) {
            env.reset(seed);
            auto roles = ground_truth_roles(env.assignment());
            REQUIRE(roles.size() == 2);
            std::multiset<MsgRole> ms(roles.begin(), roles.end());
            REQUIRE(ms.count(MsgRole::Sender) == 1);
            REQUIRE(ms.count(MsgRole::Receiver) == 1);
        }
    }
    SECTION("S1 has one entity; delivering variant pre-holds the message") {
        MessengerEnv env{stage_cfg(MsgStage::S1)};
        bool saw_acquiring = false, saw_delivering = false;
        for (std::uint64_t seed = 0; seed < 200; ++seed) {
            env.reset(seed);
            REQUIRE(env.assignment().entities.size() == 1);
            if (env.message_held()) {
                saw_delivering = true;
                REQUIRE(env.assignment().entities[0].role == MsgRole::Receiver);
            } else {
                saw_acquiring = true;
                REQUIRE(env.assignment().entities[0].role == MsgRole::Sender);
            }
        }
        REQUIRE(saw_acquiring);
        REQUIRE(saw_delivering);
    }
    SECTION("S3 adds decoys and irrelevant sentences") {
        MessengerEnv env{stage_cfg(MsgStage::S3)};
        for (std::uint64_t seed = 0; seed < 300; ++seed) {
            env.reset(seed);
            auto roles = ground_truth_roles(env.assignment());
            int decoys = 0, senders = 0;
            for (auto r : roles) {
                decoys += r == MsgRole::Decoy;
                senders += r == MsgRole::Sender;
            }
            REQUIRE(senders == 1);
            REQUIRE(decoys >= 1);
            REQUIRE(env.assignment().irrelevant.size() >= 1);
            // irrelevant content never changes ground-truth roles
            RoleAssignment stripped = env.assignment();
            stripped.irrelevant.clear();
            REQUIRE(ground_truth_roles(stripped) == roles);
        }
    }
}

TEST_CASE("hand-traced stepping") {
    MessengerEnv env{stage_cfg(MsgStage::S2)};
    env.reset_with_assignment(two_entity_line(), 5);

    SECTION("acquire then deliver totals 1.5") {
        double total = 0.0;
        StepResult r;
        r = env.step(Action::Right);
        total += r.reward;
        r = env.step(Action::Right);  // onto sender: +0.5
        total += r.reward;
        REQUIRE(r.reward == 0.5);
        REQUIRE(env.message_held());
        REQUIRE_FALSE(env.observation().entities[0].on_board);
        for (int i = 0; i < 2; ++i) {
            r = env.step(Action::Right);
            total += r.reward;
        }
        r = env.step(Action::Right);  // onto receiver with message
        total += r.reward;
        REQUIRE(r.reward == 1.0);
        REQUIRE(r.done);
        REQUIRE(r.win);
        REQUIRE(total == 1.5);
    }
    SECTION("touching the receiver without the message loses") {
        RoleAssignment a = two_entity_line();
        std::swap(a.positions[0], a.positions[1]);  // receiver now closer
        env.reset_with_assignment(a, 6);
        env.step(Action::Right);
        StepResult r = env.step(Action::Right);  // hits receiver at (5,3)
        REQUIRE(r.reward == -1.0);
        REQUIRE(r.done);
        REQUIRE_FALSE(r.win);
    }
    SECTION("decoy contact is lethal") {
        RoleAssignment a = two_entity_line();
        a.entities.push_back({"thief", MsgRole::Decoy, MsgMove::Stationary});
        a.positions.push_back({5, 2});
        MessengerEnv e3{stage_cfg(MsgStage::S3)};
        e3.reset_with_assignment(a, 7);
        StepResult r = e3.step(Action::Right);
        REQUIRE(r.reward == -1.0);
        REQUIRE(r.done);
    }
    SECTION("S1 delivering: stepping onto receiver wins") {
        RoleAssignment a;
        a.entities = {{"dog", MsgRole::Receiver, MsgMove::Stationary}};
        a.positions = {{5, 2}};
        a.agent_start = {5, 1};
        a.message_pre_held = true;
        MessengerEnv e1{stage_cfg(MsgStage::S1)};
        e1.reset_with_assignment(a, 8);
        StepResult r = e1.step(Action::Right);
        REQUIRE(r.reward == 1.0);
        REQUIRE(r.done);
        REQUIRE(r.win);
    }
    SECTION("S1 acquiring: touching the sender ends with +1") {
        RoleAssignment a;
        a.entities = {{"mage", MsgRole::Sender, MsgMove::Stationary}};
        a.positions = {{5, 2}};
        a.agent_start = {5, 1};
        MessengerEnv e1{stage_cfg(MsgStage::S1)};
        e1.reset_with_assignment(a, 9);
        StepResult r = e1.step(Action::Right);
        REQUIRE(r.reward == 1.0);
        REQUIRE(r.win);
    }
    SECTION("chaser closes distance with fixed tie-break") {
        RoleAssignment a;
        a.entities = {{"robot", MsgRole::Sender, MsgMove::Chaser}};
        a.positions = {{8, 8}};
        a.agent_start = {0, 0};
        MessengerEnv e1{stage_cfg(MsgStage::S1)};
        e1.reset_with_assignment(a, 10);
        e1.step(Action::Stay);
        REQUIRE(e1.entity_pos(0) == Pos{7, 8});  // Up preferred over Left
        e1.step(Action::Stay);
        REQUIRE(e1.entity_pos(0) == Pos{6, 8});
    }
    SECTION("fleeing entity retreats") {
        RoleAssignment a;
        a.entities = {{"ship", MsgRole::Sender, MsgMove::Fleeing}};
        a.positions = {{5, 5}};
        a.agent_start = {5, 4};
        MessengerEnv e1{stage_cfg(MsgStage::S1)};
        e1.reset_with_assignment(a, 11);
        e1.step(Action::Stay);
        REQUIRE(manhattan(e1.entity_pos(0), e1.agent_pos()) == 2);
    }
    SECTION("time limit truncates") {
        StepResult r;
        for (int i = 0; i < 64; ++i) r = env.step(Action::Stay);
        REQUIRE(r.truncated);
        REQUIRE_FALSE(r.done);
        REQUIRE_THROWS_AS(env.step(Action::Stay), UsageError);
    }
}

TEST_CASE("determinism under seed and action replay") {
    for (auto stage : {MsgStage::S1, MsgStage::S2, MsgStage::S3}) {
        MessengerEnv a{stage_cfg(stage)}, b{stage_cfg(stage)};
        a.reset(77);
        b.reset(77);
        REQUIRE(a.manual().tokens == b.manual().tokens);
        Rng act(5);
        while (!a.episode_over()) {
            const auto act_i = static_cast<Action>(act.uniform_int(kNumActions));
            const auto ra = a.step(act_i), rb = b.step(act_i);
            REQUIRE(ra.reward == rb.reward);
            REQUIRE(a.agent_pos() == b.agent_pos());
        }
    }
}

TEST_CASE("oracle") {
    SECTION("two-step plan on a short line") {
        RoleAssignment a;
        a.entities = {{"mage", MsgRole::Sender, MsgMove::Stationary},
                      {"dog", MsgRole::Receiver, MsgMove::Stationary}};
        a.positions = {{5, 2}, {5, 3}};
        a.agent_start = {5, 1};
        MessengerEnv env{stage_cfg(MsgStage::S2)};
        env.reset_with_assignment(a, 12);
        auto plan = oracle_solve(env);
        REQUIRE(plan.has_value());
        REQUIRE(plan->size() == 2);
        StepResult last;
        double total = 0.0;
        for (Action act : *plan) {
            last = env.step(act);
            total += last.reward;
        }
        REQUIRE(last.win);
        REQUIRE(total == 1.5);
    }
    SECTION("all sampled episodes solvable across stages") {
        for (auto stage : {MsgStage::S1, MsgStage::S2, MsgStage::S3}) {
            MessengerEnv env{stage_cfg(stage)};
            const int n = stage == MsgStage::S3 ? 300 : 1000;
            for (std::uint64_t seed = 0; seed < static_cast<std::uint64_t>(n); ++seed) {
                env.reset(seed);
                auto plan = oracle_solve(env);
                REQUIRE(plan.has_value());
                StepResult last;
                for (Action act : *plan) last = env.step(act);
                REQUIRE(last.win);
            }
        }
    }
}

TEST_CASE("manual role recovery by rule-based parser") {
    MessengerEnv env{stage_cfg(MsgStage::S3)};
    for (std::uint64_t seed = 0; seed < 1000; ++seed) {
        env.reset(seed);
        const auto sentences = decode_manual(env.manual(), env.vocab());
        for (const auto& e : env.assignment().entities) {
            std::optional<MsgRole> found;
            for (const auto& s : sentences) {
                const auto r = parse_role(" " + s + " ", e.name);
                if (r) {
                    REQUIRE_FALSE(found.has_value());  // each entity named once
                    found = r;
                }
            }
            REQUIRE(found.has_value());
            REQUIRE(*found == e.role);
        }
    }
}

TEST_CASE("manual determinism and S3 irrelevant sentences") {
    MessengerEnv env{stage_cfg(MsgStage::S3)};
    env.reset(21);
    Rng r1(9), r2(9);
    const auto m1 = generate_messenger_manual(env.assignment(), env.config(), env.vocab(), r1);
    const auto m2 = generate_messenger_manual(env.assignment(), env.config(), env.vocab(), r2);
    REQUIRE(m1.tokens == m2.tokens);
    REQUIRE(m1.sentence_count ==
            static_cast<int>(env.assignment().entities.size() + env.assignment().irrelevant.size()));
}

TEST_CASE("snapshot save/load resumes identically") {
    MessengerEnv env{stage_cfg(MsgStage::S3)};
    env.reset(41);
    env.step(Action::Up);
    env.step(Action::Left);
    std::stringstream ss;
    env.save(ss);
    MessengerEnv restored{stage_cfg(MsgStage::S3)};
    restored.load(ss);
    Rng act(13);
    while (!env.episode_over()) {
        const auto a = static_cast<Action>(act.uniform_int(kNumActions));
        const auto r1 = env.step(a), r2 = restored.step(a);
        REQUIRE(r1.reward == r2.reward);
        REQUIRE(env.agent_pos() == restored.agent_pos());
    }
}
