#pragma once

#include <variant>

#include "crl/messenger.hpp"
#include "crl/rtfm.hpp"

namespace crl {

enum class EnvKind { Rtfm, Messenger };

// Value-semantic wrapper so the trainer and harness stay environment-agnostic.
class AnyEnv {
public:
    explicit AnyEnv(RtfmEnv e) : v_(std::move(e)) {}
    explicit AnyEnv(MessengerEnv e) : v_(std::move(e)) {}

    void reset(std::uint64_t seed) {
        std::visit([&](auto& e) { e.reset(seed); }, v_);
    }
    StepResult step(Action a) {
        return std::visit([&](auto& e) { return e.step(a); }, v_);
    }
    WorldObservation observation() const {
        return std::visit([](const auto& e) { return e.observation(); }, v_);
    }
    const TextManual& manual() const {
        return std::visit([](const auto& e) -> const TextManual& { return e.manual(); }, v_);
    }
    const Vocabulary& vocab() const {
        return std::visit([](const auto& e) -> const Vocabulary& { return e.vocab(); }, v_);
    }
    bool episode_over() const {
        return std::visit([](const auto& e) { return e.episode_over(); }, v_);
    }
    std::uint64_t episode_seed() const {
        return std::visit([](const auto& e) { return e.episode_seed(); }, v_);
    }
    int steps() const {
        return std::visit([](const auto& e) { return e.steps(); }, v_);
    }
    void save(std::ostream& os) const {
        std::visit([&](const auto& e) { e.save(os); }, v_);
    }
    void load(std::istream& is) {
        std::visit([&](auto& e) { e.load(is); }, v_);
    }

    // ground-truth role indices for diagnostics (never seen by the policy
    // unless the oracle-concepts debug mode is switched on)
    std::vector<int> entity_labels() const {
        std::vector<int> out;
        if (is_rtfm()) {
            for (auto l : ground_truth_concepts(rtfm().spec())) out.push_back(static_cast<int>(l));
        } else {
            for (auto r : ground_truth_roles(messenger().assignment()))
                out.push_back(static_cast<int>(r));
        }
        return out;
    }

    bool is_rtfm() const { return std::holds_alternative<RtfmEnv>(v_); }
    const RtfmEnv& rtfm() const { return std::get<RtfmEnv>(v_); }
    const MessengerEnv& messenger() const { return std::get<MessengerEnv>(v_); }

private:
    std::variant<RtfmEnv, MessengerEnv> v_;
};

// Environment selection plus both config blocks; builds instances on demand.
struct EnvSetup {
    EnvKind kind = EnvKind::Rtfm;
    RtfmConfig rtfm;
    MessengerConfig mess;

    AnyEnv make() const {
        if (kind == EnvKind::Rtfm) return AnyEnv{RtfmEnv{rtfm}};
        return AnyEnv{MessengerEnv{mess}};
    }

    AnyEnv make_with_split(MsgSplit split) const {
        if (kind == EnvKind::Rtfm) throw ConfigError("split selection applies to messenger only");
        MessengerConfig c = mess;
        c.split = split;
        return AnyEnv{MessengerEnv{c}};
    }

    int height() const { return kind == EnvKind::Rtfm ? rtfm.height : mess.height; }
    int width() const { return kind == EnvKind::Rtfm ? rtfm.width : mess.width; }
    int max_entities() const { return 4; }

    int vocab_size() const {
        if (kind == EnvKind::Rtfm) return build_rtfm_vocab(rtfm).size();
        return build_messenger_vocab(mess).size();
    }
};

}  // namespace crl
