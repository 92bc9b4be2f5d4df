#pragma once

#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>
#include <string>

#include "crl/agent.hpp"

namespace crl {

// Flat key=value configuration with dotted namespaces. Every key is
// registered with a type and default; unknown keys and malformed values are
// rejected before any computation. Values can come from a file, the CLI, or
// CRL_-prefixed environment variables (dots become underscores, upper case).
class RunConfig {
public:
    RunConfig() { register_keys(); }

    void set(const std::string& key, const std::string& value) {
        auto it = entries_.find(key);
        if (it == entries_.end()) throw ConfigError("unknown config key: " + key);
        validate_typed(key, it->second.type, value);
        it->second.value = value;
    }

    std::string get(const std::string& key) const {
        auto it = entries_.find(key);
        if (it == entries_.end()) throw ConfigError("unknown config key: " + key);
        return it->second.value;
    }

    int get_int(const std::string& key) const { return std::stoi(get(key)); }
    double get_double(const std::string& key) const { return std::stod(get(key)); }
    bool get_bool(const std::string& key) const { return get(key) == "true" || get(key) == "1"; }
    std::uint64_t get_u64(const std::string& key) const { return std::stoull(get(key)); }

    void load_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw ConfigError("cannot open config file: " + path);
        std::string line;
        int lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            if (line.empty() || line[0] == '#') continue;
            const auto eq = line.find('=');
            if (eq == std::string::npos)
                throw ConfigError("config line " + std::to_string(lineno) + " is not key=value: " + line);
            set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
        }
    }

    // CRL_TRAIN_LR -> train.lr and so on, resolved against the schema.
    void apply_env_overrides() {
        for (auto& [key, entry] : entries_) {
            std::string name = "CRL_";
            for (char c : key) name += c == '.' ? '_' : static_cast<char>(std::toupper(c));
            if (const char* v = std::getenv(name.c_str())) set(key, v);
        }
    }

    std::string to_text() const {
        std::ostringstream os;
        for (const auto& [key, entry] : entries_) os << key << "=" << entry.value << "\n";
        return os.str();
    }

    void load_text(const std::string& text) {
        std::istringstream is(text);
        std::string line;
        while (std::getline(is, line)) {
            if (line.empty()) continue;
            const auto eq = line.find('=');
            set(line.substr(0, eq), line.substr(eq + 1));
        }
    }

    static std::string help_text() {
        RunConfig c;
        std::ostringstream os;
        os << "configuration keys (key=value, # comments; CRL_<KEY> env vars override):\n";
        for (const auto& [key, entry] : c.entries_)
            os << "  " << key << " (" << entry.type << ", default " << entry.value << ")\n";
        return os.str();
    }

    // ---- typed views ----

    EnvSetup env_setup() const {
        EnvSetup s;
        const std::string name = get("env.name");
        if (name == "rtfm") {
            s.kind = EnvKind::Rtfm;
            s.rtfm.dyna = get_bool("env.dyna");
            s.rtfm.groups = get_bool("env.groups");
            if (get_int("env.max_steps") > 0) s.rtfm.max_steps = get_int("env.max_steps");
            s.rtfm.validate();
        } else if (name == "messenger") {
            s.kind = EnvKind::Messenger;
            const std::string stage = get("env.stage");
            s.mess.stage = stage == "S1" ? MsgStage::S1 : stage == "S2" ? MsgStage::S2 : MsgStage::S3;
            s.mess.split = get("env.split") == "test" ? MsgSplit::Test : MsgSplit::Train;
            if (get_int("env.max_steps") > 0) s.mess.max_steps = get_int("env.max_steps");
            s.mess.validate();
        } else {
            throw ConfigError("env.name must be rtfm or messenger");
        }
        return s;
    }

    EncoderConfig encoder() const {
        EncoderConfig e;
        e.m = get_int("enc.m");
        e.d_t = get_int("enc.d_t");
        e.d_e = get_int("enc.d_e");
        e.d_c = get_int("enc.d_c");
        e.d_k = get_int("enc.d_k");
        e.gru_hidden = get_int("enc.gru_hidden");
        e.per_token = get_bool("enc.per_token");
        e.validate();
        return e;
    }

    MiConfig mi() const {
        MiConfig m;
        m.alpha1 = get_double("mi.alpha1");
        m.alpha2 = get_double("mi.alpha2");
        m.club_steps = get_int("mi.club_steps");
        m.club_lr = get_double("mi.club_lr");
        m.club_hidden = get_int("mi.club_hidden");
        m.grad_to_entity = get_bool("mi.grad_to_entity");
        m.validate();
        return m;
    }

    TrainConfig train() const {
        TrainConfig t;
        t.gamma = get_double("train.gamma");
        t.horizon = get_int("train.horizon");
        t.num_envs = get_int("train.num_envs");
        t.entropy_coef = get_double("train.entropy_coef");
        t.value_coef = get_double("train.value_coef");
        t.lr = get_double("train.lr");
        t.grad_clip = get_double("train.grad_clip");
        t.total_steps = static_cast<std::int64_t>(get_u64("train.total_steps"));
        t.eval_every = get_int("train.eval_every");
        t.eval_episodes = get_int("train.eval_episodes");
        t.checkpoint_every = get_int("train.checkpoint_every");
        t.seed = get_u64("train.seed");
        t.validate();
        return t;
    }

    PolicyConfig policy() const {
        PolicyConfig p;
        p.conv_channels = get_int("policy.conv_channels");
        p.trunk_hidden = get_int("policy.trunk_hidden");
        p.validate();
        return p;
    }

    double stop_win_rate() const { return get_double("train.stop_win_rate"); }

private:
    struct Entry {
        std::string type;  // int, double, bool, str, u64
        std::string value;
    };

    static std::string trim(const std::string& s) {
        const auto a = s.find_first_not_of(" \t");
        if (a == std::string::npos) return "";
        const auto b = s.find_last_not_of(" \t");
        return s.substr(a, b - a + 1);
    }

    void add(const std::string& key, const std::string& type, const std::string& def) {
        entries_[key] = {type, def};
    }

    static void validate_typed(const std::string& key, const std::string& type,
                               const std::string& value) {
        try {
            if (type == "int") {
                std::size_t pos = 0;
                std::stoi(value, &pos);
                if (pos != value.size()) throw std::invalid_argument("trailing");
            } else if (type == "double") {
                std::size_t pos = 0;
                std::stod(value, &pos);
                if (pos != value.size()) throw std::invalid_argument("trailing");
            } else if (type == "u64") {
                std::size_t pos = 0;
                std::stoull(value, &pos);
                if (pos != value.size()) throw std::invalid_argument("trailing");
            } else if (type == "bool") {
                if (value != "true" && value != "false" && value != "0" && value != "1")
                    throw std::invalid_argument("bool");
            }
        } catch (const std::exception&) {
            throw ConfigError("bad value for " + key + " (" + type + "): " + value);
        }
    }

    void register_keys() {
        add("env.name", "str", "rtfm");
        add("env.dyna", "bool", "false");
        add("env.groups", "bool", "false");
        add("env.stage", "str", "S2");
        add("env.split", "str", "train");
        add("env.max_steps", "int", "0");  // 0: per-env default
        add("enc.m", "int", "2");
        add("enc.d_t", "int", "32");
        add("enc.d_e", "int", "32");
        add("enc.d_c", "int", "16");
        add("enc.d_k", "int", "32");
        add("enc.gru_hidden", "int", "64");
        add("enc.per_token", "bool", "false");
        add("mi.alpha1", "double", "0.1");
        add("mi.alpha2", "double", "0.01");
        add("mi.club_steps", "int", "5");
        add("mi.club_lr", "double", "0.001");
        add("mi.club_hidden", "int", "64");
        add("mi.grad_to_entity", "bool", "false");
        add("train.gamma", "double", "0.99");
        add("train.horizon", "int", "16");
        add("train.num_envs", "int", "16");
        add("train.entropy_coef", "double", "0.01");
        add("train.value_coef", "double", "0.5");
        add("train.lr", "double", "0.001");
        add("train.grad_clip", "double", "5");
        add("train.total_steps", "u64", "500000");
        add("train.eval_every", "int", "25");
        add("train.eval_episodes", "int", "200");
        add("train.checkpoint_every", "int", "500");
        add("train.seed", "u64", "0");
        add("train.stop_win_rate", "double", "0");  // 0 disables early stop
        add("policy.conv_channels", "int", "32");
        add("policy.trunk_hidden", "int", "256");
    }

    std::map<std::string, Entry> entries_;
};

}  // namespace crl
