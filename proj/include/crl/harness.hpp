#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "crl/checkpoint.hpp"
#include "crl/composed_checks.hpp"
#include "crl/config.hpp"
#include "crl/diffcore_checks.hpp"
#include "crl/metrics.hpp"

namespace crl {

// ---------------------------------------------------------------------------
// checkpoint files: magic, version, embedded config text, trainer state
// ---------------------------------------------------------------------------

inline constexpr char kCkptMagic[9] = "CRLCKPT1";

inline void save_checkpoint(const std::string& path, const RunConfig& cfg, const Trainer& t) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw ConfigError("cannot write checkpoint: " + path);
    os.write(kCkptMagic, 8);
    write_u32(os, 1);
    write_string(os, cfg.to_text());
    t.save(os);
}

inline RunConfig read_checkpoint_config(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ConfigError("cannot open checkpoint: " + path);
    char magic[8];
    is.read(magic, 8);
    if (!is || std::string(magic, 8) != std::string(kCkptMagic, 8))
        throw ConfigError("not a checkpoint file: " + path);
    read_u32(is);
    RunConfig cfg;
    cfg.load_text(read_string(is));
    return cfg;
}

inline void load_checkpoint(const std::string& path, Trainer& t, bool params_only = false) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ConfigError("cannot open checkpoint: " + path);
    char magic[8];
    is.read(magic, 8);
    if (!is || std::string(magic, 8) != std::string(kCkptMagic, 8))
        throw ConfigError("not a checkpoint file: " + path);
    read_u32(is);
    read_string(is);  // config text, consumed by read_checkpoint_config
    if (params_only)
        load_params_only(is, t);
    else
        t.load(is);
}

inline Trainer make_trainer(const RunConfig& cfg) {
    return Trainer(cfg.env_setup(), cfg.encoder(), cfg.mi(), cfg.train(), cfg.policy());
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

struct TrainResult {
    std::string run_dir;
    std::string final_checkpoint;
    double final_win_rate = 0.0;
    std::int64_t steps = 0;
};

inline std::uint64_t eval_seed_base(const RunConfig& cfg) {
    return Rng(cfg.get_u64("train.seed")).split(31337).next_u64();
}

inline TrainResult cmd_train(const RunConfig& cfg, const std::string& out_dir,
                             const std::string& init_ckpt = "",
                             const std::string& resume_ckpt = "", bool quiet = false) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    {
        std::ofstream c(out_dir + "/config.txt");
        c << cfg.to_text();
    }
    Trainer t = make_trainer(cfg);
    if (!resume_ckpt.empty()) load_checkpoint(resume_ckpt, t);
    if (!init_ckpt.empty()) load_checkpoint(init_ckpt, t, /*params_only=*/true);

    const TrainConfig tc = cfg.train();
    const std::uint64_t eval_base = eval_seed_base(cfg);
    MetricsWriter metrics(out_dir + "/metrics.jsonl");
    double last_win = -1.0;
    while (t.env_steps() < tc.total_steps) {
        const UpdateMetrics m = t.update();
        std::optional<double> win;
        if (t.update_count() % tc.eval_every == 0) {
            win = t.evaluate(tc.eval_episodes, eval_base);
            last_win = *win;
            if (!quiet)
                std::fprintf(stderr, "step %lld win_rate %.3f rollout_win %.3f loss %.4f\n",
                             static_cast<long long>(m.step), *win, m.rollout_win_rate,
                             m.loss_total);
        }
        metrics.write(m, win);
        if (t.update_count() % tc.checkpoint_every == 0)
            save_checkpoint(out_dir + "/last.ckpt", cfg, t);
        if (win && cfg.stop_win_rate() > 0.0 && *win >= cfg.stop_win_rate()) break;
    }
    if (last_win < 0.0) last_win = t.evaluate(tc.eval_episodes, eval_base);
    TrainResult res;
    res.run_dir = out_dir;
    res.final_checkpoint = out_dir + "/final.ckpt";
    res.final_win_rate = last_win;
    res.steps = t.env_steps();
    save_checkpoint(res.final_checkpoint, cfg, t);
    return res;
}

// ---------------------------------------------------------------------------
// eval
// ---------------------------------------------------------------------------

struct EvalReport {
    double win_rate = 0.0;
    double ci_lo = 0.0;
    double ci_hi = 0.0;
    int episodes = 0;
};

inline EvalReport cmd_eval(const std::string& ckpt, const std::string& split, int episodes,
                           std::uint64_t eval_seed) {
    RunConfig cfg = read_checkpoint_config(ckpt);
    std::optional<MsgSplit> split_override;
    if (!split.empty()) {
        if (cfg.get("env.name") != "messenger")
            throw ConfigError("--split applies to messenger only: rtfm evaluation is i.i.d.");
        split_override = split == "test" ? MsgSplit::Test : MsgSplit::Train;
    }
    Trainer t = make_trainer(cfg);
    load_checkpoint(ckpt, t);
    EvalReport r;
    r.episodes = episodes;
    r.win_rate = t.evaluate(episodes, eval_seed, split_override);
    const double se = std::sqrt(std::max(r.win_rate * (1.0 - r.win_rate), 1e-12) / episodes);
    r.ci_lo = std::max(0.0, r.win_rate - 1.96 * se);
    r.ci_hi = std::min(1.0, r.win_rate + 1.96 * se);
    return r;
}

// ---------------------------------------------------------------------------
// dump-concepts: one CSV row per entity over `count` seeded episodes
// ---------------------------------------------------------------------------

inline void cmd_dump_concepts(const std::string& ckpt, int count, const std::string& out_csv,
                              std::uint64_t base_seed = 9000) {
    RunConfig cfg = read_checkpoint_config(ckpt);
    Trainer t = make_trainer(cfg);
    load_checkpoint(ckpt, t);
    const EnvSetup setup = cfg.env_setup();
    AnyEnv env = setup.make();
    const int D = cfg.encoder().concept_channels();

    std::ofstream out(out_csv, std::ios::trunc);
    if (!out) throw ConfigError("cannot write csv: " + out_csv);
    out << "episode_seed,entity_id,entity_words,ground_truth_label";
    for (int d = 0; d < D; ++d) out << ",c" << d;
    out << "\n";
    char buf[64];
    for (int i = 0; i < count; ++i) {
        const std::uint64_t seed = Rng(base_seed).split(static_cast<std::uint64_t>(i)).next_u64();
        env.reset(seed);
        Tape tape(false, true);
        auto en = t.encoder().enter(tape, false);
        const WorldObservation obs = env.observation();
        auto ep = t.encoder().encode_episode(tape, en, obs, env.manual());
        auto set = t.encoder().encode_concepts(tape, en, ep, EncodeMode::Eval, nullptr);
        std::vector<std::string> labels;
        if (setup.kind == EnvKind::Rtfm) {
            for (auto l : ground_truth_concepts(env.rtfm().spec())) labels.push_back(to_string(l));
        } else {
            for (auto r : ground_truth_roles(env.messenger().assignment()))
                labels.push_back(to_string(r));
        }
        for (std::size_t e = 0; e < obs.entities.size(); ++e) {
            out << seed << "," << e << ",";
            std::string words;
            for (int w : obs.entities[e].words)
                if (w != 0) {
                    if (!words.empty()) words += "|";
                    words += env.vocab().word(w);
                }
            out << words << "," << labels[e];
            Tensor cv = set.entity_concepts(static_cast<int>(e));
            for (std::int64_t d = 0; d < cv.size(); ++d) {
                std::snprintf(buf, sizeof buf, "%.17g", cv.v(d));
                out << "," << buf;
            }
            out << "\n";
        }
    }
}

// ---------------------------------------------------------------------------
// ablate-m: one run per concept count with shared seeds, joined summary
// ---------------------------------------------------------------------------

inline std::vector<std::pair<int, TrainResult>> cmd_ablate_m(const RunConfig& base,
                                                             const std::vector<int>& m_list,
                                                             const std::string& out_root,
                                                             bool quiet = false) {
    if (m_list.empty()) throw ConfigError("ablate-m: empty m list");
    namespace fs = std::filesystem;
    fs::create_directories(out_root);
    std::vector<std::pair<int, TrainResult>> results;
    for (int m : m_list) {
        RunConfig cfg = base;
        cfg.set("enc.m", std::to_string(m));
        results.emplace_back(m, cmd_train(cfg, out_root + "/m" + std::to_string(m), "", "", quiet));
    }
    std::ofstream sum(out_root + "/ablate_m.csv", std::ios::trunc);
    sum << "m,final_win_rate,steps\n";
    for (const auto& [m, r] : results)
        sum << m << "," << r.final_win_rate << "," << r.steps << "\n";
    return results;
}

// ---------------------------------------------------------------------------
// gradcheck: every registered primitive plus the composed encoder/MI losses
// ---------------------------------------------------------------------------

inline int cmd_gradcheck(std::ostream& os, std::uint64_t seed = 2024) {
    GradReport rep = run_checks(diffcore_checks(), seed);
    for (auto extra : composed_gradient_checks(seed)) rep.ops.push_back(extra);
    int failures = 0;
    for (const auto& op : rep.ops) {
        os << (op.pass ? "[PASS] " : "[FAIL] ") << op.name << "  instances=" << op.instances
           << "  max_rel_err=" << op.max_rel_err << "\n";
        failures += !op.pass;
    }
    os << rep.ops.size() << " ops checked, " << failures << " failures (tolerance "
       << rep.tolerance << ")\n";
    return failures == 0 ? 0 : 1;
}

// ---------------------------------------------------------------------------
// solve: run the search oracle on one seeded episode
// ---------------------------------------------------------------------------

inline int cmd_solve(const RunConfig& cfg, std::uint64_t seed, std::ostream& os) {
    AnyEnv env = cfg.env_setup().make();
    env.reset(seed);
    std::optional<std::vector<Action>> plan;
    if (env.is_rtfm())
        plan = oracle_solve(env.rtfm());
    else
        plan = oracle_solve(env.messenger());
    if (!plan) {
        os << "no plan found\n";
        return 1;
    }
    static const char* names = "UDLRS";
    os << "plan (" << plan->size() << " actions): ";
    for (Action a : *plan) os << names[static_cast<int>(a)];
    os << "\n";
    double total = 0.0;
    StepResult last;
    for (Action a : *plan) {
        last = env.step(a);
        total += last.reward;
    }
    os << "replay: total reward " << total << (last.win ? " (win)" : "") << "\n";
    return last.win ? 0 : 1;
}

}  // namespace crl
