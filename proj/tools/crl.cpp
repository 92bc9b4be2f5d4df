#include <cstdio>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "crl/harness.hpp"

namespace {

struct CommonOpts {
    std::string config_path;
    std::string env_name;
    std::string variant;  // rtfm: comma list of dyna,groups
    std::string stage;
    std::string split;
    std::string seed;
    std::string alpha1, alpha2, concepts, steps;
    bool no_mi = false;
};

void add_common(CLI::App* cmd, CommonOpts& o) {
    cmd->add_option("--config", o.config_path, "key=value config file");
    cmd->add_option("--seed", o.seed, "training seed (train.seed)");
    cmd->add_option("--env", o.env_name, "environment: rtfm or messenger");
    cmd->add_option("--variant", o.variant, "rtfm variant flags, comma list of dyna,groups");
    cmd->add_option("--stage", o.stage, "messenger stage: S1, S2 or S3");
    cmd->add_option("--split", o.split, "messenger split: train or test");
    cmd->add_flag("--no-mi", o.no_mi, "disable both MI constraints (alpha1=alpha2=0)");
    cmd->add_option("--alpha1", o.alpha1, "CLUB loss coefficient");
    cmd->add_option("--alpha2", o.alpha2, "VIB loss coefficient");
    cmd->add_option("--concepts", o.concepts, "concept count m");
    cmd->add_option("--steps", o.steps, "total environment steps");
}

crl::RunConfig build_config(const CommonOpts& o) {
    crl::RunConfig cfg;
    if (!o.config_path.empty()) cfg.load_file(o.config_path);
    cfg.apply_env_overrides();
    if (!o.env_name.empty()) cfg.set("env.name", o.env_name);
    if (!o.variant.empty()) {
        cfg.set("env.dyna", o.variant.find("dyna") != std::string::npos ? "true" : "false");
        cfg.set("env.groups", o.variant.find("groups") != std::string::npos ? "true" : "false");
    }
    if (!o.stage.empty()) cfg.set("env.stage", o.stage);
    if (!o.split.empty()) cfg.set("env.split", o.split);
    if (!o.seed.empty()) cfg.set("train.seed", o.seed);
    if (!o.alpha1.empty()) cfg.set("mi.alpha1", o.alpha1);
    if (!o.alpha2.empty()) cfg.set("mi.alpha2", o.alpha2);
    if (o.no_mi) {
        cfg.set("mi.alpha1", "0");
        cfg.set("mi.alpha2", "0");
    }
    if (!o.concepts.empty()) cfg.set("enc.m", o.concepts);
    if (!o.steps.empty()) cfg.set("train.total_steps", o.steps);
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"crl: language-conditioned concept RL (train / eval / analyze)"};
    app.require_subcommand(1);
    app.footer(crl::RunConfig::help_text());

    CommonOpts train_o, ablate_o, solve_o;
    std::string out_dir, init_ckpt, resume_ckpt;
    bool quiet = false;

    auto* train = app.add_subcommand("train", "train a model, writing metrics and checkpoints");
    add_common(train, train_o);
    train->add_option("--out", out_dir, "run directory")->required();
    train->add_option("--init", init_ckpt, "initialize weights from a checkpoint (transfer)");
    train->add_option("--resume", resume_ckpt, "resume full training state from a checkpoint");
    train->add_flag("--quiet", quiet, "suppress progress lines");

    std::string eval_ckpt, eval_split;
    int eval_episodes = 1000;
    std::uint64_t eval_seed = 12345;
    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint's win rate");
    eval->add_option("checkpoint", eval_ckpt)->required();
    eval->add_option("--split", eval_split, "messenger split: train or test");
    eval->add_option("--episodes", eval_episodes, "evaluation episode count");
    eval->add_option("--seed", eval_seed, "evaluation episode seed base");

    std::string dump_ckpt, dump_out = "concepts.csv";
    int dump_count = 1000;
    std::uint64_t dump_seed = 9000;
    auto* dump = app.add_subcommand("dump-concepts", "export per-entity concept vectors to CSV");
    dump->add_option("checkpoint", dump_ckpt)->required();
    dump->add_option("--count", dump_count, "episodes to sample");
    dump->add_option("--out", dump_out, "output CSV path");
    dump->add_option("--seed", dump_seed, "episode seed base");

    auto* ablate = app.add_subcommand("ablate-m", "train once per concept count, join results");
    add_common(ablate, ablate_o);
    std::string m_list_str = "1,2,3,4", ablate_out;
    ablate->add_option("--m-list", m_list_str, "comma list of concept counts");
    ablate->add_option("--out", ablate_out, "sweep root directory")->required();
    bool ablate_quiet = false;
    ablate->add_flag("--quiet", ablate_quiet, "suppress progress lines");

    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient suite");
    std::uint64_t gc_seed = 2024;
    gradcheck->add_option("--seed", gc_seed, "suite seed");

    auto* solve = app.add_subcommand("solve", "run the search oracle on one seeded episode");
    add_common(solve, solve_o);
    std::uint64_t solve_seed = 0;
    solve->add_option("--episode-seed", solve_seed, "episode seed");

    CLI11_PARSE(app, argc, argv);

    try {
        if (train->parsed()) {
            const auto res = crl::cmd_train(build_config(train_o), out_dir, init_ckpt, resume_ckpt, quiet);
            std::printf("run %s: %lld steps, final win rate %.4f\n", res.run_dir.c_str(),
                        static_cast<long long>(res.steps), res.final_win_rate);
            return 0;
        }
        if (eval->parsed()) {
            const auto r = crl::cmd_eval(eval_ckpt, eval_split, eval_episodes, eval_seed);
            std::printf("win_rate %.4f  95%% CI [%.4f, %.4f]  episodes %d\n", r.win_rate, r.ci_lo,
                        r.ci_hi, r.episodes);
            return 0;
        }
        if (dump->parsed()) {
            crl::cmd_dump_concepts(dump_ckpt, dump_count, dump_out, dump_seed);
            std::printf("wrote %s\n", dump_out.c_str());
            return 0;
        }
        if (ablate->parsed()) {
            std::vector<int> ms;
            for (const auto& part : crl::split_on(m_list_str, ',')) ms.push_back(std::stoi(part));
            const auto results = crl::cmd_ablate_m(build_config(ablate_o), ms, ablate_out, ablate_quiet);
            for (const auto& [m, r] : results)
                std::printf("m=%d final win rate %.4f\n", m, r.final_win_rate);
            return 0;
        }
        if (gradcheck->parsed()) return crl::cmd_gradcheck(std::cout, gc_seed);
        if (solve->parsed()) return crl::cmd_solve(build_config(solve_o), solve_seed, std::cout);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    }
    return 2;
}
