// Command-line driver for the dyadic motion pipeline.
//
// Exit codes: 0 ok, 1 other failure, 2 configuration or argument error,
// 3 missing prerequisite, 4 numerical divergence.

#include <cstdio>
#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dim/error.hpp"
#include "dim/pipeline.hpp"

namespace {

struct Globals {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::string out;
    bool no_plots = false;
    bool force = false;
};

dim::RunConfig resolve(const Globals& g) {
    dim::RunConfig cfg;
    if (!g.config.empty()) {
        cfg = dim::load_run_config(g.config, g.seed);
    } else {
        cfg = dim::parse_run_config("{}", "<defaults>", g.seed);
    }
    if (!g.out.empty()) {
        cfg.root = g.out;
    } else if (const char* home = std::getenv("DIM_HOME"); home && *home) {
        cfg.root = home;
    } else {
        cfg.root = "dim_runs";
    }
    cfg.plots = !g.no_plots;
    cfg.force = g.force;
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Dyadic speaker-listener motion pipeline"};
    app.require_subcommand(1);
    Globals g;
    app.add_option("--config", g.config, "run configuration (JSON)");
    app.add_option("--seed", g.seed, "global seed; overrides the config file");
    app.add_option("--out", g.out, "artifact root (default: $DIM_HOME, else ./dim_runs)");
    app.add_flag("--no-plots", g.no_plots, "skip SVG plots");
    app.add_flag("--force", g.force, "evaluate even when data hashes differ");

    const std::vector<std::string> roles{"speaker", "listener"};
    const std::vector<std::string> tasks{"listener", "speaker"};

    auto* synth = app.add_subcommand("synth", "synthesize the dyadic corpus and split it");

    auto* train_vq = app.add_subcommand("train-vq", "train the motion VQ-VAE of one role");
    std::string vq_role;
    train_vq->add_option("role", vq_role)->required()->check(CLI::IsMember(roles));

    auto* pretrain = app.add_subcommand("pretrain", "masked dyadic pretraining");

    auto* finetune = app.add_subcommand("finetune", "fine-tune a generator");
    std::string ft_task;
    finetune->add_option("task", ft_task)->required()->check(CLI::IsMember(tasks));

    auto* generate = app.add_subcommand("generate", "generate motion for a split");
    std::string gen_task = "listener", gen_split = "test", gen_ckpt;
    generate->add_option("--task", gen_task)->check(CLI::IsMember(tasks));
    generate->add_option("--split", gen_split)->check(CLI::IsMember({"train", "val", "test"}));
    generate->add_option("--checkpoint", gen_ckpt, "fine-tuned checkpoint directory");

    auto* evaluate = app.add_subcommand("evaluate", "score generated motion against ground truth");
    std::string eval_dir, eval_label, eval_task = "listener", eval_split = "test";
    evaluate->add_option("generated_dir", eval_dir)->required();
    evaluate->add_option("--label", eval_label, "report name (default: directory name)");
    evaluate->add_option("--task", eval_task, "role of a dataset directory")->check(CLI::IsMember(tasks));
    evaluate->add_option("--split", eval_split, "split of a dataset directory")
        ->check(CLI::IsMember({"train", "val", "test"}));

    auto* report = app.add_subcommand("report", "aggregate metric reports into a table and plots");
    std::vector<std::string> report_files;
    report->add_option("reports", report_files, "report JSON files (default: all under out/reports)");

    auto* ablate = app.add_subcommand("ablate", "run the ablation table");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        const dim::RunConfig cfg = resolve(g);
        if (*synth) {
            dim::cmd_synth(cfg);
            std::printf("dataset written to %s\n", cfg.data_path().string().c_str());
        } else if (*train_vq) {
            const dim::Role role = vq_role == "speaker" ? dim::Role::Speaker : dim::Role::Listener;
            const dim::VQTrainResult r = dim::cmd_train_vq(cfg, role);
            std::printf("recon mse %.6g -> %.6g\n", r.initial_recon_mse, r.final_recon_mse);
        } else if (*pretrain) {
            const dim::PretrainResult r = dim::cmd_pretrain(cfg);
            if (!r.epoch_loss.empty()) std::printf("final epoch loss %.6g\n", r.epoch_loss.back());
        } else if (*finetune) {
            const dim::FinetuneResult r = dim::cmd_finetune(cfg, dim::parse_finetune_task(ft_task));
            if (!r.epoch_loss.empty()) std::printf("final epoch loss %.6g\n", r.epoch_loss.back());
        } else if (*generate) {
            const auto dir = dim::cmd_generate(cfg, dim::parse_finetune_task(gen_task), dim::parse_split(gen_split),
                                               gen_ckpt);
            std::printf("generated clips in %s\n", dir.string().c_str());
        } else if (*evaluate) {
            const dim::MetricReport r = dim::cmd_evaluate(cfg, eval_dir, eval_label,
                                                          dim::parse_finetune_task(eval_task),
                                                          dim::parse_split(eval_split));
            std::printf("%s\n", r.to_json().dump(2).c_str());
        } else if (*report) {
            std::vector<std::filesystem::path> paths(report_files.begin(), report_files.end());
            std::printf("table written to %s\n", dim::cmd_report(cfg, paths).string().c_str());
        } else if (*ablate) {
            std::printf("ablation written to %s\n", dim::cmd_ablate(cfg).string().c_str());
        }
    } catch (const dim::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const dim::InvalidArgument& e) {
        std::fprintf(stderr, "invalid argument: %s\n", e.what());
        return 2;
    } catch (const dim::MissingPrerequisite& e) {
        std::fprintf(stderr, "missing prerequisite: %s\n", e.what());
        return 3;
    } catch (const dim::DivergenceError& e) {
        std::fprintf(stderr, "numerical divergence: %s\n", e.what());
        return 4;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
