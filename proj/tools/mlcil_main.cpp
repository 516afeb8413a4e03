#include <CLI11.hpp>
#include <cstdio>
#include <string>
#include <vector>

#include "mlcil/errors.hpp"
#include "mlcil/runner.hpp"

namespace {

struct CommonArgs {
    std::string config;
    std::string out = "run_out";
    mlcil::CliOverrides overrides;
};

void add_common(CLI::App* cmd, CommonArgs& args, bool with_out = true) {
    cmd->add_option("--config", args.config, "JSON config file")->check(CLI::ExistingFile);
    cmd->add_option("--seed", args.overrides.seed, "seed for generation and training");
    cmd->add_option("--mper", args.overrides.mper, "exemplars kept per class");
    cmd->add_option("--alpha", args.overrides.alpha, "contrastive loss weight");
    cmd->add_option("--beta", args.overrides.beta, "distillation loss weight");
    cmd->add_option("--protocol", args.overrides.protocol, "session split, e.g. B0-C5");
    if (with_out) cmd->add_option("--out", args.out, "output directory");
}

mlcil::RunnerConfig resolve(const CommonArgs& args) {
    auto cfg = mlcil::load_config(args.config);
    mlcil::apply_overrides(cfg, args.overrides);
    return cfg;
}

void print_summary(const mlcil::TrainOutcome& out) {
    for (const auto& r : out.reports)
        std::printf("session %zu: classes=%zu train=%zu replay=%zu pseudo=%zu "
                    "mAP=%.2f CF1=%.2f OF1=%.2f\n",
                    r.session, r.classes_seen, r.train_samples, r.replay_samples,
                    r.pseudo_filled, r.metrics.map, r.metrics.cf1, r.metrics.of1);
    std::printf("average mAP %.2f, final mAP %.2f\n", out.summary.average_map,
                out.summary.final_map);
    std::printf("reports: %s\n", out.report_path.c_str());
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"class-incremental multi-label learning bench"};
    app.require_subcommand(1);

    CommonArgs gen_args;
    auto* gen = app.add_subcommand("gen", "generate a synthetic feature stream");
    add_common(gen, gen_args);

    CommonArgs split_args;
    auto* split = app.add_subcommand("split", "write the session class manifest");
    add_common(split, split_args);

    CommonArgs train_args;
    std::string train_data;
    auto* train = app.add_subcommand("train", "run the full session protocol");
    add_common(train, train_args);
    train->add_option("--data", train_data, "directory from a previous gen (omit to generate)")
        ->check(CLI::ExistingDirectory);

    std::string eval_checkpoint, eval_data, eval_out = "run_out";
    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on the cumulative test set");
    eval->add_option("--checkpoint", eval_checkpoint, "checkpoint file")
        ->required()
        ->check(CLI::ExistingFile);
    eval->add_option("--data", eval_data, "directory from a previous gen")
        ->required()
        ->check(CLI::ExistingDirectory);
    eval->add_option("--out", eval_out, "output directory");

    std::size_t gc_dim = 8, gc_patches = 4, gc_classes = 3, gc_heads = 2, gc_batch = 4;
    std::uint64_t gc_seed = 1;
    double gc_threshold = 1e-5;
    auto* gradcheck = app.add_subcommand("gradcheck",
                                         "finite-difference check of the full loss gradient");
    gradcheck->add_option("--dim", gc_dim, "feature and model width");
    gradcheck->add_option("--patches", gc_patches, "patches per sample");
    gradcheck->add_option("--classes", gc_classes, "total classes (two sessions)");
    gradcheck->add_option("--heads", gc_heads, "attention heads");
    gradcheck->add_option("--batch", gc_batch, "batch size");
    gradcheck->add_option("--seed", gc_seed, "seed");
    gradcheck->add_option("--threshold", gc_threshold, "max tolerated relative error");

    CommonArgs ablate_args;
    std::vector<std::string> ablate_variants{"baseline", "cinet", "cinet_mc"};
    std::size_t ablate_seeds = 3;
    auto* ablate = app.add_subcommand("ablate", "compare model variants over several seeds");
    add_common(ablate, ablate_args);
    ablate->add_option("--variants", ablate_variants, "variants to run");
    ablate->add_option("--seeds", ablate_seeds, "number of seeds per variant");

    CommonArgs sweep_args;
    std::vector<std::size_t> sweep_mpers{0, 5, 10};
    auto* sweep = app.add_subcommand("sweep-buffer", "sweep the exemplar buffer capacity");
    add_common(sweep, sweep_args);
    sweep->add_option("--mpers", sweep_mpers, "capacities to try");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (gen->parsed()) {
            auto out = mlcil::cmd_gen(resolve(gen_args), gen_args.out);
            std::printf("wrote %s (train=%zu test=%zu)\n", out.manifest_path.c_str(),
                        out.train_samples, out.test_samples);
        } else if (split->parsed()) {
            auto path = mlcil::cmd_split(resolve(split_args), split_args.out);
            std::printf("wrote %s\n", path.c_str());
        } else if (train->parsed()) {
            auto out = mlcil::cmd_train(resolve(train_args), train_data, train_args.out);
            print_summary(out);
        } else if (eval->parsed()) {
            auto out = mlcil::cmd_eval(eval_checkpoint, eval_data, eval_out);
            std::printf("session %zu: mAP=%.2f CF1=%.2f OF1=%.2f (%zu samples)\n", out.session,
                        out.metrics.map, out.metrics.cf1, out.metrics.of1, out.metrics.samples);
            std::printf("report: %s\n", out.report_path.c_str());
        } else if (gradcheck->parsed()) {
            auto out = mlcil::run_gradcheck(gc_dim, gc_patches, gc_classes, gc_heads, gc_batch,
                                            gc_seed);
            std::printf("gradcheck: max relative error %.3e over %zu coordinates (worst %s)\n",
                        out.max_rel_err, out.checked, out.worst_param.c_str());
            if (!(out.max_rel_err <= gc_threshold))
                throw mlcil::CheckError("gradient error exceeds " +
                                        std::to_string(gc_threshold));
        } else if (ablate->parsed()) {
            auto rows = mlcil::cmd_ablate(resolve(ablate_args), ablate_variants, ablate_seeds,
                                          ablate_args.out);
            for (const auto& r : rows) {
                std::printf("%-10s final=%.2f avg=%.2f per-seed:", r.variant.c_str(),
                            r.mean_final, r.mean_average);
                for (double v : r.final_map) std::printf(" %.2f", v);
                std::printf("\n");
            }
        } else if (sweep->parsed()) {
            auto rows = mlcil::cmd_sweep_buffer(resolve(sweep_args), sweep_mpers, sweep_args.out);
            for (const auto& r : rows)
                std::printf("mper=%-3zu final=%.2f avg=%.2f\n", r.mper, r.final_map,
                            r.average_map);
        }
    } catch (const mlcil::DataError& e) {
        std::fprintf(stderr, "data error: %s\n", e.what());
        return 2;
    } catch (const mlcil::CheckError& e) {
        std::fprintf(stderr, "check failed: %s\n", e.what());
        return 3;
    } catch (const std::invalid_argument& e) {
        std::fprintf(stderr, "usage error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
