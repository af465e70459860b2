// Command-line front end: synth | train-tem | train | infer | eval | fp-profile.

#include <cstdio>
#include <exception>
#include <string>

#include <CLI11.hpp>

#include "rtd/commands.hpp"

namespace {

void add_common_flags(CLI::App* sub, rtd::CommandOptions& opts) {
    sub->add_option("--config", opts.config_path, "JSON config file");
    sub->add_option("--out-dir", opts.out_dir, "output directory")->capture_default_str();
    sub->add_option("--seed", [&opts](const CLI::results_t& r) {
        opts.seed = static_cast<std::uint64_t>(std::stoull(r[0]));
        return true;
    }, "seed override");
    sub->add_option("--mode", [&opts](const CLI::results_t& r) {
        opts.mode = r[0];
        return true;
    }, "inference/windowing mode: window | whole");
    sub->add_option("--an-max", [&opts](const CLI::results_t& r) {
        opts.an_max = static_cast<std::size_t>(std::stoull(r[0]));
        return true;
    }, "largest AN for recall tables");
    sub->add_option("--thresholds", opts.thresholds, "tIoU thresholds")->delimiter(',');
    sub->add_flag("--dump-attention", opts.dump_attention, "write attention CSVs (infer)");
    sub->add_flag("--dump-boundary", opts.dump_boundary, "write boundary score CSVs (infer)");
    sub->add_flag("--soft-nms", opts.with_soft_nms, "also evaluate Soft-NMS rescored proposals");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"temporal action proposal generation via a relaxed transformer decoder"};
    app.require_subcommand(1);

    rtd::CommandOptions opts;
    int (*command)(const rtd::CommandOptions&) = nullptr;

    struct SubSpec {
        const char* name;
        const char* help;
        int (*fn)(const rtd::CommandOptions&);
    };
    const SubSpec specs[] = {
        {"synth", "generate a synthetic feature dataset", &rtd::run_synth},
        {"train-tem", "train the boundary probability predictor", &rtd::run_train_tem},
        {"train", "run the three-phase training schedule", &rtd::run_train},
        {"infer", "generate proposals (NMS-free)", &rtd::run_infer},
        {"eval", "compute AR@AN / AUC / mAP reports", &rtd::run_eval},
        {"fp-profile", "false-positive error breakdown", &rtd::run_fp_profile},
    };
    for (const auto& s : specs) {
        CLI::App* sub = app.add_subcommand(s.name, s.help);
        add_common_flags(sub, opts);
        sub->callback([&command, &s]() { command = s.fn; });
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::fprintf(stderr, "%s\n", e.what());
        return 2;
    }

    try {
        return command(opts);
    } catch (const rtd::Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "unexpected error: %s\n", e.what());
        return 1;
    }
}
