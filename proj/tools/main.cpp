#include "groundkit/commands.hpp"
#include "groundkit/config.hpp"

#include <CLI11.hpp>

#include <cstdint>
#include <iostream>
#include <optional>
#include <string>

namespace {

struct GlobalFlags {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<int> max_concurrency;
};

groundkit::GlobalConfig effective_config(GlobalFlags const & flags) {
    groundkit::GlobalConfig cfg;
    if (!flags.config_path.empty())
        cfg = groundkit::load_global_config(flags.config_path);
    // flags win over config-file values
    if (flags.seed)
        cfg.seed = *flags.seed;
    if (flags.max_concurrency)
        cfg.max_concurrency = *flags.max_concurrency;
    validate(cfg.reward);
    validate(cfg.resample);
    validate(cfg.tiling);
    if (cfg.max_concurrency < 1)
        throw groundkit::ConfigError("max_concurrency must be >= 1");
    return cfg;
}

} // namespace

int main(int argc, char ** argv) {
    CLI::App app{"groundkit: GUI-grounding rewards, resampling, tiled inference, benchmarks"};
    app.require_subcommand(1);
    app.fallthrough();   // lets the global flags follow the subcommand name

    GlobalFlags flags;
    app.add_option("--config", flags.config_path, "JSON config file")
        ->envname("GROUNDKIT_CONFIG");
    app.add_option("--seed", flags.seed, "override pipeline seed");
    app.add_option("--max-concurrency", flags.max_concurrency,
                   "override the worker-pool budget");

    auto * reward_eval = app.add_subcommand(
        "reward-eval", "score model responses with the grounding/think rewards");
    std::string re_responses, re_records, re_out = "scores.jsonl";
    reward_eval->add_option("--responses", re_responses, "JSONL of {id, response}")
        ->required();
    reward_eval->add_option("--records", re_records, "ground-truth records JSONL")
        ->required();
    reward_eval->add_option("--out", re_out, "output scores JSONL");

    auto * resample = app.add_subcommand(
        "resample", "crop every record to the attempt-k window containing its bbox");
    std::string rs_records, rs_out;
    int rs_attempt = 1;
    resample->add_option("--records", rs_records, "records JSONL")->required();
    resample->add_option("--out", rs_out, "output dataset directory")->required();
    resample->add_option("--attempt", rs_attempt, "attempt index (1-based)");

    auto * ground = app.add_subcommand("ground", "predict a click point for one image");
    groundkit::GroundParams gp;
    std::string g_image, g_records, g_id;
    ground->add_option("--image", g_image, "PNG image");
    ground->add_option("--instruction", gp.instruction, "target instruction");
    ground->add_option("--records", g_records, "records JSONL (oracle truth / metadata)");
    ground->add_option("--id", g_id, "record id within --records");
    ground->add_option("--mode", gp.mode, "direct | decomposed");
    ground->add_flag("--diagnostics", gp.diagnostics, "dump the candidate set as JSON");

    auto * bench = app.add_subcommand("bench", "run grounding over a dataset and report");
    groundkit::BenchParams bp;
    std::string b_records, b_report;
    double b_threshold = -1.0;
    bench->add_option("--records", b_records, "records JSONL")->required();
    bench->add_option("--mode", bp.mode, "direct | decomposed");
    bench->add_option("--report", b_report,
                      "directory for report.json/report.md (adds timestamp and timing)");
    bench->add_option("--threshold", b_threshold, "exit nonzero when accuracy falls below");

    CLI11_PARSE(app, argc, argv);

    try {
        auto const cfg = effective_config(flags);
        if (reward_eval->parsed())
            return groundkit::cmd_reward_eval(re_responses, re_records, re_out, cfg,
                                              std::cout, std::cerr);
        if (resample->parsed())
            return groundkit::cmd_resample(rs_records, rs_out, rs_attempt, cfg, std::cout,
                                           std::cerr);
        if (ground->parsed()) {
            gp.image_path = g_image;
            gp.records_file = g_records;
            gp.record_id = g_id;
            return groundkit::cmd_ground(gp, cfg, std::cout, std::cerr);
        }
        if (bench->parsed()) {
            bp.records_file = b_records;
            bp.report_dir = b_report;
            if (b_threshold >= 0.0)
                bp.threshold = b_threshold;
            return groundkit::cmd_bench(bp, cfg, std::cout, std::cerr).exit_code;
        }
    } catch (groundkit::TransportError const & e) {
        std::cerr << "transport error: " << e.what() << " (status " << e.status_code
                  << ", attempts " << e.attempts << ")\n";
        return 1;
    } catch (std::exception const & e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
