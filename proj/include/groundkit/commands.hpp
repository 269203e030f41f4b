#pragma once

#include "groundkit/backend.hpp"
#include "groundkit/config.hpp"
#include "groundkit/decomposer.hpp"
#include "groundkit/error.hpp"
#include "groundkit/evalharness.hpp"
#include "groundkit/raster.hpp"
#include "groundkit/resampler.hpp"
#include "groundkit/rewards.hpp"

#include <nlohmann/json.hpp>

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <vector>

namespace groundkit {

namespace detail {

inline std::string utc_timestamp() {
    auto const now = std::chrono::system_clock::now();
    std::time_t const t = std::chrono::system_clock::to_time_t(now);
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

struct StageClock {
    using clock = std::chrono::steady_clock;
    std::map<std::string, double> seconds;

    template <typename Fn>
    auto time(std::string const & stage, Fn && fn) {
        auto const t0 = clock::now();
        if constexpr (std::is_void_v<decltype(fn())>) {
            fn();
            seconds[stage] += std::chrono::duration<double>(clock::now() - t0).count();
        } else {
            auto result = fn();
            seconds[stage] += std::chrono::duration<double>(clock::now() - t0).count();
            return result;
        }
    }
};

} // namespace detail

// ---------------------------------------------------------------------------
// reward-eval

/// Scores a JSONL file of {"id", "response"} rows against the ground-truth
/// records and writes one score row per record, in dataset order.
inline int cmd_reward_eval(std::filesystem::path const & responses_file,
                           std::filesystem::path const & records_file,
                           std::filesystem::path const & scores_file,
                           GlobalConfig const & cfg, std::ostream & out, std::ostream & err) {
    auto const dataset = load_grounding_dataset(records_file);
    for (auto const & issue : dataset.issues)
        err << "records line " << issue.line << ": " << issue.reason << "\n";

    std::ifstream in(responses_file);
    if (!in)
        throw DataError("cannot open responses: " + responses_file.string());
    std::map<std::string, std::string> responses;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty())
            continue;
        auto const j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.contains("id") || !j.contains("response"))
            throw DataError("responses line " + std::to_string(line_no) +
                            ": expected {\"id\", \"response\"}");
        responses[j.at("id").get<std::string>()] = j.at("response").get<std::string>();
    }

    std::set<std::string> record_ids, response_ids;
    for (auto const & r : dataset.records)
        record_ids.insert(r.id);
    for (auto const & [id, text] : responses)
        response_ids.insert(id);
    if (record_ids != response_ids) {
        std::string offending;
        for (auto const & id : record_ids)
            if (!response_ids.count(id))
                offending += " -" + id;
        for (auto const & id : response_ids)
            if (!record_ids.count(id))
                offending += " +" + id;
        throw DataError("responses and records are misaligned:" + offending);
    }

    std::ofstream scores(scores_file);
    if (!scores)
        throw DataError("cannot write scores: " + scores_file.string());

    double sum_grounding = 0.0, sum_think = 0.0;
    int hits = 0;
    for (auto const & rec : dataset.records) {
        auto const split = split_think_answer(responses.at(rec.id));
        auto const point = parse_point(split.answer);
        double const grounding = point ? grounding_reward(*point, rec.bbox) : 0.0;
        auto const thought = make_thought(split.thought, cfg.reward.length_unit);
        double const length_r = length_reward(thought.length, cfg.reward);
        bool const complete = is_syntactically_complete(thought.text);
        double const think_r = think_reward(thought, grounding, cfg.reward);

        nlohmann::json row = {
            {"id", rec.id},
            {"point", point ? nlohmann::json({point->x, point->y}) : nlohmann::json(nullptr)},
            {"grounding_reward", grounding},
            {"thought_length", thought.length},
            {"length_reward", length_r},
            {"syntactically_complete", complete},
            {"think_reward", think_r},
        };
        scores << row.dump() << "\n";
        sum_grounding += grounding;
        sum_think += think_r;
        hits += grounding > 0.0 ? 1 : 0;
    }

    auto const n = static_cast<double>(dataset.records.size());
    out << "records: " << dataset.records.size() << "\n"
        << "grounding hit rate: " << hits / n << "\n"
        << "mean grounding reward: " << sum_grounding / n << "\n"
        << "mean think reward: " << sum_think / n << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// resample

/// Applies the attempt-k crop to every record, writing cropped images and
/// translated records; records whose bbox defeats the crop are passed
/// through unchanged with a bypass flag.
inline int cmd_resample(std::filesystem::path const & records_file,
                        std::filesystem::path const & out_dir, int attempt,
                        GlobalConfig const & cfg, std::ostream & out, std::ostream & err) {
    namespace fs = std::filesystem;
    auto const dataset = load_grounding_dataset(records_file);
    for (auto const & issue : dataset.issues)
        err << "records line " << issue.line << ": " << issue.reason << "\n";

    fs::create_directories(out_dir / "images");
    std::ofstream records(out_dir / "records.jsonl");
    if (!records)
        throw DataError("cannot write records: " + (out_dir / "records.jsonl").string());

    int cropped = 0, bypassed = 0, failed = 0;
    for (auto const & rec : dataset.records) {
        nlohmann::json row = {
            {"id", rec.id},
            {"instruction", rec.instruction},
            {"ui_type", to_string(rec.ui_type)},
            {"group", rec.group},
            {"platform", rec.platform},
            {"image", "images/" + rec.id + ".png"},
        };
        try {
            ResampleResult const pick =
                pick_resample(rec.image_size, rec.bbox, cfg.resample, attempt);
            RasterImage const image = load_png(rec.image_path);
            save_png(crop_raster(image, pick.window), out_dir / "images" / (rec.id + ".png"));
            row["bbox"] = {pick.translated_bbox.x1, pick.translated_bbox.y1,
                           pick.translated_bbox.x2, pick.translated_bbox.y2};
            row["image_w"] = pick.window.size.w;
            row["image_h"] = pick.window.size.h;
            row["bypassed"] = false;
            row["attempt"] = pick.attempt_index;
            row["window"] = {pick.window.origin.x, pick.window.origin.y, pick.window.size.w,
                             pick.window.size.h};
            ++cropped;
        } catch (BypassResampling const &) {
            fs::copy_file(rec.image_path, out_dir / "images" / (rec.id + ".png"),
                          fs::copy_options::overwrite_existing);
            row["bbox"] = {rec.bbox.x1, rec.bbox.y1, rec.bbox.x2, rec.bbox.y2};
            row["image_w"] = rec.image_size.w;
            row["image_h"] = rec.image_size.h;
            row["bypassed"] = true;
            ++bypassed;
        } catch (std::exception const & e) {
            err << "record " << rec.id << ": " << e.what() << "\n";
            ++failed;
            continue;
        }
        records << row.dump() << "\n";
    }
    out << "cropped: " << cropped << "\nbypassed: " << bypassed << "\nfailed: " << failed
        << "\n";
    return cropped + bypassed > 0 ? 0 : 1;
}

// ---------------------------------------------------------------------------
// ground

struct GroundParams {
    std::filesystem::path image_path;    // used when no record id is given
    std::string instruction;
    std::filesystem::path records_file;  // optional: ground truth / metadata
    std::string record_id;
    std::string mode = "decomposed";     // decomposed | direct
    bool diagnostics = false;
};

inline int cmd_ground(GroundParams const & params, GlobalConfig const & cfg,
                      std::ostream & out, std::ostream & err) {
    std::optional<GroundingDataset> dataset;
    if (!params.records_file.empty())
        dataset = load_grounding_dataset(params.records_file);

    std::filesystem::path image_path = params.image_path;
    std::string instruction = params.instruction;
    if (!params.record_id.empty()) {
        if (!dataset)
            throw ConfigError("--id requires --records");
        auto const & rec = dataset->by_id(params.record_id);
        image_path = rec.image_path;
        if (instruction.empty())
            instruction = rec.instruction;
    }
    if (image_path.empty())
        throw ConfigError("an image is required (--image or --records with --id)");

    auto bundle = make_backend_bundle(cfg, dataset ? &*dataset : nullptr);
    RasterImage const image = load_png(image_path);
    auto opts = pipeline_options(cfg, params.record_id);

    CandidateSet set;
    if (params.mode == "direct")
        set = direct_predict(image, instruction, cfg.tiling, *bundle.backend, opts);
    else if (params.mode == "decomposed")
        set = grounded_predict(image, instruction, cfg.tiling, *bundle.backend, *bundle.scorer,
                               opts);
    else
        throw ConfigError("unknown mode: " + params.mode);

    for (auto const & d : set.diagnostics)
        err << "tile " << d.tile_index << " [" << d.stage << "] " << d.message << "\n";
    if (params.diagnostics)
        out << nlohmann::json(set).dump(2) << "\n";
    else if (auto const p = set.final_point())
        out << "click(" << p->x << ", " << p->y << ")\n";
    else
        out << "none\n";
    return set.final_point() ? 0 : 1;
}

// ---------------------------------------------------------------------------
// bench

struct BenchParams {
    std::filesystem::path records_file;
    std::string mode = "decomposed";        // decomposed | direct
    std::filesystem::path report_dir;       // when set: write report files
                                            // with timestamp + stage timing
    std::optional<double> threshold;        // accuracy gate
};

struct BenchResult {
    MetricsReport report;
    int exit_code = 0;
};

inline BenchResult cmd_bench(BenchParams const & params, GlobalConfig const & cfg,
                             std::ostream & out, std::ostream & err) {
    detail::StageClock clock;
    auto const dataset = clock.time("load_dataset", [&] {
        return load_grounding_dataset(params.records_file);
    });
    for (auto const & issue : dataset.issues)
        err << "records line " << issue.line << ": " << issue.reason << "\n";
    if (params.mode != "direct" && params.mode != "decomposed")
        throw ConfigError("unknown mode: " + params.mode);

    auto bundle = make_backend_bundle(cfg, &dataset);

    struct Outcome {
        CandidateSet set;
        bool failed = false;
        std::string error;
    };
    int const n = static_cast<int>(dataset.records.size());
    std::vector<Outcome> outcomes(static_cast<std::size_t>(n));

    clock.time("predict", [&] {
        // one worker pool across records; tiles run sequentially inside it
        detail::run_indexed(n, cfg.max_concurrency, [&](int i) {
            auto const & rec = dataset.records[static_cast<std::size_t>(i)];
            auto & slot = outcomes[static_cast<std::size_t>(i)];
            try {
                RasterImage const image = load_png(rec.image_path);
                auto opts = pipeline_options(cfg, rec.id);
                opts.max_concurrency = 1;
                if (params.mode == "direct")
                    slot.set = direct_predict(image, rec.instruction, cfg.tiling,
                                              *bundle.backend, opts);
                else
                    slot.set = grounded_predict(image, rec.instruction, cfg.tiling,
                                                *bundle.backend, *bundle.scorer, opts);
            } catch (std::exception const & e) {
                slot.failed = true;
                slot.error = e.what();
            }
        });
    });

    MetricsReport report;
    clock.time("metrics", [&] {
        std::vector<std::pair<std::string, Point>> predictions;
        std::vector<std::pair<std::string, CandidateSet>> sets;
        for (int i = 0; i < n; ++i) {
            auto const & rec = dataset.records[static_cast<std::size_t>(i)];
            auto const & outcome = outcomes[static_cast<std::size_t>(i)];
            if (outcome.failed) {
                err << "record " << rec.id << ": " << outcome.error << "\n";
                ++report.failed_records;
            }
            sets.emplace_back(rec.id, outcome.set);
            if (auto const p = outcome.set.final_point())
                predictions.emplace_back(rec.id, *p);
        }
        report.grounding = grounding_accuracy(predictions, dataset);
        // records without a prediction count as misses
        for (int i = 0; i < n; ++i) {
            auto const & rec = dataset.records[static_cast<std::size_t>(i)];
            if (!outcomes[static_cast<std::size_t>(i)].set.final_point()) {
                ++report.grounding.overall.total;
                ++report.grounding.cells[rec.group][to_string(rec.ui_type)].total;
            }
        }
        report.pass4 = pass_at_4(sets, dataset);
    });

    report.mode = params.mode;
    report.backend_name = bundle.backend->name() + "+" + bundle.scorer->name();
    report.config_hash = config_hash(cfg);

    out << emit_report(report, ReportFormat::json);

    if (!params.report_dir.empty()) {
        std::filesystem::create_directories(params.report_dir);
        MetricsReport full = report;
        full.timestamp = detail::utc_timestamp();
        full.stage_seconds = clock.seconds;
        std::ofstream(params.report_dir / "report.json")
            << emit_report(full, ReportFormat::json);
        std::ofstream(params.report_dir / "report.md")
            << emit_report(full, ReportFormat::markdown_table);
    }

    BenchResult result;
    result.report = report;
    result.exit_code =
        params.threshold && report.grounding.overall.rate() < *params.threshold ? 1 : 0;
    return result;
}

} // namespace groundkit
