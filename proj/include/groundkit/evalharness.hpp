#pragma once

#include "groundkit/decomposer.hpp"
#include "groundkit/error.hpp"
#include "groundkit/geometry.hpp"
#include "groundkit/raster.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace groundkit {

// ---------------------------------------------------------------------------
// Grounding datasets

enum class UiType { text, icon };

inline std::string to_string(UiType t) { return t == UiType::text ? "text" : "icon"; }

inline UiType ui_type_from_string(std::string const & s) {
    if (s == "text")
        return UiType::text;
    if (s == "icon")
        return UiType::icon;
    throw DataError("unknown ui_type: " + s);
}

struct GroundingRecord {
    std::string id;
    std::filesystem::path image_path;
    std::string instruction;
    BBox bbox;
    UiType ui_type = UiType::text;
    std::string group;
    std::string platform;
    Size image_size{0, 0};
};

struct LoadIssue {
    int line = 0;
    std::string reason;
};

struct GroundingDataset {
    std::vector<GroundingRecord> records;
    std::vector<LoadIssue> issues;

    GroundingRecord const & by_id(std::string const & id) const {
        for (auto const & r : records)
            if (r.id == id)
                return r;
        throw DataError("unknown record id: " + id);
    }
};

namespace detail {

inline BBox bbox_from_json(nlohmann::json const & j) {
    if (!j.is_array() || j.size() != 4)
        throw DataError("bbox must be a 4-element array [x1,y1,x2,y2]");
    BBox b{j[0].get<int>(), j[1].get<int>(), j[2].get<int>(), j[3].get<int>()};
    if (b.x1 > b.x2 || b.y1 > b.y2)
        throw DataError("bbox corners out of order");
    return b;
}

} // namespace detail

/// JSONL loader. Malformed lines become issues; a file with zero valid
/// records is a hard error. Image paths resolve relative to the dataset
/// file. Records may carry explicit image_w/image_h; otherwise the PNG
/// header is probed for the bbox-in-bounds check.
inline GroundingDataset load_grounding_dataset(std::filesystem::path const & path) {
    std::ifstream in(path);
    if (!in)
        throw DataError("cannot open dataset: " + path.string());
    auto const base = path.parent_path();

    GroundingDataset out;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty())
            continue;
        try {
            auto const j = nlohmann::json::parse(line);
            GroundingRecord r;
            r.id = j.at("id").get<std::string>();
            r.image_path = base / j.at("image").get<std::string>();
            r.instruction = j.at("instruction").get<std::string>();
            r.bbox = detail::bbox_from_json(j.at("bbox"));
            r.ui_type = ui_type_from_string(j.value("ui_type", "text"));
            r.group = j.value("group", "all");
            r.platform = j.value("platform", "");
            if (j.contains("image_w") && j.contains("image_h"))
                r.image_size = Size{j.at("image_w").get<int>(), j.at("image_h").get<int>()};
            else
                r.image_size = read_png_size(r.image_path);
            if (r.image_size.w <= 0 || r.image_size.h <= 0)
                throw DataError("non-positive image dimensions");
            if (r.bbox.x1 < 0 || r.bbox.y1 < 0 || r.bbox.x2 >= r.image_size.w ||
                r.bbox.y2 >= r.image_size.h)
                throw DataError("bbox exceeds image dimensions");
            out.records.push_back(std::move(r));
        } catch (std::exception const & e) {
            out.issues.push_back(LoadIssue{line_no, e.what()});
        }
    }
    if (out.records.empty())
        throw DataError("dataset has no valid records: " + path.string());
    return out;
}

// ---------------------------------------------------------------------------
// Grounding metrics

struct CellStats {
    int total = 0;
    int hits = 0;

    double rate() const { return total == 0 ? 0.0 : static_cast<double>(hits) / total; }
};

struct GroundingStats {
    CellStats overall;
    // group -> ui_type name -> stats
    std::map<std::string, std::map<std::string, CellStats>> cells;
};

/// Success = prediction inside the ground-truth bbox (membership, not radius).
inline GroundingStats
grounding_accuracy(std::vector<std::pair<std::string, Point>> const & predictions,
                   GroundingDataset const & dataset) {
    GroundingStats stats;
    for (auto const & [id, point] : predictions) {
        auto const & rec = dataset.by_id(id);
        bool const hit = contains(rec.bbox, point);
        ++stats.overall.total;
        stats.overall.hits += hit ? 1 : 0;
        auto & cell = stats.cells[rec.group][to_string(rec.ui_type)];
        ++cell.total;
        cell.hits += hit ? 1 : 0;
    }
    return stats;
}

/// Fraction of records with at least one candidate inside the bbox;
/// an empty candidate set counts as a failure, not an error.
inline double pass_at_4(std::vector<std::pair<std::string, CandidateSet>> const & sets,
                        GroundingDataset const & dataset) {
    if (sets.empty())
        return 0.0;
    int hits = 0;
    for (auto const & [id, set] : sets) {
        auto const & rec = dataset.by_id(id);
        for (auto const & c : set.candidates)
            if (contains(rec.bbox, c.global_point)) {
                ++hits;
                break;
            }
    }
    return static_cast<double>(hits) / static_cast<double>(sets.size());
}

// ---------------------------------------------------------------------------
// Agent-step metrics

enum class ActionType { click, scroll, input_text, open_app, navigate, wait, done };

inline std::string to_string(ActionType t) {
    switch (t) {
    case ActionType::click: return "click";
    case ActionType::scroll: return "scroll";
    case ActionType::input_text: return "input_text";
    case ActionType::open_app: return "open_app";
    case ActionType::navigate: return "navigate";
    case ActionType::wait: return "wait";
    case ActionType::done: return "done";
    }
    return "unknown";
}

inline ActionType action_type_from_string(std::string const & s) {
    for (auto const t : {ActionType::click, ActionType::scroll, ActionType::input_text,
                         ActionType::open_app, ActionType::navigate, ActionType::wait,
                         ActionType::done})
        if (to_string(t) == s)
            return t;
    throw DataError("unknown action type: " + s);
}

struct ActionSpec {
    ActionType action_type = ActionType::click;
    std::optional<Point> point;          // click
    std::optional<std::string> direction; // scroll
    std::optional<std::string> text;      // input_text
    std::optional<std::string> app;       // open_app
    std::optional<std::string> target;    // navigate
};

inline ActionSpec action_from_json(nlohmann::json const & j) {
    ActionSpec a;
    a.action_type = action_type_from_string(j.at("type").get<std::string>());
    if (j.contains("x") && j.contains("y"))
        a.point = Point{j.at("x").get<int>(), j.at("y").get<int>()};
    if (j.contains("direction"))
        a.direction = j.at("direction").get<std::string>();
    if (j.contains("text"))
        a.text = j.at("text").get<std::string>();
    if (j.contains("app"))
        a.app = j.at("app").get<std::string>();
    if (j.contains("target"))
        a.target = j.at("target").get<std::string>();
    return a;
}

struct AgentStepRecord {
    std::string id;
    std::filesystem::path image_path;
    std::string instruction;
    std::vector<std::string> history;
    ActionSpec gold_action;
};

inline std::vector<AgentStepRecord> load_agent_dataset(std::filesystem::path const & path) {
    std::ifstream in(path);
    if (!in)
        throw DataError("cannot open agent dataset: " + path.string());
    std::vector<AgentStepRecord> out;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty())
            continue;
        try {
            auto const j = nlohmann::json::parse(line);
            AgentStepRecord r;
            r.id = j.at("id").get<std::string>();
            if (j.contains("image"))
                r.image_path = path.parent_path() / j.at("image").get<std::string>();
            r.instruction = j.value("instruction", "");
            if (j.contains("history"))
                for (auto const & h : j.at("history"))
                    r.history.push_back(h.get<std::string>());
            r.gold_action = action_from_json(j.at("gold"));
            out.push_back(std::move(r));
        } catch (std::exception const & e) {
            throw DataError("agent dataset line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    if (out.empty())
        throw DataError("agent dataset has no records: " + path.string());
    return out;
}

struct AgentMetrics {
    double type_acc = 0.0;
    double gr_acc = 0.0;   // over steps whose gold action carries coordinates
    double sr_acc = 0.0;
    int steps = 0;
    int gr_steps = 0;
};

namespace detail {

inline bool coords_close(Point pred, Point gold, Size screen) {
    double const dx = pred.x - gold.x;
    double const dy = pred.y - gold.y;
    // boundary-inclusive: exactly 14% of the screen width counts as success
    return std::sqrt(dx * dx + dy * dy) <= 0.14 * screen.w;
}

inline bool args_match(ActionSpec const & pred, ActionSpec const & gold, Size screen) {
    if (gold.point) {
        if (!pred.point || !coords_close(*pred.point, *gold.point, screen))
            return false;
    }
    auto text_eq = [](std::optional<std::string> const & p,
                      std::optional<std::string> const & g) {
        return !g || (p && trim(*p) == trim(*g));
    };
    return text_eq(pred.direction, gold.direction) && text_eq(pred.text, gold.text) &&
           text_eq(pred.app, gold.app) && text_eq(pred.target, gold.target);
}

} // namespace detail

/// Type = exact action-type match; GR = predicted coordinates within 14% of
/// the screen width (Euclidean, inclusive) over coordinate-carrying gold
/// steps; SR = type and every gold argument correct.
inline AgentMetrics agent_metrics(std::vector<ActionSpec> const & predicted,
                                  std::vector<AgentStepRecord> const & gold, Size screen) {
    if (predicted.size() != gold.size())
        throw Error("agent_metrics: predicted/gold lists are misaligned");
    if (gold.empty())
        throw Error("agent_metrics: empty input");
    AgentMetrics m;
    m.steps = static_cast<int>(gold.size());
    int type_hits = 0, gr_hits = 0, sr_hits = 0;
    for (std::size_t i = 0; i < gold.size(); ++i) {
        ActionSpec const & p = predicted[i];
        ActionSpec const & g = gold[i].gold_action;
        bool const type_ok = p.action_type == g.action_type;
        type_hits += type_ok ? 1 : 0;
        if (g.point) {
            ++m.gr_steps;
            gr_hits += (p.point && detail::coords_close(*p.point, *g.point, screen)) ? 1 : 0;
        }
        sr_hits += (type_ok && detail::args_match(p, g, screen)) ? 1 : 0;
    }
    m.type_acc = static_cast<double>(type_hits) / m.steps;
    m.gr_acc = m.gr_steps == 0 ? 0.0 : static_cast<double>(gr_hits) / m.gr_steps;
    m.sr_acc = static_cast<double>(sr_hits) / m.steps;
    return m;
}

// ---------------------------------------------------------------------------
// Reports

struct MetricsReport {
    GroundingStats grounding;
    std::optional<double> pass4;
    std::optional<AgentMetrics> agent;
    int failed_records = 0;

    std::string mode;            // direct | decomposed
    std::string backend_name;
    std::string config_hash;
    // Populated only on explicit request so default reports stay
    // byte-identical across runs.
    std::optional<std::string> timestamp;
    std::optional<std::map<std::string, double>> stage_seconds;
};

namespace detail {

inline std::string fmt_rate(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4f", v);
    return buf;
}

} // namespace detail

inline nlohmann::json report_to_json(MetricsReport const & r) {
    nlohmann::json cells = nlohmann::json::object();
    for (auto const & [group, by_type] : r.grounding.cells) {
        nlohmann::json g = nlohmann::json::object();
        for (auto const & [ui, cell] : by_type)
            g[ui] = {{"total", cell.total}, {"hits", cell.hits}, {"accuracy", cell.rate()}};
        cells[group] = std::move(g);
    }
    nlohmann::json j = {
        {"accuracy", r.grounding.overall.rate()},
        {"hits", r.grounding.overall.hits},
        {"total", r.grounding.overall.total},
        {"failed_records", r.failed_records},
        {"cells", std::move(cells)},
        {"mode", r.mode},
        {"backend", r.backend_name},
        {"config_hash", r.config_hash},
    };
    if (r.pass4)
        j["pass_at_4"] = *r.pass4;
    if (r.agent)
        j["agent"] = {{"type_acc", r.agent->type_acc},
                      {"gr_acc", r.agent->gr_acc},
                      {"sr_acc", r.agent->sr_acc},
                      {"steps", r.agent->steps},
                      {"gr_steps", r.agent->gr_steps}};
    if (r.timestamp)
        j["timestamp"] = *r.timestamp;
    if (r.stage_seconds)
        j["stage_seconds"] = *r.stage_seconds;
    return j;
}

enum class ReportFormat { json, markdown_table };

/// Deterministic serialization; the markdown table mirrors the benchmark
/// layout: one column per (category, ui-type) plus the average.
inline std::string emit_report(MetricsReport const & r, ReportFormat format) {
    if (format == ReportFormat::json)
        return report_to_json(r).dump(2) + "\n";

    std::string out;
    out += "# Grounding Report\n\n";
    out += "| Metric | Value |\n|---|---|\n";
    out += "| accuracy | " + detail::fmt_rate(r.grounding.overall.rate()) + " |\n";
    if (r.pass4)
        out += "| pass@4 | " + detail::fmt_rate(*r.pass4) + " |\n";
    out += "| records | " + std::to_string(r.grounding.overall.total) + " |\n";
    out += "| failed records | " + std::to_string(r.failed_records) + " |\n";
    out += "| mode | " + (r.mode.empty() ? "-" : r.mode) + " |\n";
    out += "| backend | " + (r.backend_name.empty() ? "-" : r.backend_name) + " |\n";
    out += "| config | " + (r.config_hash.empty() ? "-" : r.config_hash) + " |\n";

    if (!r.grounding.cells.empty()) {
        std::string header = "| ";
        std::string rule = "|---";
        std::string row = "| accuracy ";
        for (auto const & [group, by_type] : r.grounding.cells) {
            (void)by_type;
            for (char const * ui : {"text", "icon"}) {
                header += "| " + group + " " + ui + " ";
                rule += "|---";
            }
        }
        header += "| Avg |";
        rule += "|---|";
        for (auto const & [group, by_type] : r.grounding.cells) {
            for (char const * ui : {"text", "icon"}) {
                auto const it = by_type.find(ui);
                row += (it == by_type.end() || it->second.total == 0)
                           ? std::string{"| - "}
                           : "| " + detail::fmt_rate(it->second.rate()) + " ";
            }
        }
        row += "| " + detail::fmt_rate(r.grounding.overall.rate()) + " |";
        out += "\n" + header + "\n" + rule + "\n" + row + "\n";
    }

    if (r.agent) {
        out += "\n| Type | GR | SR |\n|---|---|---|\n";
        out += "| " + detail::fmt_rate(r.agent->type_acc) + " | " +
               detail::fmt_rate(r.agent->gr_acc) + " | " + detail::fmt_rate(r.agent->sr_acc) +
               " |\n";
    }
    if (r.timestamp)
        out += "\nGenerated: " + *r.timestamp + "\n";
    if (r.stage_seconds) {
        out += "\n| Stage | Seconds |\n|---|---|\n";
        for (auto const & [stage, secs] : *r.stage_seconds)
            out += "| " + stage + " | " + detail::fmt_rate(secs) + " |\n";
    }
    return out;
}

} // namespace groundkit
