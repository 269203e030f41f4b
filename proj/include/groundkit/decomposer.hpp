#pragma once

#include "groundkit/backend.hpp"
#include "groundkit/error.hpp"
#include "groundkit/geometry.hpp"
#include "groundkit/http_backend.hpp"
#include "groundkit/raster.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <exception>
#include <optional>
#include <string>
#include <thread>
#include <vector>

namespace groundkit {

struct TilingConfig {
    double tile_scale = 0.6;     // sub-image extent as a fraction of the original
    double overlap_frac = 0.10;  // adjacent-tile overlap as a fraction of the original
    double element_frac = 0.14;  // element box extent as a fraction of the sub-image
};

inline void validate(TilingConfig const & cfg) {
    if (!(cfg.tile_scale > 0.0 && cfg.tile_scale <= 1.0))
        throw ConfigError("tiling: tile_scale must lie in (0,1]");
    if (!(cfg.overlap_frac >= 0.0 && cfg.overlap_frac < 1.0))
        throw ConfigError("tiling: overlap_frac must lie in [0,1)");
    if (!(cfg.element_frac > 0.0 && cfg.element_frac < 1.0))
        throw ConfigError("tiling: element_frac must lie in (0,1)");
    if (!(cfg.tile_scale > cfg.overlap_frac))
        throw ConfigError("tiling: tile_scale must exceed overlap_frac");
    if ((cfg.tile_scale - cfg.overlap_frac) + cfg.tile_scale < 1.0)
        throw ConfigError("tiling: tiles cannot cover the image (coverage gap)");
    if (cfg.tile_scale - cfg.overlap_frac >= 1.0)
        throw ConfigError("tiling: second tile origin would fall outside the image");
}

struct Tile {
    int index = 0;
    CropWindow window;   // original-image coordinates
};

namespace detail {

struct AxisSplit {
    int near_origin = 0;
    int near_extent = 0;
    int far_origin = 0;
    int far_extent = 0;
};

/// One axis of the 2x2 plan: near tile at 0 with the nominal extent, far
/// tile starting so the two overlap by exactly floor(dim * overlap_frac)
/// and running to the image edge.
inline AxisSplit split_axis(int dim, TilingConfig const & cfg) {
    int const nominal = static_cast<int>(std::floor(dim * cfg.tile_scale));
    int const overlap = static_cast<int>(std::floor(dim * cfg.overlap_frac));
    int far_origin = std::min(nominal - overlap, dim - 1);
    if (far_origin < 0)
        far_origin = 0;
    return AxisSplit{0, nominal, far_origin, dim - far_origin};
}

} // namespace detail

/// 2x2 overlapping tile plan; the union always covers the image.
inline std::vector<Tile> plan_tiles(Size image, TilingConfig const & cfg) {
    validate(cfg);
    if (image.w < 2 || image.h < 2)
        throw Error("plan_tiles: image must be at least 2x2");
    auto const ax = detail::split_axis(image.w, cfg);
    auto const ay = detail::split_axis(image.h, cfg);
    std::vector<Tile> tiles;
    tiles.reserve(4);
    int index = 0;
    for (auto const & [oy, ey] : {std::pair{ay.near_origin, ay.near_extent},
                                  std::pair{ay.far_origin, ay.far_extent}})
        for (auto const & [ox, ex] : {std::pair{ax.near_origin, ax.near_extent},
                                      std::pair{ax.far_origin, ax.far_extent}}) {
            tiles.push_back(Tile{index++, CropWindow{Point{ox, oy}, Size{ex, ey}}});
        }
    return tiles;
}

/// Element box centered on the predicted point, shifted (never shrunk)
/// to stay inside the tile.
inline CropWindow extract_element_window(Point local_point, Size tile, TilingConfig const & cfg) {
    int const ew = std::max(1, static_cast<int>(std::floor(tile.w * cfg.element_frac)));
    int const eh = std::max(1, static_cast<int>(std::floor(tile.h * cfg.element_frac)));
    int const ox = std::clamp(local_point.x - ew / 2, 0, tile.w - ew);
    int const oy = std::clamp(local_point.y - eh / 2, 0, tile.h - eh);
    return CropWindow{Point{ox, oy}, Size{ew, eh}};
}

struct Candidate {
    int tile_index = 0;
    Point local_point;              // tile coordinates
    Point global_point;             // original-image coordinates
    CropWindow element_window;      // tile coordinates
    std::optional<double> score;    // absent: unscored or scoring failed
    std::string raw_response;
};

struct Diagnostic {
    int tile_index = -1;
    std::string stage;
    std::string message;
};

struct CandidateSet {
    std::string instruction;
    std::vector<Candidate> candidates;
    std::optional<std::size_t> selected;
    bool degraded = false;          // selection fell back after scoring failures
    std::vector<Diagnostic> diagnostics;

    std::optional<Point> final_point() const {
        if (!selected)
            return std::nullopt;
        return candidates[*selected].global_point;
    }
};

struct PipelineOptions {
    std::string record_id;
    std::uint64_t seed = 0;
    std::string grounding_prompt_template = BackendConfig{}.grounding_prompt_template;
    std::string selection_prompt_template = BackendConfig{}.selection_prompt_template;
    bool normalized_coords = false;   // parse model points on a 0-1000 scale
    int max_concurrency = 1;          // tile/candidate fan-out bound
};

namespace detail {

/// Run fn(i) for i in [0, n) on at most `workers` threads; exceptions are
/// rethrown in the caller after all workers join.
template <typename Fn>
inline void run_indexed(int n, int workers, Fn && fn) {
    workers = std::max(1, std::min(workers, n));
    if (workers <= 1) {
        for (int i = 0; i < n; ++i)
            fn(i);
        return;
    }
    std::atomic<int> next{0};
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(workers));
    std::vector<std::thread> pool;
    pool.reserve(static_cast<std::size_t>(workers));
    for (int w = 0; w < workers; ++w)
        pool.emplace_back([&, w] {
            try {
                for (int i = next.fetch_add(1); i < n; i = next.fetch_add(1))
                    fn(i);
            } catch (...) {
                errors[static_cast<std::size_t>(w)] = std::current_exception();
            }
        });
    for (auto & t : pool)
        t.join();
    for (auto const & e : errors)
        if (e)
            std::rethrow_exception(e);
}

inline Point local_point_from_parse(Point parsed, Size tile, bool normalized) {
    Point p = parsed;
    if (normalized) {
        p.x = static_cast<int>(std::llround(parsed.x / 1000.0 * tile.w));
        p.y = static_cast<int>(std::llround(parsed.y / 1000.0 * tile.h));
    }
    p.x = std::clamp(p.x, 0, tile.w - 1);
    p.y = std::clamp(p.y, 0, tile.h - 1);
    return p;
}

} // namespace detail

/// Stage 2: independent grounding on each tile. Unparseable or failed tiles
/// yield diagnostics instead of candidates; a run where every tile failed at
/// the transport level is a pipeline error.
inline std::vector<Candidate>
generate_candidates(RasterImage const & image, std::string const & instruction,
                    std::vector<Tile> const & tiles, GroundingBackend & backend,
                    TilingConfig const & cfg, PipelineOptions const & opts,
                    std::vector<Diagnostic> * diagnostics = nullptr) {
    int const n = static_cast<int>(tiles.size());
    std::vector<std::optional<Candidate>> slots(static_cast<std::size_t>(n));
    std::vector<std::optional<Diagnostic>> diags(static_cast<std::size_t>(n));

    detail::run_indexed(n, opts.max_concurrency, [&](int i) {
        Tile const & tile = tiles[static_cast<std::size_t>(i)];
        RasterImage const crop = crop_raster(image, tile.window);
        BackendRequest req;
        req.instruction = instruction;
        req.prompt = render_prompt(opts.grounding_prompt_template, instruction);
        req.record_id = opts.record_id;
        req.source_window = tile.window;
        req.seed = opts.seed;

        std::string response;
        try {
            response = backend.ground(crop, req);
        } catch (TransportError const & e) {
            diags[static_cast<std::size_t>(i)] =
                Diagnostic{tile.index, "ground", std::string{"transport: "} + e.what()};
            return;
        } catch (DataError const & e) {
            diags[static_cast<std::size_t>(i)] =
                Diagnostic{tile.index, "ground", std::string{"backend: "} + e.what()};
            return;
        }
        auto const parsed = parse_point(response);
        if (!parsed) {
            diags[static_cast<std::size_t>(i)] =
                Diagnostic{tile.index, "parse", "no parseable point in: " + response};
            return;
        }
        Candidate c;
        c.tile_index = tile.index;
        c.local_point = detail::local_point_from_parse(*parsed, tile.window.size,
                                                       opts.normalized_coords);
        c.global_point = remap_point(c.local_point, tile.window.origin);
        c.element_window = extract_element_window(c.local_point, tile.window.size, cfg);
        c.raw_response = response;
        slots[static_cast<std::size_t>(i)] = std::move(c);
    });

    std::vector<Candidate> out;
    bool any_transport_failure = false;
    for (int i = 0; i < n; ++i) {
        if (slots[static_cast<std::size_t>(i)])
            out.push_back(std::move(*slots[static_cast<std::size_t>(i)]));
        if (diags[static_cast<std::size_t>(i)]) {
            if (diags[static_cast<std::size_t>(i)]->stage == "ground")
                any_transport_failure = true;
            if (diagnostics)
                diagnostics->push_back(std::move(*diags[static_cast<std::size_t>(i)]));
        }
    }
    if (out.empty() && any_transport_failure && n > 0)
        throw PipelineError("all tiles failed at the backend stage");
    return out;
}

/// Stage 3+4: score each candidate's element image and pick the argmax,
/// ties broken toward the lowest tile index. If every scoring fails, fall
/// back to the lowest-tile candidate and flag degraded mode.
inline CandidateSet
select_candidate(RasterImage const & image, std::vector<Tile> const & tiles,
                 std::vector<Candidate> candidates, std::string const & instruction,
                 SelectionScorer & scorer, PipelineOptions const & opts,
                 std::vector<Diagnostic> diagnostics = {}) {
    if (candidates.empty())
        throw PipelineError("select_candidate: no candidates");

    int const n = static_cast<int>(candidates.size());
    std::vector<std::optional<Diagnostic>> diags(static_cast<std::size_t>(n));
    detail::run_indexed(n, opts.max_concurrency, [&](int i) {
        Candidate & c = candidates[static_cast<std::size_t>(i)];
        Tile const & tile = tiles[static_cast<std::size_t>(c.tile_index)];
        CropWindow const global_window{
            remap_point(c.element_window.origin, tile.window.origin), c.element_window.size};
        RasterImage const element = crop_raster(image, global_window);

        BackendRequest req;
        req.instruction = instruction;
        req.prompt = render_prompt(opts.selection_prompt_template, instruction);
        req.record_id = opts.record_id;
        req.source_window = global_window;
        req.seed = opts.seed;
        try {
            c.score = scorer.score(element, req);
        } catch (TransportError const & e) {
            c.score = std::nullopt;
            diags[static_cast<std::size_t>(i)] =
                Diagnostic{c.tile_index, "score", std::string{"transport: "} + e.what()};
        }
    });
    for (auto & d : diags)
        if (d)
            diagnostics.push_back(std::move(*d));

    CandidateSet set;
    set.instruction = instruction;
    set.diagnostics = std::move(diagnostics);

    std::optional<std::size_t> best;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
        if (!candidates[i].score)
            continue;
        if (!best || *candidates[i].score > *candidates[*best].score)
            best = i;
    }
    if (!best) {
        best = 0;   // candidates are in tile order; head has the lowest index
        set.degraded = true;
        set.diagnostics.push_back(
            Diagnostic{candidates[0].tile_index, "select",
                       "all scorings failed; falling back to lowest tile index"});
    }
    set.candidates = std::move(candidates);
    set.selected = best;
    return set;
}

/// The full decomposed-grounding-with-selection pipeline.
inline CandidateSet
grounded_predict(RasterImage const & image, std::string const & instruction,
                 TilingConfig const & cfg, GroundingBackend & backend,
                 SelectionScorer & scorer, PipelineOptions const & opts = {}) {
    auto const tiles = plan_tiles(image.size(), cfg);
    std::vector<Diagnostic> diagnostics;
    auto candidates = generate_candidates(image, instruction, tiles, backend, cfg, opts,
                                          &diagnostics);
    if (candidates.empty()) {
        CandidateSet set;
        set.instruction = instruction;
        set.diagnostics = std::move(diagnostics);
        return set;
    }
    return select_candidate(image, tiles, std::move(candidates), instruction, scorer, opts,
                            std::move(diagnostics));
}

/// Baseline: one query over the whole image, no selection stage.
inline CandidateSet
direct_predict(RasterImage const & image, std::string const & instruction,
               TilingConfig const & cfg, GroundingBackend & backend,
               PipelineOptions const & opts = {}) {
    std::vector<Tile> const tiles{Tile{0, CropWindow{Point{0, 0}, image.size()}}};
    std::vector<Diagnostic> diagnostics;
    auto candidates = generate_candidates(image, instruction, tiles, backend, cfg, opts,
                                          &diagnostics);
    CandidateSet set;
    set.instruction = instruction;
    set.diagnostics = std::move(diagnostics);
    if (!candidates.empty()) {
        set.candidates = std::move(candidates);
        set.selected = 0;
    }
    return set;
}

// ---------------------------------------------------------------------------
// JSON diagnostics (nlohmann keeps object keys sorted -> deterministic bytes)

inline void to_json(nlohmann::json & j, Point const & p) { j = {{"x", p.x}, {"y", p.y}}; }

inline void to_json(nlohmann::json & j, CropWindow const & w) {
    j = {{"x", w.origin.x}, {"y", w.origin.y}, {"w", w.size.w}, {"h", w.size.h}};
}

inline void to_json(nlohmann::json & j, Candidate const & c) {
    j = {{"tile_index", c.tile_index},
         {"local_point", c.local_point},
         {"global_point", c.global_point},
         {"element_window", c.element_window},
         {"score", c.score ? nlohmann::json(*c.score) : nlohmann::json(nullptr)},
         {"raw_response", c.raw_response}};
}

inline void to_json(nlohmann::json & j, Diagnostic const & d) {
    j = {{"tile_index", d.tile_index}, {"stage", d.stage}, {"message", d.message}};
}

inline void to_json(nlohmann::json & j, CandidateSet const & s) {
    j = {{"instruction", s.instruction},
         {"candidates", s.candidates},
         {"selected", s.selected ? nlohmann::json(*s.selected) : nlohmann::json(nullptr)},
         {"degraded", s.degraded},
         {"diagnostics", s.diagnostics}};
    if (auto const p = s.final_point())
        j["final_point"] = *p;
    else
        j["final_point"] = nullptr;
}

} // namespace groundkit
