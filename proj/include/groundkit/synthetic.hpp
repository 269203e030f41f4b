#pragma once

#include "groundkit/backend.hpp"
#include "groundkit/decomposer.hpp"
#include "groundkit/evalharness.hpp"
#include "groundkit/raster.hpp"

#include <nlohmann/json.hpp>

#include <array>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>

namespace groundkit {

struct SyntheticSpec {
    int records = 200;
    std::uint64_t seed = 7;
    int min_dim = 360;
    int max_dim = 560;
    int min_box = 24;   // bbox extent bounds
    int max_box = 48;
    double center_jitter = 0.03;  // bbox center offset from its tile center,
                                  // as a fraction of the tile extent
};

/// Writes images/<id>.png plus records.jsonl under dir and returns the
/// records path. Every bbox is centered near the middle of one of the four
/// default-config tiles (with a small jitter), so each box fits entirely
/// inside at least one tile while its distance from the full-image center
/// stays large — the regime where decomposition helps.
inline std::filesystem::path write_synthetic_dataset(std::filesystem::path const & dir,
                                                     SyntheticSpec const & spec = {}) {
    namespace fs = std::filesystem;
    fs::create_directories(dir / "images");
    std::ofstream records(dir / "records.jsonl");
    if (!records)
        throw DataError("cannot write records: " + (dir / "records.jsonl").string());

    static std::array<std::array<std::uint8_t, 3>, 6> const palette{{
        {204, 92, 64}, {64, 128, 204}, {84, 168, 96},
        {168, 96, 188}, {220, 168, 56}, {96, 96, 112},
    }};
    static std::array<char const *, 3> const groups{"desktop", "web", "mobile"};
    TilingConfig const tiling;   // defaults: the geometry the bench will use

    for (int i = 0; i < spec.records; ++i) {
        std::mt19937_64 rng(fnv1a64_u64(static_cast<std::uint64_t>(i),
                                        fnv1a64_u64(spec.seed, fnv1a64("synthetic"))));
        std::uniform_int_distribution<int> dim_d(spec.min_dim, spec.max_dim);
        int const w = dim_d(rng);
        int const h = dim_d(rng);

        auto const tiles = plan_tiles(Size{w, h}, tiling);
        auto const & tile = tiles[static_cast<std::size_t>(
            std::uniform_int_distribution<int>(0, 3)(rng))];

        std::uniform_int_distribution<int> box_d(spec.min_box, spec.max_box);
        int const bw = box_d(rng);
        int const bh = box_d(rng);
        auto jitter = [&](int extent) {
            int const j = static_cast<int>(extent * spec.center_jitter);
            return std::uniform_int_distribution<int>(-j, j)(rng);
        };
        int const cx = tile.window.origin.x + tile.window.size.w / 2 + jitter(tile.window.size.w);
        int const cy = tile.window.origin.y + tile.window.size.h / 2 + jitter(tile.window.size.h);
        BBox const bbox{cx - bw / 2, cy - bh / 2, cx - bw / 2 + bw, cy - bh / 2 + bh};

        RasterImage img = RasterImage::solid(w, h, {236, 238, 241});
        // a few distractor stripes so the raster is not a constant field
        for (int band = 0; band < 4; ++band) {
            int const y0 = std::uniform_int_distribution<int>(0, h - 8)(rng);
            img.fill_rect(BBox{0, y0, w - 1, y0 + 5}, {214, 217, 222});
        }
        auto const color = palette[static_cast<std::size_t>(i) % palette.size()];
        img.fill_rect(BBox{bbox.x1 - 2, bbox.y1 - 2, bbox.x2 + 2, bbox.y2 + 2}, {40, 44, 52});
        img.fill_rect(bbox, color);

        std::string const id = "syn" + std::to_string(i);
        save_png(img, dir / "images" / (id + ".png"));

        nlohmann::json row = {
            {"id", id},
            {"image", "images/" + id + ".png"},
            {"instruction", "click the highlighted control " + std::to_string(i)},
            {"bbox", {bbox.x1, bbox.y1, bbox.x2, bbox.y2}},
            {"ui_type", i % 2 == 0 ? "text" : "icon"},
            {"group", groups[static_cast<std::size_t>(i) % groups.size()]},
            {"platform", "synthetic"},
            {"image_w", w},
            {"image_h", h},
        };
        records << row.dump() << "\n";
    }
    return dir / "records.jsonl";
}

} // namespace groundkit
