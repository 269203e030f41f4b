#pragma once

#include "groundkit/error.hpp"
#include "groundkit/geometry.hpp"

#include <cmath>
#include <utility>
#include <vector>

namespace groundkit {

struct ResampleConfig {
    double scaling_factor = 0.6;   // per-attempt shrink ratio, in (0,1)
    int max_attempts = 4;
};

inline void validate(ResampleConfig const & cfg) {
    if (!(cfg.scaling_factor > 0.0 && cfg.scaling_factor < 1.0))
        throw ConfigError("resample: scaling_factor must lie in (0,1)");
    if (cfg.max_attempts < 1)
        throw ConfigError("resample: max_attempts must be >= 1");
}

/// A crop window together with the bbox expressed in its local frame.
struct WindowPlacement {
    CropWindow window;
    BBox translated_bbox;
};

struct ResampleResult {
    CropWindow window;
    BBox translated_bbox;   // bbox in the window's local frame
    int attempt_index = 1;  // 1-based
};

inline Size crop_size_for(Size image, double f) {
    return Size{static_cast<int>(std::floor(image.w * f)),
                static_cast<int>(std::floor(image.h * f))};
}

namespace detail {

/// Origin lattice along one axis: {0, step, 2*step, ...} with the final
/// origin clipped to the largest in-bounds value, emitted exactly once.
inline std::vector<int> origin_lattice(int image_extent, int crop_extent, int step) {
    std::vector<int> origins;
    int const last = image_extent - crop_extent;
    for (long long k = 0;; k += step) {
        int const o = static_cast<int>(std::min<long long>(k, last));
        origins.push_back(o);
        if (o == last)
            break;
    }
    return origins;
}

} // namespace detail

/// All scan windows of the given size that fully contain bbox, in scan order
/// (x-major outer loop), each paired with the bbox translated into its frame.
/// The stride equals crop minus bbox extent, so consecutive windows overlap
/// by exactly the bbox extent along each axis.
inline std::vector<WindowPlacement>
enumerate_valid_windows_at(Size image, BBox const & bbox, Size crop) {
    if (bbox.x1 < 0 || bbox.y1 < 0 || bbox.x2 > image.w || bbox.y2 > image.h ||
        bbox.x1 > bbox.x2 || bbox.y1 > bbox.y2)
        throw Error("enumerate_valid_windows: bbox outside image");
    if (bbox.width() >= crop.w || bbox.height() >= crop.h)
        throw BypassResampling("bbox extent meets or exceeds crop extent");

    int const step_x = crop.w - bbox.width();
    int const step_y = crop.h - bbox.height();
    auto const xs = detail::origin_lattice(image.w, crop.w, step_x);
    auto const ys = detail::origin_lattice(image.h, crop.h, step_y);

    std::vector<WindowPlacement> out;
    for (int x : xs)
        for (int y : ys) {
            CropWindow w{Point{x, y}, crop};
            if (bbox_contained_in_window(bbox, w))
                out.push_back(WindowPlacement{w, translate_bbox(bbox, w.origin)});
        }
    return out;
}

inline std::vector<WindowPlacement>
enumerate_valid_windows(Size image, BBox const & bbox, double f) {
    if (!(f > 0.0 && f < 1.0))
        throw ConfigError("enumerate_valid_windows: f must lie in (0,1)");
    return enumerate_valid_windows_at(image, bbox, crop_size_for(image, f));
}

/// Crop sizes for attempts 1..max_attempts, each attempt shrinking the
/// previous attempt's size by the scaling factor; the list stops at the
/// first size that can no longer contain the bbox.
inline std::vector<Size>
resample_attempt_schedule(Size image, BBox const & bbox, ResampleConfig const & cfg) {
    validate(cfg);
    std::vector<Size> sizes;
    Size prev = image;
    for (int k = 1; k <= cfg.max_attempts; ++k) {
        Size const crop = crop_size_for(prev, cfg.scaling_factor);
        if (bbox.width() >= crop.w || bbox.height() >= crop.h)
            break;
        sizes.push_back(crop);
        prev = crop;
    }
    return sizes;
}

/// First window in scan order at the given attempt's crop size.
inline ResampleResult
pick_resample(Size image, BBox const & bbox, ResampleConfig const & cfg, int attempt) {
    if (attempt < 1 || attempt > cfg.max_attempts)
        throw Error("pick_resample: attempt outside configured range");
    auto const schedule = resample_attempt_schedule(image, bbox, cfg);
    if (attempt > static_cast<int>(schedule.size()))
        throw BypassResampling("schedule truncated before requested attempt");
    auto const windows =
        enumerate_valid_windows_at(image, bbox, schedule[static_cast<std::size_t>(attempt - 1)]);
    if (windows.empty())
        throw BypassResampling("no window contains bbox at this crop size");
    return ResampleResult{windows.front().window, windows.front().translated_bbox, attempt};
}

} // namespace groundkit
