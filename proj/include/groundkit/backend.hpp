#pragma once

#include "groundkit/error.hpp"
#include "groundkit/geometry.hpp"
#include "groundkit/raster.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <regex>
#include <string>
#include <string_view>
#include <utility>

namespace groundkit {

// ---------------------------------------------------------------------------
// Hashing (request keys, deterministic seeds)

inline std::uint64_t fnv1a64(std::string_view s,
                             std::uint64_t h = 14695981039346656037ull) {
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

inline std::uint64_t fnv1a64_u64(std::uint64_t v, std::uint64_t h) {
    for (int i = 0; i < 8; ++i) {
        h ^= static_cast<unsigned char>(v >> (8 * i));
        h *= 1099511628211ull;
    }
    return h;
}

// ---------------------------------------------------------------------------
// Response-text parsing

namespace detail {

struct PointMatch {
    std::size_t pos;
    int priority;   // lower wins on position ties
    Point p;
};

inline int round_coord(std::string const & s) {
    return static_cast<int>(std::llround(std::stod(s)));
}

/// Earliest match of one pattern; captures two coordinate groups at
/// indices gx and gy.
inline std::optional<PointMatch> first_match(std::string const & text,
                                             std::regex const & re,
                                             int priority, int gx, int gy) {
    std::smatch m;
    if (!std::regex_search(text, m, re))
        return std::nullopt;
    return PointMatch{static_cast<std::size_t>(m.position(0)), priority,
                      Point{round_coord(m[gx].str()), round_coord(m[gy].str())}};
}

inline std::string const num_re = R"((-?[0-9]+(?:\.[0-9]+)?))";

inline std::regex const & re_json_xy() {
    static std::regex const re(
        R"(\{[^{}]*?"x"\s*:\s*)" + num_re + R"([^{}]*?"y"\s*:\s*)" + num_re + R"([^{}]*?\})");
    return re;
}
inline std::regex const & re_json_yx() {
    static std::regex const re(
        R"(\{[^{}]*?"y"\s*:\s*)" + num_re + R"([^{}]*?"x"\s*:\s*)" + num_re + R"([^{}]*?\})");
    return re;
}
inline std::regex const & re_call() {
    static std::regex const re(
        R"([A-Za-z_][A-Za-z_0-9]*\s*\(\s*(?:x\s*=\s*)?)" + num_re +
        R"(\s*,\s*(?:y\s*=\s*)?)" + num_re + R"(\s*\))");
    return re;
}
inline std::regex const & re_bare() {
    static std::regex const re(
        R"([(\[]\s*)" + num_re + R"(\s*,\s*)" + num_re + R"(\s*[)\]])");
    return re;
}

/// Earliest coordinate pair across all patterns; position first, then
/// pattern priority (JSON object, call form, bare pair). Leftmost-match
/// semantics guarantee that appending text never changes an existing parse.
inline std::optional<PointMatch> scan_point(std::string const & text) {
    std::optional<PointMatch> best;
    auto consider = [&](std::optional<PointMatch> m) {
        if (!m)
            return;
        if (!best || m->pos < best->pos ||
            (m->pos == best->pos && m->priority < best->priority))
            best = m;
    };
    consider(first_match(text, re_json_xy(), 0, 1, 2));
    { // y-before-x object: captures arrive swapped
        auto m = first_match(text, re_json_yx(), 0, 2, 1);
        consider(m);
    }
    consider(first_match(text, re_call(), 1, 1, 2));
    consider(first_match(text, re_bare(), 2, 1, 2));
    return best;
}

} // namespace detail

/// First coordinate pair in the response, or nullopt when none matches.
inline std::optional<Point> parse_point(std::string const & response_text) {
    auto const m = detail::scan_point(response_text);
    if (!m)
        return std::nullopt;
    return m->p;
}

inline std::string trim(std::string_view s) {
    auto const b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos)
        return {};
    auto const e = s.find_last_not_of(" \t\r\n");
    return std::string{s.substr(b, e - b + 1)};
}

struct SplitResponse {
    std::string thought;
    std::string answer;
};

/// Separate the reasoning segment from the actionable answer. Explicit
/// <think>…</think> delimiters win; an unclosed delimiter makes the whole
/// text thought; without delimiters the split falls at the first parseable
/// action.
inline SplitResponse split_think_answer(std::string const & response_text) {
    static std::string const open_tag = "<think>";
    static std::string const close_tag = "</think>";
    auto const open = response_text.find(open_tag);
    if (open != std::string::npos) {
        auto const body = open + open_tag.size();
        auto const close = response_text.find(close_tag, body);
        if (close == std::string::npos)
            return {trim(response_text), std::string{}};
        return {trim(response_text.substr(body, close - body)),
                trim(response_text.substr(close + close_tag.size()))};
    }
    auto const m = detail::scan_point(response_text);
    if (!m)
        return {trim(response_text), std::string{}};
    return {trim(response_text.substr(0, m->pos)), trim(response_text.substr(m->pos))};
}

// ---------------------------------------------------------------------------
// Backend interfaces

/// Everything a backend may need besides the pixels. HTTP backends use only
/// the prompt; deterministic test backends use the record identity and the
/// submitted window's place in the original image.
struct BackendRequest {
    std::string instruction;
    std::string prompt;          // fully rendered prompt text
    std::string record_id;
    CropWindow source_window;    // submitted image's window, original coords
    std::uint64_t seed = 0;
};

class GroundingBackend {
public:
    virtual ~GroundingBackend() = default;
    virtual std::string ground(RasterImage const & image, BackendRequest const & req) = 0;
    virtual std::string name() const = 0;
};

class SelectionScorer {
public:
    virtual ~SelectionScorer() = default;
    /// Affirmative-token score; nullopt signals scoring failure.
    virtual std::optional<double> score(RasterImage const & element_image,
                                        BackendRequest const & req) = 0;
    virtual std::string name() const = 0;
};

// ---------------------------------------------------------------------------
// Scripted backend (fixed response table keyed by request hash)

inline std::uint64_t request_key(BackendRequest const & req, Size image) {
    std::uint64_t h = fnv1a64(req.instruction);
    h = fnv1a64(req.record_id, h);
    h = fnv1a64_u64(static_cast<std::uint64_t>(req.source_window.origin.x), h);
    h = fnv1a64_u64(static_cast<std::uint64_t>(req.source_window.origin.y), h);
    h = fnv1a64_u64(static_cast<std::uint64_t>(req.source_window.size.w), h);
    h = fnv1a64_u64(static_cast<std::uint64_t>(req.source_window.size.h), h);
    h = fnv1a64_u64(static_cast<std::uint64_t>(image.w), h);
    h = fnv1a64_u64(static_cast<std::uint64_t>(image.h), h);
    return h;
}

class ScriptedBackend : public GroundingBackend {
public:
    ScriptedBackend() = default;

    void script(BackendRequest const & req, Size image, std::string response) {
        table_[request_key(req, image)] = std::move(response);
    }
    void script_key(std::uint64_t key, std::string response) {
        table_[key] = std::move(response);
    }
    void set_fallback(std::string response) { fallback_ = std::move(response); }

    std::string ground(RasterImage const & image, BackendRequest const & req) override {
        auto const it = table_.find(request_key(req, image.size()));
        if (it != table_.end())
            return it->second;
        if (fallback_)
            return *fallback_;
        throw DataError("scripted backend: no response for request key");
    }

    std::string name() const override { return "scripted"; }

    std::size_t size() const { return table_.size(); }

private:
    std::map<std::uint64_t, std::string> table_;
    std::optional<std::string> fallback_;
};

// ---------------------------------------------------------------------------
// Ground-truth oracle backend

enum class NoiseKind { none, uniform, peripheral };

inline NoiseKind noise_kind_from_string(std::string const & s) {
    if (s == "none")
        return NoiseKind::none;
    if (s == "uniform")
        return NoiseKind::uniform;
    if (s == "peripheral")
        return NoiseKind::peripheral;
    throw ConfigError("unknown noise kind: " + s);
}

struct OracleNoise {
    NoiseKind kind = NoiseKind::none;
    double magnitude = 0.0;   // uniform: max offset per axis, pixels
    double coeff = 0.0;       // peripheral: offset bound per unit of
                              // Chebyshev distance from the view center
};

/// Answers with the ground-truth bbox center whenever the bbox is fully
/// visible inside the submitted window, else with unactionable prose.
/// Optional noise perturbs the answer deterministically per
/// (seed, record, window).
class OracleBackend : public GroundingBackend {
public:
    OracleBackend() = default;
    explicit OracleBackend(OracleNoise noise) : noise_(noise) {}

    void add_truth(std::string id, BBox bbox) { truth_[std::move(id)] = bbox; }
    void set_noise(OracleNoise noise) { noise_ = noise; }

    std::string ground(RasterImage const & image, BackendRequest const & req) override {
        auto const it = truth_.find(req.record_id);
        if (it == truth_.end())
            throw DataError("oracle backend: unknown record id '" + req.record_id + "'");
        BBox const & bbox = it->second;
        if (!bbox_contained_in_window(bbox, req.source_window))
            return "The requested element is not visible in this view.";

        double const lx = bbox.center_x() - req.source_window.origin.x;
        double const ly = bbox.center_y() - req.source_window.origin.y;
        auto [dx, dy] = noise_offset(req, Point{image.width, image.height}, lx, ly);
        int const x = std::clamp(static_cast<int>(std::llround(lx + dx)), 0, image.width - 1);
        int const y = std::clamp(static_cast<int>(std::llround(ly + dy)), 0, image.height - 1);
        return "click(" + std::to_string(x) + ", " + std::to_string(y) + ")";
    }

    std::string name() const override { return "oracle"; }

private:
    std::pair<double, double> noise_offset(BackendRequest const & req, Point image_dims,
                                           double lx, double ly) const {
        if (noise_.kind == NoiseKind::none)
            return {0.0, 0.0};
        double bound = 0.0;
        if (noise_.kind == NoiseKind::uniform) {
            bound = noise_.magnitude;
        } else {
            double const cx = image_dims.x / 2.0;
            double const cy = image_dims.y / 2.0;
            bound = noise_.coeff * std::max(std::abs(lx - cx), std::abs(ly - cy));
        }
        if (bound <= 0.0)
            return {0.0, 0.0};
        std::uint64_t h = fnv1a64_u64(req.seed, fnv1a64(req.record_id));
        h = fnv1a64_u64(static_cast<std::uint64_t>(req.source_window.origin.x), h);
        h = fnv1a64_u64(static_cast<std::uint64_t>(req.source_window.origin.y), h);
        std::mt19937_64 rng(h);
        std::uniform_real_distribution<double> d(-bound, bound);
        double const dx = d(rng);
        double const dy = d(rng);
        return {dx, dy};
    }

    std::map<std::string, BBox> truth_;
    OracleNoise noise_;
};

// ---------------------------------------------------------------------------
// Oracle / constant scorers

/// +1 when the element window (original-image coordinates, carried in the
/// request) intersects the ground-truth bbox, else 0.
class IntersectOracleScorer : public SelectionScorer {
public:
    void add_truth(std::string id, BBox bbox) { truth_[std::move(id)] = bbox; }

    std::optional<double> score(RasterImage const &, BackendRequest const & req) override {
        auto const it = truth_.find(req.record_id);
        if (it == truth_.end())
            throw DataError("intersect oracle: unknown record id '" + req.record_id + "'");
        return windows_intersect(req.source_window, it->second) ? 1.0 : 0.0;
    }

    std::string name() const override { return "intersect_oracle"; }

private:
    std::map<std::string, BBox> truth_;
};

class ConstantScorer : public SelectionScorer {
public:
    explicit ConstantScorer(double value = 0.0) : value_(value) {}

    std::optional<double> score(RasterImage const &, BackendRequest const &) override {
        return value_;
    }

    std::string name() const override { return "constant"; }

private:
    double value_;
};

} // namespace groundkit
