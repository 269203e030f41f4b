#pragma once

#include "groundkit/error.hpp"
#include "groundkit/geometry.hpp"

#include <cmath>
#include <numbers>
#include <string>
#include <string_view>

namespace groundkit {

enum class LengthUnit {
    characters,
    whitespace_tokens,
};

/// Breakpoints of the piecewise length reward plus the completeness bonus.
/// The published formulation leaves the actual values (and the unit of L)
/// open, so they all live here; the defaults are placeholders, not tuned
/// values.
struct RewardConfig {
    double l_min = 10.0;
    double l_ideal_start = 20.0;
    double l_ideal_end = 60.0;
    double l_max = 100.0;
    double r_bonus = 0.1;
    LengthUnit length_unit = LengthUnit::characters;
};

inline void validate(RewardConfig const & cfg) {
    if (!(cfg.l_min >= 0.0 && cfg.l_min < cfg.l_ideal_start &&
          cfg.l_ideal_start <= cfg.l_ideal_end && cfg.l_ideal_end < cfg.l_max))
        throw ConfigError("reward config requires 0 <= l_min < l_ideal_start <= "
                          "l_ideal_end < l_max");
    if (cfg.r_bonus < 0.0)
        throw ConfigError("reward config requires r_bonus >= 0");
}

inline double thought_length(std::string_view text, LengthUnit unit) {
    if (unit == LengthUnit::characters)
        return static_cast<double>(text.size());

    std::size_t tokens = 0;
    bool in_token = false;
    for (char c : text) {
        bool const ws = c == ' ' || c == '\t' || c == '\n' || c == '\r';
        if (!ws && !in_token)
            ++tokens;
        in_token = !ws;
    }
    return static_cast<double>(tokens);
}

/// The reasoning segment of a model response together with its length in the
/// configured unit. `length` is always derived from `text`, never stored
/// independently.
struct ThoughtText {
    std::string text;
    double length = 0.0;
};

inline ThoughtText make_thought(std::string text, LengthUnit unit) {
    double const len = thought_length(text, unit);
    return ThoughtText{std::move(text), len};
}

/// Continuous grounding reward: 1 + exp(-4 d^2) with d the normalized
/// Chebyshev distance to the box center when the point is inside the box,
/// 0 otherwise. Inside values lie in [1 + e^-4, 2]; iso-reward contours are
/// squares, matching rectangular UI targets.
inline double grounding_reward(Point p, BBox const & b) {
    if (!contains(b, p))
        return 0.0;
    double const d = chebyshev_norm_dist(p, b);
    return 1.0 + std::exp(-4.0 * d * d);
}

/// Piecewise-cosine length reward: 1 on the ideal band, smooth half-cosine
/// ramps on (l_min, l_ideal_start] and (l_ideal_end, l_max), 0 elsewhere.
/// Branch boundaries follow the formula's inequalities literally.
inline double length_reward(double L, RewardConfig const & cfg) {
    if (L > cfg.l_ideal_start && L <= cfg.l_ideal_end)
        return 1.0;
    if (L > cfg.l_min && L <= cfg.l_ideal_start)
        return 0.5 * (1.0 - std::cos(std::numbers::pi * (L - cfg.l_min) /
                                     (cfg.l_ideal_start - cfg.l_min)));
    if (L > cfg.l_ideal_end && L < cfg.l_max)
        return 0.5 * (1.0 + std::cos(std::numbers::pi * (L - cfg.l_ideal_end) /
                                     (cfg.l_max - cfg.l_ideal_end)));
    return 0.0;
}

/// A thought is syntactically complete when, after dropping trailing
/// whitespace and closing quotes/brackets, it ends in '.', '!' or '?'.
inline bool is_syntactically_complete(std::string_view text) {
    auto is_trailing = [](char c) {
        return c == ' ' || c == '\t' || c == '\n' || c == '\r' ||
               c == ')' || c == ']' || c == '}' || c == '\'' || c == '"';
    };
    std::size_t end = text.size();
    while (end > 0 && is_trailing(text[end - 1]))
        --end;
    if (end == 0)
        return false;
    char const last = text[end - 1];
    return last == '.' || last == '!' || last == '?';
}

inline bool is_syntactically_complete(ThoughtText const & t) {
    return is_syntactically_complete(std::string_view(t.text));
}

/// Composite thinking reward: gated on grounding success, then length reward
/// plus the completeness bonus.
inline double think_reward(ThoughtText const & t, double grounding_r,
                           RewardConfig const & cfg) {
    if (grounding_r <= 0.0)
        return 0.0;
    double r = length_reward(t.length, cfg);
    if (is_syntactically_complete(t))
        r += cfg.r_bonus;
    return r;
}

} // namespace groundkit
