#pragma once

#include "groundkit/backend.hpp"
#include "groundkit/decomposer.hpp"
#include "groundkit/error.hpp"
#include "groundkit/evalharness.hpp"
#include "groundkit/http_backend.hpp"
#include "groundkit/resampler.hpp"
#include "groundkit/rewards.hpp"

#include <nlohmann/json.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <string>

namespace groundkit {

struct GlobalConfig {
    RewardConfig reward;
    ResampleConfig resample;
    TilingConfig tiling;
    BackendConfig backend;

    std::string backend_kind = "http";          // http | scripted | oracle
    std::string scorer_kind = "http_yes_logprob"; // http_yes_logprob | intersect_oracle | constant
    std::filesystem::path scripted_dir;           // response table for the scripted backend
    OracleNoise noise;                            // oracle backend noise
    double constant_score = 0.0;

    bool normalized_coords = false;
    std::uint64_t seed = 0;
    int max_concurrency = 4;   // worker-pool budget across records and tiles
};

inline void validate(GlobalConfig const & cfg) {
    validate(cfg.reward);
    validate(cfg.resample);
    validate(cfg.tiling);
    if (cfg.backend_kind == "http")
        validate(cfg.backend);
    else if (cfg.backend_kind != "scripted" && cfg.backend_kind != "oracle")
        throw ConfigError("unknown backend kind: " + cfg.backend_kind);
    if (cfg.scorer_kind != "http_yes_logprob" && cfg.scorer_kind != "intersect_oracle" &&
        cfg.scorer_kind != "constant")
        throw ConfigError("unknown scorer kind: " + cfg.scorer_kind);
    if (cfg.scorer_kind == "http_yes_logprob" && cfg.backend_kind != "http")
        validate(cfg.backend);   // the scorer alone still needs a valid endpoint
    if (cfg.max_concurrency < 1)
        throw ConfigError("max_concurrency must be >= 1");
}

// ---------------------------------------------------------------------------
// Strict JSON schema (unknown keys rejected)

namespace detail {

inline void reject_unknown(nlohmann::json const & j, std::string const & where,
                           std::initializer_list<char const *> known) {
    if (!j.is_object())
        throw ConfigError(where + ": expected a JSON object");
    for (auto const & [key, value] : j.items()) {
        (void)value;
        bool ok = false;
        for (auto const * k : known)
            if (key == k)
                ok = true;
        if (!ok)
            throw ConfigError(where + ": unknown key '" + key + "'");
    }
}

template <typename T>
inline void maybe(nlohmann::json const & j, char const * key, T & out) {
    if (j.contains(key))
        out = j.at(key).get<T>();
}

} // namespace detail

inline LengthUnit length_unit_from_string(std::string const & s) {
    if (s == "characters")
        return LengthUnit::characters;
    if (s == "whitespace_tokens")
        return LengthUnit::whitespace_tokens;
    throw ConfigError("unknown length_unit: " + s);
}

inline std::string to_string(LengthUnit u) {
    return u == LengthUnit::characters ? "characters" : "whitespace_tokens";
}

inline GlobalConfig parse_global_config(nlohmann::json const & j) {
    detail::reject_unknown(j, "config",
                           {"reward", "resample", "tiling", "backend", "scorer", "pipeline"});
    GlobalConfig cfg;

    if (j.contains("reward")) {
        auto const & r = j.at("reward");
        detail::reject_unknown(r, "reward",
                               {"l_min", "l_ideal_start", "l_ideal_end", "l_max", "r_bonus",
                                "length_unit"});
        detail::maybe(r, "l_min", cfg.reward.l_min);
        detail::maybe(r, "l_ideal_start", cfg.reward.l_ideal_start);
        detail::maybe(r, "l_ideal_end", cfg.reward.l_ideal_end);
        detail::maybe(r, "l_max", cfg.reward.l_max);
        detail::maybe(r, "r_bonus", cfg.reward.r_bonus);
        if (r.contains("length_unit"))
            cfg.reward.length_unit =
                length_unit_from_string(r.at("length_unit").get<std::string>());
    }
    if (j.contains("resample")) {
        auto const & r = j.at("resample");
        detail::reject_unknown(r, "resample", {"scaling_factor", "max_attempts"});
        detail::maybe(r, "scaling_factor", cfg.resample.scaling_factor);
        detail::maybe(r, "max_attempts", cfg.resample.max_attempts);
    }
    if (j.contains("tiling")) {
        auto const & t = j.at("tiling");
        detail::reject_unknown(t, "tiling", {"tile_scale", "overlap_frac", "element_frac"});
        detail::maybe(t, "tile_scale", cfg.tiling.tile_scale);
        detail::maybe(t, "overlap_frac", cfg.tiling.overlap_frac);
        detail::maybe(t, "element_frac", cfg.tiling.element_frac);
    }
    if (j.contains("backend")) {
        auto const & b = j.at("backend");
        detail::reject_unknown(b, "backend",
                               {"kind", "endpoint_url", "model_name", "api_key_env",
                                "request_timeout", "max_concurrency", "max_tokens",
                                "top_logprobs", "grounding_prompt_template",
                                "selection_prompt_template", "retry", "scripted_dir", "noise"});
        detail::maybe(b, "kind", cfg.backend_kind);
        detail::maybe(b, "endpoint_url", cfg.backend.endpoint_url);
        detail::maybe(b, "model_name", cfg.backend.model_name);
        detail::maybe(b, "api_key_env", cfg.backend.api_key_env);
        detail::maybe(b, "request_timeout", cfg.backend.request_timeout);
        detail::maybe(b, "max_concurrency", cfg.backend.max_concurrency);
        detail::maybe(b, "max_tokens", cfg.backend.max_tokens);
        detail::maybe(b, "top_logprobs", cfg.backend.top_logprobs);
        detail::maybe(b, "grounding_prompt_template", cfg.backend.grounding_prompt_template);
        detail::maybe(b, "selection_prompt_template", cfg.backend.selection_prompt_template);
        if (b.contains("retry")) {
            auto const & r = b.at("retry");
            detail::reject_unknown(r, "backend.retry", {"max_retries", "backoff_base"});
            detail::maybe(r, "max_retries", cfg.backend.retry.max_retries);
            detail::maybe(r, "backoff_base", cfg.backend.retry.backoff_base);
        }
        if (b.contains("scripted_dir"))
            cfg.scripted_dir = b.at("scripted_dir").get<std::string>();
        if (b.contains("noise")) {
            auto const & n = b.at("noise");
            detail::reject_unknown(n, "backend.noise", {"kind", "magnitude", "coeff"});
            if (n.contains("kind"))
                cfg.noise.kind = noise_kind_from_string(n.at("kind").get<std::string>());
            detail::maybe(n, "magnitude", cfg.noise.magnitude);
            detail::maybe(n, "coeff", cfg.noise.coeff);
        }
    }
    if (j.contains("scorer")) {
        auto const & s = j.at("scorer");
        detail::reject_unknown(s, "scorer", {"kind", "constant_value"});
        detail::maybe(s, "kind", cfg.scorer_kind);
        detail::maybe(s, "constant_value", cfg.constant_score);
    }
    if (j.contains("pipeline")) {
        auto const & p = j.at("pipeline");
        detail::reject_unknown(p, "pipeline", {"normalized_coords", "seed", "max_concurrency"});
        detail::maybe(p, "normalized_coords", cfg.normalized_coords);
        detail::maybe(p, "seed", cfg.seed);
        detail::maybe(p, "max_concurrency", cfg.max_concurrency);
    }
    return cfg;
}

inline GlobalConfig load_global_config(std::filesystem::path const & path) {
    std::ifstream in(path);
    if (!in)
        throw ConfigError("cannot open config file: " + path.string());
    nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
    if (j.is_discarded())
        throw ConfigError("config file is not valid JSON: " + path.string());
    return parse_global_config(j);
}

inline std::string noise_kind_to_string(NoiseKind k) {
    switch (k) {
    case NoiseKind::none: return "none";
    case NoiseKind::uniform: return "uniform";
    case NoiseKind::peripheral: return "peripheral";
    }
    return "none";
}

/// Canonical serialization of the effective config (echoed into reports).
inline nlohmann::json config_to_json(GlobalConfig const & cfg) {
    return {
        {"reward",
         {{"l_min", cfg.reward.l_min},
          {"l_ideal_start", cfg.reward.l_ideal_start},
          {"l_ideal_end", cfg.reward.l_ideal_end},
          {"l_max", cfg.reward.l_max},
          {"r_bonus", cfg.reward.r_bonus},
          {"length_unit", to_string(cfg.reward.length_unit)}}},
        {"resample",
         {{"scaling_factor", cfg.resample.scaling_factor},
          {"max_attempts", cfg.resample.max_attempts}}},
        {"tiling",
         {{"tile_scale", cfg.tiling.tile_scale},
          {"overlap_frac", cfg.tiling.overlap_frac},
          {"element_frac", cfg.tiling.element_frac}}},
        {"backend",
         {{"kind", cfg.backend_kind},
          {"endpoint_url", cfg.backend.endpoint_url},
          {"model_name", cfg.backend.model_name},
          {"api_key_env", cfg.backend.api_key_env},
          {"request_timeout", cfg.backend.request_timeout},
          {"max_concurrency", cfg.backend.max_concurrency},
          {"max_tokens", cfg.backend.max_tokens},
          {"top_logprobs", cfg.backend.top_logprobs},
          {"grounding_prompt_template", cfg.backend.grounding_prompt_template},
          {"selection_prompt_template", cfg.backend.selection_prompt_template},
          {"retry",
           {{"max_retries", cfg.backend.retry.max_retries},
            {"backoff_base", cfg.backend.retry.backoff_base}}},
          {"scripted_dir", cfg.scripted_dir.string()},
          {"noise",
           {{"kind", noise_kind_to_string(cfg.noise.kind)},
            {"magnitude", cfg.noise.magnitude},
            {"coeff", cfg.noise.coeff}}}}},
        {"scorer", {{"kind", cfg.scorer_kind}, {"constant_value", cfg.constant_score}}},
        {"pipeline",
         {{"normalized_coords", cfg.normalized_coords},
          {"seed", cfg.seed},
          {"max_concurrency", cfg.max_concurrency}}},
    };
}

inline std::string config_hash(GlobalConfig const & cfg) {
    char buf[19];
    std::snprintf(buf, sizeof(buf), "%016llx",
                  static_cast<unsigned long long>(fnv1a64(config_to_json(cfg).dump())));
    return buf;
}

inline PipelineOptions pipeline_options(GlobalConfig const & cfg, std::string record_id) {
    PipelineOptions opts;
    opts.record_id = std::move(record_id);
    opts.seed = cfg.seed;
    opts.grounding_prompt_template = cfg.backend.grounding_prompt_template;
    opts.selection_prompt_template = cfg.backend.selection_prompt_template;
    opts.normalized_coords = cfg.normalized_coords;
    opts.max_concurrency = cfg.max_concurrency;
    return opts;
}

// ---------------------------------------------------------------------------
// Backend construction

/// Scripted fixture table: a directory of <16-hex-digit-key>.json files,
/// each {"response": "..."}; an optional default.json supplies a fallback.
inline ScriptedBackend load_scripted_dir(std::filesystem::path const & dir) {
    if (!std::filesystem::is_directory(dir))
        throw ConfigError("scripted_dir is not a directory: " + dir.string());
    ScriptedBackend backend;
    for (auto const & entry : std::filesystem::directory_iterator(dir)) {
        if (!entry.is_regular_file() || entry.path().extension() != ".json")
            continue;
        std::ifstream in(entry.path());
        nlohmann::json j = nlohmann::json::parse(in, nullptr, false);
        if (j.is_discarded() || !j.contains("response") || !j["response"].is_string())
            throw DataError("bad scripted fixture: " + entry.path().string());
        auto const stem = entry.path().stem().string();
        if (stem == "default") {
            backend.set_fallback(j["response"].get<std::string>());
            continue;
        }
        backend.script_key(std::stoull(stem, nullptr, 16), j["response"].get<std::string>());
    }
    return backend;
}

struct BackendBundle {
    std::shared_ptr<HttpChatClient> client;   // shared by backend and scorer when http
    std::unique_ptr<GroundingBackend> backend;
    std::unique_ptr<SelectionScorer> scorer;
};

/// Builds the configured backend + scorer pair. Oracle variants take their
/// ground truth from the dataset; requesting one without a dataset is a
/// configuration error.
inline BackendBundle make_backend_bundle(GlobalConfig const & cfg,
                                         GroundingDataset const * dataset = nullptr) {
    BackendBundle bundle;
    auto need_client = [&]() -> std::shared_ptr<HttpChatClient> {
        if (!bundle.client)
            bundle.client = std::make_shared<HttpChatClient>(cfg.backend);
        return bundle.client;
    };

    if (cfg.backend_kind == "http") {
        bundle.backend = std::make_unique<HttpBackend>(need_client());
    } else if (cfg.backend_kind == "scripted") {
        bundle.backend = std::make_unique<ScriptedBackend>(load_scripted_dir(cfg.scripted_dir));
    } else if (cfg.backend_kind == "oracle") {
        if (!dataset)
            throw ConfigError("oracle backend requires a records file for ground truth");
        auto oracle = std::make_unique<OracleBackend>(cfg.noise);
        for (auto const & r : dataset->records)
            oracle->add_truth(r.id, r.bbox);
        bundle.backend = std::move(oracle);
    } else {
        throw ConfigError("unknown backend kind: " + cfg.backend_kind);
    }

    if (cfg.scorer_kind == "http_yes_logprob") {
        bundle.scorer = std::make_unique<HttpYesScorer>(need_client());
    } else if (cfg.scorer_kind == "intersect_oracle") {
        if (!dataset)
            throw ConfigError("intersect_oracle scorer requires a records file");
        auto scorer = std::make_unique<IntersectOracleScorer>();
        for (auto const & r : dataset->records)
            scorer->add_truth(r.id, r.bbox);
        bundle.scorer = std::move(scorer);
    } else if (cfg.scorer_kind == "constant") {
        bundle.scorer = std::make_unique<ConstantScorer>(cfg.constant_score);
    } else {
        throw ConfigError("unknown scorer kind: " + cfg.scorer_kind);
    }
    return bundle;
}

} // namespace groundkit
