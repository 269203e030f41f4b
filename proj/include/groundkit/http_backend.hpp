#pragma once

#include "groundkit/backend.hpp"
#include "groundkit/error.hpp"
#include "groundkit/raster.hpp"

#include <httplib.h>
#include <nlohmann/json.hpp>

#include <cctype>
#include <chrono>
#include <condition_variable>
#include <cstdlib>
#include <memory>
#include <mutex>
#include <optional>
#include <regex>
#include <string>
#include <thread>
#include <utility>

namespace groundkit {

struct RetryPolicy {
    int max_retries = 2;          // retries after the first attempt
    double backoff_base = 0.25;   // seconds; doubles per retry
};

struct BackendConfig {
    std::string endpoint_url;     // full chat-completions URL, plain http
    std::string model_name = "local-model";
    std::string api_key_env;      // env var holding the key; may be empty
    double request_timeout = 30.0;
    int max_concurrency = 4;
    int max_tokens = 128;
    int top_logprobs = 5;
    std::string grounding_prompt_template =
        "Locate the UI element for this instruction and answer with "
        "click(x, y) in pixels of the given image.\nInstruction: {instruction}";
    std::string selection_prompt_template =
        "Does this image show the UI element matching the instruction? "
        "Answer Yes or No.\nInstruction: {instruction}";
    RetryPolicy retry;
};

struct ParsedUrl {
    std::string host;
    int port = 80;
    std::string path = "/";
};

inline ParsedUrl parse_http_url(std::string const & url) {
    static std::regex const re(R"(^(https?)://([^/:]+)(?::([0-9]+))?(/.*)?$)");
    std::smatch m;
    if (!std::regex_match(url, m, re))
        throw ConfigError("invalid endpoint_url: " + url);
    if (m[1].str() == "https")
        throw ConfigError("https endpoints are not supported; use a plain http URL");
    ParsedUrl out;
    out.host = m[2].str();
    if (m[3].matched)
        out.port = std::stoi(m[3].str());
    if (m[4].matched && !m[4].str().empty())
        out.path = m[4].str();
    return out;
}

inline void validate(BackendConfig const & cfg) {
    parse_http_url(cfg.endpoint_url);
    if (cfg.max_concurrency < 1)
        throw ConfigError("backend: max_concurrency must be >= 1");
    if (!(cfg.request_timeout > 0.0))
        throw ConfigError("backend: request_timeout must be positive");
    if (cfg.max_tokens < 1)
        throw ConfigError("backend: max_tokens must be >= 1");
    if (cfg.top_logprobs < 1)
        throw ConfigError("backend: top_logprobs must be >= 1");
    if (cfg.retry.max_retries < 0 || cfg.retry.backoff_base < 0.0)
        throw ConfigError("backend: invalid retry policy");
    for (auto const * tmpl : {&cfg.grounding_prompt_template, &cfg.selection_prompt_template})
        if (tmpl->find("{instruction}") == std::string::npos)
            throw ConfigError("backend: prompt template lacks {instruction} placeholder");
}

inline std::string render_prompt(std::string const & tmpl, std::string const & instruction) {
    std::string out = tmpl;
    static std::string const key = "{instruction}";
    for (std::size_t pos = out.find(key); pos != std::string::npos;
         pos = out.find(key, pos + instruction.size()))
        out.replace(pos, key.size(), instruction);
    return out;
}

// ---------------------------------------------------------------------------
// base64 / data URIs

inline std::string base64_encode(std::vector<std::uint8_t> const & data) {
    static char const * tbl =
        "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
    std::string out;
    out.reserve((data.size() + 2) / 3 * 4);
    std::size_t i = 0;
    for (; i + 3 <= data.size(); i += 3) {
        std::uint32_t const v = (data[i] << 16) | (data[i + 1] << 8) | data[i + 2];
        out.push_back(tbl[(v >> 18) & 63]);
        out.push_back(tbl[(v >> 12) & 63]);
        out.push_back(tbl[(v >> 6) & 63]);
        out.push_back(tbl[v & 63]);
    }
    if (i + 1 == data.size()) {
        std::uint32_t const v = data[i] << 16;
        out.push_back(tbl[(v >> 18) & 63]);
        out.push_back(tbl[(v >> 12) & 63]);
        out += "==";
    } else if (i + 2 == data.size()) {
        std::uint32_t const v = (data[i] << 16) | (data[i + 1] << 8);
        out.push_back(tbl[(v >> 18) & 63]);
        out.push_back(tbl[(v >> 12) & 63]);
        out.push_back(tbl[(v >> 6) & 63]);
        out.push_back('=');
    }
    return out;
}

inline std::vector<std::uint8_t> base64_decode(std::string_view text) {
    auto val = [](char c) -> int {
        if (c >= 'A' && c <= 'Z') return c - 'A';
        if (c >= 'a' && c <= 'z') return c - 'a' + 26;
        if (c >= '0' && c <= '9') return c - '0' + 52;
        if (c == '+') return 62;
        if (c == '/') return 63;
        return -1;
    };
    std::vector<std::uint8_t> out;
    int acc = 0, bits = 0;
    for (char c : text) {
        if (c == '=' || c == '\n' || c == '\r')
            continue;
        int const v = val(c);
        if (v < 0)
            throw DataError("base64: invalid character");
        acc = (acc << 6) | v;
        bits += 6;
        if (bits >= 8) {
            bits -= 8;
            out.push_back(static_cast<std::uint8_t>((acc >> bits) & 0xff));
        }
    }
    return out;
}

inline std::string png_data_uri(RasterImage const & image) {
    return "data:image/png;base64," + base64_encode(encode_png(image));
}

// ---------------------------------------------------------------------------
// Concurrency limiter shared by all HTTP calls of one backend config

class ConcurrencyLimiter {
public:
    explicit ConcurrencyLimiter(int limit) : limit_(limit) {}

    class Permit {
    public:
        explicit Permit(ConcurrencyLimiter & l) : l_(l) {
            std::unique_lock lk(l_.m_);
            l_.cv_.wait(lk, [&] { return l_.in_flight_ < l_.limit_; });
            ++l_.in_flight_;
        }
        ~Permit() {
            {
                std::lock_guard lk(l_.m_);
                --l_.in_flight_;
            }
            l_.cv_.notify_one();
        }
        Permit(Permit const &) = delete;
        Permit & operator=(Permit const &) = delete;

    private:
        ConcurrencyLimiter & l_;
    };

private:
    int const limit_;
    int in_flight_ = 0;
    std::mutex m_;
    std::condition_variable cv_;
    friend class Permit;
};

// ---------------------------------------------------------------------------
// HTTP chat-completions client

namespace detail {

inline bool token_is_affirmative(std::string_view token) {
    std::size_t i = 0;
    while (i < token.size() && std::isspace(static_cast<unsigned char>(token[i])))
        ++i;
    static std::string_view const yes = "yes";
    if (token.size() - i < yes.size())
        return false;
    for (std::size_t k = 0; k < yes.size(); ++k)
        if (std::tolower(static_cast<unsigned char>(token[i + k])) != yes[k])
            return false;
    return true;
}

} // namespace detail

class HttpChatClient {
public:
    explicit HttpChatClient(BackendConfig cfg)
        : cfg_(std::move(cfg)),
          url_(parse_http_url(cfg_.endpoint_url)),
          limiter_(std::make_shared<ConcurrencyLimiter>(cfg_.max_concurrency)) {
        validate(cfg_);
    }

    BackendConfig const & config() const { return cfg_; }

    /// One chat request: prompt + PNG image, optional logprob capture.
    /// Returns the raw response JSON after transport/status/shape checks.
    nlohmann::json complete(RasterImage const & image, std::string const & prompt,
                            bool want_logprobs) const {
        nlohmann::json request = {
            {"model", cfg_.model_name},
            {"messages",
             {{{"role", "user"},
               {"content",
                {{{"type", "text"}, {"text", prompt}},
                 {{"type", "image_url"},
                  {"image_url", {{"url", png_data_uri(image)}}}}}}}}},
            {"max_tokens", cfg_.max_tokens},
        };
        if (want_logprobs) {
            request["logprobs"] = true;
            request["top_logprobs"] = cfg_.top_logprobs;
        }
        std::string const body = request.dump();

        int attempts = 0;
        for (;;) {
            ++attempts;
            {
                ConcurrencyLimiter::Permit permit(*limiter_);
                httplib::Client client(url_.host, url_.port);
                set_timeouts(client);
                if (!cfg_.api_key_env.empty())
                    if (char const * key = std::getenv(cfg_.api_key_env.c_str()))
                        client.set_bearer_token_auth(key);

                auto res = client.Post(url_.path, body, "application/json");
                if (res && res->status >= 200 && res->status < 300) {
                    nlohmann::json parsed = nlohmann::json::parse(res->body, nullptr, false);
                    if (parsed.is_discarded() || !parsed.contains("choices") ||
                        !parsed["choices"].is_array() || parsed["choices"].empty())
                        throw TransportError("malformed response body", res->status,
                                             /*retryable=*/false, attempts);
                    return parsed;
                }
                bool const retryable = !res || res->status >= 500;
                int const status = res ? res->status : 0;
                if (!retryable || attempts > cfg_.retry.max_retries) {
                    std::string const what =
                        res ? "http status " + std::to_string(status)
                            : "transport failure: " + httplib::to_string(res.error());
                    throw TransportError(what, status, retryable, attempts);
                }
            }
            auto const delay = cfg_.retry.backoff_base * static_cast<double>(1 << (attempts - 1));
            std::this_thread::sleep_for(std::chrono::duration<double>(delay));
        }
    }

    std::string assistant_text(nlohmann::json const & response, int attempts = 1) const {
        auto const & choice = response["choices"][0];
        if (!choice.contains("message") || !choice["message"].contains("content") ||
            !choice["message"]["content"].is_string())
            throw TransportError("response lacks message content", 200, false, attempts);
        return choice["message"]["content"].get<std::string>();
    }

private:
    void set_timeouts(httplib::Client & client) const {
        auto const sec = static_cast<time_t>(cfg_.request_timeout);
        auto const usec = static_cast<time_t>((cfg_.request_timeout - static_cast<double>(sec)) * 1e6);
        client.set_connection_timeout(sec, usec);
        client.set_read_timeout(sec, usec);
        client.set_write_timeout(sec, usec);
    }

    BackendConfig cfg_;
    ParsedUrl url_;
    std::shared_ptr<ConcurrencyLimiter> limiter_;
};

class HttpBackend : public GroundingBackend {
public:
    explicit HttpBackend(std::shared_ptr<HttpChatClient> client) : client_(std::move(client)) {}
    explicit HttpBackend(BackendConfig cfg)
        : client_(std::make_shared<HttpChatClient>(std::move(cfg))) {}

    std::string ground(RasterImage const & image, BackendRequest const & req) override {
        auto const response = client_->complete(image, req.prompt, /*want_logprobs=*/false);
        return client_->assistant_text(response);
    }

    std::string name() const override { return "http_chat"; }

    std::shared_ptr<HttpChatClient> client() const { return client_; }

private:
    std::shared_ptr<HttpChatClient> client_;
};

/// Log-probability of the affirmative first token, nullopt when no
/// affirmative token appears among the returned alternatives.
class HttpYesScorer : public SelectionScorer {
public:
    explicit HttpYesScorer(std::shared_ptr<HttpChatClient> client) : client_(std::move(client)) {}
    explicit HttpYesScorer(BackendConfig cfg)
        : client_(std::make_shared<HttpChatClient>(std::move(cfg))) {}

    std::optional<double> score(RasterImage const & element_image,
                                BackendRequest const & req) override {
        auto const response = client_->complete(element_image, req.prompt, /*want_logprobs=*/true);
        auto const & choice = response["choices"][0];
        if (!choice.contains("logprobs") || !choice["logprobs"].contains("content") ||
            !choice["logprobs"]["content"].is_array() || choice["logprobs"]["content"].empty())
            return std::nullopt;
        auto const & first = choice["logprobs"]["content"][0];
        if (!first.contains("top_logprobs") || !first["top_logprobs"].is_array())
            return std::nullopt;
        std::optional<double> best;
        for (auto const & alt : first["top_logprobs"]) {
            if (!alt.contains("token") || !alt.contains("logprob"))
                continue;
            if (!detail::token_is_affirmative(alt["token"].get<std::string>()))
                continue;
            double const lp = alt["logprob"].get<double>();
            if (!best || lp > *best)
                best = lp;
        }
        return best;
    }

    std::string name() const override { return "http_yes_logprob"; }

private:
    std::shared_ptr<HttpChatClient> client_;
};

} // namespace groundkit
