#pragma once

#include <chrono>
#include <condition_variable>
#include <cstdlib>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <json.hpp>

#include "icueval/errors.hpp"
#include "icueval/scenarios.hpp"
#include "icueval/scoring.hpp"
#include "icueval/text.hpp"

namespace icueval {

using json = nlohmann::json;

/// One chat-completion endpoint. The credential never lives in config, only
/// the name of the environment variable holding it; an empty name means the
/// endpoint needs none.
struct BackendConfig {
    std::string name;          // label used in reports; defaults to model_name
    std::string endpoint_url;  // e.g. http://host:port/v1/chat/completions
    std::string model_name;
    double temperature = 0.0;  // deterministic evaluation by default
    int max_tokens = 1024;
    double timeout_s = 30.0;
    std::string api_key_env;
    int max_retries = 3;
    int retry_base_ms = 250;
    int max_in_flight = 4;

    std::string label() const { return name.empty() ? model_name : name; }
};

/// Stable key for a request: hash of the canonical serialization of
/// everything that shapes the completion. Field order can never change the
/// digest because the JSON object serializes with sorted keys.
inline std::string request_digest(const std::string& model_name,
                                  const std::vector<ChatMessage>& messages, double temperature,
                                  int max_tokens) {
    json canonical;
    canonical["model"] = model_name;
    canonical["temperature"] = temperature;
    canonical["max_tokens"] = max_tokens;
    json msgs = json::array();
    for (const auto& m : messages) {
        msgs.push_back({{"role", role_name(m.role)}, {"content", m.content}});
    }
    canonical["messages"] = msgs;
    return "fnv1a64:" + to_hex(fnv1a64(canonical.dump()));
}

/// A completed exchange. Refusals are first-class outcomes, not errors, and
/// keep the response text verbatim.
struct Transcript {
    std::string request_digest;
    std::vector<ChatMessage> messages;
    std::string response_text;
    std::string backend;
    std::string timestamp_utc;
    bool refusal = false;
};

inline json transcript_to_json(const Transcript& t) {
    json msgs = json::array();
    for (const auto& m : t.messages) {
        msgs.push_back({{"role", role_name(m.role)}, {"content", m.content}});
    }
    return json{{"request_digest", t.request_digest}, {"messages", msgs},
                {"response_text", t.response_text},  {"backend", t.backend},
                {"timestamp_utc", t.timestamp_utc},  {"refusal", t.refusal}};
}

inline Transcript transcript_from_json(const json& j) {
    Transcript t;
    t.request_digest = j.at("request_digest").get<std::string>();
    for (const auto& m : j.at("messages")) {
        auto role = parse_role(m.at("role").get<std::string>());
        if (!role) throw Error(errc::malformed_row, "unknown chat role in transcript");
        t.messages.push_back(ChatMessage{*role, m.at("content").get<std::string>()});
    }
    t.response_text = j.at("response_text").get<std::string>();
    t.backend = j.at("backend").get<std::string>();
    t.timestamp_utc = j.at("timestamp_utc").get<std::string>();
    t.refusal = j.at("refusal").get<bool>();
    return t;
}

/// Append-only transcript log, one JSON object per line, keyed by request
/// digest. Reads are concurrent; appends serialize on a mutex. For repeated
/// digests the latest entry wins.
class ReplayStore {
public:
    ReplayStore() : write_mutex_(std::make_unique<std::mutex>()) {}

    static ReplayStore open(const std::string& path) {
        ReplayStore store;
        store.path_ = path;
        std::ifstream in(path);
        if (in) {
            std::string line;
            std::size_t lineno = 0;
            while (std::getline(in, line)) {
                ++lineno;
                if (trim(line).empty()) continue;
                try {
                    Transcript t = transcript_from_json(json::parse(line));
                    store.by_digest_[t.request_digest] = std::move(t);
                } catch (const std::exception& e) {
                    throw Error(errc::malformed_row, "replay store '" + path + "' line " +
                                                         std::to_string(lineno) + ": " + e.what());
                }
            }
        }
        return store;
    }

    std::optional<Transcript> lookup(const std::string& digest) const {
        auto it = by_digest_.find(digest);
        if (it == by_digest_.end()) return std::nullopt;
        return it->second;
    }

    void append(const Transcript& t) {
        std::lock_guard<std::mutex> lock(*write_mutex_);
        std::ofstream out(path_, std::ios::app | std::ios::binary);
        if (!out) throw Error(errc::io, "cannot append to replay store '" + path_ + "'");
        out << transcript_to_json(t).dump() << '\n';
        by_digest_[t.request_digest] = t;
    }

    std::size_t size() const { return by_digest_.size(); }
    const std::string& path() const { return path_; }

private:
    std::string path_;
    std::map<std::string, Transcript> by_digest_;
    std::unique_ptr<std::mutex> write_mutex_;
};

/// True when the text matches the refusal lexicon; responses flagged this
/// way are reported, never averaged into scores.
inline bool detect_refusal(std::string_view response_text,
                           const std::vector<std::string>& refusal_lexicon =
                               Lexicons::defaults().refusal) {
    std::string lower = to_lower(response_text);
    for (const auto& phrase : refusal_lexicon) {
        if (lower.find(to_lower(phrase)) != std::string::npos) return true;
    }
    return false;
}

enum class CompletionMode { live, record, replay };

inline std::optional<CompletionMode> parse_completion_mode(std::string_view s) {
    if (s == "live") return CompletionMode::live;
    if (s == "record") return CompletionMode::record;
    if (s == "replay") return CompletionMode::replay;
    return std::nullopt;
}

inline const char* completion_mode_name(CompletionMode m) {
    switch (m) {
        case CompletionMode::live: return "live";
        case CompletionMode::record: return "record";
        case CompletionMode::replay: return "replay";
    }
    return "?";
}

/// Endpoint shapes differ between providers; this seam turns a bundle into
/// a request body and digs the text back out of the response, leaving the
/// retry/replay machinery untouched.
class WireAdapter {
public:
    virtual ~WireAdapter() = default;
    virtual json build_request(const BackendConfig& config,
                               const std::vector<ChatMessage>& messages) const = 0;
    virtual std::string extract_text(const json& response) const = 0;
};

/// The widely used messages-array shape.
class OpenAiStyleAdapter : public WireAdapter {
public:
    json build_request(const BackendConfig& config,
                       const std::vector<ChatMessage>& messages) const override {
        json msgs = json::array();
        for (const auto& m : messages) {
            msgs.push_back({{"role", role_name(m.role)}, {"content", m.content}});
        }
        return json{{"model", config.model_name},
                    {"messages", msgs},
                    {"temperature", config.temperature},
                    {"max_tokens", config.max_tokens}};
    }

    std::string extract_text(const json& response) const override {
        if (response.contains("choices") && response["choices"].is_array() &&
            !response["choices"].empty()) {
            const auto& first = response["choices"][0];
            if (first.contains("message") && first["message"].contains("content")) {
                return first["message"]["content"].get<std::string>();
            }
            if (first.contains("text")) return first["text"].get<std::string>();
        }
        throw Error(errc::network, "response carries no completion text");
    }
};

namespace detail {

struct ParsedUrl {
    std::string base; // scheme://host[:port]
    std::string path;
};

inline ParsedUrl split_url(const std::string& url) {
    auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) {
        throw Error(errc::config_invalid, "endpoint_url '" + url + "' lacks a scheme");
    }
    auto path_start = url.find('/', scheme_end + 3);
    if (path_start == std::string::npos) return {url, "/"};
    return {url.substr(0, path_start), url.substr(path_start)};
}

/// Counting gate bounding concurrent live requests.
class InFlightGate {
public:
    explicit InFlightGate(int limit) : limit_(limit > 0 ? limit : 1) {}

    void acquire() {
        std::unique_lock<std::mutex> lock(mutex_);
        cv_.wait(lock, [&] { return in_flight_ < limit_; });
        ++in_flight_;
    }
    void release() {
        {
            std::lock_guard<std::mutex> lock(mutex_);
            --in_flight_;
        }
        cv_.notify_one();
    }

private:
    int limit_;
    int in_flight_ = 0;
    std::mutex mutex_;
    std::condition_variable cv_;
};

} // namespace detail

/// Chat-completion client with bounded retries and record/replay. In replay
/// mode no network object is ever constructed; stored transcripts come back
/// byte-identical.
class ChatClient {
public:
    explicit ChatClient(BackendConfig config,
                        std::vector<std::string> refusal_lexicon = Lexicons::defaults().refusal,
                        std::unique_ptr<WireAdapter> adapter = nullptr)
        : config_(std::move(config)),
          refusal_lexicon_(std::move(refusal_lexicon)),
          adapter_(adapter ? std::move(adapter) : std::make_unique<OpenAiStyleAdapter>()),
          gate_(config_.max_in_flight) {}

    const BackendConfig& config() const { return config_; }

    Transcript complete(const PromptBundle& bundle, CompletionMode mode, ReplayStore* store) {
        const std::string digest = request_digest(config_.model_name, bundle.messages,
                                                  config_.temperature, config_.max_tokens);
        if (mode == CompletionMode::replay) {
            if (!store) throw Error(errc::config_invalid, "replay mode needs a replay store");
            auto stored = store->lookup(digest);
            if (!stored) {
                throw Error(errc::replay_miss, "no transcript for digest " + digest +
                                                   " (stay " + std::to_string(bundle.stay_id.value) +
                                                   ", " + scenario_name(bundle.scenario) + ")");
            }
            return *stored;
        }
        if (mode == CompletionMode::record && !store) {
            throw Error(errc::config_invalid, "record mode needs a replay store");
        }

        Transcript transcript = dispatch_live(bundle, digest);
        if (mode == CompletionMode::record) store->append(transcript);
        return transcript;
    }

private:
    Transcript dispatch_live(const PromptBundle& bundle, const std::string& digest) {
        if (config_.endpoint_url.empty()) {
            throw Error(errc::config_invalid, "live backend needs an endpoint_url");
        }
        std::string api_key;
        if (!config_.api_key_env.empty()) {
            const char* value = std::getenv(config_.api_key_env.c_str());
            if (!value || !*value) {
                throw Error(errc::auth_missing,
                            "environment variable " + config_.api_key_env + " is not set");
            }
            api_key = value;
        }
        auto url = detail::split_url(config_.endpoint_url);
        const json request = adapter_->build_request(config_, bundle.messages);
        const std::string body = request.dump();

        gate_.acquire();
        struct Release {
            detail::InFlightGate& gate;
            ~Release() { gate.release(); }
        } release{gate_};

        std::string last_failure = "no attempt made";
        bool saw_rate_limit = false;
        for (int attempt = 0; attempt <= config_.max_retries; ++attempt) {
            if (attempt > 0) backoff(attempt);
            httplib::Client client(url.base);
            client.set_connection_timeout(std::chrono::milliseconds(
                static_cast<int>(config_.timeout_s * 1000)));
            client.set_read_timeout(std::chrono::milliseconds(
                static_cast<int>(config_.timeout_s * 1000)));
            httplib::Headers headers;
            if (!api_key.empty()) headers.emplace("Authorization", "Bearer " + api_key);
            auto result = client.Post(url.path, headers, body, "application/json");
            if (!result) {
                last_failure = "connection failure: " + httplib::to_string(result.error());
                continue;
            }
            if (result->status == 429) {
                saw_rate_limit = true;
                last_failure = "rate limited (429)";
                continue;
            }
            if (result->status >= 500) {
                last_failure = "server error (" + std::to_string(result->status) + ")";
                continue;
            }
            if (result->status != 200) {
                throw Error(errc::network, "endpoint returned status " +
                                               std::to_string(result->status) + ": " + result->body);
            }
            json response;
            try {
                response = json::parse(result->body);
            } catch (const std::exception& e) {
                throw Error(errc::network, std::string("unparseable response body: ") + e.what());
            }
            Transcript t;
            t.request_digest = digest;
            t.messages = bundle.messages;
            t.response_text = adapter_->extract_text(response);
            t.backend = config_.label();
            t.timestamp_utc = iso8601_utc_now();
            t.refusal = detect_refusal(t.response_text, refusal_lexicon_);
            return t;
        }
        if (saw_rate_limit) {
            throw Error(errc::rate_limited, "retries exhausted; last failure: " + last_failure);
        }
        throw Error(errc::network, "retries exhausted; last failure: " + last_failure);
    }

    void backoff(int attempt) {
        if (config_.retry_base_ms <= 0) return;
        std::uint64_t base = static_cast<std::uint64_t>(config_.retry_base_ms) << (attempt - 1);
        std::uint64_t jitter = bounded_uniform(jitter_rng_, base / 2 + 1);
        std::this_thread::sleep_for(std::chrono::milliseconds(base + jitter));
    }

    BackendConfig config_;
    std::vector<std::string> refusal_lexicon_;
    std::unique_ptr<WireAdapter> adapter_;
    detail::InFlightGate gate_;
    std::mt19937_64 jitter_rng_{std::random_device{}()};
};

} // namespace icueval
