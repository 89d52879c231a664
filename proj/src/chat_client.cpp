#include "anchorlab/chat_client.hpp"

#include <chrono>
#include <cstdlib>
#include <thread>

#include <httplib.h>
#include <spdlog/spdlog.h>

#include "anchorlab/common.hpp"

namespace anchorlab {

using nlohmann::json;

json GenerationParams::to_json() const {
    json out = {{"temperature", temperature},
                {"top_p", top_p},
                {"repetition_penalty", repetition_penalty},
                {"max_tokens", max_tokens},
                {"send_repetition_penalty", send_repetition_penalty}};
    if (seed) out["seed"] = *seed;
    return out;
}

EndpointConfig EndpointConfig::from_env(EndpointConfig base) {
    if (const char* url = std::getenv("ANCHORLAB_LLM_URL"); url != nullptr && *url != '\0') base.url = url;
    if (const char* key = std::getenv("ANCHORLAB_LLM_KEY"); key != nullptr && *key != '\0') base.api_key = key;
    return base;
}

json chat_request_body(const std::string& model, const std::string& prompt, const GenerationParams& params) {
    json body = {{"model", model},
                 {"messages", json::array({{{"role", "user"}, {"content", prompt}}})},
                 {"temperature", params.temperature},
                 {"top_p", params.top_p},
                 {"max_tokens", params.max_tokens}};
    if (params.send_repetition_penalty) {
        body["repetition_penalty"] = params.repetition_penalty;
    }
    if (params.seed) body["seed"] = *params.seed;
    return body;
}

std::string extract_chat_content(const json& response) {
    try {
        return response.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const json::exception& e) {
        throw RuntimeFailure(std::string("malformed chat response: ") + e.what());
    }
}

ParsedUrl parse_url(const std::string& url, const std::string& default_path) {
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) throw ConfigError("endpoint URL needs a scheme: '" + url + "'");
    const auto path_start = url.find('/', scheme_end + 3);
    if (path_start == std::string::npos) return {url, default_path};
    std::string path = url.substr(path_start);
    if (path == "/") path = default_path;
    return {url.substr(0, path_start), path};
}

std::string post_json_with_retries(const EndpointConfig& config, const std::string& default_path, const json& body) {
    if (config.url.empty()) {
        throw ConfigError("no endpoint URL configured (set ANCHORLAB_LLM_URL or the endpoint url option)");
    }
    const auto target = parse_url(config.url, default_path);
    httplib::Client client(target.scheme_host_port);
    const auto timeout = std::chrono::duration<double>(config.timeout_seconds);
    client.set_connection_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
    client.set_read_timeout(std::chrono::duration_cast<std::chrono::microseconds>(timeout));
    httplib::Headers headers;
    if (!config.api_key.empty()) headers.emplace("Authorization", "Bearer " + config.api_key);
    const std::string payload = body.dump();

    std::string last_error;
    for (std::size_t attempt = 0; attempt <= config.max_retries; ++attempt) {
        if (attempt > 0) {
            const double wait = config.backoff_seconds * static_cast<double>(1ULL << (attempt - 1));
            spdlog::warn("endpoint attempt {} failed ({}); retrying in {:.2f}s", attempt, last_error, wait);
            std::this_thread::sleep_for(std::chrono::duration<double>(wait));
        }
        auto result = client.Post(target.path, headers, payload, "application/json");
        if (!result) {
            last_error = "transport error: " + httplib::to_string(result.error());
            continue;
        }
        if (result->status == 200) return result->body;
        last_error = "HTTP " + std::to_string(result->status);
        if (result->status != 429 && result->status < 500) break;
    }
    throw RuntimeFailure("endpoint " + config.url + " failed after retries, last status: " + last_error);
}

HttpChatClient::HttpChatClient(EndpointConfig config) : config_(std::move(config)) {
    if (config_.url.empty()) {
        throw ConfigError("no endpoint URL configured (set ANCHORLAB_LLM_URL or the endpoint url option)");
    }
}

ChatResponse HttpChatClient::complete(const std::string& prompt, const GenerationParams& params) {
    if (!params.send_repetition_penalty) {
        spdlog::warn("repetition_penalty {} not sent: disabled for this endpoint", params.repetition_penalty);
    }
    const std::string raw =
        post_json_with_retries(config_, "/v1/chat/completions", chat_request_body(config_.model, prompt, params));
    json response;
    try {
        response = json::parse(raw);
    } catch (const json::exception& e) {
        throw RuntimeFailure(std::string("chat response is not JSON: ") + e.what());
    }
    return {extract_chat_content(response), raw};
}

} // namespace anchorlab
