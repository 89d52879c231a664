#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

namespace anchorlab {

struct GenerationParams {
    double temperature = 0.7;
    double top_p = 0.9;
    double repetition_penalty = 1.2;
    int max_tokens = 100;
    /// Endpoints that reject `repetition_penalty` can have it dropped (a warning is logged).
    bool send_repetition_penalty = true;
    /// Passed through as `seed` when set.
    std::optional<std::uint64_t> seed;

    nlohmann::json to_json() const;
};

struct EndpointConfig {
    /// Full URL of the chat-completions route, e.g. http://host:8000/v1/chat/completions.
    std::string url;
    std::string model = "llama-2-7b-chat";
    std::string api_key;
    double timeout_seconds = 60.0;
    std::size_t max_retries = 3;
    double backoff_seconds = 0.5;

    /// Reads ANCHORLAB_LLM_URL and ANCHORLAB_LLM_KEY; keeps the other fields.
    static EndpointConfig from_env(EndpointConfig base);
    static EndpointConfig from_env() { return from_env(EndpointConfig()); }
};

struct ChatResponse {
    std::string content;
    std::string raw;
};

class ChatClient {
  public:
    virtual ~ChatClient() = default;
    /// Sends one user message; throws RuntimeFailure after exhausting retries.
    virtual ChatResponse complete(const std::string& prompt, const GenerationParams& params) = 0;
};

nlohmann::json chat_request_body(const std::string& model, const std::string& prompt, const GenerationParams& params);
/// `choices[0].message.content` of an OpenAI-compatible response.
std::string extract_chat_content(const nlohmann::json& response);

struct ParsedUrl {
    std::string scheme_host_port;
    std::string path;
};
ParsedUrl parse_url(const std::string& url, const std::string& default_path);

/// OpenAI-compatible chat endpoint over HTTP(S) with exponential-backoff retries on
/// transport errors, 429 and 5xx.
class HttpChatClient : public ChatClient {
  public:
    explicit HttpChatClient(EndpointConfig config);
    ChatResponse complete(const std::string& prompt, const GenerationParams& params) override;

  private:
    EndpointConfig config_;
};

/// POSTs `body` as JSON with retries; returns the response body. Shared by the chat and
/// embedding clients.
std::string post_json_with_retries(const EndpointConfig& config, const std::string& default_path,
                                   const nlohmann::json& body);

} // namespace anchorlab
