#pragma once

#include <cstdint>
#include <string>

namespace fairicl::infer {

// Completions-style endpoint client. One request per query:
// POST {"model", "prompt", "max_tokens", "temperature": 0}; the answer text
// is read from choices[0].text. Bearer token comes from the environment
// variable named in auth_env, when set.
struct ExternalClientConfig {
    std::string endpoint = "http://127.0.0.1:8080/v1/completions";
    std::string model = "external";
    std::string auth_env;       // name of the env var holding the token
    int max_tokens = 4;
    int timeout_ms = 10000;
    int max_retries = 3;        // additional attempts after the first
    int backoff_base_ms = 250;  // doubles per retry
    unsigned max_inflight = 4;

    void validate() const;
};

struct CompletionResult {
    bool ok = false;
    std::string text;        // choices[0].text on success
    std::string error;       // failure description otherwise
    int http_status = 0;
    int attempts = 0;
};

class CompletionClient {
public:
    explicit CompletionClient(ExternalClientConfig cfg);

    // Sends the prompt byte-for-byte. Retries with exponential backoff on
    // connection errors, 5xx and 429; a malformed response body is a protocol
    // error and fails immediately.
    CompletionResult complete(const std::string& prompt) const;

    const ExternalClientConfig& config() const { return cfg_; }

private:
    ExternalClientConfig cfg_;
    std::string host_;
    int port_ = 80;
    std::string path_;
};

} // namespace fairicl::infer
