#include "fairicl/external_client.hpp"

#include <httplib.h>
#include <nlohmann/json.hpp>

#include <chrono>
#include <cstdlib>
#include <stdexcept>
#include <thread>

namespace fairicl::infer {

void ExternalClientConfig::validate() const {
    if (endpoint.empty()) throw std::runtime_error("external client: endpoint required");
    if (max_tokens < 1) throw std::runtime_error("external client: max_tokens must be >= 1");
    if (max_retries < 0) throw std::runtime_error("external client: max_retries must be >= 0");
    if (max_inflight < 1) throw std::runtime_error("external client: max_inflight must be >= 1");
}

CompletionClient::CompletionClient(ExternalClientConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    std::string rest = cfg_.endpoint;
    const std::string scheme = "http://";
    if (rest.rfind(scheme, 0) != 0)
        throw std::runtime_error("external client: only http:// endpoints are supported, got " +
                                 cfg_.endpoint);
    rest = rest.substr(scheme.size());
    const std::size_t slash = rest.find('/');
    const std::string authority = slash == std::string::npos ? rest : rest.substr(0, slash);
    path_ = slash == std::string::npos ? "/" : rest.substr(slash);
    const std::size_t colon = authority.find(':');
    if (colon == std::string::npos) {
        host_ = authority;
        port_ = 80;
    } else {
        host_ = authority.substr(0, colon);
        port_ = std::stoi(authority.substr(colon + 1));
    }
    if (host_.empty()) throw std::runtime_error("external client: endpoint has no host");
}

CompletionResult CompletionClient::complete(const std::string& prompt) const {
    nlohmann::json body;
    body["model"] = cfg_.model;
    body["prompt"] = prompt;
    body["max_tokens"] = cfg_.max_tokens;
    body["temperature"] = 0;  // greedy by contract
    const std::string payload = body.dump();

    std::string bearer;
    if (!cfg_.auth_env.empty()) {
        if (const char* tok = std::getenv(cfg_.auth_env.c_str()); tok != nullptr && *tok != '\0')
            bearer = tok;
    }

    CompletionResult result;
    for (int attempt = 0; attempt <= cfg_.max_retries; ++attempt) {
        result.attempts = attempt + 1;
        if (attempt > 0) {
            const int delay = cfg_.backoff_base_ms << (attempt - 1);
            std::this_thread::sleep_for(std::chrono::milliseconds(delay));
        }
        httplib::Client client(host_, port_);
        client.set_connection_timeout(0, cfg_.timeout_ms * 1000);
        client.set_read_timeout(cfg_.timeout_ms / 1000, (cfg_.timeout_ms % 1000) * 1000);
        httplib::Headers headers;
        if (!bearer.empty()) headers.emplace("Authorization", "Bearer " + bearer);

        auto res = client.Post(path_, headers, payload, "application/json");
        if (!res) {
            result.error = "connection error: " + httplib::to_string(res.error());
            continue;  // transient
        }
        result.http_status = res->status;
        if (res->status == 429 || res->status >= 500) {
            result.error = "http " + std::to_string(res->status);
            continue;  // transient
        }
        if (res->status != 200) {
            result.error = "http " + std::to_string(res->status);
            return result;
        }
        try {
            const auto json = nlohmann::json::parse(res->body);
            const auto& choices = json.at("choices");
            if (!choices.is_array() || choices.empty())
                throw std::runtime_error("choices missing or empty");
            result.text = choices.at(0).at("text").get<std::string>();
            result.ok = true;
            return result;
        } catch (const std::exception& e) {
            result.ok = false;
            result.error = std::string("protocol error: malformed response: ") + e.what();
            return result;  // not transient
        }
    }
    result.error = "retries exhausted: " + result.error;
    return result;
}

} // namespace fairicl::infer
