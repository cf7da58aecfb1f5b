#include "molr/chat_client.hpp"

#include <chrono>
#include <cstdlib>
#include <thread>

#include "httplib.h"
#include "json.hpp"

namespace molr {

using json = nlohmann::json;

std::string ChatClient::complete_with_retries(const std::vector<ChatMessage>& messages,
                                              int attempts, int base_delay_ms) {
    if (attempts < 1) throw std::invalid_argument("complete_with_retries: attempts must be >= 1");
    int delay = base_delay_ms;
    for (int i = 0;; ++i) {
        try {
            return complete(messages);
        } catch (const ChatTransportError&) {
            if (i + 1 >= attempts) throw;
            std::this_thread::sleep_for(std::chrono::milliseconds(delay));
            delay *= 2;
        }
    }
}

HttpChatClient::HttpChatClient(std::string host, int port, std::string path, std::string model,
                               std::string api_key_env)
    : host_(std::move(host)), path_(std::move(path)), model_(std::move(model)), port_(port) {
    if (const char* key = std::getenv(api_key_env.c_str())) api_key_ = key;
}

std::string HttpChatClient::complete(const std::vector<ChatMessage>& messages) {
    json body;
    body["model"] = model_;
    body["messages"] = json::array();
    for (const auto& m : messages)
        body["messages"].push_back({{"role", m.role}, {"content", m.content}});

    httplib::Client cli(host_, port_);
    cli.set_connection_timeout(10);
    cli.set_read_timeout(60);
    httplib::Headers headers;
    if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);
    auto res = cli.Post(path_, headers, body.dump(), "application/json");
    if (!res) throw ChatTransportError("chat request failed: no response from " + host_);
    if (res->status != 200)
        throw ChatTransportError("chat request failed: HTTP " + std::to_string(res->status));
    try {
        json reply = json::parse(res->body);
        return reply.at("choices").at(0).at("message").at("content").get<std::string>();
    } catch (const json::exception& e) {
        throw ChatTransportError(std::string("chat response malformed: ") + e.what());
    }
}

std::string MockChatClient::complete(const std::vector<ChatMessage>& messages) {
    calls_.push_back(messages);
    if (next_ >= responses_.size()) throw ChatTransportError("mock: response queue exhausted");
    std::string r = responses_[next_++];
    if (r == "<timeout>") throw ChatTransportError("mock: simulated timeout");
    return r;
}

} // namespace molr
