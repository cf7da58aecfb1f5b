#pragma once
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace molr {

struct ChatMessage {
    std::string role;     // "system" | "user" | "assistant"
    std::string content;
};

struct ChatTransportError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Minimal chat-completion abstraction. complete() returns the assistant text
// or throws ChatTransportError; callers own retry policy via complete_with_retries.
class ChatClient {
public:
    virtual ~ChatClient() = default;
    virtual std::string complete(const std::vector<ChatMessage>& messages) = 0;

    // 3 attempts with exponential backoff (base_delay, 2x per retry);
    // rethrows the last transport error
    std::string complete_with_retries(const std::vector<ChatMessage>& messages,
                                      int attempts = 3, int base_delay_ms = 100);
};

// JSON chat-completions over HTTP. Credentials come from the environment
// variable named by api_key_env (never from config files).
class HttpChatClient : public ChatClient {
public:
    HttpChatClient(std::string host, int port, std::string path, std::string model,
                   std::string api_key_env = "MOLR_CHAT_API_KEY");
    std::string complete(const std::vector<ChatMessage>& messages) override;

private:
    std::string host_, path_, model_, api_key_;
    int port_;
};

// Offline scripted client for tests: pops responses in order; an empty queue
// or a "<timeout>" entry raises a transport error.
class MockChatClient : public ChatClient {
public:
    explicit MockChatClient(std::vector<std::string> responses = {})
        : responses_(std::move(responses)) {}

    void push(const std::string& response) { responses_.push_back(response); }
    std::string complete(const std::vector<ChatMessage>& messages) override;

    const std::vector<std::vector<ChatMessage>>& calls() const { return calls_; }

private:
    std::vector<std::string> responses_;
    std::vector<std::vector<ChatMessage>> calls_;
    size_t next_ = 0;
};

} // namespace molr
