#pragma once

#include <atomic>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace evoloop {

enum class Role { System, User, Assistant };

struct ChatMessage {
  Role role{Role::User};
  std::string content;

  bool operator==(const ChatMessage&) const = default;
};

struct ChatRequest {
  std::string model_id;
  std::vector<ChatMessage> messages;
  double temperature{0.0};
  int max_output_chars{16000};
};

// Depends on (model_id, messages, temperature) only.
std::string request_digest(const ChatRequest& request);
nlohmann::json request_to_json(const ChatRequest& request);

enum class CassetteMode { Record, Replay, Passthrough };

std::string_view cassette_mode_name(CassetteMode mode);
std::optional<CassetteMode> parse_cassette_mode(std::string_view name);

// Content-addressed request/response store backed by a JSONL file of
// {digest, request, response}. Lookups may run concurrently; recording is
// serialized and appends to the file immediately.
class Cassette {
 public:
  explicit Cassette(CassetteMode mode) : mode_(mode) {}
  Cassette(Cassette&& other) noexcept
      : mode_(other.mode_), entries_(std::move(other.entries_)), path_(std::move(other.path_)) {}
  Cassette& operator=(Cassette&&) = delete;

  // Reads existing entries if the file exists. In Record mode new entries are
  // appended to `path`. Readers skip a partially written trailing line.
  static Cassette open(const std::filesystem::path& path, CassetteMode mode);

  CassetteMode mode() const { return mode_; }
  std::optional<std::string> lookup(const std::string& digest) const;
  void record(const ChatRequest& request, const std::string& digest, const std::string& response);
  std::size_t size() const;

 private:
  CassetteMode mode_;
  std::map<std::string, std::string> entries_;
  std::optional<std::filesystem::path> path_;
  mutable std::mutex mu_;
};

class Transport {
 public:
  virtual ~Transport() = default;
  // Throws TransportError on network or protocol failure.
  virtual std::string send(const ChatRequest& request) = 0;
};

// OpenAI-style chat-completions endpoint.
class HttpTransport final : public Transport {
 public:
  HttpTransport(std::string base_url, std::string api_key);
  // EVOLOOP_API_BASE and EVOLOOP_API_KEY.
  static std::unique_ptr<HttpTransport> from_env();

  std::string send(const ChatRequest& request) override;

 private:
  std::string base_url_;
  std::string api_key_;
};

// Replay never touches the transport (it may be null). In Record mode a
// digest already on tape is served from the tape, so every recorded digest
// has exactly one response.
std::string complete(const ChatRequest& request, Cassette& cassette, Transport* transport);

// Single-pass substitution of {{slot}} markers. Throws UnboundSlot; unused
// bindings are reported through `warnings` when given.
std::string render_template(std::string_view tmpl, const std::map<std::string, std::string>& bindings,
                            std::vector<std::string>* warnings = nullptr);

// Bundles what model-backed components need to issue a call.
struct LlmClient {
  Cassette* cassette{nullptr};
  Transport* transport{nullptr};
  std::string model_id;
  double temperature{0.0};
  int max_output_chars{16000};

  std::string chat(std::vector<ChatMessage> messages) const;
};

}  // namespace evoloop
