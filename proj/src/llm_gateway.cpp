#define CPPHTTPLIB_OPENSSL_SUPPORT
#include "evoloop/llm_gateway.hpp"

#include <cstdlib>
#include <fstream>

#include <httplib.h>

#include "evoloop/digest.hpp"
#include "evoloop/error.hpp"

namespace evoloop {
namespace {

using nlohmann::json;

std::string_view role_name(Role role) {
  switch (role) {
    case Role::System: return "system";
    case Role::User: return "user";
    case Role::Assistant: return "assistant";
  }
  return "user";
}

}  // namespace

json request_to_json(const ChatRequest& request) {
  json messages = json::array();
  for (const auto& m : request.messages) {
    messages.push_back({{"role", std::string(role_name(m.role))}, {"content", m.content}});
  }
  return {{"model", request.model_id}, {"messages", messages}, {"temperature", request.temperature}};
}

std::string request_digest(const ChatRequest& request) {
  // nlohmann::json objects are key-sorted, so dump() is canonical.
  return sha256_hex(request_to_json(request).dump());
}

std::string_view cassette_mode_name(CassetteMode mode) {
  switch (mode) {
    case CassetteMode::Record: return "record";
    case CassetteMode::Replay: return "replay";
    case CassetteMode::Passthrough: return "passthrough";
  }
  return "replay";
}

std::optional<CassetteMode> parse_cassette_mode(std::string_view name) {
  for (auto m : {CassetteMode::Record, CassetteMode::Replay, CassetteMode::Passthrough}) {
    if (cassette_mode_name(m) == name) return m;
  }
  return std::nullopt;
}

Cassette Cassette::open(const std::filesystem::path& path, CassetteMode mode) {
  Cassette c(mode);
  if (std::ifstream in(path); in) {
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      json j = json::parse(line, nullptr, /*allow_exceptions=*/false);
      if (j.is_discarded()) continue;  // torn trailing write
      c.entries_[j.at("digest").get<std::string>()] = j.at("response").get<std::string>();
    }
  } else if (mode == CassetteMode::Replay) {
    throw Error(ErrorCode::IoError, "cassette not found: " + path.string());
  }
  if (mode == CassetteMode::Record) c.path_ = path;
  return c;
}

std::optional<std::string> Cassette::lookup(const std::string& digest) const {
  std::lock_guard lock(mu_);
  auto it = entries_.find(digest);
  if (it == entries_.end()) return std::nullopt;
  return it->second;
}

void Cassette::record(const ChatRequest& request, const std::string& digest, const std::string& response) {
  std::lock_guard lock(mu_);
  if (!entries_.emplace(digest, response).second) return;
  if (path_) {
    std::ofstream out(*path_, std::ios::app);
    if (!out) throw Error(ErrorCode::IoError, "cannot append to " + path_->string());
    out << json{{"digest", digest}, {"request", request_to_json(request)}, {"response", response}}.dump() << "\n";
  }
}

std::size_t Cassette::size() const {
  std::lock_guard lock(mu_);
  return entries_.size();
}

HttpTransport::HttpTransport(std::string base_url, std::string api_key)
    : base_url_(std::move(base_url)), api_key_(std::move(api_key)) {
  while (!base_url_.empty() && base_url_.back() == '/') base_url_.pop_back();
}

std::unique_ptr<HttpTransport> HttpTransport::from_env() {
  const char* base = std::getenv("EVOLOOP_API_BASE");
  const char* key = std::getenv("EVOLOOP_API_KEY");
  if (!base || !*base) throw Error(ErrorCode::ConfigError, "EVOLOOP_API_BASE is not set");
  return std::make_unique<HttpTransport>(base, key ? key : "");
}

std::string HttpTransport::send(const ChatRequest& request) {
  // Split "scheme://host[:port]/prefix" into client address and path prefix.
  const auto scheme_end = base_url_.find("://");
  const auto path_start = base_url_.find('/', scheme_end == std::string::npos ? 0 : scheme_end + 3);
  const std::string host = base_url_.substr(0, path_start);
  const std::string prefix = path_start == std::string::npos ? "" : base_url_.substr(path_start);

  httplib::Client client(host);
  client.set_read_timeout(120, 0);
  httplib::Headers headers;
  if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);
  auto res = client.Post(prefix + "/chat/completions", headers, request_to_json(request).dump(),
                         "application/json");
  if (!res) throw Error(ErrorCode::TransportError, "request failed: " + httplib::to_string(res.error()));
  if (res->status != 200) {
    throw Error(ErrorCode::TransportError, "HTTP " + std::to_string(res->status) + ": " + res->body.substr(0, 500));
  }
  try {
    return json::parse(res->body).at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::TransportError, std::string("malformed completion body: ") + e.what());
  }
}

std::string complete(const ChatRequest& request, Cassette& cassette, Transport* transport) {
  const std::string digest = request_digest(request);
  std::string response;
  switch (cassette.mode()) {
    case CassetteMode::Replay: {
      auto hit = cassette.lookup(digest);
      if (!hit) throw Error(ErrorCode::CassetteMiss, "no recorded response for " + digest);
      response = std::move(*hit);
      break;
    }
    case CassetteMode::Record: {
      if (auto hit = cassette.lookup(digest)) {
        response = std::move(*hit);
        break;
      }
      if (!transport) throw Error(ErrorCode::TransportError, "no transport configured");
      response = transport->send(request);
      if (static_cast<int>(response.size()) > request.max_output_chars) {
        throw Error(ErrorCode::BudgetExceeded, std::to_string(response.size()) + " chars");
      }
      cassette.record(request, digest, response);
      return response;
    }
    case CassetteMode::Passthrough:
      if (!transport) throw Error(ErrorCode::TransportError, "no transport configured");
      response = transport->send(request);
      break;
  }
  if (static_cast<int>(response.size()) > request.max_output_chars) {
    throw Error(ErrorCode::BudgetExceeded, std::to_string(response.size()) + " chars");
  }
  return response;
}

std::string render_template(std::string_view tmpl, const std::map<std::string, std::string>& bindings,
                            std::vector<std::string>* warnings) {
  std::string out;
  std::map<std::string, bool> used;
  std::size_t pos = 0;
  while (pos < tmpl.size()) {
    const auto open = tmpl.find("{{", pos);
    if (open == std::string_view::npos) {
      out.append(tmpl.substr(pos));
      break;
    }
    const auto close = tmpl.find("}}", open + 2);
    if (close == std::string_view::npos) {
      out.append(tmpl.substr(pos));
      break;
    }
    out.append(tmpl.substr(pos, open - pos));
    const std::string slot(tmpl.substr(open + 2, close - open - 2));
    auto it = bindings.find(slot);
    if (it == bindings.end()) throw Error(ErrorCode::UnboundSlot, "slot '" + slot + "' has no binding");
    out += it->second;
    used[slot] = true;
    pos = close + 2;
  }
  if (warnings) {
    for (const auto& [name, _] : bindings) {
      if (!used.count(name)) warnings->push_back("UnusedBinding: " + name);
    }
  }
  return out;
}

std::string LlmClient::chat(std::vector<ChatMessage> messages) const {
  if (!cassette) throw Error(ErrorCode::ConfigError, "model backend needs a cassette");
  ChatRequest request{model_id, std::move(messages), temperature, max_output_chars};
  return complete(request, *cassette, transport);
}

}  // namespace evoloop
