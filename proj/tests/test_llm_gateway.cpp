#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <httplib.h>

#include <fstream>
#include <thread>

#include "evoloop/error.hpp"
#include "evoloop/llm_gateway.hpp"
#include "evoloop/prompts.hpp"
#include "testing/fixtures.hpp"

using namespace evoloop;
using nlohmann::json;

namespace {

ErrorCode code_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  FAIL("expected an evoloop::Error");
  return ErrorCode::RuntimeFailure;
}

class EchoTransport final : public Transport {
 public:
  std::string send(const ChatRequest& request) override {
    ++calls;
    return "echo: " + request.messages.back().content;
  }
  int calls{0};
};

ChatRequest request(const std::string& text, std::string model = "m1") {
  ChatRequest r;
  r.model_id = std::move(model);
  r.messages = {{Role::System, "sys"}, {Role::User, text}};
  return r;
}

}  // namespace

TEST_CASE("digest covers model, messages and temperature only") {
  const auto a = request("hello");
  CHECK(request_digest(a) == request_digest(request("hello")));
  CHECK(request_digest(a).size() == 64);
  CHECK(request_digest(a) != request_digest(request("hello!")));
  CHECK(request_digest(a) != request_digest(request("hello", "m2")));
  auto warm = a;
  warm.temperature = 0.7;
  CHECK(request_digest(a) != request_digest(warm));
  auto budget = a;
  budget.max_output_chars = 10;
  CHECK(request_digest(a) == request_digest(budget));
}

TEST_CASE("record then replay") {
  const auto dir = testing::fresh_temp_dir("gateway");
  const auto tape = dir / "cassette.jsonl";
  EchoTransport echo;
  {
    Cassette rec = Cassette::open(tape, CassetteMode::Record);
    CHECK(complete(request("one"), rec, &echo) == "echo: one");
    CHECK(complete(request("two"), rec, &echo) == "echo: two");
    CHECK(complete(request("one"), rec, &echo) == "echo: one");
    CHECK(echo.calls == 2);
    CHECK(rec.size() == 2);
  }
  Cassette replay = Cassette::open(tape, CassetteMode::Replay);
  testing::CountingTransport counter;
  CHECK(complete(request("one"), replay, &counter) == "echo: one");
  CHECK(complete(request("two"), replay, nullptr) == "echo: two");
  CHECK(counter.calls() == 0);
  CHECK(code_of([&] { complete(request("three"), replay, &counter); }) == ErrorCode::CassetteMiss);
  CHECK(counter.calls() == 0);
}

TEST_CASE("cassette tolerates a torn trailing line") {
  const auto dir = testing::fresh_temp_dir("torn");
  const auto tape = dir / "cassette.jsonl";
  EchoTransport echo;
  {
    Cassette rec = Cassette::open(tape, CassetteMode::Record);
    complete(request("one"), rec, &echo);
  }
  std::ofstream(tape, std::ios::app) << "{\"digest\": \"abc\", \"respo";
  Cassette replay = Cassette::open(tape, CassetteMode::Replay);
  CHECK(replay.size() == 1);
  CHECK(code_of([&] { Cassette::open(dir / "absent.jsonl", CassetteMode::Replay); }) == ErrorCode::IoError);
}

TEST_CASE("passthrough and budget") {
  Cassette pass(CassetteMode::Passthrough);
  EchoTransport echo;
  complete(request("a"), pass, &echo);
  complete(request("a"), pass, &echo);
  CHECK(echo.calls == 2);
  CHECK(pass.size() == 0);
  auto small = request("a long message");
  small.max_output_chars = 5;
  CHECK(code_of([&] { complete(small, pass, &echo); }) == ErrorCode::BudgetExceeded);
  Cassette rec(CassetteMode::Record);
  CHECK(code_of([&] { complete(small, rec, &echo); }) == ErrorCode::BudgetExceeded);
  CHECK(rec.size() == 0);
  CHECK(code_of([&] { complete(request("a"), pass, nullptr); }) == ErrorCode::TransportError);
}

TEST_CASE("render_template") {
  const std::map<std::string, std::string> bindings{
      {"task", "TASK-PAYLOAD"}, {"trajectory", "TRAJ-PAYLOAD"}, {"events", "EVENTS-PAYLOAD"}, {"outcome", "OUTCOME-PAYLOAD"}};
  const auto prompt = render_template(prompts::kBlamerTemplate, bindings);
  for (const auto& [_, v] : bindings) CHECK(prompt.find(v) != std::string::npos);
  CHECK(prompt.find("{{") == std::string::npos);

  auto partial = bindings;
  partial.erase("trajectory");
  CHECK(code_of([&] { render_template(prompts::kBlamerTemplate, partial); }) == ErrorCode::UnboundSlot);

  CHECK(render_template("a {{x}} b", {{"x", "{{y}}"}, {"y", "no"}}) == "a {{y}} b");
  std::vector<std::string> warnings;
  render_template("{{x}}", {{"x", "1"}, {"extra", "2"}}, &warnings);
  CHECK(warnings == std::vector<std::string>{"UnusedBinding: extra"});
}

TEST_CASE("http transport speaks chat completions") {
  httplib::Server server;
  json seen;
  std::string auth;
  server.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
    seen = json::parse(req.body);
    auth = req.get_header_value("Authorization");
    res.set_content(json{{"choices", {{{"message", {{"role", "assistant"}, {"content", "pong"}}}}}}}.dump(),
                    "application/json");
  });
  server.Post("/bad/chat/completions", [](const httplib::Request&, httplib::Response& res) {
    res.status = 500;
    res.set_content("boom", "text/plain");
  });
  const int port = server.bind_to_any_port("127.0.0.1");
  REQUIRE(port > 0);
  std::thread worker([&] { server.listen_after_bind(); });
  server.wait_until_ready();

  const std::string base = "http://127.0.0.1:" + std::to_string(port);
  HttpTransport transport(base + "/v1/", "secret");
  CHECK(transport.send(request("ping")) == "pong");
  CHECK(seen.at("model") == "m1");
  CHECK(seen.at("messages").size() == 2);
  CHECK(seen.at("messages")[1].at("content") == "ping");
  CHECK(auth == "Bearer secret");

  HttpTransport failing(base + "/bad", "");
  CHECK(code_of([&] { failing.send(request("ping")); }) == ErrorCode::TransportError);

  server.stop();
  worker.join();
}

TEST_CASE("llm client goes through the cassette") {
  Cassette rec(CassetteMode::Record);
  EchoTransport echo;
  LlmClient client{&rec, &echo, "m1", 0.0, 16000};
  CHECK(client.chat({{Role::User, "hi"}}) == "echo: hi");
  CHECK(client.chat({{Role::User, "hi"}}) == "echo: hi");
  CHECK(echo.calls == 1);
}
