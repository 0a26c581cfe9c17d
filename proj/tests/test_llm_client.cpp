#include <atomic>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <string>
#include <thread>
#include <vector>

#include <gtest/gtest.h>
#include <httplib.h>
#include <json.hpp>

#include "ragrec/error.h"
#include "ragrec/llm_client.h"
#include "test_util.h"

namespace ragrec {
namespace {

using nlohmann::json;

double dot(const std::vector<float>& a, const std::vector<float>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * b[i];
  return s;
}

GenRequest prompt(const std::string& text) {
  GenRequest r;
  r.user_prompt = text;
  return r;
}

TEST(MockClient, GenerationIsDeterministicAndEchoesTitle) {
  MockLlmClient a(8, 3), b(8, 3);
  auto req = prompt("title: Titanic\ngenre: Drama\nkeywords: ship, iceberg");
  EXPECT_EQ(a.generate(req), b.generate(req));
  EXPECT_EQ(a.generate(req), "Description of Titanic: a Drama item about ship, iceberg");
  EXPECT_NE(a.generate(prompt("Titanic")).find("Titanic"), std::string::npos);
  EXPECT_EQ(a.calls(), 3u);
}

TEST(MockClient, EmbeddingsAreUnitDeterministicAndDistinct) {
  MockLlmClient a(8, 0), b(8, 0);
  auto x = a.embed_text({"Titanic", ""});
  auto y = b.embed_text({"Titanic", ""});
  ASSERT_EQ(x.size(), 8u);
  EXPECT_EQ(x, y);
  EXPECT_NEAR(std::sqrt(dot(x, x)), 1.0, 1e-6);
  auto z = a.embed_text({"Heat", ""});
  EXPECT_NEAR(std::sqrt(dot(z, z)), 1.0, 1e-6);
  EXPECT_LT(dot(x, z), 1.0 - 1e-6);
  MockLlmClient other_seed(8, 1);
  EXPECT_NE(other_seed.embed_text({"Titanic", ""}), x);
}

TEST(MockClient, SharedWordsPullEmbeddingsTogether) {
  MockLlmClient c(64, 0);
  auto a = c.embed_text({"space opera with robots", ""});
  auto b = c.embed_text({"space opera with aliens", ""});
  auto d = c.embed_text({"quiet village romance", ""});
  EXPECT_GT(dot(a, b), dot(a, d));
}

TEST(MockClient, ValidatesRequests) {
  MockLlmClient c(4);
  EXPECT_THROW(c.generate(prompt("")), ContractError);
  auto r = prompt("x");
  r.max_tokens = 0;
  EXPECT_THROW(c.generate(r), ContractError);
  EXPECT_THROW(c.embed_text({"", ""}), ContractError);
  EXPECT_THROW(MockLlmClient(0), ContractError);
}

TEST(RetryPolicy, DelaysAreNondecreasingAndCapped) {
  RetryPolicy p{10, 0.5, 3.0};
  double prev = 0.0;
  for (int a = 1; a <= 10; ++a) {
    EXPECT_GE(p.delay(a), prev);
    EXPECT_LE(p.delay(a), 3.0);
    prev = p.delay(a);
  }
  EXPECT_DOUBLE_EQ(p.delay(1), 0.5);
  EXPECT_DOUBLE_EQ(p.delay(2), 1.0);
  EXPECT_DOUBLE_EQ(p.delay(10), 3.0);
}

TEST(ClientConfig, EnvironmentOverridesEndpointAndKey) {
  ::setenv("RAGREC_LLM_ENDPOINT", "http://example.invalid:9/v1", 1);
  ::setenv("RAGREC_LLM_API_KEY", "secret", 1);
  ClientConfig cfg;
  cfg.apply_env();
  ::unsetenv("RAGREC_LLM_ENDPOINT");
  ::unsetenv("RAGREC_LLM_API_KEY");
  EXPECT_EQ(cfg.endpoint, "http://example.invalid:9/v1");
  EXPECT_EQ(cfg.api_key, "secret");
}

TEST(ClientConfig, Validation) {
  ClientConfig cfg;
  cfg.timeout_s = 0;
  EXPECT_THROW(cfg.validate(), ContractError);
  cfg = {};
  cfg.retry.max_attempts = 0;
  EXPECT_THROW(cfg.validate(), ContractError);
  cfg = {};
  cfg.endpoint = "ftp://x";
  EXPECT_THROW(cfg.validate(), ContractError);
  EXPECT_THROW(make_client(json{{"kind", "carrier pigeon"}}, 0), ContractError);
  EXPECT_EQ(make_client(json{{"kind", "mock"}, {"embed_dim", 5}}, 0)->embedding_dim("x"), 5u);
}

// Local OpenAI-style server whose responses are scripted per test.
class FakeServer {
 public:
  FakeServer() {
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }
  ~FakeServer() {
    server_.stop();
    thread_.join();
  }

  httplib::Server& server() { return server_; }
  std::string endpoint() const { return "http://127.0.0.1:" + std::to_string(port_) + "/v1"; }

 private:
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
};

ClientConfig local_config(const std::string& endpoint) {
  ClientConfig cfg;
  cfg.endpoint = endpoint;
  cfg.timeout_s = 5;
  cfg.retry = {3, 0.25, 10.0};
  cfg.embed_dims = {{"default", 3}};
  return cfg;
}

json chat_body(const std::string& content) {
  return json{{"choices", json::array({{{"message", {{"role", "assistant"}, {"content", content}}}}})}};
}

TEST(HttpClient, RetriesServerErrorsThenSucceeds) {
  FakeServer fake;
  std::atomic<int> hits{0};
  std::string seen_auth;
  json seen_body;
  fake.server().Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
    if (++hits < 3) {
      res.status = hits == 1 ? 500 : 429;
      res.set_content("busy", "text/plain");
      return;
    }
    seen_auth = req.get_header_value("Authorization");
    seen_body = json::parse(req.body);
    res.set_content(chat_body("Yes").dump(), "application/json");
  });
  std::vector<double> delays;
  auto cfg = local_config(fake.endpoint());
  cfg.api_key = "k1";
  HttpLlmClient client(cfg, [&](double s) { delays.push_back(s); });
  GenRequest req = prompt("hello");
  req.system_prompt = "be brief";
  EXPECT_EQ(client.generate(req), "Yes");
  EXPECT_EQ(hits.load(), 3);
  EXPECT_EQ(HttpLlmClient::last_attempts(), 3);
  EXPECT_EQ(delays, (std::vector<double>{0.25, 0.5}));
  EXPECT_EQ(seen_auth, "Bearer k1");
  EXPECT_EQ(seen_body.at("messages").size(), 2u);
  EXPECT_EQ(seen_body.at("messages")[1].at("content"), "hello");
}

TEST(HttpClient, ClientErrorIsNotRetried) {
  FakeServer fake;
  std::atomic<int> hits{0};
  fake.server().Post("/v1/chat/completions", [&](const httplib::Request&, httplib::Response& res) {
    ++hits;
    res.status = 400;
    res.set_content("bad request: prompt too long", "text/plain");
  });
  HttpLlmClient client(local_config(fake.endpoint()), [](double) {});
  try {
    client.generate(prompt("x"));
    FAIL() << "expected StatusError";
  } catch (const StatusError& e) {
    EXPECT_EQ(e.status(), 400);
    EXPECT_NE(e.body_excerpt().find("prompt too long"), std::string::npos);
  }
  EXPECT_EQ(hits.load(), 1);
}

TEST(HttpClient, PersistentServerErrorSurfacesStatus) {
  FakeServer fake;
  std::atomic<int> hits{0};
  fake.server().Post("/v1/chat/completions", [&](const httplib::Request&, httplib::Response& res) {
    ++hits;
    res.status = 503;
  });
  HttpLlmClient client(local_config(fake.endpoint()), [](double) {});
  EXPECT_THROW(client.generate(prompt("x")), StatusError);
  EXPECT_EQ(hits.load(), 3);
}

TEST(HttpClient, UnreachableEndpointIsTransportErrorAfterAllAttempts) {
  int port = 0;
  {
    httplib::Server probe;
    port = probe.bind_to_any_port("127.0.0.1");
  }
  std::vector<double> delays;
  HttpLlmClient client(local_config("http://127.0.0.1:" + std::to_string(port) + "/v1"),
                       [&](double s) { delays.push_back(s); });
  try {
    client.generate(prompt("x"));
    FAIL() << "expected TransportError";
  } catch (const TransportError& e) {
    EXPECT_EQ(e.attempts(), 3);
  }
  EXPECT_EQ(delays.size(), 2u);
}

TEST(HttpClient, EmptyOrMalformedCompletionIsContentError) {
  FakeServer fake;
  std::string reply = chat_body("   ").dump();
  fake.server().Post("/v1/chat/completions", [&](const httplib::Request&, httplib::Response& res) {
    res.set_content(reply, "application/json");
  });
  HttpLlmClient client(local_config(fake.endpoint()), [](double) {});
  EXPECT_THROW(client.generate(prompt("x")), ContentError);
  reply = "{\"choices\": []}";
  EXPECT_THROW(client.generate(prompt("x")), ContentError);
}

TEST(HttpClient, ParsesFirstTokenLogprobs) {
  FakeServer fake;
  json seen;
  fake.server().Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
    seen = json::parse(req.body);
    auto body = chat_body("Yes");
    body["choices"][0]["logprobs"] = {
        {"content", json::array({{{"token", "Yes"},
                                  {"logprob", -0.1},
                                  {"top_logprobs", json::array({{{"token", "Yes"}, {"logprob", -0.1}},
                                                                {{"token", "No"}, {"logprob", -2.4}}})}}})}};
    res.set_content(body.dump(), "application/json");
  });
  HttpLlmClient client(local_config(fake.endpoint()), [](double) {});
  GenRequest req = prompt("x");
  req.want_logprobs = true;
  auto c = client.complete(req);
  EXPECT_EQ(seen.at("logprobs"), true);
  ASSERT_TRUE(c.first_token_logprobs.has_value());
  ASSERT_EQ(c.first_token_logprobs->size(), 2u);
  EXPECT_EQ((*c.first_token_logprobs)[1].first, "No");
  EXPECT_DOUBLE_EQ((*c.first_token_logprobs)[1].second, -2.4);
}

TEST(HttpClient, EmbeddingDimensionChecked) {
  FakeServer fake;
  json vec = {0.1, 0.2, 0.3};
  fake.server().Post("/v1/embeddings", [&](const httplib::Request&, httplib::Response& res) {
    res.set_content(json{{"data", json::array({{{"embedding", vec}}})}}.dump(), "application/json");
  });
  HttpLlmClient client(local_config(fake.endpoint()), [](double) {});
  auto v = client.embed_text({"abc", ""});
  ASSERT_EQ(v.size(), 3u);
  EXPECT_FLOAT_EQ(v[2], 0.3f);
  vec = {0.1, 0.2};
  EXPECT_THROW(client.embed_text({"abc", ""}), ContractError);
  EXPECT_THROW(client.embed_text({"abc", "unknown-model"}), ContractError);
}

TEST(HttpClient, AuditLogRecordsRequests) {
  testing::TempDir dir;
  FakeServer fake;
  fake.server().Post("/v1/chat/completions", [&](const httplib::Request&, httplib::Response& res) {
    res.set_content(chat_body("No").dump(), "application/json");
  });
  auto cfg = local_config(fake.endpoint());
  cfg.audit_log = dir / "audit.jsonl";
  {
    HttpLlmClient client(cfg, [](double) {});
    client.generate(prompt("first"));
    client.generate(prompt("second"));
  }
  std::ifstream in(dir / "audit.jsonl");
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    auto entry = json::parse(line);
    EXPECT_EQ(entry.at("kind"), "chat");
    EXPECT_TRUE(entry.contains("response"));
    ++n;
  }
  EXPECT_EQ(n, 2);
}

TEST(RateLimiter, BoundsConcurrency) {
  RateLimiter limiter(2);
  std::atomic<int> active{0}, peak{0};
  std::vector<std::thread> threads;
  for (int t = 0; t < 8; ++t) {
    threads.emplace_back([&] {
      auto permit = limiter.acquire();
      int now = ++active;
      int p = peak.load();
      while (now > p && !peak.compare_exchange_weak(p, now)) {
      }
      std::this_thread::sleep_for(std::chrono::milliseconds(5));
      --active;
    });
  }
  for (auto& t : threads) t.join();
  EXPECT_LE(peak.load(), 2);
  EXPECT_THROW(RateLimiter(0), ContractError);
}

}  // namespace
}  // namespace ragrec
