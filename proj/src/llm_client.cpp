#include "ragrec/llm_client.h"

#include <algorithm>
#include <cctype>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <thread>

#include <httplib.h>
#include <spdlog/spdlog.h>

#include "ragrec/error.h"
#include "ragrec/rng.h"

namespace ragrec {

using nlohmann::json;

void GenRequest::validate() const {
  if (user_prompt.empty()) throw ContractError("GenRequest: empty user prompt");
  if (max_tokens < 1) throw ContractError("GenRequest: max_tokens must be >= 1");
  if (!(temperature >= 0.0)) throw ContractError("GenRequest: temperature must be >= 0");
}

void EmbedRequest::validate() const {
  if (text.empty()) throw ContractError("EmbedRequest: empty text");
}

double RetryPolicy::delay(int attempt) const {
  if (attempt < 1) return 0.0;
  return std::min(backoff_cap_s, backoff_base_s * std::ldexp(1.0, std::min(attempt - 1, 30)));
}

void ClientConfig::apply_env() {
  if (const char* e = std::getenv("RAGREC_LLM_ENDPOINT"); e && *e) endpoint = e;
  if (const char* k = std::getenv("RAGREC_LLM_API_KEY"); k && *k) api_key = k;
}

void ClientConfig::validate() const {
  if (!(timeout_s > 0.0)) throw ContractError("ClientConfig: timeout must be > 0");
  if (retry.max_attempts < 1) throw ContractError("ClientConfig: attempts must be >= 1");
  if (retry.backoff_base_s < 0.0) throw ContractError("ClientConfig: negative backoff");
  if (max_in_flight < 1) throw ContractError("ClientConfig: max_in_flight must be >= 1");
  if (endpoint.rfind("http://", 0) != 0 && endpoint.rfind("https://", 0) != 0) {
    throw ContractError("ClientConfig: endpoint must start with http:// or https://");
  }
}

RateLimiter::RateLimiter(int max_in_flight)
    : capacity_(max_in_flight), slots_(std::max(1, max_in_flight)) {
  if (max_in_flight < 1) throw ContractError("RateLimiter: capacity must be >= 1");
}

AuditLog::AuditLog(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  out_.open(path, std::ios::app);
  if (!out_) throw Error("cannot open audit log " + path.string());
}

void AuditLog::record(const std::string& kind, const std::string& request_json,
                      const std::string& outcome_key, const std::string& outcome_json) {
  std::lock_guard lock(mu_);
  // Members are pre-serialized JSON, spliced in verbatim.
  out_ << "{\"kind\":" << json(kind).dump() << ",\"request\":" << request_json << ",\""
       << outcome_key << "\":" << outcome_json << "}\n";
  out_.flush();
}

// ---------------------------------------------------------------------------
// Mock

namespace {

std::string trim(std::string_view s) {
  auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

// Value of the first "key: value" line, case-insensitive on the key.
std::optional<std::string> field_line(std::string_view text, std::string_view key) {
  std::size_t start = 0;
  while (start <= text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    auto line = trim(text.substr(start, end - start));
    auto colon = line.find(':');
    if (colon != std::string::npos && lower(trim(line.substr(0, colon))) == key) {
      auto value = trim(std::string_view(line).substr(colon + 1));
      if (!value.empty()) return value;
    }
    start = end + 1;
  }
  return std::nullopt;
}

std::vector<std::string> tokens(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  for (unsigned char c : text) {
    if (std::isalnum(c)) {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return out;
}

void add_gaussian(std::vector<double>& acc, std::uint64_t key, double weight) {
  Rng rng(mix_seed(key));
  for (double& v : acc) v += weight * rng.normal();
}

}  // namespace

MockLlmClient::MockLlmClient(std::size_t dim, std::uint64_t seed) : dim_(dim), seed_(seed) {
  if (dim == 0) throw ContractError("MockLlmClient: dim must be > 0");
}

Completion MockLlmClient::complete(const GenRequest& req) {
  req.validate();
  count_call();
  if (answer_fn_) return answer_fn_(req);
  const std::string& p = req.user_prompt;
  auto title = field_line(p, "title");
  if (!title) {
    std::size_t start = 0;
    while (start < p.size() && !title) {
      auto end = p.find('\n', start);
      if (end == std::string::npos) end = p.size();
      auto line = trim(std::string_view(p).substr(start, end - start));
      if (!line.empty()) title = line;
      start = end + 1;
    }
  }
  auto genre = field_line(p, "genre").value_or("general");
  auto keywords = field_line(p, "keywords").value_or("its subject");
  return {"Description of " + *title + ": a " + genre + " item about " + keywords, std::nullopt};
}

std::vector<float> MockLlmClient::embed_text(const EmbedRequest& req) {
  req.validate();
  count_call();
  std::vector<double> acc(dim_, 0.0);
  for (const auto& tok : tokens(req.text)) add_gaussian(acc, fnv1a64(tok, fnv1a64("tok") ^ seed_), 1.0);
  add_gaussian(acc, fnv1a64(req.text, fnv1a64("text") ^ seed_), 0.5);
  double norm = 0.0;
  for (double v : acc) norm += v * v;
  norm = std::sqrt(norm);
  std::vector<float> out(dim_);
  for (std::size_t i = 0; i < dim_; ++i) out[i] = static_cast<float>(acc[i] / norm);
  return out;
}

// ---------------------------------------------------------------------------
// HTTP

namespace {

thread_local int g_last_attempts = 0;

std::string excerpt(const std::string& body) {
  constexpr std::size_t kMax = 200;
  return body.size() <= kMax ? body : body.substr(0, kMax) + "...";
}

bool retryable_status(int status) { return status == 408 || status == 429 || status >= 500; }

}  // namespace

HttpLlmClient::HttpLlmClient(ClientConfig config, Sleeper sleeper)
    : config_(std::move(config)),
      sleeper_(std::move(sleeper)),
      limiter_(config_.max_in_flight) {
  config_.validate();
  if (!sleeper_) {
    sleeper_ = [](double s) { std::this_thread::sleep_for(std::chrono::duration<double>(s)); };
  }
  const auto& ep = config_.endpoint;
  auto scheme_end = ep.find("://") + 3;
  auto path_start = ep.find('/', scheme_end);
  scheme_host_port_ = path_start == std::string::npos ? ep : ep.substr(0, path_start);
  base_path_ = path_start == std::string::npos ? "" : ep.substr(path_start);
  while (!base_path_.empty() && base_path_.back() == '/') base_path_.pop_back();
  if (!config_.audit_log.empty()) audit_ = std::make_unique<AuditLog>(config_.audit_log);
}

HttpLlmClient::~HttpLlmClient() = default;

int HttpLlmClient::last_attempts() { return g_last_attempts; }

std::string HttpLlmClient::post_json(const std::string& path, const std::string& body) {
  auto permit = limiter_.acquire();
  httplib::Client cli(scheme_host_port_);
  const auto secs = static_cast<time_t>(config_.timeout_s);
  const auto usecs = static_cast<time_t>((config_.timeout_s - static_cast<double>(secs)) * 1e6);
  cli.set_connection_timeout(secs, usecs);
  cli.set_read_timeout(secs, usecs);
  cli.set_write_timeout(secs, usecs);
  httplib::Headers headers;
  if (!config_.api_key.empty()) headers.emplace("Authorization", "Bearer " + config_.api_key);

  const int attempts = config_.retry.max_attempts;
  std::string last_error;
  for (int attempt = 1; attempt <= attempts; ++attempt) {
    g_last_attempts = attempt;
    if (attempt > 1) sleeper_(config_.retry.delay(attempt - 1));
    auto res = cli.Post(base_path_ + path, headers, body, "application/json");
    if (!res) {
      last_error = httplib::to_string(res.error());
      spdlog::warn("POST {}{}: attempt {}/{} failed: {}", scheme_host_port_, base_path_ + path,
                   attempt, attempts, last_error);
      continue;
    }
    if (res->status >= 200 && res->status < 300) return res->body;
    if (retryable_status(res->status) && attempt < attempts) {
      spdlog::warn("POST {}: attempt {}/{} got status {}", base_path_ + path, attempt, attempts,
                   res->status);
      continue;
    }
    throw StatusError(res->status, excerpt(res->body));
  }
  throw TransportError("POST " + scheme_host_port_ + base_path_ + path + " failed after " +
                           std::to_string(attempts) + " attempts: " + last_error,
                       attempts);
}

Completion HttpLlmClient::complete(const GenRequest& req) {
  req.validate();
  count_call();
  json messages = json::array();
  if (!req.system_prompt.empty()) {
    messages.push_back({{"role", "system"}, {"content", req.system_prompt}});
  }
  messages.push_back({{"role", "user"}, {"content", req.user_prompt}});
  json body = {{"model", config_.chat_model},
               {"messages", std::move(messages)},
               {"max_tokens", req.max_tokens},
               {"temperature", req.temperature}};
  if (req.want_logprobs) {
    body["logprobs"] = true;
    body["top_logprobs"] = 5;
  }
  const std::string request = body.dump();
  std::string raw;
  try {
    raw = post_json("/chat/completions", request);
  } catch (const Error& e) {
    if (audit_) audit_->record("chat", request, "error", json(e.what()).dump());
    throw;
  }
  if (audit_) {
    audit_->record("chat", request, "response", json::parse(raw, nullptr, false).is_discarded()
                                                    ? json(raw).dump()
                                                    : raw);
  }

  Completion out;
  try {
    auto doc = json::parse(raw);
    const auto& choice = doc.at("choices").at(0);
    const auto& content = choice.at("message").at("content");
    if (content.is_string()) out.text = content.get<std::string>();
    if (choice.contains("logprobs") && choice["logprobs"].is_object() &&
        choice["logprobs"].contains("content") && choice["logprobs"]["content"].is_array() &&
        !choice["logprobs"]["content"].empty()) {
      const auto& first = choice["logprobs"]["content"][0];
      TokenLogprobs alts;
      if (first.contains("top_logprobs")) {
        for (const auto& t : first["top_logprobs"]) {
          alts.emplace_back(t.at("token").get<std::string>(), t.at("logprob").get<double>());
        }
      }
      if (alts.empty()) {
        alts.emplace_back(first.at("token").get<std::string>(), first.at("logprob").get<double>());
      }
      out.first_token_logprobs = std::move(alts);
    }
  } catch (const json::exception& e) {
    throw ContentError(std::string("malformed chat completion: ") + e.what());
  }
  if (trim(out.text).empty()) throw ContentError("empty completion");
  return out;
}

std::size_t HttpLlmClient::embedding_dim(const std::string& model_tag) const {
  const auto& tag = model_tag.empty() ? config_.default_embed_model : model_tag;
  auto it = config_.embed_dims.find(tag);
  if (it == config_.embed_dims.end()) {
    throw ContractError("no declared embedding dimension for model '" + tag + "'");
  }
  return it->second;
}

std::vector<float> HttpLlmClient::embed_text(const EmbedRequest& req) {
  req.validate();
  count_call();
  const auto& tag = req.model_tag.empty() ? config_.default_embed_model : req.model_tag;
  const std::size_t dim = embedding_dim(tag);
  json body = {{"model", tag}, {"input", req.text}};
  const std::string request = body.dump();
  std::string raw;
  try {
    raw = post_json("/embeddings", request);
  } catch (const Error& e) {
    if (audit_) audit_->record("embed", request, "error", json(e.what()).dump());
    throw;
  }
  std::vector<float> out;
  try {
    auto doc = json::parse(raw);
    for (const auto& v : doc.at("data").at(0).at("embedding")) out.push_back(v.get<float>());
  } catch (const json::exception& e) {
    if (audit_) audit_->record("embed", request, "error", json(e.what()).dump());
    throw ContentError(std::string("malformed embedding response: ") + e.what());
  }
  if (audit_) {
    audit_->record("embed", request, "response",
                   json{{"dim", out.size()}, {"model", tag}}.dump());
  }
  if (out.size() != dim) {
    throw ContractError("embedding dimension " + std::to_string(out.size()) +
                        " does not match declared " + std::to_string(dim) + " for '" + tag + "'");
  }
  for (float f : out) {
    if (!std::isfinite(f)) throw ContentError("non-finite embedding component");
  }
  return out;
}

std::unique_ptr<LlmClient> make_client(const json& section, std::uint64_t seed) {
  const auto kind = section.value("kind", std::string("mock"));
  if (kind == "mock") {
    return std::make_unique<MockLlmClient>(section.value("embed_dim", std::size_t{64}),
                                           section.value("seed", seed));
  }
  if (kind != "http") throw ContractError("llm.kind must be \"mock\" or \"http\"");
  ClientConfig cfg;
  cfg.endpoint = section.value("endpoint", cfg.endpoint);
  cfg.api_key = section.value("api_key", cfg.api_key);
  cfg.timeout_s = section.value("timeout_s", cfg.timeout_s);
  cfg.retry.max_attempts = section.value("max_attempts", cfg.retry.max_attempts);
  cfg.retry.backoff_base_s = section.value("backoff_base_s", cfg.retry.backoff_base_s);
  cfg.chat_model = section.value("chat_model", cfg.chat_model);
  cfg.max_in_flight = section.value("max_in_flight", cfg.max_in_flight);
  cfg.audit_log = section.value("audit_log", std::string());
  if (section.contains("embed_model")) {
    cfg.default_embed_model = section.at("embed_model").get<std::string>();
    cfg.embed_dims = {{cfg.default_embed_model, section.value("embed_dim", std::size_t{4096})}};
  }
  cfg.apply_env();
  return std::make_unique<HttpLlmClient>(std::move(cfg));
}

}  // namespace ragrec
