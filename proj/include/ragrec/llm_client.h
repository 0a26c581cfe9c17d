#pragma once

#include <atomic>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

namespace ragrec {

struct GenRequest {
  std::string system_prompt;
  std::string user_prompt;
  int max_tokens = 256;
  double temperature = 0.0;
  // Ask the endpoint for log-likelihoods of the first generated token.
  bool want_logprobs = false;

  void validate() const;
};

struct EmbedRequest {
  std::string text;
  std::string model_tag;

  void validate() const;
};

// Alternative first tokens with their natural-log probabilities.
using TokenLogprobs = std::vector<std::pair<std::string, double>>;

struct Completion {
  std::string text;
  std::optional<TokenLogprobs> first_token_logprobs;
};

struct RetryPolicy {
  int max_attempts = 3;
  double backoff_base_s = 0.5;
  double backoff_cap_s = 30.0;

  // Delay before retry number `attempt` (1-based): base * 2^(attempt-1), capped.
  double delay(int attempt) const;
};

struct ClientConfig {
  std::string endpoint = "http://127.0.0.1:8000/v1";
  std::string api_key;
  double timeout_s = 60.0;
  RetryPolicy retry;
  std::string chat_model = "llama-3.1-8b-instruct";
  // Declared embedding dimension per model tag.
  std::map<std::string, std::size_t> embed_dims = {{"default", 4096}};
  std::string default_embed_model = "default";
  int max_in_flight = 4;
  std::filesystem::path audit_log;  // empty = no audit

  // Overrides endpoint/api_key from RAGREC_LLM_ENDPOINT / RAGREC_LLM_API_KEY.
  void apply_env();
  void validate() const;
};

// Bounds the number of requests in flight. Each request takes one token and
// returns it on completion.
class RateLimiter {
 public:
  explicit RateLimiter(int max_in_flight);

  class Permit {
   public:
    explicit Permit(RateLimiter& owner) : owner_(&owner) { owner_->slots_.acquire(); }
    Permit(const Permit&) = delete;
    Permit& operator=(const Permit&) = delete;
    ~Permit() { owner_->slots_.release(); }

   private:
    RateLimiter* owner_;
  };

  Permit acquire() { return Permit(*this); }
  int capacity() const { return capacity_; }

 private:
  int capacity_;
  std::counting_semaphore<1 << 16> slots_;
};

// Appends one JSON object per request to a file; safe to share across threads.
class AuditLog {
 public:
  explicit AuditLog(const std::filesystem::path& path);
  void record(const std::string& kind, const std::string& request_json,
              const std::string& outcome_key, const std::string& outcome_json);

 private:
  std::mutex mu_;
  std::ofstream out_;
};

// Text generation and text embedding. Implementations are shareable across
// threads.
class LlmClient {
 public:
  virtual ~LlmClient() = default;

  virtual Completion complete(const GenRequest& req) = 0;
  std::string generate(const GenRequest& req) { return complete(req).text; }

  virtual std::vector<float> embed_text(const EmbedRequest& req) = 0;
  virtual std::size_t embedding_dim(const std::string& model_tag) const = 0;

  // Number of complete/embed_text calls served so far.
  std::size_t calls() const { return calls_.load(); }

 protected:
  void count_call() { ++calls_; }

 private:
  std::atomic<std::size_t> calls_{0};
};

// Deterministic offline client. Output depends only on (request, seed).
//
// generate: "Description of {title}: a {genre} item about {keywords}", filled
// from "title:", "genre:" and "keywords:" lines in the user prompt. Without a
// title line, the first non-empty prompt line stands in for the title.
//
// embed_text: token-hashing embedding. Every lowercase alphanumeric token maps
// to a seeded Gaussian vector; the vectors are summed together with a smaller
// vector keyed by the full text and the sum is scaled to unit norm. Texts
// sharing words end up close, distinct texts never coincide.
class MockLlmClient : public LlmClient {
 public:
  explicit MockLlmClient(std::size_t dim = 64, std::uint64_t seed = 0);

  Completion complete(const GenRequest& req) override;
  std::vector<float> embed_text(const EmbedRequest& req) override;
  std::size_t embedding_dim(const std::string&) const override { return dim_; }

  // Replaces the description rule, e.g. to script Yes/No answers.
  void set_answer_fn(std::function<Completion(const GenRequest&)> fn) { answer_fn_ = std::move(fn); }

 private:
  std::size_t dim_;
  std::uint64_t seed_;
  std::function<Completion(const GenRequest&)> answer_fn_;
};

// OpenAI-compatible chat-completions and embeddings client over HTTP.
class HttpLlmClient : public LlmClient {
 public:
  using Sleeper = std::function<void(double seconds)>;

  explicit HttpLlmClient(ClientConfig config, Sleeper sleeper = {});
  ~HttpLlmClient() override;

  Completion complete(const GenRequest& req) override;
  std::vector<float> embed_text(const EmbedRequest& req) override;
  std::size_t embedding_dim(const std::string& model_tag) const override;

  // Attempts made by the most recent call on this thread.
  static int last_attempts();

 private:
  std::string post_json(const std::string& path, const std::string& body);

  ClientConfig config_;
  Sleeper sleeper_;
  RateLimiter limiter_;
  std::unique_ptr<AuditLog> audit_;
  std::string scheme_host_port_;
  std::string base_path_;
};

// "mock" or "http" client from the "llm" config section (keys in README).
std::unique_ptr<LlmClient> make_client(const nlohmann::json& section, std::uint64_t seed);

}  // namespace ragrec
