#pragma once

#include <memory>
#include <regex>
#include <string>
#include <unordered_map>
#include <vector>

#include "ragrec/llm_client.h"
#include "ragrec/promptgen.h"

namespace ragrec {

// Maps a recommendation prompt to the probability that the user likes the
// target. Implementations are shareable across threads. A prompt that cannot
// be scored raises ContentError.
class Scorer {
 public:
  virtual ~Scorer() = default;
  virtual double score(const std::string& prompt) = 0;
};

// 1 for an answer starting with "yes", 0 for "no", nullopt otherwise.
// Leading whitespace, quotes and case are ignored.
std::optional<double> parse_yes_no(const std::string& answer);

// P(yes) from first-token alternatives: the mass of "yes"-like tokens over the
// mass of "yes"- and "no"-like tokens. nullopt when neither appears.
std::optional<double> yes_probability(const TokenLogprobs& alternatives);

// Asks the LLM for a Yes/No answer. Uses token likelihoods when the endpoint
// returns them, otherwise the parsed answer word.
class LlmScorer : public Scorer {
 public:
  explicit LlmScorer(LlmClient& client, std::string system_prompt = {});
  double score(const std::string& prompt) override;

 private:
  LlmClient& client_;
  std::string system_prompt_;
};

// Deterministic scorer over a planted preference model. Every title carries a
// latent vector; the prompt's history lines and target title are parsed back
// using the prompt template, and
//   p = sigmoid(gain * mean_h(s_h * <q_h, q_target>) + bias)
// with s_h = +1 for liked and -1 for disliked history entries. Titles without
// a latent vector are skipped in the history; an unknown target is an error.
class PlantedScorer : public Scorer {
 public:
  PlantedScorer(std::unordered_map<std::string, std::vector<double>> latent,
                const PromptTemplate& tmpl, double gain = 4.0, double bias = 0.0);
  double score(const std::string& prompt) override;

 private:
  std::unordered_map<std::string, std::vector<double>> latent_;
  std::regex history_re_;
  std::regex question_re_;
  int history_title_group_ = 0;
  int history_sentiment_group_ = 0;
  int question_title_group_ = 0;
  std::string liked_word_;
  double gain_;
  double bias_;
};

}  // namespace ragrec
