#include "ragrec/scorer.h"

#include <cctype>
#include <cmath>
#include <sstream>

#include "ragrec/error.h"

namespace ragrec {

namespace {

std::string lower_word(const std::string& s) {
  std::size_t i = 0;
  while (i < s.size() && (std::isspace(static_cast<unsigned char>(s[i])) || s[i] == '"' || s[i] == '\'' ||
                          s[i] == '*')) {
    ++i;
  }
  std::string w;
  while (i < s.size() && std::isalpha(static_cast<unsigned char>(s[i]))) {
    w.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(s[i]))));
    ++i;
  }
  return w;
}

std::string regex_escape(std::string_view s) {
  static const std::string special = R"(\^$.|?*+()[]{}/)";
  std::string out;
  for (char c : s) {
    if (special.find(c) != std::string::npos) out.push_back('\\');
    out.push_back(c);
  }
  return out;
}

// Turns one template line into a regex. `captures` maps placeholder names to
// capture patterns; every other placeholder matches lazily. Returns the group
// number of each captured name through `groups`.
std::string line_pattern(const std::string& line,
                         const std::vector<std::pair<std::string, std::string>>& captures,
                         std::unordered_map<std::string, int>& groups) {
  std::string out = "^";
  int group = 0;
  std::size_t i = 0;
  while (i < line.size()) {
    if (line[i] == '{') {
      auto close = line.find('}', i);
      if (close != std::string::npos) {
        const auto name = line.substr(i + 1, close - i - 1);
        bool captured = false;
        for (const auto& [cname, pattern] : captures) {
          if (cname == name) {
            out += "(" + pattern + ")";
            groups[name] = ++group;
            captured = true;
            break;
          }
        }
        if (!captured) out += ".*?";
        i = close + 1;
        continue;
      }
    }
    out += regex_escape(std::string_view(line).substr(i, 1));
    ++i;
  }
  out += "$";
  return out;
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

std::optional<double> parse_yes_no(const std::string& answer) {
  const auto w = lower_word(answer);
  if (w == "yes") return 1.0;
  if (w == "no") return 0.0;
  return std::nullopt;
}

std::optional<double> yes_probability(const TokenLogprobs& alternatives) {
  double yes = 0.0;
  double no = 0.0;
  for (const auto& [token, logprob] : alternatives) {
    const auto w = lower_word(token);
    if (w == "yes") yes += std::exp(logprob);
    if (w == "no") no += std::exp(logprob);
  }
  if (!(yes + no > 0.0)) return std::nullopt;
  return yes / (yes + no);
}

LlmScorer::LlmScorer(LlmClient& client, std::string system_prompt)
    : client_(client), system_prompt_(std::move(system_prompt)) {}

double LlmScorer::score(const std::string& prompt) {
  GenRequest req;
  req.system_prompt = system_prompt_;
  req.user_prompt = prompt;
  req.max_tokens = 4;
  req.temperature = 0.0;
  req.want_logprobs = true;
  const auto c = client_.complete(req);
  if (c.first_token_logprobs) {
    if (auto p = yes_probability(*c.first_token_logprobs)) return *p;
  }
  if (auto p = parse_yes_no(c.text)) return *p;
  throw ContentError("unparseable answer: '" + c.text.substr(0, 80) + "'");
}

PlantedScorer::PlantedScorer(std::unordered_map<std::string, std::vector<double>> latent,
                             const PromptTemplate& tmpl, double gain, double bias)
    : latent_(std::move(latent)), liked_word_(tmpl.liked_word), gain_(gain), bias_(bias) {
  const std::string sentiment =
      "(?:" + regex_escape(tmpl.liked_word) + ")|(?:" + regex_escape(tmpl.disliked_word) + ")";
  std::unordered_map<std::string, int> groups;
  history_re_ = std::regex(line_pattern(tmpl.history_line, {{"title", ".+"}, {"sentiment", sentiment}}, groups));
  if (!groups.count("title") || !groups.count("sentiment")) {
    throw ContractError("planted scorer needs {title} and {sentiment} in the history line");
  }
  history_title_group_ = groups["title"];
  history_sentiment_group_ = groups["sentiment"];
  groups.clear();
  question_re_ = std::regex(line_pattern(tmpl.question, {{"title", ".+"}}, groups));
  if (!groups.count("title")) throw ContractError("planted scorer needs {title} in the question");
  question_title_group_ = groups["title"];
}

double PlantedScorer::score(const std::string& prompt) {
  std::vector<std::pair<const std::vector<double>*, double>> history;
  const std::vector<double>* target = nullptr;
  std::istringstream in(prompt);
  std::string line;
  std::smatch m;
  while (std::getline(in, line)) {
    if (std::regex_match(line, m, history_re_)) {
      auto it = latent_.find(m[history_title_group_].str());
      if (it != latent_.end()) {
        history.emplace_back(&it->second, m[history_sentiment_group_].str() == liked_word_ ? 1.0 : -1.0);
      }
    } else if (std::regex_match(line, m, question_re_)) {
      auto it = latent_.find(m[question_title_group_].str());
      if (it == latent_.end()) throw ContentError("planted scorer: unknown target '" + m[question_title_group_].str() + "'");
      target = &it->second;
    }
  }
  if (!target) throw ContentError("planted scorer: prompt has no target question");
  double signal = 0.0;
  for (const auto& [q, sign] : history) {
    double dot = 0.0;
    const std::size_t d = std::min(q->size(), target->size());
    for (std::size_t k = 0; k < d; ++k) dot += (*q)[k] * (*target)[k];
    signal += sign * dot;
  }
  if (!history.empty()) signal /= static_cast<double>(history.size());
  return sigmoid(gain_ * signal + bias_);
}

}  // namespace ragrec
