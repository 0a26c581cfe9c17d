#include "ragrec/promptgen.h"

#include <algorithm>
#include <cmath>
#include <map>
#include <sstream>

#include <json.hpp>

#include "ragrec/error.h"
#include "ragrec/io.h"
#include "ragrec/placeholder.h"

namespace ragrec {

namespace {

constexpr const char* kBuiltinPrompt = R"(@@ preamble
You are a recommendation assistant. Read the user's profile and their relevant {kind} history, then predict whether the user will enjoy the target {kind}.
@@ profile_header
User profile:
@@ profile_line
- {key}: {value}
@@ history_header
Relevant {kind} history of the user, with their reactions:
@@ history_line
{index}. "{title}" ({sentiment}, rated {rating})
@@ question
Based on this history, will the user like the {kind} "{title}"?
@@ answer_instruction
Answer with only "Yes" or "No".
@@ item_kind
movie
@@ liked_word
liked
@@ disliked_word
disliked
)";

std::string format_rating(double r) {
  if (r == std::floor(r) && std::abs(r) < 1e15) return std::to_string(static_cast<long long>(r));
  std::ostringstream ss;
  ss << r;
  return ss.str();
}

}  // namespace

std::vector<HistoryEntry> augment_chronological(std::vector<HistoryEntry> items) {
  std::stable_sort(items.begin(), items.end(), [](const HistoryEntry& a, const HistoryEntry& b) {
    return a.timestamp < b.timestamp;
  });
  return items;
}

PromptTemplate PromptTemplate::builtin() { return from_text(kBuiltinPrompt); }

PromptTemplate PromptTemplate::from_text(const std::string& text) {
  std::map<std::string, std::string> sections;
  std::string current;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.rfind("@@ ", 0) == 0) {
      current = line.substr(3);
      if (sections.count(current)) throw ParseError("duplicate template section " + current, line_no);
      sections[current];
      continue;
    }
    if (current.empty()) {
      if (line.empty()) continue;
      throw ParseError("prompt template text before the first section", line_no);
    }
    auto& body = sections[current];
    if (!body.empty()) body += '\n';
    body += line;
  }
  PromptTemplate t;
  auto take = [&](const char* name, std::string& field, bool required) {
    auto it = sections.find(name);
    if (it == sections.end()) {
      if (required) throw ParseError(std::string("prompt template lacks section ") + name, 0);
      return;
    }
    field = it->second;
    while (!field.empty() && field.back() == '\n') field.pop_back();
    sections.erase(it);
  };
  take("preamble", t.preamble, true);
  take("profile_header", t.profile_header, false);
  take("profile_line", t.profile_line, true);
  take("history_header", t.history_header, true);
  take("history_line", t.history_line, true);
  take("question", t.question, true);
  take("answer_instruction", t.answer_instruction, true);
  take("item_kind", t.item_kind, false);
  take("liked_word", t.liked_word, false);
  take("disliked_word", t.disliked_word, false);
  if (!sections.empty()) throw ParseError("unknown prompt template section " + sections.begin()->first, 0);
  return t;
}

PromptTemplate PromptTemplate::load(const std::filesystem::path& path) {
  return from_text(read_text_file(path));
}

std::string build_prompt(const CtrSample& sample, std::span<const HistoryEntry> history,
                         const TitleLookup& titles, const PromptTemplate& tmpl,
                         double label_threshold) {
  auto title_of = [&](const std::string& id) {
    auto t = titles(id);
    if (!t || t->empty()) throw LookupError("no title for item '" + id + "'");
    return *t;
  };
  auto kind_only = [&](std::string_view name) -> std::optional<std::string> {
    if (name == "kind") return tmpl.item_kind;
    return std::nullopt;
  };

  std::string out = fill_placeholders(tmpl.preamble, kind_only);
  out += '\n';
  if (!sample.profile_fields.empty()) {
    if (!tmpl.profile_header.empty()) {
      out += fill_placeholders(tmpl.profile_header, kind_only);
      out += '\n';
    }
    for (const auto& [key, value] : sample.profile_fields) {
      out += fill_placeholders(tmpl.profile_line, [&](std::string_view name) -> std::optional<std::string> {
        if (name == "key") return key;
        if (name == "value") return value;
        return kind_only(name);
      });
      out += '\n';
    }
  }
  out += fill_placeholders(tmpl.history_header, kind_only);
  out += '\n';
  for (std::size_t i = 0; i < history.size(); ++i) {
    const auto& h = history[i];
    const auto title = title_of(h.item_id);
    out += fill_placeholders(tmpl.history_line, [&](std::string_view name) -> std::optional<std::string> {
      if (name == "index") return std::to_string(i + 1);
      if (name == "title") return title;
      if (name == "sentiment") return h.rating > label_threshold ? tmpl.liked_word : tmpl.disliked_word;
      if (name == "rating") return format_rating(h.rating);
      if (name == "item_id") return h.item_id;
      return kind_only(name);
    });
    out += '\n';
  }
  const auto target_title = title_of(sample.target_item_id);
  out += fill_placeholders(tmpl.question, [&](std::string_view name) -> std::optional<std::string> {
    if (name == "title") return target_title;
    if (name == "item_id") return sample.target_item_id;
    return kind_only(name);
  });
  out += '\n';
  out += fill_placeholders(tmpl.answer_instruction, kind_only);
  out += '\n';
  return out;
}

void write_instruction_data(const std::filesystem::path& path,
                            std::span<const InstructionExample> examples) {
  std::string out;
  for (const auto& ex : examples) {
    out += nlohmann::json{{"prompt", ex.prompt}, {"completion", ex.completion}}.dump();
    out += '\n';
  }
  write_file_atomic(path, out);
}

}  // namespace ragrec
