#include <algorithm>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <gtest/gtest.h>
#include <json.hpp>

#include "ragrec/error.h"
#include "ragrec/io.h"
#include "ragrec/promptgen.h"
#include "ragrec/rng.h"
#include "test_util.h"

namespace ragrec {
namespace {

std::vector<std::string> ids_of(const std::vector<HistoryEntry>& h) {
  std::vector<std::string> out;
  for (const auto& e : h) out.push_back(e.item_id);
  return out;
}

std::size_t count_lines_starting(const std::string& text, const std::string& prefix) {
  std::size_t n = 0, start = 0;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string::npos) end = text.size();
    if (text.compare(start, prefix.size(), prefix) == 0) ++n;
    start = end + 1;
  }
  return n;
}

TitleLookup titles_from(std::map<std::string, std::string> table) {
  return [table = std::move(table)](const std::string& id) -> std::optional<std::string> {
    auto it = table.find(id);
    if (it == table.end()) return std::nullopt;
    return it->second;
  };
}

CtrSample sample_with(std::vector<HistoryEntry> history) {
  CtrSample s;
  s.user_id = "u1";
  s.profile_fields = {{"age", "25-34"}, {"occupation", "writer"}};
  s.history = std::move(history);
  s.target_item_id = "t";
  s.target_rating = 5;
  s.label = 1;
  return s;
}

const auto kTitles = titles_from({{"a", "Alien"}, {"b", "Brazil"}, {"c", "Casablanca"}, {"t", "Titanic"}});

TEST(Augment, SortsByTimestamp) {
  std::vector<HistoryEntry> h{{"B", 4, 5}, {"A", 3, 1}};
  EXPECT_EQ(ids_of(augment_chronological(h)), (std::vector<std::string>{"A", "B"}));
  std::vector<HistoryEntry> sorted{{"A", 3, 1}, {"B", 4, 5}};
  EXPECT_EQ(ids_of(augment_chronological(sorted)), ids_of(sorted));
  std::vector<HistoryEntry> ties{{"X", 1, 2}, {"Y", 1, 2}, {"Z", 1, 1}, {"W", 1, 2}};
  EXPECT_EQ(ids_of(augment_chronological(ties)), (std::vector<std::string>{"Z", "X", "Y", "W"}));
}

TEST(Augment, IsPermutation) {
  Rng rng(4);
  for (int t = 0; t < 50; ++t) {
    std::vector<HistoryEntry> h;
    const auto n = rng.below(20);
    for (std::size_t i = 0; i < n; ++i) {
      h.push_back({"i" + std::to_string(rng.below(10)), 1.0, static_cast<std::int64_t>(rng.below(6))});
    }
    auto out = augment_chronological(h);
    auto a = ids_of(h), b = ids_of(out);
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    EXPECT_EQ(a, b);
    EXPECT_TRUE(std::is_sorted(out.begin(), out.end(),
                               [](const HistoryEntry& x, const HistoryEntry& y) { return x.timestamp < y.timestamp; }));
  }
}

TEST(PromptTemplate, BuiltinMatchesShippedAsset) {
  auto asset = PromptTemplate::load(std::filesystem::path(RAGREC_ASSET_DIR) / "prompt_template.txt");
  auto builtin = PromptTemplate::builtin();
  EXPECT_EQ(asset.preamble, builtin.preamble);
  EXPECT_EQ(asset.profile_header, builtin.profile_header);
  EXPECT_EQ(asset.profile_line, builtin.profile_line);
  EXPECT_EQ(asset.history_header, builtin.history_header);
  EXPECT_EQ(asset.history_line, builtin.history_line);
  EXPECT_EQ(asset.question, builtin.question);
  EXPECT_EQ(asset.answer_instruction, builtin.answer_instruction);
  EXPECT_EQ(asset.item_kind, builtin.item_kind);
  EXPECT_EQ(asset.liked_word, builtin.liked_word);
  EXPECT_EQ(asset.disliked_word, builtin.disliked_word);
}

TEST(PromptTemplate, ParseErrors) {
  const std::string minimal =
      "@@ preamble\nP\n@@ profile_line\n{key}={value}\n@@ history_header\nH\n@@ history_line\n{title}\n"
      "@@ question\nQ {title}?\n@@ answer_instruction\nA\n";
  auto t = PromptTemplate::from_text(minimal);
  EXPECT_EQ(t.preamble, "P");
  EXPECT_EQ(t.item_kind, "movie");
  EXPECT_TRUE(t.profile_header.empty());
  EXPECT_THROW(PromptTemplate::from_text("stray\n" + minimal), ParseError);
  EXPECT_THROW(PromptTemplate::from_text(minimal + "@@ preamble\nagain\n"), ParseError);
  EXPECT_THROW(PromptTemplate::from_text(minimal + "@@ epilogue\nx\n"), ParseError);
  EXPECT_THROW(PromptTemplate::from_text("@@ preamble\nP\n"), ParseError);
  auto books = PromptTemplate::from_text(minimal + "@@ item_kind\nbook\n");
  EXPECT_EQ(books.item_kind, "book");
}

TEST(BuildPrompt, OneLinePerHistoryItem) {
  auto s = sample_with({{"a", 4, 1}, {"b", 2, 2}, {"c", 5, 3}});
  auto p = build_prompt(s, s.history, kTitles, PromptTemplate::builtin(), 3.0);
  EXPECT_EQ(count_lines_starting(p, "1. "), 1u);
  EXPECT_EQ(count_lines_starting(p, "2. "), 1u);
  EXPECT_EQ(count_lines_starting(p, "3. "), 1u);
  EXPECT_EQ(count_lines_starting(p, "4. "), 0u);
  EXPECT_NE(p.find("1. \"Alien\" (liked, rated 4)\n"), std::string::npos);
  EXPECT_NE(p.find("2. \"Brazil\" (disliked, rated 2)\n"), std::string::npos);
  EXPECT_NE(p.find("will the user like the movie \"Titanic\"?"), std::string::npos);
  EXPECT_NE(p.find("- age: 25-34\n- occupation: writer\n"), std::string::npos);
  EXPECT_TRUE(p.ends_with("\nAnswer with only \"Yes\" or \"No\".\n"));
}

TEST(BuildPrompt, EmptyProfileOmitsBlock) {
  auto s = sample_with({{"a", 4, 1}});
  s.profile_fields.clear();
  auto p = build_prompt(s, s.history, kTitles, PromptTemplate::builtin(), 3.0);
  EXPECT_EQ(p.find("User profile:"), std::string::npos);
  EXPECT_NE(p.find("\"Titanic\""), std::string::npos);
  EXPECT_NE(p.find("1. \"Alien\""), std::string::npos);
}

TEST(BuildPrompt, Deterministic) {
  auto s = sample_with({{"a", 4, 1}, {"b", 2, 2}});
  auto tmpl = PromptTemplate::builtin();
  EXPECT_EQ(build_prompt(s, s.history, kTitles, tmpl, 3.0), build_prompt(s, s.history, kTitles, tmpl, 3.0));
}

TEST(BuildPrompt, FractionalRatingsAndSentimentThreshold) {
  auto s = sample_with({{"a", 3.5, 1}, {"b", 3, 2}});
  auto p = build_prompt(s, s.history, kTitles, PromptTemplate::builtin(), 3.0);
  EXPECT_NE(p.find("\"Alien\" (liked, rated 3.5)"), std::string::npos);
  EXPECT_NE(p.find("\"Brazil\" (disliked, rated 3)"), std::string::npos);
}

TEST(BuildPrompt, MissingTitleNamesItem) {
  auto s = sample_with({{"a", 4, 1}, {"ghost", 2, 2}});
  try {
    build_prompt(s, s.history, kTitles, PromptTemplate::builtin(), 3.0);
    FAIL() << "expected LookupError";
  } catch (const LookupError& e) {
    EXPECT_NE(std::string(e.what()).find("ghost"), std::string::npos);
  }
  auto t = sample_with({});
  t.target_item_id = "nope";
  EXPECT_THROW(build_prompt(t, t.history, kTitles, PromptTemplate::builtin(), 3.0), LookupError);
}

TEST(BuildPrompt, LengthMonotoneInHistory) {
  Rng rng(6);
  auto tmpl = PromptTemplate::builtin();
  std::vector<HistoryEntry> h;
  const std::vector<std::string> ids{"a", "b", "c"};
  std::size_t prev = build_prompt(sample_with({}), h, kTitles, tmpl, 3.0).size();
  for (int i = 0; i < 40; ++i) {
    h.push_back({ids[rng.below(3)], 1.0 + static_cast<double>(rng.below(5)), i});
    auto len = build_prompt(sample_with({}), h, kTitles, tmpl, 3.0).size();
    EXPECT_GE(len, prev);
    prev = len;
  }
}

TEST(InstructionData, JsonLines) {
  testing::TempDir dir;
  std::vector<InstructionExample> ex{{"p1\nline", "Yes"}, {"p2", "No"}};
  write_instruction_data(dir / "it.jsonl", ex);
  std::ifstream in(dir / "it.jsonl");
  std::string line;
  std::vector<nlohmann::json> rows;
  while (std::getline(in, line)) rows.push_back(nlohmann::json::parse(line));
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[0].at("prompt"), "p1\nline");
  EXPECT_EQ(rows[0].at("completion"), "Yes");
  EXPECT_EQ(rows[1].at("completion"), "No");
}

}  // namespace
}  // namespace ragrec
