#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ragrec/corpus.h"

namespace ragrec {

// Stable sort by ascending timestamp.
std::vector<HistoryEntry> augment_chronological(std::vector<HistoryEntry> items);

// Sections of the recommendation prompt. Placeholders:
//   profile_line:  {key} {value}
//   history_line:  {index} {title} {sentiment} {rating} {item_id}
//   question:      {title} {item_id}
//   preamble, profile_header, history_header, answer_instruction: {kind}
struct PromptTemplate {
  std::string preamble;
  std::string profile_header;
  std::string profile_line;
  std::string history_header;
  std::string history_line;
  std::string question;
  std::string answer_instruction;
  std::string item_kind = "movie";
  std::string liked_word = "liked";
  std::string disliked_word = "disliked";

  static PromptTemplate builtin();
  // Text asset: sections introduced by "@@ name" lines; "@@ item_kind" and the
  // sentiment words take their value from the section body.
  static PromptTemplate from_text(const std::string& text);
  static PromptTemplate load(const std::filesystem::path& path);
};

using TitleLookup = std::function<std::optional<std::string>(const std::string& item_id)>;

// Profile block (omitted when the profile is empty), one line per history
// entry in the given order, the question about the target, then the answer
// instruction. Ratings above `label_threshold` render as liked.
// Throws LookupError naming the first item without a title.
std::string build_prompt(const CtrSample& sample, std::span<const HistoryEntry> history,
                         const TitleLookup& titles, const PromptTemplate& tmpl,
                         double label_threshold);

struct InstructionExample {
  std::string prompt;
  std::string completion;  // "Yes" or "No"
};

// {"prompt": ..., "completion": "Yes"/"No"} per line.
void write_instruction_data(const std::filesystem::path& path,
                            std::span<const InstructionExample> examples);

}  // namespace ragrec
