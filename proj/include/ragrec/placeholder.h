#pragma once

#include <functional>
#include <optional>
#include <string>
#include <string_view>

#include "ragrec/error.h"

namespace ragrec {

// Replaces every "{name}" in `text` with lookup(name). A name the lookup
// cannot resolve raises ContractError. Braces that do not enclose a plain
// identifier (letters, digits, '_', ':', '.') are copied through.
inline std::string fill_placeholders(
    std::string_view text, const std::function<std::optional<std::string>(std::string_view)>& lookup) {
  auto is_name_char = [](char c) {
    return (c >= 'a' && c <= 'z') || (c >= 'A' && c <= 'Z') || (c >= '0' && c <= '9') || c == '_' ||
           c == ':' || c == '.';
  };
  std::string out;
  out.reserve(text.size());
  std::size_t i = 0;
  while (i < text.size()) {
    if (text[i] == '{') {
      std::size_t j = i + 1;
      while (j < text.size() && is_name_char(text[j])) ++j;
      if (j < text.size() && text[j] == '}' && j > i + 1) {
        auto name = text.substr(i + 1, j - i - 1);
        auto value = lookup(name);
        if (!value) throw ContractError("unresolved placeholder {" + std::string(name) + "}");
        out += *value;
        i = j + 1;
        continue;
      }
    }
    out.push_back(text[i++]);
  }
  return out;
}

}  // namespace ragrec
