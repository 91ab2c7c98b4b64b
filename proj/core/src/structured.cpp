#include "pocoti/structured.hpp"

#include <cctype>
#include <cmath>
#include <cstdlib>

namespace pocoti::gateway {

Schema& Schema::require(std::string name, std::set<std::string> allowed) {
  fields.push_back({std::move(name), true, std::move(allowed), false, 0, 0});
  return *this;
}

Schema& Schema::optional(std::string name, std::set<std::string> allowed) {
  fields.push_back({std::move(name), false, std::move(allowed), false, 0, 0});
  return *this;
}

Schema& Schema::number(std::string name, double min, double max, bool required) {
  fields.push_back({std::move(name), required, {}, true, min, max});
  return *this;
}

void StructuredDoc::set(std::string key, std::string value) {
  for (auto& [k, v] : fields_) {
    if (k == key) {
      v = std::move(value);
      return;
    }
  }
  fields_.emplace_back(std::move(key), std::move(value));
}

bool StructuredDoc::has(std::string_view key) const { return find(key).has_value(); }

std::optional<std::string> StructuredDoc::find(std::string_view key) const {
  for (const auto& [k, v] : fields_) {
    if (k == key) return v;
  }
  return std::nullopt;
}

const std::string& StructuredDoc::get(std::string_view key) const {
  for (const auto& [k, v] : fields_) {
    if (k == key) return v;
  }
  throw Error("structured field '" + std::string(key) + "' not present");
}

namespace {

std::optional<double> parse_number(std::string_view s) {
  const auto t = trim(s);
  if (t.empty()) return std::nullopt;
  char* end = nullptr;
  const double v = std::strtod(t.c_str(), &end);
  if (end != t.c_str() + t.size() || !std::isfinite(v)) return std::nullopt;
  return v;
}

bool valid_key(std::string_view key) {
  if (key.empty()) return false;
  if (!(std::isalpha(static_cast<unsigned char>(key[0])) || key[0] == '_')) return false;
  for (char c : key) {
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_')) return false;
  }
  return true;
}

bool valid_tag(std::string_view tag) {
  for (char c : tag) {
    if (!(std::isupper(static_cast<unsigned char>(c)) || std::isdigit(static_cast<unsigned char>(c)) || c == '_')) {
      return false;
    }
  }
  return true;
}

/// Closing line for a multi-line value: `>>>` unless the value itself has
/// such a line, then the first heredoc tag the value does not contain.
std::string closing_line(std::string_view value) {
  std::set<std::string> lines;
  for (const auto& line : split_lines(value)) lines.insert(trim(line));
  if (!lines.count(std::string(kMultilineClose))) return std::string(kMultilineClose);
  for (int i = 0;; ++i) {
    auto tag = i == 0 ? std::string("EOT") : "EOT" + std::to_string(i);
    if (!lines.count(tag)) return tag;
  }
}

std::string_view strip_cr(std::string_view line) {
  if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
  return line;
}

}  // namespace

double StructuredDoc::number(std::string_view key) const {
  const auto v = parse_number(get(key));
  if (!v) throw Error("structured field '" + std::string(key) + "' is not a number");
  return *v;
}

std::vector<StructuredDoc> extract_blocks(std::string_view text) {
  enum class State { outside, inside, multiline, broken };
  std::vector<StructuredDoc> blocks;
  State state = State::outside;
  StructuredDoc current;
  std::string ml_key;
  std::string ml_close;
  std::string ml_value;
  bool ml_first = true;

  std::size_t pos = 0;
  while (pos <= text.size()) {
    auto nl = text.find('\n', pos);
    if (nl == std::string_view::npos) nl = text.size();
    const auto line = strip_cr(text.substr(pos, nl - pos));
    pos = nl + 1;

    if (state == State::multiline) {
      if (trim(line) == ml_close) {
        current.set(std::move(ml_key), std::move(ml_value));
        ml_key.clear();
        ml_value.clear();
        state = State::inside;
      } else {
        if (!ml_first) ml_value.push_back('\n');
        ml_value.append(line);
        ml_first = false;
      }
      continue;
    }
    const auto t = trim(line);
    if (t == kBlockBegin) {
      current = StructuredDoc{};
      state = State::inside;
      continue;
    }
    if (state == State::outside) continue;
    if (t == kBlockEnd) {
      if (state == State::inside) blocks.push_back(std::move(current));
      current = StructuredDoc{};
      state = State::outside;
      continue;
    }
    if (state == State::broken || t.empty()) continue;

    const auto colon = line.find(':');
    if (colon == std::string_view::npos) {
      state = State::broken;
      continue;
    }
    const auto key = trim(line.substr(0, colon));
    const auto value = trim(line.substr(colon + 1));
    if (!valid_key(key) || current.has(key)) {
      state = State::broken;
      continue;
    }
    if (starts_with(value, kMultilineOpen) && valid_tag(std::string_view(value).substr(kMultilineOpen.size()))) {
      const auto tag = value.substr(kMultilineOpen.size());
      ml_close = tag.empty() ? std::string(kMultilineClose) : tag;
      ml_key = key;
      ml_value.clear();
      ml_first = true;
      state = State::multiline;
    } else {
      current.set(key, value);
    }
  }
  return blocks;
}

StructuredDoc parse_structured(std::string_view text, const Schema& schema) {
  auto blocks = extract_blocks(text);
  if (blocks.empty()) {
    throw StructuredParseError(ParseErrorKind::no_block, "no parseable result block", std::string(text));
  }
  // A blank optional field counts as absent and is left out of the result,
  // so the returned doc always satisfies the schema.
  std::set<std::string> blank_optional;
  for (const auto& f : schema.fields) {
    const auto value = blocks.back().find(f.name);
    if (!f.required && value && trim(*value).empty()) blank_optional.insert(f.name);
  }
  StructuredDoc doc;
  for (auto& [k, v] : blocks.back().fields()) {
    if (!blank_optional.count(k)) doc.set(k, v);
  }
  for (const auto& f : schema.fields) {
    const auto value = doc.find(f.name);
    const bool present = value && !trim(*value).empty();
    if (!present) {
      if (f.required) {
        throw StructuredParseError(ParseErrorKind::missing_field,
                                   "missing required field '" + f.name + "'", std::string(text));
      }
      continue;
    }
    if (!f.allowed.empty() && f.allowed.count(*value) == 0) {
      throw StructuredParseError(ParseErrorKind::domain,
                                 "field '" + f.name + "' has value outside its domain",
                                 std::string(text));
    }
    if (f.numeric) {
      const auto n = parse_number(*value);
      if (!n || *n < f.min || *n > f.max) {
        throw StructuredParseError(ParseErrorKind::domain,
                                   "field '" + f.name + "' is not a number in range",
                                   std::string(text));
      }
    }
  }
  return doc;
}

bool representable_value(std::string_view value) {
  for (const auto& line : split_lines(value)) {
    if (!line.empty() && line.back() == '\r') return false;
  }
  return true;
}

std::string format_block(const std::vector<std::pair<std::string, std::string>>& fields) {
  std::string out(kBlockBegin);
  out.push_back('\n');
  for (const auto& [key, value] : fields) {
    const bool multiline = value.find('\n') != std::string::npos || value != trim(value) ||
                           starts_with(value, kMultilineOpen);
    out += key;
    if (multiline) {
      const auto close = closing_line(value);
      out += ": ";
      out += kMultilineOpen;
      if (close != kMultilineClose) out += close;
      out.push_back('\n');
      out += value;
      out.push_back('\n');
      out += close;
      out.push_back('\n');
    } else {
      out += ": ";
      out += value;
      out.push_back('\n');
    }
  }
  out += kBlockEnd;
  out.push_back('\n');
  return out;
}

}  // namespace pocoti::gateway
