#pragma once

#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "pocoti/util.hpp"

namespace pocoti::gateway {

// Result block grammar:
//   ---BEGIN RESULT---
//   field: value
//   field: <<<
//   multi-line value
//   >>>
//   ---END RESULT---
// A multi-line value may also open with `<<<TAG` (TAG in [A-Z0-9_]+) and
// then closes at a line equal to TAG, so values containing `>>>` lines (such
// as prompts that show this grammar) can be carried verbatim.
inline constexpr std::string_view kBlockBegin = "---BEGIN RESULT---";
inline constexpr std::string_view kBlockEnd = "---END RESULT---";
inline constexpr std::string_view kMultilineOpen = "<<<";
inline constexpr std::string_view kMultilineClose = ">>>";

struct FieldSpec {
  std::string name;
  bool required = true;
  std::set<std::string> allowed;  // empty: any non-empty value
  bool numeric = false;
  double min = 0, max = 0;        // inclusive, when numeric
};

struct Schema {
  std::vector<FieldSpec> fields;

  Schema& require(std::string name, std::set<std::string> allowed = {});
  Schema& optional(std::string name, std::set<std::string> allowed = {});
  Schema& number(std::string name, double min, double max, bool required = true);
};

/// Parsed block. Keys in insertion order; surplus fields kept.
class StructuredDoc {
 public:
  void set(std::string key, std::string value);
  bool has(std::string_view key) const;
  const std::string& get(std::string_view key) const;
  std::optional<std::string> find(std::string_view key) const;
  double number(std::string_view key) const;
  const std::vector<std::pair<std::string, std::string>>& fields() const { return fields_; }

 private:
  std::vector<std::pair<std::string, std::string>> fields_;
};

enum class ParseErrorKind { no_block, missing_field, domain };

class StructuredParseError : public Error {
 public:
  StructuredParseError(ParseErrorKind kind, std::string message, std::string raw)
      : Error(std::move(message)), kind_(kind), raw_(std::move(raw)) {}
  ParseErrorKind kind() const { return kind_; }
  const std::string& raw_text() const { return raw_; }

 private:
  ParseErrorKind kind_;
  std::string raw_;
};

/// All well-formed blocks in document order. Never throws.
std::vector<StructuredDoc> extract_blocks(std::string_view text);

/// Takes the last well-formed block and validates it against `schema`. Blank
/// optional fields count as absent and are dropped from the result.
StructuredDoc parse_structured(std::string_view text, const Schema& schema);

/// Renders fields into a block; values containing newlines (or leading
/// `<<<`) become multi-line fields.
std::string format_block(const std::vector<std::pair<std::string, std::string>>& fields);

/// Every value is representable except one with a line ending in `\r`.
bool representable_value(std::string_view value);

}  // namespace pocoti::gateway
