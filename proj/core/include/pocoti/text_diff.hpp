#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace pocoti::diff {

enum class OpKind { equal, insert, remove };

/// One line of a line-level diff; `text` keeps its trailing newline if any.
struct DiffOp {
  OpKind kind = OpKind::equal;
  std::string text;
  bool operator==(const DiffOp&) const = default;
};

/// Splits into lines, each keeping its '\n' terminator.
std::vector<std::string> split_keep_newlines(std::string_view s);

/// Minimal line diff (longest common subsequence).
std::vector<DiffOp> diff_lines(std::string_view from, std::string_view to);

/// Rebuilds the target text; throws ValidationError when `ops` does not
/// describe `from`.
std::string apply_diff(std::string_view from, const std::vector<DiffOp>& ops);

std::size_t count(const std::vector<DiffOp>& ops, OpKind kind);

/// Unified diff text with `context` lines around each hunk.
std::string unified_diff(const std::vector<DiffOp>& ops, std::string_view from_label,
                         std::string_view to_label, int context = 3);

}  // namespace pocoti::diff
