#include "pocoti/text_diff.hpp"

#include <algorithm>

#include "pocoti/util.hpp"

namespace pocoti::diff {

std::vector<std::string> split_keep_newlines(std::string_view s) {
  std::vector<std::string> lines;
  std::size_t pos = 0;
  while (pos < s.size()) {
    const auto nl = s.find('\n', pos);
    const auto end = nl == std::string_view::npos ? s.size() : nl + 1;
    lines.emplace_back(s.substr(pos, end - pos));
    pos = end;
  }
  return lines;
}

std::vector<DiffOp> diff_lines(std::string_view from, std::string_view to) {
  const auto a = split_keep_newlines(from);
  const auto b = split_keep_newlines(to);
  // Trim the common prefix and suffix before the quadratic table.
  std::size_t pre = 0;
  while (pre < a.size() && pre < b.size() && a[pre] == b[pre]) ++pre;
  std::size_t suf = 0;
  while (suf < a.size() - pre && suf < b.size() - pre && a[a.size() - 1 - suf] == b[b.size() - 1 - suf]) ++suf;
  const std::size_t n = a.size() - pre - suf;
  const std::size_t m = b.size() - pre - suf;

  std::vector<DiffOp> ops;
  for (std::size_t i = 0; i < pre; ++i) ops.push_back({OpKind::equal, a[i]});

  if (n * m > 16'000'000) {
    for (std::size_t i = 0; i < n; ++i) ops.push_back({OpKind::remove, a[pre + i]});
    for (std::size_t j = 0; j < m; ++j) ops.push_back({OpKind::insert, b[pre + j]});
  } else {
    // lcs[i][j] = LCS length of a[pre+i..] and b[pre+j..]
    std::vector<std::vector<unsigned>> lcs(n + 1, std::vector<unsigned>(m + 1, 0));
    for (std::size_t i = n; i-- > 0;) {
      for (std::size_t j = m; j-- > 0;) {
        lcs[i][j] = a[pre + i] == b[pre + j] ? lcs[i + 1][j + 1] + 1 : std::max(lcs[i + 1][j], lcs[i][j + 1]);
      }
    }
    std::size_t i = 0, j = 0;
    while (i < n || j < m) {
      if (i < n && j < m && a[pre + i] == b[pre + j]) {
        ops.push_back({OpKind::equal, a[pre + i]});
        ++i;
        ++j;
      } else if (j < m && (i == n || lcs[i][j + 1] >= lcs[i + 1][j])) {
        ops.push_back({OpKind::insert, b[pre + j]});
        ++j;
      } else {
        ops.push_back({OpKind::remove, a[pre + i]});
        ++i;
      }
    }
  }
  for (std::size_t k = a.size() - suf; k < a.size(); ++k) ops.push_back({OpKind::equal, a[k]});
  return ops;
}

std::string apply_diff(std::string_view from, const std::vector<DiffOp>& ops) {
  const auto a = split_keep_newlines(from);
  std::size_t i = 0;
  std::string out;
  for (const auto& op : ops) {
    if (op.kind == OpKind::insert) {
      out += op.text;
      continue;
    }
    if (i >= a.size() || a[i] != op.text) throw ValidationError("diff does not match its source text");
    if (op.kind == OpKind::equal) out += op.text;
    ++i;
  }
  if (i != a.size()) throw ValidationError("diff does not cover its source text");
  return out;
}

std::size_t count(const std::vector<DiffOp>& ops, OpKind kind) {
  return static_cast<std::size_t>(std::count_if(ops.begin(), ops.end(), [&](const DiffOp& o) { return o.kind == kind; }));
}

std::string unified_diff(const std::vector<DiffOp>& ops, std::string_view from_label, std::string_view to_label,
                         int context) {
  std::string out;
  out += "--- ";
  out += from_label;
  out += "\n+++ ";
  out += to_label;
  out += "\n";
  const auto n = ops.size();
  std::size_t k = 0;
  const auto ctx = static_cast<std::size_t>(std::max(context, 0));
  // Line numbers (1-based) of ops[k] in the old and new texts.
  std::vector<std::size_t> old_line(n + 1), new_line(n + 1);
  std::size_t ol = 1, nl = 1;
  for (std::size_t t = 0; t < n; ++t) {
    old_line[t] = ol;
    new_line[t] = nl;
    if (ops[t].kind != OpKind::insert) ++ol;
    if (ops[t].kind != OpKind::remove) ++nl;
  }
  old_line[n] = ol;
  new_line[n] = nl;

  while (k < n) {
    while (k < n && ops[k].kind == OpKind::equal) ++k;
    if (k == n) break;
    std::size_t start = k >= ctx ? k - ctx : 0;
    // Extend the hunk while changes are within 2*ctx equal lines of each other.
    std::size_t end = k;
    for (;;) {
      while (end < n && ops[end].kind != OpKind::equal) ++end;
      std::size_t run = end;
      while (run < n && ops[run].kind == OpKind::equal) ++run;
      if (run < n && run - end <= 2 * ctx) {
        end = run;
        continue;
      }
      end = std::min(n, end + ctx);
      break;
    }
    std::size_t old_count = 0, new_count = 0;
    for (std::size_t t = start; t < end; ++t) {
      if (ops[t].kind != OpKind::insert) ++old_count;
      if (ops[t].kind != OpKind::remove) ++new_count;
    }
    const auto old_start = old_count ? old_line[start] : old_line[start] - 1;
    const auto new_start = new_count ? new_line[start] : new_line[start] - 1;
    out += "@@ -" + std::to_string(old_start) + "," + std::to_string(old_count) + " +" +
           std::to_string(new_start) + "," + std::to_string(new_count) + " @@\n";
    for (std::size_t t = start; t < end; ++t) {
      out.push_back(ops[t].kind == OpKind::equal ? ' ' : ops[t].kind == OpKind::insert ? '+' : '-');
      out += ops[t].text;
      if (ops[t].text.empty() || ops[t].text.back() != '\n') out += "\n\\ No newline at end of file\n";
    }
    k = end;
  }
  return out;
}

}  // namespace pocoti::diff
