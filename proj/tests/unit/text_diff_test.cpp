#include <gtest/gtest.h>

#include <random>

#include "fixtures.hpp"
#include "pocoti/text_diff.hpp"
#include "pocoti/util.hpp"

namespace pocoti::diff {
namespace {

TEST(Diff, OneInsertedLine) {
  const std::string a = "line one\nline two\n";
  const std::string b = "line one\nline two\n- new constraint\n";
  const auto ops = diff_lines(a, b);
  EXPECT_EQ(count(ops, OpKind::insert), 1u);
  EXPECT_EQ(count(ops, OpKind::remove), 0u);
  EXPECT_EQ(apply_diff(a, ops), b);
}

TEST(Diff, IdenticalTextsHaveNoEdits) {
  const std::string a = "x\ny\nz";
  const auto ops = diff_lines(a, a);
  EXPECT_EQ(count(ops, OpKind::equal), 3u);
  EXPECT_EQ(count(ops, OpKind::insert) + count(ops, OpKind::remove), 0u);
}

TEST(Diff, MissingFinalNewlineIsAnEdit) {
  const auto ops = diff_lines("a\nb", "a\nb\n");
  EXPECT_EQ(apply_diff("a\nb", ops), "a\nb\n");
  EXPECT_EQ(count(ops, OpKind::remove), 1u);
  EXPECT_EQ(count(ops, OpKind::insert), 1u);
}

TEST(Diff, ApplyRejectsForeignOps) {
  const auto ops = diff_lines("a\nb\n", "a\nc\n");
  EXPECT_THROW(apply_diff("zzz\n", ops), ValidationError);
  EXPECT_THROW(apply_diff("a\nb\nextra\n", ops), ValidationError);
}

TEST(Diff, MinimalEditCountMatchesLcsOracle) {
  // Independent LCS length via a rolling DP over line vectors.
  auto lcs = [](const std::vector<std::string>& x, const std::vector<std::string>& y) {
    std::vector<std::size_t> prev(y.size() + 1, 0), cur(y.size() + 1, 0);
    for (std::size_t i = 1; i <= x.size(); ++i) {
      for (std::size_t j = 1; j <= y.size(); ++j) {
        cur[j] = x[i - 1] == y[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
      }
      std::swap(prev, cur);
    }
    return prev[y.size()];
  };
  std::mt19937_64 rng(9);
  const std::vector<std::string> vocab{"a\n", "b\n", "c\n", "d\n", "e\n"};
  for (int t = 0; t < 300; ++t) {
    std::string from, to;
    const auto n = rng() % 12, m = rng() % 12;
    for (std::size_t i = 0; i < n; ++i) from += vocab[rng() % vocab.size()];
    for (std::size_t i = 0; i < m; ++i) to += vocab[rng() % vocab.size()];
    const auto ops = diff_lines(from, to);
    ASSERT_EQ(apply_diff(from, ops), to);
    EXPECT_EQ(count(ops, OpKind::equal), lcs(split_keep_newlines(from), split_keep_newlines(to)));
  }
}

TEST(Diff, RandomRoundTripProperty) {
  std::mt19937_64 rng(17);
  for (int t = 0; t < 500; ++t) {
    const auto from = testing::random_text(rng, 200);
    auto lines = split_keep_newlines(from);
    // Mutate: delete, duplicate and insert random lines.
    for (int k = 0; k < 4 && !lines.empty(); ++k) {
      const auto i = rng() % lines.size();
      switch (rng() % 3) {
        case 0: lines.erase(lines.begin() + static_cast<long>(i)); break;
        case 1: lines.insert(lines.begin() + static_cast<long>(i), lines[i]); break;
        default: lines.insert(lines.begin() + static_cast<long>(i), testing::random_text(rng, 20, false) + "\n");
      }
    }
    std::string to;
    for (const auto& l : lines) to += l;
    const auto ops = diff_lines(from, to);
    ASSERT_EQ(apply_diff(from, ops), to);
    std::string rebuilt_from;
    for (const auto& op : ops) {
      if (op.kind != OpKind::insert) rebuilt_from += op.text;
    }
    EXPECT_EQ(rebuilt_from, from);
  }
}

TEST(Diff, UnifiedFormat) {
  const auto ops = diff_lines("a\nb\nc\n", "a\nB\nc\n");
  const auto u = unified_diff(ops, "p0", "p1");
  EXPECT_NE(u.find("--- p0\n+++ p1\n"), std::string::npos);
  EXPECT_NE(u.find("@@ -1,3 +1,3 @@"), std::string::npos);
  EXPECT_NE(u.find("-b\n"), std::string::npos);
  EXPECT_NE(u.find("+B\n"), std::string::npos);
  EXPECT_NE(u.find(" a\n"), std::string::npos);
  EXPECT_EQ(unified_diff(diff_lines("x\n", "x\n"), "a", "b"), "--- a\n+++ b\n");
}

}  // namespace
}  // namespace pocoti::diff
