#pragma once

#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace pocoti::prompts {

/// Versioned prompt text shipped with the library. The hash pins the exact
/// text in run manifests.
struct PromptAsset {
  std::string name;
  std::string version;
  std::string text;

  std::string sha256() const;
};

const PromptAsset& evaluator_prompt();
const PromptAsset& reference_refinement_prompt();
const PromptAsset& initial_cot_prompt();  // P_0
const PromptAsset& prompt_refiner_prompt();
const PromptAsset& judge_closed_set_prompt();
const PromptAsset& judge_open_ended_prompt();
const PromptAsset& judge_caption_prompt();
const PromptAsset& reference_caption_prompt();

std::vector<const PromptAsset*> all_assets();

/// Replaces `{name}` placeholders in one pass; inserted text is not rescanned.
/// Unknown placeholders are left verbatim.
std::string fill(std::string_view templ, const std::map<std::string, std::string>& values);

/// Keys of ModelRequest::context set by pipeline call sites.
namespace ctx {
inline constexpr const char* task = "task";
inline constexpr const char* sample_id = "sample_id";
inline constexpr const char* cloud_id = "cloud_id";
inline constexpr const char* instruction = "instruction";
inline constexpr const char* answer = "answer";
inline constexpr const char* attempt = "attempt";
inline constexpr const char* references = "references";
inline constexpr const char* current_prompt = "current_prompt";
inline constexpr const char* response = "response";
inline constexpr const char* ground_truth = "ground_truth";
inline constexpr const char* label_set = "label_set";
inline constexpr const char* candidate = "candidate";
inline constexpr const char* reference = "reference";
inline constexpr const char* prompt_type = "prompt_type";
}  // namespace ctx

namespace task {
inline constexpr const char* evaluate = "evaluate";
inline constexpr const char* verify_improved = "verify_improved";
inline constexpr const char* refine_invalid = "refine_invalid";
inline constexpr const char* cot = "cot";
inline constexpr const char* refine_prompt = "refine_prompt";
inline constexpr const char* judge_closed = "judge_closed";
inline constexpr const char* judge_open = "judge_open";
inline constexpr const char* judge_caption = "judge_caption";
inline constexpr const char* caption_gt = "caption_gt";
inline constexpr const char* subject = "subject";
}  // namespace task

}  // namespace pocoti::prompts
