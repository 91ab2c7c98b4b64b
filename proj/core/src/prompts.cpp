#include "pocoti/prompts.hpp"

#include "pocoti/util.hpp"

namespace pocoti::prompts {

std::string PromptAsset::sha256() const { return sha256_hex(text); }

namespace {

const PromptAsset kEvaluator{"evaluator", "1", R"(You are a data-quality reviewer for a 3D object question-answering corpus.
You receive four rendered views of one point cloud, a question, and an answer.

Review the pair along three dimensions:
1. Question relevance: can the question be answered from the object's visible geometry, parts, color or function?
2. Answer accuracy: is every claim in the answer consistent with what the views show?
3. Answer completeness: does the answer give enough visual detail to support step-by-step reasoning?

Decision rules:
- KEEP: the question is relevant and the answer is accurate and complete.
- IMPROVE: the question is relevant, but the answer contains a hallucinated detail or lacks visual detail. Provide a corrected answer.
- INVALID: the question does not depend on the object (for example general knowledge or trivia) or is logically unsound.

Question:
{instruction}

Answer:
{answer}

Reply with exactly one block in this format (use <<< and >>> for multi-line values):
---BEGIN RESULT---
label: KEEP | IMPROVE | INVALID
relevance_reason: <one sentence>
accuracy_reason: <one sentence>
completeness_reason: <one sentence>
refined_answer: <corrected answer, only when label is IMPROVE>
---END RESULT---
)"};

const PromptAsset kReferenceRefinement{"reference_refinement", "1", R"(You are repairing a rejected question-answer pair for a 3D object.
You receive four rendered views of the object, the rejected pair, and verified pairs for the same object.

Verified pairs:
{references}

Rejected question:
{instruction}

Rejected answer:
{answer}

First re-assess the rejected question using the views and the verified pairs as context.
- If the question is reasonable for this object, write a correct answer to it and set decision to answer_refined.
- Otherwise write a new question about a visible property of the object and its answer, and set decision to pair_regenerated.
A new pair must differ from every verified pair above; do not restate or reword them.
{distinctness_note}
Reply with exactly one block:
---BEGIN RESULT---
decision: answer_refined | pair_regenerated
instruction: <the question; repeat the rejected question for answer_refined>
answer: <the answer>
rationale: <one sentence>
---END RESULT---
)"};

const PromptAsset kInitialCot{"cot_prompt_p0", "1", R"(Role: you explain how a correct answer about a 3D object follows from what can be seen.

Input: four rendered views of a point cloud, a question, and the ground-truth answer.

Reasoning constraints:
- Write 3 to 6 numbered steps.
- Each step states one observation from the views or one inference from earlier steps.
- The final step must arrive at the given answer without contradicting it.
- Do not mention that the answer was provided to you.

Output format:
---BEGIN RESULT---
reasoning: <<<
Step 1: ...
Step 2: ...
>>>
answer: <the ground-truth answer, unchanged>
---END RESULT---
)"};

const PromptAsset kPromptRefiner{"prompt_refiner", "1", R"(You maintain the instructions given to a vision-language model that writes step-by-step reasoning for 3D object questions.

Current instructions:
<<<INSTRUCTIONS
{current_prompt}
INSTRUCTIONS

Outputs produced with these instructions on a sample batch ({batch_size} snippets, {parse_failures} failed to parse):
{batch}

Identify recurring failure patterns (hallucinated parts, skipped observations, format errors, reasoning that does not reach the answer).
Propose a revised version of the instructions that fixes them. Keep everything that works; change as little as needed.
If no change is warranted, return the current instructions unchanged.

Reply with exactly one block:
---BEGIN RESULT---
prompt: <<<PROMPT
<full revised instructions>
PROMPT
rationale: <what changed and why>
---END RESULT---
)"};

const PromptAsset kJudgeClosed{"judge_closed_set", "1", R"(A model was asked to identify a 3D object. Map its response to exactly one category from the list below.
If none fits, choose the closest category anyway.

Categories:
{label_set}

Model response:
{response}

Reply with exactly one block:
---BEGIN RESULT---
label: <one category, copied exactly>
---END RESULT---
)"};

const PromptAsset kJudgeOpen{"judge_open_ended", "1", R"(Decide whether a model's description of a 3D object refers to the same object category as the reference.

Reference:
{ground_truth}

Model response:
{response}

Reply with exactly one block:
---BEGIN RESULT---
verdict: T | F
---END RESULT---
)"};

const PromptAsset kJudgeCaption{"judge_caption", "1", R"(Score how well a generated caption of a 3D object matches a reference caption.
Consider object identity, shape, parts, color and material. Ignore style and length.
Score from 0 (unrelated) to 100 (same information).

Reference caption:
{reference}

Generated caption:
{candidate}

Reply with exactly one block:
---BEGIN RESULT---
score: <number from 0 to 100>
---END RESULT---
)"};

const PromptAsset kReferenceCaption{"reference_caption", "1", R"(You see four rendered views of one 3D object.
Write one brief caption (one sentence) naming the object and its most visible attributes.

Reply with exactly one block:
---BEGIN RESULT---
caption: <caption>
---END RESULT---
)"};

}  // namespace

const PromptAsset& evaluator_prompt() { return kEvaluator; }
const PromptAsset& reference_refinement_prompt() { return kReferenceRefinement; }
const PromptAsset& initial_cot_prompt() { return kInitialCot; }
const PromptAsset& prompt_refiner_prompt() { return kPromptRefiner; }
const PromptAsset& judge_closed_set_prompt() { return kJudgeClosed; }
const PromptAsset& judge_open_ended_prompt() { return kJudgeOpen; }
const PromptAsset& judge_caption_prompt() { return kJudgeCaption; }
const PromptAsset& reference_caption_prompt() { return kReferenceCaption; }

std::vector<const PromptAsset*> all_assets() {
  return {&kEvaluator,   &kReferenceRefinement, &kInitialCot, &kPromptRefiner,
          &kJudgeClosed, &kJudgeOpen,           &kJudgeCaption, &kReferenceCaption};
}

std::string fill(std::string_view templ, const std::map<std::string, std::string>& values) {
  std::string out;
  out.reserve(templ.size());
  std::size_t pos = 0;
  while (pos < templ.size()) {
    const auto open = templ.find('{', pos);
    if (open == std::string_view::npos) {
      out.append(templ.substr(pos));
      break;
    }
    out.append(templ.substr(pos, open - pos));
    const auto close = templ.find('}', open + 1);
    if (close == std::string_view::npos) {
      out.append(templ.substr(open));
      break;
    }
    const auto name = std::string(templ.substr(open + 1, close - open - 1));
    if (auto it = values.find(name); it != values.end()) {
      out.append(it->second);
      pos = close + 1;
    } else {
      out.push_back('{');
      pos = open + 1;
    }
  }
  return out;
}

}  // namespace pocoti::prompts
