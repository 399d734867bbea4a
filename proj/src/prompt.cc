#include "realign/prompt.h"

#include "realign/common.h"

namespace realign::policy {

namespace {

constexpr std::string_view kTextLead = "Here is some text: ";
constexpr std::string_view kRewriteLead =
    " Here is a rewrite of the text that is more appropriate and makes only minimal changes: ";

constexpr std::string_view kInstructionHead =
    "Below is an instruction that describes a task, paired with an input that provides "
    "further context. Write a response that appropriately completes the request.\n"
    "\n"
    "### Instruction:\n"
    "Rewrite the following argument to be more appropriate and make only minimal changes "
    "to the original argument.\n"
    "\n"
    "### Input:\n";
constexpr std::string_view kInstructionTail =
    "\n"
    "\n"
    "### Response:\n";

std::string rewrite_block(std::string_view argument) {
  std::string out(kTextLead);
  out += argument;
  out += kRewriteLead;
  return out;
}

}  // namespace

std::string_view to_string(PromptMode m) {
  switch (m) {
    case PromptMode::zero_shot: return "zero_shot";
    case PromptMode::few_shot: return "few_shot";
    case PromptMode::instruction: return "instruction";
  }
  return "";
}

PromptMode parse_prompt_mode(std::string_view s) {
  if (s == "zero_shot" || s == "zero-shot") return PromptMode::zero_shot;
  if (s == "few_shot" || s == "few-shot") return PromptMode::few_shot;
  if (s == "instruction") return PromptMode::instruction;
  throw Error("unknown prompt mode: " + std::string(s));
}

std::string render_prompt(std::string_view argument, PromptMode mode,
                          std::span<const Exemplar> shots) {
  switch (mode) {
    case PromptMode::zero_shot:
      return rewrite_block(argument);
    case PromptMode::few_shot: {
      if (shots.empty()) throw Error("render_prompt: few-shot mode needs at least one exemplar");
      std::string out;
      for (const auto& s : shots) {
        out += rewrite_block(s.argument);
        out += s.rewrite;
        out += "\n\n";
      }
      out += rewrite_block(argument);
      return out;
    }
    case PromptMode::instruction: {
      std::string out(kInstructionHead);
      out += argument;
      out += kInstructionTail;
      return out;
    }
  }
  throw Error("render_prompt: invalid mode");
}

}  // namespace realign::policy
