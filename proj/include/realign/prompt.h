#pragma once

#include <span>
#include <string>
#include <string_view>
#include <utility>

namespace realign::policy {

enum class PromptMode { zero_shot, few_shot, instruction };

struct Exemplar {
  std::string argument;
  std::string rewrite;
};

std::string_view to_string(PromptMode m);
PromptMode parse_prompt_mode(std::string_view s);

// Renders the rewriting prompt for `argument`. Few-shot mode prepends one
// completed zero-shot block per exemplar, each followed by a blank line, and
// requires at least one exemplar.
std::string render_prompt(std::string_view argument, PromptMode mode,
                          std::span<const Exemplar> shots = {});

}  // namespace realign::policy
