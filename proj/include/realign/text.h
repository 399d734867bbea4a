#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace realign {

// Maximal nonempty runs of non-whitespace (Unicode White_Space) scalars.
std::vector<std::string> split_whitespace(std::string_view utf8);

size_t count_words(std::string_view utf8);

// Number of Unicode scalar values. Throws on malformed UTF-8.
size_t count_scalars(std::string_view utf8);

// NFC normalization, full case folding, then whitespace trimming.
std::string normalize_topic(std::string_view utf8);

std::string join(std::span<const std::string> parts, std::string_view sep);

}  // namespace realign
