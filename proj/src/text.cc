#include "realign/text.h"

#include <unicode/normalizer2.h>
#include <unicode/uchar.h>
#include <unicode/unistr.h>
#include <unicode/utf8.h>

#include "realign/common.h"

namespace realign {

namespace {

// Calls f(code_point, byte_offset, byte_length) for each scalar.
template <typename F>
void for_each_scalar(std::string_view s, F&& f) {
  const auto* bytes = reinterpret_cast<const uint8_t*>(s.data());
  const int32_t length = static_cast<int32_t>(s.size());
  int32_t i = 0;
  while (i < length) {
    const int32_t start = i;
    UChar32 c;
    U8_NEXT(bytes, i, length, c);
    if (c < 0) throw Error("malformed UTF-8 at byte " + std::to_string(start));
    f(c, static_cast<size_t>(start), static_cast<size_t>(i - start));
  }
}

}  // namespace

std::vector<std::string> split_whitespace(std::string_view utf8) {
  std::vector<std::string> tokens;
  size_t begin = 0;
  bool in_token = false;
  for_each_scalar(utf8, [&](UChar32 c, size_t off, size_t) {
    const bool space = u_isUWhiteSpace(c);
    if (space && in_token) {
      tokens.emplace_back(utf8.substr(begin, off - begin));
      in_token = false;
    } else if (!space && !in_token) {
      begin = off;
      in_token = true;
    }
  });
  if (in_token) tokens.emplace_back(utf8.substr(begin));
  return tokens;
}

size_t count_words(std::string_view utf8) {
  size_t n = 0;
  bool in_token = false;
  for_each_scalar(utf8, [&](UChar32 c, size_t, size_t) {
    const bool space = u_isUWhiteSpace(c);
    if (!space && !in_token) ++n;
    in_token = !space;
  });
  return n;
}

size_t count_scalars(std::string_view utf8) {
  size_t n = 0;
  for_each_scalar(utf8, [&](UChar32, size_t, size_t) { ++n; });
  return n;
}

std::string normalize_topic(std::string_view utf8) {
  UErrorCode status = U_ZERO_ERROR;
  const icu::Normalizer2* nfc = icu::Normalizer2::getNFCInstance(status);
  if (U_FAILURE(status)) throw Error("ICU NFC normalizer unavailable");
  icu::UnicodeString s = icu::UnicodeString::fromUTF8(
      icu::StringPiece(utf8.data(), static_cast<int32_t>(utf8.size())));
  icu::UnicodeString normalized = nfc->normalize(s, status);
  if (U_FAILURE(status)) throw Error("NFC normalization failed");
  normalized.foldCase();
  normalized.trim();
  std::string out;
  normalized.toUTF8String(out);
  return out;
}

std::string join(std::span<const std::string> parts, std::string_view sep) {
  std::string out;
  for (size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

}  // namespace realign
