#pragma once

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace realign::policy {

using TokenIds = std::vector<int>;

// Word-level vocabulary. Reserved tokens occupy ids 0-3.
class Vocabulary {
 public:
  static constexpr int kBos = 0;
  static constexpr int kEos = 1;
  static constexpr int kPad = 2;
  static constexpr int kUnk = 3;
  static constexpr size_t kMaxSize = 512;

  Vocabulary();
  // `words` must not repeat or contain reserved spellings.
  explicit Vocabulary(std::span<const std::string> words);

  // Collects whitespace tokens from `texts` in first-seen order.
  static Vocabulary from_texts(std::span<const std::string> texts);

  size_t size() const { return tokens_.size(); }
  const std::vector<std::string>& tokens() const { return tokens_; }
  const std::string& token(int id) const;
  std::optional<int> find(std::string_view token) const;
  // UNK for unknown tokens.
  int id(std::string_view token) const;

  TokenIds encode(std::string_view text) const;
  // Joins tokens with single spaces; stops at EOS and skips BOS/PAD.
  std::string decode(std::span<const int> ids) const;
  std::vector<std::string> words(std::span<const int> ids) const;

  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);

  bool operator==(const Vocabulary& o) const { return tokens_ == o.tokens_; }

 private:
  void add(std::string token);

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

}  // namespace realign::policy
