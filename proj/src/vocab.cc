#include "realign/vocab.h"

#include <fstream>

#include "realign/common.h"
#include "realign/text.h"

namespace realign::policy {

namespace {
constexpr std::string_view kReserved[] = {"<bos>", "<eos>", "<pad>", "<unk>"};
}

Vocabulary::Vocabulary() {
  for (auto r : kReserved) add(std::string(r));
}

Vocabulary::Vocabulary(std::span<const std::string> words) : Vocabulary() {
  for (const auto& w : words) {
    if (index_.contains(w)) throw Error("vocabulary: duplicate or reserved token '" + w + "'");
    add(w);
  }
}

void Vocabulary::add(std::string token) {
  if (tokens_.size() >= kMaxSize) {
    throw Error("vocabulary: exceeds " + std::to_string(kMaxSize) + " tokens");
  }
  index_.emplace(token, static_cast<int>(tokens_.size()));
  tokens_.push_back(std::move(token));
}

Vocabulary Vocabulary::from_texts(std::span<const std::string> texts) {
  Vocabulary v;
  for (const auto& t : texts) {
    for (auto& w : split_whitespace(t)) {
      if (!v.index_.contains(w)) v.add(std::move(w));
    }
  }
  return v;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || static_cast<size_t>(id) >= tokens_.size()) {
    throw Error("vocabulary: id out of range: " + std::to_string(id));
  }
  return tokens_[static_cast<size_t>(id)];
}

std::optional<int> Vocabulary::find(std::string_view token) const {
  auto it = index_.find(std::string(token));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

int Vocabulary::id(std::string_view token) const { return find(token).value_or(kUnk); }

TokenIds Vocabulary::encode(std::string_view text) const {
  TokenIds ids;
  for (const auto& w : split_whitespace(text)) ids.push_back(id(w));
  return ids;
}

std::vector<std::string> Vocabulary::words(std::span<const int> ids) const {
  std::vector<std::string> out;
  for (int id : ids) {
    if (id == kEos) break;
    if (id == kBos || id == kPad) continue;
    out.push_back(token(id));
  }
  return out;
}

std::string Vocabulary::decode(std::span<const int> ids) const {
  const auto w = words(ids);
  return join(w, " ");
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  for (const auto& t : tokens_) out << t << '\n';
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::vector<std::string> all;
  std::string line;
  while (std::getline(in, line)) all.push_back(line);
  if (all.size() < 4) throw Error("vocabulary file too short: " + path.string());
  for (size_t i = 0; i < 4; ++i) {
    if (all[i] != kReserved[i]) throw Error("vocabulary file: reserved tokens out of place");
  }
  return Vocabulary(std::span(all).subspan(4));
}

}  // namespace realign::policy
