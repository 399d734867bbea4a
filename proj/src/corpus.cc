#include "realign/corpus.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "realign/common.h"
#include "realign/random.h"
#include "realign/text.h"

namespace realign::corpus {

ArgumentRecord ArgumentRecord::make(std::string id, std::string text, std::string issue,
                                    Genre source) {
  ArgumentRecord r;
  r.id = std::move(id);
  r.word_count = count_words(text);
  r.char_count = count_scalars(text);
  r.text = std::move(text);
  r.issue = std::move(issue);
  r.source = source;
  return r;
}

AppLabel label_for(double app_score) {
  return app_score < kAppropriatenessThreshold ? AppLabel::inappropriate
                                               : AppLabel::appropriate;
}

bool passes_length_filter(const ArgumentRecord& r) {
  return r.word_count >= kMinWords && r.word_count <= kMaxWords && r.char_count <= kMaxChars;
}

std::vector<ArgumentRecord> filter_arguments(std::span<const ArgumentRecord> records) {
  std::vector<ArgumentRecord> out;
  std::copy_if(records.begin(), records.end(), std::back_inserter(out), passes_length_filter);
  return out;
}

std::vector<ArgumentRecord> remove_topic_leakage(std::span<const ArgumentRecord> records,
                                                 const std::set<std::string>& reserved_topics) {
  std::set<std::string> reserved;
  for (const auto& t : reserved_topics) reserved.insert(normalize_topic(t));
  std::vector<ArgumentRecord> out;
  for (const auto& r : records) {
    if (!reserved.contains(normalize_topic(r.issue))) out.push_back(r);
  }
  return out;
}

std::vector<ArgumentRecord> soft_label(std::span<const ArgumentRecord> records,
                                       const TextClassifier& classifier) {
  std::vector<ArgumentRecord> out(records.begin(), records.end());
  for (auto& r : out) {
    const double s = classifier(r.text);
    if (!(s >= 0.0 && s <= 1.0)) {
      throw Error("soft_label: classifier returned " + std::to_string(s) + " for record " + r.id);
    }
    r.app_score = s;
    r.app_label = label_for(s);
  }
  return out;
}

std::vector<ArgumentRecord> split_dataset(std::span<const ArgumentRecord> records,
                                          uint64_t seed) {
  if (records.empty()) throw Error("split_dataset: empty input");
  const size_t n = records.size();

  // Shuffle within each stratum, then merge strata by fractional rank so
  // every prefix of the merged order holds each stratum in proportion.
  std::map<int, std::vector<size_t>> strata;
  for (size_t i = 0; i < n; ++i) {
    const int key = records[i].app_label ? static_cast<int>(*records[i].app_label) : -1;
    strata[key].push_back(i);
  }
  struct Slot {
    double key;
    int stratum;
    size_t index;
  };
  std::vector<Slot> order;
  order.reserve(n);
  Rng rng(seed);
  for (auto& [stratum, members] : strata) {
    rng.shuffle(members);
    const double m = static_cast<double>(members.size());
    for (size_t r = 0; r < members.size(); ++r) {
      order.push_back({(static_cast<double>(r) + 0.5) / m, stratum, members[r]});
    }
  }
  std::sort(order.begin(), order.end(), [](const Slot& a, const Slot& b) {
    return a.key != b.key ? a.key < b.key : a.stratum < b.stratum;
  });

  const auto n_train = static_cast<size_t>(std::llround(0.7 * static_cast<double>(n)));
  const auto n_val = std::min(n - n_train,
                              static_cast<size_t>(std::llround(0.1 * static_cast<double>(n))));
  std::vector<ArgumentRecord> out(records.begin(), records.end());
  for (size_t pos = 0; pos < n; ++pos) {
    const Split s = pos < n_train ? Split::train
                    : pos < n_train + n_val ? Split::validation
                                            : Split::test;
    out[order[pos].index].split = s;
  }
  return out;
}

std::vector<ArgumentRecord> with_split(std::span<const ArgumentRecord> records, Split s) {
  std::vector<ArgumentRecord> out;
  for (const auto& r : records) {
    if (r.split == s) out.push_back(r);
  }
  return out;
}

std::string_view to_string(Genre g) {
  switch (g) {
    case Genre::review: return "review";
    case Genre::discussion: return "discussion";
    case Genre::qa: return "qa";
  }
  return "";
}

std::string_view to_string(AppLabel l) {
  return l == AppLabel::appropriate ? "appropriate" : "inappropriate";
}

std::string_view to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::validation: return "validation";
    case Split::test: return "test";
  }
  return "";
}

Genre parse_genre(std::string_view s) {
  if (s == "review") return Genre::review;
  if (s == "discussion") return Genre::discussion;
  if (s == "qa") return Genre::qa;
  throw Error("unknown source genre: " + std::string(s));
}

AppLabel parse_label(std::string_view s) {
  if (s == "appropriate") return AppLabel::appropriate;
  if (s == "inappropriate") return AppLabel::inappropriate;
  throw Error("unknown app_label: " + std::string(s));
}

Split parse_split(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "validation") return Split::validation;
  if (s == "test") return Split::test;
  throw Error("unknown split: " + std::string(s));
}

nlohmann::ordered_json to_json(const ArgumentRecord& r) {
  nlohmann::ordered_json j;
  j["id"] = r.id;
  j["text"] = r.text;
  j["issue"] = r.issue;
  j["source"] = to_string(r.source);
  j["word_count"] = r.word_count;
  j["char_count"] = r.char_count;
  if (r.app_score) j["app_score"] = *r.app_score;
  if (r.app_label) j["app_label"] = to_string(*r.app_label);
  if (r.split) j["split"] = to_string(*r.split);
  return j;
}

ArgumentRecord record_from_json(const nlohmann::json& j) {
  try {
    auto r = ArgumentRecord::make(j.at("id").get<std::string>(), j.at("text").get<std::string>(),
                                  j.value("issue", std::string{}),
                                  parse_genre(j.value("source", std::string{"discussion"})));
    if (j.contains("app_score") && !j["app_score"].is_null()) {
      r.app_score = j["app_score"].get<double>();
      if (!(*r.app_score >= 0.0 && *r.app_score <= 1.0)) {
        throw Error("app_score outside [0,1] for record " + r.id);
      }
      r.app_label = label_for(*r.app_score);
    }
    if (j.contains("app_label") && !j["app_label"].is_null()) {
      const AppLabel l = parse_label(j["app_label"].get<std::string>());
      if (r.app_label && *r.app_label != l) {
        throw Error("app_label disagrees with app_score for record " + r.id);
      }
      r.app_label = l;
    }
    if (j.contains("split") && !j["split"].is_null()) {
      r.split = parse_split(j["split"].get<std::string>());
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw Error(std::string("malformed argument record: ") + e.what());
  }
}

std::string to_jsonl(std::span<const ArgumentRecord> records) {
  std::string out;
  for (const auto& r : records) {
    out += to_json(r).dump();
    out += '\n';
  }
  return out;
}

std::vector<ArgumentRecord> read_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::vector<ArgumentRecord> out;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos || line[0] == '#') continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw Error(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
    out.push_back(record_from_json(j));
  }
  return out;
}

void write_jsonl(const std::filesystem::path& path, std::span<const ArgumentRecord> records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << to_jsonl(records);
}

std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    out.push_back(line);
  }
  return out;
}

}  // namespace realign::corpus
