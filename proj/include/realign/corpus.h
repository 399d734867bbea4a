#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace realign::corpus {

enum class Genre { review, discussion, qa };
enum class AppLabel { appropriate, inappropriate };
enum class Split { train, validation, test };

inline constexpr double kAppropriatenessThreshold = 0.5;
inline constexpr size_t kMinWords = 10;
inline constexpr size_t kMaxWords = 220;
inline constexpr size_t kMaxChars = 1100;

struct ArgumentRecord {
  std::string id;
  std::string text;
  std::string issue;
  Genre source = Genre::discussion;
  size_t word_count = 0;
  size_t char_count = 0;
  std::optional<double> app_score;
  std::optional<AppLabel> app_label;
  std::optional<Split> split;

  // Builds a record with word and character counts derived from `text`.
  static ArgumentRecord make(std::string id, std::string text, std::string issue,
                             Genre source);

  bool operator==(const ArgumentRecord&) const = default;
};

// Scores below the threshold are inappropriate; exactly 0.5 is appropriate.
AppLabel label_for(double app_score);

bool passes_length_filter(const ArgumentRecord& r);

std::vector<ArgumentRecord> filter_arguments(std::span<const ArgumentRecord> records);

std::vector<ArgumentRecord> remove_topic_leakage(
    std::span<const ArgumentRecord> records, const std::set<std::string>& reserved_topics);

using TextClassifier = std::function<double(std::string_view text)>;

// Throws if the classifier leaves [0, 1].
std::vector<ArgumentRecord> soft_label(std::span<const ArgumentRecord> records,
                                       const TextClassifier& classifier);

// Stratified by app_label (unlabeled records form their own stratum).
// Split sizes are round(0.7 n), round(0.1 n) and the remainder.
std::vector<ArgumentRecord> split_dataset(std::span<const ArgumentRecord> records,
                                          uint64_t seed);

std::vector<ArgumentRecord> with_split(std::span<const ArgumentRecord> records, Split s);

std::string_view to_string(Genre g);
std::string_view to_string(AppLabel l);
std::string_view to_string(Split s);
Genre parse_genre(std::string_view s);
AppLabel parse_label(std::string_view s);
Split parse_split(std::string_view s);

nlohmann::ordered_json to_json(const ArgumentRecord& r);
ArgumentRecord record_from_json(const nlohmann::json& j);

// Blank lines and lines starting with '#' are skipped.
std::vector<ArgumentRecord> read_jsonl(const std::filesystem::path& path);
void write_jsonl(const std::filesystem::path& path, std::span<const ArgumentRecord> records);
std::string to_jsonl(std::span<const ArgumentRecord> records);

// Reads a newline-delimited list; blank lines are skipped.
std::vector<std::string> read_lines(const std::filesystem::path& path);

}  // namespace realign::corpus
