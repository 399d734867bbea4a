#pragma once

#include <array>
#include <cstddef>
#include <map>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace realign::scorers {

using Tokens = std::vector<std::string>;

// A property estimate in [0, 1].
class PropertyScore {
 public:
  explicit PropertyScore(double value);
  double value() const { return value_; }

 private:
  double value_;
};

enum class ScorerKind { appropriateness, similarity, fluency };

std::string_view to_string(ScorerKind k);
ScorerKind parse_scorer_kind(std::string_view s);

// Names a scorer and pins its parameters; `version` is the SHA-256 of the
// canonical parameter dump, so equal versions imply equal scores.
struct ScorerDescriptor {
  ScorerKind kind = ScorerKind::similarity;
  std::string name;
  nlohmann::json parameters;
  std::string version;

  static ScorerDescriptor make(ScorerKind kind, std::string name, nlohmann::json parameters);
  nlohmann::json to_json() const;
  // Throws if the stored version does not match the parameters.
  static ScorerDescriptor from_json(const nlohmann::json& j);
};

// ---------------------------------------------------------------------------
// Appropriateness

inline constexpr size_t kNumAppFeatures = 4;
using FeatureVector = std::array<double, kNumAppFeatures>;

// Feature order: banned-lexicon frequency, all-caps token ratio, repeated
// `!`/`?` token rate, mean sentence length z-score.
class AppropriatenessModel {
 public:
  AppropriatenessModel() = default;
  AppropriatenessModel(std::set<std::string> lexicon, FeatureVector weights, double bias,
                       double length_mean, double length_std);

  // Zero vector for empty text.
  FeatureVector features(std::span<const std::string> tokens) const;
  PropertyScore score(std::span<const std::string> tokens) const;
  double score_text(std::string_view text) const;

  const std::set<std::string>& lexicon() const { return lexicon_; }
  const FeatureVector& weights() const { return weights_; }
  double bias() const { return bias_; }
  double length_mean() const { return length_mean_; }
  double length_std() const { return length_std_; }

  // True when the token (lowercased, edge punctuation stripped) is banned.
  bool is_banned(std::string_view token) const;

  nlohmann::json parameters() const;
  ScorerDescriptor descriptor() const;
  static AppropriatenessModel from_parameters(const nlohmann::json& p);

 private:
  std::set<std::string> lexicon_;
  FeatureVector weights_{};
  double bias_ = 0.0;
  double length_mean_ = 0.0;
  double length_std_ = 1.0;
};

struct LabeledText {
  Tokens tokens;
  bool appropriate = true;
};

struct ClassifierTrainingConfig {
  int iterations = 3000;
  double learning_rate = 0.5;
  double l2 = 1e-4;
  FeatureVector initial_weights{};
  double initial_bias = 0.0;
};

// Full-batch gradient descent on the L2-regularized mean log-loss. The
// sentence-length standardization is estimated from the training texts.
AppropriatenessModel fit_appropriateness_classifier(std::span<const LabeledText> labeled,
                                                    std::set<std::string> lexicon,
                                                    const ClassifierTrainingConfig& config);

std::set<std::string> read_lexicon(const std::string& path);

double logistic(double z);

// ---------------------------------------------------------------------------
// Similarity

// Token-level multiset F1; 1 for two empty sequences, 0 if exactly one is empty.
PropertyScore similarity_score(std::span<const std::string> x, std::span<const std::string> y);

ScorerDescriptor token_f1_descriptor();

// ---------------------------------------------------------------------------
// Fluency

inline constexpr std::string_view kBos = "<s>";
inline constexpr std::string_view kEos = "</s>";
inline constexpr std::string_view kUnk = "<unk>";

// Conditional next-token model used for perplexity.
class FluencyModel {
 public:
  virtual ~FluencyModel() = default;
  // P(next | history); history is the unpadded prefix of the text.
  virtual double probability(std::span<const std::string> history,
                             const std::string& next) const = 0;
};

// Additively smoothed n-gram model over a closed vocabulary that always holds
// the end-of-sequence and unknown tokens:
//   P(w | h) = (c(h, w) + delta) / (c(h) + delta * V).
class NGramLM : public FluencyModel {
 public:
  NGramLM(int order, double delta, std::set<std::string> vocabulary);

  static NGramLM train(std::span<const Tokens> corpus, int order = 3, double delta = 0.1);

  void add_sentence(std::span<const std::string> tokens);

  double probability(std::span<const std::string> history,
                     const std::string& next) const override;

  int order() const { return order_; }
  double delta() const { return delta_; }
  size_t vocabulary_size() const { return vocabulary_.size(); }
  const std::set<std::string>& vocabulary() const { return vocabulary_; }

  nlohmann::json parameters() const;
  ScorerDescriptor descriptor() const;
  static NGramLM from_parameters(const nlohmann::json& p);

 private:
  std::string map_token(std::string_view t) const;
  std::string context_key(std::span<const std::string> history) const;

  int order_;
  double delta_;
  std::set<std::string> vocabulary_;
  // context key -> (next token -> count)
  std::map<std::string, std::map<std::string, double>> counts_;
  std::map<std::string, double> context_totals_;
};

// exp of the mean negative log-likelihood per token, end-of-sequence included.
// Throws on empty text.
double perplexity(std::span<const std::string> text, const FluencyModel& lm);

}  // namespace realign::scorers
