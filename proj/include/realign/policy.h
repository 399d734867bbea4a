#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "realign/model.h"
#include "realign/prompt.h"
#include "realign/random.h"
#include "realign/vocab.h"

namespace realign::policy {

struct GenerationConfig {
  double top_p = 0.95;
  double temperature = 1.0;
  int max_new_tokens = 32;
  uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static GenerationConfig from_json(const nlohmann::json& j);
};

// Nucleus sampling of one token: temperature-scaled softmax, then the
// smallest prefix of the probability-sorted tokens whose mass reaches top_p.
// Tokens tied with the last admitted probability are admitted too.
int sample_next(const RowVector& logits, double top_p, double temperature, Rng& rng);

// Token ids admitted by the nucleus, in decreasing probability.
std::vector<int> nucleus(const RowVector& probs, double top_p);

struct SampledResponse {
  TokenIds tokens;           // includes EOS when generation stopped on it
  std::vector<double> logprobs;  // log softmax at temperature 1 for each token
  std::vector<double> values;    // value estimate at each generating position
};

// Autoregressive sampling after `prompt` until EOS or max_new_tokens.
SampledResponse sample_with_stats(const PolicyParams& params, std::span<const int> prompt,
                                  const GenerationConfig& config, Rng& rng);
TokenIds sample_response(const PolicyParams& params, std::span<const int> prompt,
                         const GenerationConfig& config);

// Element t is log softmax(logits(prompt ++ response[..t]))[response[t]].
std::vector<double> sequence_logprob(const PolicyParams& params, std::span<const int> prompt,
                                     std::span<const int> response);

// [BOS] followed by the tokenized rendered prompt.
TokenIds encode_prompt(const Vocabulary& vocab, std::string_view argument, PromptMode mode,
                       std::span<const Exemplar> shots = {});

struct PolicyCheckpoint {
  PolicyParams params;
  Vocabulary vocab;
  int64_t step = 0;
  std::string config_hash;
  std::optional<nlohmann::json> eval_scores;

  void save(const std::filesystem::path& path) const;
  static PolicyCheckpoint load(const std::filesystem::path& path);
  std::string serialize() const;
  static PolicyCheckpoint deserialize(std::string_view bytes);
  // SHA-256 of serialize().
  std::string digest() const;
};

// ---------------------------------------------------------------------------
// Maximum-likelihood pretraining

struct PretrainPair {
  TokenIds prompt;  // starts with BOS
  TokenIds target;  // EOS is appended when missing
};

struct PretrainConfig {
  int steps = 1000;
  int batch_size = 8;
  double learning_rate = 1e-3;
  double final_learning_rate = 1e-4;
  double holdout_fraction = 0.1;  // 0 evaluates on the training pairs
  int eval_every = 100;
  double max_grad_norm = 1.0;
  uint64_t seed = 0;

  nlohmann::json to_json() const;
  static PretrainConfig from_json(const nlohmann::json& j);
};

struct PretrainResult {
  PolicyCheckpoint checkpoint;  // best held-out loss
  double initial_loss = 0.0;
  double best_loss = 0.0;
  std::vector<std::pair<int, double>> history;  // (step, held-out loss)
};

// Mean cross-entropy per target token (nats).
double mle_loss(const PolicyParams& params, std::span<const PretrainPair> pairs);

// Accumulates the gradient of the summed target-token cross-entropy into
// `grads` and returns (summed loss, number of target tokens).
std::pair<double, size_t> mle_loss_and_grad(const PolicyParams& params, const PretrainPair& pair,
                                            PolicyParams& grads,
                                            const ForwardOptions& options = {});

PretrainResult pretrain_mle(const PolicyParams& init, const Vocabulary& vocab,
                            std::span<const PretrainPair> corpus, const PretrainConfig& config);

}  // namespace realign::policy
