#pragma once

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "realign/corpus.h"
#include "realign/metrics.h"
#include "realign/optim.h"
#include "realign/policy.h"
#include "realign/reward.h"

namespace realign::ppo {

using reward::Trajectory;

enum class TrainScope { adapters, full };

struct PPOConfig {
  double lr_start = 5e-6;
  double lr_end = 1.5e-6;
  int batch_size = 4;
  int total_steps = 2000;
  double clip_epsilon = 0.2;
  double gamma = 1.0;
  double lambda = 0.95;
  int epochs = 4;
  double value_coef = 0.5;
  // Learning-rate multiplier for the value head.
  double value_lr_scale = 1.0;
  double max_grad_norm = 1.0;
  bool normalize_advantages = true;
  int checkpoint_every = 100;
  // `adapters` trains low-rank adapters and the value head; adapters with a
  // zero B are attached when the initial policy has none.
  TrainScope scope = TrainScope::adapters;
  policy::AdapterConfig adapter;
  uint64_t seed = 0;

  void validate() const;
  nlohmann::json to_json() const;
  static PPOConfig from_json(const nlohmann::json& j);
};

// lr_end + (lr_start - lr_end) * (1 + cos(pi * step / total_steps)) / 2.
double cosine_lr(int step, const PPOConfig& config);

// How arguments are turned into policy prompts.
struct PromptSpec {
  policy::PromptMode mode = policy::PromptMode::zero_shot;
  std::vector<policy::Exemplar> shots;

  nlohmann::json to_json() const;
  static PromptSpec from_json(const nlohmann::json& j);
};

scorers::Tokens argument_words(const corpus::ArgumentRecord& r);

// Samples one response per argument and fills log-probabilities under both
// policies, values, the property reward and the KL-penalized token rewards.
std::vector<Trajectory> collect_rollouts(const policy::PolicyParams& policy,
                                         const policy::PolicyParams& reference,
                                         const policy::Vocabulary& vocab,
                                         std::span<const corpus::ArgumentRecord> batch,
                                         const reward::RewardModel& reward_model,
                                         const policy::GenerationConfig& generation,
                                         const PromptSpec& prompt, Rng& rng);

// Generalized advantage estimation; the value after the last token is 0.
void compute_gae(Trajectory& trajectory, double gamma, double lambda);

// Shifts and scales advantages over all tokens of the batch to zero mean and
// unit variance (returns are left as computed).
void normalize_advantages(std::span<Trajectory> batch);

struct PPOStats {
  double mean_reward = 0.0;  // mean per-episode sum of shaped rewards
  double mean_kl = 0.0;      // mean sequence log-ratio against the reference
  double clip_fraction = 0.0;
  double value_loss = 0.0;
  double policy_loss = 0.0;
};

// Clipped surrogate plus value loss, averaged over tokens:
//   -mean(min(rho A, clip(rho, 1-eps, 1+eps) A)) + c_v * mean((V - R)^2) / 2.
// Accumulates the gradient into `grads`; returns the loss.
double ppo_loss_and_grad(const policy::PolicyParams& params, std::span<const Trajectory> batch,
                         const PPOConfig& config, policy::PolicyParams& grads,
                         const policy::ForwardOptions& options = {}, PPOStats* stats = nullptr,
                         const policy::GradientMask& mask = {});

policy::GradientMask gradient_mask(TrainScope scope);

// Runs `epochs` clipped updates on one batch. Throws if the loss or the
// gradients become non-finite.
PPOStats ppo_update(policy::PolicyParams& params, std::span<const Trajectory> batch,
                    const PPOConfig& config, double lr, policy::Adam& optimizer, Rng& rng);

struct LogRow {
  int step = 0;
  double lr = 0.0;
  double mean_reward = 0.0;
  double mean_kl = 0.0;
  double clip_fraction = 0.0;
  double value_loss = 0.0;
};

std::string training_log_csv(std::span<const LogRow> rows);

struct Evaluator {
  const scorers::AppropriatenessModel* classifier = nullptr;
  const scorers::FluencyModel* lm = nullptr;
  policy::GenerationConfig generation;
};

// One rewrite per argument; argument i samples from its own seed stream.
std::vector<scorers::Tokens> rewrite_arguments(const policy::PolicyParams& params,
                                               const policy::Vocabulary& vocab,
                                               std::span<const corpus::ArgumentRecord> records,
                                               const PromptSpec& prompt,
                                               const policy::GenerationConfig& generation);

metrics::EvaluationRow evaluate_policy(const std::string& name, const policy::PolicyParams& params,
                                       const policy::Vocabulary& vocab,
                                       std::span<const corpus::ArgumentRecord> records,
                                       const PromptSpec& prompt, const Evaluator& evaluator);

struct Evaluation {
  int step = 0;
  metrics::EvaluationRow row;
};

struct TrainResult {
  policy::PolicyCheckpoint best;
  int best_step = 0;
  policy::PolicyParams last;  // parameters after the final step
  std::vector<LogRow> log;
  std::vector<Evaluation> evaluations;
};

struct TrainInputs {
  const policy::PolicyCheckpoint* initial = nullptr;
  std::span<const corpus::ArgumentRecord> train;
  std::span<const corpus::ArgumentRecord> validation;
  const reward::RewardModel* reward_model = nullptr;
  PromptSpec prompt;
  policy::GenerationConfig generation;
  Evaluator evaluator;
};

// PPO on the inappropriate training arguments against a frozen copy of the
// initial policy. Checkpoints every `checkpoint_every` steps (and the initial
// and final policies) are scored on the inappropriate validation arguments;
// the one with the highest GM is returned, earliest first on ties.
TrainResult train(const TrainInputs& inputs, const PPOConfig& config,
                  const std::function<void(const LogRow&)>& on_step = {});

// Sequence KL of `policy` from `reference`: over `rollouts` responses sampled
// from `policy`, the mean of the summed per-token KL divergences of the two
// next-token distributions along each response. Arguments are taken from
// `records` in turn.
double mean_sequence_kl(const policy::PolicyParams& policy, const policy::PolicyParams& reference,
                        const policy::Vocabulary& vocab,
                        std::span<const corpus::ArgumentRecord> records, size_t rollouts,
                        const PromptSpec& prompt, const policy::GenerationConfig& generation);

// Only records labeled inappropriate.
std::vector<corpus::ArgumentRecord> inappropriate_only(
    std::span<const corpus::ArgumentRecord> records);

}  // namespace realign::ppo
