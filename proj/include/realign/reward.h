#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "realign/scorers.h"
#include "realign/vocab.h"

namespace realign::reward {

struct RewardConfig {
  // Weight on similarity; appropriateness gets 1 - alpha_sim.
  double alpha_sim = 0.5;
  double beta = 1.857e-3;
  std::optional<scorers::ScorerDescriptor> sim_scorer;
  std::optional<scorers::ScorerDescriptor> app_scorer;

  // alpha_sim = 1 - app_weight.
  static RewardConfig for_app_weight(double app_weight, double beta = 1.857e-3);

  void validate() const;
  nlohmann::json to_json() const;
  // Accepts `alpha_sim`, or `alpha` with the same meaning.
  static RewardConfig from_json(const nlohmann::json& j);
};

// The per-episode record shared by rollout collection, reward shaping and
// the PPO update. Every per-token vector has the response length.
struct Trajectory {
  std::string argument_id;
  policy::TokenIds prompt;
  policy::TokenIds response;
  std::vector<double> logprobs;      // current policy at sampling time
  std::vector<double> ref_logprobs;  // frozen reference policy
  std::vector<double> values;
  std::vector<double> rewards;
  std::vector<double> advantages;
  std::vector<double> returns;
  double score = 0.0;  // property reward r(x, y)

  // Sum of logprobs - ref_logprobs.
  double log_ratio() const;
};

// Binds a configuration to concrete scorers, checking descriptor versions.
class RewardModel {
 public:
  RewardModel(RewardConfig config, scorers::AppropriatenessModel app);

  const RewardConfig& config() const { return config_; }
  const scorers::AppropriatenessModel& appropriateness() const { return app_; }

  double property_reward(std::span<const std::string> x, std::span<const std::string> y) const;

 private:
  RewardConfig config_;
  scorers::AppropriatenessModel app_;
};

// alpha_sim * sim + (1 - alpha_sim) * app.
double property_reward(double sim, double app, double alpha_sim);

// Token t gets -beta * (logprob_t - ref_logprob_t); the last token also gets
// trajectory.score.
std::vector<double> kl_penalized_rewards(const Trajectory& trajectory, const RewardConfig& config);

}  // namespace realign::reward
