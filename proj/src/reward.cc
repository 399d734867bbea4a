#include "realign/reward.h"

#include <cmath>

#include "realign/common.h"

namespace realign::reward {

RewardConfig RewardConfig::for_app_weight(double app_weight, double beta) {
  RewardConfig c;
  c.alpha_sim = 1.0 - app_weight;
  c.beta = beta;
  c.validate();
  return c;
}

void RewardConfig::validate() const {
  if (!(alpha_sim >= 0.0 && alpha_sim <= 1.0)) throw Error("reward: alpha_sim must lie in [0, 1]");
  if (!(beta >= 0.0) || !std::isfinite(beta)) throw Error("reward: beta must be nonnegative");
}

nlohmann::json RewardConfig::to_json() const {
  nlohmann::json j{{"alpha_sim", alpha_sim}, {"beta", beta}};
  j["sim_scorer"] = sim_scorer ? sim_scorer->to_json() : nlohmann::json(nullptr);
  j["app_scorer"] = app_scorer ? app_scorer->to_json() : nlohmann::json(nullptr);
  return j;
}

RewardConfig RewardConfig::from_json(const nlohmann::json& j) {
  RewardConfig c;
  if (j.contains("alpha_sim") && j.contains("alpha")) {
    throw Error("reward: give either alpha_sim or alpha, not both");
  }
  c.alpha_sim = j.contains("alpha_sim") ? j["alpha_sim"].get<double>()
                                        : j.value("alpha", c.alpha_sim);
  c.beta = j.value("beta", c.beta);
  if (j.contains("sim_scorer") && !j["sim_scorer"].is_null()) {
    c.sim_scorer = scorers::ScorerDescriptor::from_json(j["sim_scorer"]);
  }
  if (j.contains("app_scorer") && !j["app_scorer"].is_null()) {
    c.app_scorer = scorers::ScorerDescriptor::from_json(j["app_scorer"]);
  }
  c.validate();
  return c;
}

double Trajectory::log_ratio() const {
  double s = 0.0;
  for (size_t t = 0; t < logprobs.size(); ++t) s += logprobs[t] - ref_logprobs[t];
  return s;
}

RewardModel::RewardModel(RewardConfig config, scorers::AppropriatenessModel app)
    : config_(std::move(config)), app_(std::move(app)) {
  config_.validate();
  const auto app_desc = app_.descriptor();
  if (config_.app_scorer && config_.app_scorer->version != app_desc.version) {
    throw Error("reward: appropriateness scorer version mismatch");
  }
  const auto sim_desc = scorers::token_f1_descriptor();
  if (config_.sim_scorer && config_.sim_scorer->version != sim_desc.version) {
    throw Error("reward: similarity scorer version mismatch");
  }
  config_.app_scorer = app_desc;
  config_.sim_scorer = sim_desc;
}

double property_reward(double sim, double app, double alpha_sim) {
  return alpha_sim * sim + (1.0 - alpha_sim) * app;
}

double RewardModel::property_reward(std::span<const std::string> x,
                                    std::span<const std::string> y) const {
  return reward::property_reward(scorers::similarity_score(x, y).value(), app_.score(y).value(),
                                 config_.alpha_sim);
}

std::vector<double> kl_penalized_rewards(const Trajectory& trajectory, const RewardConfig& config) {
  const size_t n = trajectory.response.size();
  if (trajectory.logprobs.size() != n || trajectory.ref_logprobs.size() != n) {
    throw Error("kl_penalized_rewards: log-prob vectors do not match the response length");
  }
  if (n == 0) throw Error("kl_penalized_rewards: empty response");
  std::vector<double> r(n);
  for (size_t t = 0; t < n; ++t) {
    r[t] = -config.beta * (trajectory.logprobs[t] - trajectory.ref_logprobs[t]);
  }
  r.back() += trajectory.score;
  return r;
}

}  // namespace realign::reward
