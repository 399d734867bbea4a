#include "realign/ppo.h"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "realign/common.h"
#include "realign/text.h"

namespace realign::ppo {

using policy::Matrix;
using policy::PolicyParams;
using policy::TokenIds;
using policy::Vector;

void PPOConfig::validate() const {
  if (!(lr_start > 0.0 && lr_end > 0.0 && lr_end <= lr_start)) {
    throw Error("ppo: need 0 < lr_end <= lr_start");
  }
  if (batch_size < 1) throw Error("ppo: batch_size must be positive");
  if (total_steps < 0) throw Error("ppo: total_steps must be nonnegative");
  if (!(clip_epsilon > 0.0)) throw Error("ppo: clip_epsilon must be positive");
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw Error("ppo: gamma must lie in [0, 1]");
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw Error("ppo: lambda must lie in [0, 1]");
  if (epochs < 1) throw Error("ppo: epochs must be positive");
  if (!(value_coef >= 0.0)) throw Error("ppo: value_coef must be nonnegative");
  if (!(value_lr_scale > 0.0)) throw Error("ppo: value_lr_scale must be positive");
  if (!(max_grad_norm > 0.0)) throw Error("ppo: max_grad_norm must be positive");
  if (checkpoint_every < 1) throw Error("ppo: checkpoint_every must be positive");
}

nlohmann::json PPOConfig::to_json() const {
  return {{"lr_start", lr_start},
          {"lr_end", lr_end},
          {"batch_size", batch_size},
          {"total_steps", total_steps},
          {"clip_epsilon", clip_epsilon},
          {"gamma", gamma},
          {"lambda", lambda},
          {"epochs", epochs},
          {"value_coef", value_coef},
          {"value_lr_scale", value_lr_scale},
          {"max_grad_norm", max_grad_norm},
          {"normalize_advantages", normalize_advantages},
          {"checkpoint_every", checkpoint_every},
          {"scope", scope == TrainScope::adapters ? "adapters" : "full"},
          {"adapter", adapter.to_json()},
          {"seed", seed}};
}

PPOConfig PPOConfig::from_json(const nlohmann::json& j) {
  PPOConfig c;
  c.lr_start = j.value("lr_start", c.lr_start);
  c.lr_end = j.value("lr_end", c.lr_end);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.total_steps = j.value("total_steps", c.total_steps);
  c.clip_epsilon = j.value("clip_epsilon", c.clip_epsilon);
  c.gamma = j.value("gamma", c.gamma);
  c.lambda = j.value("lambda", c.lambda);
  c.epochs = j.value("epochs", c.epochs);
  c.value_coef = j.value("value_coef", c.value_coef);
  c.value_lr_scale = j.value("value_lr_scale", c.value_lr_scale);
  c.max_grad_norm = j.value("max_grad_norm", c.max_grad_norm);
  c.normalize_advantages = j.value("normalize_advantages", c.normalize_advantages);
  c.checkpoint_every = j.value("checkpoint_every", c.checkpoint_every);
  const std::string scope = j.value("scope", std::string("adapters"));
  if (scope == "adapters") {
    c.scope = TrainScope::adapters;
  } else if (scope == "full") {
    c.scope = TrainScope::full;
  } else {
    throw Error("ppo: unknown scope " + scope);
  }
  if (j.contains("adapter")) c.adapter = policy::AdapterConfig::from_json(j["adapter"]);
  c.seed = j.value("seed", c.seed);
  c.validate();
  return c;
}

double cosine_lr(int step, const PPOConfig& config) {
  if (step < 0 || step > config.total_steps) {
    throw Error("cosine_lr: step " + std::to_string(step) + " outside [0, " +
                std::to_string(config.total_steps) + "]");
  }
  if (config.total_steps == 0) return config.lr_start;
  const double progress = static_cast<double>(step) / config.total_steps;
  return config.lr_end +
         (config.lr_start - config.lr_end) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

nlohmann::json PromptSpec::to_json() const {
  nlohmann::json s = nlohmann::json::array();
  for (const auto& e : shots) s.push_back({{"argument", e.argument}, {"rewrite", e.rewrite}});
  return {{"mode", policy::to_string(mode)}, {"shots", s}};
}

PromptSpec PromptSpec::from_json(const nlohmann::json& j) {
  PromptSpec p;
  p.mode = policy::parse_prompt_mode(j.value("mode", std::string("zero_shot")));
  if (j.contains("shots")) {
    for (const auto& e : j["shots"]) {
      p.shots.push_back({e.at("argument").get<std::string>(), e.at("rewrite").get<std::string>()});
    }
  }
  return p;
}

scorers::Tokens argument_words(const corpus::ArgumentRecord& r) { return split_whitespace(r.text); }

namespace {

TokenIds prompt_for(const policy::PolicyParams& params, const policy::Vocabulary& vocab,
                    const corpus::ArgumentRecord& r, const PromptSpec& prompt) {
  TokenIds ids = policy::encode_prompt(vocab, r.text, prompt.mode, prompt.shots);
  if (ids.size() + 1 > static_cast<size_t>(params.config.context)) {
    throw Error("argument " + r.id + ": prompt of " + std::to_string(ids.size()) +
                " tokens leaves no room in the context");
  }
  return ids;
}

}  // namespace

std::vector<Trajectory> collect_rollouts(const PolicyParams& policy, const PolicyParams& reference,
                                         const policy::Vocabulary& vocab,
                                         std::span<const corpus::ArgumentRecord> batch,
                                         const reward::RewardModel& reward_model,
                                         const policy::GenerationConfig& generation,
                                         const PromptSpec& prompt, Rng& rng) {
  std::vector<Trajectory> out;
  out.reserve(batch.size());
  for (const auto& r : batch) {
    try {
      Trajectory t;
      t.argument_id = r.id;
      t.prompt = prompt_for(policy, vocab, r, prompt);
      auto s = policy::sample_with_stats(policy, t.prompt, generation, rng);
      t.response = std::move(s.tokens);
      t.logprobs = std::move(s.logprobs);
      t.values = std::move(s.values);
      t.ref_logprobs = policy::sequence_logprob(reference, t.prompt, t.response);
      t.score = reward_model.property_reward(argument_words(r), vocab.words(t.response));
      t.rewards = reward::kl_penalized_rewards(t, reward_model.config());
      out.push_back(std::move(t));
    } catch (const Error& e) {
      throw Error("rollout for argument " + r.id + " failed: " + e.what());
    }
  }
  return out;
}

void compute_gae(Trajectory& t, double gamma, double lambda) {
  const size_t n = t.rewards.size();
  if (t.values.size() != n) throw Error("compute_gae: values and rewards differ in length");
  t.advantages.assign(n, 0.0);
  t.returns.assign(n, 0.0);
  double running = 0.0;
  for (size_t k = n; k-- > 0;) {
    const double next_value = k + 1 < n ? t.values[k + 1] : 0.0;
    const double delta = t.rewards[k] + gamma * next_value - t.values[k];
    running = delta + gamma * lambda * running;
    t.advantages[k] = running;
    t.returns[k] = running + t.values[k];
  }
}

void normalize_advantages(std::span<Trajectory> batch) {
  double sum = 0.0, count = 0.0;
  for (const auto& t : batch)
    for (double a : t.advantages) {
      sum += a;
      count += 1.0;
    }
  if (count == 0.0) return;
  const double mean = sum / count;
  double sq = 0.0;
  for (const auto& t : batch)
    for (double a : t.advantages) sq += (a - mean) * (a - mean);
  const double sd = std::sqrt(sq / count);
  for (auto& t : batch)
    for (double& a : t.advantages) a = (a - mean) / (sd + 1e-8);
}

double ppo_loss_and_grad(const PolicyParams& params, std::span<const Trajectory> batch,
                         const PPOConfig& config, PolicyParams& grads,
                         const policy::ForwardOptions& options, PPOStats* stats,
                         const policy::GradientMask& mask) {
  size_t total = 0;
  for (const auto& t : batch) total += t.response.size();
  if (total == 0) throw Error("ppo: empty batch");
  const double inv = 1.0 / static_cast<double>(total);
  const double eps = config.clip_epsilon;

  double policy_loss = 0.0, value_loss = 0.0;
  size_t clipped = 0;
  for (const auto& t : batch) {
    const size_t n = t.response.size();
    if (t.logprobs.size() != n || t.advantages.size() != n || t.returns.size() != n) {
      throw Error("ppo: trajectory " + t.argument_id + " has inconsistent lengths");
    }
    TokenIds input = t.prompt;
    input.insert(input.end(), t.response.begin(), t.response.end() - 1);
    policy::ForwardPass fp(params, input, t.prompt.size() - 1, options);
    const auto rows = static_cast<Eigen::Index>(n);
    Matrix dlogits(rows, params.config.vocab_size);
    Vector dvalues(rows);
    for (Eigen::Index k = 0; k < rows; ++k) {
      const size_t i = static_cast<size_t>(k);
      const policy::RowVector lp = policy::log_softmax(fp.logits().row(k));
      const int a = t.response[i];
      const double ratio = std::exp(lp(a) - t.logprobs[i]);
      const double adv = t.advantages[i];
      const double unclipped = ratio * adv;
      const double clipped_obj = std::clamp(ratio, 1.0 - eps, 1.0 + eps) * adv;
      policy_loss -= std::min(unclipped, clipped_obj) * inv;
      if (std::abs(ratio - 1.0) > eps) ++clipped;
      const double coef = unclipped <= clipped_obj ? -ratio * adv * inv : 0.0;
      // d log p(a) / d logits = onehot(a) - softmax.
      dlogits.row(k) = -coef * lp.array().exp();
      dlogits(k, a) += coef;

      const double diff = fp.values()(k) - t.returns[i];
      value_loss += 0.5 * diff * diff * inv;
      dvalues(k) = config.value_coef * diff * inv;
    }
    fp.backward(dlogits, dvalues, grads, mask);
  }
  if (stats) {
    stats->policy_loss = policy_loss;
    stats->value_loss = value_loss;
    stats->clip_fraction = static_cast<double>(clipped) * inv;
  }
  return policy_loss + config.value_coef * value_loss;
}

policy::GradientMask gradient_mask(TrainScope scope) {
  if (scope == TrainScope::full) return {};
  return {.trunk = false, .policy_head = false, .value_head = true, .adapter = true};
}

PPOStats ppo_update(PolicyParams& params, std::span<const Trajectory> batch,
                    const PPOConfig& config, double lr, policy::Adam& optimizer, Rng& rng) {
  const policy::TrainableFilter trainable =
      config.scope == TrainScope::adapters ? policy::adapter_groups : policy::all_groups;
  const bool dropout = params.adapter && params.adapter->dropout > 0.0;
  PPOStats out;
  for (const auto& t : batch) {
    double total = 0.0;
    for (double r : t.rewards) total += r;
    out.mean_reward += total / static_cast<double>(batch.size());
    out.mean_kl += t.log_ratio() / static_cast<double>(batch.size());
  }
  PolicyParams grads = params.zeros_like();
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    if (epoch) grads.for_each([](const std::string&, Matrix& m, policy::ParamGroup) { m.setZero(); });
    PPOStats st;
    const double loss =
        ppo_loss_and_grad(params, batch, config, grads, {dropout, &rng}, &st,
                                          gradient_mask(config.scope));
    const double norm = policy::clip_grad_norm(grads, config.max_grad_norm, trainable);
    if (!std::isfinite(loss) || !std::isfinite(norm)) {
      std::ostringstream ss;
      ss << "ppo_update: non-finite loss at epoch " << epoch << " (loss " << loss
         << ", policy loss " << st.policy_loss << ", value loss " << st.value_loss
         << ", grad norm " << norm << ")";
      throw Error(ss.str());
    }
    optimizer.step(params, grads, lr, trainable, config.value_lr_scale);
    out.clip_fraction += st.clip_fraction / config.epochs;
    out.value_loss += st.value_loss / config.epochs;
    out.policy_loss += st.policy_loss / config.epochs;
  }
  if (!params.all_finite()) throw Error("ppo_update: parameters became non-finite");
  return out;
}

std::string training_log_csv(std::span<const LogRow> rows) {
  std::ostringstream ss;
  ss.precision(10);
  ss << "step,lr,mean_reward,mean_kl,clip_fraction,value_loss\n";
  for (const auto& r : rows) {
    ss << r.step << ',' << r.lr << ',' << r.mean_reward << ',' << r.mean_kl << ','
       << r.clip_fraction << ',' << r.value_loss << '\n';
  }
  return ss.str();
}

std::vector<scorers::Tokens> rewrite_arguments(const PolicyParams& params,
                                               const policy::Vocabulary& vocab,
                                               std::span<const corpus::ArgumentRecord> records,
                                               const PromptSpec& prompt,
                                               const policy::GenerationConfig& generation) {
  std::vector<scorers::Tokens> out;
  out.reserve(records.size());
  for (size_t i = 0; i < records.size(); ++i) {
    const TokenIds ids = prompt_for(params, vocab, records[i], prompt);
    Rng rng(derive_seed(generation.seed, i));
    out.push_back(vocab.words(policy::sample_with_stats(params, ids, generation, rng).tokens));
  }
  return out;
}

metrics::EvaluationRow evaluate_policy(const std::string& name, const PolicyParams& params,
                                       const policy::Vocabulary& vocab,
                                       std::span<const corpus::ArgumentRecord> records,
                                       const PromptSpec& prompt, const Evaluator& evaluator) {
  if (!evaluator.classifier || !evaluator.lm) throw Error("evaluate_policy: missing scorers");
  std::vector<scorers::Tokens> originals;
  for (const auto& r : records) originals.push_back(argument_words(r));
  const auto rewrites = rewrite_arguments(params, vocab, records, prompt, evaluator.generation);
  return metrics::evaluate_system(name, originals, rewrites, *evaluator.classifier, *evaluator.lm);
}

std::vector<corpus::ArgumentRecord> inappropriate_only(
    std::span<const corpus::ArgumentRecord> records) {
  std::vector<corpus::ArgumentRecord> out;
  for (const auto& r : records) {
    if (r.app_label == corpus::AppLabel::inappropriate) out.push_back(r);
  }
  return out;
}

namespace {

bool better(const metrics::EvaluationRow& a, const metrics::EvaluationRow& b) {
  if (!a.gm) return false;
  return !b.gm || *a.gm > *b.gm;
}

nlohmann::json row_json(const metrics::EvaluationRow& r) {
  nlohmann::json j{{"app", r.app}, {"sim", r.sim}, {"nes", r.nes}};
  j["ppl"] = r.ppl ? nlohmann::json(*r.ppl) : nlohmann::json(nullptr);
  j["gm"] = r.gm ? nlohmann::json(*r.gm) : nlohmann::json(nullptr);
  return j;
}

}  // namespace

TrainResult train(const TrainInputs& in, const PPOConfig& config,
                  const std::function<void(const LogRow&)>& on_step) {
  config.validate();
  if (!in.initial || !in.reward_model) throw Error("ppo train: missing initial policy or reward");
  const auto validation = inappropriate_only(in.validation);
  if (validation.empty()) throw Error("ppo train: no inappropriate validation arguments");
  const auto pool = inappropriate_only(in.train);
  if (pool.empty() && config.total_steps > 0) {
    throw Error("ppo train: no inappropriate training arguments");
  }
  const auto& vocab = in.initial->vocab;

  TrainResult result;
  auto evaluate = [&](const PolicyParams& p, int step) {
    auto row = evaluate_policy("step " + std::to_string(step), p, vocab, validation, in.prompt,
                               in.evaluator);
    result.evaluations.push_back({step, row});
    return row;
  };

  metrics::EvaluationRow best_row = evaluate(in.initial->params, 0);
  result.best = *in.initial;
  result.best.eval_scores = row_json(best_row);
  result.last = in.initial->params;
  if (config.total_steps == 0) return result;

  const PolicyParams& reference = in.initial->params;
  PolicyParams params = reference;
  if (config.scope == TrainScope::adapters && !params.adapter) {
    params.add_adapters(config.adapter, derive_seed(config.seed, 0));
  }
  Rng batch_rng(derive_seed(config.seed, 1));
  Rng sample_rng(derive_seed(config.seed, 2));
  Rng dropout_rng(derive_seed(config.seed, 3));
  policy::Adam adam;

  for (int step = 1; step <= config.total_steps; ++step) {
    std::vector<corpus::ArgumentRecord> batch;
    for (int b = 0; b < config.batch_size; ++b) batch.push_back(pool[batch_rng.below(pool.size())]);
    auto trajs = collect_rollouts(params, reference, vocab, batch, *in.reward_model, in.generation,
                                  in.prompt, sample_rng);
    for (auto& t : trajs) compute_gae(t, config.gamma, config.lambda);
    if (config.normalize_advantages) normalize_advantages(trajs);
    const double lr = cosine_lr(step - 1, config);
    const PPOStats st = ppo_update(params, trajs, config, lr, adam, dropout_rng);
    LogRow row{step, lr, st.mean_reward, st.mean_kl, st.clip_fraction, st.value_loss};
    result.log.push_back(row);
    if (on_step) on_step(row);

    if (step % config.checkpoint_every == 0 || step == config.total_steps) {
      const auto eval_row = evaluate(params, step);
      if (better(eval_row, best_row)) {
        best_row = eval_row;
        result.best.params = params;
        result.best_step = step;
      }
    }
  }
  result.best.step = result.best_step;
  result.best.eval_scores = row_json(best_row);
  result.last = std::move(params);
  return result;
}

double mean_sequence_kl(const PolicyParams& policy, const PolicyParams& reference,
                        const policy::Vocabulary& vocab,
                        std::span<const corpus::ArgumentRecord> records, size_t rollouts,
                        const PromptSpec& prompt, const policy::GenerationConfig& generation) {
  if (records.empty() || rollouts == 0) throw Error("mean_sequence_kl: nothing to sample");
  Rng rng(generation.seed);
  double total = 0.0;
  for (size_t i = 0; i < rollouts; ++i) {
    const TokenIds p = prompt_for(policy, vocab, records[i % records.size()], prompt);
    const auto s = policy::sample_with_stats(policy, p, generation, rng);
    if (s.tokens.empty()) continue;
    TokenIds input = p;
    input.insert(input.end(), s.tokens.begin(), s.tokens.end() - 1);
    const policy::ForwardPass a(policy, input, p.size() - 1);
    const policy::ForwardPass b(reference, input, p.size() - 1);
    for (Eigen::Index t = 0; t < a.logits().rows(); ++t) {
      const policy::RowVector la = policy::log_softmax(a.logits().row(t));
      const policy::RowVector lb = policy::log_softmax(b.logits().row(t));
      total += (la.array().exp() * (la - lb).array()).sum();
    }
  }
  return total / static_cast<double>(rollouts);
}

}  // namespace realign::ppo
