#include <doctest.h>

#include <cmath>
#include <limits>

#include "realign/common.h"
#include "realign/ppo.h"
#include "realign/synthetic.h"
#include "realign/text.h"
#include "support/test_models.h"

using namespace realign;
using namespace realign::policy;
using realign::testing::max_relative_error;
using realign::testing::numeric_gradient;
using realign::testing::tiny_model;

namespace {

// A_t = sum_l (gamma lambda)^l delta_{t+l}, written as the double sum.
std::vector<double> brute_force_gae(const std::vector<double>& r, const std::vector<double>& v,
                                    double gamma, double lambda) {
  const size_t n = r.size();
  std::vector<double> out(n, 0.0);
  for (size_t t = 0; t < n; ++t) {
    for (size_t l = 0; t + l < n; ++l) {
      const size_t k = t + l;
      const double next = k + 1 < n ? v[k + 1] : 0.0;
      out[t] += std::pow(gamma * lambda, static_cast<double>(l)) * (r[k] + gamma * next - v[k]);
    }
  }
  return out;
}

// Trajectories on the tiny model whose behaviour logprobs are shifted from
// the current policy so that some ratios sit inside and some outside the
// clip range, none of them near a kink.
std::vector<ppo::Trajectory> tiny_batch(const PolicyParams& p, uint64_t seed) {
  Rng rng(seed);
  const double shifts[] = {-0.5, 0.0, 0.05, 0.5};
  std::vector<ppo::Trajectory> out;
  for (int b = 0; b < 3; ++b) {
    ppo::Trajectory t;
    t.argument_id = "t" + std::to_string(b);
    for (int i = 0; i < 3; ++i) t.prompt.push_back(static_cast<int>(rng.below(5)));
    const size_t n = 2 + rng.below(3);
    for (size_t i = 0; i < n; ++i) t.response.push_back(static_cast<int>(rng.below(5)));
    const auto lp = sequence_logprob(p, t.prompt, t.response);
    for (size_t i = 0; i < n; ++i) {
      t.logprobs.push_back(lp[i] + shifts[rng.below(4)]);
      t.advantages.push_back(rng.normal());
      t.returns.push_back(rng.normal());
    }
    out.push_back(std::move(t));
  }
  return out;
}

}  // namespace

TEST_CASE("GAE equals the brute-force double sum for every length up to 8") {
  Rng rng(11);
  for (size_t n = 1; n <= 8; ++n) {
    for (int trial = 0; trial < 50; ++trial) {
      ppo::Trajectory t;
      for (size_t i = 0; i < n; ++i) {
        t.rewards.push_back(rng.normal());
        t.values.push_back(rng.normal());
      }
      const double gamma = trial == 0 ? 1.0 : rng.uniform();
      const double lambda = trial == 0 ? 0.95 : rng.uniform();
      ppo::compute_gae(t, gamma, lambda);
      const auto expect = brute_force_gae(t.rewards, t.values, gamma, lambda);
      for (size_t i = 0; i < n; ++i) {
        CHECK(t.advantages[i] == doctest::Approx(expect[i]).epsilon(1e-12));
        CHECK(t.returns[i] == doctest::Approx(expect[i] + t.values[i]).epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("GAE with lambda 1 and gamma 1 gives reward-to-go minus value") {
  ppo::Trajectory t;
  t.rewards = {1, 2, 3};
  t.values = {0.5, -1, 2};
  ppo::compute_gae(t, 1.0, 1.0);
  CHECK(t.advantages[0] == doctest::Approx(6 - 0.5));
  CHECK(t.advantages[1] == doctest::Approx(5 + 1));
  CHECK(t.advantages[2] == doctest::Approx(3 - 2));
  t.values.pop_back();
  CHECK_THROWS_AS(ppo::compute_gae(t, 1.0, 1.0), Error);
}

TEST_CASE("advantage normalization is over all tokens of the batch") {
  std::vector<ppo::Trajectory> b(2);
  b[0].advantages = {1, 2};
  b[1].advantages = {3, 4, 5};
  ppo::normalize_advantages(b);
  double sum = 0, sq = 0;
  for (auto& t : b)
    for (double a : t.advantages) {
      sum += a;
      sq += a * a;
    }
  CHECK(sum == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(sq / 5 == doctest::Approx(1.0).epsilon(1e-6));
  CHECK(b[0].advantages[0] < b[1].advantages[0]);
}

TEST_CASE("clipped surrogate gradient matches central differences") {
  for (uint64_t seed : {1, 2, 3}) {
    const auto p = tiny_model(seed);
    const auto batch = tiny_batch(p, seed + 100);
    ppo::PPOConfig cfg;
    cfg.value_coef = 0.7;
    auto grads = p.zeros_like();
    ppo::PPOStats st;
    ppo::ppo_loss_and_grad(p, batch, cfg, grads, {}, &st);
    CHECK(st.clip_fraction > 0.0);
    CHECK(st.clip_fraction < 1.0);
    auto num = numeric_gradient(p, [&](const PolicyParams& q) {
      auto scratch = q.zeros_like();
      return ppo::ppo_loss_and_grad(q, batch, cfg, scratch);
    });
    CHECK(max_relative_error(grads, num) < 1e-4);
  }
}

TEST_CASE("adapter scope gradients agree with the full gradient on the trainable groups") {
  const auto p = tiny_model(5);
  const auto batch = tiny_batch(p, 6);
  ppo::PPOConfig cfg;
  auto full = p.zeros_like(), masked = p.zeros_like();
  ppo::ppo_loss_and_grad(p, batch, cfg, full);
  ppo::ppo_loss_and_grad(p, batch, cfg, masked, {}, nullptr,
                         ppo::gradient_mask(ppo::TrainScope::adapters));
  auto fs = tensor_list(full);
  auto ms = tensor_list(masked);
  size_t i = 0;
  p.for_each([&](const std::string& name, const Matrix&, ParamGroup g) {
    INFO(name);
    if (g == ParamGroup::adapter || g == ParamGroup::value_head) {
      CHECK((*fs[i] - *ms[i]).norm() <= 1e-12 * (1 + fs[i]->norm()));
    } else {
      CHECK(ms[i]->norm() == 0.0);
    }
    ++i;
  });
}

TEST_CASE("without clipping the policy gradient is the importance-weighted score function") {
  const auto p = tiny_model(8, false);
  auto batch = tiny_batch(p, 9);
  ppo::PPOConfig cfg;
  cfg.clip_epsilon = std::numeric_limits<double>::infinity();
  cfg.value_coef = 0.0;
  auto grads = p.zeros_like();
  ppo::ppo_loss_and_grad(p, batch, cfg, grads);

  size_t total = 0;
  for (auto& t : batch) total += t.response.size();
  auto num = numeric_gradient(p, [&](const PolicyParams& q) {
    double loss = 0;
    for (auto& t : batch) {
      const auto lp = sequence_logprob(q, t.prompt, t.response);
      for (size_t i = 0; i < lp.size(); ++i) {
        loss -= std::exp(lp[i] - t.logprobs[i]) * t.advantages[i] / static_cast<double>(total);
      }
    }
    return loss;
  });
  CHECK(max_relative_error(grads, num) < 1e-4);
}

TEST_CASE("zero advantages leave the policy head unchanged") {
  for (auto scope : {ppo::TrainScope::full, ppo::TrainScope::adapters}) {
    auto p = tiny_model(12);
    auto batch = tiny_batch(p, 13);
    for (auto& t : batch) std::fill(t.advantages.begin(), t.advantages.end(), 0.0);
    for (auto& t : batch) {
      t.rewards.assign(t.response.size(), 0.0);
      t.ref_logprobs = t.logprobs;
    }
    const auto before = p;
    ppo::PPOConfig cfg;
    cfg.scope = scope;
    Adam adam;
    Rng rng(1);
    ppo::ppo_update(p, batch, cfg, 1e-2, adam, rng);
    CHECK(p.w_out == before.w_out);
    CHECK(p.b_out == before.b_out);
    CHECK(p.b_value != before.b_value);
  }
}

TEST_CASE("adapter scope leaves trunk and policy head untouched") {
  auto p = tiny_model(14);
  const auto before = p;
  auto batch = tiny_batch(p, 15);
  for (auto& t : batch) {
    t.rewards.assign(t.response.size(), 0.0);
    t.ref_logprobs = t.logprobs;
  }
  ppo::PPOConfig cfg;
  Adam adam;
  Rng rng(2);
  ppo::ppo_update(p, batch, cfg, 1e-2, adam, rng);
  CHECK(p.tok_emb == before.tok_emb);
  CHECK(p.blocks[0].wq == before.blocks[0].wq);
  CHECK(p.w_out == before.w_out);
  CHECK(p.blocks[0].adapters[0].b != before.blocks[0].adapters[0].b);
}

TEST_CASE("value learning-rate scale speeds up only the value head") {
  auto batch = tiny_batch(tiny_model(16), 17);
  for (auto& t : batch) {
    t.rewards.assign(t.response.size(), 0.0);
    t.ref_logprobs = t.logprobs;
  }
  auto run = [&](double scale) {
    auto p = tiny_model(16);
    ppo::PPOConfig cfg;
    cfg.epochs = 1;
    cfg.value_lr_scale = scale;
    Adam adam;
    Rng rng(3);
    ppo::ppo_update(p, batch, cfg, 1e-3, adam, rng);
    return p;
  };
  const auto base = tiny_model(16);
  const auto a = run(1.0), b = run(10.0);
  CHECK(a.blocks[1].adapters[2].b == b.blocks[1].adapters[2].b);
  CHECK((b.b_value - base.b_value).norm() ==
        doctest::Approx(10 * (a.b_value - base.b_value).norm()).epsilon(1e-9));
}

TEST_CASE("cosine schedule") {
  ppo::PPOConfig cfg;
  cfg.lr_start = 1e-3;
  cfg.lr_end = 1e-4;
  cfg.total_steps = 100;
  CHECK(ppo::cosine_lr(0, cfg) == doctest::Approx(1e-3));
  CHECK(ppo::cosine_lr(50, cfg) == doctest::Approx(5.5e-4));
  CHECK(ppo::cosine_lr(100, cfg) == doctest::Approx(1e-4));
  for (int s = 1; s <= 100; ++s) CHECK(ppo::cosine_lr(s, cfg) <= ppo::cosine_lr(s - 1, cfg));
  CHECK_THROWS_AS(ppo::cosine_lr(101, cfg), Error);
  CHECK_THROWS_AS(ppo::cosine_lr(-1, cfg), Error);
}

TEST_CASE("configuration validation and round-trip") {
  ppo::PPOConfig cfg;
  cfg.scope = ppo::TrainScope::full;
  cfg.value_lr_scale = 20;
  cfg.seed = 9;
  const auto back = ppo::PPOConfig::from_json(cfg.to_json());
  CHECK(back.to_json() == cfg.to_json());
  auto bad = cfg.to_json();
  bad["scope"] = "everything";
  CHECK_THROWS_AS(ppo::PPOConfig::from_json(bad), Error);
  bad = cfg.to_json();
  bad["clip_epsilon"] = -1;
  CHECK_THROWS_AS(ppo::PPOConfig::from_json(bad), Error);
  bad = cfg.to_json();
  bad["batch_size"] = 0;
  CHECK_THROWS_AS(ppo::PPOConfig::from_json(bad), Error);
}

TEST_CASE("training log CSV") {
  std::vector<ppo::LogRow> rows{{1, 0.5, 0.25, 0.125, 0, 2}};
  CHECK(ppo::training_log_csv(rows) ==
        "step,lr,mean_reward,mean_kl,clip_fraction,value_loss\n1,0.5,0.25,0.125,0,2\n");
}

namespace {

struct SmallSetup {
  synthetic::SyntheticTask task = synthetic::make_synthetic_task(3, 200);
  std::vector<corpus::ArgumentRecord> train, validation;
  Vocabulary vocab;
  PolicyCheckpoint initial;

  SmallSetup() {
    auto labeled = corpus::soft_label(
        task.corpus, [&](std::string_view t) { return task.classifier.score_text(t); });
    auto split = corpus::split_dataset(labeled, 3);
    train = corpus::with_split(split, corpus::Split::train);
    validation = corpus::with_split(split, corpus::Split::validation);
    std::vector<std::string> texts{join(task.token_inventory, " "),
                                   render_prompt("x", PromptMode::zero_shot)};
    vocab = Vocabulary::from_texts(texts);
    ModelConfig mc{.vocab_size = static_cast<int>(vocab.size()), .d_model = 8, .n_layers = 1,
                   .n_heads = 2, .d_ff = 16, .context = 128};
    initial.params = PolicyParams::init(mc, 3);
    initial.vocab = vocab;
  }
};

}  // namespace

TEST_CASE("rollouts are reproducible and carry consistent rewards") {
  SmallSetup s;
  reward::RewardModel rm(reward::RewardConfig::for_app_weight(0.5), s.task.classifier);
  GenerationConfig gen;
  gen.max_new_tokens = 6;
  std::vector<corpus::ArgumentRecord> batch(s.train.begin(), s.train.begin() + 4);
  Rng a(5), b(5);
  const auto x = ppo::collect_rollouts(s.initial.params, s.initial.params, s.vocab, batch, rm, gen,
                                       {}, a);
  const auto y = ppo::collect_rollouts(s.initial.params, s.initial.params, s.vocab, batch, rm, gen,
                                       {}, b);
  REQUIRE(x.size() == 4);
  for (size_t i = 0; i < x.size(); ++i) {
    CHECK(x[i].response == y[i].response);
    CHECK(x[i].rewards == y[i].rewards);
    CHECK(x[i].argument_id == batch[i].id);
    CHECK(x[i].log_ratio() == doctest::Approx(0.0).epsilon(1e-9));
    double sum = 0;
    for (double r : x[i].rewards) sum += r;
    CHECK(sum == doctest::Approx(x[i].score).epsilon(1e-9));
    const auto words = s.vocab.words(x[i].response);
    CHECK(x[i].score == doctest::Approx(rm.property_reward(ppo::argument_words(batch[i]), words)));
  }
}

TEST_CASE("sequence KL is zero against itself and positive against another policy") {
  SmallSetup s;
  GenerationConfig gen;
  gen.max_new_tokens = 6;
  gen.seed = 4;
  const auto other = PolicyParams::init(s.initial.params.config, 9);
  CHECK(ppo::mean_sequence_kl(s.initial.params, s.initial.params, s.vocab, s.validation, 16, {},
                              gen) == doctest::Approx(0.0).epsilon(1e-12));
  const double kl = ppo::mean_sequence_kl(other, s.initial.params, s.vocab, s.validation, 16, {}, gen);
  CHECK(kl > 0.0);
  CHECK(kl == ppo::mean_sequence_kl(other, s.initial.params, s.vocab, s.validation, 16, {}, gen));
}

TEST_CASE("train with zero steps returns the initial checkpoint") {
  SmallSetup s;
  reward::RewardModel rm(reward::RewardConfig::for_app_weight(1.0), s.task.classifier);
  ppo::TrainInputs in;
  in.initial = &s.initial;
  in.train = s.train;
  in.validation = s.validation;
  in.reward_model = &rm;
  in.generation.max_new_tokens = 6;
  in.evaluator = {&s.task.classifier, &s.task.lm, in.generation};
  ppo::PPOConfig cfg;
  cfg.total_steps = 0;
  const auto res = ppo::train(in, cfg);
  CHECK(res.best_step == 0);
  CHECK(res.best.params.w_out == s.initial.params.w_out);
  CHECK(res.log.empty());
  REQUIRE(res.evaluations.size() == 1);
  CHECK(res.best.eval_scores.has_value());

  std::vector<corpus::ArgumentRecord> clean;
  for (const auto& r : s.validation)
    if (r.app_label == corpus::AppLabel::appropriate) clean.push_back(r);
  in.validation = clean;
  CHECK_THROWS_AS(ppo::train(in, cfg), Error);
}

TEST_CASE("training is deterministic and picks the best evaluated checkpoint") {
  SmallSetup s;
  reward::RewardModel rm(reward::RewardConfig::for_app_weight(0.6), s.task.classifier);
  ppo::TrainInputs in;
  in.initial = &s.initial;
  in.train = s.train;
  in.validation = s.validation;
  in.reward_model = &rm;
  in.generation.max_new_tokens = 6;
  in.evaluator = {&s.task.classifier, &s.task.lm, in.generation};
  ppo::PPOConfig cfg;
  cfg.total_steps = 4;
  cfg.checkpoint_every = 2;
  cfg.lr_start = 1e-2;
  cfg.lr_end = 1e-3;
  cfg.seed = 4;
  const auto a = ppo::train(in, cfg);
  const auto b = ppo::train(in, cfg);
  CHECK(a.best.digest() == b.best.digest());
  CHECK(ppo::training_log_csv(a.log) == ppo::training_log_csv(b.log));
  REQUIRE(a.log.size() == 4);
  CHECK(a.log[0].lr == doctest::Approx(1e-2));
  REQUIRE(a.evaluations.size() == 3);
  double best = -1;
  int best_step = -1;
  for (const auto& e : a.evaluations) {
    if (e.row.gm && *e.row.gm > best) {
      best = *e.row.gm;
      best_step = e.step;
    }
  }
  if (best_step >= 0) CHECK(a.best_step == best_step);
  CHECK(a.best.step == a.best_step);
}
