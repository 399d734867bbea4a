#include <doctest.h>

#include <cmath>
#include <functional>
#include <map>

#include "realign/common.h"
#include "realign/metrics.h"
#include "realign/random.h"
#include "realign/reward.h"

using namespace realign;
using scorers::Tokens;

namespace {

scorers::AppropriatenessModel toy_classifier() {
  // Banned words push the score down hard; everything else is appropriate.
  return scorers::AppropriatenessModel({"stupid", "idiotic"}, {-40.0, 0.0, 0.0, 0.0}, 3.0, 5.0,
                                       2.0);
}

Tokens random_words(Rng& rng, size_t max_len, size_t alphabet) {
  Tokens out(rng.below(max_len + 1));
  for (auto& w : out) w = std::string(1, static_cast<char>('a' + rng.below(alphabet)));
  return out;
}

// Plain recursive Levenshtein with memoization.
size_t oracle_distance(const Tokens& x, const Tokens& y) {
  std::map<std::pair<size_t, size_t>, size_t> memo;
  std::function<size_t(size_t, size_t)> d = [&](size_t i, size_t j) -> size_t {
    if (i == 0) return j;
    if (j == 0) return i;
    auto it = memo.find({i, j});
    if (it != memo.end()) return it->second;
    const size_t v = std::min({d(i - 1, j) + 1, d(i, j - 1) + 1,
                               d(i - 1, j - 1) + (x[i - 1] == y[j - 1] ? 0u : 1u)});
    memo[{i, j}] = v;
    return v;
  };
  return d(x.size(), y.size());
}

struct UniformLM : scorers::FluencyModel {
  double p;
  explicit UniformLM(double p) : p(p) {}
  double probability(std::span<const std::string>, const std::string&) const override {
    return p;
  }
};

}  // namespace

TEST_CASE("shaped rewards sum to the property reward minus the scaled log-ratio") {
  Rng rng(1);
  for (int trial = 0; trial < 1000; ++trial) {
    reward::Trajectory t;
    const size_t n = 1 + rng.below(40);
    t.response.assign(n, 4);
    for (size_t i = 0; i < n; ++i) {
      t.logprobs.push_back(-5 * rng.uniform());
      t.ref_logprobs.push_back(-5 * rng.uniform());
    }
    t.score = rng.uniform();
    reward::RewardConfig cfg;
    cfg.beta = 0.1 * rng.uniform();
    const auto r = reward::kl_penalized_rewards(t, cfg);
    double sum = 0;
    for (double x : r) sum += x;
    CHECK(std::abs(sum - (t.score - cfg.beta * t.log_ratio())) < 1e-9);

    cfg.beta = 0;
    const auto r0 = reward::kl_penalized_rewards(t, cfg);
    for (size_t i = 0; i + 1 < n; ++i) CHECK(r0[i] == 0.0);
    CHECK(r0.back() == t.score);

    cfg.beta = 0.05;
    t.ref_logprobs = t.logprobs;
    const auto same = reward::kl_penalized_rewards(t, cfg);
    for (size_t i = 0; i + 1 < n; ++i) CHECK(same[i] == 0.0);
    CHECK(same.back() == t.score);
  }
}

TEST_CASE("shaped rewards reject inconsistent trajectories") {
  reward::Trajectory t;
  reward::RewardConfig cfg;
  CHECK_THROWS_AS(reward::kl_penalized_rewards(t, cfg), Error);
  t.response = {5, 6};
  t.logprobs = {-1, -1};
  t.ref_logprobs = {-1};
  CHECK_THROWS_AS(reward::kl_penalized_rewards(t, cfg), Error);
}

TEST_CASE("property reward interpolates similarity and appropriateness") {
  CHECK(reward::property_reward(0.2, 0.8, 1.0) == 0.2);
  CHECK(reward::property_reward(0.2, 0.8, 0.0) == 0.8);
  CHECK(reward::property_reward(0.2, 0.8, 0.5) == doctest::Approx(0.5));
  const auto cfg = reward::RewardConfig::for_app_weight(0.6);
  CHECK(cfg.alpha_sim == doctest::Approx(0.4));

  reward::RewardModel rm(reward::RewardConfig::for_app_weight(1.0), toy_classifier());
  const Tokens x{"you", "are", "stupid"};
  const Tokens y{"you", "are", "kind"};
  CHECK(rm.property_reward(x, y) == doctest::Approx(toy_classifier().score(y).value()));
  reward::RewardModel sim_only(reward::RewardConfig::for_app_weight(0.0), toy_classifier());
  CHECK(sim_only.property_reward(x, x) == 1.0);
}

TEST_CASE("reward configuration JSON and scorer pinning") {
  reward::RewardModel rm(reward::RewardConfig{}, toy_classifier());
  const auto j = rm.config().to_json();
  const auto back = reward::RewardConfig::from_json(j);
  CHECK(back.to_json() == j);
  CHECK_NOTHROW(reward::RewardModel(back, toy_classifier()));

  auto other = scorers::AppropriatenessModel({"stupid"}, {-1, 0, 0, 0}, 0, 5, 2);
  CHECK_THROWS_AS(reward::RewardModel(back, other), Error);

  CHECK(reward::RewardConfig::from_json({{"alpha", 0.25}}).alpha_sim == 0.25);
  CHECK_THROWS_AS(reward::RewardConfig::from_json({{"alpha", 0.25}, {"alpha_sim", 0.25}}), Error);
  CHECK_THROWS_AS(reward::RewardConfig::from_json({{"alpha_sim", 1.5}}), Error);
  CHECK_THROWS_AS(reward::RewardConfig::from_json({{"beta", -1.0}}), Error);
}

TEST_CASE("edit distance equals the recursive oracle") {
  Rng rng(2);
  for (int trial = 0; trial < 500; ++trial) {
    const auto x = random_words(rng, 9, 3);
    const auto y = random_words(rng, 9, 3);
    const size_t d = metrics::edit_distance(x, y);
    CHECK(d == oracle_distance(x, y));
    CHECK(d == metrics::edit_distance(y, x));
    const double n = metrics::nes(x, y);
    CHECK(n >= 0.0);
    CHECK(n <= 1.0);
    CHECK(metrics::nes(x, x) == 1.0);
  }
  CHECK(metrics::nes(Tokens{}, Tokens{}) == 1.0);
  CHECK(metrics::nes(Tokens{"a"}, Tokens{}) == 0.0);
  CHECK(metrics::nes(Tokens{"a", "b", "c", "d"}, Tokens{"a", "x", "c"}) == doctest::Approx(0.5));
}

TEST_CASE("geometric means") {
  CHECK(*metrics::geometric_mean(0.5, 0.5, 2.0) == doctest::Approx(0.5));
  CHECK_FALSE(metrics::geometric_mean(0.0, 0.5, 2.0));
  CHECK_FALSE(metrics::geometric_mean(0.5, 0.5, 0.0));
  CHECK(metrics::gm3(2, 4, 8) == doctest::Approx(4));
  CHECK_THROWS_AS(metrics::gm3(0, 4, 8), Error);
  CHECK(metrics::order_free_mean({1, 2, 3, 4}) == 2.5);
  CHECK_THROWS_AS(metrics::order_free_mean({}), Error);
}

TEST_CASE("order-free mean does not depend on order") {
  Rng rng(3);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<double> v(1 + rng.below(50));
    for (auto& x : v) x = std::pow(10.0, 8 * rng.uniform() - 4) * (rng.uniform() < 0.5 ? -1 : 1);
    auto w = v;
    rng.shuffle(w);
    CHECK(metrics::order_free_mean(v) == metrics::order_free_mean(w));
  }
}

TEST_CASE("flip rate") {
  const auto clf = toy_classifier();
  const std::vector<Tokens> originals{{"that", "is", "stupid"}, {"idiotic", "idea"}};
  const std::vector<Tokens> rewrites{{"that", "is", "wrong"}, {"idiotic", "plan"}};
  CHECK(metrics::flip_rate(originals, rewrites, clf) == 0.5);
  CHECK(metrics::flip_rate(originals, originals, clf) == 0.0);
  CHECK_THROWS_AS(metrics::flip_rate(originals, std::span(rewrites).first(1), clf), Error);
  CHECK_THROWS_AS(metrics::flip_rate({}, {}, clf), Error);
  CHECK_THROWS_AS(metrics::flip_rate(rewrites, originals, clf), Error);
}

TEST_CASE("exact copy scores zero flips and perfect similarity") {
  const auto clf = toy_classifier();
  const std::vector<Tokens> originals{{"that", "is", "stupid"}, {"an", "idiotic", "idea"}};
  UniformLM lm(0.25);
  const auto row = metrics::evaluate_system("Exact Copy", originals, originals, clf, lm);
  CHECK(row.app == 0.0);
  CHECK(row.sim == 1.0);
  CHECK(row.nes == 1.0);
  CHECK(*row.ppl == doctest::Approx(4.0).epsilon(1e-12));
  CHECK_FALSE(row.gm);
}

TEST_CASE("perplexity is averaged over nonempty rewrites only") {
  const auto clf = toy_classifier();
  const std::vector<Tokens> originals{{"that", "is", "stupid"}, {"an", "idiotic", "idea"}};
  const std::vector<Tokens> rewrites{{"that", "is", "fine"}, {}};
  UniformLM lm(0.5);
  const auto row = metrics::evaluate_system("sys", originals, rewrites, clf, lm);
  CHECK(*row.ppl == doctest::Approx(2.0));
  CHECK(row.app == doctest::Approx(1.0));
  CHECK(row.sim == doctest::Approx((2.0 / 3.0 + 0.0) / 2));
  CHECK(*row.gm == doctest::Approx(std::cbrt(row.app * row.sim / 2.0)));

  const std::vector<Tokens> empty{{}, {}};
  const auto none = metrics::evaluate_system("empty", originals, empty, clf, lm);
  CHECK_FALSE(none.ppl);
  CHECK_FALSE(none.gm);
}

TEST_CASE("reports") {
  std::vector<metrics::EvaluationRow> rows{{"A", 0.5, 0.25, 0.125, 10.0, 0.2},
                                           {"B", 0.0, 1.0, 1.0, std::nullopt, std::nullopt}};
  CHECK(metrics::report_tsv(rows) ==
        "System\tApp.\tSim.\tNES.\tPPL\tGM\n"
        "A\t0.500\t0.250\t0.125\t10.00\t0.200\n"
        "B\t0.000\t1.000\t1.000\t-\t-\n");
  const auto table = metrics::report_table(rows);
  CHECK(table.find("10.00") != std::string::npos);
  CHECK(table.find("System") != std::string::npos);
}
