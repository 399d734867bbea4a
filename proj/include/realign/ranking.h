#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

namespace realign::ranking {

struct RewriteSet {
  std::string id;
  std::vector<std::string> rewrites;

  void validate() const;
};

enum class PlanKind { full, s_window, external };

// Unordered pairs of positions (0-based, first < second).
struct ComparisonPlan {
  size_t k = 0;
  int lambda = 0;  // 0 unless s_window
  PlanKind kind = PlanKind::full;
  std::vector<std::pair<size_t, size_t>> pairs;
};

ComparisonPlan full_plan(size_t k);

// For each i in 1..k: j = 1 + (b mod k) for b = i + t*lambda - 1, t = 1..k-1;
// self-pairs dropped, pairs canonicalized and deduplicated.
ComparisonPlan s_window_plan(size_t k, int lambda);

struct Judgment {
  std::string set_id;
  std::string left, right;
  std::string annotator;
  std::string winner;
};

struct BTResult {
  std::string set_id;
  std::vector<std::string> ids;  // as in the rewrite set
  std::vector<double> scores;    // positive, sum 1
  std::vector<std::string> order;  // best first; ties to the smaller id
  int iterations = 0;
  double final_change = 0.0;
};

struct BTOptions {
  // Pseudo-wins in each direction on every pair of the set.
  double prior = 0.1;
  double tol = 1e-10;
  int max_iterations = 100000;
};

// Bradley-Terry maximum likelihood by minorization-maximization. Judgments
// for other sets are ignored.
BTResult bt_aggregate(std::span<const Judgment> judgments, const RewriteSet& set,
                      const BTOptions& options = {});

struct RankMetrics {
  std::optional<double> pearson;
  double ndcg_at_1 = 0.0;
};

// Pearson correlation of latent scores and NDCG@1 with the baseline scores as
// linear gains.
RankMetrics rank_metrics(const BTResult& predicted, const BTResult& baseline);

std::optional<double> pearson(std::span<const double> x, std::span<const double> y);
double kendall_tau(std::span<const double> x, std::span<const double> y);

struct RankDistributionRow {
  std::string system;
  std::vector<double> percent;  // index r is rank r + 1
  double average_rank = 0.0;
};

// Per-system share of sets at each rank position and mean rank. `systems`
// maps rewrite ids to system names; every set must rank the same roster.
std::vector<RankDistributionRow> rank_distribution(std::span<const BTResult> results,
                                                   const std::map<std::string, std::string>& systems);
std::string rank_distribution_table(std::span<const RankDistributionRow> rows);

// Mean over annotator pairs of the Pearson correlation between their +1/-1
// verdicts on shared pairs. Pairs of annotators with fewer than two shared
// pairs, or with constant verdicts, are skipped.
double annotator_agreement(std::span<const Judgment> judgments);

struct Rating {
  std::string set_id;
  std::string system;
  std::string annotator;
  std::string criterion;
  int score = 0;
};

// system -> criterion -> mean rating.
std::map<std::string, std::map<std::string, double>> mean_absolute_scores(
    std::span<const Rating> ratings);

// CSV with a header row; fields may not contain commas or quotes. Lines
// starting with '#' are skipped on reading.
std::vector<Judgment> read_judgments_csv(const std::filesystem::path& path);
std::string judgments_csv(std::span<const Judgment> judgments);
void write_judgments_csv(const std::filesystem::path& path, std::span<const Judgment> judgments);
std::vector<Rating> read_ratings_csv(const std::filesystem::path& path);
std::string plan_csv(const RewriteSet& set, const ComparisonPlan& plan);
// Rewrite sets in order of first appearance in the judgments; rewrites in
// order of first appearance within the set.
std::vector<RewriteSet> sets_from_judgments(std::span<const Judgment> judgments);

// ---------------------------------------------------------------------------
// Simulated ranking pre-study

struct PrestudyConfig {
  size_t sets = 45;
  size_t k = 6;
  size_t annotators = 5;
  double noise = 0.2;  // chance an annotator flips a verdict
  std::vector<int> lambdas{2, 3, 4};
  BTOptions bt;
  uint64_t seed = 0;
};

struct PrestudyRow {
  std::string plan;
  size_t pairs_per_set = 0;
  size_t judgments = 0;
  double pearson = 0.0;   // mean over sets with a defined correlation
  double ndcg_at_1 = 0.0;
};

struct PrestudyResult {
  std::vector<PrestudyRow> rows;  // full plan first
  double full_plan_tau = 0.0;     // mean Kendall tau of the full plan against the latent scores
};

// Latent scores are uniform per rewrite; each annotator judges every pair
// once and each plan uses the verdicts on its pairs. Plans are compared with
// the full-plan result.
PrestudyResult simulate_prestudy(const PrestudyConfig& config);
std::string prestudy_table(const PrestudyResult& result);

}  // namespace realign::ranking
