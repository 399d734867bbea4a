#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <nlohmann/json.hpp>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "realign/common.h"
#include "realign/corpus.h"
#include "realign/metrics.h"
#include "realign/policy.h"
#include "realign/ppo.h"
#include "realign/ranking.h"
#include "realign/scorers.h"
#include "realign/synthetic.h"

namespace realign::pipeline {

inline constexpr std::string_view kToolVersion = "realign 0.1.0";

struct CorpusOptions {
  std::string source = "synthetic";  // "synthetic" or "file"
  size_t size = 1000;                // synthetic corpus size
  std::filesystem::path path;        // argument JSONL (file source)
  std::filesystem::path classifier;  // appropriateness parameters JSON (file source)
  std::filesystem::path lm;          // n-gram parameters JSON (file source)
  // Texts the classifier was fitted on, one per line (file source, optional).
  std::filesystem::path fit_texts;
};

struct EvaluationOptions {
  policy::GenerationConfig generation;  // test-time decoding
  size_t ranking_sets = 45;
  size_t annotators = 5;
  double judgment_noise = 0.2;
  double bt_prior = 0.1;
};

struct ExperimentConfig {
  uint64_t seed = 0;
  CorpusOptions corpus;
  policy::ModelConfig model;  // vocab_size is taken from the corpus
  policy::PretrainConfig pretrain;
  ppo::PromptSpec prompt;
  policy::GenerationConfig rollout;  // PPO sampling
  std::vector<double> app_weights{0.4, 0.5, 0.6, 1.0};
  double beta = 1.857e-3;
  ppo::PPOConfig ppo;
  EvaluationOptions evaluation;

  // Checks values and that every referenced file exists.
  void validate() const;
  nlohmann::ordered_json to_json() const;
  // Missing keys keep their defaults; unknown keys are rejected.
  static ExperimentConfig from_json(const nlohmann::json& j);
  static ExperimentConfig load(const std::filesystem::path& path);
  // SHA-256 of the canonical JSON dump.
  std::string hash() const;
};

// The desk-scale reproduction defaults.
ExperimentConfig paper_desk_preset();

// Command-line seed, then REALIGN_SEED, then the config value.
void apply_seed_override(ExperimentConfig& config, std::optional<uint64_t> cli_seed);

// Seeds of the individual stages, all derived from the global seed.
struct StageSeeds {
  uint64_t corpus = 0;
  uint64_t split = 0;
  uint64_t init = 0;
  uint64_t pretrain = 0;
  uint64_t ppo = 0;  // shared by every app weight
  uint64_t evaluation = 0;
  uint64_t judgments = 0;

  static StageSeeds derive(uint64_t seed);
  nlohmann::ordered_json to_json() const;
};

struct StageRecord {
  std::string name;
  std::map<std::string, std::string> digests;
  double seconds = 0.0;
};

struct RunManifest {
  std::string config_hash;
  uint64_t seed = 0;
  StageSeeds seeds;
  std::string tool_version{kToolVersion};
  std::vector<StageRecord> stages;
  nlohmann::ordered_json folds = nlohmann::ordered_json::object();
  bool complete = false;

  nlohmann::ordered_json to_json() const;
  // SHA-256 of the manifest without wall-clock times.
  std::string digest() const;
};

class StageError : public Error {
 public:
  StageError(std::string stage, const std::string& what, RunManifest partial);
  const std::string& stage() const { return stage_; }
  const RunManifest& manifest() const { return manifest_; }

 private:
  std::string stage_;
  RunManifest manifest_;
};

struct Candidate {
  double app_weight = 0.0;
  ppo::TrainResult result;
};

struct Judged {
  std::vector<ranking::RewriteSet> sets;
  std::vector<ranking::Judgment> judgments;
  std::map<std::string, std::string> systems;  // rewrite id -> system
  std::vector<ranking::BTResult> results;
};

// Everything the stages produce, in stage order.
struct Workspace {
  ExperimentConfig config;
  StageSeeds seeds;
  std::string config_hash;

  // corpus
  std::vector<corpus::ArgumentRecord> raw;
  std::optional<synthetic::SyntheticTask> task;

  // scorers
  scorers::AppropriatenessModel classifier;
  std::shared_ptr<const scorers::NGramLM> lm;
  std::set<std::string> fit_texts;
  std::string fit_fold;                         // where the scorer-fitting sample came from
  std::vector<corpus::ArgumentRecord> records;  // labeled and split

  // pretrain
  policy::PolicyCheckpoint initial;
  policy::PretrainResult pretrain;

  // ppo
  std::vector<Candidate> candidates;

  // evaluate
  std::vector<metrics::EvaluationRow> table2;
  Judged judged;
  std::vector<ranking::RankDistributionRow> table3b;
  size_t excluded_from_evaluation = 0;

  explicit Workspace(ExperimentConfig c);
};

struct RunOptions {
  std::filesystem::path out_dir;  // empty: nothing is written
  size_t threads = 1;             // concurrent PPO runs
  std::function<void(const std::string&)> log;
};

void stage_corpus(Workspace& ws);
void stage_scorers(Workspace& ws);
void stage_pretrain(Workspace& ws);
void stage_ppo(Workspace& ws, const RunOptions& options = {});
void stage_evaluate(Workspace& ws);

// Pretraining pairs: copy targets for training arguments, plus reference
// rewrites for inappropriate ones when the task provides them.
std::vector<policy::PretrainPair> pretraining_pairs(const Workspace& ws);

// The vocabulary covers the corpus, the reference rewrites and the prompt
// template.
policy::Vocabulary build_vocabulary(const Workspace& ws);

// Test arguments labeled inappropriate that the classifier was not fitted on.
std::vector<corpus::ArgumentRecord> evaluation_records(const Workspace& ws);

// Simulated pairwise judgments on the full plan. Annotators prefer the rewrite
// with the higher per-rewrite GM and flip each verdict with the configured
// noise; exact ties are settled by a fair coin.
Judged judge_rewrites(const std::vector<std::string>& system_names,
                      const std::vector<std::vector<scorers::Tokens>>& rewrites,
                      const std::vector<scorers::Tokens>& originals,
                      const scorers::AppropriatenessModel& classifier,
                      const scorers::FluencyModel& lm, const EvaluationOptions& options,
                      uint64_t seed);

// Runs all stages, writing artifacts and manifest.json under out_dir.
RunManifest run_pipeline(const ExperimentConfig& config, const RunOptions& options = {});

std::string candidate_name(double app_weight);

}  // namespace realign::pipeline
