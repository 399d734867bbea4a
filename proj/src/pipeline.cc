#include "realign/pipeline.h"

#include <algorithm>
#include <atomic>
#include <cctype>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>

#include "realign/hash.h"
#include "realign/prompt.h"
#include "realign/random.h"
#include "realign/reward.h"
#include "realign/text.h"

namespace realign::pipeline {

namespace {

using nlohmann::json;
using nlohmann::ordered_json;

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& section) {
  if (!j.is_object()) throw Error("config: " + section + " must be an object");
  for (const auto& [key, value] : j.items()) {
    if (!allowed.count(key)) throw Error("config: unknown key " + section + "." + key);
  }
}

std::set<std::string> keys_of(const json& j) {
  std::set<std::string> out;
  for (const auto& [key, value] : j.items()) out.insert(key);
  return out;
}

// Stage seeds come from the global seed, so per-section seeds are not part of
// the configuration.
json without_seed(json j) {
  j.erase("seed");
  return j;
}

std::set<std::string> keys_with_seed(const json& j) {
  auto k = keys_of(j);
  k.insert("seed");
  return k;
}

void require_file(const std::filesystem::path& p, const std::string& what) {
  if (p.empty()) throw Error("config: corpus." + what + " is required for a file corpus");
  if (!std::filesystem::is_regular_file(p))
    throw Error("config: " + what + " " + p.string() + " does not exist");
}

json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(path.string() + ": " + e.what());
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Configuration

void ExperimentConfig::validate() const {
  if (corpus.source == "synthetic") {
    if (corpus.size < 100) throw Error("config: synthetic corpus needs at least 100 arguments");
  } else if (corpus.source == "file") {
    require_file(corpus.path, "path");
    require_file(corpus.classifier, "classifier");
    require_file(corpus.lm, "lm");
    if (!corpus.fit_texts.empty()) require_file(corpus.fit_texts, "fit_texts");
  } else {
    throw Error("config: unknown corpus source " + corpus.source);
  }
  policy::ModelConfig m = model;
  m.vocab_size = 1;
  m.validate();
  if (pretrain.steps < 0 || pretrain.batch_size < 1 || pretrain.eval_every < 1 ||
      !(pretrain.learning_rate > 0.0) || !(pretrain.final_learning_rate > 0.0) ||
      !(pretrain.holdout_fraction >= 0.0 && pretrain.holdout_fraction < 1.0)) {
    throw Error("config: invalid pretrain settings");
  }
  if (prompt.mode == policy::PromptMode::few_shot && prompt.shots.empty()) {
    throw Error("config: few-shot prompts need at least one shot");
  }
  rollout.validate();
  if (app_weights.empty()) throw Error("config: app_weights is empty");
  std::set<double> seen;
  for (double w : app_weights) {
    if (!(w >= 0.0 && w <= 1.0)) throw Error("config: app weight outside [0, 1]");
    if (!seen.insert(w).second) throw Error("config: repeated app weight");
  }
  if (!(beta >= 0.0)) throw Error("config: beta must be nonnegative");
  ppo.validate();
  evaluation.generation.validate();
  if (evaluation.ranking_sets < 1 || evaluation.annotators < 1) {
    throw Error("config: ranking needs at least one set and one annotator");
  }
  if (!(evaluation.judgment_noise >= 0.0 && evaluation.judgment_noise <= 1.0)) {
    throw Error("config: judgment_noise outside [0, 1]");
  }
  if (!(evaluation.bt_prior >= 0.0)) throw Error("config: bt_prior must be nonnegative");
}

ordered_json ExperimentConfig::to_json() const {
  ordered_json j;
  j["seed"] = seed;
  j["corpus"] = {{"source", corpus.source},      {"size", corpus.size},
                 {"path", corpus.path.string()}, {"classifier", corpus.classifier.string()},
                 {"lm", corpus.lm.string()},     {"fit_texts", corpus.fit_texts.string()}};
  json m = model.to_json();
  m.erase("vocab_size");
  j["model"] = m;
  j["pretrain"] = without_seed(pretrain.to_json());
  j["prompt"] = prompt.to_json();
  j["rollout"] = without_seed(rollout.to_json());
  j["reward"] = {{"beta", beta}, {"app_weights", app_weights}};
  j["ppo"] = without_seed(ppo.to_json());
  j["evaluation"] = {{"generation", without_seed(evaluation.generation.to_json())},
                     {"ranking_sets", evaluation.ranking_sets},
                     {"annotators", evaluation.annotators},
                     {"judgment_noise", evaluation.judgment_noise},
                     {"bt_prior", evaluation.bt_prior}};
  return j;
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  ExperimentConfig c;
  check_keys(
      j,
      {"seed", "corpus", "model", "pretrain", "prompt", "rollout", "reward", "ppo", "evaluation"},
      "config");
  try {
    c.seed = j.value("seed", c.seed);
    if (j.contains("corpus")) {
      const auto& s = j["corpus"];
      check_keys(s, {"source", "size", "path", "classifier", "lm", "fit_texts"}, "corpus");
      c.corpus.source = s.value("source", c.corpus.source);
      c.corpus.size = s.value("size", c.corpus.size);
      c.corpus.path = s.value("path", std::string());
      c.corpus.classifier = s.value("classifier", std::string());
      c.corpus.lm = s.value("lm", std::string());
      c.corpus.fit_texts = s.value("fit_texts", std::string());
    }
    if (j.contains("model")) {
      check_keys(j["model"], keys_of(c.model.to_json()), "model");
      c.model = policy::ModelConfig::from_json(j["model"]);
    }
    if (j.contains("pretrain")) {
      check_keys(j["pretrain"], keys_with_seed(c.pretrain.to_json()), "pretrain");
      c.pretrain = policy::PretrainConfig::from_json(j["pretrain"]);
    }
    if (j.contains("prompt")) {
      check_keys(j["prompt"], {"mode", "shots"}, "prompt");
      c.prompt = ppo::PromptSpec::from_json(j["prompt"]);
    }
    if (j.contains("rollout")) {
      check_keys(j["rollout"], keys_with_seed(c.rollout.to_json()), "rollout");
      c.rollout = policy::GenerationConfig::from_json(j["rollout"]);
    }
    if (j.contains("reward")) {
      const auto& r = j["reward"];
      check_keys(r, {"beta", "app_weights"}, "reward");
      c.beta = r.value("beta", c.beta);
      if (r.contains("app_weights")) c.app_weights = r["app_weights"].get<std::vector<double>>();
    }
    if (j.contains("ppo")) {
      check_keys(j["ppo"], keys_with_seed(c.ppo.to_json()), "ppo");
      c.ppo = ppo::PPOConfig::from_json(j["ppo"]);
    }
    if (j.contains("evaluation")) {
      const auto& e = j["evaluation"];
      check_keys(e, {"generation", "ranking_sets", "annotators", "judgment_noise", "bt_prior"},
                 "evaluation");
      if (e.contains("generation")) {
        check_keys(e["generation"], keys_with_seed(c.evaluation.generation.to_json()),
                   "evaluation.generation");
        c.evaluation.generation = policy::GenerationConfig::from_json(e["generation"]);
      }
      c.evaluation.ranking_sets = e.value("ranking_sets", c.evaluation.ranking_sets);
      c.evaluation.annotators = e.value("annotators", c.evaluation.annotators);
      c.evaluation.judgment_noise = e.value("judgment_noise", c.evaluation.judgment_noise);
      c.evaluation.bt_prior = e.value("bt_prior", c.evaluation.bt_prior);
    }
  } catch (const json::exception& e) {
    throw Error(std::string("config: ") + e.what());
  }
  c.pretrain.seed = c.rollout.seed = c.ppo.seed = c.evaluation.generation.seed = 0;
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  ExperimentConfig c = from_json(read_json_file(path));
  // Relative corpus paths resolve against the config file.
  const auto base = path.parent_path();
  for (auto* p : {&c.corpus.path, &c.corpus.classifier, &c.corpus.lm, &c.corpus.fit_texts}) {
    if (!p->empty() && p->is_relative()) *p = base / *p;
  }
  c.validate();
  return c;
}

std::string ExperimentConfig::hash() const { return sha256_hex(json(to_json()).dump()); }

ExperimentConfig paper_desk_preset() {
  ExperimentConfig c;
  c.corpus.source = "synthetic";
  c.corpus.size = 1000;
  c.model = {
      .vocab_size = 0, .d_model = 32, .n_layers = 2, .n_heads = 4, .d_ff = 128, .context = 256};
  c.pretrain.steps = 2000;
  c.pretrain.batch_size = 8;
  c.pretrain.learning_rate = 3e-3;
  c.pretrain.final_learning_rate = 3e-4;
  c.pretrain.eval_every = 250;
  c.rollout.max_new_tokens = 24;
  c.ppo.lr_start = 1e-5;
  c.ppo.lr_end = 3e-6;
  c.ppo.total_steps = 2000;
  c.ppo.value_lr_scale = 30.0;
  c.ppo.scope = ppo::TrainScope::adapters;
  c.evaluation.generation.max_new_tokens = 24;
  return c;
}

void apply_seed_override(ExperimentConfig& config, std::optional<uint64_t> cli_seed) {
  if (cli_seed) {
    config.seed = *cli_seed;
    return;
  }
  if (const char* env = std::getenv("REALIGN_SEED"); env && *env) {
    try {
      size_t used = 0;
      const auto v = std::stoull(env, &used);
      if (used != std::string_view(env).size()) throw std::invalid_argument(env);
      config.seed = v;
    } catch (const std::exception&) {
      throw Error(std::string("REALIGN_SEED is not an unsigned integer: ") + env);
    }
  }
}

StageSeeds StageSeeds::derive(uint64_t seed) {
  return {derive_seed(seed, 1), derive_seed(seed, 2), derive_seed(seed, 3), derive_seed(seed, 4),
          derive_seed(seed, 5), derive_seed(seed, 6), derive_seed(seed, 7)};
}

ordered_json StageSeeds::to_json() const {
  return {{"corpus", corpus},      {"split", split}, {"init", init},
          {"pretrain", pretrain},  {"ppo", ppo},     {"evaluation", evaluation},
          {"judgments", judgments}};
}

// ---------------------------------------------------------------------------
// Manifest

ordered_json RunManifest::to_json() const {
  ordered_json j;
  j["config_hash"] = config_hash;
  j["seed"] = seed;
  j["seeds"] = seeds.to_json();
  j["tool_version"] = tool_version;
  j["stages"] = ordered_json::array();
  for (const auto& s : stages) {
    ordered_json d(s.digests);
    j["stages"].push_back({{"name", s.name}, {"digests", d}, {"seconds", s.seconds}});
  }
  j["folds"] = folds;
  j["complete"] = complete;
  return j;
}

std::string RunManifest::digest() const {
  ordered_json j = to_json();
  for (auto& s : j["stages"]) s.erase("seconds");
  return sha256_hex(j.dump());
}

StageError::StageError(std::string stage, const std::string& what, RunManifest partial)
    : Error("stage " + stage + " failed: " + what),
      stage_(std::move(stage)),
      manifest_(std::move(partial)) {}

// ---------------------------------------------------------------------------
// Stages

Workspace::Workspace(ExperimentConfig c) : config(std::move(c)) {
  config.validate();
  seeds = StageSeeds::derive(config.seed);
  config_hash = config.hash();
}

std::string candidate_name(double app_weight) {
  std::ostringstream s;
  s << "PPO app=" << app_weight;
  return s.str();
}

void stage_corpus(Workspace& ws) {
  const auto& c = ws.config.corpus;
  if (c.source == "synthetic") {
    ws.task = synthetic::make_synthetic_task(ws.seeds.corpus, c.size);
    ws.raw = ws.task->corpus;
  } else {
    ws.raw = corpus::filter_arguments(corpus::read_jsonl(c.path));
    if (ws.raw.empty()) throw Error("no argument passes the length filter");
  }
}

void stage_scorers(Workspace& ws) {
  const auto& c = ws.config.corpus;
  if (ws.task) {
    ws.classifier = ws.task->classifier;
    ws.lm = std::make_shared<scorers::NGramLM>(ws.task->lm);
    ws.fit_texts = ws.task->fit_texts;
    ws.fit_fold = "synthetic-fit-sample";
  } else {
    ws.classifier = scorers::AppropriatenessModel::from_parameters(read_json_file(c.classifier));
    ws.lm =
        std::make_shared<scorers::NGramLM>(scorers::NGramLM::from_parameters(read_json_file(c.lm)));
    ws.fit_texts.clear();
    if (!c.fit_texts.empty()) {
      for (auto& t : corpus::read_lines(c.fit_texts)) ws.fit_texts.insert(std::move(t));
    }
    ws.fit_fold = "external";
  }
  const auto labeled =
      corpus::soft_label(ws.raw, [&](std::string_view t) { return ws.classifier.score_text(t); });
  ws.records = corpus::split_dataset(labeled, ws.seeds.split);
}

policy::Vocabulary build_vocabulary(const Workspace& ws) {
  std::vector<std::string> texts;
  if (ws.task) texts.push_back(join(ws.task->token_inventory, " "));
  for (const auto& r : ws.raw) {
    texts.push_back(r.text);
    if (ws.task) texts.push_back(ws.task->clean(r.text));
  }
  for (const auto& s : ws.config.prompt.shots) {
    texts.push_back(s.argument);
    texts.push_back(s.rewrite);
  }
  // The template words; the argument slot is filled with a corpus word.
  const std::string slot =
      ws.raw.empty() ? std::string("x") : split_whitespace(ws.raw.front().text).front();
  texts.push_back(policy::render_prompt(slot, ws.config.prompt.mode, ws.config.prompt.shots));
  return policy::Vocabulary::from_texts(texts);
}

std::vector<policy::PretrainPair> pretraining_pairs(const Workspace& ws) {
  const auto& vocab = ws.initial.vocab;
  std::vector<policy::PretrainPair> pairs;
  for (const auto& r : corpus::with_split(ws.records, corpus::Split::train)) {
    const auto prompt =
        policy::encode_prompt(vocab, r.text, ws.config.prompt.mode, ws.config.prompt.shots);
    pairs.push_back({prompt, vocab.encode(r.text)});
    if (ws.task && r.app_label == corpus::AppLabel::inappropriate) {
      pairs.push_back({prompt, vocab.encode(ws.task->clean(r.text))});
    }
  }
  if (pairs.empty()) throw Error("no training arguments for pretraining");
  return pairs;
}

void stage_pretrain(Workspace& ws) {
  ws.initial.vocab = build_vocabulary(ws);
  policy::ModelConfig mc = ws.config.model;
  mc.vocab_size = static_cast<int>(ws.initial.vocab.size());
  mc.validate();
  const auto pairs = pretraining_pairs(ws);
  policy::PretrainConfig pc = ws.config.pretrain;
  pc.seed = ws.seeds.pretrain;
  ws.pretrain = policy::pretrain_mle(policy::PolicyParams::init(mc, ws.seeds.init),
                                     ws.initial.vocab, pairs, pc);
  ws.initial = ws.pretrain.checkpoint;
  ws.initial.config_hash = ws.config_hash;
}

void stage_ppo(Workspace& ws, const RunOptions& options) {
  if (ws.initial.config_hash != ws.config_hash) {
    throw Error("initial policy was produced under config " + ws.initial.config_hash);
  }
  const auto train = corpus::with_split(ws.records, corpus::Split::train);
  const auto validation = corpus::with_split(ws.records, corpus::Split::validation);
  const auto& weights = ws.config.app_weights;
  ws.candidates.assign(weights.size(), {});

  std::mutex log_mutex;
  auto run_one = [&](size_t i) {
    const reward::RewardModel rm(reward::RewardConfig::for_app_weight(weights[i], ws.config.beta),
                                 ws.classifier);
    ppo::PPOConfig cfg = ws.config.ppo;
    cfg.seed = ws.seeds.ppo;
    ppo::TrainInputs in;
    in.initial = &ws.initial;
    in.train = train;
    in.validation = validation;
    in.reward_model = &rm;
    in.prompt = ws.config.prompt;
    in.generation = ws.config.rollout;
    in.evaluator = {&ws.classifier, ws.lm.get(), ws.config.evaluation.generation};
    in.evaluator.generation.seed = ws.seeds.evaluation;
    const std::string name = candidate_name(weights[i]);
    auto on_step = [&](const ppo::LogRow& r) {
      if (options.log && r.step % 500 == 0) {
        std::lock_guard lock(log_mutex);
        std::ostringstream s;
        s << name << " step " << r.step << " reward " << r.mean_reward << " kl " << r.mean_kl;
        options.log(s.str());
      }
    };
    ws.candidates[i] = {weights[i], ppo::train(in, cfg, on_step)};
    ws.candidates[i].result.best.config_hash = ws.config_hash;
  };

  const size_t threads = std::max<size_t>(1, std::min(options.threads, weights.size()));
  if (threads == 1) {
    for (size_t i = 0; i < weights.size(); ++i) run_one(i);
    return;
  }
  std::vector<std::exception_ptr> errors(weights.size());
  std::vector<std::thread> pool;
  std::atomic<size_t> next{0};
  for (size_t t = 0; t < threads; ++t) {
    pool.emplace_back([&] {
      for (size_t i = next++; i < weights.size(); i = next++) {
        try {
          run_one(i);
        } catch (...) {
          errors[i] = std::current_exception();
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

std::vector<corpus::ArgumentRecord> evaluation_records(const Workspace& ws) {
  std::vector<corpus::ArgumentRecord> out;
  for (const auto& r :
       ppo::inappropriate_only(corpus::with_split(ws.records, corpus::Split::test))) {
    if (!ws.fit_texts.count(r.text)) out.push_back(r);
  }
  return out;
}

Judged judge_rewrites(const std::vector<std::string>& system_names,
                      const std::vector<std::vector<scorers::Tokens>>& rewrites,
                      const std::vector<scorers::Tokens>& originals,
                      const scorers::AppropriatenessModel& classifier,
                      const scorers::FluencyModel& lm, const EvaluationOptions& options,
                      uint64_t seed) {
  const size_t k = system_names.size();
  if (k < 2) throw Error("judge_rewrites: need at least two systems");
  if (rewrites.size() != k) throw Error("judge_rewrites: one rewrite list per system required");
  for (const auto& r : rewrites)
    if (r.size() != originals.size()) throw Error("judge_rewrites: rewrite count mismatch");
  const size_t n = std::min(options.ranking_sets, originals.size());
  if (n == 0) throw Error("judge_rewrites: no arguments to rank");

  Judged out;
  Rng rng(seed);
  const auto plan = ranking::full_plan(k);
  ranking::BTOptions bt;
  bt.prior = options.bt_prior;
  for (size_t s = 0; s < n; ++s) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "set%03zu", s);
    ranking::RewriteSet set{buf, {}};
    std::vector<double> quality(k, 0.0);
    for (size_t i = 0; i < k; ++i) {
      set.rewrites.push_back(set.id + "-s" + std::to_string(i));
      out.systems[set.rewrites.back()] = system_names[i];
      const auto& rw = rewrites[i][s];
      if (rw.empty()) continue;
      quality[i] = metrics::geometric_mean(classifier.score(rw).value(),
                                           scorers::similarity_score(originals[s], rw).value(),
                                           scorers::perplexity(rw, lm))
                       .value_or(0.0);
    }
    for (size_t a = 0; a < options.annotators; ++a) {
      const std::string annotator = "a" + std::to_string(a + 1);
      for (const auto& [i, j] : plan.pairs) {
        bool left = quality[i] > quality[j] || (quality[i] == quality[j] && rng.bernoulli(0.5));
        if (rng.bernoulli(options.judgment_noise)) left = !left;
        out.judgments.push_back({set.id, set.rewrites[i], set.rewrites[j], annotator,
                                 left ? set.rewrites[i] : set.rewrites[j]});
      }
    }
    out.sets.push_back(std::move(set));
  }
  for (const auto& set : out.sets)
    out.results.push_back(ranking::bt_aggregate(out.judgments, set, bt));
  return out;
}

void stage_evaluate(Workspace& ws) {
  const auto records = evaluation_records(ws);
  ws.excluded_from_evaluation =
      ppo::inappropriate_only(corpus::with_split(ws.records, corpus::Split::test)).size() -
      records.size();
  if (records.empty()) throw Error("no inappropriate test arguments to evaluate");
  std::vector<scorers::Tokens> originals;
  for (const auto& r : records) originals.push_back(ppo::argument_words(r));

  policy::GenerationConfig gen = ws.config.evaluation.generation;
  gen.seed = ws.seeds.evaluation;
  const auto& vocab = ws.initial.vocab;

  std::vector<std::string> names{"Exact Copy"};
  std::vector<std::vector<scorers::Tokens>> outputs{originals};
  if (ws.task) {
    std::vector<scorers::Tokens> ref;
    for (const auto& r : records) ref.push_back(split_whitespace(ws.task->clean(r.text)));
    names.push_back("Reference Rewrite");
    outputs.push_back(std::move(ref));
  }
  names.push_back("Pretrained");
  outputs.push_back(
      ppo::rewrite_arguments(ws.initial.params, vocab, records, ws.config.prompt, gen));
  for (const auto& c : ws.candidates) {
    names.push_back(candidate_name(c.app_weight));
    outputs.push_back(
        ppo::rewrite_arguments(c.result.best.params, vocab, records, ws.config.prompt, gen));
  }

  ws.table2.clear();
  for (size_t i = 0; i < names.size(); ++i) {
    ws.table2.push_back(
        metrics::evaluate_system(names[i], originals, outputs[i], ws.classifier, *ws.lm));
  }
  // Every system but the copy baseline enters the ranking study.
  const std::vector<std::string> ranked(names.begin() + 1, names.end());
  const std::vector<std::vector<scorers::Tokens>> ranked_outputs(outputs.begin() + 1,
                                                                 outputs.end());
  ws.judged = judge_rewrites(ranked, ranked_outputs, originals, ws.classifier, *ws.lm,
                             ws.config.evaluation, ws.seeds.judgments);
  ws.table3b = ranking::rank_distribution(ws.judged.results, ws.judged.systems);
}

// ---------------------------------------------------------------------------
// Driver

namespace {

std::string systems_csv(const std::map<std::string, std::string>& systems) {
  std::string s = "rewrite_id,system\n";
  for (const auto& [id, name] : systems) s += id + ',' + name + '\n';
  return s;
}

std::map<std::string, std::string> stage_digests(const std::string& stage, const Workspace& ws) {
  std::map<std::string, std::string> d;
  if (stage == "corpus") {
    d["records"] = sha256_hex(corpus::to_jsonl(ws.raw));
  } else if (stage == "scorers") {
    d["classifier"] = ws.classifier.descriptor().version;
    d["lm"] = ws.lm->descriptor().version;
    d["labeled"] = sha256_hex(corpus::to_jsonl(ws.records));
  } else if (stage == "pretrain") {
    d["checkpoint"] = ws.initial.digest();
  } else if (stage == "ppo") {
    for (const auto& c : ws.candidates) {
      const auto name = candidate_name(c.app_weight);
      d[name] = c.result.best.digest();
      d[name + " log"] = sha256_hex(ppo::training_log_csv(c.result.log));
    }
  } else if (stage == "evaluate") {
    d["table2"] = sha256_hex(metrics::report_tsv(ws.table2));
    d["table3b"] = sha256_hex(ranking::rank_distribution_table(ws.table3b));
    d["judgments"] = sha256_hex(ranking::judgments_csv(ws.judged.judgments));
  }
  return d;
}

ordered_json folds_json(const Workspace& ws) {
  ordered_json f;
  f["scorer_fit"] = ws.fit_fold;
  f["scorer_fit_size"] = ws.fit_texts.size();
  f["policy_init"] = "train";
  f["checkpoint_selection"] = "validation";
  f["evaluation"] = "test";
  f["evaluation_excluded_as_scorer_fit"] = ws.excluded_from_evaluation;
  return f;
}

void write_file(const std::filesystem::path& path, const std::string& content) {
  std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << content;
  if (!out) throw Error("cannot write " + path.string());
}

// Text artifacts carry the config hash in a leading comment line.
std::string tagged(const Workspace& ws, const std::string& content) {
  return "# config " + ws.config_hash + "\n" + content;
}

std::string slug(const std::string& name) {
  std::string s;
  for (char c : name) s += (std::isalnum(static_cast<unsigned char>(c)) || c == '.') ? c : '-';
  return s;
}

void write_artifacts(const std::string& stage, const Workspace& ws,
                     const std::filesystem::path& dir) {
  if (stage == "corpus") {
    write_file(dir / "corpus.jsonl", tagged(ws, corpus::to_jsonl(ws.raw)));
  } else if (stage == "scorers") {
    write_file(
        dir / "scorers" / "classifier.json",
        json{{"config_hash", ws.config_hash}, {"parameters", ws.classifier.parameters()}}.dump(2) +
            "\n");
    write_file(
        dir / "scorers" / "lm.json",
        json{{"config_hash", ws.config_hash}, {"parameters", ws.lm->parameters()}}.dump() + "\n");
    write_file(dir / "labeled.jsonl", tagged(ws, corpus::to_jsonl(ws.records)));
  } else if (stage == "pretrain") {
    std::filesystem::create_directories(dir / "policy");
    ws.initial.save(dir / "policy" / "pretrained.ckpt");
  } else if (stage == "ppo") {
    for (const auto& c : ws.candidates) {
      const auto sub = dir / "ppo" / slug(candidate_name(c.app_weight));
      std::filesystem::create_directories(sub);
      c.result.best.save(sub / "best.ckpt");
      write_file(sub / "log.csv", tagged(ws, ppo::training_log_csv(c.result.log)));
      std::vector<metrics::EvaluationRow> rows;
      for (const auto& e : c.result.evaluations) rows.push_back(e.row);
      write_file(sub / "validation.tsv", tagged(ws, metrics::report_tsv(rows)));
    }
  } else if (stage == "evaluate") {
    write_file(dir / "reports" / "table2.tsv", tagged(ws, metrics::report_tsv(ws.table2)));
    write_file(dir / "reports" / "table2.txt", tagged(ws, metrics::report_table(ws.table2)));
    write_file(dir / "reports" / "table3b.txt",
               tagged(ws, ranking::rank_distribution_table(ws.table3b)));
    write_file(dir / "reports" / "judgments.csv",
               tagged(ws, ranking::judgments_csv(ws.judged.judgments)));
    write_file(dir / "reports" / "systems.csv", tagged(ws, systems_csv(ws.judged.systems)));
  }
}

}  // namespace

RunManifest run_pipeline(const ExperimentConfig& config, const RunOptions& options) {
  Workspace ws(config);
  RunManifest m;
  m.config_hash = ws.config_hash;
  m.seed = config.seed;
  m.seeds = ws.seeds;
  const bool write = !options.out_dir.empty();
  auto save_manifest = [&] {
    if (write) write_file(options.out_dir / "manifest.json", m.to_json().dump(2) + "\n");
  };
  if (write) {
    std::filesystem::create_directories(options.out_dir);
    write_file(options.out_dir / "config.json", config.to_json().dump(2) + "\n");
  }

  const std::vector<std::pair<std::string, std::function<void()>>> stages{
      {"corpus", [&] { stage_corpus(ws); }},     {"scorers", [&] { stage_scorers(ws); }},
      {"pretrain", [&] { stage_pretrain(ws); }}, {"ppo", [&] { stage_ppo(ws, options); }},
      {"evaluate", [&] { stage_evaluate(ws); }},
  };
  for (const auto& [name, run] : stages) {
    if (options.log) options.log("stage " + name);
    const auto t0 = std::chrono::steady_clock::now();
    try {
      run();
      StageRecord rec{name, stage_digests(name, ws), 0.0};
      if (write) write_artifacts(name, ws, options.out_dir);
      rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      m.stages.push_back(std::move(rec));
      m.folds = folds_json(ws);
      save_manifest();
    } catch (const std::exception& e) {
      save_manifest();
      throw StageError(name, e.what(), m);
    }
  }
  m.complete = true;
  save_manifest();
  return m;
}

}  // namespace realign::pipeline
