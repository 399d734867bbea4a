#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <nlohmann/json.hpp>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "realign/corpus.h"
#include "realign/exemplar.h"
#include "realign/metrics.h"
#include "realign/pipeline.h"
#include "realign/policy.h"
#include "realign/ppo.h"
#include "realign/ranking.h"
#include "realign/reward.h"
#include "realign/synthetic.h"
#include "realign/text.h"

namespace fs = std::filesystem;
using namespace realign;
using nlohmann::json;

namespace {

struct ConfigArgs {
  std::string config;
  std::string preset;
  std::optional<uint64_t> seed;

  void add(CLI::App* app) {
    app->add_option("--config", config, "experiment config (JSON)");
    app->add_option("--preset", preset, "built-in config: paper-desk");
    app->add_option("--seed", seed, "overrides REALIGN_SEED and the config seed");
  }

  pipeline::ExperimentConfig load() const {
    if (!config.empty() && !preset.empty()) throw Error("give either --config or --preset");
    pipeline::ExperimentConfig c;
    if (!config.empty()) {
      c = pipeline::ExperimentConfig::load(config);
    } else if (preset == "paper-desk") {
      c = pipeline::paper_desk_preset();
    } else if (!preset.empty()) {
      throw Error("unknown preset " + preset);
    } else {
      throw Error("a --config or --preset is required");
    }
    pipeline::apply_seed_override(c, seed);
    c.validate();
    return c;
  }
};

void write_text(const fs::path& path, const std::string& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << content;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open " + path.string());
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

// The config hash from a "# config <hash>" first line, if any.
std::optional<std::string> tagged_hash(const fs::path& path) {
  std::ifstream in(path);
  std::string line;
  if (!std::getline(in, line)) return std::nullopt;
  const std::string prefix = "# config ";
  if (line.rfind(prefix, 0) != 0) return std::nullopt;
  return line.substr(prefix.size());
}

void check_hash(const std::string& found, const std::string& expected, const std::string& what) {
  if (found != expected) {
    throw Error(what + " was produced under config " + (found.empty() ? "<none>" : found) +
                ", not " + expected);
  }
}

// Runs the corpus and scorer stages for `config`.
pipeline::Workspace prepare(const pipeline::ExperimentConfig& config) {
  pipeline::Workspace ws(config);
  pipeline::stage_corpus(ws);
  pipeline::stage_scorers(ws);
  return ws;
}

void print_rows(const std::vector<metrics::EvaluationRow>& rows, bool tsv) {
  std::cout << (tsv ? metrics::report_tsv(rows) : metrics::report_table(rows));
}

// ---------------------------------------------------------------------------

void add_corpus(CLI::App& root) {
  auto* cmd = root.add_subcommand("corpus", "argument corpora");
  cmd->require_subcommand(1);

  auto* synth = cmd->add_subcommand("synth", "generate the synthetic task corpus");
  static uint64_t seed = 0;
  static size_t size = 1000;
  static std::string out;
  synth->add_option("--seed", seed);
  synth->add_option("--size", size);
  synth->add_option("--out", out, "JSONL output")->required();
  synth->callback([] {
    const auto task = synthetic::make_synthetic_task(seed, size);
    corpus::write_jsonl(out, task.corpus);
    std::cout << task.corpus.size() << " arguments written to " << out << "\n";
  });

  auto* filter = cmd->add_subcommand("filter", "apply the length filter and leakage removal");
  static std::string in, filtered, topics;
  filter->add_option("--in", in)->required();
  filter->add_option("--out", filtered)->required();
  filter->add_option("--reserved-topics", topics, "file with one reserved topic per line");
  filter->callback([] {
    auto records = corpus::filter_arguments(corpus::read_jsonl(in));
    if (!topics.empty()) {
      const auto lines = corpus::read_lines(topics);
      records = corpus::remove_topic_leakage(records, {lines.begin(), lines.end()});
    }
    corpus::write_jsonl(filtered, records);
    std::cout << records.size() << " arguments kept\n";
  });

  auto* prep = cmd->add_subcommand("prepare", "label and split the configured corpus");
  static ConfigArgs cfg;
  static std::string dir;
  cfg.add(prep);
  prep->add_option("--out", dir, "output directory")->required();
  prep->callback([] {
    const auto ws = prepare(cfg.load());
    const std::string tag = "# config " + ws.config_hash + "\n";
    write_text(fs::path(dir) / "labeled.jsonl", tag + corpus::to_jsonl(ws.records));
    write_text(
        fs::path(dir) / "classifier.json",
        json{{"config_hash", ws.config_hash}, {"parameters", ws.classifier.parameters()}}.dump(2) +
            "\n");
    size_t counts[3] = {0, 0, 0};
    for (const auto& r : ws.records) ++counts[static_cast<int>(*r.split)];
    std::cout << "train " << counts[0] << " validation " << counts[1] << " test " << counts[2]
              << "\nconfig " << ws.config_hash << "\n";
  });
}

void add_policy(CLI::App& root) {
  auto* cmd = root.add_subcommand("policy", "initial policy");
  cmd->require_subcommand(1);

  auto* pre = cmd->add_subcommand("pretrain", "maximum-likelihood pretraining");
  static ConfigArgs cfg;
  static std::string out;
  cfg.add(pre);
  pre->add_option("--out", out, "checkpoint path")->required();
  pre->callback([] {
    auto ws = prepare(cfg.load());
    pipeline::stage_pretrain(ws);
    if (fs::path(out).has_parent_path()) fs::create_directories(fs::path(out).parent_path());
    ws.initial.save(out);
    std::cout << "held-out loss " << ws.pretrain.initial_loss << " -> " << ws.pretrain.best_loss
              << " at step " << ws.initial.step << "\ncheckpoint " << ws.initial.digest() << "\n";
  });

  auto* sample = cmd->add_subcommand("sample", "rewrite one argument");
  static std::string ckpt, text, mode = "zero_shot";
  static policy::GenerationConfig gen;
  sample->add_option("--ckpt", ckpt)->required();
  sample->add_option("--text", text)->required();
  sample->add_option("--mode", mode, "zero_shot, few_shot or instruction");
  sample->add_option("--seed", gen.seed);
  sample->add_option("--top-p", gen.top_p);
  sample->add_option("--max-new-tokens", gen.max_new_tokens);
  sample->callback([] {
    const auto ck = policy::PolicyCheckpoint::load(ckpt);
    gen.validate();
    const auto prompt = policy::encode_prompt(ck.vocab, text, policy::parse_prompt_mode(mode));
    std::cout << ck.vocab.decode(policy::sample_response(ck.params, prompt, gen)) << "\n";
  });
}

void add_ppo(CLI::App& root) {
  auto* cmd = root.add_subcommand("ppo", "reinforcement learning");
  cmd->require_subcommand(1);
  auto* train = cmd->add_subcommand("train", "one PPO run for one appropriateness weight");
  static ConfigArgs cfg;
  static std::string corpus_path, init, out;
  static double weight = 1.0;
  cfg.add(train);
  train->add_option("--corpus", corpus_path, "labeled corpus from `corpus prepare`")->required();
  train->add_option("--init", init, "pretrained checkpoint")->required();
  train->add_option("--app-weight", weight, "appropriateness weight in [0, 1]");
  train->add_option("--out", out, "output directory")->required();
  train->callback([] {
    auto ws = prepare(cfg.load());
    check_hash(tagged_hash(corpus_path).value_or(""), ws.config_hash, corpus_path);
    ws.records = corpus::read_jsonl(corpus_path);
    ws.initial = policy::PolicyCheckpoint::load(init);
    check_hash(ws.initial.config_hash, ws.config_hash, init);
    ws.config.app_weights = {weight};
    pipeline::RunOptions opts;
    opts.log = [](const std::string& s) { std::cerr << s << "\n"; };
    pipeline::stage_ppo(ws, opts);
    const auto& r = ws.candidates.front().result;
    fs::create_directories(out);
    r.best.save(fs::path(out) / "best.ckpt");
    write_text(fs::path(out) / "log.csv",
               "# config " + ws.config_hash + "\n" + ppo::training_log_csv(r.log));
    std::cout << "best step " << r.best_step << " " << r.best.eval_scores->dump() << "\n";
  });
}

void add_eval(CLI::App& root) {
  auto* cmd = root.add_subcommand("eval", "score checkpoints on the test arguments");
  static ConfigArgs cfg;
  static std::vector<std::string> ckpts;
  static bool tsv = false;
  cfg.add(cmd);
  cmd->add_option("--ckpt", ckpts, "checkpoints to score")->required();
  cmd->add_flag("--tsv", tsv, "tab-separated output");
  cmd->callback([] {
    const auto ws = prepare(cfg.load());
    const auto records = pipeline::evaluation_records(ws);
    if (records.empty()) throw Error("no inappropriate test arguments");
    std::vector<scorers::Tokens> originals;
    for (const auto& r : records) originals.push_back(ppo::argument_words(r));
    std::vector<metrics::EvaluationRow> rows{
        metrics::evaluate_system("Exact Copy", originals, originals, ws.classifier, *ws.lm)};
    ppo::Evaluator ev{&ws.classifier, ws.lm.get(), ws.config.evaluation.generation};
    ev.generation.seed = ws.seeds.evaluation;
    for (const auto& path : ckpts) {
      const auto ck = policy::PolicyCheckpoint::load(path);
      check_hash(ck.config_hash, ws.config_hash, path);
      rows.push_back(ppo::evaluate_policy(fs::path(path).filename().string(), ck.params, ck.vocab,
                                          records, ws.config.prompt, ev));
    }
    print_rows(rows, tsv);
  });
}

void add_exemplar(CLI::App& root) {
  auto* cmd = root.add_subcommand("exemplar", "few-shot exemplar selection");
  cmd->require_subcommand(1);

  auto* dims = cmd->add_subcommand("dimensions", "list the taxonomy dimensions");
  dims->callback([] {
    for (const auto& d : exemplar::taxonomy_dimensions(exemplar::appropriateness_taxonomy()))
      std::cout << d << "\n";
  });

  auto* embed = cmd->add_subcommand("embed", "hashed bag-of-words embeddings");
  static std::string in, out;
  static size_t size = 256;
  embed->add_option("--in", in, "JSONL with id, text and scores")->required();
  embed->add_option("--out", out)->required();
  embed->add_option("--size", size, "embedding dimension");
  embed->callback([] {
    std::ifstream f(in);
    if (!f) throw Error("cannot open " + in);
    std::vector<exemplar::EmbeddedArgument> args;
    std::string line;
    while (std::getline(f, line)) {
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      const auto j = json::parse(line);
      exemplar::EmbeddedArgument a;
      a.id = j.at("id").get<std::string>();
      a.embedding = exemplar::hashed_embedding(j.at("text").get<std::string>(), size);
      if (j.contains("scores")) a.scores = j["scores"].get<std::map<std::string, double>>();
      args.push_back(std::move(a));
    }
    exemplar::write_embeddings(out, args);
    std::cout << args.size() << " embeddings written\n";
  });

  auto* select = cmd->add_subcommand("select", "most central argument of a dimension");
  static std::string embeddings;
  static std::vector<std::string> dim;
  static exemplar::PageRankOptions pr;
  select->add_option("--embeddings", embeddings)->required();
  select->add_option("--dim", dim, "taxonomy dimensions; all when omitted");
  select->add_option("--damping", pr.damping);
  select->callback([] {
    const auto args = exemplar::read_embeddings(embeddings);
    auto dims =
        dim.empty() ? exemplar::taxonomy_dimensions(exemplar::appropriateness_taxonomy()) : dim;
    for (const auto& d : dims)
      std::cout << d << "\t" << exemplar::select_exemplar(args, d, pr) << "\n";
  });
}

ranking::BTOptions bt_options(double prior) {
  ranking::BTOptions o;
  o.prior = prior;
  return o;
}

std::map<std::string, std::string> read_systems(const std::string& path) {
  std::map<std::string, std::string> out;
  std::istringstream in(read_text(path));
  std::string line;
  bool header = true;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    if (header) {
      if (line != "rewrite_id,system") throw Error(path + ": unexpected header");
      header = false;
      continue;
    }
    const auto comma = line.find(',');
    if (comma == std::string::npos) throw Error(path + ": malformed line " + line);
    out[line.substr(0, comma)] = line.substr(comma + 1);
  }
  return out;
}

void add_rank(CLI::App& root) {
  auto* cmd = root.add_subcommand("rank", "pairwise ranking study");
  cmd->require_subcommand(1);

  auto* plan = cmd->add_subcommand("plan", "comparison plan as CSV");
  static size_t k = 6;
  static int lambda = 0;
  static std::string set_id = "set000";
  plan->add_option("--k", k, "rewrites per set");
  plan->add_option("--lambda", lambda, "window step; 0 gives the full plan");
  plan->add_option("--set-id", set_id);
  plan->callback([] {
    const auto p = lambda == 0 ? ranking::full_plan(k) : ranking::s_window_plan(k, lambda);
    ranking::RewriteSet set{set_id, {}};
    for (size_t i = 0; i < k; ++i) set.rewrites.push_back(set_id + "-r" + std::to_string(i + 1));
    std::cout << ranking::plan_csv(set, p);
  });

  auto* agg = cmd->add_subcommand("aggregate", "Bradley-Terry scores per set");
  static std::string judgments;
  static double prior = 0.1;
  agg->add_option("--judgments", judgments)->required();
  agg->add_option("--prior", prior, "pseudo-wins per direction on every pair");
  agg->callback([] {
    const auto js = ranking::read_judgments_csv(judgments);
    std::cout << "set_id\trank\trewrite_id\tscore\n";
    for (const auto& set : ranking::sets_from_judgments(js)) {
      const auto r = ranking::bt_aggregate(js, set, bt_options(prior));
      for (size_t i = 0; i < r.order.size(); ++i) {
        const size_t idx = std::find(r.ids.begin(), r.ids.end(), r.order[i]) - r.ids.begin();
        std::cout << set.id << "\t" << i + 1 << "\t" << r.order[i] << "\t" << std::setprecision(6)
                  << r.scores[idx] << "\n";
      }
    }
    std::cout << "agreement " << ranking::annotator_agreement(js) << "\n";
  });

  auto* report = cmd->add_subcommand("report", "rank distribution or absolute-rating table");
  static std::string style = "table3b", systems, ratings, rjudgments;
  static double rprior = 0.1;
  report->add_option("--style", style, "table3b (rank distribution) or table3a (mean ratings)");
  report->add_option("--judgments", rjudgments);
  report->add_option("--systems", systems, "CSV rewrite_id,system");
  report->add_option("--ratings", ratings, "ratings CSV");
  report->add_option("--prior", rprior);
  report->callback([] {
    if (style == "table3b") {
      if (rjudgments.empty() || systems.empty())
        throw Error("table3b needs --judgments and --systems");
      const auto js = ranking::read_judgments_csv(rjudgments);
      std::vector<ranking::BTResult> results;
      for (const auto& set : ranking::sets_from_judgments(js)) {
        results.push_back(ranking::bt_aggregate(js, set, bt_options(rprior)));
      }
      const auto rows = ranking::rank_distribution(results, read_systems(systems));
      std::cout << ranking::rank_distribution_table(rows);
    } else if (style == "table3a") {
      if (ratings.empty()) throw Error("table3a needs --ratings");
      const auto means = ranking::mean_absolute_scores(ranking::read_ratings_csv(ratings));
      std::vector<std::string> criteria;
      for (const auto& [system, by] : means)
        for (const auto& [c, v] : by)
          if (std::find(criteria.begin(), criteria.end(), c) == criteria.end())
            criteria.push_back(c);
      std::cout << "system";
      for (const auto& c : criteria) std::cout << "\t" << c;
      if (criteria.size() == 3) std::cout << "\tgm";
      std::cout << "\n" << std::fixed << std::setprecision(2);
      for (const auto& [system, by] : means) {
        std::cout << system;
        std::vector<double> v;
        for (const auto& c : criteria) {
          auto it = by.find(c);
          if (it == by.end()) {
            std::cout << "\t-";
          } else {
            std::cout << "\t" << it->second;
            v.push_back(it->second);
          }
        }
        if (criteria.size() == 3 && v.size() == 3)
          std::cout << "\t" << metrics::gm3(v[0], v[1], v[2]);
        std::cout << "\n";
      }
    } else {
      throw Error("unknown style " + style);
    }
  });

  auto* pre = cmd->add_subcommand("prestudy", "simulated comparison of plans");
  static ranking::PrestudyConfig pc;
  pre->add_option("--sets", pc.sets);
  pre->add_option("--k", pc.k);
  pre->add_option("--annotators", pc.annotators);
  pre->add_option("--noise", pc.noise);
  pre->add_option("--lambda", pc.lambdas, "window steps");
  pre->add_option("--seed", pc.seed);
  pre->callback([] {
    const auto r = ranking::simulate_prestudy(pc);
    std::cout << ranking::prestudy_table(r);
  });
}

void add_run(CLI::App& root) {
  auto* cmd = root.add_subcommand("run", "the whole pipeline");
  static ConfigArgs cfg;
  static std::string out;
  static size_t threads = 1;
  static bool quiet = false;
  cfg.add(cmd);
  cmd->add_option("--out", out, "output directory");
  cmd->add_option("--threads", threads, "concurrent PPO runs");
  cmd->add_flag("--quiet", quiet);
  cmd->callback([] {
    const auto config = cfg.load();
    pipeline::RunOptions opts;
    opts.out_dir = out;
    opts.threads = threads;
    if (!quiet) opts.log = [](const std::string& s) { std::cerr << s << "\n"; };
    try {
      const auto m = pipeline::run_pipeline(config, opts);
      if (!quiet && !out.empty()) std::cout << read_text(fs::path(out) / "reports" / "table2.txt");
      std::cout << "config " << m.config_hash << "\nmanifest " << m.digest() << "\n";
    } catch (const pipeline::StageError& e) {
      std::cerr << "partial manifest:\n" << e.manifest().to_json().dump(2) << "\n";
      throw;
    }
  });
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Argument rewriting with reinforcement learning"};
  app.require_subcommand(1);
  add_corpus(app);
  add_policy(app);
  add_ppo(app);
  add_eval(app);
  add_exemplar(app);
  add_rank(app);
  add_run(app);
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
