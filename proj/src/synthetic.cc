#include "realign/synthetic.h"

#include <algorithm>
#include <array>
#include <cctype>

#include "realign/common.h"
#include "realign/random.h"
#include "realign/text.h"

namespace realign::synthetic {

namespace {

const std::vector<std::string> kSubjects{"people",      "voters",       "the council",
                                         "the mayor",   "our city",     "many students",
                                         "local families", "the government"};
const std::vector<std::string> kModals{"should", "must", "could", "will", "cannot", "might"};
const std::vector<std::string> kVerbs{"support", "reject", "improve", "fund",
                                      "review",  "ignore", "change",  "fix"};
const std::vector<std::string> kDeterminers{"the", "this", "that", "every"};
const std::vector<std::string> kAdjectives{"new",    "current", "local", "proposed",
                                           "public", "recent",  "whole", "simple"};
const std::vector<std::string> kInsults{"stupid",  "idiotic", "pathetic",   "dumb",
                                        "useless", "moronic", "ridiculous", "absurd"};
const std::vector<std::string> kNouns{"plan",    "policy", "budget", "proposal",
                                      "program", "schools", "roads", "tax"};
const std::vector<std::string> kTails{"today", "soon", "again", "now", "carefully", "quickly"};
const std::vector<std::string> kIssues{"public transport", "school funding", "local taxes",
                                       "housing policy",   "road repairs",   "city budget"};

std::string upper(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  return s;
}

std::string lower(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

template <typename T>
const T& pick(const std::vector<T>& v, Rng& rng) {
  return v[rng.below(v.size())];
}

struct Sentence {
  std::vector<std::string> tokens;
  size_t adjective = 0;
  size_t verb = 0;
};

Sentence make_sentence(Rng& rng) {
  Sentence s;
  for (const auto& w : split_whitespace(pick(kSubjects, rng))) s.tokens.push_back(w);
  s.tokens.push_back(pick(kModals, rng));
  s.verb = s.tokens.size();
  s.tokens.push_back(pick(kVerbs, rng));
  s.tokens.push_back(pick(kDeterminers, rng));
  s.adjective = s.tokens.size();
  s.tokens.push_back(pick(kAdjectives, rng));
  s.tokens.push_back(pick(kNouns, rng));
  if (rng.bernoulli(0.5)) s.tokens.push_back(pick(kTails, rng));
  s.tokens.push_back(".");
  return s;
}

// Two sentences; an inappropriate argument carries at least one insult and
// possibly a shouted verb or doubled exclamation marks.
std::string make_argument(Rng& rng, bool inappropriate) {
  std::array<Sentence, 2> ss{make_sentence(rng), make_sentence(rng)};
  if (inappropriate) {
    bool any = false;
    for (auto& s : ss) {
      if (rng.bernoulli(0.6)) {
        const auto it = std::find(kAdjectives.begin(), kAdjectives.end(), s.tokens[s.adjective]);
        s.tokens[s.adjective] = kInsults[static_cast<size_t>(it - kAdjectives.begin())];
        any = true;
      }
    }
    if (!any) {
      auto& s = ss[rng.below(2)];
      const auto it = std::find(kAdjectives.begin(), kAdjectives.end(), s.tokens[s.adjective]);
      s.tokens[s.adjective] = kInsults[static_cast<size_t>(it - kAdjectives.begin())];
    }
    for (auto& s : ss) {
      if (rng.bernoulli(0.25)) s.tokens[s.verb] = upper(s.tokens[s.verb]);
      if (rng.bernoulli(0.25)) s.tokens.back() = "!!";
    }
  }
  std::vector<std::string> all = ss[0].tokens;
  all.insert(all.end(), ss[1].tokens.begin(), ss[1].tokens.end());
  return join(all, " ");
}

}  // namespace

bool SyntheticTask::is_appropriate(const std::string& text) const {
  for (const auto& t : split_whitespace(text)) {
    if (lexicon.contains(t) || t == "!!") return false;
    if (t.size() >= 2 && upper(t) == t && lower(t) != t) return false;
  }
  return true;
}

std::string SyntheticTask::clean(const std::string& text) const {
  auto tokens = split_whitespace(text);
  for (auto& t : tokens) {
    if (auto it = substitutions.find(t); it != substitutions.end()) {
      t = it->second;
    } else if (t == "!!") {
      t = ".";
    } else {
      t = lower(t);
    }
  }
  return join(tokens, " ");
}

SyntheticTask make_synthetic_task(uint64_t seed, size_t size) {
  if (size < 100) throw Error("make_synthetic_task: size must be at least 100");
  SyntheticTask task;
  task.seed = seed;
  for (size_t i = 0; i < kInsults.size(); ++i) {
    task.lexicon.insert(kInsults[i]);
    task.substitutions[kInsults[i]] = kAdjectives[i];
  }
  std::set<std::string> seen;
  auto add_inventory = [&](const std::string& w) {
    if (seen.insert(w).second) task.token_inventory.push_back(w);
  };
  for (const auto* list : {&kSubjects, &kModals, &kDeterminers, &kAdjectives, &kInsults, &kNouns,
                           &kTails}) {
    for (const auto& phrase : *list)
      for (const auto& w : split_whitespace(phrase)) add_inventory(w);
  }
  for (const auto& v : kVerbs) {
    add_inventory(v);
    add_inventory(upper(v));
  }
  add_inventory(".");
  add_inventory("!!");

  Rng rng(derive_seed(seed, 1));
  for (size_t i = 0; i < size; ++i) {
    const bool bad = rng.bernoulli(0.5);
    char id[32];
    std::snprintf(id, sizeof id, "syn-%05zu", i);
    const auto genre = static_cast<corpus::Genre>(rng.below(3));
    task.corpus.push_back(corpus::ArgumentRecord::make(id, make_argument(rng, bad),
                                                       pick(kIssues, rng), genre));
  }

  // Scorers are fitted on a disjoint sample so that no corpus argument is ever
  // scored by a classifier that saw it.
  Rng fit_rng(derive_seed(seed, 2));
  std::vector<scorers::LabeledText> labeled;
  std::vector<scorers::Tokens> clean_text;
  const size_t fit_size = std::max<size_t>(400, size / 2);
  for (size_t i = 0; i < fit_size; ++i) {
    const bool bad = i % 2 == 1;
    const std::string text = make_argument(fit_rng, bad);
    labeled.push_back({split_whitespace(text), !bad});
    task.fit_texts.insert(text);
    clean_text.push_back(split_whitespace(bad ? task.clean(text) : text));
  }
  task.classifier = scorers::fit_appropriateness_classifier(labeled, task.lexicon, {});
  task.lm = scorers::NGramLM::train(clean_text, 3, 0.1);
  return task;
}

}  // namespace realign::synthetic
