#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "realign/corpus.h"
#include "realign/scorers.h"

namespace realign::synthetic {

// A toy argument-rewriting task. Arguments are two short template sentences;
// inappropriate ones swap neutral adjectives for insults, shout a verb, or end
// a sentence with "!!". Each insult has one neutral counterpart, so the
// minimal appropriate rewrite is a fixed token-by-token cleaning.
struct SyntheticTask {
  std::vector<corpus::ArgumentRecord> corpus;  // unlabeled, all pass the length filter
  std::set<std::string> lexicon;               // insults
  std::map<std::string, std::string> substitutions;  // insult -> neutral word
  std::vector<std::string> token_inventory;          // every token the generator can emit
  scorers::AppropriatenessModel classifier;          // fitted on a disjoint sample
  scorers::NGramLM lm{3, 0.1, {}};                   // fitted on clean text from that sample
  std::set<std::string> fit_texts;                   // texts of the scorer-fitting sample
  uint64_t seed = 0;

  // Ground truth: no insult, no all-caps token, no "!!".
  bool is_appropriate(const std::string& text) const;
  std::string clean(const std::string& text) const;
};

// Throws if size < 100.
SyntheticTask make_synthetic_task(uint64_t seed, size_t size);

}  // namespace realign::synthetic
