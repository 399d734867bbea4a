#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "realign/scorers.h"

namespace realign::metrics {

using scorers::Tokens;

// Fraction of rewrites the classifier labels appropriate. Every original must
// itself be classified inappropriate.
double flip_rate(std::span<const Tokens> originals, std::span<const Tokens> rewrites,
                 const scorers::AppropriatenessModel& classifier);

// Word-level Levenshtein distance with unit costs.
size_t edit_distance(std::span<const std::string> x, std::span<const std::string> y);

// 1 - L(x, y) / max(|x|, |y|); 1 when both are empty.
double nes(std::span<const std::string> x, std::span<const std::string> y);

// (app * sim / ppl)^(1/3); absent unless all three are positive.
std::optional<double> geometric_mean(double app, double sim, double ppl);

// (a * b * c)^(1/3); throws on nonpositive input.
double gm3(double a, double b, double c);

struct EvaluationRow {
  std::string system;
  double app = 0.0;
  double sim = 0.0;
  double nes = 0.0;
  std::optional<double> ppl;  // absent when every rewrite is empty
  std::optional<double> gm;
};

// Corpus-level aggregates: flip rate, mean similarity, mean NES and mean
// perplexity over nonempty rewrites; GM combines the aggregates.
EvaluationRow evaluate_system(const std::string& name, std::span<const Tokens> originals,
                              std::span<const Tokens> rewrites,
                              const scorers::AppropriatenessModel& classifier,
                              const scorers::FluencyModel& lm);

std::string report_tsv(std::span<const EvaluationRow> rows);
std::string report_table(std::span<const EvaluationRow> rows);

// Mean of `values` independent of their order.
double order_free_mean(std::vector<double> values);

}  // namespace realign::metrics
