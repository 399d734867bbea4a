#include "realign/metrics.h"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

#include "realign/common.h"

namespace realign::metrics {

double flip_rate(std::span<const Tokens> originals, std::span<const Tokens> rewrites,
                 const scorers::AppropriatenessModel& classifier) {
  if (originals.size() != rewrites.size()) {
    throw Error("flip_rate: " + std::to_string(originals.size()) + " originals but " +
                std::to_string(rewrites.size()) + " rewrites");
  }
  if (originals.empty()) throw Error("flip_rate: no instances");
  size_t flipped = 0;
  for (size_t i = 0; i < originals.size(); ++i) {
    if (classifier.score(originals[i]).value() >= 0.5) {
      throw Error("flip_rate: original " + std::to_string(i) + " is not classified inappropriate");
    }
    if (classifier.score(rewrites[i]).value() >= 0.5) ++flipped;
  }
  return static_cast<double>(flipped) / static_cast<double>(originals.size());
}

size_t edit_distance(std::span<const std::string> x, std::span<const std::string> y) {
  std::vector<size_t> prev(y.size() + 1), cur(y.size() + 1);
  for (size_t j = 0; j <= y.size(); ++j) prev[j] = j;
  for (size_t i = 1; i <= x.size(); ++i) {
    cur[0] = i;
    for (size_t j = 1; j <= y.size(); ++j) {
      const size_t sub = prev[j - 1] + (x[i - 1] == y[j - 1] ? 0 : 1);
      cur[j] = std::min({sub, prev[j] + 1, cur[j - 1] + 1});
    }
    std::swap(prev, cur);
  }
  return prev[y.size()];
}

double nes(std::span<const std::string> x, std::span<const std::string> y) {
  const size_t longest = std::max(x.size(), y.size());
  if (longest == 0) return 1.0;
  return 1.0 - static_cast<double>(edit_distance(x, y)) / static_cast<double>(longest);
}

std::optional<double> geometric_mean(double app, double sim, double ppl) {
  if (!(app > 0.0 && sim > 0.0 && ppl > 0.0)) return std::nullopt;
  return std::cbrt(app * sim / ppl);
}

double gm3(double a, double b, double c) {
  if (!(a > 0.0 && b > 0.0 && c > 0.0)) throw Error("gm3: inputs must be positive");
  return std::cbrt(a * b * c);
}

double order_free_mean(std::vector<double> values) {
  if (values.empty()) throw Error("mean of empty sequence");
  std::sort(values.begin(), values.end());
  double s = 0.0;
  for (double v : values) s += v;
  return s / static_cast<double>(values.size());
}

EvaluationRow evaluate_system(const std::string& name, std::span<const Tokens> originals,
                              std::span<const Tokens> rewrites,
                              const scorers::AppropriatenessModel& classifier,
                              const scorers::FluencyModel& lm) {
  EvaluationRow row;
  row.system = name;
  row.app = flip_rate(originals, rewrites, classifier);
  std::vector<double> sims, edits, ppls;
  for (size_t i = 0; i < originals.size(); ++i) {
    sims.push_back(scorers::similarity_score(originals[i], rewrites[i]).value());
    edits.push_back(nes(originals[i], rewrites[i]));
    if (!rewrites[i].empty()) ppls.push_back(scorers::perplexity(rewrites[i], lm));
  }
  row.sim = order_free_mean(sims);
  row.nes = order_free_mean(edits);
  if (!ppls.empty()) {
    row.ppl = order_free_mean(ppls);
    row.gm = geometric_mean(row.app, row.sim, *row.ppl);
  }
  return row;
}

namespace {

std::string fixed(std::optional<double> v, int digits) {
  if (!v) return "-";
  std::ostringstream ss;
  ss << std::fixed << std::setprecision(digits) << *v;
  return ss.str();
}

std::vector<std::string> cells(const EvaluationRow& r) {
  return {r.system, fixed(r.app, 3), fixed(r.sim, 3), fixed(r.nes, 3), fixed(r.ppl, 2),
          fixed(r.gm, 3)};
}

const std::vector<std::string> kHeader{"System", "App.", "Sim.", "NES.", "PPL", "GM"};

}  // namespace

std::string report_tsv(std::span<const EvaluationRow> rows) {
  std::string out;
  auto line = [&](const std::vector<std::string>& c) {
    for (size_t i = 0; i < c.size(); ++i) out += (i ? "\t" : "") + c[i];
    out += '\n';
  };
  line(kHeader);
  for (const auto& r : rows) line(cells(r));
  return out;
}

std::string report_table(std::span<const EvaluationRow> rows) {
  std::vector<std::vector<std::string>> grid{kHeader};
  for (const auto& r : rows) grid.push_back(cells(r));
  std::vector<size_t> width(kHeader.size(), 0);
  for (const auto& g : grid)
    for (size_t i = 0; i < g.size(); ++i) width[i] = std::max(width[i], g[i].size());
  std::ostringstream ss;
  for (size_t r = 0; r < grid.size(); ++r) {
    for (size_t i = 0; i < grid[r].size(); ++i) {
      if (i == 0) {
        ss << std::left << std::setw(static_cast<int>(width[i])) << grid[r][i];
      } else {
        ss << "  " << std::right << std::setw(static_cast<int>(width[i])) << grid[r][i];
      }
    }
    ss << '\n';
    if (r == 0) {
      size_t total = 0;
      for (size_t w : width) total += w;
      ss << std::string(total + 2 * (width.size() - 1), '-') << '\n';
    }
  }
  return ss.str();
}

}  // namespace realign::metrics
