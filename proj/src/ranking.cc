#include "realign/ranking.h"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <set>
#include <sstream>

#include "realign/common.h"
#include "realign/random.h"

namespace realign::ranking {

void RewriteSet::validate() const {
  if (rewrites.size() < 2) throw Error("rewrite set " + id + " needs at least two rewrites");
  std::set<std::string> seen;
  for (const auto& r : rewrites) {
    if (!seen.insert(r).second) throw Error("rewrite set " + id + " repeats id " + r);
  }
}

ComparisonPlan full_plan(size_t k) {
  if (k < 2) throw Error("full_plan: k must be at least 2");
  ComparisonPlan p{k, 0, PlanKind::full, {}};
  for (size_t i = 0; i < k; ++i)
    for (size_t j = i + 1; j < k; ++j) p.pairs.emplace_back(i, j);
  return p;
}

ComparisonPlan s_window_plan(size_t k, int lambda) {
  if (k < 2) throw Error("s_window_plan: k must be at least 2");
  if (lambda < 1 || static_cast<size_t>(lambda) > k) {
    throw Error("s_window_plan: lambda must lie in [1, k]");
  }
  std::set<std::pair<size_t, size_t>> pairs;
  const size_t lam = static_cast<size_t>(lambda);
  for (size_t i = 1; i <= k; ++i) {
    for (size_t t = 1; t <= k - 1; ++t) {
      const size_t b = i + t * lam - 1;
      const size_t j = 1 + b % k;
      if (j == i) continue;
      pairs.emplace(std::min(i, j) - 1, std::max(i, j) - 1);
    }
  }
  return {k, lambda, PlanKind::s_window, {pairs.begin(), pairs.end()}};
}

namespace {

size_t index_of(const RewriteSet& set, const std::string& id) {
  auto it = std::find(set.rewrites.begin(), set.rewrites.end(), id);
  if (it == set.rewrites.end()) throw Error("rewrite " + id + " is not in set " + set.id);
  return static_cast<size_t>(it - set.rewrites.begin());
}

std::vector<std::string> order_by_score(const std::vector<std::string>& ids,
                                        const std::vector<double>& scores) {
  std::vector<size_t> idx(ids.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](size_t a, size_t b) {
    const double tol = 1e-12 * std::max(scores[a], scores[b]);
    if (std::abs(scores[a] - scores[b]) > tol) return scores[a] > scores[b];
    return ids[a] < ids[b];
  });
  std::vector<std::string> out;
  for (size_t i : idx) out.push_back(ids[i]);
  return out;
}

// Connected components of the graph with an edge wherever n > 0.
std::vector<std::vector<size_t>> components(const std::vector<std::vector<double>>& n) {
  const size_t k = n.size();
  std::vector<int> label(k, -1);
  std::vector<std::vector<size_t>> out;
  for (size_t s = 0; s < k; ++s) {
    if (label[s] >= 0) continue;
    out.emplace_back();
    std::vector<size_t> stack{s};
    label[s] = static_cast<int>(out.size() - 1);
    while (!stack.empty()) {
      const size_t u = stack.back();
      stack.pop_back();
      out.back().push_back(u);
      for (size_t v = 0; v < k; ++v) {
        if (label[v] < 0 && n[u][v] > 0) {
          label[v] = label[s];
          stack.push_back(v);
        }
      }
    }
  }
  return out;
}

}  // namespace

BTResult bt_aggregate(std::span<const Judgment> judgments, const RewriteSet& set,
                      const BTOptions& o) {
  set.validate();
  if (!(o.prior >= 0.0)) throw Error("bt_aggregate: prior must be nonnegative");
  const size_t k = set.rewrites.size();
  std::vector<std::vector<double>> wins(k, std::vector<double>(k, 0.0));
  for (const auto& j : judgments) {
    if (j.set_id != set.id) continue;
    const size_t l = index_of(set, j.left), r = index_of(set, j.right);
    if (l == r) throw Error("set " + set.id + ": self-comparison of " + j.left);
    if (j.winner == j.left) {
      wins[l][r] += 1.0;
    } else if (j.winner == j.right) {
      wins[r][l] += 1.0;
    } else {
      throw Error("set " + set.id + ": winner " + j.winner + " is not in the pair");
    }
  }
  for (size_t i = 0; i < k; ++i)
    for (size_t m = 0; m < k; ++m)
      if (i != m) wins[i][m] += o.prior;

  std::vector<std::vector<double>> games(k, std::vector<double>(k, 0.0));
  for (size_t i = 0; i < k; ++i)
    for (size_t m = 0; m < k; ++m) games[i][m] = wins[i][m] + wins[m][i];

  if (o.prior == 0.0) {
    const auto comps = components(games);
    if (comps.size() > 1) {
      std::string msg = "set " + set.id + ": comparison graph is disconnected:";
      for (const auto& c : comps) {
        msg += " {";
        for (size_t t = 0; t < c.size(); ++t) msg += (t ? " " : "") + set.rewrites[c[t]];
        msg += "}";
      }
      throw Error(msg);
    }
    for (size_t i = 0; i < k; ++i) {
      double w = 0.0, l = 0.0;
      for (size_t m = 0; m < k; ++m) {
        w += wins[i][m];
        l += wins[m][i];
      }
      if (w == 0.0 || l == 0.0) {
        throw Error("set " + set.id + ": " + set.rewrites[i] +
                    (w == 0.0 ? " never wins" : " never loses") + "; use a positive prior");
      }
    }
  }

  BTResult res;
  res.set_id = set.id;
  res.ids = set.rewrites;
  std::vector<double> p(k, 1.0 / static_cast<double>(k)), next(k);
  for (res.iterations = 1; res.iterations <= o.max_iterations; ++res.iterations) {
    double total = 0.0;
    for (size_t i = 0; i < k; ++i) {
      double w = 0.0, denom = 0.0;
      for (size_t m = 0; m < k; ++m) {
        if (m == i) continue;
        w += wins[i][m];
        if (games[i][m] > 0) denom += games[i][m] / (p[i] + p[m]);
      }
      next[i] = w / denom;
      total += next[i];
    }
    double change = 0.0;
    for (size_t i = 0; i < k; ++i) {
      next[i] /= total;
      change = std::max(change, std::abs(next[i] - p[i]) / p[i]);
    }
    p.swap(next);
    res.final_change = change;
    if (change < o.tol) break;
  }
  if (res.iterations > o.max_iterations) {
    throw Error("bt_aggregate: set " + set.id + " did not converge");
  }
  res.scores = p;
  res.order = order_by_score(res.ids, res.scores);
  return res;
}

std::optional<double> pearson(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw Error("pearson: lengths differ");
  if (x.size() < 2) return std::nullopt;
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
  const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return std::nullopt;
  return std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
}

double kendall_tau(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.size() < 2) throw Error("kendall_tau: need equal lengths >= 2");
  double s = 0.0;
  for (size_t i = 0; i < x.size(); ++i)
    for (size_t j = i + 1; j < x.size(); ++j) {
      const double a = x[i] - x[j], b = y[i] - y[j];
      s += static_cast<double>(((a > 0) - (a < 0)) * ((b > 0) - (b < 0)));
    }
  return s / (static_cast<double>(x.size() * (x.size() - 1)) / 2.0);
}

RankMetrics rank_metrics(const BTResult& predicted, const BTResult& baseline) {
  if (std::multiset<std::string>(predicted.ids.begin(), predicted.ids.end()) !=
      std::multiset<std::string>(baseline.ids.begin(), baseline.ids.end())) {
    throw Error("rank_metrics: results rank different rewrites");
  }
  std::vector<double> base(predicted.ids.size());
  for (size_t i = 0; i < predicted.ids.size(); ++i) {
    const auto it = std::find(baseline.ids.begin(), baseline.ids.end(), predicted.ids[i]);
    base[i] = baseline.scores[static_cast<size_t>(it - baseline.ids.begin())];
  }
  RankMetrics m;
  m.pearson = pearson(predicted.scores, base);
  const auto top = std::find(predicted.ids.begin(), predicted.ids.end(), predicted.order.front());
  m.ndcg_at_1 = base[static_cast<size_t>(top - predicted.ids.begin())] /
                *std::max_element(base.begin(), base.end());
  return m;
}

std::vector<RankDistributionRow> rank_distribution(std::span<const BTResult> results,
                                                   const std::map<std::string, std::string>& systems) {
  if (results.empty()) throw Error("rank_distribution: no results");
  auto system_of = [&](const std::string& id) {
    auto it = systems.find(id);
    if (it == systems.end()) throw Error("rank_distribution: no system for rewrite " + id);
    return it->second;
  };
  std::vector<std::string> roster;
  for (const auto& id : results[0].ids) roster.push_back(system_of(id));
  const std::set<std::string> roster_set(roster.begin(), roster.end());
  if (roster_set.size() != roster.size()) throw Error("rank_distribution: a system appears twice in a set");
  const size_t k = roster.size();
  std::map<std::string, std::vector<double>> counts;
  for (const auto& s : roster) counts[s].assign(k, 0.0);
  for (const auto& r : results) {
    std::set<std::string> names;
    for (const auto& id : r.order) names.insert(system_of(id));
    if (names != roster_set || r.order.size() != k) {
      throw Error("rank_distribution: set " + r.set_id + " ranks a different roster");
    }
    for (size_t pos = 0; pos < k; ++pos) counts[system_of(r.order[pos])][pos] += 1.0;
  }
  const double n = static_cast<double>(results.size());
  std::vector<RankDistributionRow> out;
  for (const auto& s : roster) {
    RankDistributionRow row{s, {}, 0.0};
    for (size_t pos = 0; pos < k; ++pos) {
      row.percent.push_back(100.0 * counts[s][pos] / n);
      row.average_rank += static_cast<double>(pos + 1) * counts[s][pos] / n;
    }
    out.push_back(std::move(row));
  }
  return out;
}

std::string rank_distribution_table(std::span<const RankDistributionRow> rows) {
  std::ostringstream ss;
  size_t width = 6;
  for (const auto& r : rows) width = std::max(width, r.system.size());
  ss << std::left << std::setw(static_cast<int>(width)) << "System";
  const size_t k = rows.empty() ? 0 : rows[0].percent.size();
  for (size_t pos = 0; pos < k; ++pos) ss << "  " << std::right << std::setw(6) << ("Rank " + std::to_string(pos + 1));
  ss << "  " << std::setw(5) << "Avg." << '\n';
  ss << std::fixed;
  for (const auto& r : rows) {
    ss << std::left << std::setw(static_cast<int>(width)) << r.system << std::right;
    for (double p : r.percent) ss << "  " << std::setw(5) << std::setprecision(1) << p << '%';
    ss << "  " << std::setw(5) << std::setprecision(2) << r.average_rank << '\n';
  }
  return ss.str();
}

double annotator_agreement(std::span<const Judgment> judgments) {
  using Key = std::tuple<std::string, std::string, std::string>;
  std::map<std::string, std::map<Key, double>> verdicts;
  for (const auto& j : judgments) {
    if (j.winner != j.left && j.winner != j.right) {
      throw Error("annotator_agreement: winner " + j.winner + " is not in the pair");
    }
    const auto& lo = std::min(j.left, j.right);
    const auto& hi = std::max(j.left, j.right);
    verdicts[j.annotator][{j.set_id, lo, hi}] = j.winner == lo ? 1.0 : -1.0;
  }
  if (verdicts.size() < 2) throw Error("annotator_agreement: need at least two annotators");
  double sum = 0.0;
  size_t count = 0;
  for (auto a = verdicts.begin(); a != verdicts.end(); ++a) {
    for (auto b = std::next(a); b != verdicts.end(); ++b) {
      std::vector<double> x, y;
      for (const auto& [key, v] : a->second) {
        auto it = b->second.find(key);
        if (it == b->second.end()) continue;
        x.push_back(v);
        y.push_back(it->second);
      }
      if (x.size() < 2) continue;
      if (auto r = pearson(x, y)) {
        sum += *r;
        ++count;
      }
    }
  }
  if (count == 0) throw Error("annotator_agreement: no annotator pair shares two varied verdicts");
  return sum / static_cast<double>(count);
}

std::map<std::string, std::map<std::string, double>> mean_absolute_scores(
    std::span<const Rating> ratings) {
  std::map<std::string, std::map<std::string, std::pair<double, double>>> acc;
  for (const auto& r : ratings) {
    if (r.score < 1 || r.score > 5) {
      throw Error("rating " + std::to_string(r.score) + " for " + r.system + " outside 1..5");
    }
    auto& cell = acc[r.system][r.criterion];
    cell.first += r.score;
    cell.second += 1.0;
  }
  std::map<std::string, std::map<std::string, double>> out;
  for (const auto& [sys, crit] : acc)
    for (const auto& [c, v] : crit) out[sys][c] = v.first / v.second;
  return out;
}

namespace {

std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& path,
                                               const std::vector<std::string>& header) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::vector<std::vector<std::string>> rows;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string> fields;
    std::stringstream ss(line);
    std::string f;
    while (std::getline(ss, f, ',')) fields.push_back(f);
    if (line.back() == ',') fields.emplace_back();
    if (rows.empty()) {
      if (fields != header) throw Error(path.string() + ": unexpected header");
      rows.emplace_back();
      continue;
    }
    if (fields.size() != header.size()) {
      throw Error(path.string() + ":" + std::to_string(lineno) + ": expected " +
                  std::to_string(header.size()) + " fields");
    }
    rows.push_back(std::move(fields));
  }
  if (rows.empty()) throw Error(path.string() + ": missing header");
  rows.erase(rows.begin());
  return rows;
}

}  // namespace

std::vector<Judgment> read_judgments_csv(const std::filesystem::path& path) {
  std::vector<Judgment> out;
  for (auto& f : read_csv(path, {"set_id", "left_id", "right_id", "annotator_id", "winner_id"})) {
    Judgment j{f[0], f[1], f[2], f[3], f[4]};
    if (j.winner != j.left && j.winner != j.right) {
      throw Error(path.string() + ": winner " + j.winner + " is not in the pair");
    }
    out.push_back(std::move(j));
  }
  return out;
}

std::string judgments_csv(std::span<const Judgment> judgments) {
  std::string s = "set_id,left_id,right_id,annotator_id,winner_id\n";
  for (const auto& j : judgments) {
    s += j.set_id + ',' + j.left + ',' + j.right + ',' + j.annotator + ',' + j.winner + '\n';
  }
  return s;
}

void write_judgments_csv(const std::filesystem::path& path, std::span<const Judgment> judgments) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  out << judgments_csv(judgments);
}

std::vector<Rating> read_ratings_csv(const std::filesystem::path& path) {
  std::vector<Rating> out;
  for (auto& f : read_csv(path, {"set_id", "system", "annotator_id", "criterion", "score"})) {
    int score = 0;
    try {
      size_t used = 0;
      score = std::stoi(f[4], &used);
      if (used != f[4].size()) throw std::invalid_argument(f[4]);
    } catch (const std::exception&) {
      throw Error(path.string() + ": score " + f[4] + " is not an integer");
    }
    out.push_back({f[0], f[1], f[2], f[3], score});
  }
  return out;
}

std::string plan_csv(const RewriteSet& set, const ComparisonPlan& plan) {
  set.validate();
  if (plan.k != set.rewrites.size()) throw Error("plan_csv: plan size does not match the set");
  std::string s = "set_id,left_id,right_id\n";
  for (const auto& [i, j] : plan.pairs) s += set.id + ',' + set.rewrites[i] + ',' + set.rewrites[j] + '\n';
  return s;
}

std::vector<RewriteSet> sets_from_judgments(std::span<const Judgment> judgments) {
  std::vector<RewriteSet> out;
  std::map<std::string, size_t> index;
  for (const auto& j : judgments) {
    auto [it, fresh] = index.emplace(j.set_id, out.size());
    if (fresh) out.push_back({j.set_id, {}});
    auto& ids = out[it->second].rewrites;
    for (const auto* id : {&j.left, &j.right})
      if (std::find(ids.begin(), ids.end(), *id) == ids.end()) ids.push_back(*id);
  }
  return out;
}

PrestudyResult simulate_prestudy(const PrestudyConfig& c) {
  if (c.sets == 0 || c.annotators == 0) throw Error("prestudy: need sets and annotators");
  if (!(c.noise >= 0.0 && c.noise <= 1.0)) throw Error("prestudy: noise outside [0, 1]");
  const auto full = full_plan(c.k);
  std::vector<ComparisonPlan> plans;
  for (int l : c.lambdas) plans.push_back(s_window_plan(c.k, l));

  Rng rng(c.seed);
  PrestudyResult res;
  std::vector<std::vector<RankMetrics>> metrics(plans.size());
  for (size_t s = 0; s < c.sets; ++s) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "set%03zu", s);
    RewriteSet set{buf, {}};
    std::vector<double> latent;
    for (size_t i = 0; i < c.k; ++i) {
      set.rewrites.push_back(set.id + "-r" + std::to_string(i + 1));
      latent.push_back(rng.uniform());
    }
    // verdicts[pair index] holds one judgment per annotator.
    std::vector<std::vector<Judgment>> verdicts(full.pairs.size());
    for (size_t a = 0; a < c.annotators; ++a) {
      for (size_t p = 0; p < full.pairs.size(); ++p) {
        const auto [i, j] = full.pairs[p];
        bool left_wins = latent[i] > latent[j];
        if (rng.bernoulli(c.noise)) left_wins = !left_wins;
        const auto& l = set.rewrites[i];
        const auto& r = set.rewrites[j];
        verdicts[p].push_back({set.id, l, r, "a" + std::to_string(a + 1), left_wins ? l : r});
      }
    }
    std::vector<Judgment> all;
    for (const auto& v : verdicts) all.insert(all.end(), v.begin(), v.end());
    const auto base = bt_aggregate(all, set, c.bt);
    res.full_plan_tau += kendall_tau(base.scores, latent);
    for (size_t q = 0; q < plans.size(); ++q) {
      std::vector<Judgment> sub;
      for (const auto& pair : plans[q].pairs) {
        const auto p = static_cast<size_t>(std::find(full.pairs.begin(), full.pairs.end(), pair) -
                                           full.pairs.begin());
        sub.insert(sub.end(), verdicts[p].begin(), verdicts[p].end());
      }
      metrics[q].push_back(rank_metrics(bt_aggregate(sub, set, c.bt), base));
    }
  }
  res.full_plan_tau /= static_cast<double>(c.sets);
  res.rows.push_back({"full", full.pairs.size(), full.pairs.size() * c.annotators * c.sets, 1.0, 1.0});
  for (size_t q = 0; q < plans.size(); ++q) {
    PrestudyRow row{"lambda=" + std::to_string(plans[q].lambda), plans[q].pairs.size(),
                    plans[q].pairs.size() * c.annotators * c.sets, 0.0, 0.0};
    double defined = 0.0;
    for (const auto& m : metrics[q]) {
      if (m.pearson) {
        row.pearson += *m.pearson;
        defined += 1.0;
      }
      row.ndcg_at_1 += m.ndcg_at_1 / static_cast<double>(metrics[q].size());
    }
    row.pearson = defined > 0 ? row.pearson / defined : std::nan("");
    res.rows.push_back(row);
  }
  return res;
}

std::string prestudy_table(const PrestudyResult& r) {
  std::ostringstream ss;
  ss << "Plan\tPairs/set\tJudgments\tPearson\tNDCG@1\n" << std::fixed;
  for (const auto& row : r.rows) {
    ss << row.plan << '\t' << row.pairs_per_set << '\t' << row.judgments << '\t'
       << std::setprecision(3) << row.pearson << '\t' << row.ndcg_at_1 << '\n';
  }
  ss << "full-plan Kendall tau vs latent: " << std::setprecision(3) << r.full_plan_tau << '\n';
  return ss.str();
}

}  // namespace realign::ranking
