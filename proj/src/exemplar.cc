#include "realign/exemplar.h"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

#include "realign/common.h"
#include "realign/hash.h"
#include "realign/text.h"

namespace realign::exemplar {

void EmbeddedArgument::validate() const {
  double sq = 0.0;
  for (double x : embedding) sq += x * x;
  if (embedding.empty() || std::abs(std::sqrt(sq) - 1.0) > 1e-9) {
    throw Error("argument " + id + ": embedding is not unit-normalized");
  }
  for (const auto& [dim, s] : scores) {
    if (!(s >= 0.0)) throw Error("argument " + id + ": negative score on " + dim);
  }
}

const Taxonomy& appropriateness_taxonomy() {
  static const Taxonomy t{
      {"inappropriateness",
       {"toxic_emotions", "missing_commitment", "missing_intelligibility", "other_reasons"}},
      {"toxic_emotions", {"excessive_intensity", "emotional_deception"}},
      {"missing_commitment", {"missing_seriousness", "missing_openness"}},
      {"missing_intelligibility", {"unclear_meaning", "missing_relevance", "confusing_reasoning"}},
      {"other_reasons", {"detrimental_orthography", "reason_unclassified"}},
  };
  return t;
}

std::vector<std::string> taxonomy_dimensions(const Taxonomy& taxonomy) {
  std::set<std::string> children;
  for (const auto& [p, cs] : taxonomy) children.insert(cs.begin(), cs.end());
  std::vector<std::string> out;
  for (const auto& [p, cs] : taxonomy)
    if (!children.count(p)) out.push_back(p);
  // Breadth-first from the roots.
  for (size_t i = 0; i < out.size(); ++i) {
    auto it = taxonomy.find(out[i]);
    if (it != taxonomy.end()) out.insert(out.end(), it->second.begin(), it->second.end());
  }
  return out;
}

namespace {

double score_on(const EmbeddedArgument& a, const std::string& dim) {
  auto it = a.scores.find(dim);
  if (it == a.scores.end()) throw Error("argument " + a.id + " has no score for " + dim);
  return it->second;
}

}  // namespace

std::vector<EmbeddedArgument> candidate_pool(std::span<const EmbeddedArgument> arguments,
                                             const std::string& dimension,
                                             const Taxonomy& taxonomy) {
  if (arguments.empty()) throw Error("candidate_pool: no arguments");
  std::vector<const EmbeddedArgument*> kept;
  auto children = taxonomy.find(dimension);
  for (const auto& a : arguments) {
    score_on(a, dimension);
    bool ok = true;
    if (children != taxonomy.end()) {
      for (const auto& c : children->second) ok = ok && score_on(a, c) > 0.0;
    }
    if (ok) kept.push_back(&a);
  }
  if (kept.empty()) throw Error("candidate_pool: no argument passes the child filter for " + dimension);
  double best = -1.0;
  for (const auto* a : kept) best = std::max(best, score_on(*a, dimension));
  std::vector<EmbeddedArgument> out;
  for (const auto* a : kept)
    if (score_on(*a, dimension) == best) out.push_back(*a);
  return out;
}

Eigen::MatrixXd cosine_matrix(std::span<const EmbeddedArgument> arguments) {
  const auto n = static_cast<Eigen::Index>(arguments.size());
  if (n < 2) throw Error("cosine_matrix: need at least two arguments");
  const size_t e = arguments[0].embedding.size();
  Eigen::MatrixXd s(n, static_cast<Eigen::Index>(e));
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& a = arguments[static_cast<size_t>(i)];
    a.validate();
    if (a.embedding.size() != e) throw Error("cosine_matrix: embedding sizes differ");
    for (size_t k = 0; k < e; ++k) s(i, static_cast<Eigen::Index>(k)) = a.embedding[k];
  }
  Eigen::MatrixXd m(n, n);
  for (Eigen::Index i = 0; i < n; ++i) {
    m(i, i) = 1.0;
    for (Eigen::Index j = i + 1; j < n; ++j) m(i, j) = m(j, i) = s.row(i).dot(s.row(j));
  }
  return m;
}

Eigen::VectorXd pagerank_centrality(const Eigen::MatrixXd& cosines, const PageRankOptions& o) {
  const Eigen::Index n = cosines.rows();
  if (n < 2 || cosines.cols() != n) throw Error("pagerank: need a square matrix with n >= 2");
  if (!(o.damping >= 0.0 && o.damping <= 1.0)) throw Error("pagerank: damping outside [0, 1]");
  if (!(o.tol > 0.0)) throw Error("pagerank: tolerance must be positive");
  Eigen::MatrixXd t = cosines.cwiseMax(0.0);
  t.diagonal().setZero();
  for (Eigen::Index j = 0; j < n; ++j) {
    const double col = t.col(j).sum();
    if (!(col > 0.0)) throw Error("pagerank: argument " + std::to_string(j) + " has no positive similarity");
    t.col(j) /= col;
  }
  const double teleport = (1.0 - o.damping) / static_cast<double>(n);
  Eigen::VectorXd p = Eigen::VectorXd::Constant(n, 1.0 / static_cast<double>(n));
  for (int it = 0; it < o.max_iterations; ++it) {
    Eigen::VectorXd next = (o.damping * (t * p)).array() + teleport;
    next /= next.sum();
    const double delta = (next - p).lpNorm<1>();
    p = std::move(next);
    if (delta < o.tol) return p;
  }
  throw Error("pagerank: no convergence after " + std::to_string(o.max_iterations) + " iterations");
}

std::string select_exemplar(std::span<const EmbeddedArgument> arguments,
                            const std::string& dimension, const PageRankOptions& options,
                            const Taxonomy& taxonomy) {
  const auto pool = candidate_pool(arguments, dimension, taxonomy);
  if (pool.size() == 1) return pool[0].id;
  const Eigen::VectorXd p = pagerank_centrality(cosine_matrix(pool), options);
  const double top = p.maxCoeff();
  std::string best;
  for (size_t i = 0; i < pool.size(); ++i) {
    // Scores within iteration noise of the maximum count as ties.
    if (p(static_cast<Eigen::Index>(i)) >= top - 1e-12 && (best.empty() || pool[i].id < best)) {
      best = pool[i].id;
    }
  }
  return best;
}

double rewrite_score(const RewriteCandidate& c) {
  if (!(c.sim > 0.0 && c.nes > 0.0 && c.ppl > 0.0 && c.app > 0.0)) return -1.0;
  return std::pow(c.sim * c.nes * (1.0 / c.ppl) * c.app, 0.25);
}

size_t select_best_rewrite(std::span<const RewriteCandidate> candidates) {
  size_t best = candidates.size();
  double best_score = -1.0;
  for (size_t i = 0; i < candidates.size(); ++i) {
    const double s = rewrite_score(candidates[i]);
    if (s > best_score) {
      best_score = s;
      best = i;
    }
  }
  if (best == candidates.size()) throw Error("select_best_rewrite: no candidate with positive scores");
  return best;
}

std::vector<double> hashed_embedding(std::string_view text, size_t dimension) {
  if (dimension == 0) throw Error("hashed_embedding: dimension must be positive");
  std::vector<double> v(dimension, 0.0);
  bool any = false;
  for (const auto& w : split_whitespace(normalize_topic(text))) {
    const auto h = fnv1a64(w);
    v[h % dimension] += (h >> 63) ? -1.0 : 1.0;
    any = true;
  }
  if (!any) throw Error("hashed_embedding: text has no words");
  double sq = 0.0;
  for (double x : v) sq += x * x;
  if (sq == 0.0) {
    // Every word cancelled out; fall back to the unsigned counts.
    for (const auto& w : split_whitespace(normalize_topic(text))) v[fnv1a64(w) % dimension] += 1.0;
    for (double x : v) sq += x * x;
  }
  const double norm = std::sqrt(sq);
  for (double& x : v) x /= norm;
  return v;
}

std::vector<EmbeddedArgument> read_embeddings(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open " + path.string());
  std::vector<EmbeddedArgument> out;
  std::string line;
  size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.find_first_not_of(" \t\r") == std::string::npos || line[0] == '#') continue;
    try {
      const auto j = nlohmann::json::parse(line);
      EmbeddedArgument a;
      a.id = j.at("id").get<std::string>();
      a.embedding = j.at("embedding").get<std::vector<double>>();
      if (j.contains("scores")) a.scores = j["scores"].get<std::map<std::string, double>>();
      a.validate();
      out.push_back(std::move(a));
    } catch (const nlohmann::json::exception& e) {
      throw Error(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    } catch (const Error& e) {
      throw Error(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

void write_embeddings(const std::filesystem::path& path,
                      std::span<const EmbeddedArgument> arguments) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write " + path.string());
  for (const auto& a : arguments) {
    nlohmann::json j{{"id", a.id}, {"embedding", a.embedding}, {"scores", a.scores}};
    out << j.dump() << '\n';
  }
}

}  // namespace realign::exemplar
