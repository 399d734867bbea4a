#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace realign::exemplar {

struct EmbeddedArgument {
  std::string id;
  std::vector<double> embedding;          // unit norm
  std::map<std::string, double> scores;   // dimension -> mean annotator score

  void validate() const;
};

// Parent dimension -> child dimensions.
using Taxonomy = std::map<std::string, std::vector<std::string>>;

// The 14-dimension appropriateness taxonomy (1 root, 4 parents, 9 leaves).
const Taxonomy& appropriateness_taxonomy();
std::vector<std::string> taxonomy_dimensions(const Taxonomy& taxonomy);

// Arguments with the maximal score on `dimension`. For a parent dimension,
// arguments scoring zero on any child are dropped first.
std::vector<EmbeddedArgument> candidate_pool(std::span<const EmbeddedArgument> arguments,
                                             const std::string& dimension,
                                             const Taxonomy& taxonomy = appropriateness_taxonomy());

// Pairwise dot products of the (unit) embeddings.
Eigen::MatrixXd cosine_matrix(std::span<const EmbeddedArgument> arguments);

struct PageRankOptions {
  double damping = 0.85;
  double tol = 1e-13;   // L1 distance between successive iterates
  int max_iterations = 100000;
};

// Power iteration on the column-normalized off-diagonal cosine matrix with
// uniform teleportation; negative cosines are clipped to zero. Damping 1
// reproduces the undamped formula.
Eigen::VectorXd pagerank_centrality(const Eigen::MatrixXd& cosines,
                                    const PageRankOptions& options = {});

// Most central argument of the candidate pool; ties go to the smallest id.
std::string select_exemplar(std::span<const EmbeddedArgument> arguments,
                            const std::string& dimension, const PageRankOptions& options = {},
                            const Taxonomy& taxonomy = appropriateness_taxonomy());

struct RewriteCandidate {
  std::string rewrite;
  double sim = 0.0;
  double nes = 0.0;
  double ppl = 0.0;
  double app = 0.0;
};

// (sim * nes * app / ppl)^(1/4), or a negative value when any component is
// nonpositive.
double rewrite_score(const RewriteCandidate& c);

// Index of the highest-scoring candidate, first on ties. Candidates with a
// nonpositive component are skipped; throws when none remain.
size_t select_best_rewrite(std::span<const RewriteCandidate> candidates);

// Signed feature hashing of case-folded words, unit-normalized. Throws on
// text without words.
std::vector<double> hashed_embedding(std::string_view text, size_t dimension = 256);

std::vector<EmbeddedArgument> read_embeddings(const std::filesystem::path& path);
void write_embeddings(const std::filesystem::path& path,
                      std::span<const EmbeddedArgument> arguments);

}  // namespace realign::exemplar
