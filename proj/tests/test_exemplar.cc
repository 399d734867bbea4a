#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "realign/common.h"
#include "realign/exemplar.h"
#include "realign/random.h"

using namespace realign;
using namespace realign::exemplar;

namespace {

std::vector<double> unit(std::vector<double> v) {
  double n = 0;
  for (double x : v) n += x * x;
  for (double& x : v) x /= std::sqrt(n);
  return v;
}

std::vector<double> random_unit(Rng& rng, size_t e, bool positive) {
  std::vector<double> v(e);
  for (auto& x : v) x = positive ? rng.uniform() + 1e-3 : rng.normal();
  return unit(v);
}

EmbeddedArgument arg(std::string id, std::vector<double> emb, std::map<std::string, double> s = {}) {
  return {std::move(id), unit(std::move(emb)), std::move(s)};
}

// Stationary vector of p = d T p + (1 - d)/n from a dense solve, with one
// equation replaced by the normalization constraint.
Eigen::VectorXd dense_stationary(const Eigen::MatrixXd& cos, double d) {
  const auto n = cos.rows();
  Eigen::MatrixXd t(n, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    double col = 0;
    for (Eigen::Index i = 0; i < n; ++i)
      if (i != j) col += std::max(cos(i, j), 0.0);
    for (Eigen::Index i = 0; i < n; ++i) t(i, j) = i == j ? 0.0 : std::max(cos(i, j), 0.0) / col;
  }
  Eigen::MatrixXd a = Eigen::MatrixXd::Identity(n, n) - d * t;
  Eigen::VectorXd b = Eigen::VectorXd::Constant(n, (1 - d) / static_cast<double>(n));
  a.row(n - 1).setOnes();
  b(n - 1) = 1.0;
  return a.fullPivLu().solve(b);
}

}  // namespace

TEST_CASE("taxonomy has 14 dimensions on three levels") {
  const auto dims = taxonomy_dimensions(appropriateness_taxonomy());
  CHECK(dims.size() == 14);
  CHECK(dims[0] == "inappropriateness");
  CHECK(appropriateness_taxonomy().at("inappropriateness").size() == 4);
}

TEST_CASE("candidate pool keeps the argmax set") {
  std::vector<EmbeddedArgument> a{arg("a", {1, 0}, {{"excessive_intensity", 0.3}}),
                                  arg("b", {0, 1}, {{"excessive_intensity", 0.9}}),
                                  arg("c", {1, 1}, {{"excessive_intensity", 0.9}})};
  const auto pool = candidate_pool(a, "excessive_intensity");
  REQUIRE(pool.size() == 2);
  CHECK(pool[0].id == "b");
  CHECK(pool[1].id == "c");
  CHECK_THROWS_AS(candidate_pool({}, "excessive_intensity"), Error);
  CHECK_THROWS_AS(candidate_pool(a, "missing_openness"), Error);
}

TEST_CASE("parent dimensions drop arguments with a zero child score") {
  auto s = [](double parent, double c1, double c2) {
    return std::map<std::string, double>{
        {"toxic_emotions", parent}, {"excessive_intensity", c1}, {"emotional_deception", c2}};
  };
  std::vector<EmbeddedArgument> a{arg("a", {1, 0}, s(1.0, 0.0, 1.0)),
                                  arg("b", {0, 1}, s(0.6, 0.3, 0.3)),
                                  arg("c", {1, 1}, s(0.5, 0.5, 0.5))};
  const auto pool = candidate_pool(a, "toxic_emotions");
  REQUIRE(pool.size() == 1);
  CHECK(pool[0].id == "b");
}

TEST_CASE("candidate pool equals a brute-force two-stage filter") {
  Rng rng(4);
  const auto& tax = appropriateness_taxonomy();
  const auto dims = taxonomy_dimensions(tax);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<EmbeddedArgument> a;
    for (int i = 0; i < 50; ++i) {
      std::map<std::string, double> s;
      for (const auto& d : dims) s[d] = static_cast<double>(rng.below(4)) / 3.0;
      a.push_back(arg("x" + std::to_string(i), {rng.uniform() + 0.1, rng.uniform()}, s));
    }
    const auto& dim = dims[rng.below(dims.size())];
    std::vector<std::string> expect;
    double best = -1;
    for (int pass = 0; pass < 2; ++pass) {
      for (const auto& x : a) {
        bool ok = true;
        if (tax.count(dim))
          for (const auto& c : tax.at(dim)) ok = ok && x.scores.at(c) > 0;
        if (!ok) continue;
        if (pass == 0) best = std::max(best, x.scores.at(dim));
        else if (x.scores.at(dim) == best) expect.push_back(x.id);
      }
    }
    std::vector<std::string> got;
    if (best < 0) {
      CHECK_THROWS_AS(candidate_pool(a, dim), Error);
      continue;
    }
    for (const auto& x : candidate_pool(a, dim)) got.push_back(x.id);
    CHECK(got == expect);
  }
}

TEST_CASE("cosine matrix") {
  std::vector<EmbeddedArgument> orth{arg("a", {1, 0}), arg("b", {0, 1})};
  const auto m = cosine_matrix(orth);
  CHECK(m(0, 1) == 0.0);
  CHECK(m(0, 0) == 1.0);
  std::vector<EmbeddedArgument> same{arg("a", {3, 4}), arg("b", {3, 4}), arg("c", {3, 4})};
  CHECK((cosine_matrix(same).array() - 1.0).abs().maxCoeff() < 1e-15);

  Rng rng(5);
  std::vector<EmbeddedArgument> r;
  for (int i = 0; i < 5; ++i) r.push_back({"r" + std::to_string(i), random_unit(rng, 16, false), {}});
  const auto c = cosine_matrix(r);
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 5; ++j) {
      double dot = 0;
      for (int k = 0; k < 16; ++k) dot += r[i].embedding[k] * r[j].embedding[k];
      CHECK(std::abs(c(i, j) - (i == j ? 1.0 : dot)) < 1e-12);
      CHECK(c(i, j) == c(j, i));
    }
  CHECK_THROWS_AS(cosine_matrix(std::span(r).first(1)), Error);
  auto bad = r;
  bad[1].embedding[0] += 0.1;
  CHECK_THROWS_AS(cosine_matrix(bad), Error);
}

TEST_CASE("pagerank closed cases") {
  Eigen::MatrixXd two(2, 2);
  two << 1, 0.3, 0.3, 1;
  for (double d : {0.0, 0.5, 0.85, 1.0}) {
    const auto p = pagerank_centrality(two, {.damping = d});
    CHECK(p(0) == 0.5);
    CHECK(p(1) == 0.5);
  }
  Rng rng(6);
  std::vector<EmbeddedArgument> r;
  for (int i = 0; i < 6; ++i) r.push_back({"r" + std::to_string(i), random_unit(rng, 8, true), {}});
  const auto uni = pagerank_centrality(cosine_matrix(r), {.damping = 0.0});
  for (int i = 0; i < 6; ++i) CHECK(uni(i) == doctest::Approx(1.0 / 6).epsilon(1e-15));

  Eigen::MatrixXd isolated(3, 3);
  isolated << 1, 0.5, -0.2, 0.5, 1, -0.1, -0.2, -0.1, 1;
  CHECK_THROWS_AS(pagerank_centrality(isolated), Error);
  CHECK_THROWS_AS(pagerank_centrality(two, {.damping = 1.5}), Error);
}

TEST_CASE("pagerank matches a dense stationary solve on all pool sizes up to 8") {
  Rng rng(7);
  for (int n = 2; n <= 8; ++n) {
    for (int trial = 0; trial < 30; ++trial) {
      std::vector<EmbeddedArgument> r;
      const bool positive = trial % 2 == 0;
      for (int i = 0; i < n; ++i) r.push_back({"r" + std::to_string(i), random_unit(rng, 6, positive), {}});
      const auto m = cosine_matrix(r);
      bool connected = true;
      for (int j = 0; j < n; ++j) {
        double col = 0;
        for (int i = 0; i < n; ++i)
          if (i != j) col += std::max(m(i, j), 0.0);
        connected = connected && col > 0;
      }
      if (!connected) continue;
      for (double d : {0.5, 0.85, positive ? 1.0 : 0.95}) {
        const auto p = pagerank_centrality(m, {.damping = d});
        const auto q = dense_stationary(m, d);
        CHECK((p - q).cwiseAbs().maxCoeff() < 1e-8);
        CHECK(std::abs(p.sum() - 1.0) < 1e-9);
        CHECK(p.minCoeff() >= 0.0);
      }
    }
  }
}

TEST_CASE("pagerank is permutation equivariant and continuous in damping") {
  Rng rng(8);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 3 + static_cast<int>(rng.below(5));
    std::vector<EmbeddedArgument> r;
    for (int i = 0; i < n; ++i) r.push_back({"r" + std::to_string(i), random_unit(rng, 5, true), {}});
    std::vector<size_t> perm(n);
    for (int i = 0; i < n; ++i) perm[i] = i;
    rng.shuffle(perm);
    std::vector<EmbeddedArgument> s;
    for (size_t k : perm) s.push_back(r[k]);
    const auto p = pagerank_centrality(cosine_matrix(r));
    const auto q = pagerank_centrality(cosine_matrix(s));
    for (int i = 0; i < n; ++i) CHECK(std::abs(q(i) - p(perm[i])) < 1e-10);

    const auto lo = pagerank_centrality(cosine_matrix(r), {.damping = 0.8});
    const auto hi = pagerank_centrality(cosine_matrix(r), {.damping = 0.8 + 1e-6});
    CHECK((lo - hi).lpNorm<1>() < 1e-4);
  }
}

TEST_CASE("exemplar selection") {
  const std::map<std::string, double> s{{"unclear_meaning", 1.0}};
  std::vector<EmbeddedArgument> single{arg("only", {1, 0}, s), arg("low", {0, 1}, {{"unclear_meaning", 0.5}})};
  CHECK(select_exemplar(single, "unclear_meaning") == "only");

  // The hub is similar to every spoke; spokes are mutually orthogonal.
  std::vector<EmbeddedArgument> star{arg("s1", {1, 0, 0}, s), arg("s2", {0, 1, 0}, s),
                                     arg("hub", {1, 1, 1}, s), arg("s3", {0, 0, 1}, s)};
  CHECK(select_exemplar(star, "unclear_meaning") == "hub");
  const auto exact = dense_stationary(cosine_matrix(star), 0.85);
  Eigen::Index top;
  exact.maxCoeff(&top);
  CHECK(star[static_cast<size_t>(top)].id == "hub");

  std::vector<EmbeddedArgument> twins{arg("zeta", {1, 0.2}, s), arg("alpha", {0.2, 1}, s)};
  CHECK(select_exemplar(twins, "unclear_meaning") == "alpha");
}

TEST_CASE("exemplar selection agrees with the exhaustive solve") {
  Rng rng(9);
  const std::map<std::string, double> s{{"missing_relevance", 1.0}};
  for (int trial = 0; trial < 100; ++trial) {
    const int n = 2 + static_cast<int>(rng.below(7));
    std::vector<EmbeddedArgument> r;
    for (int i = 0; i < n; ++i) r.push_back({"r" + std::to_string(i), random_unit(rng, 4, true), s});
    const auto q = dense_stationary(cosine_matrix(r), 0.85);
    Eigen::Index top;
    const double best = q.maxCoeff(&top);
    std::string expect = r[static_cast<size_t>(top)].id;
    for (int i = 0; i < n; ++i)
      if (q(i) >= best - 1e-12 && r[i].id < expect) expect = r[i].id;
    CHECK(select_exemplar(r, "missing_relevance") == expect);
  }
}

TEST_CASE("best rewrite selection") {
  std::vector<RewriteCandidate> one{{"x", 0.5, 0.5, 10, 0.9}};
  CHECK(select_best_rewrite(one) == 0);
  std::vector<RewriteCandidate> ppl{{"a", 0.5, 0.5, 20, 0.9}, {"b", 0.5, 0.5, 10, 0.9}};
  CHECK(select_best_rewrite(ppl) == 1);
  std::vector<RewriteCandidate> tie{{"a", 0.5, 0.5, 10, 0.9}, {"b", 0.5, 0.5, 10, 0.9}};
  CHECK(select_best_rewrite(tie) == 0);
  std::vector<RewriteCandidate> skip{{"a", 0.9, 0.9, 2, 0.0}, {"b", 0.1, 0.1, 50, 0.1}};
  CHECK(select_best_rewrite(skip) == 1);
  std::vector<RewriteCandidate> none{{"a", 0.9, 0.9, 2, 0.0}};
  CHECK_THROWS_AS(select_best_rewrite(none), Error);

  Rng rng(10);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<RewriteCandidate> c(5);
    for (auto& x : c) x = {"r", rng.uniform(), rng.uniform(), 1 + 100 * rng.uniform(), rng.uniform()};
    size_t expect = 0;
    double best = -1;
    for (size_t i = 0; i < c.size(); ++i) {
      const double g = std::pow(c[i].sim * c[i].nes * c[i].app / c[i].ppl, 0.25);
      if (g > best) {
        best = g;
        expect = i;
      }
    }
    CHECK(select_best_rewrite(c) == expect);
  }
}

TEST_CASE("hashed embeddings") {
  const auto a = hashed_embedding("The cat sat");
  const auto b = hashed_embedding("the  CAT sat");
  CHECK(a == b);
  double n = 0;
  for (double x : a) n += x * x;
  CHECK(std::abs(n - 1.0) < 1e-12);
  CHECK(a.size() == 256);
  CHECK(hashed_embedding("x", 16).size() == 16);
  CHECK_THROWS_AS(hashed_embedding("   "), Error);
}

TEST_CASE("embeddings JSONL round-trip") {
  const auto dir = std::filesystem::temp_directory_path() / "realign_exemplar_test";
  std::filesystem::create_directories(dir);
  std::vector<EmbeddedArgument> a{arg("a", {0.1, 0.7, 0.3}, {{"inappropriateness", 2.0 / 3}}),
                                  arg("b", {1, 0, 0}, {})};
  write_embeddings(dir / "e.jsonl", a);
  const auto back = read_embeddings(dir / "e.jsonl");
  REQUIRE(back.size() == 2);
  CHECK(back[0].embedding == a[0].embedding);
  CHECK(back[0].scores == a[0].scores);
  CHECK(back[1].id == "b");
  std::ofstream(dir / "bad.jsonl") << "{\"id\": \"x\", \"embedding\": [1, 1]}\n";
  CHECK_THROWS_AS(read_embeddings(dir / "bad.jsonl"), Error);
  std::filesystem::remove_all(dir);
}
