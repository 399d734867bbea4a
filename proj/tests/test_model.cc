#include <cmath>
#include <numeric>

#include "doctest.h"
#include "realign/model.h"
#include "realign/optim.h"
#include "support/reference_forward.h"
#include "support/test_models.h"

using namespace realign;
using namespace realign::policy;

namespace {

// Cross-entropy against the next token plus a squared value error, so both
// heads feed the gradient.
double joint_loss(const PolicyParams& p, const std::vector<int>& tokens, size_t first,
                  Matrix* dlogits = nullptr, Vector* dvalues = nullptr) {
  ForwardPass fp(p, tokens, first);
  const auto rows = fp.logits().rows();
  if (dlogits) dlogits->resize(rows, p.config.vocab_size);
  if (dvalues) dvalues->resize(rows);
  double loss = 0.0;
  for (Eigen::Index t = 0; t < rows; ++t) {
    const size_t pos = first + static_cast<size_t>(t);
    const int y = tokens[(pos + 1) % tokens.size()];
    const RowVector lp = log_softmax(fp.logits().row(t));
    loss -= lp(y);
    const double target = 0.3 * static_cast<double>(t) - 0.5;
    const double err = fp.values()(t) - target;
    loss += 0.5 * err * err;
    if (dlogits) {
      dlogits->row(t) = lp.array().exp();
      (*dlogits)(t, y) -= 1.0;
      (*dvalues)(t) = err;
    }
  }
  return loss;
}

}  // namespace

TEST_CASE("softmax rows sum to one") {
  auto p = PolicyParams::init({.vocab_size = 37, .d_model = 16, .n_layers = 2, .n_heads = 4,
                               .d_ff = 32, .context = 32},
                              3);
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<int> toks(1 + rng.below(20));
    for (int& t : toks) t = static_cast<int>(rng.below(37));
    const RowVector pr = softmax(logits(p, toks));
    CHECK(std::abs(pr.sum() - 1.0) < 1e-9);
    CHECK((pr.array() >= 0).all());
  }
  RowVector extreme(3);
  extreme << 1000.0, -1000.0, 999.0;
  CHECK(std::abs(softmax(extreme).sum() - 1.0) < 1e-12);
  CHECK(std::isfinite(log_softmax(extreme)(1)));
}

TEST_CASE("forward pass agrees with the loop reference") {
  for (uint64_t seed : {1u, 2u, 3u}) {
    auto p = testing::tiny_model(seed);
    std::vector<int> toks{0, 3, 1, 4, 2, 2, 1};
    for (size_t len = 1; len <= toks.size(); ++len) {
      std::vector<int> prefix(toks.begin(), toks.begin() + static_cast<long>(len));
      const RowVector fast = logits(p, prefix);
      const auto slow = testing::reference_logits(p, prefix);
      for (size_t v = 0; v < slow.size(); ++v) CHECK(fast(static_cast<long>(v)) == doctest::Approx(slow[v]).epsilon(1e-10));
    }
  }
}

TEST_CASE("hand-computed single-layer model") {
  // With every trunk weight zero the residual stream is the embedding sum,
  // layer norm with unit gain standardizes it, and the head is linear.
  auto p = PolicyParams::init({.vocab_size = 3, .d_model = 2, .n_layers = 1, .n_heads = 1,
                               .d_ff = 2, .context = 4},
                              0);
  p.for_each([](const std::string&, Matrix& m, ParamGroup) { m.setZero(); });
  p.lnf_gain.setOnes();
  p.tok_emb << 1, 3,  //
      0, 0,           //
      0, 0;
  p.w_out << 1, 0, 0,  //
      0, 2, 0;
  p.b_out << 0, 0, 0.5;
  const RowVector lg = logits(p, std::vector<int>{0});
  // Embedding (1, 3) normalizes to (-1, 1) up to the epsilon in the variance.
  const double s = 1.0 / std::sqrt(1.0 + 1e-5);
  CHECK(lg(0) == doctest::Approx(-s).epsilon(1e-12));
  CHECK(lg(1) == doctest::Approx(2 * s).epsilon(1e-12));
  CHECK(lg(2) == doctest::Approx(0.5).epsilon(1e-12));
  const RowVector pr = softmax(lg);
  const double z = std::exp(-s) + std::exp(2 * s) + std::exp(0.5);
  CHECK(pr(1) == doctest::Approx(std::exp(2 * s) / z).epsilon(1e-12));
}

TEST_CASE("adapters with zero B leave outputs unchanged") {
  auto base = PolicyParams::init({.vocab_size = 20, .d_model = 16, .n_layers = 2, .n_heads = 4,
                                  .d_ff = 32, .context = 16},
                                 9);
  auto adapted = base;
  adapted.add_adapters({}, 10);
  std::vector<int> toks{0, 5, 7, 19, 3, 3, 11};
  const RowVector a = logits(base, toks), b = logits(adapted, toks);
  CHECK((a - b).cwiseAbs().maxCoeff() < 1e-12);
  for (const auto& blk : adapted.blocks) {
    REQUIRE(blk.adapters.size() == kNumAdapted);
    for (const auto& ad : blk.adapters) {
      CHECK(ad.a.rows() == 8);
      CHECK(ad.b.cols() == 8);
      CHECK(ad.b.isZero(0.0));
    }
  }
}

TEST_CASE("adapter delta is scale over rank times B A") {
  auto p = testing::tiny_model(4);
  // Fold the adapter of every projection into the base weight and drop it.
  auto folded = p;
  const double s = p.adapter->scale / p.adapter->rank;
  for (auto& blk : folded.blocks) {
    Matrix* ws[] = {&blk.wq, &blk.wk, &blk.wv, &blk.wo};
    for (int k = 0; k < kNumAdapted; ++k) {
      *ws[k] += s * (blk.adapters[static_cast<size_t>(k)].b * blk.adapters[static_cast<size_t>(k)].a).transpose();
    }
    blk.adapters.clear();
  }
  folded.adapter.reset();
  std::vector<int> toks{0, 1, 2, 3, 4, 0};
  CHECK((logits(p, toks) - logits(folded, toks)).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("incremental decoding matches the full forward pass") {
  auto p = testing::tiny_model(7);
  std::vector<int> toks{0, 4, 4, 2, 1, 3, 0, 2};
  ForwardPass fp(p, toks, 0);
  IncrementalDecoder dec(p);
  dec.append(std::span<const int>(toks.data(), 3));
  CHECK((dec.last_logits() - fp.logits().row(2)).cwiseAbs().maxCoeff() < 1e-12);
  CHECK(std::abs(dec.last_value() - fp.values()(2)) < 1e-12);
  for (size_t i = 3; i < toks.size(); ++i) {
    dec.append(toks[i]);
    CHECK((dec.last_logits() - fp.logits().row(static_cast<long>(i))).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(std::abs(dec.last_value() - fp.values()(static_cast<long>(i))) < 1e-12);
  }
}

TEST_CASE("backward matches finite differences") {
  for (uint64_t seed : {11u, 12u}) {
    auto p = testing::tiny_model(seed);
    CHECK(p.num_parameters() <= 1000);
    std::vector<int> toks{0, 2, 4, 1, 3, 3, 2};
    for (size_t first : {size_t{0}, size_t{3}}) {
      Matrix dl;
      Vector dv;
      joint_loss(p, toks, first, &dl, &dv);
      ForwardPass fp(p, toks, first);
      auto analytic = p.zeros_like();
      fp.backward(dl, dv, analytic);
      const auto numeric = testing::numeric_gradient(
          p, [&](const PolicyParams& q) { return joint_loss(q, toks, first); });
      CHECK(testing::max_relative_error(analytic, numeric) < 1e-4);
    }
  }
}

TEST_CASE("adapter dropout is identity at evaluation and random in training") {
  auto p = testing::tiny_model(13);
  p.adapter->dropout = 0.5;
  std::vector<int> toks{0, 1, 2, 3};
  ForwardPass eval(p, toks, 0);
  CHECK((eval.logits().row(3) - logits(p, toks)).cwiseAbs().maxCoeff() < 1e-12);
  Rng r1(1), r2(1), r3(2);
  ForwardPass t1(p, toks, 0, {true, &r1}), t2(p, toks, 0, {true, &r2}), t3(p, toks, 0, {true, &r3});
  CHECK(t1.logits() == t2.logits());
  CHECK(t1.logits() != t3.logits());
}

TEST_CASE("backward with dropout matches finite differences on the same mask") {
  auto p = testing::tiny_model(14);
  p.adapter->dropout = 0.3;
  std::vector<int> toks{0, 3, 2, 4, 1};
  auto loss = [&](const PolicyParams& q, PolicyParams* g) {
    Rng rng(99);
    ForwardPass fp(q, toks, 1, {true, &rng});
    double total = 0;
    Matrix d(fp.logits().rows(), q.config.vocab_size);
    for (Eigen::Index t = 0; t < fp.logits().rows(); ++t) {
      const RowVector lp = log_softmax(fp.logits().row(t));
      const int y = toks[(static_cast<size_t>(t) + 2) % toks.size()];
      total -= lp(y);
      d.row(t) = lp.array().exp();
      d(t, y) -= 1;
    }
    if (g) fp.backward(d, Vector::Zero(d.rows()), *g);
    return total;
  };
  auto analytic = p.zeros_like();
  loss(p, &analytic);
  const auto numeric = testing::numeric_gradient(
      p, [&](const PolicyParams& q) { return loss(q, nullptr); });
  CHECK(testing::max_relative_error(analytic, numeric) < 1e-4);
}

TEST_CASE("invalid inputs are rejected") {
  auto p = testing::tiny_model(1);
  CHECK_THROWS(logits(p, std::vector<int>{}));
  CHECK_THROWS(logits(p, std::vector<int>{0, 5}));
  CHECK_THROWS(logits(p, std::vector<int>{-1}));
  CHECK_THROWS(logits(p, std::vector<int>(9, 0)));
  ModelConfig bad{.vocab_size = 10, .d_model = 6, .n_layers = 1, .n_heads = 4, .d_ff = 8,
                  .context = 8};
  CHECK_THROWS(PolicyParams::init(bad, 0));
}

TEST_CASE("gradient clipping and Adam respect the trainable filter") {
  auto p = testing::tiny_model(2);
  auto g = p.zeros_like();
  g.for_each([](const std::string&, Matrix& m, ParamGroup) { m.setConstant(1.0); });
  const double before = global_norm(g, all_groups);
  CHECK(before == doctest::Approx(std::sqrt(static_cast<double>(p.num_parameters()))));
  clip_grad_norm(g, 1.0, all_groups);
  CHECK(global_norm(g, all_groups) == doctest::Approx(1.0));

  auto q = p;
  Adam adam;
  adam.step(q, g, 0.1, adapter_groups);
  CHECK(q.w_out == p.w_out);
  CHECK(q.blocks[0].wq == p.blocks[0].wq);
  CHECK(q.blocks[0].adapters[0].a != p.blocks[0].adapters[0].a);
  CHECK(q.w_value != p.w_value);
  // First Adam step moves each coordinate by lr against the gradient sign.
  CHECK((q.w_value - p.w_value).array().abs().maxCoeff() == doctest::Approx(0.1).epsilon(1e-6));
}
