#pragma once

#include <cmath>
#include <functional>

#include "realign/model.h"
#include "realign/random.h"

namespace realign::testing {

// A ~500-parameter model with adapters and O(1) weights, so every
// nonlinearity is exercised by gradient checks.
inline policy::PolicyParams tiny_model(uint64_t seed, bool adapters = true) {
  policy::ModelConfig c;
  c.vocab_size = 5;
  c.d_model = 4;
  c.n_layers = 2;
  c.n_heads = 2;
  c.d_ff = 8;
  c.context = 8;
  auto p = policy::PolicyParams::init(c, seed);
  if (adapters) p.add_adapters({2, 4.0, 0.0}, seed + 1);
  Rng rng(seed + 2);
  p.for_each([&](const std::string&, policy::Matrix& m, policy::ParamGroup) {
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] += 0.4 * rng.normal();
  });
  return p;
}

// Central-difference gradient of `loss` with respect to every parameter,
// returned in the layout of `params`.
inline policy::PolicyParams numeric_gradient(
    const policy::PolicyParams& params,
    const std::function<double(const policy::PolicyParams&)>& loss, double h = 1e-5) {
  policy::PolicyParams probe = params;
  policy::PolicyParams grad = params.zeros_like();
  auto ps = policy::tensor_list(probe);
  auto gs = policy::tensor_list(grad);
  for (size_t t = 0; t < ps.size(); ++t) {
    for (Eigen::Index i = 0; i < ps[t]->size(); ++i) {
      double& x = ps[t]->data()[i];
      const double saved = x;
      x = saved + h;
      const double up = loss(probe);
      x = saved - h;
      const double down = loss(probe);
      x = saved;
      gs[t]->data()[i] = (up - down) / (2 * h);
    }
  }
  return grad;
}

// Max over tensors of ||a - b|| / max(||a||, ||b||); tensors whose gradients
// are both below `floor` are skipped.
inline double max_relative_error(const policy::PolicyParams& a, const policy::PolicyParams& b,
                                 double floor = 1e-9) {
  auto as = policy::tensor_list(a);
  auto bs = policy::tensor_list(b);
  double worst = 0;
  for (size_t t = 0; t < as.size(); ++t) {
    const double scale = std::max(as[t]->norm(), bs[t]->norm());
    if (scale < floor) continue;
    worst = std::max(worst, (*as[t] - *bs[t]).norm() / scale);
  }
  return worst;
}

}  // namespace realign::testing
