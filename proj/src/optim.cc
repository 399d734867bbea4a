#include "realign/optim.h"

#include <cmath>

namespace realign::policy {

bool all_groups(ParamGroup) { return true; }

bool adapter_groups(ParamGroup g) {
  return g == ParamGroup::adapter || g == ParamGroup::value_head;
}

double global_norm(const PolicyParams& grads, const TrainableFilter& trainable) {
  double sq = 0.0;
  grads.for_each([&](const std::string&, const Matrix& m, ParamGroup g) {
    if (trainable(g)) sq += m.squaredNorm();
  });
  return std::sqrt(sq);
}

double clip_grad_norm(PolicyParams& grads, double max_norm, const TrainableFilter& trainable) {
  const double norm = global_norm(grads, trainable);
  if (norm > max_norm && norm > 0.0) {
    const double s = max_norm / norm;
    grads.for_each([&](const std::string&, Matrix& m, ParamGroup g) {
      if (trainable(g)) m *= s;
    });
  }
  return norm;
}

void Adam::step(PolicyParams& params, const PolicyParams& grads, double lr,
                const TrainableFilter& trainable, double value_lr_scale) {
  auto p = tensor_list(params);
  auto g = tensor_list(grads);
  if (m_.empty()) {
    for (auto* t : p) {
      m_.push_back(Matrix::Zero(t->rows(), t->cols()));
      v_.push_back(Matrix::Zero(t->rows(), t->cols()));
    }
  }
  std::vector<bool> mask;
  std::vector<double> rate;
  params.for_each([&](const std::string&, const Matrix&, ParamGroup grp) {
    mask.push_back(trainable(grp));
    rate.push_back(grp == ParamGroup::value_head ? lr * value_lr_scale : lr);
  });
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (size_t i = 0; i < p.size(); ++i) {
    if (!mask[i]) continue;
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * *g[i];
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g[i]->cwiseProduct(*g[i]);
    *p[i] -= (rate[i] * (m_[i] / c1).array() / ((v_[i] / c2).array().sqrt() + eps_)).matrix();
  }
}

}  // namespace realign::policy
