#pragma once

#include <functional>
#include <vector>

#include "realign/model.h"

namespace realign::policy {

// Decides which tensors an optimizer may touch.
using TrainableFilter = std::function<bool(ParamGroup)>;

bool all_groups(ParamGroup g);
// Adapters and value head only; the base network stays frozen.
bool adapter_groups(ParamGroup g);

double global_norm(const PolicyParams& grads, const TrainableFilter& trainable);

// Scales the trainable gradients so their global norm is at most `max_norm`.
// Returns the norm before clipping.
double clip_grad_norm(PolicyParams& grads, double max_norm, const TrainableFilter& trainable);

// Adam with bias correction.
class Adam {
 public:
  Adam(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : beta1_(beta1), beta2_(beta2), eps_(eps) {}

  // The value head steps with lr * value_lr_scale.
  void step(PolicyParams& params, const PolicyParams& grads, double lr,
            const TrainableFilter& trainable, double value_lr_scale = 1.0);
  long steps() const { return t_; }

 private:
  double beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<Matrix> m_, v_;
};

}  // namespace realign::policy
