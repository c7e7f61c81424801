#pragma once

#include <string>
#include <vector>

#include "ift/tensor.hpp"

namespace ift::nn {

struct AdamConfig {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// First/second moment estimates per parameter, in registration order.
struct AdamState {
  AdamConfig config;
  int64_t step = 0;
  std::vector<Tensor> m;
  std::vector<Tensor> v;

  void init(const AdamConfig& cfg, const std::vector<const Tensor*>& params);
};

struct ParamUpdate {
  std::string name;
  Tensor* value = nullptr;
  const Tensor* grad = nullptr;
};

// One bias-corrected Adam update over all parameters. A NaN or Inf in any
// gradient aborts with an error naming the parameter. lr_override < 0 keeps
// the configured learning rate (used by externally scheduled runs).
void adam_step(AdamState& state, const std::vector<ParamUpdate>& params, double lr_override = -1.0);

}  // namespace ift::nn
