#include "ift/adam.hpp"

#include <cmath>

#include "ift/error.hpp"

namespace ift::nn {

void AdamState::init(const AdamConfig& cfg, const std::vector<const Tensor*>& params) {
  config = cfg;
  step = 0;
  m.clear();
  v.clear();
  m.reserve(params.size());
  v.reserve(params.size());
  for (const Tensor* p : params) {
    m.push_back(Tensor::zeros(p->shape));
    v.push_back(Tensor::zeros(p->shape));
  }
}

void adam_step(AdamState& state, const std::vector<ParamUpdate>& params, double lr_override) {
  if (params.size() != state.m.size()) {
    throw Error(ErrorKind::Config, "adam_step: state holds " + std::to_string(state.m.size()) +
                                       " parameters, got " + std::to_string(params.size()));
  }
  const double lr = lr_override >= 0.0 ? lr_override : state.config.lr;
  if (lr < 0.0) throw Error(ErrorKind::Config, "adam_step: negative learning rate");
  const double b1 = state.config.beta1, b2 = state.config.beta2, eps = state.config.eps;

  ++state.step;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(state.step));

  for (size_t i = 0; i < params.size(); ++i) {
    const ParamUpdate& p = params[i];
    if (!p.value || !p.grad) throw Error(ErrorKind::Config, "adam_step: null parameter binding");
    if (!p.value->same_shape(*p.grad) || !p.value->same_shape(state.m[i])) {
      throw Error(ErrorKind::Data, "adam_step: shape mismatch for parameter '" + p.name + "'");
    }
    if (!p.grad->all_finite()) {
      throw Error(ErrorKind::Numeric, "adam_step: non-finite gradient for parameter '" + p.name + "'");
    }
    Tensor& mm = state.m[i];
    Tensor& vv = state.v[i];
    double* w = p.value->data.data();
    const double* g = p.grad->data.data();
    const int64_t n = p.value->size();
    for (int64_t j = 0; j < n; ++j) {
      mm[j] = b1 * mm[j] + (1.0 - b1) * g[j];
      vv[j] = b2 * vv[j] + (1.0 - b2) * g[j] * g[j];
      const double mhat = mm[j] / bc1;
      const double vhat = vv[j] / bc2;
      w[j] -= lr * mhat / (std::sqrt(vhat) + eps);
    }
  }
}

}  // namespace ift::nn
