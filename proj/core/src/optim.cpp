#include "attnpain/optim.hpp"

#include <cmath>

namespace attnpain::optim {

void Adam::step(std::vector<vit::Param>& params) {
  ++t_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (auto& p : params) {
    if (!p.trainable) continue;
    if (!p.value.has_grad())
      throw ValidationError("adam step: missing gradient for trainable tensor " + p.name);
    const size_t n = p.value.numel();
    auto& mom = moments_[p.name];
    if (mom.m.empty()) {
      mom.m.assign(n, 0.0);
      mom.v.assign(n, 0.0);
    }
    const std::vector<double> g = p.value.grad_to_vector();
    auto update = [&](auto* w) {
      for (size_t i = 0; i < n; ++i) {
        mom.m[i] = cfg_.beta1 * mom.m[i] + (1.0 - cfg_.beta1) * g[i];
        mom.v[i] = cfg_.beta2 * mom.v[i] + (1.0 - cfg_.beta2) * g[i] * g[i];
        const double mhat = mom.m[i] / bc1;
        const double vhat = mom.v[i] / bc2;
        double wi = static_cast<double>(w[i]);
        wi -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        if (cfg_.weight_decay != 0.0) wi -= cfg_.lr * cfg_.weight_decay * wi;
        w[i] = static_cast<std::remove_reference_t<decltype(w[i])>>(wi);
      }
    };
    if (p.value.dtype() == DType::f64)
      update(p.value.data_f64());
    else
      update(p.value.data_f32());
  }
}

double Sam::step(std::vector<vit::Param>& params,
                 const std::function<double()>& loss_closure) {
  const double loss = loss_closure();

  double norm_sq = 0.0;
  std::vector<std::vector<double>> grads(params.size());
  for (size_t i = 0; i < params.size(); ++i) {
    if (!params[i].trainable) continue;
    if (!params[i].value.has_grad())
      throw ValidationError("sam step: missing gradient for trainable tensor " +
                            params[i].name);
    grads[i] = params[i].value.grad_to_vector();
    for (double g : grads[i]) norm_sq += g * g;
  }
  const double norm = std::sqrt(norm_sq);
  if (norm == 0.0) {
    adam_.step(params);
    return loss;
  }

  // Save, ascend, re-evaluate, restore bitwise, then descend with g'.
  std::vector<Tensor> saved(params.size());
  const double scale = cfg_.rho / norm;
  for (size_t i = 0; i < params.size(); ++i) {
    if (!params[i].trainable) continue;
    saved[i] = params[i].value.detach();
    auto perturb = [&](auto* w) {
      for (size_t j = 0; j < grads[i].size(); ++j)
        w[j] = static_cast<std::remove_reference_t<decltype(w[j])>>(
            static_cast<double>(w[j]) + scale * grads[i][j]);
    };
    if (params[i].value.dtype() == DType::f64)
      perturb(params[i].value.data_f64());
    else
      perturb(params[i].value.data_f32());
  }

  loss_closure();

  for (size_t i = 0; i < params.size(); ++i) {
    if (!params[i].trainable) continue;
    if (params[i].value.dtype() == DType::f64) {
      const double* src = saved[i].data_f64();
      double* dst = params[i].value.data_f64();
      std::copy_n(src, params[i].value.numel(), dst);
    } else {
      const float* src = saved[i].data_f32();
      float* dst = params[i].value.data_f32();
      std::copy_n(src, params[i].value.numel(), dst);
    }
  }

  adam_.step(params);
  return loss;
}

}  // namespace attnpain::optim
