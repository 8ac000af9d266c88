#pragma once

#include <functional>
#include <unordered_map>
#include <vector>

#include "attnpain/vit.hpp"

namespace attnpain::optim {

struct AdamConfig {
  double lr = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // decoupled, off by default
};

// Bias-corrected Adam over a model's trainable parameters. Moments are
// kept in f64 regardless of parameter dtype. Frozen tensors are never
// touched.
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  const AdamConfig& config() const { return cfg_; }
  long step_count() const { return t_; }

  // Consumes the gradient accumulated on each trainable parameter; throws
  // if any trainable parameter has none.
  void step(std::vector<vit::Param>& params);

 private:
  struct Moments {
    std::vector<double> m, v;
  };
  AdamConfig cfg_;
  long t_ = 0;
  std::unordered_map<std::string, Moments> moments_;
};

struct SamConfig {
  double rho = 0.05;
  AdamConfig adam;
};

// Sharpness-aware minimization wrapped around Adam. One step runs the
// loss closure twice: once at w to find the ascent direction, once at
// w + rho * g / |g|2 (global norm over trainable tensors) to obtain the
// gradient Adam consumes. Parameters are restored bitwise from a saved
// copy before the update, so an interrupt between passes cannot leak a
// perturbed checkpoint. A zero gradient degenerates to plain Adam.
class Sam {
 public:
  explicit Sam(SamConfig cfg = {}) : cfg_(cfg), adam_(cfg.adam) {
    if (cfg_.rho <= 0.0) throw ValidationError("Sam: rho must be positive");
  }

  const SamConfig& config() const { return cfg_; }
  Adam& inner() { return adam_; }

  // loss_closure zeroes trainable gradients, runs forward + backward at
  // the current parameter values and returns the loss. Returns the loss
  // of the first (unperturbed) pass.
  double step(std::vector<vit::Param>& params,
              const std::function<double()>& loss_closure);

 private:
  SamConfig cfg_;
  Adam adam_;
};

}  // namespace attnpain::optim
