#pragma once

#include <cmath>
#include <map>
#include <string>
#include <vector>

#include "layerfit/nn.hpp"

namespace layerfit {

struct AdamWConfig {
  double learning_rate = 1e-4;  // desk-scale default; full-scale recipes use 1e-5
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-2;
};

// AdamW: adaptive moments with decoupled weight decay. Moment buffers are
// keyed by parameter id; the step counter is shared.
class AdamW {
 public:
  explicit AdamW(AdamWConfig cfg = {}) : cfg_(cfg) {}

  const AdamWConfig& config() const { return cfg_; }
  int64_t step_count() const { return step_; }

  // Applies one update to every parameter and zeroes gradients afterwards.
  void step(ParamStore& params) {
    ++step_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
    for (auto& [id, p] : params.entries()) {
      if (!p.has_grad())
        throw UsageError("optimizer step: parameter '" + id + "' has no gradient");
      auto& slot = moments_[id];
      if (slot.m.empty()) {
        slot.m.assign(static_cast<size_t>(p.numel()), 0.0);
        slot.v.assign(static_cast<size_t>(p.numel()), 0.0);
      } else if (slot.m.size() != static_cast<size_t>(p.numel())) {
        throw UsageError("optimizer step: accumulator shape for '" + id +
                         "' does not match parameter");
      }
      Tensor t = p;  // handle copy; shares the underlying node
      auto value = t.data();
      auto grad = p.grad();
      for (size_t i = 0; i < value.size(); ++i) {
        double g = grad[i];
        slot.m[i] = cfg_.beta1 * slot.m[i] + (1.0 - cfg_.beta1) * g;
        slot.v[i] = cfg_.beta2 * slot.v[i] + (1.0 - cfg_.beta2) * g * g;
        double mhat = slot.m[i] / bc1;
        double vhat = slot.v[i] / bc2;
        value[i] -= cfg_.learning_rate *
                    (mhat / (std::sqrt(vhat) + cfg_.eps) + cfg_.weight_decay * value[i]);
      }
    }
    params.zero_grads();
  }

 private:
  struct Moments {
    std::vector<double> m, v;
  };

  AdamWConfig cfg_;
  std::map<std::string, Moments> moments_;
  int64_t step_ = 0;
};

}  // namespace layerfit
