#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "pmq/model.hpp"

namespace pmq::optim {

// Linear ramp from 0 to base_lr over ceil(warmup_frac*total_steps) steps,
// constant afterwards. Step 0 yields the first ramp value base_lr/W.
inline double warmup_schedule(int64_t step, int64_t total_steps, double base_lr,
                              double warmup_frac) {
  const int64_t w = static_cast<int64_t>(std::ceil(warmup_frac * static_cast<double>(total_steps)));
  if (w <= 0) return base_lr;
  const double ramp = static_cast<double>(step + 1) / static_cast<double>(w);
  return ramp < 1.0 ? base_lr * ramp : base_lr;
}

// Adam with decoupled weight decay over one branch's parameters.
template <typename T>
class AdamW {
 public:
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8, weight_decay = 0.01;

  void clear() {
    slots_.clear();
    t_ = 0;
  }

  void add_param(const std::string& name, std::vector<T>& w, std::vector<T>& g) {
    Slot s;
    s.name = name;
    s.w = &w;
    s.g = &g;
    s.m.assign(w.size(), T(0));
    s.v.assign(w.size(), T(0));
    slots_.push_back(std::move(s));
  }

  // Any module exposing visit(prefix, f).
  template <typename M>
  void add_module(M& module, const std::string& prefix) {
    module.visit(prefix, [&](const std::string& name, std::vector<T>& w, std::vector<T>& g) {
      add_param(name, w, g);
    });
  }

  void attach(model::Branch<T>& branch, const std::string& prefix) {
    clear();
    add_module(branch, prefix);
  }

  void step(double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t_));
    for (Slot& s : slots_) {
      std::vector<T>& w = *s.w;
      const std::vector<T>& g = *s.g;
      for (size_t i = 0; i < w.size(); ++i) {
        s.m[i] = T(beta1) * s.m[i] + T(1.0 - beta1) * g[i];
        s.v[i] = T(beta2) * s.v[i] + T(1.0 - beta2) * g[i] * g[i];
        const double mhat = static_cast<double>(s.m[i]) / bc1;
        const double vhat = static_cast<double>(s.v[i]) / bc2;
        const double upd = mhat / (std::sqrt(vhat) + eps) + weight_decay * static_cast<double>(w[i]);
        w[i] = static_cast<T>(static_cast<double>(w[i]) - lr * upd);
      }
    }
  }

  int64_t step_count() const { return t_; }
  void set_step_count(int64_t t) { t_ = t; }

  // Moment buffers by parameter name, for checkpointing.
  template <typename F>
  void visit_state(F&& f) {
    for (Slot& s : slots_) {
      f("opt.m." + s.name, s.m);
      f("opt.v." + s.name, s.v);
    }
  }

 private:
  struct Slot {
    std::string name;
    std::vector<T>* w = nullptr;
    std::vector<T>* g = nullptr;
    std::vector<T> m, v;
  };
  std::vector<Slot> slots_;
  int64_t t_ = 0;
};

}  // namespace pmq::optim
