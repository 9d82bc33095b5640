#pragma once

#include <cmath>
#include <stdexcept>
#include <string>

#include "grbe/params.hpp"

namespace grbe {

/// Thrown when the optimization produces non-finite numbers; the CLI maps it
/// to its numeric-divergence exit code.
struct DivergenceError : std::runtime_error {
  explicit DivergenceError(const std::string& what) : std::runtime_error(what) {}
};

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First/second moment accumulators, keyed like the parameter store.
struct AdamState {
  GradStore m;
  GradStore v;
  long step = 0;
};

/// One bias-corrected Adam update, in place.
inline void adam_step(ParamStore& params, const GradStore& grads, AdamState& state, const AdamConfig& cfg) {
  state.step += 1;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (auto& [name, p] : params) {
    const auto git = grads.find(name);
    require(git != grads.end(), "adam_step: missing gradient for " + name);
    const Tensor& g = git->second;
    require(g.same_shape(p), "adam_step: gradient shape mismatch for " + name);
    if (!g.all_finite()) throw DivergenceError("adam_step: non-finite gradient in " + name);
    Tensor& m = state.m.try_emplace(name, Tensor(p.rows, p.cols)).first->second;
    Tensor& v = state.v.try_emplace(name, Tensor(p.rows, p.cols)).first->second;
    for (std::size_t i = 0; i < p.v.size(); ++i) {
      m.v[i] = cfg.beta1 * m.v[i] + (1.0 - cfg.beta1) * g.v[i];
      v.v[i] = cfg.beta2 * v.v[i] + (1.0 - cfg.beta2) * g.v[i] * g.v[i];
      const double mhat = m.v[i] / bc1;
      const double vhat = v.v[i] / bc2;
      p.v[i] -= cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.eps);
    }
    if (!p.all_finite()) throw DivergenceError("adam_step: non-finite parameter in " + name);
  }
}

}  // namespace grbe
