#pragma once

#include <map>
#include <string>

#include "grbe/autodiff.hpp"
#include "grbe/tensor.hpp"

namespace grbe {

/// Named trainable tensors. Ordered map so every iteration (updates,
/// serialization, flattening) is deterministic.
using ParamStore = std::map<std::string, Tensor>;
using GradStore = std::map<std::string, Tensor>;
using BoundParams = std::map<std::string, ad::Value>;

/// Register every parameter as a leaf on the tape.
inline BoundParams bind_params(ad::Tape& tape, const ParamStore& params) {
  BoundParams bound;
  for (const auto& [name, tensor] : params) bound.emplace(name, tape.leaf(tensor));
  return bound;
}

/// Read gradients back after Tape::backward; untouched parameters get zeros.
inline GradStore collect_grads(const ad::Tape& tape, const BoundParams& bound) {
  GradStore grads;
  for (const auto& [name, value] : bound) {
    const Tensor& g = tape.grad(value);
    if (g.size() > 0)
      grads.emplace(name, g);
    else
      grads.emplace(name, Tensor(value.rows(), value.cols()));
  }
  return grads;
}

inline std::size_t param_count(const ParamStore& params) {
  std::size_t n = 0;
  for (const auto& [name, tensor] : params) n += tensor.size();
  return n;
}

}  // namespace grbe
