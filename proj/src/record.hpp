#pragma once

// Tape plumbing shared by the fused ops outside ops.cpp.

#include <functional>
#include <initializer_list>
#include <memory>
#include <vector>

#include "grela/tape.hpp"
#include "grela/tensor.hpp"

namespace grela::detail {

inline bool needs_grad(std::initializer_list<const Tensor*> inputs) {
  if (Tape::active() == nullptr) return false;
  for (const Tensor* t : inputs)
    if (t != nullptr && t->defined() && t->requires_grad()) return true;
  return false;
}

inline void record(const char* name, std::initializer_list<const Tensor*> inputs, Tensor& out,
                   std::function<void()> rule) {
  std::vector<std::shared_ptr<TensorImpl>> in;
  for (const Tensor* t : inputs)
    if (t != nullptr && t->defined()) in.push_back(t->impl());
  out.set_requires_grad(true);
  Tape::active()->record(name, std::move(in), out.impl(), std::move(rule));
}

inline double* grad_of(TensorImpl* t) {
  if (!t->requires_grad) return nullptr;
  t->ensure_grad();
  return t->grad.data();
}

}  // namespace grela::detail
