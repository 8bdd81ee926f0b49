#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "flsmap/types.hpp"

namespace flsmap {

/// Registry of named trainable tensors. Values and gradient accumulators live
/// in the owning component (grid, MLP, beam pattern); the store keeps Adam
/// moments and drives updates over all registered blocks in a fixed order.
template <typename S>
class ParamStore {
 public:
  struct Block {
    std::string name;
    MatX<S>* value = nullptr;
    MatX<S>* grad = nullptr;
    MatX<S> m, v;
  };

  void add(const std::string& name, MatX<S>& value, MatX<S>& grad) {
    if (value.rows() != grad.rows() || value.cols() != grad.cols())
      throw std::invalid_argument("ParamStore: value/grad shape mismatch for " + name);
    Block b;
    b.name = name;
    b.value = &value;
    b.grad = &grad;
    b.m.setZero(value.rows(), value.cols());
    b.v.setZero(value.rows(), value.cols());
    blocks_.push_back(std::move(b));
  }

  void zero_grads() {
    for (auto& b : blocks_) b.grad->setZero();
  }

  /// Bias-corrected Adam. step_index starts at 1. Gradients are left untouched.
  void adam_step(S lr, S beta1 = S(0.9), S beta2 = S(0.999), S eps = S(1e-8),
                 int64_t step_index = 1) {
    const S c1 = S(1) - std::pow(beta1, S(step_index));
    const S c2 = S(1) - std::pow(beta2, S(step_index));
    for (auto& b : blocks_) {
      auto g = b.grad->array();
      b.m.array() = beta1 * b.m.array() + (S(1) - beta1) * g;
      b.v.array() = beta2 * b.v.array() + (S(1) - beta2) * g * g;
      b.value->array() -=
          lr * (b.m.array() / c1) / ((b.v.array() / c2).sqrt() + eps);
    }
  }

  std::vector<Block>& blocks() { return blocks_; }
  const std::vector<Block>& blocks() const { return blocks_; }

  int64_t total_params() const {
    int64_t n = 0;
    for (const auto& b : blocks_) n += b.value->size();
    return n;
  }

  /// Flat scalar access across blocks, for gradient checking.
  S& value_at(int64_t i) { return *locate(i).first; }
  S grad_at(int64_t i) const { return *locate(i).second; }
  std::string name_at(int64_t i) const {
    int64_t k = i;
    for (const auto& b : blocks_) {
      if (k < b.value->size()) return b.name + "[" + std::to_string(k) + "]";
      k -= b.value->size();
    }
    throw std::out_of_range("ParamStore: flat index out of range");
  }

 private:
  std::pair<S*, const S*> locate(int64_t i) const {
    int64_t k = i;
    for (const auto& b : blocks_) {
      if (k < b.value->size()) return {b.value->data() + k, b.grad->data() + k};
      k -= b.value->size();
    }
    throw std::out_of_range("ParamStore: flat index out of range");
  }

  std::vector<Block> blocks_;
};

/// Step-decayed learning rate: base * decay^floor(step/interval).
inline double lr_schedule(int64_t step, double base_lr = 5e-2, double decay = 0.97,
                          int64_t interval = 600) {
  if (step < 0) throw std::invalid_argument("lr_schedule: negative step");
  return base_lr * std::pow(decay, double(step / interval));
}

}  // namespace flsmap
