#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

#include "kdbd/network.hpp"

namespace kdbd::nn {

enum class OptimizerMethod { sgd, adam };

std::string_view optimizer_name(OptimizerMethod m);
OptimizerMethod parse_optimizer(std::string_view text);

struct OptimizerConfig {
  OptimizerMethod method = OptimizerMethod::adam;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void validate() const;
};

/// First/second moment estimates; empty until the first Adam step.
template <typename T>
struct AdamState {
  std::vector<std::vector<T>> m;
  std::vector<std::vector<T>> v;
  std::uint64_t step = 0;
};

/// Applies one update to `params` in place and bumps its generation.
template <typename T>
void optimizer_step(NetworkParams<T>& params, const std::vector<BasicTensor<T>>& grads,
                    const OptimizerConfig& config, AdamState<T>& state);

}  // namespace kdbd::nn
