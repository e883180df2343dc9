#include "kdbd/optimizer.hpp"

#include <cmath>
#include <string>

namespace kdbd::nn {

std::string_view optimizer_name(OptimizerMethod m) { return m == OptimizerMethod::sgd ? "sgd" : "adam"; }

OptimizerMethod parse_optimizer(std::string_view text) {
  if (text == "sgd") return OptimizerMethod::sgd;
  if (text == "adam") return OptimizerMethod::adam;
  throw ConfigError("unknown optimizer '" + std::string(text) + "'");
}

void OptimizerConfig::validate() const {
  if (!(lr > 0.0)) throw ConfigError("optimizer: lr must be > 0, got " + std::to_string(lr));
  if (method == OptimizerMethod::adam) {
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
      throw ConfigError("optimizer: Adam betas must lie in [0, 1)");
    }
    if (!(eps > 0.0)) throw ConfigError("optimizer: Adam eps must be > 0");
  }
}

template <typename T>
void optimizer_step(NetworkParams<T>& params, const std::vector<BasicTensor<T>>& grads,
                    const OptimizerConfig& config, AdamState<T>& state) {
  config.validate();
  if (grads.size() != params.tensors.size()) {
    throw ShapeError("optimizer_step: " + std::to_string(grads.size()) + " gradients for " +
                     std::to_string(params.tensors.size()) + " parameter tensors");
  }
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (grads[i].shape() != params.tensors[i].shape()) {
      throw ShapeError("optimizer_step: gradient for " + params.names[i] + " has shape " +
                       shape_to_string(grads[i].shape()) + ", expected " +
                       shape_to_string(params.tensors[i].shape()));
    }
  }

  if (config.method == OptimizerMethod::sgd) {
    const T lr = static_cast<T>(config.lr);
    for (std::size_t i = 0; i < grads.size(); ++i) {
      auto p = params.tensors[i].data();
      auto g = grads[i].data();
      for (std::size_t j = 0; j < p.size(); ++j) p[j] -= lr * g[j];
    }
  } else {
    if (state.m.empty()) {
      for (const auto& t : params.tensors) {
        state.m.emplace_back(t.size(), T{0});
        state.v.emplace_back(t.size(), T{0});
      }
    }
    state.step += 1;
    const double bc1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.step));
    const double bc2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.step));
    const T b1 = static_cast<T>(config.beta1), b2 = static_cast<T>(config.beta2);
    const T step_size = static_cast<T>(config.lr / bc1);
    const T inv_sqrt_bc2 = static_cast<T>(1.0 / std::sqrt(bc2));
    const T eps = static_cast<T>(config.eps);
    for (std::size_t i = 0; i < grads.size(); ++i) {
      auto p = params.tensors[i].data();
      auto g = grads[i].data();
      auto& m = state.m[i];
      auto& v = state.v[i];
      for (std::size_t j = 0; j < p.size(); ++j) {
        m[j] = b1 * m[j] + (T{1} - b1) * g[j];
        v[j] = b2 * v[j] + (T{1} - b2) * g[j] * g[j];
        p[j] -= step_size * m[j] / (std::sqrt(v[j]) * inv_sqrt_bc2 + eps);
      }
    }
  }
  params.touch();
}

template void optimizer_step<float>(NetworkParams<float>&, const std::vector<BasicTensor<float>>&,
                                    const OptimizerConfig&, AdamState<float>&);
template void optimizer_step<double>(NetworkParams<double>&, const std::vector<BasicTensor<double>>&,
                                     const OptimizerConfig&, AdamState<double>&);

}  // namespace kdbd::nn
