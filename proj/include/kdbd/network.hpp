#pragma once
// A small configurable convolutional classifier with exact reverse-mode
// gradients.
//
// Topology: N blocks of [conv3x3 (same padding) -> ReLU -> maxpool 2x2], then
// flatten -> dense(classifier_width) -> ReLU -> dense(num_classes). The output
// is pre-softmax logits. Parameters are stored in a fixed order:
//   block{i}.weight [C_out, C_in, 3, 3], block{i}.bias [C_out], ...,
//   fc0.weight [classifier_width, features], fc0.bias, fc1.weight, fc1.bias

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "kdbd/tensor.hpp"

namespace kdbd::nn {

struct ArchSpec {
  std::size_t channels = 3;
  std::size_t height = 16;
  std::size_t width = 16;
  std::vector<std::size_t> block_widths{16, 32};
  std::size_t classifier_width = 64;
  std::size_t num_classes = 10;
  /// Scales the channel count of the last conv block only.
  double width_multiplier = 1.0;

  /// Conv widths after applying the multiplier: ceil(width * multiplier).
  std::vector<std::size_t> effective_widths() const;
  std::size_t final_height() const;
  std::size_t final_width() const;
  /// Length of the flattened feature vector fed to the classifier.
  std::size_t feature_count() const;
  std::size_t parameter_count() const;

  /// Throws ConfigError on any invariant violation.
  void validate() const;

  /// Stable single-line text form; round-trips through parse().
  std::string canonical() const;
  static ArchSpec parse(std::string_view text);

  friend bool operator==(const ArchSpec&, const ArchSpec&) = default;
};

enum class Role { teacher, student };
std::string_view role_name(Role role);
Role parse_role(std::string_view text);

std::vector<std::string> parameter_names(const ArchSpec& arch);
std::vector<std::vector<std::size_t>> parameter_shapes(const ArchSpec& arch);

/// Monotone process-wide counter used to detect stale traces.
std::uint64_t next_generation();

template <typename T>
struct NetworkParams {
  ArchSpec arch;
  Role role = Role::student;
  std::vector<std::string> names;
  std::vector<BasicTensor<T>> tensors;
  /// Changes on every mutation through optimizer_step()/touch().
  std::uint64_t generation = 0;

  void touch() { generation = next_generation(); }

  std::size_t parameter_count() const;

  template <typename U>
  NetworkParams<U> cast() const {
    NetworkParams<U> out;
    out.arch = arch;
    out.role = role;
    out.names = names;
    out.tensors.reserve(tensors.size());
    for (const auto& t : tensors) out.tensors.push_back(t.template cast<U>());
    out.touch();
    return out;
  }
};

/// Kaiming-uniform weights (bound sqrt(6 / fan_in)), biases uniform in
/// +-1/sqrt(fan_in), drawn in parameter order from `seed`.
template <typename T>
NetworkParams<T> init_network(const ArchSpec& arch, Role role, std::uint64_t seed);

/// All parameters zero.
template <typename T>
NetworkParams<T> zero_network(const ArchSpec& arch, Role role);

/// Activations retained by forward() for one batch.
template <typename T>
struct ForwardTrace {
  std::uint64_t generation = 0;
  ArchSpec arch;
  std::size_t batch = 0;
  struct Block {
    std::size_t in_channels = 0, out_channels = 0, height = 0, width = 0;
    std::vector<T> cols;           // [B][C_in*9][H*W]
    std::vector<T> activated;      // ReLU output, [B][C_out][H*W]
    std::vector<std::uint32_t> argmax;  // pooled position -> index into the H*W plane
  };
  std::vector<Block> blocks;
  std::vector<T> features;  // [B][F]
  std::vector<T> hidden;    // post-ReLU, [B][classifier_width]
};

template <typename T>
struct ForwardResult {
  BasicTensor<T> logits;
  ForwardTrace<T> trace;
};

template <typename T>
struct Gradients {
  std::vector<BasicTensor<T>> params;  // same order/shapes as NetworkParams::tensors
  std::optional<BasicTensor<T>> input;  // [B,C,H,W], only when requested
};

/// Pre-softmax logits [B, num_classes] with a trace for backward().
template <typename T>
ForwardResult<T> forward(const NetworkParams<T>& params, const BasicTensor<T>& batch);

/// Logits only; nothing retained.
template <typename T>
BasicTensor<T> infer(const NetworkParams<T>& params, const BasicTensor<T>& batch);

/// Gradients of sum(upstream * logits) w.r.t. every parameter (and optionally
/// the input). Throws std::logic_error if the trace was produced by a different
/// parameter generation or architecture.
template <typename T>
Gradients<T> backward(const NetworkParams<T>& params, const ForwardTrace<T>& trace,
                      const BasicTensor<T>& upstream, bool want_input_grad = false);

/// Throws ShapeError naming the offending dimension.
void check_batch_shape(const ArchSpec& arch, std::span<const std::size_t> shape);

}  // namespace kdbd::nn
