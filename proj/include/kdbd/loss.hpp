#pragma once
// Classification and distillation losses over logits [B, K].
//
// All losses return the batch-mean value together with its gradient with
// respect to the (student) logits. Internal arithmetic is done in double
// regardless of T.

#include <cstddef>
#include <span>
#include <string_view>

#include "kdbd/tensor.hpp"

namespace kdbd::nn {

template <typename T>
struct LossValue {
  double value = 0.0;
  BasicTensor<T> grad;  // d value / d logits, same shape as the logits
};

/// Which softened distribution plays the role of the target in KL(target || other).
enum class KlDirection {
  teacher_as_target,  // sum p_t * ln(p_t / p_s)  (default)
  student_as_target,  // sum p_s * ln(p_s / p_t)
};

std::string_view kl_direction_name(KlDirection d);
KlDirection parse_kl_direction(std::string_view text);

/// Row-wise softmax(logits / tau), computed with max subtraction.
template <typename T>
BasicTensor<T> softmax_temperature(const BasicTensor<T>& logits, double tau);

/// Mean negative log-likelihood of `labels` under softmax(logits).
template <typename T>
LossValue<T> cross_entropy_loss(const BasicTensor<T>& logits, std::span<const std::size_t> labels);

/// tau^2 * mean KL between softmax(student/tau) and softmax(teacher/tau).
/// The teacher logits are constants; only the student receives gradient.
template <typename T>
LossValue<T> kd_kl_loss(const BasicTensor<T>& student_logits, const BasicTensor<T>& teacher_logits,
                        double tau, KlDirection direction = KlDirection::teacher_as_target);

/// (1 - lambda) * CE(student, labels) + lambda * KD(student, teacher).
template <typename T>
LossValue<T> combined_kd_loss(const BasicTensor<T>& student_logits,
                              const BasicTensor<T>& teacher_logits,
                              std::span<const std::size_t> labels, double tau, double lambda,
                              KlDirection direction = KlDirection::teacher_as_target);

}  // namespace kdbd::nn
