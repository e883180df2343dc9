#include "kdbd/loss.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "kdbd/error.hpp"

namespace kdbd::nn {

std::string_view kl_direction_name(KlDirection d) {
  return d == KlDirection::teacher_as_target ? "teacher_as_target" : "student_as_target";
}

KlDirection parse_kl_direction(std::string_view text) {
  if (text == "teacher_as_target") return KlDirection::teacher_as_target;
  if (text == "student_as_target") return KlDirection::student_as_target;
  throw ConfigError("unknown KL direction '" + std::string(text) + "'");
}

namespace {

template <typename T>
void check_logits(const BasicTensor<T>& logits, std::string_view op) {
  if (logits.rank() != 2) {
    throw ShapeError(std::string(op) + ": logits must be rank 2 [B,K], got " +
                     shape_to_string(logits.shape()));
  }
}

void check_tau(double tau, std::string_view op) {
  if (!(tau > 0.0) || !std::isfinite(tau)) {
    throw ConfigError(std::string(op) + ": temperature must be > 0, got " + std::to_string(tau));
  }
}

// log softmax(row / tau) into `out`.
template <typename T>
void log_softmax_row(std::span<const T> row, double tau, std::vector<double>& out) {
  out.resize(row.size());
  double mx = -INFINITY;
  for (std::size_t k = 0; k < row.size(); ++k) {
    out[k] = static_cast<double>(row[k]) / tau;
    mx = std::max(mx, out[k]);
  }
  double sum = 0.0;
  for (double v : out) sum += std::exp(v - mx);
  const double lse = mx + std::log(sum);
  for (double& v : out) v -= lse;
}

}  // namespace

template <typename T>
BasicTensor<T> softmax_temperature(const BasicTensor<T>& logits, double tau) {
  check_tau(tau, "softmax_temperature");
  check_logits(logits, "softmax_temperature");
  BasicTensor<T> out(logits.shape());
  std::vector<double> z;
  for (std::size_t b = 0; b < logits.dim(0); ++b) {
    const auto row = logits.row(b);
    z.resize(row.size());
    double mx = -INFINITY;
    for (std::size_t k = 0; k < row.size(); ++k) {
      z[k] = static_cast<double>(row[k]) / tau;
      mx = std::max(mx, z[k]);
    }
    double sum = 0.0;
    for (double& v : z) {
      v = std::exp(v - mx);
      sum += v;
    }
    auto dst = out.row(b);
    for (std::size_t k = 0; k < row.size(); ++k) dst[k] = static_cast<T>(z[k] / sum);
  }
  return out;
}

template <typename T>
LossValue<T> cross_entropy_loss(const BasicTensor<T>& logits, std::span<const std::size_t> labels) {
  check_logits(logits, "cross_entropy_loss");
  const std::size_t B = logits.dim(0), K = logits.dim(1);
  if (labels.size() != B) {
    throw ShapeError("cross_entropy_loss: " + std::to_string(labels.size()) + " labels for batch of " +
                     std::to_string(B));
  }
  LossValue<T> out{0.0, BasicTensor<T>(logits.shape())};
  std::vector<double> lp;
  for (std::size_t b = 0; b < B; ++b) {
    if (labels[b] >= K) {
      throw ConfigError("cross_entropy_loss: label " + std::to_string(labels[b]) + " at row " +
                        std::to_string(b) + " is outside [0, " + std::to_string(K) + ")");
    }
    log_softmax_row(logits.row(b), 1.0, lp);
    out.value -= lp[labels[b]];
    auto g = out.grad.row(b);
    for (std::size_t k = 0; k < K; ++k) {
      g[k] = static_cast<T>((std::exp(lp[k]) - (k == labels[b] ? 1.0 : 0.0)) / static_cast<double>(B));
    }
  }
  out.value /= static_cast<double>(B);
  return out;
}

template <typename T>
LossValue<T> kd_kl_loss(const BasicTensor<T>& student_logits, const BasicTensor<T>& teacher_logits,
                        double tau, KlDirection direction) {
  check_tau(tau, "kd_kl_loss");
  check_logits(student_logits, "kd_kl_loss");
  if (student_logits.shape() != teacher_logits.shape()) {
    throw ShapeError("kd_kl_loss: student logits " + shape_to_string(student_logits.shape()) +
                     " and teacher logits " + shape_to_string(teacher_logits.shape()) + " differ");
  }
  const std::size_t B = student_logits.dim(0), K = student_logits.dim(1);
  LossValue<T> out{0.0, BasicTensor<T>(student_logits.shape())};
  const double scale = tau * tau / static_cast<double>(B);
  std::vector<double> ls, lt;
  for (std::size_t b = 0; b < B; ++b) {
    log_softmax_row(student_logits.row(b), tau, ls);
    log_softmax_row(teacher_logits.row(b), tau, lt);
    auto g = out.grad.row(b);
    double kl = 0.0;
    if (direction == KlDirection::teacher_as_target) {
      for (std::size_t k = 0; k < K; ++k) {
        const double pt = std::exp(lt[k]);
        kl += pt * (lt[k] - ls[k]);
        // d/dz_s of tau^2 * KL(p_t || p_s) = tau * (p_s - p_t)
        g[k] = static_cast<T>(scale / tau * (std::exp(ls[k]) - pt));
      }
    } else {
      for (std::size_t k = 0; k < K; ++k) kl += std::exp(ls[k]) * (ls[k] - lt[k]);
      for (std::size_t k = 0; k < K; ++k) {
        const double ps = std::exp(ls[k]);
        g[k] = static_cast<T>(scale / tau * ps * ((ls[k] - lt[k]) - kl));
      }
    }
    out.value += kl;
  }
  out.value *= scale;
  return out;
}

template <typename T>
LossValue<T> combined_kd_loss(const BasicTensor<T>& student_logits,
                              const BasicTensor<T>& teacher_logits,
                              std::span<const std::size_t> labels, double tau, double lambda,
                              KlDirection direction) {
  if (!(lambda >= 0.0 && lambda <= 1.0)) {
    throw ConfigError("combined_kd_loss: lambda must be in [0, 1], got " + std::to_string(lambda));
  }
  auto ce = cross_entropy_loss(student_logits, labels);
  auto kd = kd_kl_loss(student_logits, teacher_logits, tau, direction);
  const double wce = 1.0 - lambda;
  LossValue<T> out{wce * ce.value + lambda * kd.value, BasicTensor<T>(student_logits.shape())};
  auto g = out.grad.data();
  const auto gce = ce.grad.data();
  const auto gkd = kd.grad.data();
  for (std::size_t i = 0; i < g.size(); ++i) {
    g[i] = static_cast<T>(wce * static_cast<double>(gce[i]) + lambda * static_cast<double>(gkd[i]));
  }
  return out;
}

template BasicTensor<float> softmax_temperature<float>(const BasicTensor<float>&, double);
template BasicTensor<double> softmax_temperature<double>(const BasicTensor<double>&, double);
template LossValue<float> cross_entropy_loss<float>(const BasicTensor<float>&, std::span<const std::size_t>);
template LossValue<double> cross_entropy_loss<double>(const BasicTensor<double>&, std::span<const std::size_t>);
template LossValue<float> kd_kl_loss<float>(const BasicTensor<float>&, const BasicTensor<float>&, double,
                                            KlDirection);
template LossValue<double> kd_kl_loss<double>(const BasicTensor<double>&, const BasicTensor<double>&,
                                              double, KlDirection);
template LossValue<float> combined_kd_loss<float>(const BasicTensor<float>&, const BasicTensor<float>&,
                                                  std::span<const std::size_t>, double, double,
                                                  KlDirection);
template LossValue<double> combined_kd_loss<double>(const BasicTensor<double>&,
                                                    const BasicTensor<double>&,
                                                    std::span<const std::size_t>, double, double,
                                                    KlDirection);

}  // namespace kdbd::nn
