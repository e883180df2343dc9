#pragma once
// Targeted white-box attacks against a frozen classifier.
//
// All L-inf attacks descend the cross-entropy of the target class, keep the
// iterate inside the eps-ball around the original image and clip to [0, 1].

#include <cstddef>
#include <cstdint>
#include <limits>
#include <string_view>
#include <vector>

#include "kdbd/data.hpp"
#include "kdbd/network.hpp"

namespace kdbd::attacks {

using Model = nn::NetworkParams<float>;

enum class Method { fgsm, pgd, nifgsm, cw };

std::string_view method_name(Method m);
Method parse_method(std::string_view text);

struct AttackConfig {
  Method method = Method::pgd;
  double eps = 0.1;     // L-inf budget in pixel units
  double alpha = 0.025; // step size
  std::size_t steps = 20;
  bool rand_init = true;
  double momentum = 1.0;  // NI-FGSM decay
  /// Stop once p_target - max_{j != target} p_j >= margin_floor.
  bool early_exit = true;
  double margin_floor = 0.2;
  std::size_t max_retries = 3;
  /// Added to margin_floor on each re-attack.
  double retry_margin_step = 0.0;
  // Carlini-Wagner L2
  double cw_c = 1.0;
  double cw_kappa = 0.0;
  double cw_lr = 0.01;
  std::size_t cw_search_steps = 0;  // binary search rounds over c; 0 = fixed c

  void validate() const;
};

struct Prediction {
  std::size_t label = 0;
  std::vector<double> probabilities;
};

/// argmax of softmax(logits); ties go to the lowest class index.
Prediction teacher_predict(const Model& teacher, const data::Image& image);
std::vector<Prediction> teacher_predict_batch(const Model& teacher, std::span<const data::Image> images);

struct AttackResult {
  data::Image adversarial;
  bool success = false;  // teacher predicts the target on `adversarial`
  double target_probability = 0.0;
  std::size_t iterations = 0;
  /// Advertised bound on ||adversarial - original||_inf (infinity for CW).
  double linf_bound = std::numeric_limits<double>::infinity();
};

AttackResult fgsm_targeted(const Model& teacher, const data::Image& image, std::size_t target, double eps);

/// `start` (optional) replaces the original as the initial iterate; the ball
/// is still centred on `image`.
AttackResult pgd_targeted(const Model& teacher, const data::Image& image, std::size_t target,
                          const AttackConfig& config, std::uint64_t seed,
                          const data::Image* start = nullptr);

AttackResult nifgsm_targeted(const Model& teacher, const data::Image& image, std::size_t target,
                             const AttackConfig& config, std::uint64_t seed,
                             const data::Image* start = nullptr);

/// tanh-space L2 attack: minimizes ||delta||_2^2 + c * max(max_{j!=t} z_j - z_t, -kappa)
/// with Adam. Returns the smallest successful perturbation found.
AttackResult cw_l2_targeted(const Model& teacher, const data::Image& image, std::size_t target,
                            const AttackConfig& config);

/// Dispatches on config.method.
AttackResult run_attack(const Model& teacher, const data::Image& image, std::size_t target,
                        const AttackConfig& config, std::uint64_t seed,
                        const data::Image* start = nullptr);

/// p_target - max_{j != target} p_j
double target_margin(const std::vector<double>& probabilities, std::size_t target);

double linf_distance(const data::Image& a, const data::Image& b);
double l2_distance(const data::Image& a, const data::Image& b);

}  // namespace kdbd::attacks
