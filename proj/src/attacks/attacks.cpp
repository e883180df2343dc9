#include "kdbd/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "kdbd/error.hpp"
#include "kdbd/loss.hpp"
#include "kdbd/random.hpp"

namespace kdbd::attacks {

std::string_view method_name(Method m) {
  switch (m) {
    case Method::fgsm:
      return "fgsm";
    case Method::pgd:
      return "pgd";
    case Method::nifgsm:
      return "nifgsm";
    case Method::cw:
      return "cw";
  }
  return "unknown";
}

Method parse_method(std::string_view text) {
  if (text == "fgsm") return Method::fgsm;
  if (text == "pgd") return Method::pgd;
  if (text == "nifgsm") return Method::nifgsm;
  if (text == "cw") return Method::cw;
  throw ConfigError("unknown attack method '" + std::string(text) + "'");
}

void AttackConfig::validate() const {
  if (method == Method::cw) {
    if (!(cw_kappa >= 0.0)) throw ConfigError("attack: CW confidence kappa must be >= 0");
    if (!(cw_c > 0.0)) throw ConfigError("attack: CW constant c must be > 0");
    if (!(cw_lr > 0.0)) throw ConfigError("attack: CW learning rate must be > 0");
    if (steps < 1) throw ConfigError("attack: CW needs steps >= 1");
    return;
  }
  if (!(eps > 0.0)) throw ConfigError("attack: eps must be > 0, got " + std::to_string(eps));
  if (method != Method::fgsm) {
    if (!(alpha > 0.0 && alpha <= eps)) throw ConfigError("attack: need 0 < alpha <= eps");
    if (steps < 1) throw ConfigError("attack: iterative methods need steps >= 1");
  }
  if (method == Method::nifgsm && !(momentum >= 0.0 && momentum <= 1.0)) {
    throw ConfigError("attack: momentum decay must be in [0, 1]");
  }
}

double target_margin(const std::vector<double>& probabilities, std::size_t target) {
  double runner_up = 0.0;
  for (std::size_t j = 0; j < probabilities.size(); ++j) {
    if (j != target) runner_up = std::max(runner_up, probabilities[j]);
  }
  return probabilities.at(target) - runner_up;
}

double linf_distance(const data::Image& a, const data::Image& b) {
  double d = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) d = std::max(d, std::abs(double(a.pixels[i]) - b.pixels[i]));
  return d;
}

double l2_distance(const data::Image& a, const data::Image& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = double(a.pixels[i]) - b.pixels[i];
    s += d * d;
  }
  return std::sqrt(s);
}

namespace {

Prediction to_prediction(std::span<const float> logits) {
  Prediction p;
  p.probabilities.resize(logits.size());
  const float mx = *std::max_element(logits.begin(), logits.end());
  double sum = 0.0;
  for (std::size_t k = 0; k < logits.size(); ++k) {
    p.probabilities[k] = std::exp(static_cast<double>(logits[k]) - mx);
    sum += p.probabilities[k];
  }
  for (double& v : p.probabilities) v /= sum;
  p.label = static_cast<std::size_t>(std::max_element(logits.begin(), logits.end()) - logits.begin());
  return p;
}

Tensor single(const data::Image& image) {
  return Tensor({1, image.channels, image.height, image.width}, image.pixels);
}

void check_target(const Model& teacher, std::size_t target) {
  if (target >= teacher.arch.num_classes) {
    throw ConfigError("attack: target class " + std::to_string(target) + " is outside the model's " +
                      std::to_string(teacher.arch.num_classes) + " classes");
  }
}

// Gradient of CE(f(x), target) with respect to x.
std::vector<float> target_ce_input_grad(const Model& teacher, const data::Image& x, std::size_t target) {
  auto fw = nn::forward(teacher, single(x));
  const std::size_t labels[] = {target};
  auto loss = nn::cross_entropy_loss(fw.logits, labels);
  auto g = nn::backward(teacher, fw.trace, loss.grad, true);
  auto span = g.input->data();
  return {span.begin(), span.end()};
}

float signum(float v) { return v > 0.0f ? 1.0f : (v < 0.0f ? -1.0f : 0.0f); }

void project(data::Image& x, const data::Image& origin, double eps) {
  const float e = static_cast<float>(eps);
  for (std::size_t i = 0; i < x.size(); ++i) {
    const float lo = std::max(0.0f, origin.pixels[i] - e);
    const float hi = std::min(1.0f, origin.pixels[i] + e);
    x.pixels[i] = std::clamp(x.pixels[i], lo, hi);
  }
}

AttackResult finish(const Model& teacher, data::Image adv, std::size_t target, std::size_t iters,
                    double bound) {
  const Prediction p = teacher_predict(teacher, adv);
  AttackResult r;
  r.adversarial = std::move(adv);
  r.success = p.label == target;
  r.target_probability = p.probabilities[target];
  r.iterations = iters;
  r.linf_bound = bound;
  return r;
}

bool should_stop(const Model& teacher, const data::Image& x, std::size_t target, const AttackConfig& cfg) {
  if (!cfg.early_exit) return false;
  const Prediction p = teacher_predict(teacher, x);
  return p.label == target && target_margin(p.probabilities, target) >= cfg.margin_floor;
}

data::Image initial_iterate(const data::Image& image, const data::Image* start, const AttackConfig& cfg,
                            std::uint64_t seed) {
  data::Image x = start ? *start : image;
  if (cfg.rand_init) {
    Rng rng(seed);
    for (auto& v : x.pixels) v += static_cast<float>(rng.uniform(-cfg.eps, cfg.eps));
  }
  project(x, image, cfg.eps);
  return x;
}

}  // namespace

Prediction teacher_predict(const Model& teacher, const data::Image& image) {
  const Tensor logits = nn::infer(teacher, single(image));
  return to_prediction(logits.row(0));
}

std::vector<Prediction> teacher_predict_batch(const Model& teacher, std::span<const data::Image> images) {
  std::vector<Prediction> out;
  out.reserve(images.size());
  constexpr std::size_t kChunk = 128;
  for (std::size_t start = 0; start < images.size(); start += kChunk) {
    const auto chunk = images.subspan(start, std::min(kChunk, images.size() - start));
    const Tensor logits = nn::infer(teacher, data::stack_images(chunk));
    for (std::size_t i = 0; i < chunk.size(); ++i) out.push_back(to_prediction(logits.row(i)));
  }
  return out;
}

AttackResult fgsm_targeted(const Model& teacher, const data::Image& image, std::size_t target, double eps) {
  check_target(teacher, target);
  if (!(eps > 0.0)) throw ConfigError("fgsm: eps must be > 0");
  const auto grad = target_ce_input_grad(teacher, image, target);
  data::Image adv = image;
  const float e = static_cast<float>(eps);
  for (std::size_t i = 0; i < adv.size(); ++i) adv.pixels[i] -= e * signum(grad[i]);
  project(adv, image, eps);
  return finish(teacher, std::move(adv), target, 1, eps);
}

AttackResult pgd_targeted(const Model& teacher, const data::Image& image, std::size_t target,
                          const AttackConfig& config, std::uint64_t seed, const data::Image* start) {
  check_target(teacher, target);
  AttackConfig cfg = config;
  cfg.method = Method::pgd;
  cfg.validate();
  data::Image x = initial_iterate(image, start, cfg, seed);
  const float a = static_cast<float>(cfg.alpha);
  std::size_t it = 0;
  while (it < cfg.steps) {
    const auto grad = target_ce_input_grad(teacher, x, target);
    for (std::size_t i = 0; i < x.size(); ++i) x.pixels[i] -= a * signum(grad[i]);
    project(x, image, cfg.eps);
    ++it;
    if (should_stop(teacher, x, target, cfg)) break;
  }
  return finish(teacher, std::move(x), target, it, cfg.eps);
}

AttackResult nifgsm_targeted(const Model& teacher, const data::Image& image, std::size_t target,
                             const AttackConfig& config, std::uint64_t seed, const data::Image* start) {
  check_target(teacher, target);
  AttackConfig cfg = config;
  cfg.method = Method::nifgsm;
  cfg.validate();
  data::Image x = initial_iterate(image, start, cfg, seed);
  const float a = static_cast<float>(cfg.alpha);
  const float mu = static_cast<float>(cfg.momentum);
  std::vector<float> velocity(x.size(), 0.0f);
  std::size_t it = 0;
  while (it < cfg.steps) {
    // Nesterov look-ahead along the accumulated (descent) direction.
    data::Image ahead = x;
    for (std::size_t i = 0; i < x.size(); ++i) ahead.pixels[i] -= a * mu * velocity[i];
    const auto grad = target_ce_input_grad(teacher, ahead, target);
    double l1 = 0.0;
    for (float g : grad) l1 += std::abs(g);
    const float inv = l1 > 0.0 ? static_cast<float>(1.0 / l1) : 0.0f;
    for (std::size_t i = 0; i < x.size(); ++i) {
      velocity[i] = mu * velocity[i] + grad[i] * inv;
      x.pixels[i] -= a * signum(velocity[i]);
    }
    project(x, image, cfg.eps);
    ++it;
    if (should_stop(teacher, x, target, cfg)) break;
  }
  return finish(teacher, std::move(x), target, it, cfg.eps);
}

AttackResult cw_l2_targeted(const Model& teacher, const data::Image& image, std::size_t target,
                            const AttackConfig& config) {
  check_target(teacher, target);
  AttackConfig cfg = config;
  cfg.method = Method::cw;
  cfg.validate();
  const std::size_t n = image.size();
  const double kappa = cfg.cw_kappa;
  constexpr double kShrink = 1.0 - 1e-6;

  std::vector<double> w0(n);
  for (std::size_t i = 0; i < n; ++i) w0[i] = std::atanh((2.0 * image.pixels[i] - 1.0) * kShrink);

  data::Image best = image;
  double best_l2 = INFINITY;
  bool found = false;
  std::size_t total_iters = 0;

  double c = cfg.cw_c, lo = 0.0, hi = INFINITY;
  const std::size_t rounds = std::max<std::size_t>(1, cfg.cw_search_steps);
  for (std::size_t round = 0; round < rounds; ++round) {
    std::vector<double> w = w0, m(n, 0.0), v(n, 0.0);
    bool round_success = false;
    for (std::size_t step = 0; step <= cfg.steps; ++step) {
      data::Image adv = image;
      for (std::size_t i = 0; i < n; ++i) adv.pixels[i] = static_cast<float>(0.5 * (std::tanh(w[i]) + 1.0));
      auto fw = nn::forward(teacher, single(adv));
      const auto z = fw.logits.row(0);
      std::size_t other = target == 0 ? 1 : 0;
      for (std::size_t j = 0; j < z.size(); ++j) {
        if (j != target && z[j] > z[other]) other = j;
      }
      const double gap = double(z[other]) - double(z[target]);
      const std::size_t pred = static_cast<std::size_t>(std::max_element(z.begin(), z.end()) - z.begin());
      if (pred == target && gap <= -kappa) {
        round_success = true;
        const double l2 = l2_distance(adv, image);
        if (l2 < best_l2) {
          best_l2 = l2;
          best = adv;
          found = true;
        }
      }
      if (step == cfg.steps) break;
      ++total_iters;
      // d/dadv of ||adv - x||^2 + c * max(gap, -kappa)
      Tensor upstream({1, z.size()});
      if (gap > -kappa) {
        upstream[other] = static_cast<float>(c);
        upstream[target] = static_cast<float>(-c);
      }
      auto g = nn::backward(teacher, fw.trace, upstream, true);
      const auto gin = g.input->data();
      const double b1 = 0.9, b2 = 0.999;
      const double t = static_cast<double>(step + 1);
      for (std::size_t i = 0; i < n; ++i) {
        const double th = std::tanh(w[i]);
        const double dadv = 2.0 * (double(adv.pixels[i]) - image.pixels[i]) + gin[i];
        const double gw = dadv * 0.5 * (1.0 - th * th);
        m[i] = b1 * m[i] + (1 - b1) * gw;
        v[i] = b2 * v[i] + (1 - b2) * gw * gw;
        const double mh = m[i] / (1 - std::pow(b1, t));
        const double vh = v[i] / (1 - std::pow(b2, t));
        w[i] -= cfg.cw_lr * mh / (std::sqrt(vh) + 1e-8);
      }
    }
    if (round_success) {
      hi = std::min(hi, c);
      c = 0.5 * (lo + hi);
    } else {
      lo = std::max(lo, c);
      c = std::isinf(hi) ? c * 10.0 : 0.5 * (lo + hi);
    }
  }
  data::Image out = found ? best : image;
  if (!found) {
    for (std::size_t i = 0; i < n; ++i) out.pixels[i] = static_cast<float>(0.5 * (std::tanh(w0[i]) + 1.0));
  }
  return finish(teacher, std::move(out), target, total_iters, INFINITY);
}

AttackResult run_attack(const Model& teacher, const data::Image& image, std::size_t target,
                        const AttackConfig& config, std::uint64_t seed, const data::Image* start) {
  switch (config.method) {
    case Method::fgsm: {
      config.validate();
      return fgsm_targeted(teacher, image, target, config.eps);
    }
    case Method::pgd:
      return pgd_targeted(teacher, image, target, config, seed, start);
    case Method::nifgsm:
      return nifgsm_targeted(teacher, image, target, config, seed, start);
    case Method::cw:
      return cw_l2_targeted(teacher, image, target, config);
  }
  throw ConfigError("attack: unknown method");
}

}  // namespace kdbd::attacks
