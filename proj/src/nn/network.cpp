#include "kdbd/network.hpp"

#include <algorithm>
#include <atomic>
#include <charconv>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "kdbd/random.hpp"
#include "kdbd/simd.hpp"

namespace kdbd::nn {

// ---------------------------------------------------------------------------
// ArchSpec

std::vector<std::size_t> ArchSpec::effective_widths() const {
  std::vector<std::size_t> out = block_widths;
  if (!out.empty()) {
    const double scaled = std::ceil(static_cast<double>(out.back()) * width_multiplier - 1e-9);
    out.back() = static_cast<std::size_t>(std::max(0.0, scaled));
  }
  return out;
}

std::size_t ArchSpec::final_height() const { return height >> block_widths.size(); }
std::size_t ArchSpec::final_width() const { return width >> block_widths.size(); }

std::size_t ArchSpec::feature_count() const {
  const auto widths = effective_widths();
  const std::size_t c = widths.empty() ? channels : widths.back();
  return c * final_height() * final_width();
}

std::size_t ArchSpec::parameter_count() const {
  std::size_t total = 0;
  for (const auto& shape : parameter_shapes(*this)) {
    std::size_t n = 1;
    for (auto e : shape) n *= e;
    total += n;
  }
  return total;
}

void ArchSpec::validate() const {
  if (channels == 0 || height == 0 || width == 0) {
    throw ConfigError("arch: input shape must be positive, got " + std::to_string(channels) + "x" +
                      std::to_string(height) + "x" + std::to_string(width));
  }
  if (block_widths.empty()) throw ConfigError("arch: at least one conv block is required");
  if (!(width_multiplier > 0.0 && width_multiplier <= 1.0)) {
    throw ConfigError("arch: width_multiplier must be in (0, 1], got " +
                      std::to_string(width_multiplier));
  }
  for (std::size_t w : effective_widths()) {
    if (w == 0) throw ConfigError("arch: every conv block needs at least one channel");
  }
  if (final_height() < 1 || final_width() < 1) {
    throw ConfigError("arch: spatial extent collapses to zero after " +
                      std::to_string(block_widths.size()) + " pooling stages");
  }
  if (classifier_width == 0) throw ConfigError("arch: classifier_width must be positive");
  if (num_classes < 2) throw ConfigError("arch: num_classes must be at least 2");
}

namespace {

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::size_t parse_size(std::string_view s, std::string_view what) {
  std::size_t v = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw ConfigError("arch: cannot parse " + std::string(what) + " from '" + std::string(s) + "'");
  }
  return v;
}

std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.push_back(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

}  // namespace

std::string ArchSpec::canonical() const {
  std::string out = "input=" + std::to_string(channels) + "x" + std::to_string(height) + "x" +
                    std::to_string(width) + ";blocks=";
  for (std::size_t i = 0; i < block_widths.size(); ++i) {
    if (i) out += ",";
    out += std::to_string(block_widths[i]);
  }
  out += ";classifier=" + std::to_string(classifier_width);
  out += ";classes=" + std::to_string(num_classes);
  out += ";last_block_multiplier=" + format_double(width_multiplier);
  return out;
}

ArchSpec ArchSpec::parse(std::string_view text) {
  ArchSpec a;
  a.block_widths.clear();
  bool seen[5] = {};
  for (auto field : split(text, ';')) {
    const auto eq = field.find('=');
    if (eq == std::string_view::npos) throw ConfigError("arch: malformed field '" + std::string(field) + "'");
    const auto key = field.substr(0, eq);
    const auto value = field.substr(eq + 1);
    if (key == "input") {
      const auto dims = split(value, 'x');
      if (dims.size() != 3) throw ConfigError("arch: input must be CxHxW");
      a.channels = parse_size(dims[0], "channels");
      a.height = parse_size(dims[1], "height");
      a.width = parse_size(dims[2], "width");
      seen[0] = true;
    } else if (key == "blocks") {
      for (auto w : split(value, ',')) a.block_widths.push_back(parse_size(w, "block width"));
      seen[1] = true;
    } else if (key == "classifier") {
      a.classifier_width = parse_size(value, "classifier width");
      seen[2] = true;
    } else if (key == "classes") {
      a.num_classes = parse_size(value, "classes");
      seen[3] = true;
    } else if (key == "last_block_multiplier") {
      double m = 0;
      auto res = std::from_chars(value.data(), value.data() + value.size(), m);
      if (res.ec != std::errc() || res.ptr != value.data() + value.size()) {
        throw ConfigError("arch: cannot parse multiplier '" + std::string(value) + "'");
      }
      a.width_multiplier = m;
      seen[4] = true;
    } else {
      throw ConfigError("arch: unknown field '" + std::string(key) + "'");
    }
  }
  for (bool s : seen) {
    if (!s) throw ConfigError("arch: descriptor '" + std::string(text) + "' is missing fields");
  }
  a.validate();
  return a;
}

std::string_view role_name(Role role) { return role == Role::teacher ? "teacher" : "student"; }

Role parse_role(std::string_view text) {
  if (text == "teacher") return Role::teacher;
  if (text == "student") return Role::student;
  throw ConfigError("unknown network role '" + std::string(text) + "'");
}

std::vector<std::string> parameter_names(const ArchSpec& arch) {
  std::vector<std::string> names;
  for (std::size_t i = 0; i < arch.block_widths.size(); ++i) {
    names.push_back("block" + std::to_string(i) + ".weight");
    names.push_back("block" + std::to_string(i) + ".bias");
  }
  for (const char* n : {"fc0.weight", "fc0.bias", "fc1.weight", "fc1.bias"}) names.emplace_back(n);
  return names;
}

std::vector<std::vector<std::size_t>> parameter_shapes(const ArchSpec& arch) {
  std::vector<std::vector<std::size_t>> shapes;
  std::size_t in = arch.channels;
  for (std::size_t w : arch.effective_widths()) {
    shapes.push_back({w, in, 3, 3});
    shapes.push_back({w});
    in = w;
  }
  shapes.push_back({arch.classifier_width, arch.feature_count()});
  shapes.push_back({arch.classifier_width});
  shapes.push_back({arch.num_classes, arch.classifier_width});
  shapes.push_back({arch.num_classes});
  return shapes;
}

std::uint64_t next_generation() {
  static std::atomic<std::uint64_t> counter{1};
  return counter.fetch_add(1, std::memory_order_relaxed);
}

template <typename T>
std::size_t NetworkParams<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors) n += t.size();
  return n;
}

template <typename T>
NetworkParams<T> zero_network(const ArchSpec& arch, Role role) {
  arch.validate();
  NetworkParams<T> p;
  p.arch = arch;
  p.role = role;
  p.names = parameter_names(arch);
  for (auto& shape : parameter_shapes(arch)) p.tensors.emplace_back(std::move(shape));
  p.touch();
  return p;
}

template <typename T>
NetworkParams<T> init_network(const ArchSpec& arch, Role role, std::uint64_t seed) {
  auto p = zero_network<T>(arch, role);
  Rng rng(seed);
  for (std::size_t i = 0; i < p.tensors.size(); i += 2) {
    auto& w = p.tensors[i];
    auto& b = p.tensors[i + 1];
    const double fan_in = static_cast<double>(w.size() / w.dim(0));
    const double wbound = std::sqrt(6.0 / fan_in);
    const double bbound = 1.0 / std::sqrt(fan_in);
    for (auto& v : w.data()) v = static_cast<T>(rng.uniform(-wbound, wbound));
    for (auto& v : b.data()) v = static_cast<T>(rng.uniform(-bbound, bbound));
  }
  p.touch();
  return p;
}

// ---------------------------------------------------------------------------
// forward / backward

void check_batch_shape(const ArchSpec& arch, std::span<const std::size_t> shape) {
  if (shape.size() != 4) {
    throw ShapeError("batch must be rank 4 [B,C,H,W], got rank " + std::to_string(shape.size()) +
                     " " + shape_to_string(shape));
  }
  const char* names[] = {"batch", "channels", "height", "width"};
  const std::size_t expected[] = {shape[0], arch.channels, arch.height, arch.width};
  for (std::size_t d = 1; d < 4; ++d) {
    if (shape[d] != expected[d]) {
      throw ShapeError("batch dimension " + std::to_string(d) + " (" + names[d] + ") is " +
                       std::to_string(shape[d]) + ", expected " + std::to_string(expected[d]));
    }
  }
}

namespace {

template <typename T>
void im2col3x3(const T* in, std::size_t channels, std::size_t h, std::size_t w, T* col) {
  const std::size_t hw = h * w;
  for (std::size_t c = 0; c < channels; ++c) {
    const T* plane = in + c * hw;
    for (std::size_t ky = 0; ky < 3; ++ky) {
      for (std::size_t kx = 0; kx < 3; ++kx) {
        T* dst = col + ((c * 3 + ky) * 3 + kx) * hw;
        for (std::size_t y = 0; y < h; ++y) {
          const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + ky) - 1;
          T* drow = dst + y * w;
          if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h)) {
            std::fill(drow, drow + w, T{0});
            continue;
          }
          const T* srow = plane + sy * w;
          for (std::size_t x = 0; x < w; ++x) {
            const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(x + kx) - 1;
            drow[x] = (sx < 0 || sx >= static_cast<std::ptrdiff_t>(w)) ? T{0} : srow[sx];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im3x3(const T* col, std::size_t channels, std::size_t h, std::size_t w, T* out) {
  const std::size_t hw = h * w;
  std::fill(out, out + channels * hw, T{0});
  for (std::size_t c = 0; c < channels; ++c) {
    T* plane = out + c * hw;
    for (std::size_t ky = 0; ky < 3; ++ky) {
      for (std::size_t kx = 0; kx < 3; ++kx) {
        const T* src = col + ((c * 3 + ky) * 3 + kx) * hw;
        for (std::size_t y = 0; y < h; ++y) {
          const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + ky) - 1;
          if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h)) continue;
          for (std::size_t x = 0; x < w; ++x) {
            const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(x + kx) - 1;
            if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(w)) continue;
            plane[sy * w + sx] += src[y * w + x];
          }
        }
      }
    }
  }
}

template <typename T>
BasicTensor<T> run_forward(const NetworkParams<T>& params, const BasicTensor<T>& batch,
                           ForwardTrace<T>* trace) {
  const ArchSpec& arch = params.arch;
  check_batch_shape(arch, batch.shape());
  const auto& K = simd::kernels<T>();
  const std::size_t B = batch.dim(0);
  const auto widths = arch.effective_widths();

  std::vector<T> current(batch.data().begin(), batch.data().end());
  std::size_t cin = arch.channels, h = arch.height, w = arch.width;
  std::vector<T> scratch_col;
  if (trace) {
    trace->generation = params.generation;
    trace->arch = arch;
    trace->batch = B;
    trace->blocks.assign(widths.size(), {});
  }

  for (std::size_t bi = 0; bi < widths.size(); ++bi) {
    const std::size_t cout = widths[bi];
    const std::size_t hw = h * w, cin9 = cin * 9;
    const std::size_t ho = h / 2, wo = w / 2;
    const T* weight = params.tensors[2 * bi].raw();
    const T* bias = params.tensors[2 * bi + 1].raw();

    std::vector<T> activated(B * cout * hw);
    std::vector<T> pooled(B * cout * ho * wo);
    std::vector<std::uint32_t> argmax(trace ? pooled.size() : 0);
    std::vector<T>* cols = trace ? &trace->blocks[bi].cols : &scratch_col;
    cols->resize(trace ? B * cin9 * hw : cin9 * hw);

    for (std::size_t b = 0; b < B; ++b) {
      T* col = cols->data() + (trace ? b * cin9 * hw : 0);
      im2col3x3(current.data() + b * cin * hw, cin, h, w, col);
      T* act = activated.data() + b * cout * hw;
      K.gemm_nn(cout, hw, cin9, weight, col, act, false);
      for (std::size_t c = 0; c < cout; ++c) {
        T* plane = act + c * hw;
        for (std::size_t i = 0; i < hw; ++i) plane[i] = std::max(plane[i] + bias[c], T{0});
        T* pout = pooled.data() + (b * cout + c) * ho * wo;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          for (std::size_t ox = 0; ox < wo; ++ox) {
            std::size_t best = (2 * oy) * w + 2 * ox;
            for (std::size_t dy = 0; dy < 2; ++dy) {
              for (std::size_t dx = 0; dx < 2; ++dx) {
                const std::size_t idx = (2 * oy + dy) * w + 2 * ox + dx;
                if (plane[idx] > plane[best]) best = idx;
              }
            }
            pout[oy * wo + ox] = plane[best];
            if (trace) argmax[(b * cout + c) * ho * wo + oy * wo + ox] = static_cast<std::uint32_t>(best);
          }
        }
      }
    }
    if (trace) {
      auto& blk = trace->blocks[bi];
      blk.in_channels = cin;
      blk.out_channels = cout;
      blk.height = h;
      blk.width = w;
      blk.activated = std::move(activated);
      blk.argmax = std::move(argmax);
    }
    current = std::move(pooled);
    cin = cout;
    h = ho;
    w = wo;
  }

  const std::size_t F = arch.feature_count();
  const std::size_t H = arch.classifier_width;
  const std::size_t C = arch.num_classes;
  std::vector<T> hidden(B * H);
  K.gemm_nt(B, H, F, current.data(), params.tensors[2 * widths.size()].raw(), hidden.data(), false);
  const T* b0 = params.tensors[2 * widths.size() + 1].raw();
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t j = 0; j < H; ++j) hidden[b * H + j] = std::max(hidden[b * H + j] + b0[j], T{0});
  }
  BasicTensor<T> logits({B, C});
  K.gemm_nt(B, C, H, hidden.data(), params.tensors[2 * widths.size() + 2].raw(), logits.raw(), false);
  const T* b1 = params.tensors[2 * widths.size() + 3].raw();
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t j = 0; j < C; ++j) logits[b * C + j] += b1[j];
  }
  if (trace) {
    trace->features = std::move(current);
    trace->hidden = std::move(hidden);
  }
  return logits;
}

}  // namespace

template <typename T>
ForwardResult<T> forward(const NetworkParams<T>& params, const BasicTensor<T>& batch) {
  ForwardResult<T> out;
  out.logits = run_forward(params, batch, &out.trace);
  return out;
}

template <typename T>
BasicTensor<T> infer(const NetworkParams<T>& params, const BasicTensor<T>& batch) {
  return run_forward<T>(params, batch, nullptr);
}

template <typename T>
Gradients<T> backward(const NetworkParams<T>& params, const ForwardTrace<T>& trace,
                      const BasicTensor<T>& upstream, bool want_input_grad) {
  if (trace.generation != params.generation || !(trace.arch == params.arch)) {
    throw std::logic_error("backward: trace does not belong to the current parameters (stale or mismatched)");
  }
  const ArchSpec& arch = params.arch;
  const std::size_t B = trace.batch;
  const std::size_t C = arch.num_classes;
  const std::size_t H = arch.classifier_width;
  const std::size_t F = arch.feature_count();
  if (upstream.shape() != std::vector<std::size_t>{B, C}) {
    throw ShapeError("backward: upstream gradient shape " + shape_to_string(upstream.shape()) +
                     " does not match logits [" + std::to_string(B) + "," + std::to_string(C) + "]");
  }
  const auto& K = simd::kernels<T>();
  const std::size_t nb = trace.blocks.size();

  Gradients<T> g;
  for (const auto& t : params.tensors) g.params.emplace_back(t.shape());

  // fc1
  const T* dlogits = upstream.raw();
  K.gemm_tn(C, H, B, dlogits, trace.hidden.data(), g.params[2 * nb + 2].raw(), false);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t j = 0; j < C; ++j) g.params[2 * nb + 3][j] += dlogits[b * C + j];
  }
  std::vector<T> dhidden(B * H);
  K.gemm_nn(B, H, C, dlogits, params.tensors[2 * nb + 2].raw(), dhidden.data(), false);
  for (std::size_t i = 0; i < dhidden.size(); ++i) {
    if (!(trace.hidden[i] > T{0})) dhidden[i] = T{0};
  }
  // fc0
  K.gemm_tn(H, F, B, dhidden.data(), trace.features.data(), g.params[2 * nb].raw(), false);
  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t j = 0; j < H; ++j) g.params[2 * nb + 1][j] += dhidden[b * H + j];
  }
  std::vector<T> dcurrent(B * F);
  K.gemm_nn(B, F, H, dhidden.data(), params.tensors[2 * nb].raw(), dcurrent.data(), false);

  for (std::size_t bi = nb; bi-- > 0;) {
    const auto& blk = trace.blocks[bi];
    const std::size_t cin = blk.in_channels, cout = blk.out_channels;
    const std::size_t h = blk.height, w = blk.width, hw = h * w, cin9 = cin * 9;
    const std::size_t pooled_plane = (h / 2) * (w / 2);
    const bool need_dinput = bi > 0 || want_input_grad;
    std::vector<T> dinput(need_dinput ? B * cin * hw : 0);
    std::vector<T> dconv(cout * hw);
    std::vector<T> dcol(need_dinput ? cin9 * hw : 0);
    T* dweight = g.params[2 * bi].raw();
    T* dbias = g.params[2 * bi + 1].raw();
    const T* weight = params.tensors[2 * bi].raw();

    for (std::size_t b = 0; b < B; ++b) {
      std::fill(dconv.begin(), dconv.end(), T{0});
      const T* act = blk.activated.data() + b * cout * hw;
      for (std::size_t c = 0; c < cout; ++c) {
        const std::size_t base = (b * cout + c) * pooled_plane;
        T* dplane = dconv.data() + c * hw;
        for (std::size_t i = 0; i < pooled_plane; ++i) {
          const std::uint32_t idx = blk.argmax[base + i];
          dplane[idx] += dcurrent[base + i];
        }
        const T* aplane = act + c * hw;
        T bias_acc = 0;
        for (std::size_t i = 0; i < hw; ++i) {
          if (!(aplane[i] > T{0})) dplane[i] = T{0};
          bias_acc += dplane[i];
        }
        dbias[c] += bias_acc;
      }
      const T* col = blk.cols.data() + b * cin9 * hw;
      K.gemm_nt(cout, cin9, hw, dconv.data(), col, dweight, true);
      if (need_dinput) {
        K.gemm_tn(cin9, hw, cout, weight, dconv.data(), dcol.data(), false);
        col2im3x3(dcol.data(), cin, h, w, dinput.data() + b * cin * hw);
      }
    }
    dcurrent = std::move(dinput);
  }
  if (want_input_grad) {
    g.input = BasicTensor<T>({B, arch.channels, arch.height, arch.width}, std::move(dcurrent));
  }
  return g;
}

template struct NetworkParams<float>;
template struct NetworkParams<double>;
template NetworkParams<float> init_network<float>(const ArchSpec&, Role, std::uint64_t);
template NetworkParams<double> init_network<double>(const ArchSpec&, Role, std::uint64_t);
template NetworkParams<float> zero_network<float>(const ArchSpec&, Role);
template NetworkParams<double> zero_network<double>(const ArchSpec&, Role);
template ForwardResult<float> forward<float>(const NetworkParams<float>&, const BasicTensor<float>&);
template ForwardResult<double> forward<double>(const NetworkParams<double>&, const BasicTensor<double>&);
template BasicTensor<float> infer<float>(const NetworkParams<float>&, const BasicTensor<float>&);
template BasicTensor<double> infer<double>(const NetworkParams<double>&, const BasicTensor<double>&);
template Gradients<float> backward<float>(const NetworkParams<float>&, const ForwardTrace<float>&,
                                          const BasicTensor<float>&, bool);
template Gradients<double> backward<double>(const NetworkParams<double>&, const ForwardTrace<double>&,
                                            const BasicTensor<double>&, bool);

}  // namespace kdbd::nn
