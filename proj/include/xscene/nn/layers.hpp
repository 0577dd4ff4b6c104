#pragma once

// The fixed operator set of the auto-encoders: same-padded convolution
// (stride 1 or 2), fully connected, 2x nearest-neighbor upsampling, ReLU and
// reshape. Each layer caches what its backward pass needs; backward
// accumulates parameter gradients and returns the gradient w.r.t. its input.
// Activations are NHWC.

#include <algorithm>
#include <array>
#include <cmath>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include "xscene/common/error.hpp"
#include "xscene/nn/tensor.hpp"

namespace xscene::nn {


struct Parameter {
  std::string name;
  Tensor value;

  Parameter() = default;
  Parameter(std::string n, Shape shape) : name(std::move(n)), value(std::move(shape)) { value.ensure_grad(); }
};

inline void init_fan_in_uniform(Parameter& w, std::size_t fan_in, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> u(-limit, limit);
  for (auto& v : w.value.data()) v = u(rng);
}

[[noreturn]] inline void backward_without_forward(const char* layer) {
  fail(ErrorKind::usage, std::string(layer) + ": backward called without a recorded forward pass");
}

namespace detail {

// Row-run kernels shared by the convolutions: `count` pixel rows of a small
// [in, out] matrix product, with arbitrary row strides. Channel counts known
// at compile time let the inner loops unroll; 0 means "use the runtime size".

template <std::size_t In, std::size_t Out>
void run_forward(const double* x, std::size_t xs, const double* w, double* y, std::size_t ys, std::size_t count,
                 std::size_t in_rt, std::size_t out_rt) {
  const std::size_t in = In ? In : in_rt, out = Out ? Out : out_rt;
  for (std::size_t r = 0; r < count; ++r) {
    const double* xr = x + r * xs;
    double* yr = y + r * ys;
    if constexpr (Out > 0) {
      double acc[Out];
      for (std::size_t o = 0; o < Out; ++o) acc[o] = yr[o];
      for (std::size_t c = 0; c < in; ++c)
        for (std::size_t o = 0; o < Out; ++o) acc[o] += xr[c] * w[c * Out + o];
      for (std::size_t o = 0; o < Out; ++o) yr[o] = acc[o];
    } else {
      for (std::size_t c = 0; c < in; ++c)
        for (std::size_t o = 0; o < out; ++o) yr[o] += xr[c] * w[c * out + o];
    }
  }
}

/// dw[in, out] += sum over rows of x_r^T g_r
template <std::size_t In, std::size_t Out>
void run_grad_weight(const double* x, std::size_t xs, const double* g, std::size_t gs, double* dw, std::size_t count,
                     std::size_t in_rt, std::size_t out_rt) {
  const std::size_t in = In ? In : in_rt, out = Out ? Out : out_rt;
  if constexpr (In > 0 && Out > 0) {
    double acc[In * Out] = {};
    for (std::size_t r = 0; r < count; ++r) {
      const double* xr = x + r * xs;
      const double* gr = g + r * gs;
      for (std::size_t c = 0; c < In; ++c)
        for (std::size_t o = 0; o < Out; ++o) acc[c * Out + o] += xr[c] * gr[o];
    }
    for (std::size_t i = 0; i < In * Out; ++i) dw[i] += acc[i];
  } else {
    for (std::size_t r = 0; r < count; ++r)
      for (std::size_t c = 0; c < in; ++c)
        for (std::size_t o = 0; o < out; ++o) dw[c * out + o] += x[r * xs + c] * g[r * gs + o];
  }
}

/// dx_r += g_r w^T
template <std::size_t In, std::size_t Out>
void run_grad_input(const double* g, std::size_t gs, const double* w, double* dx, std::size_t dxs, std::size_t count,
                    std::size_t in_rt, std::size_t out_rt) {
  const std::size_t in = In ? In : in_rt, out = Out ? Out : out_rt;
  for (std::size_t r = 0; r < count; ++r) {
    const double* gr = g + r * gs;
    double* dr = dx + r * dxs;
    for (std::size_t c = 0; c < in; ++c) {
      double acc = 0.0;
      for (std::size_t o = 0; o < out; ++o) acc += w[c * out + o] * gr[o];
      dr[c] += acc;
    }
  }
}

struct RunKernels {
  void (*forward)(const double*, std::size_t, const double*, double*, std::size_t, std::size_t, std::size_t,
                  std::size_t);
  void (*grad_weight)(const double*, std::size_t, const double*, std::size_t, double*, std::size_t, std::size_t,
                      std::size_t);
  void (*grad_input)(const double*, std::size_t, const double*, double*, std::size_t, std::size_t, std::size_t,
                     std::size_t);
};

template <std::size_t In, std::size_t Out>
constexpr RunKernels kernels_for() {
  return {&run_forward<In, Out>, &run_grad_weight<In, Out>, &run_grad_input<In, Out>};
}

inline RunKernels select_kernels(std::size_t in, std::size_t out) {
  if (in == 4 && out == 8) return kernels_for<4, 8>();
  if (in == 8 && out == 8) return kernels_for<8, 8>();
  if (in == 8 && out == 4) return kernels_for<8, 4>();
  if (in == 4 && out == 4) return kernels_for<4, 4>();
  return kernels_for<0, 0>();
}

}  // namespace detail

class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel, std::size_t stride)
      : weight("conv.weight", {kernel, kernel, in_channels, out_channels}), bias("conv.bias", {out_channels}),
        in_(in_channels), out_(out_channels), kernel_(kernel), stride_(stride) {
    require(kernel % 2 == 1, ErrorKind::config, "conv kernel size must be odd for same padding");
    require(stride == 1 || stride == 2, ErrorKind::config, "conv stride must be 1 or 2");
  }

  std::size_t in_channels() const { return in_; }
  std::size_t out_channels() const { return out_; }
  std::size_t kernel() const { return kernel_; }
  std::size_t stride() const { return stride_; }

  void init(std::mt19937_64& rng) { init_fan_in_uniform(weight, kernel_ * kernel_ * in_, rng); }

  Shape output_shape(const Shape& in) const {
    check_input(in);
    return {in[0], in[1] / stride_, in[2] / stride_, out_};
  }

  Tensor forward(const Tensor& x) {
    const Shape out_shape = output_shape(x.shape());
    input_ = x;
    Tensor y(out_shape);
    const auto k = detail::select_kernels(in_, out_);
    const double* w = weight.value.raw();
    for_each_run(out_shape, [&](std::size_t oi, std::size_t ii, std::size_t count, std::size_t tap) {
      k.forward(input_.raw() + ii * in_, stride_ * in_, w + tap * in_ * out_, y.raw() + oi * out_, out_, count, in_,
                out_);
    });
    const double* b = bias.value.raw();
    const std::size_t pixels = y.size() / out_;
    for (std::size_t i = 0; i < pixels; ++i)
      for (std::size_t o = 0; o < out_; ++o) y[i * out_ + o] += b[o];
    recorded_ = true;
    return y;
  }

  Tensor backward(const Tensor& grad_out, bool need_input_grad = true) {
    if (!recorded_) backward_without_forward("conv2d");
    recorded_ = false;
    const Shape out_shape = output_shape(input_.shape());
    require_shape(grad_out, out_shape, "conv2d backward");
    double* db = bias.value.grad().data();
    const std::size_t pixels = grad_out.size() / out_;
    for (std::size_t i = 0; i < pixels; ++i)
      for (std::size_t o = 0; o < out_; ++o) db[o] += grad_out[i * out_ + o];
    Tensor dx;
    if (need_input_grad) dx = Tensor(input_.shape());
    const auto k = detail::select_kernels(in_, out_);
    const double* w = weight.value.raw();
    double* dw = weight.value.grad().data();
    for_each_run(out_shape, [&](std::size_t oi, std::size_t ii, std::size_t count, std::size_t tap) {
      const double* g = grad_out.raw() + oi * out_;
      k.grad_weight(input_.raw() + ii * in_, stride_ * in_, g, out_, dw + tap * in_ * out_, count, in_, out_);
      if (need_input_grad)
        k.grad_input(g, out_, w + tap * in_ * out_, dx.raw() + ii * in_, stride_ * in_, count, in_, out_);
    });
    return dx;
  }

  void clear_state() {
    input_ = {};
    recorded_ = false;
  }

  Parameter weight;
  Parameter bias;

 private:
  void check_input(const Shape& in) const {
    if (in.size() != 4 || in[3] != in_)
      fail(ErrorKind::input, "conv2d: expected NHWC input with " + std::to_string(in_) + " channels, got " +
                                 shape_string(in));
    if (stride_ == 2 && (in[1] % 2 != 0 || in[2] % 2 != 0))
      fail(ErrorKind::input, "conv2d stride 2: spatial dims must be even, got " + shape_string(in));
  }

  /// Calls visit(first output pixel, first input pixel, run length, kernel tap)
  /// for every maximal run of one output row whose tap lands inside the input
  /// (zero padding of kernel/2 on each side).
  template <class Visit>
  void for_each_run(const Shape& out_shape, Visit&& visit) const {
    const std::size_t n = out_shape[0], ho = out_shape[1], wo = out_shape[2];
    const auto h = static_cast<std::ptrdiff_t>(input_.dim(1)), w = static_cast<std::ptrdiff_t>(input_.dim(2));
    const auto pad = static_cast<std::ptrdiff_t>(kernel_ / 2), s = static_cast<std::ptrdiff_t>(stride_);
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t oy = 0; oy < ho; ++oy)
        for (std::size_t ky = 0; ky < kernel_; ++ky) {
          const std::ptrdiff_t iy = static_cast<std::ptrdiff_t>(oy) * s + static_cast<std::ptrdiff_t>(ky) - pad;
          if (iy < 0 || iy >= h) continue;
          for (std::size_t kx = 0; kx < kernel_; ++kx) {
            const std::ptrdiff_t shift = static_cast<std::ptrdiff_t>(kx) - pad;  // ix = ox * s + shift
            std::ptrdiff_t ox0 = 0, ox1 = static_cast<std::ptrdiff_t>(wo);
            while (ox0 < ox1 && ox0 * s + shift < 0) ++ox0;
            while (ox1 > ox0 && (ox1 - 1) * s + shift >= w) --ox1;
            if (ox0 >= ox1) continue;
            const std::size_t out_index = (b * ho + oy) * wo + static_cast<std::size_t>(ox0);
            const std::size_t in_index = (b * static_cast<std::size_t>(h) + static_cast<std::size_t>(iy)) *
                                             static_cast<std::size_t>(w) +
                                         static_cast<std::size_t>(ox0 * s + shift);
            visit(out_index, in_index, static_cast<std::size_t>(ox1 - ox0), ky * kernel_ + kx);
          }
        }
  }

  std::size_t in_ = 0, out_ = 0, kernel_ = 3, stride_ = 1;
  Tensor input_;
  bool recorded_ = false;
};

/// Fully connected layer on [N, in] inputs.
class Dense {
 public:
  Dense() = default;
  Dense(std::size_t in, std::size_t out) : weight("fc.weight", {in, out}), bias("fc.bias", {out}), in_(in), out_(out) {}

  std::size_t in_features() const { return in_; }
  std::size_t out_features() const { return out_; }
  void init(std::mt19937_64& rng) { init_fan_in_uniform(weight, in_, rng); }

  Shape output_shape(const Shape& in) const {
    if (in.size() != 2 || in[1] != in_)
      fail(ErrorKind::input, "fc: expected [N," + std::to_string(in_) + "] input, got " + shape_string(in));
    return {in[0], out_};
  }

  Tensor forward(const Tensor& x) {
    const Shape out_shape = output_shape(x.shape());
    input_ = x;
    Tensor y(out_shape);
    const double* w = weight.value.raw();
    for (std::size_t n = 0; n < out_shape[0]; ++n) {
      double* yr = y.raw() + n * out_;
      const double* xr = x.raw() + n * in_;
      std::copy(bias.value.raw(), bias.value.raw() + out_, yr);
      for (std::size_t i = 0; i < in_; ++i) {
        const double xi = xr[i];
        const double* wr = w + i * out_;
        for (std::size_t o = 0; o < out_; ++o) yr[o] += xi * wr[o];
      }
    }
    recorded_ = true;
    return y;
  }

  Tensor backward(const Tensor& grad_out, bool need_input_grad = true) {
    if (!recorded_) backward_without_forward("fc");
    recorded_ = false;
    const std::size_t n = input_.dim(0);
    require_shape(grad_out, {n, out_}, "fc backward");
    // Plain loops with a fixed summation order: results must not depend on
    // buffer alignment.
    const double* g = grad_out.raw();
    const double* x = input_.raw();
    auto dw = weight.value.grad();
    auto db = bias.value.grad();
    for (std::size_t s = 0; s < n; ++s) {
      const double* gr = g + s * out_;
      for (std::size_t i = 0; i < in_; ++i) {
        const double xi = x[s * in_ + i];
        double* dwr = dw.data() + i * out_;
        for (std::size_t o = 0; o < out_; ++o) dwr[o] += xi * gr[o];
      }
      for (std::size_t o = 0; o < out_; ++o) db[o] += gr[o];
    }
    if (!need_input_grad) return {};
    Tensor dx({n, in_});
    const double* w = weight.value.raw();
    for (std::size_t s = 0; s < n; ++s)
      for (std::size_t i = 0; i < in_; ++i) {
        const double* wr = w + i * out_;
        const double* gr = g + s * out_;
        double acc = 0.0;
        for (std::size_t o = 0; o < out_; ++o) acc += gr[o] * wr[o];
        dx[s * in_ + i] = acc;
      }
    return dx;
  }

  void clear_state() {
    input_ = {};
    recorded_ = false;
  }

  Parameter weight;
  Parameter bias;

 private:
  std::size_t in_ = 0, out_ = 0;
  Tensor input_;
  bool recorded_ = false;
};

/// Nearest-neighbor 2x upsampling: each cell becomes a 2x2 block.
class Upsample2x {
 public:
  Shape output_shape(const Shape& in) const {
    if (in.size() != 4) fail(ErrorKind::input, "upsample2x: expected NHWC input, got " + shape_string(in));
    return {in[0], 2 * in[1], 2 * in[2], in[3]};
  }

  Tensor forward(const Tensor& x) {
    in_shape_ = x.shape();
    const Shape os = output_shape(in_shape_);
    Tensor y(os);
    const std::size_t n = os[0], h = in_shape_[1], w = in_shape_[2], c = os[3];
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t i = 0; i < 2 * h; ++i)
        for (std::size_t j = 0; j < 2 * w; ++j) {
          const double* s = x.raw() + ((b * h + i / 2) * w + j / 2) * c;
          std::copy(s, s + c, y.raw() + ((b * 2 * h + i) * 2 * w + j) * c);
        }
    recorded_ = true;
    return y;
  }

  Tensor backward(const Tensor& grad_out, bool = true) {
    if (!recorded_) backward_without_forward("upsample2x");
    recorded_ = false;
    require_shape(grad_out, output_shape(in_shape_), "upsample2x backward");
    Tensor dx(in_shape_);
    const std::size_t n = in_shape_[0], h = in_shape_[1], w = in_shape_[2], c = in_shape_[3];
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t i = 0; i < 2 * h; ++i)
        for (std::size_t j = 0; j < 2 * w; ++j) {
          const double* g = grad_out.raw() + ((b * 2 * h + i) * 2 * w + j) * c;
          double* d = dx.raw() + ((b * h + i / 2) * w + j / 2) * c;
          for (std::size_t k = 0; k < c; ++k) d[k] += g[k];
        }
    return dx;
  }

 private:
  Shape in_shape_;
  bool recorded_ = false;
};

/// Nearest-neighbor 2x upsampling followed by a same-padded stride-1
/// convolution, evaluated without materializing the upsampled tensor: each of
/// the four output phases is a small convolution of the low-resolution input
/// with kernel taps that land on the same source pixel summed together.
class UpsampleConv2d {
 public:
  UpsampleConv2d() = default;
  UpsampleConv2d(std::size_t in_channels, std::size_t out_channels, std::size_t kernel)
      : weight("upconv.weight", {kernel, kernel, in_channels, out_channels}), bias("upconv.bias", {out_channels}),
        in_(in_channels), out_(out_channels), kernel_(kernel) {
    require(kernel % 2 == 1, ErrorKind::config, "conv kernel size must be odd for same padding");
  }

  std::size_t in_channels() const { return in_; }
  std::size_t out_channels() const { return out_; }
  std::size_t kernel() const { return kernel_; }

  void init(std::mt19937_64& rng) { init_fan_in_uniform(weight, kernel_ * kernel_ * in_, rng); }

  Shape output_shape(const Shape& in) const {
    if (in.size() != 4 || in[3] != in_)
      fail(ErrorKind::input, "upsample2x_conv: expected NHWC input with " + std::to_string(in_) +
                                 " channels, got " + shape_string(in));
    return {in[0], 2 * in[1], 2 * in[2], out_};
  }

  Tensor forward(const Tensor& x) {
    const Shape os = output_shape(x.shape());
    input_ = x;
    const auto eff = effective_weights();
    Tensor y(os);
    const auto k = detail::select_kernels(in_, out_);
    for_each_run([&](std::size_t phase, std::size_t tap, std::size_t oi, std::size_t ii, std::size_t count) {
      k.forward(input_.raw() + ii * in_, in_, eff[phase].data() + tap * in_ * out_, y.raw() + oi * out_, 2 * out_,
                count, in_, out_);
    });
    const double* b = bias.value.raw();
    for (std::size_t i = 0; i < y.size() / out_; ++i)
      for (std::size_t o = 0; o < out_; ++o) y[i * out_ + o] += b[o];
    recorded_ = true;
    return y;
  }

  Tensor backward(const Tensor& grad_out, bool need_input_grad = true) {
    if (!recorded_) backward_without_forward("upsample2x_conv");
    recorded_ = false;
    require_shape(grad_out, output_shape(input_.shape()), "upsample2x_conv backward");
    double* db = bias.value.grad().data();
    for (std::size_t i = 0; i < grad_out.size() / out_; ++i)
      for (std::size_t o = 0; o < out_; ++o) db[o] += grad_out[i * out_ + o];

    const auto eff = effective_weights();
    std::vector<std::vector<double>> deff(4);
    for (std::size_t ph = 0; ph < 4; ++ph) deff[ph].assign(eff[ph].size(), 0.0);
    Tensor dx;
    if (need_input_grad) dx = Tensor(input_.shape());
    const auto k = detail::select_kernels(in_, out_);
    for_each_run([&](std::size_t phase, std::size_t tap, std::size_t oi, std::size_t ii, std::size_t count) {
      const double* g = grad_out.raw() + oi * out_;
      k.grad_weight(input_.raw() + ii * in_, in_, g, 2 * out_, deff[phase].data() + tap * in_ * out_, count, in_, out_);
      if (need_input_grad)
        k.grad_input(g, 2 * out_, eff[phase].data() + tap * in_ * out_, dx.raw() + ii * in_, in_, count, in_, out_);
    });

    // Each original tap feeds exactly one effective tap of every phase.
    double* dw = weight.value.grad().data();
    const std::size_t block = in_ * out_;
    for (std::size_t dy = 0; dy < 2; ++dy)
      for (std::size_t dx_ = 0; dx_ < 2; ++dx_)
        for (std::size_t ky = 0; ky < kernel_; ++ky)
          for (std::size_t kx = 0; kx < kernel_; ++kx) {
            const std::size_t tap = effective_index(dy, ky) * taps(dx_) + effective_index(dx_, kx);
            const double* src = deff[dy * 2 + dx_].data() + tap * block;
            double* dst = dw + (ky * kernel_ + kx) * block;
            for (std::size_t i = 0; i < block; ++i) dst[i] += src[i];
          }
    return dx;
  }

  void clear_state() {
    input_ = {};
    recorded_ = false;
  }

  Parameter weight;
  Parameter bias;

 private:
  std::ptrdiff_t pad() const { return static_cast<std::ptrdiff_t>(kernel_ / 2); }
  static std::ptrdiff_t floor_half(std::ptrdiff_t v) { return v >= 0 ? v / 2 : -((-v + 1) / 2); }

  /// Source offset (in low-resolution pixels) of the first effective tap of phase d.
  std::ptrdiff_t first_offset(std::size_t d) const { return floor_half(static_cast<std::ptrdiff_t>(d) - pad()); }
  std::size_t taps(std::size_t d) const {
    const std::ptrdiff_t last = floor_half(static_cast<std::ptrdiff_t>(d + kernel_ - 1) - pad());
    return static_cast<std::size_t>(last - first_offset(d) + 1);
  }
  std::size_t effective_index(std::size_t d, std::size_t k) const {
    return static_cast<std::size_t>(floor_half(static_cast<std::ptrdiff_t>(d + k) - pad()) - first_offset(d));
  }

  /// Per phase (dy*2+dx): taps(dy) x taps(dx) blocks of [in, out] weights.
  std::array<std::vector<double>, 4> effective_weights() const {
    std::array<std::vector<double>, 4> eff;
    const std::size_t block = in_ * out_;
    const double* w = weight.value.raw();
    for (std::size_t dy = 0; dy < 2; ++dy)
      for (std::size_t dx = 0; dx < 2; ++dx) {
        auto& e = eff[dy * 2 + dx];
        e.assign(taps(dy) * taps(dx) * block, 0.0);
        for (std::size_t ky = 0; ky < kernel_; ++ky)
          for (std::size_t kx = 0; kx < kernel_; ++kx) {
            const std::size_t tap = effective_index(dy, ky) * taps(dx) + effective_index(dx, kx);
            for (std::size_t i = 0; i < block; ++i) e[tap * block + i] += w[(ky * kernel_ + kx) * block + i];
          }
      }
    return eff;
  }

  /// visit(phase, effective tap, first output pixel, first input pixel, run
  /// length) for every run of one output row of one phase.
  template <class Visit>
  void for_each_run(Visit&& visit) const {
    const std::size_t n = input_.dim(0);
    const auto h = static_cast<std::ptrdiff_t>(input_.dim(1)), w = static_cast<std::ptrdiff_t>(input_.dim(2));
    const std::size_t wo = 2 * static_cast<std::size_t>(w), ho = 2 * static_cast<std::size_t>(h);
    for (std::size_t dy = 0; dy < 2; ++dy)
      for (std::size_t dx = 0; dx < 2; ++dx)
        for (std::size_t ey = 0; ey < taps(dy); ++ey) {
          const std::ptrdiff_t oy_shift = first_offset(dy) + static_cast<std::ptrdiff_t>(ey);
          for (std::size_t ex = 0; ex < taps(dx); ++ex) {
            const std::ptrdiff_t ox_shift = first_offset(dx) + static_cast<std::ptrdiff_t>(ex);
            const std::ptrdiff_t j0 = std::max<std::ptrdiff_t>(0, -ox_shift);
            const std::ptrdiff_t j1 = std::min<std::ptrdiff_t>(w, w - ox_shift);
            if (j0 >= j1) continue;
            for (std::size_t b = 0; b < n; ++b)
              for (std::ptrdiff_t i = 0; i < h; ++i) {
                const std::ptrdiff_t iy = i + oy_shift;
                if (iy < 0 || iy >= h) continue;
                const std::size_t oy = 2 * static_cast<std::size_t>(i) + dy;
                const std::size_t oi = (b * ho + oy) * wo + 2 * static_cast<std::size_t>(j0) + dx;
                const std::size_t ii = (b * static_cast<std::size_t>(h) + static_cast<std::size_t>(iy)) *
                                           static_cast<std::size_t>(w) +
                                       static_cast<std::size_t>(j0 + ox_shift);
                visit(dy * 2 + dx, ey * taps(dx) + ex, oi, ii, static_cast<std::size_t>(j1 - j0));
              }
          }
        }
  }

  std::size_t in_ = 0, out_ = 0, kernel_ = 3;
  Tensor input_;
  bool recorded_ = false;
};

class Relu {
 public:
  Shape output_shape(const Shape& in) const { return in; }

  Tensor forward(const Tensor& x) {
    Tensor y = x;
    mask_.resize(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
      mask_[i] = x[i] > 0.0;
      if (!mask_[i]) y[i] = 0.0;
    }
    shape_ = x.shape();
    recorded_ = true;
    return y;
  }

  Tensor backward(const Tensor& grad_out, bool = true) {
    if (!recorded_) backward_without_forward("relu");
    recorded_ = false;
    require_shape(grad_out, shape_, "relu backward");
    Tensor dx = grad_out;
    for (std::size_t i = 0; i < dx.size(); ++i)
      if (!mask_[i]) dx[i] = 0.0;
    return dx;
  }

  const std::vector<bool>& mask() const { return mask_; }
  void clear_state() {
    mask_ = {};
    recorded_ = false;
  }

 private:
  std::vector<bool> mask_;
  Shape shape_;
  bool recorded_ = false;
};

/// Reshapes each sample (the leading batch dimension is kept).
class Reshape {
 public:
  Reshape() = default;
  explicit Reshape(Shape per_sample) : per_sample_(std::move(per_sample)) {}

  Shape output_shape(const Shape& in) const {
    Shape out{in.at(0)};
    out.insert(out.end(), per_sample_.begin(), per_sample_.end());
    if (element_count(out) != element_count(in))
      fail(ErrorKind::input, "reshape: cannot view " + shape_string(in) + " as " + shape_string(out));
    return out;
  }

  Tensor forward(const Tensor& x) {
    in_shape_ = x.shape();
    recorded_ = true;
    return x.reshaped(output_shape(x.shape()));
  }

  Tensor backward(const Tensor& grad_out, bool = true) {
    if (!recorded_) backward_without_forward("reshape");
    recorded_ = false;
    return grad_out.reshaped(in_shape_);
  }

  const Shape& per_sample() const { return per_sample_; }

 private:
  Shape per_sample_;
  Shape in_shape_;
  bool recorded_ = false;
};

using Layer = std::variant<Conv2d, Dense, Upsample2x, UpsampleConv2d, Relu, Reshape>;

/// Ordered layer stack with value semantics (copying a Sequential copies its parameters).
class Sequential {
 public:
  Sequential() = default;

  template <class L>
  Sequential& add(L layer) {
    layers_.emplace_back(std::move(layer));
    return *this;
  }

  std::size_t size() const { return layers_.size(); }
  const std::vector<Layer>& layers() const { return layers_; }
  std::vector<Layer>& layers() { return layers_; }

  /// Drops cached activations (parameters and gradients are kept).
  void clear_state() {
    for (auto& l : layers_)
      std::visit([](auto& layer) {
        if constexpr (requires { layer.clear_state(); }) layer.clear_state();
      }, l);
  }

  void init(std::mt19937_64& rng) {
    for (auto& l : layers_)
      std::visit([&](auto& layer) {
        if constexpr (requires { layer.init(rng); }) layer.init(rng);
      }, l);
  }

  Shape output_shape(Shape in) const {
    for (const auto& l : layers_) in = std::visit([&](const auto& layer) { return layer.output_shape(in); }, l);
    return in;
  }

  Tensor forward(Tensor x) {
    for (auto& l : layers_) x = std::visit([&](auto& layer) { return layer.forward(x); }, l);
    return x;
  }

  /// Backpropagates `grad` through the stack; returns the input gradient
  /// (empty when `need_input_grad` is false).
  Tensor backward(Tensor grad, bool need_input_grad = true) {
    for (std::size_t k = layers_.size(); k-- > 0;) {
      const bool need = need_input_grad || k > 0;
      grad = std::visit([&](auto& layer) { return layer.backward(grad, need); }, layers_[k]);
    }
    return grad;
  }

  std::vector<Parameter*> parameters() {
    std::vector<Parameter*> out;
    for (auto& l : layers_)
      std::visit([&](auto& layer) {
        if constexpr (requires { layer.weight; }) {
          out.push_back(&layer.weight);
          out.push_back(&layer.bias);
        }
      }, l);
    return out;
  }

  std::vector<const Parameter*> parameters() const {
    std::vector<const Parameter*> out;
    for (auto* p : const_cast<Sequential*>(this)->parameters()) out.push_back(p);
    return out;
  }

  void zero_grad() {
    for (auto* p : parameters()) p->value.zero_grad();
  }

  /// Concatenated ReLU masks of the last forward pass; equal signatures mean
  /// the network is in the same linear region.
  std::vector<bool> activation_pattern() const {
    std::vector<bool> out;
    for (const auto& l : layers_)
      if (const auto* r = std::get_if<Relu>(&l)) out.insert(out.end(), r->mask().begin(), r->mask().end());
    return out;
  }

 private:
  std::vector<Layer> layers_;
};

}  // namespace xscene::nn
