#include "cyclead/ops.hpp"

#include <cmath>
#include <stdexcept>

#include <Eigen/Core>

namespace cyclead::ops {
namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

template <typename T>
using VecMap = Eigen::Map<const Eigen::Array<T, Eigen::Dynamic, 1>>;

template <typename T>
using NodePtr = std::shared_ptr<Node<T>>;

// Columns [lo, hi) of an output row whose input column ow*stride - pad + kj
// falls inside [0, width).
inline std::pair<int, int> valid_columns(int width, int out_w, ConvGeometry g, int kj) {
  const int first = g.padding - kj;  // ow * stride >= first
  int lo = first <= 0 ? 0 : (first + g.stride - 1) / g.stride;
  const int last = width - 1 + g.padding - kj;  // ow * stride <= last
  int hi = last < 0 ? 0 : last / g.stride + 1;
  lo = std::min(lo, out_w);
  hi = std::clamp(hi, lo, out_w);
  return {lo, hi};
}

// Unfolds output rows [row0, row1) of one CHW image into a
// [C*k*k, (row1-row0)*Wo] patch matrix.
template <typename T>
void im2col(const T* img, int channels, int height, int width, ConvGeometry g, int out_w,
            int row0, int row1, T* col) {
  const int k = g.kernel;
  const std::size_t span = static_cast<std::size_t>(row1 - row0) * out_w;
  for (int c = 0; c < channels; ++c) {
    const T* src = img + static_cast<std::size_t>(c) * height * width;
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        T* row = col + (static_cast<std::size_t>(c * k + ki) * k + kj) * span;
        const auto [lo, hi] = valid_columns(width, out_w, g, kj);
        for (int oh = row0; oh < row1; ++oh) {
          const int ih = oh * g.stride - g.padding + ki;
          T* dst = row + static_cast<std::size_t>(oh - row0) * out_w;
          if (ih < 0 || ih >= height) {
            std::fill(dst, dst + out_w, T(0));
            continue;
          }
          const std::ptrdiff_t base = static_cast<std::ptrdiff_t>(ih) * width - g.padding + kj;
          std::fill(dst, dst + lo, T(0));
          if (g.stride == 1) {
            std::copy(src + base + lo, src + base + hi, dst + lo);
          } else {
            for (int ow = lo; ow < hi; ++ow) dst[ow] = src[base + ow * g.stride];
          }
          std::fill(dst + hi, dst + out_w, T(0));
        }
      }
    }
  }
}

// Adjoint of im2col: scatters a patch matrix back into an image, accumulating.
template <typename T>
void col2im(const T* col, int channels, int height, int width, ConvGeometry g, int out_w,
            int row0, int row1, T* img) {
  const int k = g.kernel;
  const std::size_t span = static_cast<std::size_t>(row1 - row0) * out_w;
  for (int c = 0; c < channels; ++c) {
    T* dst = img + static_cast<std::size_t>(c) * height * width;
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        const T* row = col + (static_cast<std::size_t>(c * k + ki) * k + kj) * span;
        const auto [lo, hi] = valid_columns(width, out_w, g, kj);
        for (int oh = row0; oh < row1; ++oh) {
          const int ih = oh * g.stride - g.padding + ki;
          if (ih < 0 || ih >= height) continue;
          const T* src = row + static_cast<std::size_t>(oh - row0) * out_w;
          const std::ptrdiff_t base = static_cast<std::ptrdiff_t>(ih) * width - g.padding + kj;
          if (g.stride == 1) {
            for (int ow = lo; ow < hi; ++ow) dst[base + ow] += src[ow];
          } else {
            for (int ow = lo; ow < hi; ++ow) dst[base + ow * g.stride] += src[ow];
          }
        }
      }
    }
  }
}

// Output rows per im2col chunk, keeping the patch matrix near cache size.
inline int rows_per_chunk(int kdim, int out_w, int out_h) {
  constexpr std::size_t kChunkElements = std::size_t{1} << 17;
  const std::size_t per_row = static_cast<std::size_t>(kdim) * out_w;
  const int rows = static_cast<int>(std::max<std::size_t>(1, kChunkElements / per_row));
  return std::min(rows, out_h);
}

// Unpadded stride-1 convolution computed without a patch matrix, used when the
// output has few channels and im2col traffic would dominate. Outputs are
// evaluated on a grid of full input width so that every kernel tap becomes a
// single contiguous axpy; the trailing k-1 columns of each row are discarded.
constexpr int kDirectMaxChannels = 4;

template <typename T>
void direct_conv_forward(const T* x, const T* w, int cin, int height, int width, int cout, int k,
                         int out_h, int out_w, T* out) {
  const std::size_t span = static_cast<std::size_t>(out_h - 1) * width + out_w;
  const auto n = static_cast<Eigen::Index>(span);
  AlignedVector<T> full(span);
  for (int o = 0; o < cout; ++o) {
    std::fill(full.begin(), full.end(), T(0));
    Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>> acc_vec(full.data(), n);
    for (int c = 0; c < cin; ++c) {
      const T* src = x + static_cast<std::size_t>(c) * height * width;
      for (int ki = 0; ki < k; ++ki) {
        for (int kj = 0; kj < k; ++kj) {
          const T wv = w[((static_cast<std::size_t>(o) * cin + c) * k + ki) * k + kj];
          const T* in = src + static_cast<std::size_t>(ki) * width + kj;
          acc_vec += wv * VecMap<T>(in, n);
        }
      }
    }
    T* dst = out + static_cast<std::size_t>(o) * out_h * out_w;
    for (int oh = 0; oh < out_h; ++oh) {
      std::copy_n(full.data() + static_cast<std::size_t>(oh) * width, out_w,
                  dst + static_cast<std::size_t>(oh) * out_w);
    }
  }
}

template <typename T>
void direct_conv_backward(const T* x, const T* w, const T* grad, int cin, int height, int width,
                          int cout, int k, int out_h, int out_w, T* dx, T* dw) {
  const std::size_t span = static_cast<std::size_t>(out_h - 1) * width + out_w;
  const auto n = static_cast<Eigen::Index>(span);
  AlignedVector<T> full(span, T(0));
  for (int o = 0; o < cout; ++o) {
    const T* go = grad + static_cast<std::size_t>(o) * out_h * out_w;
    for (int oh = 0; oh < out_h; ++oh) {
      std::copy_n(go + static_cast<std::size_t>(oh) * out_w, out_w,
                  full.data() + static_cast<std::size_t>(oh) * width);
    }
    VecMap<T> gf(full.data(), n);
    for (int c = 0; c < cin; ++c) {
      const std::size_t in_off = static_cast<std::size_t>(c) * height * width;
      for (int ki = 0; ki < k; ++ki) {
        for (int kj = 0; kj < k; ++kj) {
          const std::size_t widx = ((static_cast<std::size_t>(o) * cin + c) * k + ki) * k + kj;
          const std::size_t off = in_off + static_cast<std::size_t>(ki) * width + kj;
          if (dw) dw[widx] += (gf * VecMap<T>(x + off, n)).sum();
          if (dx) Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>>(dx + off, n) += w[widx] * gf;
        }
      }
    }
  }
}

template <typename T>
void add_channel_bias(T* out, const Tensor<T>& bias, int channels, std::size_t plane) {
  for (int c = 0; c < channels; ++c) {
    const T b = bias[c];
    T* p = out + c * plane;
    for (std::size_t i = 0; i < plane; ++i) p[i] += b;
  }
}

template <typename T>
void accumulate_bias_grad(const T* g, int channels, std::size_t plane, T* db) {
  for (int c = 0; c < channels; ++c) {
    const T* p = g + c * plane;
    T s = 0;
    for (std::size_t i = 0; i < plane; ++i) s += p[i];
    db[c] += s;
  }
}

void check_bias(const Shape& bias, int channels) {
  if (bias.numel() != static_cast<std::size_t>(channels)) {
    throw ShapeError("bias " + bias.str() + " does not match " + std::to_string(channels) +
                     " channels");
  }
}

// Elementwise op; dfdx receives (input, output) for each element.
template <typename T, typename Fn, typename Dfn>
Var<T> unary(const Var<T>& a, Fn f, Dfn dfdx) {
  Tensor<T> out(a.shape());
  const auto& in = a.value();
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = f(in[i]);
  Tensor<T> saved = out;
  return make_op<T>(std::move(out), {a},
                    [saved = std::move(saved), dfdx](
                        const Tensor<T>& g, std::vector<NodePtr<T>>& in) {
                      auto& x = in[0];
                      auto& dx = x->ensure_grad();
                      for (std::size_t i = 0; i < g.size(); ++i) {
                        dx[i] += g[i] * dfdx(x->value[i], saved[i]);
                      }
                    });
}

}  // namespace

template <typename T>
Var<T> conv2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias, ConvGeometry geom) {
  const Shape xs = x.shape();
  const Shape ws = weight.shape();
  if (ws.c != xs.c || ws.h != geom.kernel || ws.w != geom.kernel) {
    throw ShapeError("conv2d weight " + ws.str() + " incompatible with input " + xs.str());
  }
  if (xs.h + 2 * geom.padding < geom.kernel || xs.w + 2 * geom.padding < geom.kernel) {
    throw ShapeError("conv2d input " + xs.str() + " too small for kernel " +
                     std::to_string(geom.kernel));
  }
  const int out_h = conv_output_size(xs.h, geom);
  const int out_w = conv_output_size(xs.w, geom);
  const int cout = ws.n;
  if (bias.defined()) check_bias(bias.shape(), cout);
  const int kdim = xs.c * geom.kernel * geom.kernel;
  const Eigen::Index plane = static_cast<Eigen::Index>(out_h) * out_w;
  const int chunk = rows_per_chunk(kdim, out_w, out_h);
  using StridedMap = Eigen::Map<RowMat<T>, 0, Eigen::OuterStride<>>;
  using ConstStridedMap = Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>>;

  const bool direct = geom.stride == 1 && geom.padding == 0 && cout <= kDirectMaxChannels;

  Tensor<T> out(Shape{xs.n, cout, out_h, out_w});
  AlignedVector<T> col(direct ? 0 : static_cast<std::size_t>(kdim) * chunk * out_w);
  ConstMatMap<T> wm(weight.value().data(), cout, kdim);
  for (int n = 0; n < xs.n; ++n) {
    if (direct) {
      direct_conv_forward(x.value().sample(n), weight.value().data(), xs.c, xs.h, xs.w, cout,
                          geom.kernel, out_h, out_w, out.sample(n));
    }
    for (int r0 = 0; !direct && r0 < out_h; r0 += chunk) {
      const int r1 = std::min(out_h, r0 + chunk);
      const Eigen::Index cols = static_cast<Eigen::Index>(r1 - r0) * out_w;
      im2col(x.value().sample(n), xs.c, xs.h, xs.w, geom, out_w, r0, r1, col.data());
      StridedMap(out.sample(n) + static_cast<std::size_t>(r0) * out_w, cout, cols,
                 Eigen::OuterStride<>(plane))
          .noalias() = wm * ConstMatMap<T>(col.data(), kdim, cols);
    }
    if (bias.defined()) add_channel_bias(out.sample(n), bias.value(), cout, plane);
  }

  std::vector<Var<T>> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  return make_op<T>(
      std::move(out), std::move(inputs),
      [=](const Tensor<T>& g, std::vector<NodePtr<T>>& in) {
        const auto& xn = in[0];
        const auto& wn = in[1];
        const bool has_bias = in.size() > 2;
        AlignedVector<T> buf(direct ? 0 : static_cast<std::size_t>(kdim) * chunk * out_w);
        ConstMatMap<T> w(wn->value.data(), cout, kdim);
        for (int n = 0; n < xs.n; ++n) {
          if (has_bias && in[2]->requires_grad) {
            accumulate_bias_grad(g.sample(n), cout, plane, in[2]->ensure_grad().data());
          }
          if (direct) {
            direct_conv_backward(xn->value.sample(n), wn->value.data(), g.sample(n), xs.c, xs.h,
                                 xs.w, cout, geom.kernel, out_h, out_w,
                                 xn->requires_grad ? xn->ensure_grad().sample(n) : nullptr,
                                 wn->requires_grad ? wn->ensure_grad().data() : nullptr);
            continue;
          }
          for (int r0 = 0; r0 < out_h; r0 += chunk) {
            const int r1 = std::min(out_h, r0 + chunk);
            const Eigen::Index cols = static_cast<Eigen::Index>(r1 - r0) * out_w;
            ConstStridedMap gm(g.sample(n) + static_cast<std::size_t>(r0) * out_w, cout, cols,
                               Eigen::OuterStride<>(plane));
            if (wn->requires_grad) {
              im2col(xn->value.sample(n), xs.c, xs.h, xs.w, geom, out_w, r0, r1, buf.data());
              MatMap<T>(wn->ensure_grad().data(), cout, kdim).noalias() +=
                  gm * ConstMatMap<T>(buf.data(), kdim, cols).transpose();
            }
            if (xn->requires_grad) {
              MatMap<T>(buf.data(), kdim, cols).noalias() = w.transpose() * gm;
              col2im(buf.data(), xs.c, xs.h, xs.w, geom, out_w, r0, r1,
                     xn->ensure_grad().sample(n));
            }
          }
        }
      });
}

template <typename T>
Var<T> conv_transpose2d(const Var<T>& x, const Var<T>& weight, const Var<T>& bias,
                        ConvGeometry geom, int output_padding) {
  const Shape xs = x.shape();
  const Shape ws = weight.shape();
  if (ws.n != xs.c || ws.h != geom.kernel || ws.w != geom.kernel) {
    throw ShapeError("conv_transpose2d weight " + ws.str() + " incompatible with input " +
                     xs.str());
  }
  if (output_padding < 0 || output_padding >= geom.stride) {
    throw ShapeError("conv_transpose2d output_padding must lie in [0, stride)");
  }
  const int cout = ws.c;
  const int out_h = (xs.h - 1) * geom.stride - 2 * geom.padding + geom.kernel + output_padding;
  const int out_w = (xs.w - 1) * geom.stride - 2 * geom.padding + geom.kernel + output_padding;
  if (out_h < 1 || out_w < 1) throw ShapeError("conv_transpose2d produces empty output");
  if (bias.defined()) check_bias(bias.shape(), cout);
  const int kdim = cout * geom.kernel * geom.kernel;
  const std::size_t in_plane = xs.plane_size();
  const std::size_t out_plane = static_cast<std::size_t>(out_h) * out_w;

  Tensor<T> out(Shape{xs.n, cout, out_h, out_w});
  AlignedVector<T> col(static_cast<std::size_t>(kdim) * in_plane);
  ConstMatMap<T> wm(weight.value().data(), xs.c, kdim);
  for (int n = 0; n < xs.n; ++n) {
    MatMap<T>(col.data(), kdim, static_cast<Eigen::Index>(in_plane)).noalias() =
        wm.transpose() * ConstMatMap<T>(x.value().sample(n), xs.c, static_cast<Eigen::Index>(in_plane));
    col2im(col.data(), cout, out_h, out_w, geom, xs.w, 0, xs.h, out.sample(n));
    if (bias.defined()) add_channel_bias(out.sample(n), bias.value(), cout, out_plane);
  }

  std::vector<Var<T>> inputs{x, weight};
  if (bias.defined()) inputs.push_back(bias);
  return make_op<T>(
      std::move(out), std::move(inputs),
      [=](const Tensor<T>& g, std::vector<NodePtr<T>>& in) {
        const auto& xn = in[0];
        const auto& wn = in[1];
        const bool has_bias = in.size() > 2;
        AlignedVector<T> buf(static_cast<std::size_t>(kdim) * in_plane);
        ConstMatMap<T> w(wn->value.data(), xs.c, kdim);
        for (int n = 0; n < xs.n; ++n) {
          if (has_bias && in[2]->requires_grad) {
            accumulate_bias_grad(g.sample(n), cout, out_plane, in[2]->ensure_grad().data());
          }
          if (!wn->requires_grad && !xn->requires_grad) continue;
          im2col(g.sample(n), cout, out_h, out_w, geom, xs.w, 0, xs.h, buf.data());
          ConstMatMap<T> dcol(buf.data(), kdim, static_cast<Eigen::Index>(in_plane));
          if (wn->requires_grad) {
            MatMap<T>(wn->ensure_grad().data(), xs.c, kdim).noalias() +=
                ConstMatMap<T>(xn->value.sample(n), xs.c, static_cast<Eigen::Index>(in_plane)) *
                dcol.transpose();
          }
          if (xn->requires_grad) {
            MatMap<T>(xn->ensure_grad().sample(n), xs.c, static_cast<Eigen::Index>(in_plane))
                .noalias() += w * dcol;
          }
        }
      });
}

template <typename T>
Var<T> reflection_pad2d(const Var<T>& x, int pad) {
  const Shape xs = x.shape();
  if (pad < 0 || pad >= xs.h || pad >= xs.w) {
    throw ShapeError("reflection pad " + std::to_string(pad) + " invalid for " + xs.str());
  }
  const int oh = xs.h + 2 * pad;
  const int ow = xs.w + 2 * pad;
  // Source index for each padded coordinate.
  auto reflect = [](int i, int n) { return i < 0 ? -i : (i >= n ? 2 * n - 2 - i : i); };
  std::vector<int> rows(oh), cols(ow);
  for (int i = 0; i < oh; ++i) rows[i] = reflect(i - pad, xs.h);
  for (int j = 0; j < ow; ++j) cols[j] = reflect(j - pad, xs.w);

  Tensor<T> out(Shape{xs.n, xs.c, oh, ow});
  const std::size_t planes = static_cast<std::size_t>(xs.n) * xs.c;
  for (std::size_t p = 0; p < planes; ++p) {
    const T* src = x.value().data() + p * xs.plane_size();
    T* dst = out.data() + p * static_cast<std::size_t>(oh) * ow;
    for (int i = 0; i < oh; ++i) {
      const T* line = src + static_cast<std::size_t>(rows[i]) * xs.w;
      for (int j = 0; j < ow; ++j) dst[i * ow + j] = line[cols[j]];
    }
  }
  return make_op<T>(std::move(out), {x},
                    [=, rows = std::move(rows), cols = std::move(cols)](
                        const Tensor<T>& g, std::vector<NodePtr<T>>& in) {
                      auto& dx = in[0]->ensure_grad();
                      for (std::size_t p = 0; p < planes; ++p) {
                        const T* src = g.data() + p * static_cast<std::size_t>(oh) * ow;
                        T* dst = dx.data() + p * xs.plane_size();
                        for (int i = 0; i < oh; ++i) {
                          T* line = dst + static_cast<std::size_t>(rows[i]) * xs.w;
                          for (int j = 0; j < ow; ++j) line[cols[j]] += src[i * ow + j];
                        }
                      }
                    });
}

template <typename T>
Var<T> upsample_nearest2x(const Var<T>& x) {
  const Shape xs = x.shape();
  const int oh = xs.h * 2;
  const int ow = xs.w * 2;
  Tensor<T> out(Shape{xs.n, xs.c, oh, ow});
  const std::size_t planes = static_cast<std::size_t>(xs.n) * xs.c;
  for (std::size_t p = 0; p < planes; ++p) {
    const T* src = x.value().data() + p * xs.plane_size();
    T* dst = out.data() + p * static_cast<std::size_t>(oh) * ow;
    for (int i = 0; i < oh; ++i)
      for (int j = 0; j < ow; ++j) dst[i * ow + j] = src[(i / 2) * xs.w + j / 2];
  }
  return make_op<T>(std::move(out), {x}, [=](const Tensor<T>& g, std::vector<NodePtr<T>>& in) {
    auto& dx = in[0]->ensure_grad();
    for (std::size_t p = 0; p < planes; ++p) {
      const T* src = g.data() + p * static_cast<std::size_t>(oh) * ow;
      T* dst = dx.data() + p * xs.plane_size();
      for (int i = 0; i < oh; ++i)
        for (int j = 0; j < ow; ++j) dst[(i / 2) * xs.w + j / 2] += src[i * ow + j];
    }
  });
}

template <typename T>
Var<T> instance_norm(const Var<T>& x, double eps) {
  const Shape xs = x.shape();
  const std::size_t plane = xs.plane_size();
  const std::size_t planes = static_cast<std::size_t>(xs.n) * xs.c;
  std::vector<T> inv_std(planes);
  Tensor<T> out(xs);
  for (std::size_t p = 0; p < planes; ++p) {
    const T* src = x.value().data() + p * plane;
    T* dst = out.data() + p * plane;
    T mu = 0;
    for (std::size_t i = 0; i < plane; ++i) mu += src[i];
    mu /= static_cast<T>(plane);
    T var = 0;
    for (std::size_t i = 0; i < plane; ++i) var += (src[i] - mu) * (src[i] - mu);
    var /= static_cast<T>(plane);
    const T inv = T(1) / std::sqrt(var + static_cast<T>(eps));
    inv_std[p] = inv;
    for (std::size_t i = 0; i < plane; ++i) dst[i] = (src[i] - mu) * inv;
  }
  Tensor<T> normalized = out;
  return make_op<T>(std::move(out), {x},
                    [=, y = std::move(normalized), inv_std = std::move(inv_std)](
                        const Tensor<T>& g, std::vector<NodePtr<T>>& in) {
                      auto& dx = in[0]->ensure_grad();
                      for (std::size_t p = 0; p < planes; ++p) {
                        const T* gp = g.data() + p * plane;
                        const T* yp = y.data() + p * plane;
                        T* dp = dx.data() + p * plane;
                        T mean_g = 0;
                        T mean_gy = 0;
                        for (std::size_t i = 0; i < plane; ++i) {
                          mean_g += gp[i];
                          mean_gy += gp[i] * yp[i];
                        }
                        mean_g /= static_cast<T>(plane);
                        mean_gy /= static_cast<T>(plane);
                        for (std::size_t i = 0; i < plane; ++i) {
                          dp[i] += inv_std[p] * (gp[i] - mean_g - yp[i] * mean_gy);
                        }
                      }
                    });
}

namespace {

thread_local BranchTrace* active_trace = nullptr;

template <typename T, typename Classify>
void trace_branches(const Var<T>& x, Classify classify) {
  if (!active_trace) return;
  for (T v : x.value().storage()) active_trace->codes.push_back(classify(v));
}

std::int8_t sign_code(double v) { return static_cast<std::int8_t>((v > 0) - (v < 0)); }

}  // namespace

BranchTrace::BranchTrace() {
  if (active_trace) throw std::logic_error("nested BranchTrace");
  active_trace = this;
}

BranchTrace::~BranchTrace() { active_trace = nullptr; }

template <typename T>
Var<T> relu(const Var<T>& x) {
  trace_branches(x, [](T v) { return sign_code(v); });
  return unary<T>(
      x, [](T v) { return v > T(0) ? v : T(0); },
      [](T v, T) { return v > T(0) ? T(1) : T(0); });
}

template <typename T>
Var<T> leaky_relu(const Var<T>& x, double slope) {
  const T s = static_cast<T>(slope);
  trace_branches(x, [](T v) { return sign_code(v); });
  return unary<T>(
      x, [s](T v) { return v > T(0) ? v : s * v; },
      [s](T v, T) { return v > T(0) ? T(1) : s; });
}

template <typename T>
Var<T> tanh(const Var<T>& x) {
  return unary<T>(
      x, [](T v) { return std::tanh(v); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
Var<T> sigmoid(const Var<T>& x) {
  return unary<T>(
      x, [](T v) { return T(1) / (T(1) + std::exp(-v)); }, [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
Var<T> abs(const Var<T>& x) {
  trace_branches(x, [](T v) { return sign_code(v); });
  return unary<T>(
      x, [](T v) { return std::abs(v); },
      [](T v, T) { return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)); });
}

template <typename T>
Var<T> square(const Var<T>& x) {
  return unary<T>(
      x, [](T v) { return v * v; }, [](T v, T) { return T(2) * v; });
}

template <typename T>
Var<T> clamped_log(const Var<T>& x, double eps) {
  const T lo = static_cast<T>(eps);
  const T hi = static_cast<T>(1.0 - eps);
  trace_branches(x, [lo, hi](T v) { return static_cast<std::int8_t>(v < lo ? -1 : (v > hi ? 1 : 0)); });
  return unary<T>(
      x, [lo, hi](T v) { return std::log(std::clamp(v, lo, hi)); },
      [lo, hi](T v, T) { return (v < lo || v > hi) ? T(0) : T(1) / v; });
}

template <typename T>
Var<T> scale(const Var<T>& x, double factor) {
  const T f = static_cast<T>(factor);
  return unary<T>(
      x, [f](T v) { return f * v; }, [f](T, T) { return f; });
}

template <typename T>
Var<T> add_scalar(const Var<T>& x, double offset) {
  const T o = static_cast<T>(offset);
  return unary<T>(
      x, [o](T v) { return v + o; }, [](T, T) { return T(1); });
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("add shape mismatch " + a.shape().str() + " vs " + b.shape().str());
  }
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
  return make_op<T>(std::move(out), {a, b}, [](const Tensor<T>& g, std::vector<NodePtr<T>>& in) {
    for (auto& node : in) {
      if (!node->requires_grad) continue;
      auto& d = node->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
    }
  });
}

template <typename T>
Var<T> sub(const Var<T>& a, const Var<T>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("sub shape mismatch " + a.shape().str() + " vs " + b.shape().str());
  }
  Tensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] - b.value()[i];
  return make_op<T>(std::move(out), {a, b}, [](const Tensor<T>& g, std::vector<NodePtr<T>>& in) {
    for (std::size_t k = 0; k < in.size(); ++k) {
      if (!in[k]->requires_grad) continue;
      const T sign = k == 0 ? T(1) : T(-1);
      auto& d = in[k]->ensure_grad();
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += sign * g[i];
    }
  });
}

template <typename T>
Var<T> mean(const Var<T>& x) {
  const std::size_t count = x.value().size();
  if (count == 0) throw ShapeError("mean of empty tensor");
  // Accumulate in double so float and double paths agree on reductions.
  double s = 0;
  for (std::size_t i = 0; i < count; ++i) s += static_cast<double>(x.value()[i]);
  auto out = Tensor<T>::scalar(static_cast<T>(s / static_cast<double>(count)));
  return make_op<T>(std::move(out), {x}, [count](const Tensor<T>& g, std::vector<NodePtr<T>>& in) {
    auto& d = in[0]->ensure_grad();
    const T share = g[0] / static_cast<T>(count);
    for (std::size_t i = 0; i < count; ++i) d[i] += share;
  });
}

#define CYCLEAD_INSTANTIATE_OPS(T)                                                          \
  template Var<T> conv2d(const Var<T>&, const Var<T>&, const Var<T>&, ConvGeometry);        \
  template Var<T> conv_transpose2d(const Var<T>&, const Var<T>&, const Var<T>&,             \
                                   ConvGeometry, int);                                      \
  template Var<T> reflection_pad2d(const Var<T>&, int);                                     \
  template Var<T> upsample_nearest2x(const Var<T>&);                                        \
  template Var<T> instance_norm(const Var<T>&, double);                                     \
  template Var<T> relu(const Var<T>&);                                                      \
  template Var<T> leaky_relu(const Var<T>&, double);                                        \
  template Var<T> tanh(const Var<T>&);                                                      \
  template Var<T> sigmoid(const Var<T>&);                                                   \
  template Var<T> add(const Var<T>&, const Var<T>&);                                        \
  template Var<T> sub(const Var<T>&, const Var<T>&);                                        \
  template Var<T> scale(const Var<T>&, double);                                             \
  template Var<T> add_scalar(const Var<T>&, double);                                        \
  template Var<T> abs(const Var<T>&);                                                       \
  template Var<T> square(const Var<T>&);                                                    \
  template Var<T> clamped_log(const Var<T>&, double);                                       \
  template Var<T> mean(const Var<T>&);

CYCLEAD_INSTANTIATE_OPS(float)
CYCLEAD_INSTANTIATE_OPS(double)

}  // namespace cyclead::ops
