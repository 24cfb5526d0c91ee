#include "advforge/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <stdexcept>

#include "tensor_impl.hpp"

namespace advforge::ops {

namespace {

using detail::ImplPtr;
using detail::make_result;
using MatD = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapF = Eigen::Map<const MatF>;

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                     shape_str(b.shape()));
  }
}

void require_rank(const Tensor& t, std::size_t rank, const char* op, const char* what) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": " + what + " must have rank " + std::to_string(rank) + ", got " +
                     shape_str(t.shape()));
  }
}

MatD to_double(const float* p, Eigen::Index rows, Eigen::Index cols) {
  return MapF(p, rows, cols).cast<double>();
}

std::vector<float> to_float(const MatD& m) {
  std::vector<float> out(static_cast<std::size_t>(m.size()));
  Eigen::Map<MatF>(out.data(), m.rows(), m.cols()) = m.cast<float>();
  return out;
}

float* grad_buffer(detail::TensorImpl& t) {
  t.ensure_grad();
  return t.grad.data();
}

void add_constant(detail::TensorImpl& t, float value) {
  float* __restrict gout = grad_buffer(t);
  const std::size_t n = t.grad.size();
  for (std::size_t i = 0; i < n; ++i) gout[i] += value;
}

// Fixed-order sum with eight interleaved 64-bit partial sums.
double sum_double(std::span<const float> x) {
  double part[8] = {};
  const std::size_t n = x.size(), body = n - n % 8;
  for (std::size_t i = 0; i < body; i += 8) {
    for (std::size_t l = 0; l < 8; ++l) part[l] += static_cast<double>(x[i + l]);
  }
  for (std::size_t i = body; i < n; ++i) part[i - body] += static_cast<double>(x[i]);
  return ((part[0] + part[1]) + (part[2] + part[3])) + ((part[4] + part[5]) + (part[6] + part[7]));
}

// Elementwise map with a per-element local derivative.
template <typename F, typename D>
Tensor unary(const Tensor& a, F f, D dfdx) {
  const auto x = a.data();
  std::vector<float> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
  ImplPtr ai = a.impl();
  return make_result(a.shape(), std::move(out), {&a}, [ai, dfdx](const std::vector<float>& g) {
    const float* __restrict x = ai->values();
    const float* __restrict gin = g.data();
    float* __restrict gout = grad_buffer(*ai);
    for (std::size_t i = 0; i < g.size(); ++i) gout[i] += gin[i] * dfdx(x[i]);
  });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  const auto x = a.data(), y = b.data();
  std::vector<float> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + y[i];
  ImplPtr ai = a.impl(), bi = b.impl();
  return make_result(a.shape(), std::move(out), {&a, &b}, [ai, bi](const std::vector<float>& g) {
    if (ai->requires_grad) ai->accumulate(g.data());
    if (bi->requires_grad) bi->accumulate(g.data());
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  const auto x = a.data(), y = b.data();
  std::vector<float> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] - y[i];
  ImplPtr ai = a.impl(), bi = b.impl();
  return make_result(a.shape(), std::move(out), {&a, &b}, [ai, bi](const std::vector<float>& g) {
    if (ai->requires_grad) ai->accumulate(g.data());
    if (bi->requires_grad) {
      float* __restrict gout = grad_buffer(*bi);
      const float* __restrict gin = g.data();
      for (std::size_t i = 0; i < g.size(); ++i) gout[i] -= gin[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  const auto x = a.data(), y = b.data();
  std::vector<float> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] * y[i];
  ImplPtr ai = a.impl(), bi = b.impl();
  return make_result(a.shape(), std::move(out), {&a, &b}, [ai, bi](const std::vector<float>& g) {
    const float* __restrict x = ai->values();
    const float* __restrict y = bi->values();
    const float* __restrict gin = g.data();
    if (ai->requires_grad) {
      float* __restrict gout = grad_buffer(*ai);
      for (std::size_t i = 0; i < g.size(); ++i) gout[i] += gin[i] * y[i];
    }
    if (bi->requires_grad) {
      float* __restrict gout = grad_buffer(*bi);
      for (std::size_t i = 0; i < g.size(); ++i) gout[i] += gin[i] * x[i];
    }
  });
}

Tensor square(const Tensor& a) {
  return unary(a, [](float v) { return v * v; }, [](float v) { return 2.0f * v; });
}

Tensor scale(const Tensor& a, float factor) {
  return unary(a, [factor](float v) { return v * factor; }, [factor](float) { return factor; });
}

Tensor add_scalar(const Tensor& a, float value) {
  return unary(a, [value](float v) { return v + value; }, [](float) { return 1.0f; });
}

Tensor relu(const Tensor& a) {
  return unary(a, [](float v) { return v > 0.0f ? v : 0.0f; }, [](float v) { return v > 0.0f ? 1.0f : 0.0f; });
}

Tensor clamp(const Tensor& a, float lo, float hi) {
  if (!(lo <= hi)) throw std::invalid_argument("clamp: lo must not exceed hi");
  return unary(
      a, [lo, hi](float v) { return std::min(std::max(v, lo), hi); },
      [lo, hi](float v) { return (v > lo && v < hi) ? 1.0f : 0.0f; });
}

Tensor sign(const Tensor& a) {
  const auto x = a.data();
  std::vector<float> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] > 0.0f ? 1.0f : (x[i] < 0.0f ? -1.0f : 0.0f);
  return make_result(a.shape(), std::move(out), {&a}, [](const std::vector<float>&) {});
}

Tensor sum(const Tensor& a) {
  const double acc = sum_double(a.data());
  ImplPtr ai = a.impl();
  return make_result(Shape{}, {static_cast<float>(acc)}, {&a}, [ai](const std::vector<float>& g) {
    add_constant(*ai, g[0]);
  });
}

Tensor mean(const Tensor& a) {
  const std::size_t n = a.numel();
  if (n == 0) throw ShapeError("mean of an empty tensor");
  const double acc = sum_double(a.data());
  ImplPtr ai = a.impl();
  return make_result(Shape{}, {static_cast<float>(acc / static_cast<double>(n))}, {&a},
                     [ai, n](const std::vector<float>& g) {
                       add_constant(*ai, static_cast<float>(static_cast<double>(g[0]) / static_cast<double>(n)));
                     });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul", "lhs");
  require_rank(b, 2, "matmul", "rhs");
  const auto n = static_cast<Eigen::Index>(a.dim(0));
  const auto k = static_cast<Eigen::Index>(a.dim(1));
  const auto m = static_cast<Eigen::Index>(b.dim(1));
  if (b.dim(0) != a.dim(1)) {
    throw ShapeError("matmul: inner dimensions differ " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  const MatD ad = to_double(a.data().data(), n, k);
  const MatD bd = to_double(b.data().data(), k, m);
  const MatD c = ad * bd;
  ImplPtr ai = a.impl(), bi = b.impl();
  return make_result(Shape{a.dim(0), b.dim(1)}, to_float(c), {&a, &b},
                     [ai, bi, n, k, m](const std::vector<float>& g) {
                       const MatD gd = to_double(g.data(), n, m);
                       if (ai->requires_grad) {
                         const MatD da = gd * to_double(bi->values(), k, m).transpose();
                         ai->accumulate(to_float(da).data());
                       }
                       if (bi->requires_grad) {
                         const MatD db = to_double(ai->values(), n, k).transpose() * gd;
                         bi->accumulate(to_float(db).data());
                       }
                     });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  require_rank(x, 2, "linear", "input");
  require_rank(weight, 2, "linear", "weight");
  const auto n = static_cast<Eigen::Index>(x.dim(0));
  const auto in = static_cast<Eigen::Index>(x.dim(1));
  const auto out = static_cast<Eigen::Index>(weight.dim(0));
  if (weight.dim(1) != x.dim(1)) {
    throw ShapeError("linear: input " + shape_str(x.shape()) + " does not match weight " +
                     shape_str(weight.shape()));
  }
  if (bias.defined() && bias.shape() != Shape{weight.dim(0)}) {
    throw ShapeError("linear: bias " + shape_str(bias.shape()) + " does not match weight " +
                     shape_str(weight.shape()));
  }
  MatD y = to_double(x.data().data(), n, in) * to_double(weight.data().data(), out, in).transpose();
  if (bias.defined()) {
    const auto b = bias.data();
    for (Eigen::Index j = 0; j < out; ++j) y.col(j).array() += static_cast<double>(b[j]);
  }
  ImplPtr xi = x.impl(), wi = weight.impl();
  ImplPtr bi = bias.defined() ? bias.impl() : nullptr;
  return make_result(Shape{x.dim(0), weight.dim(0)}, to_float(y), {&x, &weight, &bias},
                     [xi, wi, bi, n, in, out](const std::vector<float>& g) {
                       const MatD gd = to_double(g.data(), n, out);
                       if (xi->requires_grad) {
                         const MatD dx = gd * to_double(wi->values(), out, in);
                         xi->accumulate(to_float(dx).data());
                       }
                       if (wi->requires_grad) {
                         const MatD dw = gd.transpose() * to_double(xi->values(), n, in);
                         wi->accumulate(to_float(dw).data());
                       }
                       if (bi && bi->requires_grad) {
                         bi->ensure_grad();
                         for (Eigen::Index j = 0; j < out; ++j) bi->grad[j] += static_cast<float>(gd.col(j).sum());
                       }
                     });
}

namespace {

struct ConvGeometry {
  std::size_t cin, h, w, kh, kw, pad, stride, oh, ow;
  std::size_t plane() const { return oh * ow; }
  std::size_t k() const { return cin * kh * kw; }
};

// The image is first copied into a zero-padded 64-bit plane so the unfolding
// loops need no bounds checks.
void pad_image(const ConvGeometry& g, const float* img, double* padded) {
  const std::size_t ph = g.h + 2 * g.pad, pw = g.w + 2 * g.pad;
  for (std::size_t i = 0; i < g.cin * ph * pw; ++i) padded[i] = 0.0;
  for (std::size_t c = 0; c < g.cin; ++c) {
    for (std::size_t y = 0; y < g.h; ++y) {
      const float* src = img + (c * g.h + y) * g.w;
      double* dst = padded + (c * ph + y + g.pad) * pw + g.pad;
      for (std::size_t x = 0; x < g.w; ++x) dst[x] = static_cast<double>(src[x]);
    }
  }
}

// col(row = (c, i, j), column = (oy, ox)) for one image.
void im2col(const ConvGeometry& g, const double* padded, double* col) {
  const std::size_t ph = g.h + 2 * g.pad, pw = g.w + 2 * g.pad;
  const std::size_t plane = g.plane();
  for (std::size_t c = 0; c < g.cin; ++c) {
    for (std::size_t i = 0; i < g.kh; ++i) {
      for (std::size_t j = 0; j < g.kw; ++j) {
        double* out = col + ((c * g.kh + i) * g.kw + j) * plane;
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const double* src = padded + (c * ph + oy * g.stride + i) * pw + j;
          double* row = out + oy * g.ow;
          for (std::size_t ox = 0; ox < g.ow; ++ox) row[ox] = src[ox * g.stride];
        }
      }
    }
  }
}

// Adds the unfolded gradient back into a padded plane (inverse of im2col).
void col2im(const ConvGeometry& g, const double* col, double* padded) {
  const std::size_t ph = g.h + 2 * g.pad, pw = g.w + 2 * g.pad;
  const std::size_t plane = g.plane();
  for (std::size_t i = 0; i < g.cin * ph * pw; ++i) padded[i] = 0.0;
  for (std::size_t c = 0; c < g.cin; ++c) {
    for (std::size_t i = 0; i < g.kh; ++i) {
      for (std::size_t j = 0; j < g.kw; ++j) {
        const double* in = col + ((c * g.kh + i) * g.kw + j) * plane;
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          double* dst = padded + (c * ph + oy * g.stride + i) * pw + j;
          const double* row = in + oy * g.ow;
          for (std::size_t ox = 0; ox < g.ow; ++ox) dst[ox * g.stride] += row[ox];
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor& bias, Conv2dParams params) {
  require_rank(x, 4, "conv2d", "input");
  require_rank(weight, 4, "conv2d", "weight");
  if (params.stride == 0) throw std::invalid_argument("conv2d: stride must be positive");
  const std::size_t batch = x.dim(0), cin = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t cout = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
  const std::size_t pad = params.padding, stride = params.stride;
  if (weight.dim(1) != cin) {
    throw ShapeError("conv2d: input " + shape_str(x.shape()) + " channel count does not match weight " +
                     shape_str(weight.shape()));
  }
  if (kh > h + 2 * pad || kw > w + 2 * pad) {
    throw ShapeError("conv2d: kernel " + shape_str(weight.shape()) + " larger than padded input " +
                     shape_str(x.shape()) + " with padding " + std::to_string(pad));
  }
  if (bias.defined() && bias.shape() != Shape{cout}) {
    throw ShapeError("conv2d: bias " + shape_str(bias.shape()) + " does not match weight " +
                     shape_str(weight.shape()));
  }
  const ConvGeometry geo{cin, h, w, kh, kw, pad, stride, (h + 2 * pad - kh) / stride + 1,
                         (w + 2 * pad - kw) / stride + 1};
  const std::size_t plane = geo.plane();
  const auto wk = static_cast<Eigen::Index>(geo.k());
  const auto wo = static_cast<Eigen::Index>(cout);
  const auto np = static_cast<Eigen::Index>(plane);

  // Images are processed one at a time so the unfolded patches stay cache-resident.
  const MatD wd = to_double(weight.data().data(), wo, wk);
  const std::size_t padded_size = cin * (h + 2 * pad) * (w + 2 * pad);
  std::vector<double> padded(padded_size);
  MatD col(wk, np);
  MatD y(wo, np);
  std::vector<float> out(batch * cout * plane);
  const float* src = x.data().data();
  const float* b = bias.defined() ? bias.data().data() : nullptr;
  for (std::size_t n = 0; n < batch; ++n) {
    pad_image(geo, src + n * cin * h * w, padded.data());
    im2col(geo, padded.data(), col.data());
    y.noalias() = wd * col;
    float* dst = out.data() + n * cout * plane;
    for (std::size_t o = 0; o < cout; ++o) {
      const double bo = b ? static_cast<double>(b[o]) : 0.0;
      const double* yr = y.data() + o * plane;
      for (std::size_t p = 0; p < plane; ++p) dst[o * plane + p] = static_cast<float>(yr[p] + bo);
    }
  }

  if (!detail::should_record({&x, &weight, &bias})) {
    return make_result(Shape{batch, cout, geo.oh, geo.ow}, std::move(out), {}, nullptr);
  }
  ImplPtr xi = x.impl(), wi = weight.impl();
  ImplPtr bi = bias.defined() ? bias.impl() : nullptr;
  return make_result(
      Shape{batch, cout, geo.oh, geo.ow}, std::move(out), {&x, &weight, &bias},
      [=](const std::vector<float>& g) {
        const bool need_w = wi->requires_grad;
        const bool need_b = bi && bi->requires_grad;
        const bool need_x = xi->requires_grad;
        MatD dw = MatD::Zero(need_w ? wo : 0, need_w ? wk : 0);
        std::vector<double> db(need_b ? cout : 0, 0.0);
        MatD wt;
        if (need_x) wt = to_double(wi->values(), wo, wk).transpose();
        MatD cols(wk, np);
        MatD dcol(need_x ? wk : 0, np);
        MatD gd(wo, np);
        std::vector<double> padded(padded_size);
        if (need_x) xi->ensure_grad();
        const float* xs = xi->values();
        for (std::size_t n = 0; n < batch; ++n) {
          const float* gn = g.data() + n * cout * plane;
          for (std::size_t i = 0; i < cout * plane; ++i) gd.data()[i] = static_cast<double>(gn[i]);
          if (need_b) {
            for (std::size_t o = 0; o < cout; ++o) db[o] += gd.row(static_cast<Eigen::Index>(o)).sum();
          }
          if (need_w) {
            pad_image(geo, xs + n * cin * h * w, padded.data());
            im2col(geo, padded.data(), cols.data());
            dw.noalias() += gd * cols.transpose();
          }
          if (need_x) {
            dcol.noalias() = wt * gd;
            col2im(geo, dcol.data(), padded.data());
            float* gx = xi->grad.data() + n * cin * h * w;
            const std::size_t ph = h + 2 * pad, pw = w + 2 * pad;
            for (std::size_t c = 0; c < cin; ++c) {
              for (std::size_t yy = 0; yy < h; ++yy) {
                const double* row = padded.data() + (c * ph + yy + pad) * pw + pad;
                float* dst = gx + (c * h + yy) * w;
                for (std::size_t xx = 0; xx < w; ++xx) dst[xx] += static_cast<float>(row[xx]);
              }
            }
          }
        }
        if (need_w) wi->accumulate(to_float(dw).data());
        if (need_b) {
          bi->ensure_grad();
          for (std::size_t o = 0; o < cout; ++o) bi->grad[o] += static_cast<float>(db[o]);
        }
      });
}

Tensor max_pool2d(const Tensor& x, std::size_t kernel, std::size_t stride) {
  require_rank(x, 4, "max_pool2d", "input");
  if (kernel == 0 || stride == 0) throw std::invalid_argument("max_pool2d: kernel and stride must be positive");
  const std::size_t batch = x.dim(0), ch = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (kernel > h || kernel > w) {
    throw ShapeError("max_pool2d: kernel " + std::to_string(kernel) + " larger than input " + shape_str(x.shape()));
  }
  const std::size_t oh = (h - kernel) / stride + 1;
  const std::size_t ow = (w - kernel) / stride + 1;
  std::vector<float> out(batch * ch * oh * ow);
  auto argmax = std::make_shared<std::vector<std::uint32_t>>(out.size());
  const float* src = x.data().data();
  for (std::size_t plane = 0; plane < batch * ch; ++plane) {
    const float* img = src + plane * h * w;
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        std::size_t best = (oy * stride) * w + ox * stride;
        for (std::size_t i = 0; i < kernel; ++i) {
          for (std::size_t j = 0; j < kernel; ++j) {
            const std::size_t idx = (oy * stride + i) * w + ox * stride + j;
            if (img[idx] > img[best]) best = idx;
          }
        }
        const std::size_t o = (plane * oh + oy) * ow + ox;
        out[o] = img[best];
        (*argmax)[o] = static_cast<std::uint32_t>(plane * h * w + best);
      }
    }
  }
  ImplPtr xi = x.impl();
  return make_result(Shape{batch, ch, oh, ow}, std::move(out), {&x}, [xi, argmax](const std::vector<float>& g) {
    float* __restrict gout = grad_buffer(*xi);
    const float* __restrict gin = g.data();
    const std::uint32_t* __restrict where = argmax->data();
    for (std::size_t o = 0; o < g.size(); ++o) gout[where[o]] += gin[o];
  });
}

Tensor reshape(const Tensor& a, Shape shape) {
  if (shape_numel(shape) != a.numel()) {
    throw ShapeError("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
  }
  const auto x = a.data();
  ImplPtr ai = a.impl();
  return make_result(std::move(shape), std::vector<float>(x.begin(), x.end()), {&a},
                     [ai](const std::vector<float>& g) { ai->accumulate(g.data()); });
}

Tensor flatten(const Tensor& a) {
  if (a.rank() < 1) throw ShapeError("flatten: scalar input");
  const std::size_t n = a.dim(0);
  return reshape(a, Shape{n, n == 0 ? 0 : a.numel() / n});
}

Tensor concat_rows(const Tensor& a, const Tensor& b) {
  if (a.rank() < 1 || a.rank() != b.rank() ||
      !std::equal(a.shape().begin() + 1, a.shape().end(), b.shape().begin() + 1)) {
    throw ShapeError("concat_rows: incompatible shapes " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  Shape shape = a.shape();
  shape[0] += b.dim(0);
  std::vector<float> out;
  out.reserve(a.numel() + b.numel());
  out.insert(out.end(), a.data().begin(), a.data().end());
  out.insert(out.end(), b.data().begin(), b.data().end());
  ImplPtr ai = a.impl(), bi = b.impl();
  const std::size_t na = a.numel();
  return make_result(std::move(shape), std::move(out), {&a, &b}, [ai, bi, na](const std::vector<float>& g) {
    if (ai->requires_grad) ai->accumulate(g.data());
    if (bi->requires_grad) bi->accumulate(g.data() + na);
  });
}

Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end) {
  if (a.rank() < 1 || begin > end || end > a.dim(0)) {
    throw ShapeError("slice_rows: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") invalid for shape " + shape_str(a.shape()));
  }
  const std::size_t row = a.dim(0) == 0 ? 0 : a.numel() / a.dim(0);
  Shape shape = a.shape();
  shape[0] = end - begin;
  const auto x = a.data();
  std::vector<float> out(x.begin() + static_cast<std::ptrdiff_t>(begin * row),
                         x.begin() + static_cast<std::ptrdiff_t>(end * row));
  ImplPtr ai = a.impl();
  const std::size_t offset = begin * row;
  return make_result(std::move(shape), std::move(out), {&a}, [ai, offset](const std::vector<float>& g) {
    ai->ensure_grad();
    for (std::size_t i = 0; i < g.size(); ++i) ai->grad[offset + i] += g[i];
  });
}

Tensor softmax_cross_entropy(const Tensor& logits, std::span<const int> labels) {
  require_rank(logits, 2, "softmax_cross_entropy", "logits");
  const std::size_t batch = logits.dim(0), classes = logits.dim(1);
  if (batch == 0) throw ShapeError("softmax_cross_entropy: empty batch");
  if (labels.size() != batch) {
    throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for logits " +
                     shape_str(logits.shape()));
  }
  for (std::size_t i = 0; i < batch; ++i) {
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= classes) {
      throw std::out_of_range("softmax_cross_entropy: label " + std::to_string(labels[i]) + " at batch index " +
                              std::to_string(i) + " outside [0, " + std::to_string(classes) + ")");
    }
  }
  const float* z = logits.data().data();
  auto probs = std::make_shared<std::vector<double>>(batch * classes);
  double total = 0.0;
  for (std::size_t i = 0; i < batch; ++i) {
    const float* row = z + i * classes;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < classes; ++c) mx = std::max(mx, static_cast<double>(row[c]));
    double se = 0.0;
    for (std::size_t c = 0; c < classes; ++c) {
      const double e = std::exp(static_cast<double>(row[c]) - mx);
      (*probs)[i * classes + c] = e;
      se += e;
    }
    for (std::size_t c = 0; c < classes; ++c) (*probs)[i * classes + c] /= se;
    const double lse = mx + std::log(se);
    total += lse - static_cast<double>(row[labels[i]]);
  }
  std::vector<int> y(labels.begin(), labels.end());
  ImplPtr li = logits.impl();
  return make_result(Shape{}, {static_cast<float>(total / static_cast<double>(batch))}, {&logits},
                     [li, probs, y = std::move(y), batch, classes](const std::vector<float>& g) {
                       const double s = static_cast<double>(g[0]) / static_cast<double>(batch);
                       li->ensure_grad();
                       for (std::size_t i = 0; i < batch; ++i) {
                         for (std::size_t c = 0; c < classes; ++c) {
                           double d = (*probs)[i * classes + c];
                           if (static_cast<int>(c) == y[i]) d -= 1.0;
                           li->grad[i * classes + c] += static_cast<float>(s * d);
                         }
                       }
                     });
}

}  // namespace advforge::ops
