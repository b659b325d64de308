#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

#include "rego/autograd.hpp"
#include "rego/errors.hpp"

namespace rego::ops {
namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

struct ConvShape {
  int h, w, cin, kh, kw, cout, oh, ow;
  ConvGeometry g;
};

ConvShape conv_shape(const Tensor& x, const Tensor& weight, ConvGeometry g) {
  require_rank3(x, "conv2d input");
  if (weight.rank() != 4) throw ShapeError("conv2d: weight must be KHxKWxCinxCout, got " + weight.shape_string());
  ConvShape s{x.height(), x.width(), x.channels(), weight.dim(0), weight.dim(1), weight.dim(3), 0, 0, g};
  if (weight.dim(2) != s.cin) {
    throw ShapeError("conv2d: input channels " + std::to_string(s.cin) + " vs weight " + weight.shape_string());
  }
  if (g.stride < 1) throw ConfigError("conv2d: stride must be >= 1");
  s.oh = (s.h + 2 * g.pad_h - s.kh) / g.stride + 1;
  s.ow = (s.w + 2 * g.pad_w - s.kw) / g.stride + 1;
  if (s.oh <= 0 || s.ow <= 0) {
    throw ShapeError("conv2d: kernel " + weight.shape_string() + " does not fit input " + x.shape_string());
  }
  return s;
}

// rows: output pixels; columns: (ky, kx, cin) patch entries
RowMat im2col(const Tensor& x, const ConvShape& s) {
  RowMat col = RowMat::Zero(static_cast<Eigen::Index>(s.oh) * s.ow, static_cast<Eigen::Index>(s.kh) * s.kw * s.cin);
  for (int oy = 0; oy < s.oh; ++oy) {
    for (int ox = 0; ox < s.ow; ++ox) {
      double* row = col.data() + (static_cast<Eigen::Index>(oy) * s.ow + ox) * col.cols();
      for (int ky = 0; ky < s.kh; ++ky) {
        const int iy = oy * s.g.stride - s.g.pad_h + ky;
        if (iy < 0 || iy >= s.h) continue;
        for (int kx = 0; kx < s.kw; ++kx) {
          const int ix = ox * s.g.stride - s.g.pad_w + kx;
          if (ix < 0 || ix >= s.w) continue;
          std::copy_n(x.data() + x.offset(iy, ix, 0), s.cin, row + (ky * s.kw + kx) * s.cin);
        }
      }
    }
  }
  return col;
}

void col2im_accumulate(const RowMat& col, const ConvShape& s, Tensor& dx) {
  for (int oy = 0; oy < s.oh; ++oy) {
    for (int ox = 0; ox < s.ow; ++ox) {
      const double* row = col.data() + (static_cast<Eigen::Index>(oy) * s.ow + ox) * col.cols();
      for (int ky = 0; ky < s.kh; ++ky) {
        const int iy = oy * s.g.stride - s.g.pad_h + ky;
        if (iy < 0 || iy >= s.h) continue;
        for (int kx = 0; kx < s.kw; ++kx) {
          const int ix = ox * s.g.stride - s.g.pad_w + kx;
          if (ix < 0 || ix >= s.w) continue;
          double* dst = &dx.at(iy, ix, 0);
          const double* src = row + (ky * s.kw + kx) * s.cin;
          for (int c = 0; c < s.cin; ++c) dst[c] += src[c];
        }
      }
    }
  }
}

}  // namespace

Var conv2d(const Var& x, const Var& weight, const Var& bias, ConvGeometry geom) {
  const ConvShape s = conv_shape(x.value(), weight.value(), geom);
  const bool has_bias = bias.defined();
  if (has_bias && (bias.value().size() != static_cast<std::size_t>(s.cout))) {
    throw ShapeError("conv2d: bias " + bias.value().shape_string() + " for " + std::to_string(s.cout) + " outputs");
  }
  const Eigen::Index kdim = static_cast<Eigen::Index>(s.kh) * s.kw * s.cin;
  const Eigen::Index npix = static_cast<Eigen::Index>(s.oh) * s.ow;

  Tensor out({s.oh, s.ow, s.cout});
  {
    const RowMat col = im2col(x.value(), s);
    ConstMapMat wm(weight.value().data(), kdim, s.cout);
    MapMat om(out.data(), npix, s.cout);
    om.noalias() = col * wm;
    if (has_bias) {
      Eigen::Map<const Eigen::RowVectorXd> bv(bias.value().data(), s.cout);
      om.rowwise() += bv;
    }
  }

  std::vector<Var> inputs{x, weight};
  if (has_bias) inputs.push_back(bias);
  return make_result(std::move(out), std::move(inputs), [s, kdim, npix, has_bias](Node& self) {
    const NodePtr& xin = self.inputs[0];
    const NodePtr& win = self.inputs[1];
    ConstMapMat gm(self.grad.data(), npix, s.cout);
    if (win->requires_grad) {
      const RowMat col = im2col(xin->value, s);
      MapMat gw(win->grad_buffer().data(), kdim, s.cout);
      gw.noalias() += col.transpose() * gm;
    }
    if (has_bias && self.inputs[2]->requires_grad) {
      Eigen::Map<Eigen::RowVectorXd> gb(self.inputs[2]->grad_buffer().data(), s.cout);
      gb += gm.colwise().sum();
    }
    if (xin->requires_grad) {
      ConstMapMat wm(win->value.data(), kdim, s.cout);
      const RowMat dcol = gm * wm.transpose();
      col2im_accumulate(dcol, s, xin->grad_buffer());
    }
  });
}

Var upsample_nearest2x(const Var& x) {
  require_rank3(x.value(), "upsample_nearest2x");
  const Tensor& in = x.value();
  const int h = in.height(), w = in.width(), c = in.channels();
  Tensor out({2 * h, 2 * w, c});
  for (int y = 0; y < 2 * h; ++y)
    for (int xx = 0; xx < 2 * w; ++xx) std::copy_n(in.data() + in.offset(y / 2, xx / 2, 0), c, &out.at(y, xx, 0));
  return make_result(std::move(out), {x}, [h, w, c](Node& self) {
    const NodePtr& in = self.inputs[0];
    if (!in->requires_grad) return;
    Tensor& g = in->grad_buffer();
    for (int y = 0; y < 2 * h; ++y)
      for (int xx = 0; xx < 2 * w; ++xx)
        for (int k = 0; k < c; ++k) g.at(y / 2, xx / 2, k) += self.grad.at(y, xx, k);
  });
}

Var adaptive_avg_pool(const Var& x, int out_h, int out_w) {
  require_rank3(x.value(), "adaptive_avg_pool");
  if (out_h < 1 || out_w < 1) throw ConfigError("adaptive_avg_pool: output size must be positive");
  const Tensor& in = x.value();
  const int h = in.height(), w = in.width(), c = in.channels();
  auto bin = [](int i, int in_size, int out_size) {
    const int start = (i * in_size) / out_size;
    const int end = ((i + 1) * in_size + out_size - 1) / out_size;
    return std::pair{start, end};
  };
  Tensor out({out_h, out_w, c});
  for (int oy = 0; oy < out_h; ++oy) {
    const auto [y0, y1] = bin(oy, h, out_h);
    for (int ox = 0; ox < out_w; ++ox) {
      const auto [x0, x1] = bin(ox, w, out_w);
      const double inv = 1.0 / ((y1 - y0) * (x1 - x0));
      for (int y = y0; y < y1; ++y)
        for (int xx = x0; xx < x1; ++xx)
          for (int k = 0; k < c; ++k) out.at(oy, ox, k) += in.at(y, xx, k) * inv;
    }
  }
  return make_result(std::move(out), {x}, [=](Node& self) {
    const NodePtr& src = self.inputs[0];
    if (!src->requires_grad) return;
    Tensor& g = src->grad_buffer();
    for (int oy = 0; oy < out_h; ++oy) {
      const auto [y0, y1] = bin(oy, h, out_h);
      for (int ox = 0; ox < out_w; ++ox) {
        const auto [x0, x1] = bin(ox, w, out_w);
        const double inv = 1.0 / ((y1 - y0) * (x1 - x0));
        for (int y = y0; y < y1; ++y)
          for (int xx = x0; xx < x1; ++xx)
            for (int k = 0; k < c; ++k) g.at(y, xx, k) += self.grad.at(oy, ox, k) * inv;
      }
    }
  });
}

Var global_avg_pool(const Var& x) { return adaptive_avg_pool(x, 1, 1); }

Var batch_norm(const Var& x, const BatchNormState& state, NormMode mode) {
  require_rank3(x.value(), "batch_norm");
  const Tensor& in = x.value();
  const int c = in.channels();
  const int n = in.height() * in.width();
  if (state.gamma.value().size() != static_cast<std::size_t>(c)) {
    throw ShapeError("batch_norm: " + std::to_string(c) + " channels vs gamma " + state.gamma.value().shape_string());
  }
  std::vector<double> mu(c, 0.0), inv_std(c, 0.0);
  if (mode == NormMode::Train) {
    std::vector<double> var(c, 0.0);
    for (int i = 0; i < n; ++i)
      for (int k = 0; k < c; ++k) mu[k] += in[static_cast<std::size_t>(i) * c + k];
    for (int k = 0; k < c; ++k) mu[k] /= n;
    for (int i = 0; i < n; ++i)
      for (int k = 0; k < c; ++k) {
        const double d = in[static_cast<std::size_t>(i) * c + k] - mu[k];
        var[k] += d * d;
      }
    Var rm = state.running_mean;
    Var rv = state.running_var;
    for (int k = 0; k < c; ++k) {
      var[k] /= n;
      inv_std[k] = 1.0 / std::sqrt(var[k] + state.eps);
      const double unbiased = n > 1 ? var[k] * n / (n - 1) : var[k];
      rm.mutable_value()[k] = (1.0 - state.momentum) * rm.value()[k] + state.momentum * mu[k];
      rv.mutable_value()[k] = (1.0 - state.momentum) * rv.value()[k] + state.momentum * unbiased;
    }
  } else {
    for (int k = 0; k < c; ++k) {
      mu[k] = state.running_mean.value()[k];
      inv_std[k] = 1.0 / std::sqrt(state.running_var.value()[k] + state.eps);
    }
  }

  const Tensor& gamma = state.gamma.value();
  const Tensor& beta = state.beta.value();
  Tensor xhat(in.dims());
  Tensor out(in.dims());
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < c; ++k) {
      const std::size_t j = static_cast<std::size_t>(i) * c + k;
      xhat[j] = (in[j] - mu[k]) * inv_std[k];
      out[j] = gamma[k] * xhat[j] + beta[k];
    }

  const bool batch_stats = mode == NormMode::Train;
  return make_result(std::move(out), {x, state.gamma, state.beta},
                     [xhat = std::move(xhat), inv_std, n, c, batch_stats](Node& self) {
                       const NodePtr& xin = self.inputs[0];
                       const NodePtr& gin = self.inputs[1];
                       const NodePtr& bin = self.inputs[2];
                       const Tensor& gamma = gin->value;
                       std::vector<double> sum_dy(c, 0.0), sum_dy_xhat(c, 0.0);
                       for (int i = 0; i < n; ++i)
                         for (int k = 0; k < c; ++k) {
                           const std::size_t j = static_cast<std::size_t>(i) * c + k;
                           sum_dy[k] += self.grad[j];
                           sum_dy_xhat[k] += self.grad[j] * xhat[j];
                         }
                       if (gin->requires_grad) {
                         Tensor& gg = gin->grad_buffer();
                         for (int k = 0; k < c; ++k) gg[k] += sum_dy_xhat[k];
                       }
                       if (bin->requires_grad) {
                         Tensor& gb = bin->grad_buffer();
                         for (int k = 0; k < c; ++k) gb[k] += sum_dy[k];
                       }
                       if (!xin->requires_grad) return;
                       Tensor& gx = xin->grad_buffer();
                       for (int i = 0; i < n; ++i)
                         for (int k = 0; k < c; ++k) {
                           const std::size_t j = static_cast<std::size_t>(i) * c + k;
                           double d = self.grad[j];
                           if (batch_stats) d -= (sum_dy[k] + xhat[j] * sum_dy_xhat[k]) / n;
                           gx[j] += gamma[k] * inv_std[k] * d;
                         }
                     });
}

}  // namespace rego::ops
