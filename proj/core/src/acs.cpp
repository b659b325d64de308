#include "rego/acs.hpp"

#include <algorithm>
#include <cmath>

#include "rego/errors.hpp"

namespace rego {
namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (!a.same_shape(b)) throw ShapeError(std::string(what) + ": " + a.shape_string() + " vs " + b.shape_string());
}

constexpr int kTaps = 9;

}  // namespace

KernelNet::KernelNet(ParamStore& store, const std::string& prefix, int height, int width, int channels, Rng& rng)
    : height_(height), width_(width), channels_(channels) {
  if (height < 3 || width < 3) {
    throw ConfigError("kernel net: spatial size " + std::to_string(height) + "x" + std::to_string(width) +
                      " is below 3");
  }
  if (channels < 1) throw ConfigError("kernel net: channels must be positive");
  int h = height, w = width;
  do {
    const int i = static_cast<int>(convs_.size());
    const int in = i == 0 ? 2 * channels : channels;
    convs_.emplace_back(store, prefix + ".conv" + std::to_string(i), ConvSpec{3, 3, in, channels, 2, false}, rng);
    norms_.emplace_back(store, prefix + ".bn" + std::to_string(i), channels);
    h = (h + 1) / 2;
    w = (w + 1) / 2;
  } while (h > 6 || w > 6);
  projection_ = Conv2d(store, prefix + ".proj", ConvSpec{1, 1, channels, channels, 1, true, Init::Zero}, rng);
}

Var KernelNet::operator()(const Var& ref_feat, const Var& left_feat, ops::NormMode mode) const {
  require_rank3(ref_feat.value(), "compute_dynamic_kernel");
  require_same_shape(ref_feat.value(), left_feat.value(), "compute_dynamic_kernel");
  const Tensor& r = ref_feat.value();
  if (r.height() < 3 || r.width() < 3) {
    throw ConfigError("compute_dynamic_kernel: spatial size " + r.shape_string() + " is below 3");
  }
  if (r.height() != height_ || r.width() != width_ || r.channels() != channels_) {
    throw ShapeError("compute_dynamic_kernel: built for " + std::to_string(height_) + "x" + std::to_string(width_) +
                     "x" + std::to_string(channels_) + ", got " + r.shape_string());
  }
  Var x = ops::concat_channels(ref_feat, left_feat);
  for (std::size_t i = 0; i < convs_.size(); ++i) {
    x = norms_[i](convs_[i](x), mode);
    if (i + 1 < convs_.size()) x = ops::relu(x);
  }
  x = ops::adaptive_avg_pool(x, 3, 3);
  return projection_(x);
}

SketchFuseBlock::SketchFuseBlock(ParamStore& store, const std::string& prefix, int channels, int sketch_channels,
                                 Rng& rng)
    : channels_(channels), sketch_channels_(sketch_channels) {
  const int cat = channels + sketch_channels;
  proj_ = Conv2d(store, prefix + ".proj", ConvSpec{1, 1, cat, channels, 1, true}, rng);
  conv1_ = Conv2d(store, prefix + ".conv1", ConvSpec{3, 3, cat, channels, 1, true}, rng);
  conv2_ = Conv2d(store, prefix + ".conv2", ConvSpec{3, 3, channels, channels, 1, true}, rng);
}

Var SketchFuseBlock::operator()(const Var& comp, const Var& sketch_feat) const {
  const Tensor& c = comp.value();
  const Tensor& s = sketch_feat.value();
  require_rank3(c, "sketch_fuse");
  require_rank3(s, "sketch_fuse");
  if (c.height() != s.height() || c.width() != s.width()) {
    throw ShapeError("sketch_fuse: spatial mismatch " + c.shape_string() + " vs " + s.shape_string());
  }
  if (c.channels() != channels_ || s.channels() != sketch_channels_) {
    throw ShapeError("sketch_fuse: channel mismatch " + c.shape_string() + " / " + s.shape_string());
  }
  const Var cat = ops::concat_channels(comp, sketch_feat);
  const Var main = conv2_(ops::relu(conv1_(cat)));
  return ops::add(ops::add(comp, proj_(cat)), main);
}

SeamBlock::SeamBlock(ParamStore& store, const std::string& prefix, int channels, Rng& rng) {
  for (int i = 0; i < 2; ++i) {
    const std::string p = prefix + ".grb" + std::to_string(i);
    grb_[i].wide = Conv2d(store, p + ".conv1x3", ConvSpec{1, 3, channels, channels, 1, true}, rng);
    grb_[i].tall = Conv2d(store, p + ".conv7x1", ConvSpec{7, 1, channels, channels, 1, true}, rng);
  }
  res1_ = Conv2d(store, prefix + ".res.conv1", ConvSpec{3, 3, channels, channels, 1, true}, rng);
  res2_ = Conv2d(store, prefix + ".res.conv2", ConvSpec{3, 3, channels, channels, 1, true}, rng);
}

Var SeamBlock::operator()(const Var& left_feat, const Var& fused) const {
  require_same_shape(left_feat.value(), fused.value(), "seam");
  Var x = ops::concat_width(left_feat, fused);
  for (const auto& g : grb_) x = ops::add(x, g.tall(ops::relu(g.wide(x))));
  return ops::add(x, res2_(ops::relu(res1_(x))));
}

AcsModule::AcsModule(ParamStore& store, const std::string& prefix, AcsShape shape, Rng& rng)
    : shape_(shape),
      psi_(store, prefix + ".psi", shape.height, shape.half_width, shape.channels, rng),
      fuse_(store, prefix + ".fuse", shape.channels, shape.sketch_channels, rng),
      seam_(store, prefix + ".seam", shape.channels, rng) {}

DynamicKernel compute_dynamic_kernel(const Var& ref_feat, const Var& left_feat, const KernelNet& net,
                                     ops::NormMode mode) {
  return {net(ref_feat, left_feat, mode), false};
}

DynamicKernel normalize_kernel(const DynamicKernel& kernel) {
  const Tensor& k = kernel.weights.value();
  if (k.rank() != 3 || k.height() != 3 || k.width() != 3) {
    throw ShapeError("normalize_kernel: expected 3x3xc, got " + k.shape_string());
  }
  if (!k.all_finite()) throw InvalidValueError("normalize_kernel: non-finite kernel entry");
  const int c = k.channels();
  Tensor out(k.dims());
  for (int t = 0; t < kTaps; ++t) {
    const double* src = k.data() + static_cast<std::size_t>(t) * c;
    double* dst = out.data() + static_cast<std::size_t>(t) * c;
    const double peak = *std::max_element(src, src + c);
    double z = 0.0;
    for (int i = 0; i < c; ++i) z += (dst[i] = std::exp(src[i] - peak));
    for (int i = 0; i < c; ++i) dst[i] /= z;
  }
  Var w = make_result(std::move(out), {kernel.weights}, [c](Node& self) {
    const NodePtr& in = self.inputs[0];
    if (!in->requires_grad) return;
    Tensor& g = in->grad_buffer();
    for (int t = 0; t < kTaps; ++t) {
      const std::size_t off = static_cast<std::size_t>(t) * c;
      double dot = 0.0;
      for (int i = 0; i < c; ++i) dot += self.grad[off + i] * self.value[off + i];
      for (int i = 0; i < c; ++i) g[off + i] += self.value[off + i] * (self.grad[off + i] - dot);
    }
  });
  return {w, true};
}

Var distill_reference(const Var& ref_feat, const DynamicKernel& kernel) {
  if (!kernel.normalized) throw ContractError("distill_reference requires a normalized kernel");
  const Tensor& ref = ref_feat.value();
  const Tensor& kn = kernel.weights.value();
  require_rank3(ref, "distill_reference");
  if (kn.rank() != 3 || kn.height() != 3 || kn.width() != 3) {
    throw ShapeError("distill_reference: kernel must be 3x3xc, got " + kn.shape_string());
  }
  if (kn.channels() != ref.channels()) {
    throw ShapeError("distill_reference: kernel " + kn.shape_string() + " vs features " + ref.shape_string());
  }
  const int h = ref.height(), w = ref.width(), c = ref.channels();

  // Each output channel filters every input channel with the same 3x3 slice,
  // so the input collapses to its channel sum first.
  Tensor summed({h, w, 1});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double s = 0.0;
      for (int k = 0; k < c; ++k) s += ref.at(y, x, k);
      summed.at(y, x, 0) = s;
    }

  Tensor out({h, w, c});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      for (int ky = 0; ky < 3; ++ky) {
        const int iy = y + ky - 1;
        if (iy < 0 || iy >= h) continue;
        for (int kx = 0; kx < 3; ++kx) {
          const int ix = x + kx - 1;
          if (ix < 0 || ix >= w) continue;
          const double s = summed.at(iy, ix, 0);
          const double* tap = kn.data() + kn.offset(ky, kx, 0);
          double* dst = &out.at(y, x, 0);
          for (int i = 0; i < c; ++i) dst[i] += tap[i] * s;
        }
      }

  return make_result(std::move(out), {ref_feat, kernel.weights},
                     [summed = std::move(summed), h, w, c](Node& self) {
                       const NodePtr& rin = self.inputs[0];
                       const NodePtr& kin = self.inputs[1];
                       const Tensor& kn = kin->value;
                       Tensor dsum({h, w, 1});
                       Tensor* gk = kin->requires_grad ? &kin->grad_buffer() : nullptr;
                       for (int y = 0; y < h; ++y)
                         for (int x = 0; x < w; ++x) {
                           const double* g = &self.grad.at(y, x, 0);
                           for (int ky = 0; ky < 3; ++ky) {
                             const int iy = y + ky - 1;
                             if (iy < 0 || iy >= h) continue;
                             for (int kx = 0; kx < 3; ++kx) {
                               const int ix = x + kx - 1;
                               if (ix < 0 || ix >= w) continue;
                               const double s = summed.at(iy, ix, 0);
                               const double* tap = kn.data() + kn.offset(ky, kx, 0);
                               double acc = 0.0;
                               for (int i = 0; i < c; ++i) acc += g[i] * tap[i];
                               dsum.at(iy, ix, 0) += acc;
                               if (gk) {
                                 double* gt = &gk->at(ky, kx, 0);
                                 for (int i = 0; i < c; ++i) gt[i] += g[i] * s;
                               }
                             }
                           }
                         }
                       if (!rin->requires_grad) return;
                       Tensor& gr = rin->grad_buffer();
                       for (int y = 0; y < h; ++y)
                         for (int x = 0; x < w; ++x) {
                           const double d = dsum.at(y, x, 0);
                           for (int k = 0; k < c; ++k) gr.at(y, x, k) += d;
                         }
                     });
}

Var compensate(const Var& pred_feat, const Var& distilled, const Var& left_feat) {
  require_rank3(pred_feat.value(), "compensate");
  require_same_shape(pred_feat.value(), distilled.value(), "compensate");
  require_same_shape(pred_feat.value(), left_feat.value(), "compensate");
  const Var gate = ops::sigmoid(ops::mul(ops::flip_width(left_feat), pred_feat));
  return ops::add(ops::add(pred_feat, distilled), ops::mul(left_feat, gate));
}

Var sketch_fuse(const Var& comp_feat, const Var& sketch_feat, const SketchFuseBlock& block) {
  return block(comp_feat, sketch_feat);
}

Var seam(const Var& left_feat, const Var& fused, const SeamBlock& block) { return block(left_feat, fused); }

Var acs_forward(const Var& features, const Var& ref_feat, const Var& sketch_feat, const AcsModule& module,
                ops::NormMode mode) {
  const Tensor& f = features.value();
  require_rank3(f, "acs_forward");
  if (f.width() % 2 != 0) throw ShapeError("acs_forward: feature width must be even, got " + f.shape_string());
  const int w = f.width() / 2;
  const AcsShape& s = module.shape();
  if (f.height() != s.height || w != s.half_width || f.channels() != s.channels) {
    throw ShapeError("acs_forward: module built for " + std::to_string(s.height) + "x" +
                     std::to_string(2 * s.half_width) + "x" + std::to_string(s.channels) + ", got " +
                     f.shape_string());
  }
  const Var left = ops::slice_width(features, 0, w);
  const Var right = ops::slice_width(features, w, w);
  const DynamicKernel kernel = normalize_kernel(compute_dynamic_kernel(ref_feat, left, module.kernel_net(), mode));
  const Var distilled = distill_reference(ref_feat, kernel);
  const Var comp = compensate(right, distilled, left);
  const Var fused = sketch_fuse(comp, sketch_feat, module.fuse_block());
  return seam(left, fused, module.seam_block());
}

}  // namespace rego
