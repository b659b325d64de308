#pragma once

#include <string>
#include <vector>

#include "rego/autograd.hpp"
#include "rego/nn.hpp"

// Adaptive content selection: a reference-conditioned dynamic convolution
// (kernel net + channel softmax + distillation), input-gated compensation,
// sketch fusion and a seaming block over the left/right feature boundary.

namespace rego {

/// 3x3xc filter bank produced per forward pass. When `normalized`, each of
/// the nine spatial taps holds a softmax distribution over channels.
struct DynamicKernel {
  Var weights;
  bool normalized = false;
};

/// Stride-2 conv + batch-norm + ReLU blocks (no ReLU on the last one),
/// repeated until the grid is at most 6x6, then adaptive pooling to 3x3 and
/// a zero-initialized 1x1 projection to `channels`.
class KernelNet {
 public:
  KernelNet() = default;
  KernelNet(ParamStore& store, const std::string& prefix, int height, int width, int channels, Rng& rng);

  /// Raw (unnormalized) kernel from the channel concatenation of both inputs.
  Var operator()(const Var& ref_feat, const Var& left_feat, ops::NormMode mode) const;
  int depth() const noexcept { return static_cast<int>(convs_.size()); }
  int channels() const noexcept { return channels_; }

 private:
  int height_ = 0, width_ = 0, channels_ = 0;
  std::vector<Conv2d> convs_;
  std::vector<BatchNorm> norms_;
  Conv2d projection_;
};

/// Residual fusion of compensated features with sketch features:
/// out = comp + proj1x1(cat) + conv3x3(relu(conv3x3(cat))), cat = [comp, sketch].
class SketchFuseBlock {
 public:
  SketchFuseBlock() = default;
  SketchFuseBlock(ParamStore& store, const std::string& prefix, int channels, int sketch_channels, Rng& rng);
  Var operator()(const Var& comp, const Var& sketch_feat) const;

 private:
  int channels_ = 0, sketch_channels_ = 0;
  Conv2d proj_, conv1_, conv2_;
};

/// Width concatenation, two global residual blocks (1x3 then 7x1
/// convolutions) and one 3x3 residual block.
class SeamBlock {
 public:
  SeamBlock() = default;
  SeamBlock(ParamStore& store, const std::string& prefix, int channels, Rng& rng);
  Var operator()(const Var& left_feat, const Var& fused) const;

 private:
  struct Grb {
    Conv2d wide, tall;
  };
  Grb grb_[2];
  Conv2d res1_, res2_;
};

struct AcsShape {
  int height = 0;
  int half_width = 0;
  int channels = 0;
  int sketch_channels = 0;
};

/// One ACS instance; parameters live under `<prefix>.{psi,fuse,seam}`.
class AcsModule {
 public:
  AcsModule() = default;
  AcsModule(ParamStore& store, const std::string& prefix, AcsShape shape, Rng& rng);

  const AcsShape& shape() const noexcept { return shape_; }
  const KernelNet& kernel_net() const noexcept { return psi_; }
  const SketchFuseBlock& fuse_block() const noexcept { return fuse_; }
  const SeamBlock& seam_block() const noexcept { return seam_; }

 private:
  AcsShape shape_;
  KernelNet psi_;
  SketchFuseBlock fuse_;
  SeamBlock seam_;
};

DynamicKernel compute_dynamic_kernel(const Var& ref_feat, const Var& left_feat, const KernelNet& net,
                                     ops::NormMode mode);
/// Softmax over channels at every spatial tap (max-subtracted).
DynamicKernel normalize_kernel(const DynamicKernel& kernel);
/// Output channel i = ref (*) [tap slice i replicated over all input channels];
/// stride 1, zero padding 1.
Var distill_reference(const Var& ref_feat, const DynamicKernel& kernel);
/// pred + distilled + left * sigmoid(flip_w(left) * pred)
Var compensate(const Var& pred_feat, const Var& distilled, const Var& left_feat);
Var sketch_fuse(const Var& comp_feat, const Var& sketch_feat, const SketchFuseBlock& block);
Var seam(const Var& left_feat, const Var& fused, const SeamBlock& block);
/// Full pipeline on F = [F_L | F_R] (h x 2w x c); returns h x 2w x c.
Var acs_forward(const Var& features, const Var& ref_feat, const Var& sketch_feat, const AcsModule& module,
                ops::NormMode mode);

}  // namespace rego
