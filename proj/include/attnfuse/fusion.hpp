#ifndef ATTNFUSE_FUSION_HPP
#define ATTNFUSE_FUSION_HPP

#include <vector>

#include "attnfuse/backbone.hpp"
#include "attnfuse/tensor.hpp"

namespace attnfuse {

/// Refined multi-scale teacher target: K+1 channels at original resolution,
/// values in [0,1]. After reactivation every pixel's channel maximum is
/// exactly 1 and channels of absent classes are identically zero.
struct FusedTarget {
    Tensor3 maps;
};

/// Resize every per-scale map stack to (out_h, out_w), sum channelwise, then
/// divide each channel by its own maximum. Zero-max channels stay zero.
Tensor3 fuse_scales(const std::vector<Tensor3>& per_scale_maps, int out_h, int out_w);

/// Zero the channel of every foreground class absent from y. The background
/// channel (index 0) is untouched.
Tensor3 denoise(const Tensor3& fused, const LabelVector& y);

/// Overwrite the background channel with thr, then divide every pixel's
/// channel vector by its per-pixel maximum.
FusedTarget reactivate(const Tensor3& fused_denoised, double thr);

/// Multi-scale flip-averaged teacher maps fused to the image's resolution
/// (no denoising / reactivation yet). Teacher parameters are not modified.
Tensor3 teacher_fused_maps(const BackboneParams& teacher, const Tensor3& image,
                           const Hyperparams& hp);

/// Full frozen-teacher target: per-scale forward with flip averaging,
/// fuse_scales, denoise with y, reactivate with hp.thr.
FusedTarget make_teacher_target(const BackboneParams& teacher, const Tensor3& image,
                                const LabelVector& y, const Hyperparams& hp);

/// Throws NumericalError unless the reactivation invariants hold exactly:
/// per-pixel channel max == 1, absent-class channels all zero, values in [0,1].
void validate_target(const FusedTarget& target, const LabelVector& y);

} // namespace attnfuse

#endif
