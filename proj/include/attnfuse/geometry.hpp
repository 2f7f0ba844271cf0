#ifndef ATTNFUSE_GEOMETRY_HPP
#define ATTNFUSE_GEOMETRY_HPP

#include "attnfuse/tensor.hpp"

namespace attnfuse {

/// Channelwise bilinear interpolation with half-pixel centers:
/// src = (dst + 0.5) * (src_size / dst_size) - 0.5, clamped to [0, src_size-1].
Tensor3 bilinear_resize(const Tensor3& t, int out_h, int out_w);

/// Exact transpose of the linear map bilinear_resize implements for the same
/// size pair. grad_out has the resized shape; result has (in_h, in_w).
Tensor3 bilinear_resize_adjoint(const Tensor3& grad_out, int in_h, int in_w);

/// Reverse the width axis of every channel.
Tensor3 hflip(const Tensor3& t);

/// Target size for a scale factor: round(scale * size), at least 1.
int scaled_size(double scale_factor, int size);

} // namespace attnfuse

#endif
