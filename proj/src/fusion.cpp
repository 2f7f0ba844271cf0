#include "attnfuse/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "attnfuse/errors.hpp"
#include "attnfuse/geometry.hpp"

namespace attnfuse {

Tensor3 fuse_scales(const std::vector<Tensor3>& per_scale_maps, int out_h, int out_w) {
    if (per_scale_maps.empty())
        throw std::invalid_argument("fuse_scales: need at least one per-scale map");
    const int kc = per_scale_maps.front().channels;
    for (const Tensor3& m : per_scale_maps) {
        if (m.channels != kc) {
            throw std::invalid_argument("fuse_scales: channel count mismatch across scales, " +
                                        per_scale_maps.front().shape_str() + " vs " +
                                        m.shape_str());
        }
    }
    Tensor3 sum(kc, out_h, out_w);
    for (const Tensor3& m : per_scale_maps) {
        const Tensor3 r = bilinear_resize(m, out_h, out_w);
        for (std::size_t i = 0; i < sum.size(); ++i) sum.data[i] += r.data[i];
    }
    return normalize_per_channel(sum);
}

Tensor3 denoise(const Tensor3& fused, const LabelVector& y) {
    if (fused.channels != y.k() + 1) {
        throw std::invalid_argument("denoise: " + std::to_string(fused.channels) +
                                    " channels vs " + std::to_string(y.k()) + " labels");
    }
    Tensor3 out = fused;
    for (int k = 1; k < fused.channels; ++k) {
        if (!y.present[k - 1]) {
            double* p = out.channel(k);
            std::fill(p, p + out.plane(), 0.0);
        }
    }
    return out;
}

FusedTarget reactivate(const Tensor3& fused_denoised, double thr) {
    if (!(thr > 0.0 && thr < 1.0))
        throw std::invalid_argument("reactivate: thr must be in (0,1)");
    Tensor3 out = fused_denoised;
    const std::size_t hw = out.plane();
    double* bg = out.channel(0);
    std::fill(bg, bg + hw, thr);
    for (std::size_t i = 0; i < hw; ++i) {
        double mx = thr;
        for (int c = 1; c < out.channels; ++c) mx = std::max(mx, out.channel(c)[i]);
        for (int c = 0; c < out.channels; ++c) out.channel(c)[i] /= mx;
    }
    return FusedTarget{std::move(out)};
}

Tensor3 teacher_fused_maps(const BackboneParams& teacher, const Tensor3& image,
                           const Hyperparams& hp) {
    std::vector<Tensor3> per_scale;
    per_scale.reserve(hp.scales.size());
    for (double s : hp.scales) {
        const int sh = scaled_size(s, image.height);
        const int sw = scaled_size(s, image.width);
        const Tensor3 scaled = bilinear_resize(image, sh, sw);
        const Tensor3 straight = forward(teacher, scaled).attn;
        const Tensor3 flipped = hflip(forward(teacher, hflip(scaled)).attn);
        per_scale.push_back(scale(add(straight, flipped), 0.5));
    }
    return fuse_scales(per_scale, image.height, image.width);
}

FusedTarget make_teacher_target(const BackboneParams& teacher, const Tensor3& image,
                                const LabelVector& y, const Hyperparams& hp) {
    return reactivate(denoise(teacher_fused_maps(teacher, image, hp), y), hp.thr);
}

void validate_target(const FusedTarget& target, const LabelVector& y) {
    const Tensor3& t = target.maps;
    if (t.channels != y.k() + 1) throw NumericalError("target: channel/label count mismatch");
    const std::size_t hw = t.plane();
    for (int k = 1; k < t.channels; ++k) {
        if (y.present[k - 1]) continue;
        const double* p = t.channel(k);
        for (std::size_t i = 0; i < hw; ++i) {
            if (p[i] != 0.0) throw NumericalError("target: absent-class channel not zero");
        }
    }
    for (std::size_t i = 0; i < hw; ++i) {
        double mx = 0.0;
        for (int c = 0; c < t.channels; ++c) {
            const double v = t.channel(c)[i];
            if (!(v >= 0.0 && v <= 1.0)) throw NumericalError("target: value outside [0,1]");
            mx = std::max(mx, v);
        }
        if (mx != 1.0) throw NumericalError("target: per-pixel channel max != 1");
    }
}

} // namespace attnfuse
