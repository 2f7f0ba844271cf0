#include "attnfuse/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace attnfuse {

namespace {

// Per-axis interpolation tap: out[d] = w0 * in[i0] + w1 * in[i1].
struct Tap {
    int i0, i1;
    double w0, w1;
};

std::vector<Tap> make_taps(int src, int dst) {
    std::vector<Tap> taps(dst);
    const double ratio = static_cast<double>(src) / dst;
    for (int d = 0; d < dst; ++d) {
        double s = (d + 0.5) * ratio - 0.5;
        s = std::clamp(s, 0.0, static_cast<double>(src - 1));
        const int i0 = static_cast<int>(std::floor(s));
        const int i1 = std::min(i0 + 1, src - 1);
        const double f = s - i0;
        taps[d] = {i0, i1, 1.0 - f, f};
    }
    return taps;
}

} // namespace

Tensor3 bilinear_resize(const Tensor3& t, int out_h, int out_w) {
    if (out_h < 1 || out_w < 1)
        throw std::invalid_argument("bilinear_resize: target size must be >= 1");
    if (out_h == t.height && out_w == t.width) return t;

    const auto ys = make_taps(t.height, out_h);
    const auto xs = make_taps(t.width, out_w);
    Tensor3 out(t.channels, out_h, out_w);
    for (int c = 0; c < t.channels; ++c) {
        const double* src = t.channel(c);
        double* dst = out.channel(c);
        for (int y = 0; y < out_h; ++y) {
            const Tap& ty = ys[y];
            const double* r0 = src + static_cast<std::size_t>(ty.i0) * t.width;
            const double* r1 = src + static_cast<std::size_t>(ty.i1) * t.width;
            double* orow = dst + static_cast<std::size_t>(y) * out_w;
            for (int x = 0; x < out_w; ++x) {
                const Tap& tx = xs[x];
                const double top = tx.w0 * r0[tx.i0] + tx.w1 * r0[tx.i1];
                const double bot = tx.w0 * r1[tx.i0] + tx.w1 * r1[tx.i1];
                orow[x] = ty.w0 * top + ty.w1 * bot;
            }
        }
    }
    return out;
}

Tensor3 bilinear_resize_adjoint(const Tensor3& grad_out, int in_h, int in_w) {
    if (in_h < 1 || in_w < 1)
        throw std::invalid_argument("bilinear_resize_adjoint: source size must be >= 1");
    if (in_h == grad_out.height && in_w == grad_out.width) return grad_out;

    const auto ys = make_taps(in_h, grad_out.height);
    const auto xs = make_taps(in_w, grad_out.width);
    Tensor3 out(grad_out.channels, in_h, in_w);
    for (int c = 0; c < grad_out.channels; ++c) {
        const double* g = grad_out.channel(c);
        double* dst = out.channel(c);
        for (int y = 0; y < grad_out.height; ++y) {
            const Tap& ty = ys[y];
            double* r0 = dst + static_cast<std::size_t>(ty.i0) * in_w;
            double* r1 = dst + static_cast<std::size_t>(ty.i1) * in_w;
            const double* grow = g + static_cast<std::size_t>(y) * grad_out.width;
            for (int x = 0; x < grad_out.width; ++x) {
                const Tap& tx = xs[x];
                const double v = grow[x];
                r0[tx.i0] += ty.w0 * tx.w0 * v;
                r0[tx.i1] += ty.w0 * tx.w1 * v;
                r1[tx.i0] += ty.w1 * tx.w0 * v;
                r1[tx.i1] += ty.w1 * tx.w1 * v;
            }
        }
    }
    return out;
}

Tensor3 hflip(const Tensor3& t) {
    Tensor3 out = t;
    for (int c = 0; c < t.channels; ++c) {
        for (int y = 0; y < t.height; ++y) {
            double* row = out.channel(c) + static_cast<std::size_t>(y) * t.width;
            std::reverse(row, row + t.width);
        }
    }
    return out;
}

int scaled_size(double scale_factor, int size) {
    return std::max(1, static_cast<int>(std::lround(scale_factor * size)));
}

} // namespace attnfuse
