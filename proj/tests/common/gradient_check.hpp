// Central-difference gradient oracle for the backbone + loss composition.
//
// The backward pass treats the per-channel normalization maxima as constants
// and the relu gates as the fixed selection taken at the evaluation point, so
// the finite differences here differentiate exactly that function: the
// forward is re-run with the gates and denominators captured from the
// unperturbed pass. Only forward-path primitives are used; the backward pass
// under test is never called on the oracle side.
#ifndef ATTNFUSE_TESTS_GRADIENT_CHECK_HPP
#define ATTNFUSE_TESTS_GRADIENT_CHECK_HPP

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "attnfuse/backbone.hpp"
#include "attnfuse/io.hpp"
#include "attnfuse/losses.hpp"
#include "attnfuse/tensor.hpp"

namespace testgrad {

struct Instance {
    attnfuse::BackboneParams params;
    attnfuse::Tensor3 image;
    attnfuse::LabelVector y;
    attnfuse::Tensor3 target;
    double alpha = 100.0;
};

inline Instance random_instance(std::uint64_t seed, int k = 3, int h = 8, int w = 8,
                                double alpha = 100.0) {
    Instance inst;
    inst.params = attnfuse::init_backbone(seed, k);
    std::mt19937_64 rng(seed ^ 0xabcdef1234567890ull);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    inst.image = attnfuse::Tensor3(3, h, w);
    for (double& v : inst.image.data) v = uni(rng);
    std::vector<std::uint8_t> flags(k, 0);
    for (auto& f : flags) f = uni(rng) < 0.5 ? 1 : 0;
    flags[static_cast<std::size_t>(uni(rng) * k) % k] = 1;
    inst.y = attnfuse::LabelVector(flags);
    inst.target = attnfuse::Tensor3(k + 1, h, w);
    for (double& v : inst.target.data) v = uni(rng);
    inst.alpha = alpha;
    return inst;
}

struct Selection {
    attnfuse::Tensor3 m1, m2, m3;
    std::vector<double> denom;
};

inline attnfuse::Tensor3 positive_mask(const attnfuse::Tensor3& pre) {
    attnfuse::Tensor3 m = pre;
    for (double& v : m.data) v = v > 0.0 ? 1.0 : 0.0;
    return m;
}

inline Selection capture_selection(const attnfuse::ForwardCache& cache) {
    return {positive_mask(cache.pre1), positive_mask(cache.pre2), positive_mask(cache.raw),
            cache.denom};
}

inline double gated_loss(const attnfuse::BackboneParams& p, const attnfuse::Tensor3& image,
                         const Selection& sel, const attnfuse::LabelVector& y,
                         const attnfuse::Tensor3& target, double alpha) {
    using namespace attnfuse;
    Tensor3 a1, a2, raw;
    conv3x3_forward(p.layers[0], image, a1);
    a1 = hadamard(a1, sel.m1);
    conv3x3_forward(p.layers[1], a1, a2);
    a2 = hadamard(a2, sel.m2);
    conv3x3_forward(p.layers[2], a2, raw);
    const Tensor3 rr = hadamard(raw, sel.m3);

    Tensor3 attn(rr.channels, rr.height, rr.width);
    const std::size_t hw = rr.plane();
    for (int c = 0; c < rr.channels; ++c) {
        if (sel.denom[c] < kNormEps) continue;
        const double* src = rr.channel(c);
        double* dst = attn.channel(c);
        for (std::size_t i = 0; i < hw; ++i) dst[i] = src[i] / sel.denom[c];
    }
    std::vector<double> logits(rr.channels - 1);
    for (int c = 1; c < rr.channels; ++c) {
        const double* src = rr.channel(c);
        double sum = 0.0;
        for (std::size_t i = 0; i < hw; ++i) sum += src[i];
        logits[c - 1] = sum / static_cast<double>(hw);
    }
    double loss = classification_loss(logits, y).value;
    if (alpha > 0.0) loss += alpha * mac_loss(target, attn).value;
    return loss;
}

struct Report {
    double max_rel_err = 0.0;
    double max_abs_err = 0.0;
    std::size_t checked = 0;
};

inline double component_rel_err(double analytic, double fd) {
    if (std::abs(analytic) < 1e-12 && std::abs(fd) < 1e-12) return 0.0;
    return std::abs(analytic - fd) / std::max({std::abs(analytic), std::abs(fd), 1e-10});
}

inline Report check_param_gradients(const Instance& inst, double fd_h = 1e-3, int threads = 0) {
    using namespace attnfuse;
    ForwardCache cache;
    const ForwardResult fwd = forward(inst.params, inst.image, &cache);
    const Selection sel = capture_selection(cache);
    const ClsLossResult cls = classification_loss(fwd.pred.logits, inst.y);
    const MacLossResult mac = mac_loss(inst.target, fwd.attn);
    const Gradients grads =
        backward(inst.params, cache, scale(mac.grad_attn, inst.alpha), cls.grad_logits);

    struct Slot {
        int layer;
        bool bias;
        std::size_t idx;
        double analytic;
    };
    std::vector<Slot> slots;
    for (int l = 0; l < static_cast<int>(inst.params.layers.size()); ++l) {
        for (std::size_t i = 0; i < inst.params.layers[l].w.size(); ++i)
            slots.push_back({l, false, i, grads.layers[l].w[i]});
        for (std::size_t i = 0; i < inst.params.layers[l].b.size(); ++i)
            slots.push_back({l, true, i, grads.layers[l].b[i]});
    }

    std::vector<double> fd(slots.size(), 0.0);
    if (threads <= 0) threads = default_thread_count();
    const int chunks = std::min<int>(threads * 4, static_cast<int>(slots.size()));
    const std::size_t per = (slots.size() + chunks - 1) / chunks;
    parallel_for(chunks, threads, [&](int chunk) {
        BackboneParams local = inst.params;
        const std::size_t begin = chunk * per;
        const std::size_t end = std::min(slots.size(), begin + per);
        for (std::size_t s = begin; s < end; ++s) {
            const Slot& slot = slots[s];
            double& ref = slot.bias ? local.layers[slot.layer].b[slot.idx]
                                    : local.layers[slot.layer].w[slot.idx];
            const double orig = ref;
            ref = orig + fd_h;
            const double lp = gated_loss(local, inst.image, sel, inst.y, inst.target, inst.alpha);
            ref = orig - fd_h;
            const double lm = gated_loss(local, inst.image, sel, inst.y, inst.target, inst.alpha);
            ref = orig;
            fd[s] = (lp - lm) / (2.0 * fd_h);
        }
    });

    Report report;
    report.checked = slots.size();
    for (std::size_t s = 0; s < slots.size(); ++s) {
        report.max_rel_err = std::max(report.max_rel_err, component_rel_err(slots[s].analytic, fd[s]));
        report.max_abs_err = std::max(report.max_abs_err, std::abs(slots[s].analytic - fd[s]));
    }
    return report;
}

inline Report check_input_gradient(const Instance& inst, double fd_h = 1e-3) {
    using namespace attnfuse;
    ForwardCache cache;
    const ForwardResult fwd = forward(inst.params, inst.image, &cache);
    const Selection sel = capture_selection(cache);
    const ClsLossResult cls = classification_loss(fwd.pred.logits, inst.y);
    const MacLossResult mac = mac_loss(inst.target, fwd.attn);
    Tensor3 grad_input;
    backward(inst.params, cache, scale(mac.grad_attn, inst.alpha), cls.grad_logits, &grad_input);

    Report report;
    report.checked = inst.image.size();
    Tensor3 image = inst.image;
    for (std::size_t i = 0; i < image.size(); ++i) {
        const double orig = image.data[i];
        image.data[i] = orig + fd_h;
        const double lp = gated_loss(inst.params, image, sel, inst.y, inst.target, inst.alpha);
        image.data[i] = orig - fd_h;
        const double lm = gated_loss(inst.params, image, sel, inst.y, inst.target, inst.alpha);
        image.data[i] = orig;
        const double fd = (lp - lm) / (2.0 * fd_h);
        report.max_rel_err = std::max(report.max_rel_err, component_rel_err(grad_input.data[i], fd));
        report.max_abs_err = std::max(report.max_abs_err, std::abs(grad_input.data[i] - fd));
    }
    return report;
}

} // namespace testgrad

#endif
