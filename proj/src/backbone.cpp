#include "attnfuse/backbone.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>

#include "attnfuse/errors.hpp"

namespace attnfuse {

namespace {

constexpr int kInputChannels = 3;
constexpr int kHidden1 = 16;
constexpr int kHidden2 = 32;

void require(bool ok, const char* msg) {
    if (!ok) throw std::invalid_argument(msg);
}

} // namespace

bool BackboneParams::same_shape(const BackboneParams& o) const {
    if (layers.size() != o.layers.size()) return false;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        if (layers[i].out_ch != o.layers[i].out_ch || layers[i].in_ch != o.layers[i].in_ch)
            return false;
    }
    return true;
}

bool BackboneParams::bit_equal(const BackboneParams& o) const {
    if (!same_shape(o)) return false;
    for (std::size_t i = 0; i < layers.size(); ++i) {
        if (layers[i].w != o.layers[i].w || layers[i].b != o.layers[i].b) return false;
        if (momentum[i].w != o.momentum[i].w || momentum[i].b != o.momentum[i].b) return false;
    }
    return true;
}

void Gradients::add(const Gradients& o) {
    for (std::size_t l = 0; l < layers.size(); ++l) {
        for (std::size_t i = 0; i < layers[l].w.size(); ++i) layers[l].w[i] += o.layers[l].w[i];
        for (std::size_t i = 0; i < layers[l].b.size(); ++i) layers[l].b[i] += o.layers[l].b[i];
    }
}

void Gradients::scale_by(double s) {
    for (auto& l : layers) {
        for (double& v : l.w) v *= s;
        for (double& v : l.b) v *= s;
    }
}

BackboneParams init_backbone(std::uint64_t seed, int k) {
    require(k >= 1, "init_backbone: need at least one foreground class");
    const int chans[4] = {kInputChannels, kHidden1, kHidden2, k + 1};
    BackboneParams p;
    std::mt19937_64 rng(seed);
    for (int l = 0; l < 3; ++l) {
        ConvLayerParams layer(chans[l + 1], chans[l]);
        const double stddev = std::sqrt(2.0 / (layer.in_ch * 9));
        std::normal_distribution<double> dist(0.0, stddev);
        for (double& v : layer.w) v = dist(rng);
        p.layers.push_back(std::move(layer));
        p.momentum.emplace_back(chans[l + 1], chans[l]);
    }
    return p;
}

void conv3x3_forward(const ConvLayerParams& p, const Tensor3& in, Tensor3& out) {
    require(in.channels == p.in_ch, "conv3x3_forward: input channel mismatch");
    const int h = in.height, w = in.width;
    if (out.channels != p.out_ch || out.height != h || out.width != w)
        out = Tensor3(p.out_ch, h, w);
    for (int oc = 0; oc < p.out_ch; ++oc) {
        double* op = out.channel(oc);
        std::fill(op, op + out.plane(), p.b[oc]);
        for (int ic = 0; ic < p.in_ch; ++ic) {
            const double* xp = in.channel(ic);
            const double* kp = p.kernel(oc, ic);
            for (int ky = 0; ky < 3; ++ky) {
                const int dy = ky - 1;
                const int y0 = std::max(0, -dy), y1 = std::min(h, h - dy);
                for (int kx = 0; kx < 3; ++kx) {
                    const int dx = kx - 1;
                    const double wv = kp[ky * 3 + kx];
                    const int x0 = std::max(0, -dx), x1 = std::min(w, w - dx);
                    for (int y = y0; y < y1; ++y) {
                        double* orow = op + static_cast<std::size_t>(y) * w;
                        const double* xrow = xp + static_cast<std::size_t>(y + dy) * w + dx;
                        for (int x = x0; x < x1; ++x) orow[x] += wv * xrow[x];
                    }
                }
            }
        }
    }
}

namespace {

// Gradients w.r.t. one layer's weights/biases and its input.
void conv3x3_backward(const ConvLayerParams& p, const Tensor3& in, const Tensor3& grad_out,
                      ConvLayerParams& grad_layer, Tensor3* grad_in) {
    const int h = in.height, w = in.width;
    for (int oc = 0; oc < p.out_ch; ++oc) {
        const double* gp = grad_out.channel(oc);
        double bsum = 0.0;
        for (std::size_t i = 0; i < grad_out.plane(); ++i) bsum += gp[i];
        grad_layer.b[oc] = bsum;
        for (int ic = 0; ic < p.in_ch; ++ic) {
            const double* xp = in.channel(ic);
            double* gk = grad_layer.kernel(oc, ic);
            for (int ky = 0; ky < 3; ++ky) {
                const int dy = ky - 1;
                const int y0 = std::max(0, -dy), y1 = std::min(h, h - dy);
                for (int kx = 0; kx < 3; ++kx) {
                    const int dx = kx - 1;
                    const int x0 = std::max(0, -dx), x1 = std::min(w, w - dx);
                    double acc = 0.0;
                    for (int y = y0; y < y1; ++y) {
                        const double* grow = gp + static_cast<std::size_t>(y) * w;
                        const double* xrow = xp + static_cast<std::size_t>(y + dy) * w + dx;
                        for (int x = x0; x < x1; ++x) acc += grow[x] * xrow[x];
                    }
                    gk[ky * 3 + kx] = acc;
                }
            }
        }
    }
    if (grad_in == nullptr) return;
    *grad_in = Tensor3(p.in_ch, h, w);
    for (int ic = 0; ic < p.in_ch; ++ic) {
        double* dst = grad_in->channel(ic);
        for (int oc = 0; oc < p.out_ch; ++oc) {
            const double* gp = grad_out.channel(oc);
            const double* kp = p.kernel(oc, ic);
            // d in[ic][y][x] receives w[ky][kx] * g_out[y - (ky-1)][x - (kx-1)]
            for (int ky = 0; ky < 3; ++ky) {
                const int dy = 1 - ky;
                const int y0 = std::max(0, -dy), y1 = std::min(h, h - dy);
                for (int kx = 0; kx < 3; ++kx) {
                    const int dx = 1 - kx;
                    const double wv = kp[ky * 3 + kx];
                    const int x0 = std::max(0, -dx), x1 = std::min(w, w - dx);
                    for (int y = y0; y < y1; ++y) {
                        double* drow = dst + static_cast<std::size_t>(y) * w;
                        const double* grow = gp + static_cast<std::size_t>(y + dy) * w + dx;
                        for (int x = x0; x < x1; ++x) drow[x] += wv * grow[x];
                    }
                }
            }
        }
    }
}

void relu_inplace(Tensor3& t) {
    for (double& v : t.data) v = v > 0.0 ? v : 0.0;
}

// grad_pre = grad_act where pre > 0, else 0.
void relu_mask_inplace(Tensor3& grad_act, const Tensor3& pre) {
    for (std::size_t i = 0; i < grad_act.size(); ++i) {
        if (!(pre.data[i] > 0.0)) grad_act.data[i] = 0.0;
    }
}

} // namespace

ForwardResult forward(const BackboneParams& params, const Tensor3& image, ForwardCache* cache) {
    require(params.layers.size() == 3, "forward: expected a 3-layer backbone");
    if (image.channels != kInputChannels) {
        throw std::invalid_argument("forward: image must have 3 channels, got " +
                                    image.shape_str());
    }
    ForwardCache local;
    ForwardCache& c = cache ? *cache : local;
    c.input = image;
    conv3x3_forward(params.layers[0], c.input, c.pre1);
    c.act1 = c.pre1;
    relu_inplace(c.act1);
    conv3x3_forward(params.layers[1], c.act1, c.pre2);
    c.act2 = c.pre2;
    relu_inplace(c.act2);
    conv3x3_forward(params.layers[2], c.act2, c.raw);
    c.relu_raw = c.raw;
    relu_inplace(c.relu_raw);

    const int kc = c.raw.channels;
    c.denom.assign(kc, 0.0);
    const std::size_t hw = c.raw.plane();
    for (int ch = 0; ch < kc; ++ch) {
        const double* p = c.relu_raw.channel(ch);
        double mx = 0.0;
        for (std::size_t i = 0; i < hw; ++i) mx = std::max(mx, p[i]);
        c.denom[ch] = mx;
    }

    ForwardResult out;
    out.raw = c.raw;
    out.attn = Tensor3(kc, c.raw.height, c.raw.width);
    for (int ch = 0; ch < kc; ++ch) {
        const double* src = c.relu_raw.channel(ch);
        double* dst = out.attn.channel(ch);
        if (c.denom[ch] < kNormEps) continue; // guard: all-zero channel
        for (std::size_t i = 0; i < hw; ++i) dst[i] = src[i] / c.denom[ch];
    }
    out.pred.logits.assign(kc - 1, 0.0);
    for (int k = 1; k < kc; ++k) {
        const double* p = c.relu_raw.channel(k);
        double sum = 0.0;
        for (std::size_t i = 0; i < hw; ++i) sum += p[i];
        out.pred.logits[k - 1] = sum / static_cast<double>(hw);
    }
    return out;
}

Gradients backward(const BackboneParams& params, const ForwardCache& cache,
                   const Tensor3& grad_attn, const std::vector<double>& grad_pred,
                   Tensor3* grad_input) {
    require(params.layers.size() == 3, "backward: expected a 3-layer backbone");
    const int kc = cache.raw.channels;
    if (!grad_attn.same_shape(cache.raw)) {
        throw std::invalid_argument("backward: grad_attn shape " + grad_attn.shape_str() +
                                    " does not match maps " + cache.raw.shape_str());
    }
    if (static_cast<int>(grad_pred.size()) != kc - 1) {
        throw std::invalid_argument("backward: grad_pred has " +
                                    std::to_string(grad_pred.size()) + " entries, expected " +
                                    std::to_string(kc - 1));
    }

    const std::size_t hw = cache.raw.plane();
    // Head: attn[c] = relu_raw[c] / denom[c] (denom constant),
    //       logits[k-1] = mean(relu_raw[k]) over pixels.
    Tensor3 g_relu_raw(kc, cache.raw.height, cache.raw.width);
    for (int ch = 0; ch < kc; ++ch) {
        double* dst = g_relu_raw.channel(ch);
        if (cache.denom[ch] >= kNormEps) {
            const double inv = 1.0 / cache.denom[ch];
            const double* ga = grad_attn.channel(ch);
            for (std::size_t i = 0; i < hw; ++i) dst[i] = ga[i] * inv;
        }
        if (ch >= 1) {
            const double gp = grad_pred[ch - 1] / static_cast<double>(hw);
            for (std::size_t i = 0; i < hw; ++i) dst[i] += gp;
        }
    }
    relu_mask_inplace(g_relu_raw, cache.raw);

    Gradients grads;
    grads.layers.assign({ConvLayerParams(params.layers[0].out_ch, params.layers[0].in_ch),
                         ConvLayerParams(params.layers[1].out_ch, params.layers[1].in_ch),
                         ConvLayerParams(params.layers[2].out_ch, params.layers[2].in_ch)});

    Tensor3 g_act2;
    conv3x3_backward(params.layers[2], cache.act2, g_relu_raw, grads.layers[2], &g_act2);
    relu_mask_inplace(g_act2, cache.pre2);
    Tensor3 g_act1;
    conv3x3_backward(params.layers[1], cache.act1, g_act2, grads.layers[1], &g_act1);
    relu_mask_inplace(g_act1, cache.pre1);
    conv3x3_backward(params.layers[0], cache.input, g_act1, grads.layers[0], grad_input);
    return grads;
}

void sgd_step(BackboneParams& params, const Gradients& grads, const Hyperparams& hp) {
    require(params.layers.size() == grads.layers.size(), "sgd_step: layer count mismatch");
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
        auto& layer = params.layers[l];
        auto& buf = params.momentum[l];
        const auto& g = grads.layers[l];
        require(layer.w.size() == g.w.size() && layer.b.size() == g.b.size(),
                "sgd_step: gradient shape mismatch");
        for (std::size_t i = 0; i < layer.w.size(); ++i) {
            buf.w[i] = hp.momentum * buf.w[i] + g.w[i] + hp.weight_decay * layer.w[i];
            layer.w[i] -= hp.learning_rate * buf.w[i];
        }
        for (std::size_t i = 0; i < layer.b.size(); ++i) {
            buf.b[i] = hp.momentum * buf.b[i] + g.b[i] + hp.weight_decay * layer.b[i];
            layer.b[i] -= hp.learning_rate * buf.b[i];
        }
    }
}

namespace {

Tensor3 weights_as_tensor(const ConvLayerParams& l) {
    Tensor3 t(l.out_ch, l.in_ch, 9);
    t.data = l.w;
    return t;
}

Tensor3 bias_as_tensor(const ConvLayerParams& l) {
    Tensor3 t(1, 1, l.out_ch);
    t.data = l.b;
    return t;
}

} // namespace

std::string serialize_params(const BackboneParams& params) {
    std::string manifest;
    std::string blobs;
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
        const std::string base = "conv" + std::to_string(l);
        for (const char* suffix : {".w", ".b", ".mw", ".mb"}) {
            if (!manifest.empty()) manifest += ' ';
            manifest += base + suffix;
        }
        append_smt1(blobs, weights_as_tensor(params.layers[l]));
        append_smt1(blobs, bias_as_tensor(params.layers[l]));
        append_smt1(blobs, weights_as_tensor(params.momentum[l]));
        append_smt1(blobs, bias_as_tensor(params.momentum[l]));
    }
    return manifest + "\n" + blobs;
}

BackboneParams deserialize_params(const std::string& buf, const std::string& what) {
    const std::size_t nl = buf.find('\n');
    if (nl == std::string::npos) throw DataError(what + ": missing checkpoint manifest line");
    std::istringstream names(buf.substr(0, nl));
    std::vector<std::string> order;
    for (std::string n; names >> n;) order.push_back(n);
    if (order.empty() || order.size() % 4 != 0)
        throw DataError(what + ": malformed checkpoint manifest");

    std::size_t offset = nl + 1;
    BackboneParams p;
    for (std::size_t i = 0; i < order.size(); i += 4) {
        const std::string base = "conv" + std::to_string(i / 4);
        if (order[i] != base + ".w" || order[i + 1] != base + ".b" ||
            order[i + 2] != base + ".mw" || order[i + 3] != base + ".mb")
            throw DataError(what + ": unexpected tensor name '" + order[i] + "' in manifest");
        Tensor3 w = parse_smt1(buf, offset, what);
        Tensor3 b = parse_smt1(buf, offset, what);
        Tensor3 mw = parse_smt1(buf, offset, what);
        Tensor3 mb = parse_smt1(buf, offset, what);
        if (w.width != 9 || mw.width != 9 || !w.same_shape(mw))
            throw DataError(what + ": malformed weight tensor shape " + w.shape_str());
        if (b.channels != 1 || b.height != 1 || b.width != w.channels || !b.same_shape(mb))
            throw DataError(what + ": malformed bias tensor shape " + b.shape_str());
        ConvLayerParams layer(w.channels, w.height);
        layer.w = std::move(w.data);
        layer.b = std::move(b.data);
        ConvLayerParams mom(mw.channels, mw.height);
        mom.w = std::move(mw.data);
        mom.b = std::move(mb.data);
        p.layers.push_back(std::move(layer));
        p.momentum.push_back(std::move(mom));
    }
    if (offset != buf.size()) throw DataError(what + ": trailing bytes in checkpoint");
    if (p.layers.size() != 3) throw DataError(what + ": expected 3 layers");
    if (p.layers[0].in_ch != 3 || p.layers[1].in_ch != p.layers[0].out_ch ||
        p.layers[2].in_ch != p.layers[1].out_ch || p.layers[2].out_ch < 2)
        throw DataError(what + ": inconsistent layer shapes");
    return p;
}

void save_checkpoint(const std::filesystem::path& path, const BackboneParams& params) {
    const std::string buf = serialize_params(params);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("cannot open for writing: " + path.string());
    f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!f) throw DataError("write failed: " + path.string());
}

BackboneParams load_checkpoint(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open: " + path.string());
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return deserialize_params(buf, path.string());
}

} // namespace attnfuse
