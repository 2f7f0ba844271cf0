#ifndef ATTNFUSE_BACKBONE_HPP
#define ATTNFUSE_BACKBONE_HPP

#include <cstdint>
#include <filesystem>
#include <vector>

#include "attnfuse/tensor.hpp"

namespace attnfuse {

/// One 3x3 convolution layer, stride 1, zero-padding 1 (shape preserving).
/// Weights are stored out_ch x in_ch x 3 x 3 row-major; also reused as the
/// storage layout for gradients and momentum buffers.
struct ConvLayerParams {
    int out_ch = 0;
    int in_ch = 0;
    std::vector<double> w; // out_ch * in_ch * 9
    std::vector<double> b; // out_ch

    ConvLayerParams() = default;
    ConvLayerParams(int out, int in)
        : out_ch(out), in_ch(in), w(static_cast<std::size_t>(out) * in * 9, 0.0), b(out, 0.0) {}

    double* kernel(int oc, int ic) {
        return w.data() + (static_cast<std::size_t>(oc) * in_ch + ic) * 9;
    }
    const double* kernel(int oc, int ic) const {
        return w.data() + (static_cast<std::size_t>(oc) * in_ch + ic) * 9;
    }
};

/// All learnable weights of the tiny CNN (3 -> 16 -> 32 -> K+1, ReLU after
/// all but the last layer) plus SGD momentum buffers of matching shape.
struct BackboneParams {
    std::vector<ConvLayerParams> layers;
    std::vector<ConvLayerParams> momentum;

    int num_classes() const { return layers.empty() ? 0 : layers.back().out_ch - 1; }
    bool same_shape(const BackboneParams& o) const;
    bool bit_equal(const BackboneParams& o) const;
};

/// Gradients w.r.t. every layer's weights and biases.
struct Gradients {
    std::vector<ConvLayerParams> layers;

    void add(const Gradients& o);
    void scale_by(double s);
};

struct Prediction {
    std::vector<double> logits; // K foreground classes
};

/// Intermediates kept by forward for the exact backward pass.
struct ForwardCache {
    Tensor3 input;
    Tensor3 pre1, act1;
    Tensor3 pre2, act2;
    Tensor3 raw;      // last-layer pre-activation, K+1 channels
    Tensor3 relu_raw; // relu(raw)
    std::vector<double> denom; // per-channel max of relu_raw (normalization,
                               // treated as constant by backward)
};

struct ForwardResult {
    Tensor3 raw;  // last-layer pre-activation
    Tensor3 attn; // normalize_per_channel(relu(raw)), K+1 channels in [0,1]
    Prediction pred; // GAP over the K foreground channels of relu(raw)
};

/// He-initialized parameters: kernels ~ N(0, 2/fan_in), biases zero.
BackboneParams init_backbone(std::uint64_t seed, int k);

/// Runs the net on a 3-channel image. If cache is non-null it is filled with
/// everything backward needs.
ForwardResult forward(const BackboneParams& params, const Tensor3& image,
                      ForwardCache* cache = nullptr);

/// Gradients of any scalar loss with partials grad_attn (w.r.t. the
/// normalized maps) and grad_pred (w.r.t. the logits). The per-channel max in
/// the normalization is treated as a constant. Optionally also produces the
/// gradient w.r.t. the input image.
Gradients backward(const BackboneParams& params, const ForwardCache& cache,
                   const Tensor3& grad_attn, const std::vector<double>& grad_pred,
                   Tensor3* grad_input = nullptr);

/// buffer <- momentum * buffer + grad + weight_decay * param;
/// param  <- param - lr * buffer.
void sgd_step(BackboneParams& params, const Gradients& grads, const Hyperparams& hp);

// Checkpoint file: one UTF-8 manifest line listing tensor names in order,
// then the named tensors as concatenated SMT1 blobs. Bit-exact round trip.
void save_checkpoint(const std::filesystem::path& path, const BackboneParams& params);
BackboneParams load_checkpoint(const std::filesystem::path& path);
std::string serialize_params(const BackboneParams& params);
BackboneParams deserialize_params(const std::string& buf, const std::string& what);

// Conv primitive, exposed so test oracles can re-evaluate the forward
// definition without touching the backward path.
void conv3x3_forward(const ConvLayerParams& p, const Tensor3& in, Tensor3& out);

} // namespace attnfuse

#endif
