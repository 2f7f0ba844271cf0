#ifndef ATTNFUSE_TENSOR_HPP
#define ATTNFUSE_TENSOR_HPP

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace attnfuse {

// Division guard for per-channel normalization: channels whose maximum is
// below this are returned as all-zero.
inline constexpr double kNormEps = 1e-12;

/// Dense C x H x W tensor of doubles, row-major in channel-height-width order.
/// Value type: copyable, immutable-by-convention after construction.
struct Tensor3 {
    int channels = 0;
    int height = 0;
    int width = 0;
    std::vector<double> data;

    Tensor3() = default;
    Tensor3(int c, int h, int w);

    std::size_t size() const { return data.size(); }
    std::size_t plane() const { return static_cast<std::size_t>(height) * width; }

    double& at(int c, int y, int x) {
        return data[(static_cast<std::size_t>(c) * height + y) * width + x];
    }
    double at(int c, int y, int x) const {
        return data[(static_cast<std::size_t>(c) * height + y) * width + x];
    }
    double* channel(int c) { return data.data() + static_cast<std::size_t>(c) * plane(); }
    const double* channel(int c) const {
        return data.data() + static_cast<std::size_t>(c) * plane();
    }

    bool same_shape(const Tensor3& o) const {
        return channels == o.channels && height == o.height && width == o.width;
    }
    std::string shape_str() const;
};

/// K image-level flags, one per foreground class (1 = present).
struct LabelVector {
    std::vector<std::uint8_t> present;

    LabelVector() = default;
    explicit LabelVector(std::vector<std::uint8_t> flags) : present(std::move(flags)) {}

    int k() const { return static_cast<int>(present.size()); }
    bool any() const;
};

/// Experiment hyperparameters shared across modules.
struct Hyperparams {
    double alpha = 100.0;
    double thr = 0.2;
    std::vector<double> scales{0.5, 1.0, 1.5, 2.0};
    double learning_rate = 0.01;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    int iterations = 2000;
    int batch_size = 8;
    std::uint64_t seed = 1;

    // Enforced at the config boundary; internal ablation variants may run
    // single-scale lists that do not contain 1.0.
    void validate() const;
};

Tensor3 relu(const Tensor3& t);
Tensor3 normalize_per_channel(const Tensor3& t);

Tensor3 add(const Tensor3& a, const Tensor3& b);
Tensor3 sub(const Tensor3& a, const Tensor3& b);
Tensor3 scale(const Tensor3& a, double s);
Tensor3 hadamard(const Tensor3& a, const Tensor3& b);

bool all_finite(const Tensor3& t);

// "SMT1" tensor file: 4 magic bytes, three u32 LE dims (C, H, W), then
// C*H*W f64 LE values.
void write_smt1(const std::filesystem::path& path, const Tensor3& t);
Tensor3 read_smt1(const std::filesystem::path& path);

// In-memory variants used by the checkpoint container.
void append_smt1(std::string& out, const Tensor3& t);
Tensor3 parse_smt1(const std::string& buf, std::size_t& offset, const std::string& what);

} // namespace attnfuse

#endif
