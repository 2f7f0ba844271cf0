#include "attnfuse/tensor.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "attnfuse/errors.hpp"

namespace attnfuse {

namespace {

void require_same_shape(const Tensor3& a, const Tensor3& b, const char* op) {
    if (!a.same_shape(b)) {
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + a.shape_str() +
                                    " vs " + b.shape_str());
    }
}

void put_u32_le(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f64_le(std::string& out, double v) {
    auto bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

std::uint32_t get_u32_le(const unsigned char* p) {
    return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
           (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

double get_f64_le(const unsigned char* p) {
    std::uint64_t bits = 0;
    for (int i = 7; i >= 0; --i) bits = (bits << 8) | p[i];
    return std::bit_cast<double>(bits);
}

} // namespace

Tensor3::Tensor3(int c, int h, int w) : channels(c), height(h), width(w) {
    if (c <= 0 || h <= 0 || w <= 0) {
        throw std::invalid_argument("Tensor3: dimensions must be positive, got " + shape_str());
    }
    data.assign(static_cast<std::size_t>(c) * h * w, 0.0);
}

std::string Tensor3::shape_str() const {
    return std::to_string(channels) + "x" + std::to_string(height) + "x" + std::to_string(width);
}

bool LabelVector::any() const {
    return std::any_of(present.begin(), present.end(), [](std::uint8_t f) { return f != 0; });
}

void Hyperparams::validate() const {
    if (alpha < 0.0) throw ConfigError("alpha must be >= 0");
    if (!(thr > 0.0 && thr < 1.0)) throw ConfigError("thr must be in (0,1)");
    if (scales.empty()) throw ConfigError("scales must be non-empty");
    for (double s : scales)
        if (s <= 0.0) throw ConfigError("scales must be positive");
    if (std::find(scales.begin(), scales.end(), 1.0) == scales.end())
        throw ConfigError("scales must contain 1.0");
    if (learning_rate <= 0.0) throw ConfigError("lr must be positive");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must be in [0,1)");
    if (weight_decay < 0.0) throw ConfigError("weight_decay must be >= 0");
    if (iterations < 0) throw ConfigError("iterations must be >= 0");
    if (batch_size < 1) throw ConfigError("batch must be >= 1");
}

Tensor3 relu(const Tensor3& t) {
    Tensor3 out = t;
    for (double& v : out.data) v = v > 0.0 ? v : 0.0;
    return out;
}

Tensor3 normalize_per_channel(const Tensor3& t) {
    Tensor3 out = t;
    const std::size_t hw = t.plane();
    for (int c = 0; c < t.channels; ++c) {
        double* p = out.channel(c);
        double mx = 0.0;
        for (std::size_t i = 0; i < hw; ++i) mx = std::max(mx, p[i]);
        if (mx < kNormEps) {
            std::fill(p, p + hw, 0.0);
        } else {
            for (std::size_t i = 0; i < hw; ++i) p[i] /= mx;
        }
    }
    return out;
}

Tensor3 add(const Tensor3& a, const Tensor3& b) {
    require_same_shape(a, b, "add");
    Tensor3 out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += b.data[i];
    return out;
}

Tensor3 sub(const Tensor3& a, const Tensor3& b) {
    require_same_shape(a, b, "sub");
    Tensor3 out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] -= b.data[i];
    return out;
}

Tensor3 scale(const Tensor3& a, double s) {
    Tensor3 out = a;
    for (double& v : out.data) v *= s;
    return out;
}

Tensor3 hadamard(const Tensor3& a, const Tensor3& b) {
    require_same_shape(a, b, "hadamard");
    Tensor3 out = a;
    for (std::size_t i = 0; i < out.size(); ++i) out.data[i] *= b.data[i];
    return out;
}

bool all_finite(const Tensor3& t) {
    return std::all_of(t.data.begin(), t.data.end(), [](double v) { return std::isfinite(v); });
}

void append_smt1(std::string& out, const Tensor3& t) {
    out.append("SMT1", 4);
    put_u32_le(out, static_cast<std::uint32_t>(t.channels));
    put_u32_le(out, static_cast<std::uint32_t>(t.height));
    put_u32_le(out, static_cast<std::uint32_t>(t.width));
    out.reserve(out.size() + t.size() * 8);
    for (double v : t.data) put_f64_le(out, v);
}

Tensor3 parse_smt1(const std::string& buf, std::size_t& offset, const std::string& what) {
    if (offset + 16 > buf.size()) throw DataError(what + ": truncated SMT1 header");
    if (std::memcmp(buf.data() + offset, "SMT1", 4) != 0)
        throw DataError(what + ": bad SMT1 magic");
    const auto* p = reinterpret_cast<const unsigned char*>(buf.data()) + offset + 4;
    const std::uint32_t c = get_u32_le(p), h = get_u32_le(p + 4), w = get_u32_le(p + 8);
    if (c == 0 || h == 0 || w == 0 || c > (1u << 20) || h > (1u << 20) || w > (1u << 20))
        throw DataError(what + ": bad SMT1 dimensions");
    const std::size_t n = static_cast<std::size_t>(c) * h * w;
    offset += 16;
    if (offset + n * 8 > buf.size()) throw DataError(what + ": truncated SMT1 payload");
    Tensor3 t(static_cast<int>(c), static_cast<int>(h), static_cast<int>(w));
    const auto* q = reinterpret_cast<const unsigned char*>(buf.data()) + offset;
    for (std::size_t i = 0; i < n; ++i) t.data[i] = get_f64_le(q + i * 8);
    offset += n * 8;
    if (!all_finite(t)) throw DataError(what + ": non-finite values in SMT1 payload");
    return t;
}

void write_smt1(const std::filesystem::path& path, const Tensor3& t) {
    std::string buf;
    buf.reserve(16 + t.size() * 8);
    append_smt1(buf, t);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("cannot open for writing: " + path.string());
    f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!f) throw DataError("write failed: " + path.string());
}

Tensor3 read_smt1(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open: " + path.string());
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    std::size_t offset = 0;
    Tensor3 t = parse_smt1(buf, offset, path.string());
    if (offset != buf.size()) throw DataError(path.string() + ": trailing bytes after SMT1 payload");
    return t;
}

} // namespace attnfuse
