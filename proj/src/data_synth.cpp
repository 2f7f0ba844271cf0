#include "attnfuse/data_synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>
#include <sstream>

#include "attnfuse/errors.hpp"

namespace attnfuse {

namespace {

constexpr double kPi = 3.14159265358979323846;

// Class base colors: 1 = circle (red), 2 = square (green), 3 = triangle (blue).
constexpr double kClassColor[kNumClasses][3] = {
    {0.85, 0.20, 0.20},
    {0.20, 0.80, 0.25},
    {0.25, 0.35, 0.90},
};

// Fraction of background pixels replaced by an isolated class-colored speck.
// Single pixels wash out when the image is reduced and inflate into small
// blobs when it is enlarged, so the texture reacts to scale the way real
// clutter does.
constexpr double kImpostorProb = 0.06;
constexpr double kShapeNoiseSigma = 0.05;

struct ShapeSpec {
    int cls;     // 1..K
    double size; // diameter / side length in pixels
    double cx, cy;
    bool large;
};

bool inside(const ShapeSpec& s, double x, double y) {
    const double half = s.size / 2.0;
    switch (s.cls) {
        case 1: { // circle
            const double dx = x - s.cx, dy = y - s.cy;
            return dx * dx + dy * dy <= half * half;
        }
        case 2: // axis-aligned square
            return std::abs(x - s.cx) <= half && std::abs(y - s.cy) <= half;
        default: { // upward triangle: apex on top, base at the bottom
            const double dy = y - (s.cy - half);
            if (dy < 0.0 || dy > s.size) return false;
            return std::abs(x - s.cx) <= dy / 2.0;
        }
    }
}

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

Sample make_sample(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    std::normal_distribution<double> gauss(0.0, 1.0);

    Sample s;
    s.image = Tensor3(3, kImageSize, kImageSize);
    s.mask = SegMask(kImageSize, kImageSize);

    // Textured background: low-frequency shading plus impostor specks plus noise.
    const double fx = 0.02 + 0.04 * uni(rng);
    const double fy = 0.02 + 0.04 * uni(rng);
    const double px = 2.0 * kPi * uni(rng);
    const double py = 2.0 * kPi * uni(rng);
    const double base = 0.18 + 0.10 * uni(rng);
    for (int y = 0; y < kImageSize; ++y) {
        for (int x = 0; x < kImageSize; ++x) {
            const double shade =
                base + 0.06 * std::sin(2.0 * kPi * fx * x + px) * std::sin(2.0 * kPi * fy * y + py);
            double rgb[3] = {shade, shade, shade};
            if (uni(rng) < kImpostorProb) {
                const int cls = static_cast<int>(uni(rng) * kNumClasses) % kNumClasses;
                const double gain = 0.80 + 0.30 * uni(rng);
                for (int c = 0; c < 3; ++c) rgb[c] = kClassColor[cls][c] * gain;
            }
            for (int c = 0; c < 3; ++c)
                s.image.at(c, y, x) = clamp01(rgb[c] + kShapeNoiseSigma * gauss(rng));
        }
    }

    // 1-3 shapes, later shapes overdraw earlier ones.
    const int n_shapes = 1 + static_cast<int>(uni(rng) * 3.0) % 3;
    for (int i = 0; i < n_shapes; ++i) {
        ShapeSpec sp;
        sp.cls = 1 + static_cast<int>(uni(rng) * kNumClasses) % kNumClasses;
        sp.large = uni(rng) < 0.5;
        const double lo = sp.large ? 0.40 : 0.05;
        const double hi = sp.large ? 0.80 : 0.12;
        sp.size = (lo + (hi - lo) * uni(rng)) * kImageSize;
        const double margin = sp.size / 2.0 + 0.5;
        sp.cx = margin + uni(rng) * (kImageSize - 2.0 * margin);
        sp.cy = margin + uni(rng) * (kImageSize - 2.0 * margin);

        for (int y = 0; y < kImageSize; ++y) {
            for (int x = 0; x < kImageSize; ++x) {
                if (!inside(sp, x + 0.5, y + 0.5)) continue;
                s.mask.at(y, x) = sp.cls;
                for (int c = 0; c < 3; ++c) {
                    s.image.at(c, y, x) =
                        clamp01(kClassColor[sp.cls - 1][c] + kShapeNoiseSigma * gauss(rng));
                }
            }
        }
    }
    s.labels = labels_from_mask(s.mask, kNumClasses);
    return s;
}

std::filesystem::path manifest_path(const std::filesystem::path& root) {
    return root / "manifest.tsv";
}

} // namespace

LabelVector labels_from_mask(const SegMask& mask, int k) {
    LabelVector y(std::vector<std::uint8_t>(k, 0));
    for (std::int32_t id : mask.ids) {
        if (id > 0 && id <= k) y.present[id - 1] = 1;
    }
    return y;
}

void write_mask_smt1(const std::filesystem::path& path, const SegMask& mask) {
    Tensor3 t(1, mask.height, mask.width);
    for (std::size_t i = 0; i < mask.ids.size(); ++i) t.data[i] = mask.ids[i];
    write_smt1(path, t);
}

SegMask read_mask_smt1(const std::filesystem::path& path, int k) {
    const Tensor3 t = read_smt1(path);
    if (t.channels != 1) throw DataError(path.string() + ": mask must have one channel");
    SegMask m(t.height, t.width);
    for (std::size_t i = 0; i < t.size(); ++i) {
        const double v = t.data[i];
        const auto id = static_cast<std::int32_t>(std::lround(v));
        if (std::abs(v - id) > 1e-9 || id < 0 || id > k)
            throw DataError(path.string() + ": mask value " + std::to_string(v) +
                            " is not a class id in 0.." + std::to_string(k));
        m.ids[i] = id;
    }
    return m;
}

DatasetManifest generate_dataset(const std::filesystem::path& root, std::uint64_t seed,
                                 int n_train, int n_val) {
    if (n_train < 1 || n_val < 1)
        throw ConfigError("generate_dataset: sample counts must be >= 1");
    DatasetManifest manifest;
    manifest.root = root;
    manifest.seed = seed;

    std::mt19937_64 rng(seed);
    const std::pair<std::string, int> splits[] = {{"train", n_train}, {"val", n_val}};
    for (const auto& [split, count] : splits) {
        std::error_code ec;
        std::filesystem::create_directories(root / split, ec);
        if (ec) throw DataError("cannot create " + (root / split).string() + ": " + ec.message());
        auto& entries = manifest.splits[split];
        for (int i = 0; i < count; ++i) {
            const Sample s = make_sample(rng);
            DatasetManifest::Entry e;
            e.img = split + "/" + std::to_string(i) + ".img.smt1";
            e.msk = split + "/" + std::to_string(i) + ".msk.smt1";
            write_smt1(root / e.img, s.image);
            write_mask_smt1(root / e.msk, s.mask);
            entries.push_back(std::move(e));
        }
    }
    write_manifest(manifest);
    return manifest;
}

void write_manifest(const DatasetManifest& manifest) {
    std::ostringstream out;
    out << "seed\t" << manifest.seed << "\n";
    for (const auto& [split, entries] : manifest.splits)
        out << split << ".count\t" << entries.size() << "\n";
    for (const auto& [split, entries] : manifest.splits) {
        for (std::size_t i = 0; i < entries.size(); ++i) {
            out << split << "." << i << ".img\t" << entries[i].img << "\n";
            out << split << "." << i << ".msk\t" << entries[i].msk << "\n";
        }
    }
    const auto path = manifest_path(manifest.root);
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("cannot open for writing: " + path.string());
    f << out.str();
    if (!f) throw DataError("write failed: " + path.string());
}

DatasetManifest read_manifest(const std::filesystem::path& root) {
    const auto path = manifest_path(root);
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open: " + path.string());
    DatasetManifest manifest;
    manifest.root = root;
    std::map<std::string, std::string> kv;
    std::string line;
    int lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos)
            throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected key<TAB>value");
        kv[line.substr(0, tab)] = line.substr(tab + 1);
    }
    if (auto it = kv.find("seed"); it != kv.end()) manifest.seed = std::stoull(it->second);

    for (const auto& [key, value] : kv) {
        const auto dot = key.rfind(".count");
        if (dot == std::string::npos || dot + 6 != key.size()) continue;
        const std::string split = key.substr(0, dot);
        const int count = std::stoi(value);
        auto& entries = manifest.splits[split];
        entries.resize(count);
        for (int i = 0; i < count; ++i) {
            const std::string img_key = split + "." + std::to_string(i) + ".img";
            const std::string msk_key = split + "." + std::to_string(i) + ".msk";
            const auto img = kv.find(img_key), msk = kv.find(msk_key);
            if (img == kv.end() || msk == kv.end())
                throw DataError(path.string() + ": manifest count does not match entries for '" +
                                split + "." + std::to_string(i) + "'");
            entries[i] = {img->second, msk->second};
        }
    }
    return manifest;
}

Sample load_sample(const DatasetManifest& manifest, const std::string& split, int index) {
    const auto it = manifest.splits.find(split);
    if (it == manifest.splits.end() || index < 0 ||
        index >= static_cast<int>(it->second.size()))
        throw DataError("no sample '" + split + "/" + std::to_string(index) + "' in manifest");
    const auto& entry = it->second[index];
    Sample s;
    s.image = read_smt1(manifest.root / entry.img);
    if (s.image.channels != 3)
        throw DataError((manifest.root / entry.img).string() + ": image must have 3 channels");
    s.mask = read_mask_smt1(manifest.root / entry.msk, kNumClasses);
    if (s.mask.height != s.image.height || s.mask.width != s.image.width)
        throw DataError((manifest.root / entry.msk).string() + ": mask/image size mismatch");
    s.labels = labels_from_mask(s.mask, kNumClasses);
    return s;
}

std::vector<Sample> load_split(const DatasetManifest& manifest, const std::string& split) {
    std::vector<Sample> out;
    const auto it = manifest.splits.find(split);
    if (it == manifest.splits.end()) return out;
    out.reserve(it->second.size());
    for (int i = 0; i < static_cast<int>(it->second.size()); ++i)
        out.push_back(load_sample(manifest, split, i));
    return out;
}

} // namespace attnfuse
