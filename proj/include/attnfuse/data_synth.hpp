#ifndef ATTNFUSE_DATA_SYNTH_HPP
#define ATTNFUSE_DATA_SYNTH_HPP

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "attnfuse/tensor.hpp"

namespace attnfuse {

inline constexpr int kNumClasses = 3; // circle, square, triangle
inline constexpr int kImageSize = 64;

/// H x W integer class map, 0 = background.
struct SegMask {
    int height = 0;
    int width = 0;
    std::vector<std::int32_t> ids;

    SegMask() = default;
    SegMask(int h, int w) : height(h), width(w), ids(static_cast<std::size_t>(h) * w, 0) {}

    std::int32_t& at(int y, int x) { return ids[static_cast<std::size_t>(y) * width + x]; }
    std::int32_t at(int y, int x) const { return ids[static_cast<std::size_t>(y) * width + x]; }
};

struct Sample {
    Tensor3 image;     // 3 x 64 x 64, values in [0,1]
    SegMask mask;      // ground truth, used by evaluation only
    LabelVector labels; // derived from the mask
};

/// Split layout and provenance of a generated dataset.
struct DatasetManifest {
    std::filesystem::path root;
    std::uint64_t seed = 0;

    struct Entry {
        std::string img;
        std::string msk;
    };
    std::map<std::string, std::vector<Entry>> splits;
};

/// Deterministically generate `train` and `val` splits under root and write
/// the manifest. Samples carry 1-3 shapes with bimodal sizes on a textured
/// background; masks are rasterized from the same geometry.
DatasetManifest generate_dataset(const std::filesystem::path& root, std::uint64_t seed,
                                 int n_train, int n_val);

DatasetManifest read_manifest(const std::filesystem::path& root);
void write_manifest(const DatasetManifest& manifest);

Sample load_sample(const DatasetManifest& manifest, const std::string& split, int index);
std::vector<Sample> load_split(const DatasetManifest& manifest, const std::string& split);

LabelVector labels_from_mask(const SegMask& mask, int k);

// Masks travel as 1 x H x W SMT1 files holding integral class ids.
void write_mask_smt1(const std::filesystem::path& path, const SegMask& mask);
SegMask read_mask_smt1(const std::filesystem::path& path, int k);

} // namespace attnfuse

#endif
