#ifndef ATTNFUSE_IO_HPP
#define ATTNFUSE_IO_HPP

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "attnfuse/tensor.hpp"

namespace attnfuse {

/// Binary PPM (P6) heatmap of one H x W plane with a fixed blue -> red
/// colormap; values are clamped to [0,1].
void write_ppm_heatmap(const std::filesystem::path& path, const double* values, int height,
                       int width);

/// Writes every channel of a map stack as `<stem>_c<k>.ppm` under dir.
void write_channel_heatmaps(const std::filesystem::path& dir, const std::string& stem,
                            const Tensor3& maps);

void write_text_file(const std::filesystem::path& path, const std::string& content);
std::string read_text_file(const std::filesystem::path& path);

/// Shortest round-trip decimal formatting, deterministic across runs.
std::string fmt_double(double v);

/// FNV-1a, used to fingerprint configurations in reports.
std::uint64_t fnv1a(const std::string& s);

/// Runs fn(i) for i in [0, n) on up to `threads` workers. Each index is
/// processed exactly once; use preallocated slots for deterministic output.
void parallel_for(int n, int threads, const std::function<void(int)>& fn);

int default_thread_count();

} // namespace attnfuse

#endif
