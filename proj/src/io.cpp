#include "attnfuse/io.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <mutex>
#include <thread>

#include "attnfuse/errors.hpp"

namespace attnfuse {

namespace {

unsigned char map_component(double v) {
    return static_cast<unsigned char>(std::lround(255.0 * std::clamp(v, 0.0, 1.0)));
}

} // namespace

void write_ppm_heatmap(const std::filesystem::path& path, const double* values, int height,
                       int width) {
    std::string buf = "P6\n" + std::to_string(width) + " " + std::to_string(height) + "\n255\n";
    buf.reserve(buf.size() + static_cast<std::size_t>(height) * width * 3);
    for (int i = 0; i < height * width; ++i) {
        const double v = std::clamp(values[i], 0.0, 1.0);
        buf.push_back(static_cast<char>(map_component(1.5 - std::abs(4.0 * v - 3.0))));
        buf.push_back(static_cast<char>(map_component(1.5 - std::abs(4.0 * v - 2.0))));
        buf.push_back(static_cast<char>(map_component(1.5 - std::abs(4.0 * v - 1.0))));
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("cannot open for writing: " + path.string());
    f.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!f) throw DataError("write failed: " + path.string());
}

void write_channel_heatmaps(const std::filesystem::path& dir, const std::string& stem,
                            const Tensor3& maps) {
    for (int c = 0; c < maps.channels; ++c) {
        write_ppm_heatmap(dir / (stem + "_c" + std::to_string(c) + ".ppm"), maps.channel(c),
                          maps.height, maps.width);
    }
}

void write_text_file(const std::filesystem::path& path, const std::string& content) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw DataError("cannot open for writing: " + path.string());
    f.write(content.data(), static_cast<std::streamsize>(content.size()));
    if (!f) throw DataError("write failed: " + path.string());
}

std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open: " + path.string());
    return std::string((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
}

std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    // Shorten when fewer digits already round-trip.
    for (int prec = 1; prec < 17; ++prec) {
        char shorter[40];
        std::snprintf(shorter, sizeof(shorter), "%.*g", prec, v);
        double back = 0.0;
        std::sscanf(shorter, "%lf", &back);
        if (back == v) return shorter;
    }
    return buf;
}

std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

void parallel_for(int n, int threads, const std::function<void(int)>& fn) {
    threads = std::max(1, std::min(threads, n));
    if (threads == 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::atomic<int> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    auto worker = [&] {
        for (;;) {
            const int i = next.fetch_add(1);
            if (i >= n) return;
            try {
                fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!error) error = std::current_exception();
            }
        }
    };
    std::vector<std::thread> pool;
    pool.reserve(threads - 1);
    for (int t = 1; t < threads; ++t) pool.emplace_back(worker);
    worker();
    for (auto& th : pool) th.join();
    if (error) std::rethrow_exception(error);
}

int default_thread_count() {
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

} // namespace attnfuse
