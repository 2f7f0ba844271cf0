#ifndef ATTNFUSE_TESTS_TEST_UTIL_HPP
#define ATTNFUSE_TESTS_TEST_UTIL_HPP

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <unistd.h>

#include "attnfuse/tensor.hpp"

namespace testutil {

inline attnfuse::Tensor3 random_tensor(std::mt19937_64& rng, int c, int h, int w, double lo = -1.0,
                                       double hi = 1.0) {
    attnfuse::Tensor3 t(c, h, w);
    std::uniform_real_distribution<double> dist(lo, hi);
    for (double& v : t.data) v = dist(rng);
    return t;
}

inline double rel_err(double a, double b) {
    const double denom = std::max({std::abs(a), std::abs(b), 1e-10});
    if (std::abs(a) < 1e-12 && std::abs(b) < 1e-12) return 0.0;
    return std::abs(a - b) / denom;
}

// Unique scratch directory, removed on destruction.
class TempDir {
  public:
    explicit TempDir(const std::string& tag) {
        auto base = std::filesystem::temp_directory_path();
        for (int i = 0;; ++i) {
            auto candidate = base / (tag + "-" + std::to_string(::getpid()) + "-" +
                                     std::to_string(i));
            std::error_code ec;
            if (std::filesystem::create_directories(candidate, ec)) {
                path_ = candidate;
                return;
            }
        }
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    const std::filesystem::path& path() const { return path_; }

  private:
    std::filesystem::path path_;
};

inline std::string slurp(const std::filesystem::path& p) {
    std::string out;
    std::ifstream f(p, std::ios::binary);
    out.assign((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    return out;
}

} // namespace testutil

#endif
