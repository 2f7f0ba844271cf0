#ifndef ATTNFUSE_TRAINING_HPP
#define ATTNFUSE_TRAINING_HPP

#include <cstdint>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <unordered_map>
#include <vector>

#include "attnfuse/backbone.hpp"
#include "attnfuse/data_synth.hpp"
#include "attnfuse/fusion.hpp"
#include "attnfuse/tensor.hpp"

namespace attnfuse {

/// Parsed `key = value` experiment configuration.
struct TrainConfig {
    double alpha = 100.0;
    double thr = 0.2;
    std::vector<double> scales{0.5, 1.0, 1.5, 2.0};
    double lr = 0.01;
    double momentum = 0.9;
    double weight_decay = 5e-4;
    int iters_pretrain = 2000;
    int iters_selftrain = 2000;
    int batch = 8;
    std::uint64_t seed = 1;
    std::string data_root = "data/synth";
    std::string out_dir = "out";

    Hyperparams pretrain_hp() const;
    Hyperparams selftrain_hp() const;
    std::string canonical_text() const;
};

TrainConfig parse_config(const std::string& text, const std::string& what);
TrainConfig load_config(const std::filesystem::path& path);

struct LossRecord {
    int iteration = 0;
    double cls = 0.0;
    double mac = 0.0;
    double total = 0.0;
};

std::string loss_log_csv(const std::vector<LossRecord>& log);

/// Everything a paused run needs to continue bit-identically.
struct TrainState {
    BackboneParams student;
    BackboneParams teacher; // frozen copy of the pretrained student
    std::int64_t iteration = 0;
    std::mt19937_64 rng;
    std::vector<int> perm; // current epoch order
    std::size_t cursor = 0;
    double loss_sum = 0.0;
    std::int64_t loss_count = 0;
};

void save_train_state(const std::filesystem::path& path, const TrainState& state);
TrainState load_train_state(const std::filesystem::path& path);

/// Classification-only training of a fresh student (seeded shuffling, SGD
/// with momentum). Deterministic given (hp, data).
BackboneParams pretrain(const std::vector<Sample>& data, const Hyperparams& hp,
                        std::vector<LossRecord>* log = nullptr);

struct SelfTrainOptions {
    bool reactivation = true;
    int threads = 0; // 0 = hardware concurrency
    std::vector<LossRecord>* log = nullptr;
    // Called once per teacher target use (reactivated targets only).
    std::function<void(const FusedTarget&, const LabelVector&)> target_observer;
};

/// One frozen-teacher self-training run: per step, per batch member, the
/// student sees a randomly flipped and rescaled view while the teacher target
/// is built from the original image and transformed to match.
BackboneParams self_train(const BackboneParams& pretrained, const std::vector<Sample>& data,
                          const Hyperparams& hp, const SelfTrainOptions& opts = {});

// Stepping interface behind self_train, used for checkpoint/restore.
struct SelfTrainRun {
    TrainState state;
    std::unordered_map<int, Tensor3> target_cache; // rebuilt transparently after restore
};

SelfTrainRun self_train_begin(const BackboneParams& pretrained, const Hyperparams& hp);
void self_train_step(SelfTrainRun& run, const std::vector<Sample>& data, const Hyperparams& hp,
                     const SelfTrainOptions& opts = {});

} // namespace attnfuse

#endif
